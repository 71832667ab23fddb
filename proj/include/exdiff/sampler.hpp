#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "exdiff/framing.hpp"
#include "exdiff/latents.hpp"
#include "exdiff/scorenet.hpp"
#include "exdiff/sde.hpp"

namespace exdiff {

struct SamplerConfig {
  std::size_t n_steps = 40;
  std::size_t corrector_steps = 1;
  double snr_r = 0.5;
  std::uint64_t seed = 0;
  bool use_ema = true;

  void validate() const;
};

/// Score estimate for state x given condition y at time t.
using ScoreFn = std::function<ComplexGrid(const ComplexGrid& x, const ComplexGrid& y, double t,
                                          const LatentRepresentation* latent)>;

/// Batched form: one score per item, all at the same t.
using BatchScoreFn = std::function<std::vector<ComplexGrid>(const std::vector<const ComplexGrid*>& x,
                                                            const std::vector<const ComplexGrid*>& y, double t)>;

/// y + sigma(t_max) z.
ComplexGrid init_xT(const ComplexGrid& y, const OuveSchedule& s, Rng& rng);

/// Reverse-time Predictor-Corrector integration over N uniform steps from
/// t_max down to t_eps. The final update returns its mean (no added noise).
/// Throws NumericError naming the step when the state stops being finite.
ComplexGrid pc_sample(const ScoreFn& score, const ComplexGrid& y, const LatentRepresentation* latent,
                      const OuveSchedule& s, const SamplerConfig& cfg);

/// Item i draws from the random stream (cfg.seed, i); pc_sample is item 0.
std::vector<ComplexGrid> pc_sample_batch(const BatchScoreFn& score, const std::vector<ComplexGrid>& ys,
                                         const OuveSchedule& s, const SamplerConfig& cfg);

/// The same integration from given start states instead of init_xT draws.
std::vector<ComplexGrid> pc_sample_batch_from(const BatchScoreFn& score, std::vector<ComplexGrid> x_start,
                                              const std::vector<ComplexGrid>& ys, const OuveSchedule& s,
                                              const SamplerConfig& cfg);

/// Time grid t_max = t_0 > t_1 > ... > t_N = t_eps.
std::vector<double> reverse_time_grid(const OuveSchedule& s, std::size_t n_steps);

struct EnhanceOptions {
  SamplerConfig sampler;
  std::size_t chunk_frames = 64;
  std::size_t max_batch = 16;  // chunks sampled together
};

/// Noisy waveform to enhanced waveform of the same length: frame, compress,
/// sample every overlapping chunk conditioned on its own latent, crossfade,
/// decompress, invert. Input at another rate is resampled to 16 kHz first.
Waveform enhance(const Waveform& noisy, ScoreNet<float>& net, const StftParams& stft, const Compression& comp,
                 const LatentProvider& latents, const EnhanceOptions& opt);

}  // namespace exdiff
