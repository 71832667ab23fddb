#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "exdiff/datapipe.hpp"
#include "exdiff/framing.hpp"
#include "exdiff/latents.hpp"
#include "exdiff/nnet/checkpoint.hpp"
#include "exdiff/nnet/optim.hpp"
#include "exdiff/scorenet.hpp"

namespace exdiff {

struct TrainConfig {
  double lr = 1e-4;
  std::size_t batch_size = 8;
  double ema_decay = 0.999;
  std::size_t max_steps = 2000;
  std::uint64_t seed = 0;
  std::size_t checkpoint_every = 1000;  // 0 disables periodic checkpoints
  int precision = 32;
  std::size_t log_every = 50;

  void validate() const;
};

/// One aligned training item: clean and noisy compressed spectrogram chunks
/// plus the latent of the noisy chunk.
struct TrainExample {
  ComplexGrid x0;
  ComplexGrid y;
  LatentRepresentation latent;
};

/// Chunked (clean, noisy) spectrogram pairs drawn from waveform pairs. Both
/// signals of a pair share the noisy signal's peak normalisation.
class PairDataset {
 public:
  PairDataset(const std::vector<PairRecord>& pairs, const StftParams& stft, const Compression& comp,
              std::size_t chunk_frames, std::shared_ptr<const LatentProvider> latents);

  std::size_t size() const { return clips_.size(); }
  std::size_t chunk_frames() const { return chunk_; }
  /// Uniformly random pair and chunk offset.
  TrainExample draw(Rng& rng) const;
  TrainExample example(std::size_t pair, std::size_t first_frame) const;

 private:
  struct Clip {
    FramedClip noisy;
    ComplexGrid clean;
  };
  std::vector<Clip> clips_;
  std::size_t chunk_;
  std::shared_ptr<const LatentProvider> latents_;
};

/// Mean over complex elements of |s + z / sigma(t)|^2 for the model output s at
/// x_t = mu + sigma z.
template <typename Real>
nnet::Var<Real> dsm_loss(ScoreNet<Real>& net, const std::vector<const TrainExample*>& batch,
                         const std::vector<double>& t, const std::vector<ComplexGrid>& z);

/// The same objective for given score grids.
double dsm_loss_value(const std::vector<ComplexGrid>& scores, const std::vector<ComplexGrid>& z,
                      const std::vector<double>& sigma);

struct TrainLogEntry {
  std::size_t step = 0;
  double loss = 0.0;
  double seconds = 0.0;
  bool skipped = false;
};

struct TrainOutput {
  std::filesystem::path dir;            // empty: keep everything in memory
  std::string header_json = "{}";       // stored in every checkpoint
  std::function<void(const TrainLogEntry&)> on_step;
};

struct TrainResult {
  std::vector<TrainLogEntry> log;
  std::size_t skipped_steps = 0;
  nnet::CheckpointData checkpoint;  // final raw and EMA weights
};

/// Adam on the DSM objective with EMA tracking. Writes loss.csv and
/// checkpoints (ckpt_<step>.exdf, final.exdf) when out.dir is set. Non-finite
/// losses skip the step; 50 consecutive skips abort with NumericError.
template <typename Real>
TrainResult train_loop(ScoreNet<Real>& net, const PairDataset& data, const TrainConfig& cfg, const TrainOutput& out);

template <typename Real>
nnet::CheckpointData make_checkpoint(ScoreNet<Real>& net, const std::vector<nnet::Tensor<Real>>& ema,
                                     const std::string& header_json);

/// Copies raw or EMA weights into the network, matching by name and shape.
template <typename Real>
void load_weights(ScoreNet<Real>& net, const nnet::CheckpointData& data, bool use_ema);

}  // namespace exdiff
