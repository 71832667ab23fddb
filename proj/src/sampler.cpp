#include "exdiff/sampler.hpp"

#include <cmath>

#include "exdiff/datapipe.hpp"
#include "exdiff/error.hpp"

namespace exdiff {

void SamplerConfig::validate() const {
  if (n_steps == 0) throw InvalidArgument("sampler.n_steps must be at least 1");
  if (!(snr_r > 0.0)) throw InvalidArgument("sampler.snr_r must be positive");
}

ComplexGrid init_xT(const ComplexGrid& y, const OuveSchedule& s, Rng& rng) {
  const double sd = kernel_std(s.t_max, s);
  ComplexGrid x = y;
  for (auto& v : x.data) v += sd * rng.complex_normal();
  return x;
}

std::vector<double> reverse_time_grid(const OuveSchedule& s, std::size_t n) {
  if (n == 0) throw InvalidArgument("reverse_time_grid: at least one step required");
  std::vector<double> t(n + 1);
  const double dt = (s.t_max - s.t_eps) / static_cast<double>(n);
  for (std::size_t k = 0; k <= n; ++k) t[k] = s.t_max - static_cast<double>(k) * dt;
  t[n] = s.t_eps;
  return t;
}

namespace {

std::vector<ComplexGrid> integrate(const BatchScoreFn& score, std::vector<ComplexGrid> x,
                                   const std::vector<ComplexGrid>& ys, const OuveSchedule& s,
                                   const SamplerConfig& cfg, std::vector<Rng>& rngs) {
  const std::size_t B = ys.size();
  if (B == 0) return x;
  std::vector<const ComplexGrid*> xp(B), yp(B);
  for (std::size_t i = 0; i < B; ++i) {
    require_same_shape(x[i], ys[i], "pc_sample start");
    xp[i] = &x[i];
    yp[i] = &ys[i];
  }

  const auto grid = reverse_time_grid(s, cfg.n_steps);
  const auto check = [&](std::size_t step, const char* phase) {
    for (const auto& g : x) {
      if (!all_finite(g)) {
        throw NumericError(std::string("pc_sample: non-finite state after ") + phase + " at step " +
                           std::to_string(step));
      }
    }
  };

  for (std::size_t k = 0; k < cfg.n_steps; ++k) {
    const double t = grid[k];
    const double dt = t - grid[k + 1];
    const bool last = k + 1 == cfg.n_steps;

    // Reverse-diffusion predictor: x += [g^2 score - f(x, y)] dt + g sqrt(dt) z.
    const double g = diffusion_coeff(t, s);
    const auto sc = score(xp, yp, t);
    for (std::size_t i = 0; i < B; ++i) {
      require_same_shape(sc[i], x[i], "pc_sample score");
      const bool add_noise = !(last && cfg.corrector_steps == 0);
      for (std::size_t e = 0; e < x[i].size(); ++e) {
        const Complex f = s.gamma * (ys[i].data[e] - x[i].data[e]);
        x[i].data[e] += (g * g * sc[i].data[e] - f) * dt;
        if (add_noise) x[i].data[e] += g * std::sqrt(dt) * rngs[i].complex_normal();
      }
    }
    check(k, "predictor");

    // Langevin corrector at the new time with step 2 (r |z| / |score|)^2.
    const double tc = grid[k + 1];
    for (std::size_t c = 0; c < cfg.corrector_steps; ++c) {
      const bool final_update = last && c + 1 == cfg.corrector_steps;
      const auto gc = score(xp, yp, tc);
      for (std::size_t i = 0; i < B; ++i) {
        const double gn = std::sqrt(squared_norm(gc[i]));
        if (gn == 0.0) continue;
        ComplexGrid z(x[i].rows, x[i].cols);
        for (auto& v : z.data) v = rngs[i].complex_normal();
        const double zn = std::sqrt(squared_norm(z));
        const double eps = 2.0 * std::pow(cfg.snr_r * zn / gn, 2);
        const double noise = final_update ? 0.0 : std::sqrt(2.0 * eps);
        for (std::size_t e = 0; e < x[i].size(); ++e) x[i].data[e] += eps * gc[i].data[e] + noise * z.data[e];
      }
      check(k, "corrector");
    }
  }
  return x;
}

std::vector<Rng> item_streams(std::uint64_t seed, std::size_t n) {
  std::vector<Rng> rngs;
  rngs.reserve(n);
  for (std::size_t i = 0; i < n; ++i) rngs.emplace_back(seed, i);
  return rngs;
}

}  // namespace

std::vector<ComplexGrid> pc_sample_batch(const BatchScoreFn& score, const std::vector<ComplexGrid>& ys,
                                         const OuveSchedule& s, const SamplerConfig& cfg) {
  s.validate();
  cfg.validate();
  auto rngs = item_streams(cfg.seed, ys.size());
  std::vector<ComplexGrid> x;
  for (std::size_t i = 0; i < ys.size(); ++i) x.push_back(init_xT(ys[i], s, rngs[i]));
  return integrate(score, std::move(x), ys, s, cfg, rngs);
}

std::vector<ComplexGrid> pc_sample_batch_from(const BatchScoreFn& score, std::vector<ComplexGrid> x_start,
                                              const std::vector<ComplexGrid>& ys, const OuveSchedule& s,
                                              const SamplerConfig& cfg) {
  s.validate();
  cfg.validate();
  if (x_start.size() != ys.size()) throw ShapeError("pc_sample: one start state per condition required");
  auto rngs = item_streams(cfg.seed, ys.size());
  return integrate(score, std::move(x_start), ys, s, cfg, rngs);
}

ComplexGrid pc_sample(const ScoreFn& score, const ComplexGrid& y, const LatentRepresentation* latent,
                      const OuveSchedule& s, const SamplerConfig& cfg) {
  const BatchScoreFn batch = [&](const std::vector<const ComplexGrid*>& x, const std::vector<const ComplexGrid*>& yy,
                                 double t) { return std::vector<ComplexGrid>{score(*x[0], *yy[0], t, latent)}; };
  return pc_sample_batch(batch, {y}, s, cfg).front();
}

Waveform enhance(const Waveform& noisy_in, ScoreNet<float>& net, const StftParams& stft, const Compression& comp,
                 const LatentProvider& latents, const EnhanceOptions& opt) {
  opt.sampler.validate();
  const Waveform noisy = noisy_in.sample_rate == kWorkingSampleRate ? noisy_in : resample(noisy_in, kWorkingSampleRate);
  if (noisy.size() < stft.window_length) throw InvalidArgument("enhance: input shorter than one STFT window");
  if (stft.n_freq() % (std::size_t{1} << (net.spec().n_levels - 1)) != 0) {
    throw ShapeError("enhance: frequency bins not divisible by the network's downsampling factor");
  }
  if (latents.width() != net.spec().latent_dim) throw ShapeError("enhance: latent width does not match the network");

  const FramedClip clip = frame_clip(noisy, stft, comp);
  const std::size_t F = clip.spec.n_freq(), T = clip.spec.n_frames(), W = opt.chunk_frames;
  net.spec().validate_grid(F, W);
  const auto starts = chunk_starts(T, W);

  std::vector<ComplexGrid> ys;
  std::vector<LatentRepresentation> lat;
  for (auto st : starts) {
    ys.push_back(slice_cols(clip.spec.bins, st, W));
    lat.push_back(latents.latent_for(chunk_waveform(clip, st, W)));
  }

  std::vector<ComplexGrid> xs;
  const std::size_t group = std::max<std::size_t>(1, opt.max_batch);
  for (std::size_t b0 = 0; b0 < ys.size(); b0 += group) {
    const std::size_t b1 = std::min(ys.size(), b0 + group);
    std::vector<ComplexGrid> part(ys.begin() + static_cast<std::ptrdiff_t>(b0), ys.begin() + static_cast<std::ptrdiff_t>(b1));
    std::vector<const LatentRepresentation*> lp;
    for (std::size_t i = b0; i < b1; ++i) lp.push_back(&lat[i]);
    const BatchScoreFn fn = [&](const std::vector<const ComplexGrid*>& x, const std::vector<const ComplexGrid*>& y,
                                double t) {
      return score_batch(net, x, y, std::vector<double>(x.size(), t), lp);
    };
    SamplerConfig sc = opt.sampler;
    sc.seed = opt.sampler.seed + b0;  // chunk i keeps stream (seed + b0, i - b0)
    for (auto& g : pc_sample_batch(fn, part, net.schedule(), sc)) xs.push_back(std::move(g));
  }

  ComplexGrid acc(F, T);
  std::vector<double> wsum(T, 0.0);
  for (std::size_t c = 0; c < starts.size(); ++c) {
    for (std::size_t j = 0; j < W && starts[c] + j < T; ++j) {
      const double w = crossfade_weight(j, W);
      wsum[starts[c] + j] += w;
      for (std::size_t f = 0; f < F; ++f) acc.at(f, starts[c] + j) += w * xs[c].at(f, j);
    }
  }
  for (std::size_t j = 0; j < T; ++j) {
    for (std::size_t f = 0; f < F; ++f) acc.at(f, j) /= wsum[j];
  }
  return unframe(acc, clip);
}

}  // namespace exdiff
