#include "exdiff/train.hpp"

#include <chrono>
#include <cmath>
#include <fstream>

#include "exdiff/error.hpp"

namespace exdiff {

using nnet::Tensor;
using nnet::Var;

void TrainConfig::validate() const {
  if (!(lr > 0.0)) throw InvalidArgument("train.lr must be positive");
  if (batch_size == 0) throw InvalidArgument("train.batch_size must be at least 1");
  if (!(ema_decay >= 0.0 && ema_decay < 1.0)) throw InvalidArgument("train.ema_decay must lie in [0, 1)");
  if (precision != 32 && precision != 64) throw InvalidArgument("train.precision must be 32 or 64");
}

PairDataset::PairDataset(const std::vector<PairRecord>& pairs, const StftParams& stft, const Compression& comp,
                         std::size_t chunk_frames, std::shared_ptr<const LatentProvider> latents)
    : chunk_(chunk_frames), latents_(std::move(latents)) {
  if (pairs.empty()) throw InvalidArgument("training dataset is empty");
  if (chunk_frames == 0) throw InvalidArgument("chunk_frames must be positive");
  if (!latents_) throw InvalidArgument("training dataset needs a latent provider");
  for (const auto& p : pairs) {
    Clip c;
    c.noisy = frame_clip(p.mixture, stft, comp);
    c.clean = frame_clip(p.clean, stft, comp, c.noisy.norm).spec.bins;
    clips_.push_back(std::move(c));
  }
}

TrainExample PairDataset::example(std::size_t pair, std::size_t first) const {
  const auto& c = clips_.at(pair);
  TrainExample ex;
  ex.x0 = slice_cols(c.clean, first, chunk_);
  ex.y = slice_cols(c.noisy.spec.bins, first, chunk_);
  ex.latent = latents_->latent_for(chunk_waveform(c.noisy, first, chunk_));
  return ex;
}

TrainExample PairDataset::draw(Rng& rng) const {
  const std::size_t pair = rng.index(clips_.size());
  const std::size_t frames = clips_[pair].noisy.spec.n_frames();
  const std::size_t first = frames > chunk_ ? rng.index(frames - chunk_ + 1) : 0;
  return example(pair, first);
}

template <typename Real>
Var<Real> dsm_loss(ScoreNet<Real>& net, const std::vector<const TrainExample*>& batch, const std::vector<double>& t,
                   const std::vector<ComplexGrid>& z) {
  const std::size_t B = batch.size();
  if (B == 0 || t.size() != B || z.size() != B) throw ShapeError("dsm_loss: inconsistent batch sizes");
  const std::size_t rows = batch[0]->x0.rows, cols = batch[0]->x0.cols, n = rows * cols;
  const auto& sched = net.schedule();
  Tensor<Real> input({B, 4, rows, cols});
  Tensor<Real> target({B, 2, rows, cols});
  std::vector<const LatentRepresentation*> lat;
  for (std::size_t b = 0; b < B; ++b) {
    const auto& ex = *batch[b];
    if (t[b] < sched.t_eps || t[b] > sched.t_max) throw InvalidArgument("dsm_loss: t outside [t_eps, t_max]");
    const double sigma = kernel_std(t[b], sched);
    const ComplexGrid xt = sample_xt(ex.x0, ex.y, t[b], z[b], sched);
    pack_input(xt, ex.y, input.data() + b * 4 * n);
    // s + z / sigma is formed as s - (-z / sigma).
    Real* tg = target.data() + b * 2 * n;
    for (std::size_t i = 0; i < n; ++i) {
      tg[i] = static_cast<Real>(-z[b].data[i].real() / sigma);
      tg[n + i] = static_cast<Real>(-z[b].data[i].imag() / sigma);
    }
    lat.push_back(&ex.latent);
  }
  const Var<Real> out = net.forward(nnet::constant(std::move(input)), t,
                                    nnet::constant(latent_batch<Real>(lat, net.spec().latent_tokens)));
  // mean_square averages over real and imaginary parts; the complex-element mean is twice that.
  return nnet::scale(nnet::mean_square(nnet::sub(out, nnet::constant(std::move(target)))), 2.0);
}

double dsm_loss_value(const std::vector<ComplexGrid>& scores, const std::vector<ComplexGrid>& z,
                      const std::vector<double>& sigma) {
  if (scores.size() != z.size() || z.size() != sigma.size() || z.empty()) {
    throw ShapeError("dsm_loss_value: inconsistent batch sizes");
  }
  double acc = 0.0;
  std::size_t count = 0;
  for (std::size_t b = 0; b < z.size(); ++b) {
    require_same_shape(scores[b], z[b], "dsm_loss_value");
    for (std::size_t i = 0; i < z[b].size(); ++i) acc += std::norm(scores[b].data[i] + z[b].data[i] / sigma[b]);
    count += z[b].size();
  }
  return acc / static_cast<double>(count);
}

template <typename Real>
nnet::CheckpointData make_checkpoint(ScoreNet<Real>& net, const std::vector<Tensor<Real>>& ema,
                                     const std::string& header_json) {
  nnet::CheckpointData d;
  d.header_json = header_json;
  const auto params = net.parameters();
  if (!ema.empty() && ema.size() != params.size()) throw ShapeError("make_checkpoint: EMA size mismatch");
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& p = *params[i];
    d.params.push_back({p.name, p.value.shape(), std::vector<float>(p.value.data(), p.value.data() + p.value.numel())});
    if (!ema.empty()) {
      d.ema.push_back({p.name, ema[i].shape(), std::vector<float>(ema[i].data(), ema[i].data() + ema[i].numel())});
    }
  }
  return d;
}

template <typename Real>
void load_weights(ScoreNet<Real>& net, const nnet::CheckpointData& data, bool use_ema) {
  const auto& records = use_ema && !data.ema.empty() ? data.ema : data.params;
  const auto params = net.parameters();
  if (records.size() != params.size()) {
    throw ShapeError("checkpoint holds " + std::to_string(records.size()) + " tensors, network has " +
                     std::to_string(params.size()));
  }
  for (const auto& r : records) {
    auto* p = net.store().find(r.name);
    if (!p) throw ShapeError("checkpoint tensor " + r.name + " has no counterpart in the network");
    if (p->value.shape() != r.shape) throw ShapeError("checkpoint tensor " + r.name + " has the wrong shape");
    for (std::size_t i = 0; i < r.values.size(); ++i) p->value[i] = static_cast<Real>(r.values[i]);
  }
}

template <typename Real>
TrainResult train_loop(ScoreNet<Real>& net, const PairDataset& data, const TrainConfig& cfg, const TrainOutput& out) {
  cfg.validate();
  if (data.size() == 0) throw InvalidArgument("train_loop: empty dataset");
  const auto& sched = net.schedule();
  auto params = net.parameters();
  nnet::AdamState<Real> adam;
  const nnet::AdamConfig adam_cfg{cfg.lr, 0.9, 0.999, 1e-8};
  auto ema = nnet::snapshot(params);

  std::ofstream csv;
  if (!out.dir.empty()) {
    std::filesystem::create_directories(out.dir);
    csv.open(out.dir / "loss.csv");
    if (!csv) throw Error("cannot write loss log in " + out.dir.string());
    csv << "step,loss,time\n";
  }
  const auto save = [&](const std::string& name) {
    if (out.dir.empty()) return;
    nnet::write_checkpoint(out.dir / name, make_checkpoint(net, ema, out.header_json));
  };

  TrainResult result;
  std::size_t consecutive = 0;
  const auto t0 = std::chrono::steady_clock::now();
  for (std::size_t step = 1; step <= cfg.max_steps; ++step) {
    std::vector<TrainExample> examples;
    std::vector<double> ts;
    std::vector<ComplexGrid> zs;
    for (std::size_t b = 0; b < cfg.batch_size; ++b) {
      Rng rng(cfg.seed, step * 4096 + b);
      examples.push_back(data.draw(rng));
      ts.push_back(rng.uniform(sched.t_eps, sched.t_max));
      zs.push_back(complex_normal_grid(examples.back().x0.rows, examples.back().x0.cols, rng));
    }
    std::vector<const TrainExample*> batch;
    for (const auto& e : examples) batch.push_back(&e);

    net.store().zero_grad();
    const auto loss = dsm_loss(net, batch, ts, zs);
    const double lv = loss.value()[0];
    TrainLogEntry entry{step, lv, 0.0, false};
    bool applied = false;
    if (std::isfinite(lv)) {
      nnet::backward(loss);
      applied = nnet::adam_step(params, adam_cfg, adam).applied;
    }
    if (applied) {
      nnet::ema_update(ema, params, cfg.ema_decay);
      consecutive = 0;
    } else {
      entry.skipped = true;
      ++result.skipped_steps;
      if (++consecutive >= 50) {
        throw NumericError("training aborted: 50 consecutive non-finite steps ending at step " + std::to_string(step));
      }
    }
    entry.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    result.log.push_back(entry);
    if (csv.is_open()) csv << step << ',' << lv << ',' << entry.seconds << '\n';
    if (out.on_step) out.on_step(entry);
    if (cfg.checkpoint_every > 0 && step % cfg.checkpoint_every == 0 && step != cfg.max_steps) {
      save("ckpt_" + std::to_string(step) + ".exdf");
    }
  }
  result.checkpoint = make_checkpoint(net, ema, out.header_json);
  save("final.exdf");
  return result;
}

#define EXDIFF_INSTANTIATE(R)                                                                                    \
  template Var<R> dsm_loss<R>(ScoreNet<R>&, const std::vector<const TrainExample*>&, const std::vector<double>&, \
                              const std::vector<ComplexGrid>&);                                                  \
  template nnet::CheckpointData make_checkpoint<R>(ScoreNet<R>&, const std::vector<Tensor<R>>&,                  \
                                                   const std::string&);                                          \
  template void load_weights<R>(ScoreNet<R>&, const nnet::CheckpointData&, bool);                                \
  template TrainResult train_loop<R>(ScoreNet<R>&, const PairDataset&, const TrainConfig&, const TrainOutput&);

EXDIFF_INSTANTIATE(float)
EXDIFF_INSTANTIATE(double)

}  // namespace exdiff
