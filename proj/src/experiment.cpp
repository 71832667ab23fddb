#include "exdiff/experiment.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <sstream>

#include <nlohmann/json.hpp>

#include "exdiff/error.hpp"

namespace exdiff {

std::vector<PairRecord> training_pairs(const ExperimentConfig& cfg) {
  if (!cfg.data.pairs_dir.empty()) return read_pairs(cfg.data.pairs_dir);
  return synth_corpus(cfg.data.synth.n_pairs, cfg.data.synth.seed, cfg.data.synth.config);
}

std::vector<PairRecord> heldout_pairs(const ExperimentConfig& cfg) {
  return synth_corpus(cfg.data.heldout.n_pairs, cfg.data.heldout.seed, cfg.data.heldout.config);
}

std::shared_ptr<LatentProvider> make_latent_provider(const ExperimentConfig& cfg) {
  if (cfg.latent.provider == LatentSource::File) {
    auto l = read_latent(cfg.latent.path);
    if (l.width != cfg.latent.width) {
      throw InvalidArgument("latent file " + cfg.latent.path + " has H = " + std::to_string(l.width) +
                            ", config expects " + std::to_string(cfg.latent.width));
    }
    return std::make_shared<FixedLatentProvider>(std::move(l));
  }
  return std::make_shared<ToyLatentProvider>(cfg.latent.width, cfg.latent.seed, cfg.latent.toy);
}

namespace {

template <typename Real>
TrainResult train_at(const ExperimentConfig& cfg, const PairDataset& data, const std::filesystem::path& out_dir,
                     std::function<void(const TrainLogEntry&)> on_step) {
  ScoreNet<Real> net(cfg.net, cfg.schedule);
  TrainOutput out{out_dir, to_json_string(cfg, -1), std::move(on_step)};
  return train_loop(net, data, cfg.train, out);
}

}  // namespace

TrainedModel train_experiment(const ExperimentConfig& cfg, const std::vector<PairRecord>& pairs,
                              const std::shared_ptr<const LatentProvider>& latents,
                              const std::filesystem::path& out_dir, std::function<void(const TrainLogEntry&)> on_step) {
  if (latents->width() != cfg.net.latent_dim) throw InvalidArgument("latent provider width does not match net H");
  PairDataset data(pairs, cfg.stft, cfg.compression, cfg.data.chunk_frames, latents);
  TrainedModel m{ScoreNet<float>(cfg.net, cfg.schedule), {}};
  m.result = cfg.train.precision == 64 ? train_at<double>(cfg, data, out_dir, std::move(on_step))
                                       : train_at<float>(cfg, data, out_dir, std::move(on_step));
  load_weights(m.net, m.result.checkpoint, cfg.sampler.use_ema);
  return m;
}

LoadedModel load_model(const nnet::CheckpointData& data, bool use_ema) {
  ExperimentConfig cfg = parse_config_text(data.header_json, "checkpoint header");
  LoadedModel m{cfg, ScoreNet<float>(cfg.net, cfg.schedule)};
  load_weights(m.net, data, use_ema);
  return m;
}

LoadedModel load_model(const std::filesystem::path& checkpoint, bool use_ema) {
  return load_model(nnet::read_checkpoint(checkpoint), use_ema);
}

EvalReport evaluate_model(ScoreNet<float>& net, const ExperimentConfig& cfg, const std::vector<PairRecord>& pairs,
                          const LatentProvider& latents, const std::filesystem::path& out_dir,
                          std::vector<Waveform>* enhanced) {
  if (pairs.empty()) throw InvalidArgument("evaluate_model: no pairs");
  if (!out_dir.empty()) std::filesystem::create_directories(out_dir);
  std::vector<EvalItem> items;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    char id[32];
    std::snprintf(id, sizeof id, "clip_%04zu", i);
    EnhanceOptions opt = cfg.enhance_options();
    opt.sampler.seed = cfg.sampler.seed + 1000003ULL * i;
    Waveform out = enhance(pairs[i].mixture, net, cfg.stft, cfg.compression, latents, opt);
    if (!out_dir.empty()) write_wav(out_dir / (std::string(id) + "_enhanced.wav"), out);
    if (enhanced) enhanced->push_back(out);
    items.push_back({id, std::move(out), pairs[i].clean, pairs[i].interference});
  }
  return evaluate_set(items);
}

double region_mel_energy(const Waveform& signal, std::size_t begin, std::size_t end, const StftParams& stft,
                         std::size_t n_mels) {
  const auto e = mel_energies(exdiff::stft(signal, stft), n_mels);
  double sum = 0.0;
  std::size_t frames = 0;
  for (std::size_t f = 0; f < e.n_frames; ++f) {
    const std::size_t s0 = f * stft.hop_length;
    if (s0 < begin || s0 + stft.window_length > end) continue;
    ++frames;
    for (std::size_t m = 0; m < n_mels; ++m) sum += e.at(m, f);
  }
  if (frames == 0) throw InvalidArgument("region_mel_energy: region shorter than one frame");
  return sum;
}

double region_energy_ratio_db(const Waveform& signal, const Waveform& reference, std::size_t begin, std::size_t end,
                              const StftParams& stft, std::size_t n_mels) {
  if (signal.size() != reference.size()) throw ShapeError("region_energy_ratio_db: length mismatch");
  return capped_db(region_mel_energy(signal, begin, end, stft, n_mels),
                   region_mel_energy(reference, begin, end, stft, n_mels));
}

std::string AblationTable::to_table() const {
  std::ostringstream os;
  char line[256];
  std::snprintf(line, sizeof line, "%-24s %-16s %-16s %-16s %10s %10s\n", "variant", "SI-SDR", "SI-SIR", "SI-SAR",
                "loss", "seconds");
  os << line;
  const auto cell = [](const MeanStd& m) {
    char b[32];
    std::snprintf(b, sizeof b, "%.2f +- %.2f", m.mean, m.std);
    return std::string(b);
  };
  for (const auto& r : rows) {
    if (r.ok) {
      std::snprintf(line, sizeof line, "%-24s %-16s %-16s %-16s %10.4f %10.1f\n", to_string(r.variant),
                    cell(r.si_sdr).c_str(), cell(r.si_sir).c_str(), cell(r.si_sar).c_str(), r.final_loss,
                    r.wall_seconds);
    } else {
      std::snprintf(line, sizeof line, "%-24s FAILED: %.180s\n", to_string(r.variant), r.error.c_str());
    }
    os << line;
  }
  return os.str();
}

std::string AblationTable::to_json() const {
  nlohmann::json rows_j = nlohmann::json::array();
  const auto ms = [](const MeanStd& m) { return nlohmann::json{{"mean", m.mean}, {"std", m.std}, {"count", m.count}}; };
  for (const auto& r : rows) {
    nlohmann::json j{{"variant", to_string(r.variant)}, {"ok", r.ok},
                     {"wall_seconds", r.wall_seconds}, {"parameters", r.parameters}};
    if (r.ok) {
      j["si_sdr"] = ms(r.si_sdr);
      j["si_sir"] = ms(r.si_sir);
      j["si_sar"] = ms(r.si_sar);
      j["final_loss"] = r.final_loss;
    } else {
      j["error"] = r.error;
    }
    rows_j.push_back(j);
  }
  return nlohmann::json{{"version", 1}, {"rows", rows_j}}.dump(2);
}

AblationTable run_ablation(const ExperimentConfig& cfg, const std::vector<FusionVariant>& variants,
                           const std::filesystem::path& out_dir, std::function<void(const std::string&)> progress) {
  if (variants.empty()) throw InvalidArgument("ablation needs at least one variant");
  const auto pairs = training_pairs(cfg);
  const auto heldout = heldout_pairs(cfg);
  const auto latents = make_latent_provider(cfg);
  AblationTable table;
  for (const auto v : variants) {
    AblationRow row;
    row.variant = v;
    const auto t0 = std::chrono::steady_clock::now();
    try {
      ExperimentConfig vc = cfg;
      vc.net.fusion = v;
      vc.resolve();
      const auto dir = out_dir.empty() ? std::filesystem::path{} : out_dir / to_string(v);
      if (progress) progress(std::string("training ") + to_string(v));
      auto model = train_experiment(vc, pairs, latents, dir);
      row.parameters = model.net.store().scalar_count();
      // Mean loss over the last 10% of steps (at least one).
      const auto& log = model.result.log;
      const std::size_t tail = std::max<std::size_t>(1, log.size() / 10);
      double acc = 0.0;
      std::size_t n = 0;
      for (std::size_t i = log.size() > tail ? log.size() - tail : 0; i < log.size(); ++i) {
        if (!log[i].skipped) acc += log[i].loss, ++n;
      }
      row.final_loss = n ? acc / static_cast<double>(n) : std::nan("");
      if (progress) progress(std::string("evaluating ") + to_string(v));
      const auto report =
          evaluate_model(model.net, vc, heldout, *latents, dir.empty() ? dir : dir / "enhanced");
      if (!dir.empty()) write_report(report, dir / "report.json");
      row.si_sdr = report.si_sdr;
      row.si_sir = report.si_sir;
      row.si_sar = report.si_sar;
    } catch (const std::exception& e) {
      row.ok = false;
      row.error = e.what();
    }
    row.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    table.rows.push_back(row);
  }
  return table;
}

std::vector<OracleRow> run_oracle(const OuveSchedule& s, const std::vector<double>& times, std::size_t n_paths,
                                  double dt, std::uint64_t seed) {
  if (!(dt > 0.0)) throw InvalidArgument("oracle: dt must be positive");
  ComplexGrid x0(1, 1), y(1, 1);
  x0.data[0] = 1.0;
  std::vector<OracleRow> rows;
  for (const double t : times) {
    const auto t0 = std::chrono::steady_clock::now();
    const auto steps = static_cast<std::size_t>(std::llround(t / dt));
    const auto sim = simulate_forward(x0, y, t, std::max<std::size_t>(steps, 1), n_paths, seed, s);
    OracleRow r;
    r.t = t;
    r.kernel_mean = kernel_mean(x0, y, t, s).data[0].real();
    r.kernel_var = kernel_var(t, s);
    r.empirical_mean = sim.empirical_mean.data[0].real();
    r.empirical_var = sim.empirical_var;
    r.mean_standard_error = sim.mean_standard_error;
    r.mean_error_in_se = std::abs(sim.empirical_mean.data[0] - kernel_mean(x0, y, t, s).data[0]) / sim.mean_standard_error;
    r.var_relative_error = r.kernel_var > 0.0 ? std::abs(sim.empirical_var / r.kernel_var - 1.0) : std::nan("");
    r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    rows.push_back(r);
  }
  return rows;
}

std::string oracle_table(const std::vector<OracleRow>& rows) {
  std::ostringstream os;
  char line[256];
  std::snprintf(line, sizeof line, "%6s %10s %10s %10s %10s %8s %8s %8s\n", "t", "mu", "mu_emp", "var", "var_emp",
                "|dmu|/se", "var_rel", "sec");
  os << line;
  for (const auto& r : rows) {
    std::snprintf(line, sizeof line, "%6.3f %10.6f %10.6f %10.6f %10.6f %8.3f %8.4f %8.2f\n", r.t, r.kernel_mean,
                  r.empirical_mean, r.kernel_var, r.empirical_var, r.mean_error_in_se, r.var_relative_error,
                  r.seconds);
    os << line;
  }
  return os.str();
}

std::string oracle_json(const std::vector<OracleRow>& rows) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& r : rows) {
    arr.push_back({{"t", r.t},
                   {"kernel_mean", r.kernel_mean},
                   {"kernel_var", r.kernel_var},
                   {"empirical_mean", r.empirical_mean},
                   {"empirical_var", r.empirical_var},
                   {"mean_standard_error", r.mean_standard_error},
                   {"mean_error_in_se", r.mean_error_in_se},
                   {"var_relative_error", r.var_relative_error},
                   {"seconds", r.seconds}});
  }
  return nlohmann::json{{"version", 1}, {"rows", arr}}.dump(2);
}

}  // namespace exdiff
