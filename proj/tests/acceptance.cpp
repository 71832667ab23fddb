// Acceptance run: one PASS/FAIL line per criterion, nonzero exit on any FAIL.

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <nlohmann/json.hpp>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "exdiff/datapipe.hpp"
#include "exdiff/experiment.hpp"
#include "exdiff/metrics.hpp"
#include "exdiff/sampler.hpp"
#include "exdiff/scorenet.hpp"
#include "exdiff/sde.hpp"
#include "exdiff/spectro.hpp"
#include "gradcheck.hpp"
#include "op_cases.hpp"

namespace fs = std::filesystem;
using namespace exdiff;
using nnet::constant;
using nnet::Tensor;
using nnet::Var;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Outcome {
  bool pass = true;
  std::ostringstream detail;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail << "[fail: " << what << "] ";
    }
  }
};

std::string fmt(const char* f, double a) {
  char b[64];
  std::snprintf(b, sizeof b, f, a);
  return b;
}

void info(const std::string& s) { std::cout << "INFO " << s << std::endl; }

Outcome kernel_oracle() {
  Outcome o;
  const OuveSchedule s;
  for (double t : {0.25, 0.5, 1.0}) {
    const auto row = run_oracle(s, {t}, 20000, 1e-3, 20240601).at(0);
    o.detail << "t=" << t << ": mean " << fmt("%.2f", row.mean_error_in_se) << " se, var "
             << fmt("%.3f", 100.0 * row.var_relative_error) << "%, " << fmt("%.1f", row.seconds) << " s; ";
    o.require(row.mean_error_in_se <= 3.0, "mean at t=" + std::to_string(t));
    o.require(row.var_relative_error <= 0.02, "variance at t=" + std::to_string(t));
    o.require(row.seconds < 60.0, "runtime at t=" + std::to_string(t));
  }
  return o;
}

Outcome spot_values() {
  Outcome o;
  const OuveSchedule s;
  const double v0 = kernel_var(0.0, s), v1 = kernel_var(1.0, s), g0 = diffusion_coeff(0.0, s);
  o.detail << "sigma(0)^2 = " << v0 << ", sigma(1)^2 = " << fmt("%.6f", v1) << ", g(0) = " << fmt("%.7f", g0);
  o.require(v0 == 0.0 && kernel_std(0.0, s) == 0.0, "sigma(0) exactly 0");
  o.require(std::abs(v1 - 0.15131) <= 1e-4, "sigma(1)^2");
  o.require(std::abs(g0 - 0.10729) <= 1e-5, "g(0)");
  return o;
}

Outcome analytic_recovery() {
  Outcome o;
  const auto t0 = Clock::now();
  const OuveSchedule s;
  Rng rng(7);
  ComplexGrid x0(16, 16), y(16, 16);
  for (std::size_t i = 0; i < x0.size(); ++i) {
    x0.data[i] = rng.complex_normal();
    y.data[i] = x0.data[i] + 0.5 * rng.complex_normal();
  }
  const ScoreFn score = [&](const ComplexGrid& x, const ComplexGrid& yy, double t, const LatentRepresentation*) {
    return kernel_score(x, x0, yy, t, s);
  };
  std::vector<double> err;
  for (std::size_t n : {10, 20, 40, 90}) {
    SamplerConfig cfg;
    cfg.n_steps = n;
    cfg.seed = 11;
    const auto out = pc_sample(score, y, nullptr, s, cfg);
    err.push_back(l2_distance(out, x0) / std::sqrt(squared_norm(x0)));
    o.detail << "N=" << n << ": " << fmt("%.4f", err.back()) << "; ";
  }
  const double secs = seconds_since(t0);
  o.detail << fmt("%.1f s", secs);
  o.require(err[2] <= 0.10, "N=40 error");
  for (std::size_t i = 1; i < err.size(); ++i) o.require(err[i] <= err[i - 1] * 1.02, "non-increasing");
  o.require(secs < 30.0, "runtime");
  return o;
}

Outcome gradient_integrity(std::size_t freq_bins, std::size_t frames) {
  Outcome o;
  Rng rng(5);
  auto cases = testing::op_gradient_cases();
  double worst_op = 0.0;
  for (auto& c : cases) {
    const auto r = testing::check_gradients(c.params(), c.loss, 10, rng);
    worst_op = std::max(worst_op, r.max_rel_error);
    o.require(r.max_rel_error <= 1e-4, c.name);
    o.require(r.checked >= std::min<std::size_t>(10, c.inputs[0]->value.numel()), c.name + " sample count");
  }
  o.detail << cases.size() << " ops, worst " << fmt("%.2e", worst_op) << "; ";

  // Default network on the desk grid, 64-bit.
  Rng data(17);
  const auto x = testing::random_tensor({2, 4, freq_bins, frames}, data);
  const auto lat = testing::random_tensor({2, 4, ScoreNetSpec{}.latent_dim}, data);
  for (auto v : all_fusion_variants()) {
    ScoreNetSpec spec;
    spec.fusion = v;
    spec.init_seed = 3;
    ScoreNet<double> net(spec, OuveSchedule{});
    const auto loss = [&] { return testing::probe(net.forward(constant(x), {0.3, 0.85}, constant(lat))); };
    // Ten random parameter tensors plus every latent projection, one entry each.
    auto all = net.parameters();
    std::vector<nnet::Parameter<double>*> chosen;
    std::set<std::string> names;
    for (const auto& n : net.latent_projection_names()) {
      chosen.push_back(net.store().find(n));
      names.insert(n);
    }
    Rng pick(31);
    const std::size_t target = chosen.size() + 10;
    while (chosen.size() < target) {
      auto* p = all[pick.index(all.size())];
      if (names.insert(p->name).second) chosen.push_back(p);
    }
    const auto r = testing::check_gradients(chosen, loss, 1, pick);
    o.detail << to_string(v) << " " << r.checked << " params " << fmt("%.2e", r.max_rel_error) << "; ";
    o.require(r.checked >= 10, std::string(to_string(v)) + " sample count");
    o.require(r.max_rel_error <= 1e-4, to_string(v));
  }
  return o;
}

Outcome mixture_row(const ExperimentConfig& cfg) {
  Outcome o;
  const auto clips = synth_corpus(20, 77, cfg.data.synth.config);
  std::vector<double> values;
  for (const auto& p : clips) {
    const auto m = remix_to_snr(p.clean, p.interference, 3.0);
    values.push_back(si_sdr(m.mixture, m.clean));
  }
  const auto ms = mean_std(values);
  o.detail << ms.count << " clips: " << fmt("%.4f", ms.mean) << " +- " << fmt("%.2e", ms.std) << " dB";
  o.require(ms.count >= 20, "clip count");
  o.require(std::abs(ms.mean - 3.0) <= 0.05, "mean");
  o.require(ms.std <= 0.05, "std");
  return o;
}

Outcome metric_properties() {
  Outcome o;
  Rng rng(12);
  std::vector<double> ref(4000), est(4000);
  for (std::size_t i = 0; i < ref.size(); ++i) {
    ref[i] = rng.normal();
    est[i] = ref[i] + 0.3 * rng.normal();
  }
  const double base = si_sdr(est, ref);
  double worst_scale = 0.0;
  for (double a : {1e-3, 0.5, 7.0, 1e3}) {
    auto e = est;
    for (auto& v : e) v *= a;
    worst_scale = std::max(worst_scale, std::abs(si_sdr(e, ref) - base));
  }
  o.require(worst_scale <= 1e-9, "scale invariance");

  double worst_identity = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 256 + rng.index(512);
    std::vector<double> s(n), i(n), a(n), e(n);
    for (std::size_t k = 0; k < n; ++k) s[k] = rng.normal(), i[k] = rng.normal(), a[k] = rng.normal();
    // Orthogonalise interference and artifact against the target and each other.
    const auto project_out = [](std::vector<double>& v, const std::vector<double>& u) {
      double uv = 0.0, uu = 0.0;
      for (std::size_t k = 0; k < v.size(); ++k) uv += u[k] * v[k], uu += u[k] * u[k];
      for (std::size_t k = 0; k < v.size(); ++k) v[k] -= uv / uu * u[k];
    };
    project_out(i, s);
    project_out(a, s);
    project_out(a, i);
    const double ws = 0.5 + rng.uniform(), wi = rng.uniform(), wa = rng.uniform();
    for (std::size_t k = 0; k < n; ++k) e[k] = ws * s[k] + wi * i[k] + wa * a[k];
    const auto d = si_decompose(e, s, i);
    double ee = 0.0, et = 0.0, ei = 0.0, ea = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
      ee += e[k] * e[k];
      et += d.e_target[k] * d.e_target[k];
      ei += d.e_inter[k] * d.e_inter[k];
      ea += d.e_artif[k] * d.e_artif[k];
    }
    worst_identity = std::max(worst_identity, std::abs(et + ei + ea - ee) / ee);
  }
  o.require(worst_identity <= 1e-6, "energy identity");
  o.detail << "scale deviation " << fmt("%.1e", worst_scale) << " dB, energy identity " << fmt("%.1e", worst_identity);
  return o;
}

Outcome fusion_invariants(std::size_t freq_bins, std::size_t frames) {
  Outcome o;
  {
    ScoreNetSpec spec;
    spec.positional_encoding = false;
    spec.init_seed = 4;
    ScoreNet<double> net(spec, OuveSchedule{});
    Rng rng(6);
    const std::size_t c = spec.channels(spec.n_levels - 1), side = freq_bins >> (spec.n_levels - 1);
    const auto h = testing::random_tensor({1, c, side, frames >> (spec.n_levels - 1)}, rng);
    const std::size_t n = 9, H = spec.latent_dim;
    const auto lat = testing::random_tensor({1, n, H}, rng);
    const std::size_t order[n] = {4, 7, 0, 2, 8, 1, 6, 3, 5};
    Tensor<double> perm({1, n, H});
    for (std::size_t r = 0; r < n; ++r) std::copy_n(lat.data() + order[r] * H, H, perm.data() + r * H);
    const auto a = net.fuse_bottleneck(constant(h), net.project_latent(constant(lat))).value();
    const auto b = net.fuse_bottleneck(constant(h), net.project_latent(constant(perm))).value();
    double diff = 0.0;
    for (std::size_t i = 0; i < a.numel(); ++i) diff = std::max(diff, std::abs(a[i] - b[i]));
    o.detail << "permutation max diff " << fmt("%.1e", diff) << "; ";
    o.require(diff < 1e-6, "permutation");
  }
  const auto bitwise = [&](auto tag) {
    using Real = decltype(tag);
    Rng rng(8);
    Tensor<Real> x({2, 4, freq_bins, frames}), lat({2, 5, ScoreNetSpec{}.latent_dim});
    for (std::size_t i = 0; i < x.numel(); ++i) x[i] = static_cast<Real>(rng.normal());
    for (std::size_t i = 0; i < lat.numel(); ++i) lat[i] = static_cast<Real>(rng.normal());
    for (auto v : all_fusion_variants()) {
      if (!uses_attention(v)) continue;
      ScoreNetSpec spec;
      spec.fusion = v;
      ScoreNet<Real> net(spec, OuveSchedule{});
      net.zero_fusion_output_projections();
      const auto a = net.forward(constant(x), {0.2, 0.7}, constant(lat)).value();
      const auto b = net.forward(constant(x), {0.2, 0.7}, Var<Real>{}, ForwardOptions{true}).value();
      const bool same = a.numel() == b.numel() && std::equal(a.data(), a.data() + a.numel(), b.data());
      o.detail << to_string(v) << "/" << sizeof(Real) * 8 << (same ? " bit-exact; " : " differs; ");
      o.require(same, std::string(to_string(v)) + " bit-exact");
    }
  };
  bitwise(float{});
  bitwise(double{});
  return o;
}

Outcome toy_learning(const ExperimentConfig& base, const fs::path& work) {
  Outcome o;
  ExperimentConfig cfg = base;
  o.require(cfg.train.max_steps >= 2000, "config trains for at least 2000 steps");
  o.require(cfg.data.heldout.n_pairs >= 20, "held-out set of at least 20 clips");
  const auto pairs = training_pairs(cfg);
  const auto latents = make_latent_provider(cfg);
  const auto t0 = Clock::now();
  double acc = 0.0;
  std::size_t n = 0;
  auto model = train_experiment(cfg, pairs, latents, work / "train", [&](const TrainLogEntry& e) {
    if (e.skipped) return;
    acc += e.loss, ++n;
    if ((e.step + 1) % 250 == 0) {
      info("toy training step " + std::to_string(e.step + 1) + " loss " + fmt("%.3f", acc / n) + " at " +
           fmt("%.0f s", e.seconds));
      acc = 0.0, n = 0;
    }
  });
  const double train_secs = seconds_since(t0);

  const auto heldout = heldout_pairs(cfg);
  std::vector<Waveform> enhanced;
  const auto t1 = Clock::now();
  const auto report = evaluate_model(model.net, cfg, heldout, *latents, work / "enhanced", &enhanced);
  const double eval_secs = seconds_since(t1);

  std::size_t better = 0;
  double enh_silent = 0.0, mix_silent = 0.0;
  for (std::size_t i = 0; i < heldout.size(); ++i) {
    const auto& p = heldout[i];
    const auto& c = report.per_clip[i];
    const double mix = si_sdr(p.mixture, p.clean);
    if (c.ok && c.si_sdr > mix) ++better;
    for (const auto& [b, e] : p.provenance.silent_regions) {
      enh_silent += region_mel_energy(enhanced[i], b, e, cfg.stft);
      mix_silent += region_mel_energy(p.mixture, b, e, cfg.stft);
    }
    info("clip " + std::to_string(i) + ": mixture " + fmt("%.2f", mix) + " dB, enhanced " + fmt("%.2f", c.si_sdr) +
         " dB (SIR " + fmt("%.2f", c.si_sir) + ", SAR " + fmt("%.2f", c.si_sar) + ")");
  }
  const double silent_db = capped_db(enh_silent, mix_silent);
  const double fraction = heldout.empty() ? 0.0 : static_cast<double>(better) / heldout.size();

  // Mel images of the first clip for inspection.
  if (!heldout.empty()) {
    mel_render(stft(heldout[0].mixture, cfg.stft), 64, work / "clip0_mixture.pgm");
    mel_render(stft(heldout[0].clean, cfg.stft), 64, work / "clip0_clean.pgm");
    mel_render(stft(enhanced[0], cfg.stft), 64, work / "clip0_enhanced.pgm");
  }

  // Silence in, near silence out.
  Waveform silence;
  silence.sample_rate = kWorkingSampleRate;
  silence.samples.assign(kWorkingSampleRate, 0.0);
  const auto quiet = enhance(silence, model.net, cfg.stft, cfg.compression, *latents, cfg.enhance_options());
  double peak = 0.0;
  for (double v : quiet.samples) peak = std::max(peak, std::abs(v));
  info("enhancing digital silence peaks at " + fmt("%.1f", 20.0 * std::log10(std::max(peak, 1e-300))) + " dBFS");

  o.detail << "train " << fmt("%.0f s", train_secs) << ", eval " << fmt("%.0f s", eval_secs) << "; " << better << "/"
           << heldout.size() << " clips above the mixture (mean enhanced " << fmt("%.2f", report.si_sdr.mean)
           << " dB); silent regions " << fmt("%.1f", silent_db) << " dB vs mixture";
  o.require(train_secs < 1800.0, "training under 30 min");
  o.require(fraction >= 0.8, "80% of clips above the mixture");
  o.require(silent_db <= -20.0, "silent-region energy");
  return o;
}

Outcome ablation_harness(const std::string& cli, const fs::path& config, const fs::path& work) {
  Outcome o;
  const fs::path out = work / "ablation";
  const std::size_t steps = 40;
  const std::string cmd = "\"" + cli + "\" --config \"" + config.string() + "\" ablate --variants all --steps " +
                          std::to_string(steps) + " --heldout 2 --out \"" + out.string() + "\" > \"" +
                          (work / "ablation.log").string() + "\" 2>&1";
  const int rc = std::system(cmd.c_str());
  o.require(rc == 0, "ablate exit status " + std::to_string(rc));
  std::ifstream in(out / "ablation.json");
  if (!in) {
    o.require(false, "ablation.json missing");
    return o;
  }
  const auto j = nlohmann::json::parse(in);
  std::set<std::string> seen;
  for (const auto& r : j.at("rows")) {
    const std::string v = r.at("variant");
    seen.insert(v);
    const bool ok = r.at("ok").get<bool>();
    o.require(ok, v + " ok");
    if (!ok) continue;
    const double sdr = r.at("si_sdr").at("mean"), loss = r.at("final_loss"), secs = r.at("wall_seconds");
    o.require(std::isfinite(sdr) && std::isfinite(loss) && secs > 0.0, v + " finite row");
    std::ifstream csv(out / v / "loss.csv");
    std::size_t lines = 0;
    for (std::string line; std::getline(csv, line);) ++lines;
    o.require(lines == steps + 1, v + " trained for the shared budget");
    o.detail << v << " " << fmt("%.2f dB", sdr) << " " << fmt("%.0f s", secs) << "; ";
  }
  o.require(seen.size() == all_fusion_variants().size(), "all variants reported");
  o.require(fs::exists(out / "ablation.txt"), "table written");
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"exdiff acceptance run"};
  std::string config_path, cli, work = "acceptance_work";
  std::vector<int> only;
  app.add_option("--config", config_path, "Desk experiment config")->required()->check(CLI::ExistingFile);
  app.add_option("--cli", cli, "Path to the exdiff executable")->required();
  app.add_option("--work", work, "Scratch directory");
  app.add_option("--only", only, "Run only these criteria");
  CLI11_PARSE(app, argc, argv);

  const auto cfg = parse_config(config_path);
  fs::create_directories(work);
  const std::size_t bins = cfg.stft.n_freq(), frames = cfg.data.chunk_frames;

  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"kernel oracle agreement", kernel_oracle},
      {"closed-form spot values", spot_values},
      {"analytic-score sampler recovery", analytic_recovery},
      {"gradient integrity", [&] { return gradient_integrity(bins, frames); }},
      {"mixture row reproduction", [&] { return mixture_row(cfg); }},
      {"metric properties", metric_properties},
      {"fusion invariants", [&] { return fusion_invariants(bins, frames); }},
      {"end-to-end toy learning", [&] { return toy_learning(cfg, fs::path(work) / "toy"); }},
      {"ablation harness", [&] { return ablation_harness(cli, config_path, work); }},
  };

  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!only.empty() && std::find(only.begin(), only.end(), id) == only.end()) continue;
    Outcome o;
    const auto t0 = Clock::now();
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail << "exception: " << e.what();
    }
    std::cout << (o.pass ? "PASS" : "FAIL") << " [" << id << "] " << criteria[i].first << " (" << fmt("%.1f s", seconds_since(t0))
              << "): " << o.detail.str() << std::endl;
    failed += o.pass ? 0 : 1;
  }
  std::cout << (failed ? "FAILED " + std::to_string(failed) + " criteria" : std::string("ALL CRITERIA PASSED")) << std::endl;
  return failed ? 1 : 0;
}
