#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include <CLI11.hpp>

#include "exdiff/error.hpp"
#include "exdiff/experiment.hpp"
#include "exdiff/parallel.hpp"

namespace fs = std::filesystem;
using namespace exdiff;

namespace {

// Configuration and usage problems exit with 1, everything else with 2.
struct UsageError : Error {
  using Error::Error;
};

struct Globals {
  std::string config_path;
  std::size_t threads = 0;
  bool print_config = false;
};

ExperimentConfig load_config(const Globals& g) {
  try {
    return g.config_path.empty() ? parse_config_text("") : parse_config(g.config_path);
  } catch (const Error& e) {
    throw UsageError(e.what());
  }
}

void finish_config(ExperimentConfig& cfg, const Globals& g) {
  try {
    cfg.resolve();
  } catch (const Error& e) {
    throw UsageError(e.what());
  }
  if (g.print_config) std::cout << to_json_string(cfg) << std::endl;
}

std::vector<fs::path> wav_files(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw UsageError("not a directory: " + dir.string());
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().extension() == ".wav") out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

// File stem without the role suffix, so clip_0001_enhanced and clip_0001_clean pair up.
std::string clip_key(const fs::path& p) {
  std::string s = p.stem().string();
  for (const char* suffix : {"_enhanced", "_clean", "_interference", "_mixture", "_vocals", "_accompaniment"}) {
    const std::string suf(suffix);
    if (s.size() > suf.size() && s.compare(s.size() - suf.size(), suf.size(), suf) == 0) {
      return s.substr(0, s.size() - suf.size());
    }
  }
  return s;
}

bool has_suffix(const fs::path& p, const std::string& role) {
  const std::string s = p.stem().string(), suf = "_" + role;
  return s.size() > suf.size() && s.compare(s.size() - suf.size(), suf.size(), suf) == 0;
}

// WAVs in a directory; when some carry the given role suffix (a pair directory), only those.
std::vector<fs::path> role_wavs(const fs::path& dir, const std::string& role) {
  auto all = wav_files(dir);
  std::vector<fs::path> tagged;
  for (const auto& f : all) {
    if (has_suffix(f, role)) tagged.push_back(f);
  }
  return tagged.empty() ? all : tagged;
}

std::map<std::string, fs::path> keyed_wavs(const fs::path& dir, const std::string& role) {
  std::map<std::string, fs::path> m;
  for (const auto& f : role_wavs(dir, role)) {
    if (!m.emplace(clip_key(f), f).second) throw UsageError("two files map to clip " + clip_key(f) + " in " + dir.string());
  }
  return m;
}

void log(const std::string& msg) { std::cerr << msg << std::endl; }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"exdiff: latent-conditioned score-based enhancement toolkit"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--config", g.config_path, "Experiment config (JSON); see `exdiff config-help`");
  app.add_option("--threads", g.threads, "Maximum worker threads (0 = hardware)");
  app.add_flag("--print-effective-config", g.print_config, "Print the resolved configuration to stdout");

  // remix
  auto* remix = app.add_subcommand("remix", "Mix vocal and accompaniment tracks at a target SNR");
  std::string vocals_dir, accomp_dir, out_dir;
  double snr = 3.0;
  std::uint64_t seed = 0;
  std::string snr_def = "scale_invariant";
  remix->add_option("--vocals", vocals_dir, "Directory of clean tracks")->required();
  remix->add_option("--accomp", accomp_dir, "Directory of interference tracks")->required();
  remix->add_option("--snr", snr, "Target SNR in dB")->capture_default_str();
  remix->add_option("--snr-definition", snr_def, "scale_invariant or energy")->capture_default_str();
  remix->add_option("--out", out_dir, "Output directory")->required();
  remix->add_option("--seed", seed, "Seed recorded in the manifest")->capture_default_str();

  // augment
  auto* augment = app.add_subcommand("augment", "Incoherent mixing of segments from different tracks");
  std::string mode = "incoherent";
  std::size_t n_out = 0;
  double segment = 0.0;
  augment->add_option("--mode", mode, "Augmentation mode")->check(CLI::IsMember({"incoherent"}));
  augment->add_option("--vocals", vocals_dir, "Directory of clean tracks")->required();
  augment->add_option("--accomp", accomp_dir, "Directory of interference tracks")->required();
  augment->add_option("--n", n_out, "Number of pairs (default data.incoherent_pairs)");
  augment->add_option("--segment", segment, "Segment seconds (default data.segment_seconds)");
  augment->add_option("--snr", snr, "Target SNR in dB (default data.target_snr_db)");
  augment->add_option("--out", out_dir, "Output directory")->required();
  augment->add_option("--seed", seed, "Seed (default data.seed)");

  // synth
  auto* synth = app.add_subcommand("synth", "Write the synthetic training or held-out corpus");
  std::size_t n_pairs = 0;
  bool heldout = false;
  synth->add_option("--n", n_pairs, "Number of pairs (default from config)");
  synth->add_option("--seed", seed, "Seed (default from config)");
  synth->add_flag("--heldout", heldout, "Use the held-out section of the config");
  synth->add_option("--out", out_dir, "Output directory")->required();

  // extract-latents
  auto* extract = app.add_subcommand("extract-latents", "Toy latents for every WAV in a directory");
  std::string in_path;
  std::size_t width = 0;
  extract->add_option("--in", in_path, "Input directory")->required();
  extract->add_option("--out", out_dir, "Output directory")->required();
  extract->add_option("--H", width, "Latent width (default latent.H)");
  extract->add_option("--seed", seed, "Projection seed (default latent.seed)");

  // train
  auto* train = app.add_subcommand("train", "Train a score network");
  std::string data_src = "synthetic";
  std::size_t steps = 0;
  double lr = 0.0;
  train->add_option("--data", data_src, "Pair directory with manifest.jsonl, or 'synthetic'")->capture_default_str();
  train->add_option("--out", out_dir, "Checkpoint directory")->required();
  train->add_option("--steps", steps, "Training steps (overrides train.max_steps)");
  train->add_option("--seed", seed, "Training seed (overrides train.seed)");
  train->add_option("--lr", lr, "Learning rate (overrides train.lr)");

  // enhance
  auto* enh = app.add_subcommand("enhance", "Enhance a noisy WAV file or directory");
  std::string ckpt, latent_file, out_path;
  bool raw = false;
  enh->add_option("--ckpt", ckpt, "Checkpoint file")->required()->check(CLI::ExistingFile);
  enh->add_option("--in", in_path, "Noisy WAV file or directory")->required()->check(CLI::ExistingPath);
  enh->add_option("--out", out_path, "Output WAV file (or directory for directory input)")->required();
  enh->add_option("--steps", steps, "Reverse steps N (default from the checkpoint config)");
  enh->add_option("--seed", seed, "Sampler seed");
  enh->add_option("--latent", latent_file, "Precomputed latent file used for every chunk")->check(CLI::ExistingFile);
  enh->add_flag("--raw", raw, "Use raw weights instead of the EMA weights");

  // evaluate
  auto* eval = app.add_subcommand("evaluate", "SI-SDR / SI-SIR / SI-SAR report");
  std::string enhanced_dir, clean_dir, interference_dir, external;
  eval->add_option("--enhanced", enhanced_dir, "Directory of enhanced WAVs")->required();
  eval->add_option("--clean", clean_dir, "Directory of clean references")->required();
  eval->add_option("--interference", interference_dir, "Directory of interference signals")->required();
  eval->add_option("--external", external, "Sidecar JSON with externally computed PESQ/ESTOI")
      ->check(CLI::ExistingFile);
  eval->add_option("--out", out_path, "Report JSON (a .txt table is written next to it)")->required();

  // ablate
  auto* ablate = app.add_subcommand("ablate", "Train and compare fusion variants under one budget");
  std::vector<std::string> variants{"all"};
  ablate->add_option("--variants", variants, "Variants to compare, or 'all'")->capture_default_str();
  ablate->add_option("--steps", steps, "Training steps per variant (overrides train.max_steps)");
  ablate->add_option("--heldout", n_pairs, "Held-out clips (overrides data.heldout.n_pairs)");
  ablate->add_option("--out", out_dir, "Output directory")->required();

  // oracle
  auto* oracle = app.add_subcommand("oracle", "Euler-Maruyama versus the closed-form perturbation kernel");
  std::size_t paths = 20000;
  double dt = 1e-3;
  std::vector<double> times{0.25, 0.5, 1.0};
  std::string json_out;
  oracle->add_option("--paths", paths, "Monte-Carlo paths")->capture_default_str();
  oracle->add_option("--dt", dt, "Step size")->capture_default_str();
  oracle->add_option("--t", times, "Evaluation times")->capture_default_str()->delimiter(',');
  oracle->add_option("--seed", seed, "Seed")->capture_default_str();
  oracle->add_option("--json", json_out, "Also write the table as JSON");

  // plot-mel
  auto* plot = app.add_subcommand("plot-mel", "Render a log-Mel spectrogram as PGM");
  std::size_t n_mels = 64;
  plot->add_option("--in", in_path, "Input WAV")->required()->check(CLI::ExistingFile);
  plot->add_option("--out", out_path, "Output .pgm")->required();
  plot->add_option("--mels", n_mels, "Mel bands")->capture_default_str();

  app.add_subcommand("config-help", "List every config key with its default");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    set_max_threads(g.threads);
    ExperimentConfig cfg = load_config(g);
    const auto* sub = app.get_subcommands().front();
    const std::string name = sub->get_name();

    if (name == "config-help") {
      finish_config(cfg, g);
      if (!g.print_config) std::cout << config_reference();
    } else if (name == "remix") {
      finish_config(cfg, g);
      const auto def = snr_definition_from_string(snr_def);
      const auto vocals = load_tracks(vocals_dir), accomp = load_tracks(accomp_dir);
      if (vocals.size() != accomp.size() || vocals.empty()) {
        throw UsageError("remix needs equally many (and at least one) vocal and accompaniment tracks");
      }
      std::vector<PairRecord> pairs;
      for (std::size_t i = 0; i < vocals.size(); ++i) {
        auto p = remix_to_snr(vocals[i].audio, accomp[i].audio, snr, def);
        p.provenance.clean_id = vocals[i].id;
        p.provenance.interference_id = accomp[i].id;
        p.provenance.seed = seed;
        pairs.push_back(std::move(p));
      }
      write_pairs(pairs, out_dir, "remix");
      log("wrote " + std::to_string(pairs.size()) + " pairs to " + out_dir);
    } else if (name == "augment") {
      if (augment->count("--n")) cfg.data.incoherent_pairs = n_out;
      if (augment->count("--segment")) cfg.data.mix.segment_seconds = segment;
      if (augment->count("--snr")) cfg.data.mix.target_snr_db = snr;
      if (augment->count("--seed")) cfg.data.mix.seed = seed;
      finish_config(cfg, g);
      const auto pairs =
          incoherent_mix(load_tracks(vocals_dir), load_tracks(accomp_dir), cfg.data.incoherent_pairs, cfg.data.mix);
      write_pairs(pairs, out_dir, "incoherent");
      log("wrote " + std::to_string(pairs.size()) + " pairs to " + out_dir);
    } else if (name == "synth") {
      auto& section = heldout ? cfg.data.heldout : cfg.data.synth;
      if (synth->count("--n")) section.n_pairs = n_pairs;
      if (synth->count("--seed")) section.seed = seed;
      finish_config(cfg, g);
      const auto pairs = synth_corpus(section.n_pairs, section.seed, section.config);
      write_pairs(pairs, out_dir, heldout ? "heldout" : "synth");
      log("wrote " + std::to_string(pairs.size()) + " pairs to " + out_dir);
    } else if (name == "extract-latents") {
      if (extract->count("--H")) cfg.latent.width = width;
      if (extract->count("--seed")) cfg.latent.seed = seed;
      finish_config(cfg, g);
      const ToyExtractor ex(cfg.latent.width, cfg.latent.seed, cfg.latent.toy);
      fs::create_directories(out_dir);
      std::size_t n = 0;
      for (const auto& f : wav_files(in_path)) {
        write_latent(ex.extract(resample(read_wav(f), kWorkingSampleRate)), fs::path(out_dir) / (f.stem().string() + ".exlt"));
        ++n;
      }
      log("wrote " + std::to_string(n) + " latent files to " + out_dir);
    } else if (name == "train") {
      if (train->count("--steps")) cfg.train.max_steps = steps;
      if (train->count("--seed")) cfg.train.seed = seed;
      if (train->count("--lr")) cfg.train.lr = lr;
      cfg.data.pairs_dir = data_src == "synthetic" ? "" : data_src;
      finish_config(cfg, g);
      if (cfg.latent.provider != LatentSource::Toy) throw UsageError("training needs latent.provider = toy");
      const auto pairs = training_pairs(cfg);
      log("training on " + std::to_string(pairs.size()) + " pairs for " + std::to_string(cfg.train.max_steps) + " steps");
      const std::size_t every = std::max<std::size_t>(1, cfg.train.log_every);
      const auto model = train_experiment(cfg, pairs, make_latent_provider(cfg), out_dir, [&](const TrainLogEntry& e) {
        if (e.step % every == 0) {
          char line[128];
          std::snprintf(line, sizeof line, "step %zu loss %.5f%s %.1fs", e.step, e.loss, e.skipped ? " (skipped)" : "",
                        e.seconds);
          log(line);
        }
      });
      log("checkpoint written to " + (fs::path(out_dir) / "final.exdf").string() + "; skipped steps: " +
          std::to_string(model.result.skipped_steps));
    } else if (name == "enhance") {
      LoadedModel m = [&] {
        try {
          return load_model(ckpt, !raw);
        } catch (const ParseError& e) {
          throw UsageError(e.what());
        }
      }();
      auto& mc = m.config;
      if (enh->count("--steps")) mc.sampler.n_steps = steps, mc.sampler_steps_set = true;
      if (enh->count("--seed")) mc.sampler.seed = seed;
      mc.sampler.use_ema = !raw;
      finish_config(mc, g);
      std::shared_ptr<LatentProvider> latents;
      if (!latent_file.empty()) {
        auto l = read_latent(latent_file);
        if (l.width != mc.net.latent_dim) {
          throw UsageError("latent file has H = " + std::to_string(l.width) + ", checkpoint expects " +
                           std::to_string(mc.net.latent_dim));
        }
        latents = std::make_shared<FixedLatentProvider>(std::move(l));
      } else {
        if (mc.latent.provider == LatentSource::File) throw UsageError("checkpoint uses file latents; pass --latent");
        latents = make_latent_provider(mc);
      }
      const auto run = [&](const fs::path& in, const fs::path& out) {
        const Waveform noisy = read_wav(in);
        Waveform out_w = enhance(noisy, m.net, mc.stft, mc.compression, *latents, mc.enhance_options());
        if (noisy.sample_rate != out_w.sample_rate) out_w = resample(out_w, noisy.sample_rate);
        if (out.has_parent_path()) fs::create_directories(out.parent_path());
        write_wav(out, out_w);
        log("enhanced " + in.string() + " -> " + out.string());
      };
      if (fs::is_directory(in_path)) {
        for (const auto& f : role_wavs(in_path, "mixture")) run(f, fs::path(out_path) / (clip_key(f) + "_enhanced.wav"));
      } else {
        run(in_path, out_path);
      }
    } else if (name == "evaluate") {
      finish_config(cfg, g);
      const auto enhanced = keyed_wavs(enhanced_dir, "enhanced"), clean = keyed_wavs(clean_dir, "clean"),
                 inter = keyed_wavs(interference_dir, "interference");
      std::vector<EvalItem> items;
      for (const auto& [key, path] : enhanced) {
        if (!clean.count(key) || !inter.count(key)) throw UsageError("no clean/interference file for clip " + key);
        items.push_back({key, resample(read_wav(path), kWorkingSampleRate),
                         resample(read_wav(clean.at(key)), kWorkingSampleRate),
                         resample(read_wav(inter.at(key)), kWorkingSampleRate)});
      }
      if (items.empty()) throw UsageError("no enhanced files in " + enhanced_dir);
      auto report = evaluate_set(items);
      if (!external.empty()) attach_external_scores(report, external);
      write_report(report, out_path);
      std::cout << report.to_table();
    } else if (name == "ablate") {
      if (ablate->count("--steps")) cfg.train.max_steps = steps;
      if (ablate->count("--heldout")) cfg.data.heldout.n_pairs = n_pairs;
      finish_config(cfg, g);
      std::vector<FusionVariant> list;
      for (const auto& v : variants) {
        if (v == "all") {
          for (auto f : all_fusion_variants()) list.push_back(f);
        } else {
          try {
            list.push_back(fusion_variant_from_string(v));
          } catch (const Error& e) {
            throw UsageError(e.what());
          }
        }
      }
      const auto table = run_ablation(cfg, list, out_dir, [](const std::string& s) { log(s); });
      fs::create_directories(out_dir);
      std::ofstream(fs::path(out_dir) / "ablation.json") << table.to_json() << '\n';
      std::ofstream(fs::path(out_dir) / "ablation.txt") << table.to_table();
      std::cout << table.to_table();
      const bool any_failed = std::any_of(table.rows.begin(), table.rows.end(), [](const auto& r) { return !r.ok; });
      return any_failed ? 2 : 0;
    } else if (name == "oracle") {
      finish_config(cfg, g);
      const auto rows = run_oracle(cfg.schedule, times, paths, dt, seed);
      std::cout << oracle_table(rows);
      if (!json_out.empty()) std::ofstream(json_out) << oracle_json(rows) << '\n';
    } else if (name == "plot-mel") {
      finish_config(cfg, g);
      const auto w = resample(read_wav(in_path), kWorkingSampleRate);
      mel_render(stft(w, cfg.stft), n_mels, out_path);
      log("wrote " + out_path);
    }
    return 0;
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << std::endl;
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << std::endl;
    return 2;
  }
}
