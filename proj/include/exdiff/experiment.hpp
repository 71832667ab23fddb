#pragma once

#include <filesystem>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "exdiff/config.hpp"
#include "exdiff/metrics.hpp"

namespace exdiff {

/// Pairs from data.pairs_dir when set, otherwise the synthetic training corpus.
std::vector<PairRecord> training_pairs(const ExperimentConfig& cfg);
std::vector<PairRecord> heldout_pairs(const ExperimentConfig& cfg);

std::shared_ptr<LatentProvider> make_latent_provider(const ExperimentConfig& cfg);

struct TrainedModel {
  ScoreNet<float> net;
  TrainResult result;
};

/// Builds the configured network, trains it (at the configured precision) and
/// returns the EMA or raw weights per cfg.sampler.use_ema in a 32-bit network.
TrainedModel train_experiment(const ExperimentConfig& cfg, const std::vector<PairRecord>& pairs,
                              const std::shared_ptr<const LatentProvider>& latents,
                              const std::filesystem::path& out_dir = {},
                              std::function<void(const TrainLogEntry&)> on_step = {});

struct LoadedModel {
  ExperimentConfig config;
  ScoreNet<float> net;
};

/// Rebuilds the network recorded in a checkpoint header and loads its weights.
LoadedModel load_model(const nnet::CheckpointData& data, bool use_ema);
LoadedModel load_model(const std::filesystem::path& checkpoint, bool use_ema);

/// Enhances every held-out mixture and scores it against its clean and
/// interference stems. Enhanced audio is written to out_dir when set.
EvalReport evaluate_model(ScoreNet<float>& net, const ExperimentConfig& cfg, const std::vector<PairRecord>& pairs,
                          const LatentProvider& latents, const std::filesystem::path& out_dir = {},
                          std::vector<Waveform>* enhanced = nullptr);

/// Summed mel-band power over the frames lying entirely inside [begin, end).
double region_mel_energy(const Waveform& signal, std::size_t begin, std::size_t end, const StftParams& stft,
                         std::size_t n_mels = 64);

/// Mel-domain energy of `signal` relative to `reference` over frames lying
/// entirely inside [begin, end) samples, in dB (negative: signal is quieter).
double region_energy_ratio_db(const Waveform& signal, const Waveform& reference, std::size_t begin, std::size_t end,
                              const StftParams& stft, std::size_t n_mels = 64);

struct AblationRow {
  FusionVariant variant = FusionVariant::BottleneckCrossAttn;
  bool ok = true;
  std::string error;
  MeanStd si_sdr, si_sir, si_sar;
  double final_loss = 0.0;
  double wall_seconds = 0.0;
  std::size_t parameters = 0;
};

struct AblationTable {
  std::vector<AblationRow> rows;
  std::string to_table() const;
  std::string to_json() const;
};

/// Trains each variant from the same seed and corpus with the same budget,
/// then scores all of them on the same held-out set. A failing variant is
/// marked and the others still run.
AblationTable run_ablation(const ExperimentConfig& cfg, const std::vector<FusionVariant>& variants,
                           const std::filesystem::path& out_dir = {},
                           std::function<void(const std::string&)> progress = {});

struct OracleRow {
  double t = 0.0;
  double kernel_mean = 0.0;
  double kernel_var = 0.0;
  double empirical_mean = 0.0;
  double empirical_var = 0.0;
  double mean_standard_error = 0.0;
  double mean_error_in_se = 0.0;
  double var_relative_error = 0.0;
  double seconds = 0.0;
};

/// Euler-Maruyama against the closed-form kernel from the scalar start x0 = 1, y = 0.
std::vector<OracleRow> run_oracle(const OuveSchedule& s, const std::vector<double>& times, std::size_t n_paths,
                                  double dt, std::uint64_t seed);
std::string oracle_table(const std::vector<OracleRow>& rows);
std::string oracle_json(const std::vector<OracleRow>& rows);

}  // namespace exdiff
