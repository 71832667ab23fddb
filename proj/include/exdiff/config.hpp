#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "exdiff/datapipe.hpp"
#include "exdiff/sampler.hpp"
#include "exdiff/scorenet.hpp"
#include "exdiff/sde.hpp"
#include "exdiff/spectro.hpp"
#include "exdiff/train.hpp"

namespace exdiff {

enum class Task { Speech, Vocal };

const char* to_string(Task t);
Task task_from_string(const std::string& s);
/// Reverse steps used when the sampler section leaves n_steps unset.
std::size_t default_reverse_steps(Task t);

struct SynthSection {
  std::size_t n_pairs = 64;
  std::uint64_t seed = 1;
  SynthConfig config;
};

struct DataSection {
  MixSpec mix;
  std::string vocals_dir;   // remix / augment sources
  std::string accomp_dir;
  std::string pairs_dir;    // manifest.jsonl directory; empty uses the synthetic corpus
  std::size_t incoherent_pairs = 256;
  std::size_t chunk_frames = 64;
  SynthSection synth;
  SynthSection heldout{20, 1000001, SynthConfig{}};
};

enum class LatentSource { Toy, File };

struct LatentSection {
  LatentSource provider = LatentSource::Toy;
  std::size_t width = 2048;  // H
  std::uint64_t seed = 0;
  std::string path;          // latent file for provider = file
  ToyExtractorConfig toy;
};

struct ExperimentConfig {
  Task task = Task::Vocal;
  OuveSchedule schedule;
  StftParams stft;
  Compression compression;
  ScoreNetSpec net;
  TrainConfig train;
  SamplerConfig sampler;
  bool sampler_steps_set = false;  // false: n_steps follows the task
  std::size_t max_batch = 16;
  DataSection data;
  LatentSection latent;

  /// Fills task-dependent defaults and checks cross-field consistency
  /// (grid divisibility, latent width).
  void resolve();
  EnhanceOptions enhance_options() const;
};

/// Strict parse: unknown keys and wrong types raise ParseError naming the key
/// path. An empty document yields the defaults. The result is resolved.
ExperimentConfig parse_config_text(const std::string& text, const std::string& source = "config");
ExperimentConfig parse_config(const std::filesystem::path& path);

/// Fully resolved configuration as pretty JSON; parse_config_text reads it back.
std::string to_json_string(const ExperimentConfig& cfg, int indent = 2);

/// Help text listing every key with its default.
std::string config_reference();

}  // namespace exdiff
