#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "exdiff/waveform.hpp"

namespace exdiff {

enum class SnrDefinition { ScaleInvariant, Energy };

const char* to_string(SnrDefinition d);
SnrDefinition snr_definition_from_string(const std::string& s);

struct MixSpec {
  double target_snr_db = 3.0;
  SnrDefinition snr_definition = SnrDefinition::ScaleInvariant;
  double segment_seconds = 4.0;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Sample range [begin, end) of the clean signal.
using SampleRange = std::pair<std::size_t, std::size_t>;

struct Provenance {
  std::string clean_id;
  std::string interference_id;
  std::size_t clean_offset = 0;
  std::size_t interference_offset = 0;
  bool incoherent = false;
  std::uint64_t seed = 0;
  std::vector<SampleRange> silent_regions;  // exact zeros in the clean signal
};

struct PairRecord {
  Waveform clean;
  Waveform interference;  // already scaled
  Waveform mixture;       // clean + interference, exactly
  double scale = 1.0;     // factor applied to the raw interference
  Provenance provenance;
};

/// Interference gain giving the requested SNR. For the scale-invariant
/// definition the result satisfies si_sdr(s + k n, s) = target_db.
double remix_scale(const std::vector<double>& clean, const std::vector<double>& interference, double target_db,
                   SnrDefinition def = SnrDefinition::ScaleInvariant);

/// Crops both signals to the shorter length and mixes at target_db. Samples are
/// snapped to a 2^-40 grid so mixture - interference == clean holds exactly.
/// target_db = +inf gives a zero gain. Throws InvalidArgument on silent inputs.
PairRecord remix_to_snr(const Waveform& clean, const Waveform& interference, double target_db,
                        SnrDefinition def = SnrDefinition::ScaleInvariant);

struct Track {
  std::string id;
  Waveform audio;
};

/// Random vocal and accompaniment segments from independently chosen tracks
/// and offsets, each pair remixed per spec. Output i draws from stream (seed, i).
std::vector<PairRecord> incoherent_mix(const std::vector<Track>& vocals, const std::vector<Track>& accompaniment,
                                       std::size_t n_out, const MixSpec& spec);

struct SynthConfig {
  double min_seconds = 1.0;
  double max_seconds = 2.0;
  double target_snr_db = 3.0;
  int sample_rate = kWorkingSampleRate;
  double min_silence_seconds = 0.25;
  double min_silence_fraction = 0.2;
  double peak = 0.9;  // mixture peak after normalisation
};

/// Harmonic-tone "vocals" with vibrato and an exactly silent gap, over
/// randomly filtered noise "accompaniment". Pair i uses stream (seed, i).
std::vector<PairRecord> synth_corpus(std::size_t n_pairs, std::uint64_t seed, const SynthConfig& cfg = {});
PairRecord synth_pair(std::uint64_t seed, std::size_t index, const SynthConfig& cfg = {});

/// Kaiser-windowed sinc resampling by the reduced rational ratio. Equal rates
/// return the input unchanged. Output length is ceil(n * target / source).
Waveform resample(const Waveform& w, int target_hz);

/// Writes clean/interference/mixture WAVs as <dir>/<stem>_{clean,interference,mixture}.wav
/// and appends one JSON line per pair to <dir>/manifest.jsonl.
void write_pairs(const std::vector<PairRecord>& pairs, const std::filesystem::path& dir,
                 const std::string& stem_prefix = "pair");

/// Pairs listed in <dir>/manifest.jsonl, resampled to the working rate.
std::vector<PairRecord> read_pairs(const std::filesystem::path& dir);

/// WAV files in a directory, sorted by name, resampled to the working rate.
std::vector<Track> load_tracks(const std::filesystem::path& dir);

}  // namespace exdiff
