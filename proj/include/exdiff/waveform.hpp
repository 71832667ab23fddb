#pragma once

#include <filesystem>
#include <vector>

namespace exdiff {

inline constexpr int kWorkingSampleRate = 16000;

/// Mono time-domain signal.
struct Waveform {
  std::vector<double> samples;
  int sample_rate = kWorkingSampleRate;

  Waveform() = default;
  Waveform(std::vector<double> s, int rate) : samples(std::move(s)), sample_rate(rate) {}

  std::size_t size() const { return samples.size(); }
  double duration_seconds() const {
    return static_cast<double>(samples.size()) / static_cast<double>(sample_rate);
  }

  /// Throws InvalidArgument unless non-empty, finite and sample_rate > 0.
  void validate() const;
};

double energy(const Waveform& w);
double peak(const Waveform& w);

/// Reads a mono or multi-channel RIFF/WAVE file (16-bit PCM or 32-bit float).
/// Multi-channel input is averaged down to mono.
Waveform read_wav(const std::filesystem::path& path);

/// Writes mono 32-bit IEEE float PCM.
void write_wav(const std::filesystem::path& path, const Waveform& w);

}  // namespace exdiff
