#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <vector>

#include "exdiff/spectro.hpp"
#include "exdiff/waveform.hpp"

namespace exdiff {

/// Frame-wise conditioning features h_t and their time average.
struct LatentRepresentation {
  std::size_t n_frames = 0;
  std::size_t width = 0;  // H
  double frame_hop = 0.0;  // seconds per frame
  std::vector<float> frames;  // n_frames x width, row-major
  std::vector<float> pooled;  // width

  float at(std::size_t frame, std::size_t k) const { return frames[frame * width + k]; }
  /// Throws unless shapes agree, values are finite and pooled matches the
  /// frame mean within `tolerance`.
  void validate(double tolerance = 1e-6) const;
};

/// Frame-wise event probabilities in [0, 1], n_frames x n_classes.
struct EventPosterior {
  std::size_t n_frames = 0;
  std::size_t n_classes = 0;
  std::vector<float> probs;
};

/// Column means of a row-major (n_frames x width) matrix, accumulated in double.
std::vector<float> pool(const std::vector<float>& frames, std::size_t n_frames, std::size_t width);

/// Builds a representation from frames, filling in the pooled vector.
LatentRepresentation make_latent(std::vector<float> frames, std::size_t n_frames, std::size_t width,
                                 double frame_hop);

struct ToyExtractorConfig {
  std::size_t n_mels = 64;
  std::size_t window_length = 400;  // 25 ms at 16 kHz
  std::size_t hop_length = 160;     // 10 ms
  std::size_t fft_size = 512;
  std::size_t n_classes = 16;
};

/// Deterministic stand-in for a pretrained sound-event network: log-Mel frames
/// projected to H dimensions by a fixed seeded Gaussian matrix, squashed by tanh.
class ToyExtractor {
 public:
  ToyExtractor(std::size_t width, std::uint64_t seed, ToyExtractorConfig cfg = {});

  std::size_t width() const { return width_; }
  std::uint64_t seed() const { return seed_; }
  const ToyExtractorConfig& config() const { return cfg_; }

  /// Throws InvalidArgument when the input is shorter than one analysis window.
  LatentRepresentation extract(const Waveform& w) const;
  EventPosterior events(const LatentRepresentation& l) const;

 private:
  std::size_t width_;
  std::uint64_t seed_;
  ToyExtractorConfig cfg_;
  std::vector<double> projection_;  // width x n_mels
  std::vector<double> classifier_;  // n_classes x width
  std::vector<double> filterbank_;
};

LatentRepresentation extract_toy(const Waveform& w, std::size_t width, std::uint64_t seed,
                                 const ToyExtractorConfig& cfg = {});

/// Source of conditioning latents for a noisy waveform.
class LatentProvider {
 public:
  virtual ~LatentProvider() = default;
  virtual LatentRepresentation latent_for(const Waveform& noisy) const = 0;
  virtual std::size_t width() const = 0;
};

class ToyLatentProvider final : public LatentProvider {
 public:
  ToyLatentProvider(std::size_t width, std::uint64_t seed, ToyExtractorConfig cfg = {})
      : extractor_(width, seed, cfg) {}
  LatentRepresentation latent_for(const Waveform& noisy) const override { return extractor_.extract(noisy); }
  std::size_t width() const override { return extractor_.width(); }

 private:
  ToyExtractor extractor_;
};

/// Returns one externally computed latent for every request.
class FixedLatentProvider final : public LatentProvider {
 public:
  explicit FixedLatentProvider(LatentRepresentation l);
  LatentRepresentation latent_for(const Waveform&) const override { return latent_; }
  std::size_t width() const override { return latent_.width; }

 private:
  LatentRepresentation latent_;
};

inline constexpr char kLatentMagic[4] = {'E', 'X', 'L', 'T'};
inline constexpr std::uint32_t kLatentVersion = 1;

void write_latent(const LatentRepresentation& l, const std::filesystem::path& path);
/// Throws ParseError naming the missing or invalid section.
LatentRepresentation read_latent(const std::filesystem::path& path);

}  // namespace exdiff
