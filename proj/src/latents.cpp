#include "exdiff/latents.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>

#include "exdiff/error.hpp"
#include "exdiff/rng.hpp"

namespace exdiff {

static_assert(std::endian::native == std::endian::little, "latent I/O assumes a little-endian host");

namespace {

constexpr std::uint64_t kProjectionStream = 0x50524f4a;
constexpr std::uint64_t kClassifierStream = 0x434c4153;

double pooled_mismatch(const LatentRepresentation& l) {
  const auto mean = pool(l.frames, l.n_frames, l.width);
  double worst = 0.0;
  for (std::size_t k = 0; k < l.width; ++k) {
    worst = std::max(worst, std::abs(static_cast<double>(mean[k]) - static_cast<double>(l.pooled[k])));
  }
  return worst;
}

}  // namespace

void LatentRepresentation::validate(double tolerance) const {
  if (width == 0 || n_frames == 0) throw InvalidArgument("latent: width and frame count must be positive");
  if (frames.size() != n_frames * width) throw ShapeError("latent: frame matrix size mismatch");
  if (pooled.size() != width) throw ShapeError("latent: pooled vector size mismatch");
  for (float v : frames) {
    if (!std::isfinite(v)) throw NumericError("latent: non-finite frame value");
  }
  for (float v : pooled) {
    if (!std::isfinite(v)) throw NumericError("latent: non-finite pooled value");
  }
  if (pooled_mismatch(*this) > tolerance) throw InvalidArgument("latent: pooled vector is not the frame mean");
}

std::vector<float> pool(const std::vector<float>& frames, std::size_t n_frames, std::size_t width) {
  if (n_frames == 0 || width == 0) throw InvalidArgument("pool: empty frame matrix");
  if (frames.size() != n_frames * width) throw ShapeError("pool: frame matrix size mismatch");
  std::vector<double> acc(width, 0.0);
  for (std::size_t t = 0; t < n_frames; ++t) {
    for (std::size_t k = 0; k < width; ++k) acc[k] += frames[t * width + k];
  }
  std::vector<float> out(width);
  for (std::size_t k = 0; k < width; ++k) out[k] = static_cast<float>(acc[k] / static_cast<double>(n_frames));
  return out;
}

LatentRepresentation make_latent(std::vector<float> frames, std::size_t n_frames, std::size_t width,
                                 double frame_hop) {
  LatentRepresentation l;
  l.pooled = pool(frames, n_frames, width);
  l.frames = std::move(frames);
  l.n_frames = n_frames;
  l.width = width;
  l.frame_hop = frame_hop;
  return l;
}

ToyExtractor::ToyExtractor(std::size_t width, std::uint64_t seed, ToyExtractorConfig cfg)
    : width_(width), seed_(seed), cfg_(cfg) {
  if (width == 0) throw InvalidArgument("toy extractor: H must be positive");
  if (cfg.n_mels == 0 || cfg.n_classes == 0) throw InvalidArgument("toy extractor: empty band or class count");
  StftParams{cfg.window_length, cfg.hop_length, cfg.fft_size, WindowKind::PeriodicHann}.validate();

  Rng proj_rng(seed, kProjectionStream);
  projection_.resize(width * cfg.n_mels);
  const double proj_std = 1.0 / std::sqrt(static_cast<double>(cfg.n_mels));
  for (auto& v : projection_) v = proj_std * proj_rng.normal();

  Rng cls_rng(seed, kClassifierStream);
  classifier_.resize(cfg.n_classes * width);
  const double cls_std = 1.0 / std::sqrt(static_cast<double>(width));
  for (auto& v : classifier_) v = cls_std * cls_rng.normal();
}

LatentRepresentation ToyExtractor::extract(const Waveform& w) const {
  w.validate();
  if (w.size() < cfg_.window_length) throw InvalidArgument("toy extractor: input shorter than one frame");
  const StftParams p{cfg_.window_length, cfg_.hop_length, cfg_.fft_size, WindowKind::PeriodicHann};
  const auto mel = mel_energies(stft(w, p), cfg_.n_mels);

  const std::size_t frames = mel.n_frames;
  std::vector<float> out(frames * width_);
  std::vector<double> u(cfg_.n_mels);
  for (std::size_t t = 0; t < frames; ++t) {
    for (std::size_t m = 0; m < cfg_.n_mels; ++m) u[m] = (std::log(mel.at(m, t) + 1e-6) + 7.0) / 4.0;
    for (std::size_t k = 0; k < width_; ++k) {
      const double* row = projection_.data() + k * cfg_.n_mels;
      double acc = 0.0;
      for (std::size_t m = 0; m < cfg_.n_mels; ++m) acc += row[m] * u[m];
      out[t * width_ + k] = static_cast<float>(std::tanh(acc));
    }
  }
  return make_latent(std::move(out), frames, width_,
                     static_cast<double>(cfg_.hop_length) / static_cast<double>(w.sample_rate));
}

EventPosterior ToyExtractor::events(const LatentRepresentation& l) const {
  if (l.width != width_) throw ShapeError("toy extractor: latent width mismatch");
  EventPosterior e;
  e.n_frames = l.n_frames;
  e.n_classes = cfg_.n_classes;
  e.probs.resize(e.n_frames * e.n_classes);
  for (std::size_t t = 0; t < l.n_frames; ++t) {
    for (std::size_t c = 0; c < cfg_.n_classes; ++c) {
      double acc = 0.0;
      for (std::size_t k = 0; k < width_; ++k) acc += classifier_[c * width_ + k] * l.at(t, k);
      e.probs[t * e.n_classes + c] = static_cast<float>(1.0 / (1.0 + std::exp(-acc)));
    }
  }
  return e;
}

LatentRepresentation extract_toy(const Waveform& w, std::size_t width, std::uint64_t seed,
                                 const ToyExtractorConfig& cfg) {
  return ToyExtractor(width, seed, cfg).extract(w);
}

FixedLatentProvider::FixedLatentProvider(LatentRepresentation l) : latent_(std::move(l)) { latent_.validate(); }

void write_latent(const LatentRepresentation& l, const std::filesystem::path& path) {
  l.validate();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write latent file: " + path.string());
  const auto u32 = [&](std::uint32_t v) { out.write(reinterpret_cast<const char*>(&v), 4); };
  out.write(kLatentMagic, 4);
  u32(kLatentVersion);
  u32(static_cast<std::uint32_t>(l.width));
  u32(static_cast<std::uint32_t>(l.n_frames));
  const float hop = static_cast<float>(l.frame_hop);
  out.write(reinterpret_cast<const char*>(&hop), 4);
  out.write(reinterpret_cast<const char*>(l.frames.data()), static_cast<std::streamsize>(l.frames.size() * 4));
  out.write(reinterpret_cast<const char*>(l.pooled.data()), static_cast<std::streamsize>(l.pooled.size() * 4));
  if (!out) throw Error("failed writing latent file: " + path.string());
}

LatentRepresentation read_latent(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open latent file: " + path.string());
  const std::vector<char> buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  std::size_t pos = 0;
  const auto take = [&](void* dst, std::size_t n, const char* section) {
    if (pos + n > buf.size()) throw ParseError(std::string("latent file truncated in ") + section);
    std::memcpy(dst, buf.data() + pos, n);
    pos += n;
  };
  char magic[4];
  take(magic, 4, "magic");
  if (std::memcmp(magic, kLatentMagic, 4) != 0) throw ParseError("latent file: bad magic");
  std::uint32_t version = 0, width = 0, frames = 0;
  take(&version, 4, "version");
  if (version != kLatentVersion) throw ParseError("latent file: unsupported version " + std::to_string(version));
  take(&width, 4, "header (H)");
  take(&frames, 4, "header (frame count)");
  if (width == 0 || frames == 0) throw ParseError("latent file: empty frame matrix in header");
  float hop = 0.0f;
  take(&hop, 4, "header (frame hop)");

  LatentRepresentation l;
  l.width = width;
  l.n_frames = frames;
  l.frame_hop = hop;
  l.frames.resize(static_cast<std::size_t>(width) * frames);
  l.pooled.resize(width);
  take(l.frames.data(), l.frames.size() * 4, "frame matrix");
  take(l.pooled.data(), l.pooled.size() * 4, "pooled vector");
  if (pos != buf.size()) throw ParseError("latent file: trailing bytes after pooled vector");
  try {
    l.validate(1e-4);
  } catch (const Error& e) {
    throw ParseError(std::string("latent file corrupt: ") + e.what());
  }
  return l;
}

}  // namespace exdiff
