#include "exdiff/framing.hpp"

#include <cmath>
#include <numbers>

#include "exdiff/error.hpp"

namespace exdiff {

FramedClip frame_clip(const Waveform& w, const StftParams& p, const Compression& c, double norm) {
  w.validate();
  p.validate();
  FramedClip clip;
  clip.length = w.size();
  clip.pad = p.window_length;
  if (norm <= 0.0) {
    norm = peak(w);
    if (norm == 0.0) norm = 1.0;
  }
  clip.norm = norm;
  // Total length rounded up so the last frame ends exactly at the signal end.
  std::size_t total = w.size() + 2 * clip.pad;
  const std::size_t frames = 1 + (total - p.window_length + p.hop_length - 1) / p.hop_length;
  total = p.samples_for_frames(frames);
  std::vector<double> padded(total, 0.0);
  for (std::size_t i = 0; i < w.size(); ++i) padded[clip.pad + i] = w.samples[i] / norm;
  clip.padded = Waveform(std::move(padded), w.sample_rate);
  clip.spec = compress(stft(clip.padded, p), c.exponent, c.scale);
  return clip;
}

Waveform unframe(const ComplexGrid& bins, const FramedClip& clip) {
  require_same_shape(bins, clip.spec.bins, "unframe");
  ComplexSpectrogram s = clip.spec;
  s.bins = bins;
  const Waveform full = istft(decompress(s));
  std::vector<double> out(clip.length);
  for (std::size_t i = 0; i < clip.length; ++i) out[i] = full.samples[clip.pad + i] * clip.norm;
  return Waveform(std::move(out), clip.padded.sample_rate);
}

std::vector<std::size_t> chunk_starts(std::size_t n_frames, std::size_t chunk) {
  if (chunk == 0) throw InvalidArgument("chunk_starts: chunk width must be positive");
  if (n_frames <= chunk) return {0};
  const std::size_t hop = std::max<std::size_t>(1, chunk / 2);
  std::vector<std::size_t> starts;
  for (std::size_t s = 0; s + chunk < n_frames; s += hop) starts.push_back(s);
  starts.push_back(n_frames - chunk);
  return starts;
}

Waveform chunk_waveform(const FramedClip& clip, std::size_t first, std::size_t frames) {
  const auto& p = clip.spec.params;
  const std::size_t begin = first * p.hop_length;
  const std::size_t len = p.samples_for_frames(frames);
  std::vector<double> seg(len, 0.0);
  for (std::size_t i = 0; i < len && begin + i < clip.padded.size(); ++i) seg[i] = clip.padded.samples[begin + i];
  return Waveform(std::move(seg), clip.padded.sample_rate);
}

double crossfade_weight(std::size_t j, std::size_t n) {
  return 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * (static_cast<double>(j) + 0.5) / static_cast<double>(n));
}

}  // namespace exdiff
