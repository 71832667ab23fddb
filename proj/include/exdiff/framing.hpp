#pragma once

#include <vector>

#include "exdiff/spectro.hpp"

namespace exdiff {

/// A clip prepared for the spectrogram-domain model: peak-normalised by the
/// noisy signal, zero-padded by one window on each side so every original
/// sample lies under full window overlap.
struct FramedClip {
  Waveform padded;           // normalised and padded time signal
  ComplexSpectrogram spec;   // compressed STFT of `padded`
  double norm = 1.0;         // divide-by factor applied to the input
  std::size_t pad = 0;       // zeros prepended (and at least this many appended)
  std::size_t length = 0;    // original sample count
};

/// `norm` <= 0 means "use the peak of w" (1 for an all-zero input).
FramedClip frame_clip(const Waveform& w, const StftParams& p, const Compression& c, double norm = 0.0);

/// Inverse of frame_clip on a (compressed) spectrogram with the clip's geometry.
Waveform unframe(const ComplexGrid& compressed_bins, const FramedClip& clip);

/// First frames of fixed-width chunks at 50% overlap covering n_frames; the
/// last chunk is aligned to the end. A clip shorter than one chunk gives {0}.
std::vector<std::size_t> chunk_starts(std::size_t n_frames, std::size_t chunk_frames);

/// Samples of `padded` under frames [first, first + frames), zero beyond the end.
Waveform chunk_waveform(const FramedClip& clip, std::size_t first_frame, std::size_t frames);

/// Raised-cosine crossfade weight of column j in a chunk of width n (never zero).
double crossfade_weight(std::size_t j, std::size_t n);

}  // namespace exdiff
