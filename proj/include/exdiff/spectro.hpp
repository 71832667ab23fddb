#pragma once

#include <filesystem>
#include <vector>

#include "exdiff/grid.hpp"
#include "exdiff/waveform.hpp"

namespace exdiff {

enum class WindowKind { PeriodicHann, Hamming, Rectangular };

const char* to_string(WindowKind k);
WindowKind window_kind_from_string(const std::string& s);

struct StftParams {
  std::size_t window_length = 510;
  std::size_t hop_length = 128;
  std::size_t fft_size = 510;
  WindowKind window = WindowKind::PeriodicHann;

  std::size_t n_freq() const { return fft_size / 2 + 1; }

  /// Checks 0 < hop <= window <= fft and that the squared-window overlap never
  /// vanishes in steady state (so weighted overlap-add inverts the analysis).
  void validate() const;

  /// Samples spanned by `frames` analysis frames.
  std::size_t samples_for_frames(std::size_t frames) const {
    return frames == 0 ? 0 : window_length + (frames - 1) * hop_length;
  }

  /// 64 frequency bins at 16 kHz with a COLA hop (N/3); used by the toy pipeline.
  static StftParams desk() { return StftParams{126, 42, 126, WindowKind::PeriodicHann}; }

  bool operator==(const StftParams&) const = default;
};

/// Amplitude compression c -> scale * |c|^exponent * e^{i arg c}.
struct Compression {
  double exponent = 0.5;
  double scale = 0.15;
  bool applied = false;
};

struct ComplexSpectrogram {
  ComplexGrid bins;  // n_freq x n_frames
  StftParams params;
  Compression compression;
  int sample_rate = kWorkingSampleRate;

  std::size_t n_freq() const { return bins.rows; }
  std::size_t n_frames() const { return bins.cols; }
};

std::vector<double> make_window(WindowKind kind, std::size_t length);

ComplexSpectrogram stft(const Waveform& w, const StftParams& p);

/// Weighted overlap-add synthesis normalised by the summed squared window.
/// Samples where that sum vanishes (the outermost edge of a periodic Hann) are zero.
Waveform istft(const ComplexSpectrogram& s);

ComplexSpectrogram compress(const ComplexSpectrogram& s, double exponent, double scale);
ComplexSpectrogram decompress(const ComplexSpectrogram& s);

/// Mel-band power per frame, row-major (n_mels x n_frames). Compressed input is
/// decompressed first.
struct MelEnergies {
  std::size_t n_mels = 0;
  std::size_t n_frames = 0;
  std::vector<double> power;

  double at(std::size_t mel, std::size_t frame) const { return power[mel * n_frames + frame]; }
};

/// Triangular HTK-scale filterbank, (n_mels x n_freq) row-major.
std::vector<double> mel_filterbank(std::size_t n_mels, std::size_t fft_size, int sample_rate,
                                   double fmin = 0.0, double fmax = -1.0);

MelEnergies mel_energies(const ComplexSpectrogram& s, std::size_t n_mels);

struct GrayImage {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<unsigned char> pixels;  // row-major, row 0 at the top
};

/// Log-magnitude Mel image: 10 log10 power, floored 80 dB below the image max,
/// min/max normalised to [0, 255]. Low frequencies at the bottom, time left to right.
GrayImage mel_image(const ComplexSpectrogram& s, std::size_t n_mels);

/// Renders mel_image as binary PGM (P5).
void mel_render(const ComplexSpectrogram& s, std::size_t n_mels, const std::filesystem::path& out);

void write_pgm(const GrayImage& img, const std::filesystem::path& out);

}  // namespace exdiff
