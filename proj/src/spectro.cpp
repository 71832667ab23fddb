#include "exdiff/spectro.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <string>

#include <unsupported/Eigen/FFT>

#include "exdiff/error.hpp"

namespace exdiff {

const char* to_string(WindowKind k) {
  switch (k) {
    case WindowKind::PeriodicHann: return "periodic_hann";
    case WindowKind::Hamming: return "hamming";
    case WindowKind::Rectangular: return "rectangular";
  }
  return "?";
}

WindowKind window_kind_from_string(const std::string& s) {
  if (s == "periodic_hann" || s == "hann") return WindowKind::PeriodicHann;
  if (s == "hamming") return WindowKind::Hamming;
  if (s == "rectangular") return WindowKind::Rectangular;
  throw InvalidArgument("unknown window kind: " + s);
}

std::vector<double> make_window(WindowKind kind, std::size_t length) {
  std::vector<double> w(length, 1.0);
  const double n = static_cast<double>(length);
  for (std::size_t i = 0; i < length; ++i) {
    const double phase = 2.0 * std::numbers::pi * static_cast<double>(i) / n;
    switch (kind) {
      case WindowKind::PeriodicHann: w[i] = 0.5 - 0.5 * std::cos(phase); break;
      case WindowKind::Hamming: w[i] = 0.54 - 0.46 * std::cos(phase); break;
      case WindowKind::Rectangular: break;
    }
  }
  return w;
}

void StftParams::validate() const {
  if (hop_length == 0 || window_length == 0) throw InvalidArgument("stft: zero window or hop");
  if (hop_length > window_length) throw InvalidArgument("stft: hop_length exceeds window_length");
  if (window_length > fft_size) throw InvalidArgument("stft: window_length exceeds fft_size");
  // Steady-state squared-window overlap must be strictly positive everywhere.
  const auto w = make_window(window, window_length);
  for (std::size_t phase = 0; phase < hop_length; ++phase) {
    double acc = 0.0;
    for (std::size_t n = phase; n < window_length; n += hop_length) acc += w[n] * w[n];
    if (acc <= 1e-12) throw InvalidArgument("stft: window/hop pair leaves uncovered samples");
  }
}

ComplexSpectrogram stft(const Waveform& w, const StftParams& p) {
  p.validate();
  w.validate();
  if (w.size() < p.window_length) throw InvalidArgument("stft: waveform shorter than one window");

  const std::size_t frames = 1 + (w.size() - p.window_length) / p.hop_length;
  const std::size_t bins = p.n_freq();
  const auto window = make_window(p.window, p.window_length);

  ComplexSpectrogram out;
  out.params = p;
  out.sample_rate = w.sample_rate;
  out.bins = ComplexGrid(bins, frames);

  Eigen::FFT<double> fft;
  std::vector<Complex> frame(p.fft_size), spectrum(p.fft_size);
  for (std::size_t j = 0; j < frames; ++j) {
    std::fill(frame.begin(), frame.end(), Complex{});
    const std::size_t offset = j * p.hop_length;
    for (std::size_t n = 0; n < p.window_length; ++n) frame[n] = w.samples[offset + n] * window[n];
    fft.fwd(spectrum, frame);
    for (std::size_t k = 0; k < bins; ++k) out.bins.at(k, j) = spectrum[k];
  }
  return out;
}

Waveform istft(const ComplexSpectrogram& s) {
  if (s.compression.applied) throw InvalidArgument("istft: spectrogram is compressed; decompress first");
  const StftParams& p = s.params;
  p.validate();
  if (s.bins.rows != p.n_freq()) throw InvalidArgument("istft: bin count inconsistent with fft_size");
  if (s.sample_rate <= 0) throw InvalidArgument("istft: invalid sample rate");

  const std::size_t frames = s.n_frames();
  const std::size_t length = p.samples_for_frames(frames);
  const auto window = make_window(p.window, p.window_length);
  std::vector<double> out(length, 0.0), norm(length, 0.0);

  Eigen::FFT<double> fft;
  std::vector<Complex> spectrum(p.fft_size), frame(p.fft_size);
  const std::size_t n = p.fft_size;
  for (std::size_t j = 0; j < frames; ++j) {
    for (std::size_t k = 0; k < p.n_freq(); ++k) spectrum[k] = s.bins.at(k, j);
    for (std::size_t k = p.n_freq(); k < n; ++k) spectrum[k] = std::conj(spectrum[n - k]);
    // Imaginary parts of DC/Nyquist cannot come from a real signal.
    spectrum[0] = Complex(spectrum[0].real(), 0.0);
    if (n % 2 == 0) spectrum[n / 2] = Complex(spectrum[n / 2].real(), 0.0);
    fft.inv(frame, spectrum);
    const std::size_t offset = j * p.hop_length;
    for (std::size_t i = 0; i < p.window_length; ++i) {
      out[offset + i] += frame[i].real() * window[i];
      norm[offset + i] += window[i] * window[i];
    }
  }
  const double peak_norm = length ? *std::max_element(norm.begin(), norm.end()) : 0.0;
  for (std::size_t i = 0; i < length; ++i) {
    out[i] = norm[i] > 1e-10 * peak_norm ? out[i] / norm[i] : 0.0;
  }
  return Waveform(std::move(out), s.sample_rate);
}

ComplexSpectrogram compress(const ComplexSpectrogram& s, double exponent, double scale) {
  if (s.compression.applied) throw InvalidArgument("compress: spectrogram already compressed");
  if (!(exponent > 0.0) || exponent > 1.0) throw InvalidArgument("compress: exponent must lie in (0, 1]");
  if (!(scale > 0.0)) throw InvalidArgument("compress: scale must be positive");
  ComplexSpectrogram out = s;
  for (auto& c : out.bins.data) {
    const double mag = std::abs(c);
    if (mag > 0.0) c *= scale * std::pow(mag, exponent) / mag;
  }
  out.compression = Compression{exponent, scale, true};
  return out;
}

ComplexSpectrogram decompress(const ComplexSpectrogram& s) {
  if (!s.compression.applied) throw InvalidArgument("decompress: spectrogram is not compressed");
  const double a = s.compression.exponent;
  const double beta = s.compression.scale;
  ComplexSpectrogram out = s;
  for (auto& c : out.bins.data) {
    const double mag = std::abs(c);
    if (mag > 0.0) c *= std::pow(mag / beta, 1.0 / a) / mag;
  }
  out.compression.applied = false;
  return out;
}

namespace {

double hz_to_mel(double f) { return 2595.0 * std::log10(1.0 + f / 700.0); }
double mel_to_hz(double m) { return 700.0 * (std::pow(10.0, m / 2595.0) - 1.0); }

}  // namespace

std::vector<double> mel_filterbank(std::size_t n_mels, std::size_t fft_size, int sample_rate,
                                   double fmin, double fmax) {
  if (n_mels == 0 || fft_size == 0 || sample_rate <= 0) {
    throw InvalidArgument("mel_filterbank: invalid configuration");
  }
  if (fmax <= 0.0) fmax = sample_rate / 2.0;
  const std::size_t bins = fft_size / 2 + 1;
  const double lo = hz_to_mel(fmin), hi = hz_to_mel(fmax);
  std::vector<double> edges(n_mels + 2);
  for (std::size_t i = 0; i < edges.size(); ++i) {
    edges[i] = mel_to_hz(lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(n_mels + 1));
  }
  const double bin_hz = static_cast<double>(sample_rate) / static_cast<double>(fft_size);
  std::vector<double> fb(n_mels * bins, 0.0);
  for (std::size_t m = 0; m < n_mels; ++m) {
    const double left = edges[m], centre = edges[m + 1], right = edges[m + 2];
    bool any = false;
    for (std::size_t k = 0; k < bins; ++k) {
      const double f = static_cast<double>(k) * bin_hz;
      const double up = (f - left) / (centre - left);
      const double down = (right - f) / (right - centre);
      const double v = std::max(0.0, std::min(up, down));
      fb[m * bins + k] = v;
      any = any || v > 0.0;
    }
    // Bands narrower than a bin borrow the nearest bin so no row is empty.
    if (!any) {
      const auto k = std::min<std::size_t>(bins - 1, static_cast<std::size_t>(std::lround(centre / bin_hz)));
      fb[m * bins + k] = 1.0;
    }
  }
  return fb;
}

MelEnergies mel_energies(const ComplexSpectrogram& s, std::size_t n_mels) {
  const ComplexSpectrogram lin = s.compression.applied ? decompress(s) : s;
  const std::size_t bins = lin.n_freq();
  const auto fb = mel_filterbank(n_mels, lin.params.fft_size, lin.sample_rate);
  MelEnergies out;
  out.n_mels = n_mels;
  out.n_frames = lin.n_frames();
  out.power.assign(n_mels * out.n_frames, 0.0);
  for (std::size_t m = 0; m < n_mels; ++m) {
    for (std::size_t j = 0; j < out.n_frames; ++j) {
      double acc = 0.0;
      for (std::size_t k = 0; k < bins; ++k) acc += fb[m * bins + k] * std::norm(lin.bins.at(k, j));
      out.power[m * out.n_frames + j] = acc;
    }
  }
  return out;
}

GrayImage mel_image(const ComplexSpectrogram& s, std::size_t n_mels) {
  if (n_mels < 8) throw InvalidArgument("mel_render: n_mels must be at least 8");
  const MelEnergies mel = mel_energies(s, n_mels);
  std::vector<double> db(mel.power.size());
  double top = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < db.size(); ++i) {
    db[i] = 10.0 * std::log10(std::max(mel.power[i], 1e-30));
    top = std::max(top, db[i]);
  }
  const double floor_db = top - 80.0;
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (auto& v : db) {
    v = std::max(v, floor_db);
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  GrayImage img;
  img.width = mel.n_frames;
  img.height = n_mels;
  img.pixels.assign(img.width * img.height, 0);
  const double span = hi - lo;
  for (std::size_t m = 0; m < n_mels; ++m) {
    const std::size_t row = n_mels - 1 - m;
    for (std::size_t j = 0; j < mel.n_frames; ++j) {
      const double v = span > 0.0 ? (db[m * mel.n_frames + j] - lo) / span : 0.0;
      img.pixels[row * img.width + j] = static_cast<unsigned char>(std::lround(255.0 * v));
    }
  }
  return img;
}

void write_pgm(const GrayImage& img, const std::filesystem::path& out) {
  std::ofstream f(out, std::ios::binary);
  if (!f) throw Error("cannot write image: " + out.string());
  f << "P5\n" << img.width << " " << img.height << "\n255\n";
  f.write(reinterpret_cast<const char*>(img.pixels.data()),
          static_cast<std::streamsize>(img.pixels.size()));
  if (!f) throw Error("failed writing image: " + out.string());
}

void mel_render(const ComplexSpectrogram& s, std::size_t n_mels, const std::filesystem::path& out) {
  write_pgm(mel_image(s, n_mels), out);
}

}  // namespace exdiff
