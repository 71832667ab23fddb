#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>

#include "exdiff/error.hpp"
#include "exdiff/framing.hpp"
#include "exdiff/rng.hpp"
#include "exdiff/spectro.hpp"

using namespace exdiff;

namespace {

Waveform noise(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> s(n);
  for (auto& v : s) v = rng.normal();
  return Waveform(std::move(s), kWorkingSampleRate);
}

}  // namespace

TEST_CASE("stft columns match a direct DFT of the windowed frame") {
  const StftParams p = StftParams::desk();
  const auto w = noise(600, 1);
  const auto s = stft(w, p);
  const auto win = make_window(p.window, p.window_length);
  for (std::size_t j : {0u, 3u, 7u}) {
    for (std::size_t k : {0u, 1u, 17u, 63u}) {
      Complex acc{};
      for (std::size_t n = 0; n < p.window_length; ++n) {
        const double ph = -2.0 * std::numbers::pi * static_cast<double>(k * n) / static_cast<double>(p.fft_size);
        acc += w.samples[j * p.hop_length + n] * win[n] * Complex(std::cos(ph), std::sin(ph));
      }
      CHECK(std::abs(s.bins.at(k, j) - acc) < 1e-10);
    }
  }
}

TEST_CASE("periodic Hann window values") {
  const auto w = make_window(WindowKind::PeriodicHann, 8);
  CHECK(w[0] == 0.0);
  CHECK(w[4] == doctest::Approx(1.0));
  CHECK(w[2] == doctest::Approx(0.5));
}

TEST_CASE("Parseval holds for a rectangular window with hop equal to the window") {
  const StftParams p{64, 64, 64, WindowKind::Rectangular};
  const auto w = noise(64 * 5, 2);
  const auto s = stft(w, p);
  double time = 0.0, freq = 0.0;
  for (double v : w.samples) time += v * v;
  for (std::size_t j = 0; j < s.bins.cols; ++j) {
    for (std::size_t k = 0; k < s.bins.rows; ++k) {
      const double weight = (k == 0 || k == 32) ? 1.0 : 2.0;  // one-sided spectrum
      freq += weight * std::norm(s.bins.at(k, j));
    }
  }
  CHECK(freq / 64.0 == doctest::Approx(time).epsilon(1e-12));
}

TEST_CASE("istft inverts stft away from the outer edges") {
  for (const StftParams p : {StftParams{}, StftParams::desk(), StftParams{400, 100, 512, WindowKind::Hamming}}) {
    const auto w = noise(p.samples_for_frames(20), 3);
    const auto back = istft(stft(w, p));
    REQUIRE(back.size() == w.size());
    double err = 0.0;
    for (std::size_t i = p.window_length; i + p.window_length < w.size(); ++i) {
      err = std::max(err, std::abs(back.samples[i] - w.samples[i]));
    }
    CHECK(err < 1e-10);
  }
}

TEST_CASE("frame_clip and unframe reproduce the whole clip") {
  const auto w = noise(5000, 4);
  const auto clip = frame_clip(w, StftParams::desk(), Compression{});
  CHECK(clip.spec.compression.applied);
  const auto back = unframe(clip.spec.bins, clip);
  REQUIRE(back.size() == w.size());
  for (std::size_t i = 0; i < w.size(); ++i) CHECK(std::abs(back.samples[i] - w.samples[i]) < 1e-9);
}

TEST_CASE("compression maps magnitudes to scale * |c|^exponent and back") {
  ComplexSpectrogram s;
  s.params = StftParams::desk();
  s.bins = ComplexGrid(1, 3);
  s.bins.data = {Complex(3.0, 4.0), Complex(0.0, 0.0), Complex(-0.01, 0.0)};
  const auto c = compress(s, 0.5, 0.15);
  CHECK(std::abs(c.bins.data[0]) == doctest::Approx(0.15 * std::sqrt(5.0)));
  CHECK(std::arg(c.bins.data[0]) == doctest::Approx(std::arg(s.bins.data[0])));
  CHECK(c.bins.data[1] == Complex(0.0, 0.0));
  CHECK_THROWS_AS(istft(c), InvalidArgument);
  const auto d = decompress(c);
  for (std::size_t i = 0; i < 3; ++i) CHECK(std::abs(d.bins.data[i] - s.bins.data[i]) < 1e-12);
}

TEST_CASE("invalid STFT parameters are rejected") {
  CHECK_THROWS_AS((StftParams{128, 256, 128, WindowKind::PeriodicHann}.validate()), InvalidArgument);
  CHECK_THROWS_AS((StftParams{256, 64, 128, WindowKind::PeriodicHann}.validate()), InvalidArgument);
  CHECK_THROWS_AS(stft(noise(50, 1), StftParams::desk()), InvalidArgument);
}

TEST_CASE("mel energies concentrate a pure tone in one band region") {
  std::vector<double> s(16000);
  for (std::size_t i = 0; i < s.size(); ++i) s[i] = std::sin(2.0 * std::numbers::pi * 1000.0 * i / 16000.0);
  const auto mel = mel_energies(stft(Waveform(s, 16000), StftParams{}), 40);
  std::size_t best = 0;
  double total = 0.0, best_e = 0.0;
  for (std::size_t m = 0; m < 40; ++m) {
    const double e = mel.at(m, 10);
    total += e;
    if (e > best_e) best_e = e, best = m;
  }
  // 1 kHz sits near mel 1000, a quarter of the way to 2840 mel at 8 kHz.
  CHECK(best >= 11);
  CHECK(best <= 15);
  CHECK(best_e > 0.3 * total);
}

TEST_CASE("mel_render writes a binary PGM of the expected size") {
  const auto path = std::filesystem::temp_directory_path() / "exdiff_mel_test.pgm";
  const auto s = stft(noise(4000, 5), StftParams::desk());
  mel_render(s, 32, path);
  std::ifstream in(path, std::ios::binary);
  std::string magic;
  std::size_t w = 0, h = 0, maxv = 0;
  in >> magic >> w >> h >> maxv;
  CHECK(magic == "P5");
  CHECK(w == s.n_frames());
  CHECK(h == 32);
  CHECK(maxv == 255);
  std::filesystem::remove(path);
}
