#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <limits>
#include <numbers>

#include "exdiff/datapipe.hpp"
#include "exdiff/error.hpp"
#include "exdiff/metrics.hpp"
#include "exdiff/rng.hpp"

using namespace exdiff;

namespace {

Waveform randn(std::size_t n, std::uint64_t seed, double scale = 1.0) {
  Rng rng(seed);
  std::vector<double> v(n);
  for (auto& x : v) x = scale * rng.normal();
  return Waveform(std::move(v), kWorkingSampleRate);
}

Waveform sine(double hz, int rate, double seconds) {
  const auto n = static_cast<std::size_t>(seconds * rate);
  std::vector<double> v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = 0.8 * std::sin(2.0 * std::numbers::pi * hz * i / rate);
  return Waveform(std::move(v), rate);
}

// Residual power after a least-squares fit of a sine and cosine at `hz`,
// relative to the fitted tone power, over [begin, end).
double thd_n_db(const Waveform& w, double hz, std::size_t begin, std::size_t end) {
  double ss = 0, cc = 0, sc = 0, xs = 0, xc = 0;
  for (std::size_t i = begin; i < end; ++i) {
    const double ph = 2.0 * std::numbers::pi * hz * i / w.sample_rate;
    const double s = std::sin(ph), c = std::cos(ph);
    ss += s * s, cc += c * c, sc += s * c, xs += w.samples[i] * s, xc += w.samples[i] * c;
  }
  const double det = ss * cc - sc * sc;
  const double a = (xs * cc - xc * sc) / det, b = (xc * ss - xs * sc) / det;
  double tone = 0, resid = 0;
  for (std::size_t i = begin; i < end; ++i) {
    const double ph = 2.0 * std::numbers::pi * hz * i / w.sample_rate;
    const double fit = a * std::sin(ph) + b * std::cos(ph);
    tone += fit * fit;
    resid += (w.samples[i] - fit) * (w.samples[i] - fit);
  }
  return 10.0 * std::log10(resid / tone);
}

}  // namespace

TEST_CASE("remix_to_snr hits the scale-invariant target and mixes exactly") {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    const double target = -5.0 + 2.0 * static_cast<double>(seed);
    const auto clean = randn(4000, seed, 0.3);
    auto inter = randn(4200, seed + 100, 2.0);
    // Correlated interference exercises the projection.
    for (std::size_t i = 0; i < 4000; ++i) inter.samples[i] += 0.4 * clean.samples[i];
    const auto p = remix_to_snr(clean, inter, target);
    REQUIRE(p.mixture.size() == 4000);
    CHECK(std::abs(si_sdr(p.mixture, p.clean) - target) <= 0.05);
    for (std::size_t i = 0; i < 4000; ++i) CHECK(p.mixture.samples[i] - p.interference.samples[i] == p.clean.samples[i]);
  }
}

TEST_CASE("remix_to_snr limits and errors") {
  const auto clean = randn(1000, 1), inter = randn(1000, 2);
  const auto inf = remix_to_snr(clean, inter, std::numeric_limits<double>::infinity());
  CHECK(inf.scale == 0.0);
  CHECK(inf.mixture.samples == inf.clean.samples);
  // Orthogonal unit-energy signals at 0 dB need no gain.
  const std::vector<double> a{1.0, 0.0, 0.0, 0.0}, b{0.0, 1.0, 0.0, 0.0};
  CHECK(remix_scale(a, b, 0.0) == doctest::Approx(1.0));
  CHECK(remix_scale(a, b, 0.0, SnrDefinition::Energy) == doctest::Approx(1.0));
  CHECK(remix_scale(a, b, 20.0, SnrDefinition::Energy) == doctest::Approx(0.1));
  CHECK_THROWS_AS(remix_to_snr(Waveform(std::vector<double>(100, 0.0), 16000), inter, 3.0), InvalidArgument);
  CHECK_THROWS_AS(remix_to_snr(clean, Waveform(std::vector<double>(100, 0.0), 16000), 3.0), InvalidArgument);
}

TEST_CASE("energy SNR definition") {
  const auto clean = randn(3000, 3), inter = randn(3000, 4);
  const auto p = remix_to_snr(clean, inter, 6.0, SnrDefinition::Energy);
  CHECK(10.0 * std::log10(energy(p.clean) / energy(p.interference)) == doctest::Approx(6.0).epsilon(1e-6));
  CHECK(snr_definition_from_string(to_string(SnrDefinition::Energy)) == SnrDefinition::Energy);
}

TEST_CASE("incoherent mixing is deterministic and uses independent offsets") {
  std::vector<Track> vocals{{"v0", randn(16000 * 3, 1, 0.2)}};
  std::vector<Track> accomp{{"a0", randn(16000 * 3, 2, 0.5)}};
  MixSpec spec;
  spec.segment_seconds = 0.5;
  spec.seed = 9;
  const auto a = incoherent_mix(vocals, accomp, 6, spec), b = incoherent_mix(vocals, accomp, 6, spec);
  REQUIRE(a.size() == 6);
  std::size_t aligned = 0;
  for (std::size_t i = 0; i < 6; ++i) {
    CHECK(a[i].mixture.samples == b[i].mixture.samples);
    CHECK(a[i].provenance.incoherent);
    CHECK(a[i].mixture.size() == 8000);
    CHECK(std::abs(si_sdr(a[i].mixture, a[i].clean) - 3.0) <= 0.05);
    aligned += a[i].provenance.clean_offset == a[i].provenance.interference_offset;
  }
  CHECK(aligned == 0);
  CHECK(incoherent_mix(vocals, accomp, 0, spec).empty());
  CHECK_THROWS_AS(incoherent_mix({}, accomp, 2, spec), InvalidArgument);
  spec.segment_seconds = 10.0;
  CHECK_THROWS_AS(incoherent_mix(vocals, accomp, 2, spec), InvalidArgument);
}

TEST_CASE("synthetic corpus contract") {
  const SynthConfig cfg;
  const auto a = synth_corpus(12, 5, cfg), b = synth_corpus(12, 5, cfg);
  REQUIRE(a.size() == 12);
  for (std::size_t i = 0; i < a.size(); ++i) {
    CAPTURE(i);
    const auto& p = a[i];
    CHECK(p.mixture.samples == b[i].mixture.samples);
    CHECK(p.mixture.duration_seconds() >= cfg.min_seconds - 1e-9);
    CHECK(p.mixture.duration_seconds() <= cfg.max_seconds + 1e-9);
    CHECK(std::abs(si_sdr(p.mixture, p.clean) - cfg.target_snr_db) <= 0.05);
    CHECK(peak(p.mixture) == doctest::Approx(cfg.peak).epsilon(1e-6));
    REQUIRE_FALSE(p.provenance.silent_regions.empty());
    std::size_t longest = 0, silent = 0;
    for (const auto& [begin, end] : p.provenance.silent_regions) {
      for (std::size_t k = begin; k < end; ++k) REQUIRE(p.clean.samples[k] == 0.0);
      longest = std::max(longest, end - begin);
      silent += end - begin;
    }
    CHECK(longest >= static_cast<std::size_t>(0.25 * 16000));
    CHECK(static_cast<double>(silent) >= 0.2 * static_cast<double>(p.clean.size()));
    for (std::size_t k = 0; k < p.clean.size(); ++k) REQUIRE(p.mixture.samples[k] - p.interference.samples[k] == p.clean.samples[k]);
  }
  CHECK(synth_pair(5, 3, cfg).mixture.samples == a[3].mixture.samples);
}

TEST_CASE("resampling: identity, length and spectral purity") {
  const auto w = randn(1234, 1);
  CHECK(resample(w, 16000).samples == w.samples);
  const auto tone = sine(1000.0, 48000, 1.0);
  const auto down = resample(tone, 16000);
  CHECK(down.sample_rate == 16000);
  CHECK(std::abs(static_cast<double>(down.size()) - tone.size() / 3.0) <= 1.0);
  CHECK(thd_n_db(down, 1000.0, 800, down.size() - 800) < -60.0);
  const auto up = resample(sine(440.0, 22050, 0.5), 16000);
  CHECK(std::abs(static_cast<double>(up.size()) - 0.5 * 16000) <= 1.0);
  CHECK(thd_n_db(up, 440.0, 800, up.size() - 800) < -60.0);
}

TEST_CASE("pairs survive a write/read round trip through the manifest") {
  const auto dir = std::filesystem::temp_directory_path() / "exdiff_pairs_test";
  std::filesystem::remove_all(dir);
  const auto pairs = synth_corpus(2, 3);
  write_pairs(pairs, dir, "p");
  write_pairs(pairs, dir, "p");  // rewriting replaces the manifest
  const auto back = read_pairs(dir);
  REQUIRE(back.size() == 2);
  for (std::size_t i = 0; i < 2; ++i) {
    REQUIRE(back[i].mixture.size() == pairs[i].mixture.size());
    for (std::size_t k = 0; k < pairs[i].mixture.size(); k += 97) {
      CHECK(back[i].mixture.samples[k] == doctest::Approx(pairs[i].mixture.samples[k]).epsilon(1e-6));
    }
    CHECK(back[i].provenance.silent_regions == pairs[i].provenance.silent_regions);
  }
  std::filesystem::remove_all(dir);
}
