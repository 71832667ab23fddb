#include "exdiff/datapipe.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>
#include <numeric>

#include <nlohmann/json.hpp>

#include "exdiff/error.hpp"
#include "exdiff/parallel.hpp"
#include "exdiff/rng.hpp"

namespace exdiff {

namespace {

constexpr double kLattice = 0x1p-40;

double quantize(double v) { return std::nearbyint(v / kLattice) * kLattice; }

double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

/// Direct-form biquad (RBJ cookbook band-pass, constant peak gain).
std::vector<double> bandpass(const std::vector<double>& x, double center_hz, double q, int rate) {
  const double w0 = 2.0 * std::numbers::pi * center_hz / rate;
  const double alpha = std::sin(w0) / (2.0 * q);
  const double a0 = 1.0 + alpha;
  const double b0 = alpha / a0, b2 = -alpha / a0;
  const double a1 = -2.0 * std::cos(w0) / a0, a2 = (1.0 - alpha) / a0;
  std::vector<double> y(x.size());
  double x1 = 0, x2 = 0, y1 = 0, y2 = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double v = b0 * x[i] + b2 * x2 - a1 * y1 - a2 * y2;
    x2 = x1;
    x1 = x[i];
    y2 = y1;
    y1 = v;
    y[i] = v;
  }
  return y;
}

double bessel_i0(double x) {
  double sum = 1.0, term = 1.0;
  for (int k = 1; k < 60; ++k) {
    term *= (x / (2.0 * k)) * (x / (2.0 * k));
    sum += term;
    if (term < 1e-17 * sum) break;
  }
  return sum;
}

}  // namespace

const char* to_string(SnrDefinition d) { return d == SnrDefinition::ScaleInvariant ? "scale_invariant" : "energy"; }

SnrDefinition snr_definition_from_string(const std::string& s) {
  if (s == "scale_invariant") return SnrDefinition::ScaleInvariant;
  if (s == "energy") return SnrDefinition::Energy;
  throw InvalidArgument("unknown SNR definition: " + s);
}

void MixSpec::validate() const {
  if (!(segment_seconds > 0.0)) throw InvalidArgument("data.segment_seconds must be positive");
  if (std::isnan(target_snr_db)) throw InvalidArgument("data.target_snr_db must be a number");
}

double remix_scale(const std::vector<double>& s, const std::vector<double>& n, double target_db, SnrDefinition def) {
  if (s.size() != n.size()) throw ShapeError("remix_scale: length mismatch");
  const double ss = dot(s, s), nn = dot(n, n);
  if (ss == 0.0) throw InvalidArgument("remix: clean signal is silent");
  if (nn == 0.0) throw InvalidArgument("remix: interference is silent");
  if (std::isinf(target_db) && target_db > 0) return 0.0;
  const double ratio = std::pow(10.0, target_db / 10.0);
  if (def == SnrDefinition::Energy) return std::sqrt(ss / (ratio * nn));

  // m = s + k n has alpha = 1 + k c and residual k n_perp, so
  // (1 + k c)^2 |s|^2 = ratio k^2 |n_perp|^2.
  const double c = dot(n, s) / ss;
  const double perp = nn - c * c * ss;
  if (!(perp > 1e-12 * nn)) throw InvalidArgument("remix: interference is parallel to the clean signal");
  const double q = std::sqrt(ratio * perp / ss);
  return q > c ? 1.0 / (q - c) : -1.0 / (q + c);
}

PairRecord remix_to_snr(const Waveform& clean, const Waveform& interference, double target_db, SnrDefinition def) {
  clean.validate();
  interference.validate();
  if (clean.sample_rate != interference.sample_rate) throw InvalidArgument("remix: sample rates differ");
  const std::size_t len = std::min(clean.size(), interference.size());
  std::vector<double> s(clean.samples.begin(), clean.samples.begin() + static_cast<std::ptrdiff_t>(len));
  std::vector<double> n(interference.samples.begin(), interference.samples.begin() + static_cast<std::ptrdiff_t>(len));
  for (auto& v : s) v = quantize(v);
  const double k = remix_scale(s, n, target_db, def);

  PairRecord p;
  p.scale = k;
  p.clean = Waveform(std::move(s), clean.sample_rate);
  p.interference = Waveform(std::vector<double>(len), clean.sample_rate);
  p.mixture = Waveform(std::vector<double>(len), clean.sample_rate);
  for (std::size_t i = 0; i < len; ++i) {
    p.interference.samples[i] = quantize(k * n[i]);
    p.mixture.samples[i] = p.clean.samples[i] + p.interference.samples[i];
  }
  return p;
}

std::vector<PairRecord> incoherent_mix(const std::vector<Track>& vocals, const std::vector<Track>& accompaniment,
                                       std::size_t n_out, const MixSpec& spec) {
  spec.validate();
  if (n_out == 0) return {};
  if (vocals.empty() || accompaniment.empty()) throw InvalidArgument("incoherent_mix: empty track pool");
  const int rate = vocals.front().audio.sample_rate;
  const auto seg = static_cast<std::size_t>(std::llround(spec.segment_seconds * rate));
  for (const auto* pool : {&vocals, &accompaniment}) {
    for (const auto& t : *pool) {
      if (t.audio.sample_rate != rate) throw InvalidArgument("incoherent_mix: mixed sample rates in pools");
      if (t.audio.size() < seg) {
        throw InvalidArgument("incoherent_mix: track " + t.id + " is shorter than segment_seconds");
      }
    }
  }

  std::vector<PairRecord> out(n_out);
  parallel_for(n_out, [&](std::size_t i) {
    Rng rng(spec.seed, i);
    for (int attempt = 0;; ++attempt) {
      const auto& v = vocals[rng.index(vocals.size())];
      std::size_t ai = rng.index(accompaniment.size());
      // Prefer accompaniment from a different track than the vocal.
      for (int r = 0; r < 8 && accompaniment.size() > 1 && accompaniment[ai].id == v.id; ++r) {
        ai = rng.index(accompaniment.size());
      }
      const auto& a = accompaniment[ai];
      const std::size_t vo = rng.index(v.audio.size() - seg + 1);
      std::size_t ao = rng.index(a.audio.size() - seg + 1);
      for (int r = 0; r < 8 && ao == vo && a.audio.size() > seg; ++r) ao = rng.index(a.audio.size() - seg + 1);

      Waveform vs(std::vector<double>(v.audio.samples.begin() + static_cast<std::ptrdiff_t>(vo),
                                      v.audio.samples.begin() + static_cast<std::ptrdiff_t>(vo + seg)),
                  rate);
      Waveform as(std::vector<double>(a.audio.samples.begin() + static_cast<std::ptrdiff_t>(ao),
                                      a.audio.samples.begin() + static_cast<std::ptrdiff_t>(ao + seg)),
                  rate);
      if (energy(vs) == 0.0 || energy(as) == 0.0) {
        if (attempt < 32) continue;
        throw InvalidArgument("incoherent_mix: could not draw non-silent segments");
      }
      PairRecord p = remix_to_snr(vs, as, spec.target_snr_db, spec.snr_definition);
      p.provenance = Provenance{v.id, a.id, vo, ao, true, spec.seed, {}};
      out[i] = std::move(p);
      return;
    }
  });
  return out;
}

PairRecord synth_pair(std::uint64_t seed, std::size_t index, const SynthConfig& cfg) {
  if (!(cfg.min_seconds > 0.0 && cfg.max_seconds >= cfg.min_seconds)) {
    throw InvalidArgument("synth: invalid duration range");
  }
  Rng rng(seed, index);
  const int rate = cfg.sample_rate;
  const double seconds = rng.uniform(cfg.min_seconds, cfg.max_seconds);
  const auto len = static_cast<std::size_t>(std::llround(seconds * rate));

  const double gap_seconds = std::max(cfg.min_silence_seconds, cfg.min_silence_fraction * seconds) *
                             rng.uniform(1.02, 1.3);
  const auto gap = std::min(len, static_cast<std::size_t>(std::ceil(gap_seconds * rate)));
  const std::size_t gap_start = rng.index(len - gap + 1);
  const std::size_t gap_end = gap_start + gap;

  // Vocal: harmonic tone with vibrato and a slow pitch glide.
  const double f0 = rng.uniform(180.0, 450.0);
  const double glide = rng.uniform(-0.15, 0.15);
  const double vib_rate = rng.uniform(4.0, 6.5), vib_depth = rng.uniform(0.005, 0.02);
  const double tilt = rng.uniform(0.8, 1.6);
  const auto n_harm = static_cast<std::size_t>(std::floor(4000.0 / (f0 * (1.0 + std::abs(glide)) * (1.0 + vib_depth))));
  std::vector<double> harm_amp(n_harm), harm_phase(n_harm);
  for (std::size_t h = 0; h < n_harm; ++h) {
    harm_amp[h] = rng.uniform(0.5, 1.0) / std::pow(static_cast<double>(h + 1), tilt);
    harm_phase[h] = rng.uniform(0.0, 2.0 * std::numbers::pi);
  }
  const auto fade = static_cast<std::size_t>(0.01 * rate);
  std::vector<double> vocal(len, 0.0);
  double phase = 0.0;
  for (std::size_t i = 0; i < len; ++i) {
    const double t = static_cast<double>(i) / rate;
    const double f = f0 * (1.0 + glide * t / seconds) * (1.0 + vib_depth * std::sin(2.0 * std::numbers::pi * vib_rate * t));
    phase += 2.0 * std::numbers::pi * f / rate;
    if (i >= gap_start && i < gap_end) continue;
    double env = 1.0;
    // Raised-cosine fades on the voiced side of every boundary.
    const std::size_t dist_gap = i < gap_start ? gap_start - i : i - gap_end + 1;
    const std::size_t dist_edge = std::min(i + 1, len - i);
    const std::size_t d = std::min(dist_gap, dist_edge);
    if (d < fade) env = 0.5 - 0.5 * std::cos(std::numbers::pi * static_cast<double>(d) / fade);
    double v = 0.0;
    for (std::size_t h = 0; h < n_harm; ++h) v += harm_amp[h] * std::sin(static_cast<double>(h + 1) * phase + harm_phase[h]);
    vocal[i] = env * v;
  }

  // Accompaniment: white noise through two random band-pass sections.
  std::vector<double> noise(len);
  for (auto& v : noise) v = rng.normal();
  std::vector<double> accomp(len, 0.0);
  for (int band = 0; band < 2; ++band) {
    const double center = std::exp(rng.uniform(std::log(150.0), std::log(4000.0)));
    const auto y = bandpass(noise, center, rng.uniform(0.5, 2.0), rate);
    const double g = rng.uniform(0.5, 1.0);
    for (std::size_t i = 0; i < len; ++i) accomp[i] += g * y[i];
  }

  const double k = remix_scale(vocal, accomp, cfg.target_snr_db);
  double pk = 0.0;
  for (std::size_t i = 0; i < len; ++i) pk = std::max(pk, std::abs(vocal[i] + k * accomp[i]));
  const double g = cfg.peak / pk;
  for (auto& v : vocal) v *= g;

  PairRecord p = remix_to_snr(Waveform(std::move(vocal), rate), Waveform(std::move(accomp), rate), cfg.target_snr_db);
  p.provenance.clean_id = "synth_vocal_" + std::to_string(index);
  p.provenance.interference_id = "synth_accomp_" + std::to_string(index);
  p.provenance.seed = seed;
  p.provenance.silent_regions = {{gap_start, gap_end}};
  return p;
}

std::vector<PairRecord> synth_corpus(std::size_t n_pairs, std::uint64_t seed, const SynthConfig& cfg) {
  if (n_pairs == 0) throw InvalidArgument("synth_corpus: n_pairs must be at least 1");
  std::vector<PairRecord> out(n_pairs);
  parallel_for(n_pairs, [&](std::size_t i) { out[i] = synth_pair(seed, i, cfg); });
  return out;
}

Waveform resample(const Waveform& w, int target_hz) {
  if (target_hz <= 0) throw InvalidArgument("resample: target rate must be positive");
  w.validate();
  if (target_hz == w.sample_rate) return w;
  const long g = std::gcd(static_cast<long>(target_hz), static_cast<long>(w.sample_rate));
  const long up = target_hz / g, down = w.sample_rate / g;

  // Low-pass at the narrower Nyquist with a small transition band.
  const double cutoff = 0.95 * std::min(1.0, static_cast<double>(up) / static_cast<double>(down));
  constexpr int kZeroCrossings = 48;
  constexpr double kBeta = 10.0;
  const double half_width = kZeroCrossings / cutoff;  // in input samples
  const auto taps = static_cast<long>(std::ceil(half_width));
  const double i0_beta = bessel_i0(kBeta);

  // Polyphase table: phase p holds the filter at fractional offset p/up.
  const long width = 2 * taps + 1;
  std::vector<double> table(static_cast<std::size_t>(up * width));
  for (long p = 0; p < up; ++p) {
    const double frac = static_cast<double>(p) / static_cast<double>(up);
    for (long j = -taps; j <= taps; ++j) {
      const double tau = frac - static_cast<double>(j);
      double h = 0.0;
      if (std::abs(tau) < half_width) {
        const double x = cutoff * tau;
        const double sinc = x == 0.0 ? 1.0 : std::sin(std::numbers::pi * x) / (std::numbers::pi * x);
        const double r = tau / half_width;
        h = cutoff * sinc * bessel_i0(kBeta * std::sqrt(std::max(0.0, 1.0 - r * r))) / i0_beta;
      }
      table[static_cast<std::size_t>(p * width + (j + taps))] = h;
    }
  }

  const auto n_in = static_cast<long>(w.size());
  const long n_out = (n_in * up + down - 1) / down;
  std::vector<double> out(static_cast<std::size_t>(n_out));
  for (long m = 0; m < n_out; ++m) {
    const long num = m * down;  // output time in units of 1/up input samples
    const long base = num / up, p = num % up;
    const double* h = table.data() + p * width;
    double acc = 0.0;
    for (long j = -taps; j <= taps; ++j) {
      const long idx = base + j;
      if (idx < 0 || idx >= n_in) continue;
      acc += w.samples[static_cast<std::size_t>(idx)] * h[j + taps];
    }
    out[static_cast<std::size_t>(m)] = acc;
  }
  return Waveform(std::move(out), target_hz);
}

void write_pairs(const std::vector<PairRecord>& pairs, const std::filesystem::path& dir, const std::string& prefix) {
  std::filesystem::create_directories(dir);
  std::ofstream manifest(dir / "manifest.jsonl", std::ios::trunc);
  if (!manifest) throw Error("cannot write manifest in " + dir.string());
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    char idx[16];
    std::snprintf(idx, sizeof idx, "%04zu", i);
    const std::string stem = prefix + "_" + idx;
    const auto& p = pairs[i];
    write_wav(dir / (stem + "_clean.wav"), p.clean);
    write_wav(dir / (stem + "_interference.wav"), p.interference);
    write_wav(dir / (stem + "_mixture.wav"), p.mixture);
    nlohmann::json silent = nlohmann::json::array();
    for (const auto& [b, e] : p.provenance.silent_regions) silent.push_back({b, e});
    nlohmann::json j{{"id", stem},
                     {"clean", stem + "_clean.wav"},
                     {"interference", stem + "_interference.wav"},
                     {"mixture", stem + "_mixture.wav"},
                     {"scale", p.scale},
                     {"clean_source", p.provenance.clean_id},
                     {"interference_source", p.provenance.interference_id},
                     {"clean_offset", p.provenance.clean_offset},
                     {"interference_offset", p.provenance.interference_offset},
                     {"incoherent", p.provenance.incoherent},
                     {"seed", p.provenance.seed},
                     {"silent_regions", silent}};
    manifest << j.dump() << '\n';
  }
}

std::vector<PairRecord> read_pairs(const std::filesystem::path& dir) {
  const auto path = dir / "manifest.jsonl";
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  std::vector<PairRecord> pairs;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = path.string() + ":" + std::to_string(line_no);
    try {
      const auto j = nlohmann::json::parse(line);
      PairRecord p;
      p.clean = resample(read_wav(dir / j.at("clean").get<std::string>()), kWorkingSampleRate);
      p.interference = resample(read_wav(dir / j.at("interference").get<std::string>()), kWorkingSampleRate);
      p.mixture = resample(read_wav(dir / j.at("mixture").get<std::string>()), kWorkingSampleRate);
      p.scale = j.value("scale", 1.0);
      p.provenance.clean_id = j.value("clean_source", j.value("id", std::string{}));
      p.provenance.interference_id = j.value("interference_source", std::string{});
      p.provenance.clean_offset = j.value("clean_offset", std::size_t{0});
      p.provenance.interference_offset = j.value("interference_offset", std::size_t{0});
      p.provenance.incoherent = j.value("incoherent", false);
      p.provenance.seed = j.value("seed", std::uint64_t{0});
      if (j.contains("silent_regions")) {
        for (const auto& r : j.at("silent_regions")) p.provenance.silent_regions.push_back({r.at(0), r.at(1)});
      }
      if (p.clean.size() != p.mixture.size() || p.interference.size() != p.mixture.size()) {
        throw InvalidArgument("clean, interference and mixture lengths differ");
      }
      pairs.push_back(std::move(p));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(where + ": " + e.what());
    } catch (const Error& e) {
      throw ParseError(where + ": " + e.what());
    }
  }
  return pairs;
}

std::vector<Track> load_tracks(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw InvalidArgument("not a directory: " + dir.string());
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().extension() == ".wav") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  std::vector<Track> tracks;
  for (const auto& f : files) tracks.push_back({f.stem().string(), resample(read_wav(f), kWorkingSampleRate)});
  return tracks;
}

}  // namespace exdiff
