#include "exdiff/metrics.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "exdiff/error.hpp"
#include "exdiff/parallel.hpp"

namespace exdiff {

namespace {

double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

void require_pair(const std::vector<double>& est, const std::vector<double>& ref, const char* what) {
  if (est.size() != ref.size()) {
    throw ShapeError(std::string(what) + ": length mismatch (" + std::to_string(est.size()) + " vs " +
                     std::to_string(ref.size()) + ")");
  }
  if (ref.empty()) throw InvalidArgument(std::string(what) + ": empty signals");
}

std::string format_ms(const MeanStd& m) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.2f ± %.2f", m.mean, m.std);
  return buf;
}

nlohmann::json ms_json(const MeanStd& m) { return {{"mean", m.mean}, {"std", m.std}, {"count", m.count}}; }

}  // namespace

double capped_db(double num, double den) {
  if (den <= 0.0) return num > 0.0 ? kDbCap : -kDbCap;
  if (num <= 0.0) return -kDbCap;
  return std::clamp(10.0 * std::log10(num / den), -kDbCap, kDbCap);
}

double si_sdr(const std::vector<double>& est, const std::vector<double>& ref) {
  require_pair(est, ref, "si_sdr");
  const double rr = dot(ref, ref);
  if (rr == 0.0) throw InvalidArgument("si_sdr: reference is identically zero");
  const double alpha = dot(est, ref) / rr;
  double target = 0.0, error = 0.0;
  for (std::size_t i = 0; i < ref.size(); ++i) {
    const double t = alpha * ref[i];
    target += t * t;
    const double e = est[i] - t;
    error += e * e;
  }
  return capped_db(target, error);
}

double si_sdr(const Waveform& est, const Waveform& ref) { return si_sdr(est.samples, ref.samples); }

SiDecomposition si_decompose(const std::vector<double>& est, const std::vector<double>& s,
                             const std::vector<double>& n) {
  require_pair(est, s, "si_decompose");
  require_pair(est, n, "si_decompose");
  const double ss = dot(s, s);
  if (ss == 0.0) throw InvalidArgument("si_decompose: reference is identically zero");
  if (dot(n, n) == 0.0) throw InvalidArgument("si_decompose: interference is identically zero");

  const double c = dot(n, s) / ss;
  std::vector<double> n_perp(n.size());
  for (std::size_t i = 0; i < n.size(); ++i) n_perp[i] = n[i] - c * s[i];
  const double nn = dot(n_perp, n_perp);
  if (nn <= 1e-12 * dot(n, n)) throw InvalidArgument("si_decompose: interference is parallel to the reference");

  SiDecomposition d;
  const double alpha = dot(est, s) / ss;
  const double beta = dot(est, n_perp) / nn;
  d.e_target.resize(est.size());
  d.e_inter.resize(est.size());
  d.e_artif.resize(est.size());
  for (std::size_t i = 0; i < est.size(); ++i) {
    d.e_target[i] = alpha * s[i];
    d.e_inter[i] = beta * n_perp[i];
    d.e_artif[i] = est[i] - d.e_target[i] - d.e_inter[i];
  }
  const double et = dot(d.e_target, d.e_target);
  const double ei = dot(d.e_inter, d.e_inter);
  const double ea = dot(d.e_artif, d.e_artif);
  d.si_sdr = capped_db(et, ei + ea);
  d.si_sir = capped_db(et, ei);
  d.si_sar = capped_db(et, ea);
  return d;
}

MeanStd mean_std(const std::vector<double>& v) {
  MeanStd m;
  m.count = v.size();
  if (v.empty()) return m;
  double s = 0.0;
  for (double x : v) s += x;
  m.mean = s / static_cast<double>(v.size());
  double q = 0.0;
  for (double x : v) q += (x - m.mean) * (x - m.mean);
  m.std = std::sqrt(q / static_cast<double>(v.size()));
  return m;
}

void EvalReport::aggregate() {
  std::vector<double> sdr, sir, sar, pq, st;
  for (const auto& c : per_clip) {
    if (!c.ok) continue;
    sdr.push_back(c.si_sdr);
    sir.push_back(c.si_sir);
    sar.push_back(c.si_sar);
    if (c.pesq) pq.push_back(*c.pesq);
    if (c.estoi) st.push_back(*c.estoi);
  }
  si_sdr = mean_std(sdr);
  si_sir = mean_std(sir);
  si_sar = mean_std(sar);
  pesq = pq.empty() ? std::nullopt : std::optional<MeanStd>(mean_std(pq));
  estoi = st.empty() ? std::nullopt : std::optional<MeanStd>(mean_std(st));
}

std::string EvalReport::to_json() const {
  nlohmann::json j;
  j["version"] = kEvalReportVersion;
  j["per_clip"] = nlohmann::json::array();
  for (const auto& c : per_clip) {
    nlohmann::json r{{"id", c.id}, {"ok", c.ok}};
    if (c.ok) {
      r["si_sdr"] = c.si_sdr;
      r["si_sir"] = c.si_sir;
      r["si_sar"] = c.si_sar;
    } else {
      r["error"] = c.error;
    }
    r["pesq"] = c.pesq ? nlohmann::json(*c.pesq) : nlohmann::json(nullptr);
    r["estoi"] = c.estoi ? nlohmann::json(*c.estoi) : nlohmann::json(nullptr);
    j["per_clip"].push_back(r);
  }
  j["aggregate"] = {{"si_sdr", ms_json(si_sdr)}, {"si_sir", ms_json(si_sir)}, {"si_sar", ms_json(si_sar)}};
  if (pesq) j["aggregate"]["pesq"] = ms_json(*pesq);
  if (estoi) j["aggregate"]["estoi"] = ms_json(*estoi);
  return j.dump(2);
}

std::string EvalReport::to_table() const {
  std::size_t w = 4;
  for (const auto& c : per_clip) w = std::max(w, c.id.size());
  std::ostringstream os;
  char buf[256];
  std::snprintf(buf, sizeof buf, "%-*s  %16s  %16s  %16s\n", static_cast<int>(w), "clip", "SI-SDR", "SI-SIR",
                "SI-SAR");
  os << buf;
  for (const auto& c : per_clip) {
    if (c.ok) {
      std::snprintf(buf, sizeof buf, "%-*s  %16.2f  %16.2f  %16.2f\n", static_cast<int>(w), c.id.c_str(), c.si_sdr,
                    c.si_sir, c.si_sar);
    } else {
      std::snprintf(buf, sizeof buf, "%-*s  failed: %s\n", static_cast<int>(w), c.id.c_str(), c.error.c_str());
    }
    os << buf;
  }
  std::snprintf(buf, sizeof buf, "%-*s  %16s  %16s  %16s\n", static_cast<int>(w), "mean±std", format_ms(si_sdr).c_str(),
                format_ms(si_sir).c_str(), format_ms(si_sar).c_str());
  os << buf;
  if (pesq || estoi) {
    os << "external: ";
    if (pesq) os << "PESQ " << format_ms(*pesq) << "  ";
    if (estoi) os << "ESTOI " << format_ms(*estoi);
    os << '\n';
  }
  return os.str();
}

EvalReport evaluate_set(const std::vector<EvalItem>& items) {
  if (items.empty()) throw InvalidArgument("evaluate_set: no clips");
  EvalReport report;
  report.per_clip.resize(items.size());
  parallel_for(items.size(), [&](std::size_t i) {
    auto& c = report.per_clip[i];
    c.id = items[i].id;
    try {
      const auto d = si_decompose(items[i].enhanced.samples, items[i].clean.samples, items[i].interference.samples);
      c.si_sdr = d.si_sdr;
      c.si_sir = d.si_sir;
      c.si_sar = d.si_sar;
    } catch (const std::exception& e) {
      c.ok = false;
      c.error = e.what();
    }
  });
  report.aggregate();
  return report;
}

void attach_external_scores(EvalReport& report, const std::filesystem::path& sidecar) {
  std::ifstream in(sidecar);
  if (!in) throw Error("cannot open score sidecar: " + sidecar.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("score sidecar: " + std::string(e.what()));
  }
  if (!j.is_object()) throw ParseError("score sidecar: top level must be an object keyed by clip id");
  for (auto& c : report.per_clip) {
    if (!j.contains(c.id)) continue;
    const auto& e = j.at(c.id);
    for (const auto& [key, val] : e.items()) {
      if (key != "pesq" && key != "estoi") throw ParseError("score sidecar: unknown key " + c.id + "." + key);
      if (!val.is_number()) throw ParseError("score sidecar: " + c.id + "." + key + " must be a number");
    }
    if (e.contains("pesq")) c.pesq = e.at("pesq").get<double>();
    if (e.contains("estoi")) c.estoi = e.at("estoi").get<double>();
  }
  report.aggregate();
}

void write_report(const EvalReport& report, const std::filesystem::path& out) {
  {
    std::ofstream f(out);
    if (!f) throw Error("cannot write report: " + out.string());
    f << report.to_json() << '\n';
  }
  auto table = out;
  table.replace_extension(".txt");
  std::ofstream t(table);
  if (!t) throw Error("cannot write report table: " + table.string());
  t << report.to_table();
}

}  // namespace exdiff
