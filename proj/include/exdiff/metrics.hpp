#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "exdiff/waveform.hpp"

namespace exdiff {

inline constexpr double kDbCap = 100.0;

/// 10 log10(num/den) clamped to [-kDbCap, kDbCap]; a zero denominator gives +cap.
double capped_db(double num, double den);

/// Scale-invariant SDR of `estimate` against `reference` (equal lengths).
double si_sdr(const std::vector<double>& estimate, const std::vector<double>& reference);
double si_sdr(const Waveform& estimate, const Waveform& reference);

struct SiDecomposition {
  std::vector<double> e_target;
  std::vector<double> e_inter;
  std::vector<double> e_artif;
  double si_sdr = 0.0;
  double si_sir = 0.0;
  double si_sar = 0.0;
};

/// Splits the estimate into target, interference and artifact parts. The
/// interference is first orthogonalised against the reference so the three
/// parts are mutually orthogonal.
SiDecomposition si_decompose(const std::vector<double>& estimate, const std::vector<double>& reference,
                             const std::vector<double>& interference);

struct ClipMetrics {
  std::string id;
  bool ok = true;
  std::string error;
  double si_sdr = 0.0;
  double si_sir = 0.0;
  double si_sar = 0.0;
  std::optional<double> pesq;
  std::optional<double> estoi;
};

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;  // population standard deviation
  std::size_t count = 0;
};

MeanStd mean_std(const std::vector<double>& v);

inline constexpr int kEvalReportVersion = 1;

struct EvalReport {
  std::vector<ClipMetrics> per_clip;
  MeanStd si_sdr, si_sir, si_sar;
  std::optional<MeanStd> pesq, estoi;

  /// Recomputes the aggregates from the successful clips.
  void aggregate();
  std::string to_json() const;
  /// Aligned text table: one row per clip, then mean +- std.
  std::string to_table() const;
};

struct EvalItem {
  std::string id;
  Waveform enhanced;
  Waveform clean;
  Waveform interference;
};

/// Metrics per item (in parallel, results kept in input order). A clip that
/// throws is recorded with ok = false and excluded from the aggregates.
EvalReport evaluate_set(const std::vector<EvalItem>& items);

/// Reads {"clip id": {"pesq": x, "estoi": y}, ...} and attaches the values.
void attach_external_scores(EvalReport& report, const std::filesystem::path& sidecar);

/// Writes report JSON to `out` and the text table next to it (same stem, .txt).
void write_report(const EvalReport& report, const std::filesystem::path& out);

}  // namespace exdiff
