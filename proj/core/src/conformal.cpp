#include "epopr/conformal.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <limits>
#include <ostream>

#include "epopr/binary_io.hpp"

namespace epopr::conformal {
namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

void check_alpha(double alpha) {
  if (!(alpha > 0.0 && alpha < 1.0)) {
    throw Error(Errc::kAlphaOutOfRange,
                "alpha must lie in (0, 1), got " + std::to_string(alpha));
  }
}

std::vector<double> scores_for(std::span<const PredictionInterval> raw,
                               std::span<const RepairRecord> cal,
                               std::span<const std::size_t> rows, Method method) {
  std::vector<double> s;
  s.reserve(rows.size());
  for (auto i : rows) {
    const double y = cal[i].repair_duration;
    s.push_back(method == Method::kCP ? std::abs(y - raw[i].midpoint())
                                      : conformity_score(raw[i], y));
  }
  return s;
}

}  // namespace

std::string_view method_name(Method m) {
  switch (m) {
    case Method::kCP: return "cp";
    case Method::kCQR: return "cqr";
    case Method::kECQR: return "ecqr";
  }
  return "?";
}

std::optional<Method> method_from_name(std::string_view name) {
  if (name == "cp" || name == "CP") return Method::kCP;
  if (name == "cqr" || name == "CQR") return Method::kCQR;
  if (name == "ecqr" || name == "ECQR") return Method::kECQR;
  return std::nullopt;
}

double CalibrationFactor::factor_for(SensitiveGroup group) const {
  if (method != Method::kECQR) return global_q;
  const auto it = per_group_q.find(group);
  if (it == per_group_q.end()) {
    throw Error(Errc::kUnknownGroup,
                "no calibration factor for group " + std::string(group_name(group)));
  }
  return it->second;
}

double conformity_score(const PredictionInterval& pi, double y) {
  return std::max(pi.lo - y, y - pi.hi);
}

std::size_t calibration_rank(std::size_t n, double alpha) {
  check_alpha(alpha);
  const double v = alpha * static_cast<double>(n + 1);
  // alpha*(n+1) is integral in exact arithmetic for many table entries
  // (0.9 * 10); do not let a last-bit rounding error bump the rank.
  const double k = std::ceil(v - 1e-9);
  return static_cast<std::size_t>(std::max(1.0, k));
}

double calibration_quantile(std::span<const double> scores, double alpha) {
  if (scores.empty()) throw Error(Errc::kEmptyScores, "no conformity scores");
  const auto k = calibration_rank(scores.size(), alpha);
  if (k > scores.size()) return kInf;
  std::vector<double> sorted(scores.begin(), scores.end());
  std::nth_element(sorted.begin(), sorted.begin() + static_cast<std::ptrdiff_t>(k - 1),
                   sorted.end());
  return sorted[k - 1];
}

CalibrationFactor calibrate_raw(std::span<const PredictionInterval> raw,
                                std::span<const RepairRecord> cal, double alpha,
                                Method method) {
  check_alpha(alpha);
  if (cal.empty()) throw Error(Errc::kEmptyCalibration, "calibration set is empty");
  if (raw.size() != cal.size()) {
    throw Error(Errc::kDimensionMismatch, "one raw interval per record required");
  }
  CalibrationFactor f;
  f.method = method;
  f.alpha = alpha;
  for (const auto& r : cal) ++f.per_group_n[r.group];

  if (method == Method::kECQR) {
    for (const auto& [g, n] : f.per_group_n) {
      std::vector<std::size_t> rows;
      rows.reserve(n);
      for (std::size_t i = 0; i < cal.size(); ++i) {
        if (cal[i].group == g) rows.push_back(i);
      }
      f.per_group_q[g] = calibration_quantile(scores_for(raw, cal, rows, method), alpha);
    }
  } else {
    std::vector<std::size_t> rows(cal.size());
    for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = i;
    f.global_q = calibration_quantile(scores_for(raw, cal, rows, method), alpha);
  }
  return f;
}

std::vector<PredictionInterval> raw_intervals(const forest::QrfModel& model,
                                              std::span<const RepairRecord> records,
                                              double alpha) {
  const forest::QuantilePair qp(alpha);
  std::map<std::vector<double>, PredictionInterval> memo;
  std::vector<PredictionInterval> out;
  out.reserve(records.size());
  for (const auto& r : records) {
    auto it = memo.find(r.features);
    if (it == memo.end()) {
      it = memo.emplace(r.features, model.predict_interval_raw(r.features, qp)).first;
    }
    out.push_back(it->second);
  }
  return out;
}

CalibrationFactor calibrate(const forest::QrfModel& model,
                            std::span<const RepairRecord> cal, double alpha,
                            Method method) {
  check_alpha(alpha);
  if (cal.empty()) throw Error(Errc::kEmptyCalibration, "calibration set is empty");
  const auto raw = raw_intervals(model, cal, alpha);
  return calibrate_raw(raw, cal, alpha, method);
}

PredictionInterval apply(const CalibrationFactor& factor,
                         const PredictionInterval& raw, SensitiveGroup group) {
  const double q = factor.factor_for(group);
  const double mid = raw.midpoint();
  if (factor.method == Method::kCP) {
    if (q < 0.0) return {mid, mid};
    return {mid - q, mid + q};
  }
  PredictionInterval pi{raw.lo - q, raw.hi + q};
  if (pi.lo > pi.hi) pi = {mid, mid};
  return pi;
}

PredictionInterval predict_interval(const forest::QrfModel& model,
                                    const CalibrationFactor& factor,
                                    std::span<const double> x,
                                    SensitiveGroup group) {
  // Resolve the group first so an unknown group fails before model work.
  (void)factor.factor_for(group);
  const auto raw = model.predict_interval_raw(x, forest::QuantilePair(factor.alpha));
  return apply(factor, raw, group);
}

std::map<SensitiveGroup, double> coverage_by_group_raw(
    std::span<const PredictionInterval> raw, const CalibrationFactor& factor,
    std::span<const RepairRecord> test) {
  if (raw.size() != test.size()) {
    throw Error(Errc::kDimensionMismatch, "one raw interval per record required");
  }
  std::map<SensitiveGroup, std::pair<std::size_t, std::size_t>> hits;
  for (std::size_t i = 0; i < test.size(); ++i) {
    const auto pi = apply(factor, raw[i], test[i].group);
    auto& [covered, total] = hits[test[i].group];
    covered += pi.contains(test[i].repair_duration) ? 1 : 0;
    ++total;
  }
  std::map<SensitiveGroup, double> out;
  for (const auto& [g, ct] : hits) {
    out[g] = static_cast<double>(ct.first) / static_cast<double>(ct.second);
  }
  return out;
}

std::map<SensitiveGroup, double> coverage_by_group(
    const forest::QrfModel& model, const CalibrationFactor& factor,
    std::span<const RepairRecord> test) {
  const auto raw = raw_intervals(model, test, factor.alpha);
  return coverage_by_group_raw(raw, factor, test);
}

void save(const CalibrationFactor& f, std::ostream& os) {
  io::BinaryWriter w(os);
  w.magic("CAL1");
  w.u32(1);
  w.u32(static_cast<std::uint32_t>(f.method));
  w.f64(f.alpha);
  w.f64(f.global_q);
  w.u64(f.per_group_n.size());
  for (const auto& [g, n] : f.per_group_n) {
    w.u32(static_cast<std::uint32_t>(g));
    w.u64(n);
    const auto it = f.per_group_q.find(g);
    w.u32(it != f.per_group_q.end() ? 1 : 0);
    w.f64(it != f.per_group_q.end() ? it->second : 0.0);
  }
  if (!os) throw Error(Errc::kIo, "failed writing CAL1 section");
}

CalibrationFactor load(std::istream& is) {
  io::BinaryReader r(is);
  r.expect_magic("CAL1");
  if (const auto v = r.u32(); v != 1) {
    throw Error(Errc::kFormat, "unsupported CAL1 version " + std::to_string(v));
  }
  CalibrationFactor f;
  const auto m = r.u32();
  if (m > 2) throw Error(Errc::kFormat, "bad calibration method tag");
  f.method = static_cast<Method>(m);
  f.alpha = r.f64();
  f.global_q = r.f64();
  const auto n_groups = r.u64();
  if (n_groups > kNumGroups) throw Error(Errc::kFormat, "too many groups in CAL1");
  for (std::uint64_t i = 0; i < n_groups; ++i) {
    const auto g = group_from_int(r.u32());
    if (!g) throw Error(Errc::kFormat, "bad group tag in CAL1");
    f.per_group_n[*g] = r.u64();
    const bool has_q = r.u32() != 0;
    const double q = r.f64();
    if (has_q) f.per_group_q[*g] = q;
  }
  return f;
}

}  // namespace epopr::conformal
