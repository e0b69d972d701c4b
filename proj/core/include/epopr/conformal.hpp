#pragma once

#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "epopr/domain.hpp"
#include "epopr/forest.hpp"

namespace epopr::conformal {

enum class Method : int { kCP = 0, kCQR = 1, kECQR = 2 };

std::string_view method_name(Method m);  // "cp", "cqr", "ecqr"
std::optional<Method> method_from_name(std::string_view name);

struct CalibrationFactor {
  Method method = Method::kCQR;
  double alpha = 0.9;
  double global_q = 0.0;                         // CP and CQR
  std::map<SensitiveGroup, double> per_group_q;  // ECQR
  std::map<SensitiveGroup, std::size_t> per_group_n;

  // The offset applied to intervals of `group`; throws kUnknownGroup for an
  // ECQR factor that never saw the group.
  double factor_for(SensitiveGroup group) const;

  friend bool operator==(const CalibrationFactor&, const CalibrationFactor&) = default;
};

// max(lo - y, y - hi); negative iff y lies strictly inside the interval.
double conformity_score(const PredictionInterval& pi, double y);

// The ceil(alpha (n+1))-th smallest score, or +inf when that rank exceeds n.
double calibration_quantile(std::span<const double> scores, double alpha);

// Rank used by calibration_quantile, before the +inf check.
std::size_t calibration_rank(std::size_t n, double alpha);

// Fits the calibration offset(s) on held-out records.
CalibrationFactor calibrate(const forest::QrfModel& model,
                            std::span<const RepairRecord> cal, double alpha,
                            Method method);

// Same, from precomputed raw intervals (one per record).
CalibrationFactor calibrate_raw(std::span<const PredictionInterval> raw,
                                std::span<const RepairRecord> cal, double alpha,
                                Method method);

// Applies `factor` to a raw interval. If a negative offset would invert the
// interval, it collapses to the raw midpoint.
PredictionInterval apply(const CalibrationFactor& factor,
                         const PredictionInterval& raw, SensitiveGroup group);

PredictionInterval predict_interval(const forest::QrfModel& model,
                                    const CalibrationFactor& factor,
                                    std::span<const double> x,
                                    SensitiveGroup group);

// Per-group fraction of records whose label falls in the closed calibrated
// interval. Groups without records are omitted.
std::map<SensitiveGroup, double> coverage_by_group(
    const forest::QrfModel& model, const CalibrationFactor& factor,
    std::span<const RepairRecord> test);

std::map<SensitiveGroup, double> coverage_by_group_raw(
    std::span<const PredictionInterval> raw, const CalibrationFactor& factor,
    std::span<const RepairRecord> test);

// Raw intervals for each record, evaluated once per distinct feature vector.
std::vector<PredictionInterval> raw_intervals(const forest::QrfModel& model,
                                              std::span<const RepairRecord> records,
                                              double alpha);

// Checkpoint section "CAL1".
void save(const CalibrationFactor& f, std::ostream& os);
CalibrationFactor load(std::istream& is);

}  // namespace epopr::conformal
