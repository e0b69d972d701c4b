#include "epopr/domain.hpp"

#include <cmath>
#include <string>

namespace epopr {

std::string_view errc_name(Errc code) {
  switch (code) {
    case Errc::kFeatureDimension: return "FeatureDimension";
    case Errc::kNegativeRequestCount: return "NegativeRequestCount";
    case Errc::kInvalidConfig: return "InvalidConfig";
    case Errc::kPrecondition: return "PreconditionFailed";
    case Errc::kGroupTooSmall: return "GroupTooSmall";
    case Errc::kParseError: return "ParseError";
    case Errc::kSchemaError: return "SchemaError";
    case Errc::kEmptyTrainingSet: return "EmptyTrainingSet";
    case Errc::kAlphaOutOfRange: return "AlphaOutOfRange";
    case Errc::kEmptyScores: return "EmptyScores";
    case Errc::kEmptyCalibration: return "EmptyCalibration";
    case Errc::kUnknownGroup: return "UnknownGroup";
    case Errc::kEmptyInput: return "EmptyInput";
    case Errc::kFewerThanTwoGroups: return "FewerThanTwoGroups";
    case Errc::kAlreadyRepaired: return "AlreadyRepaired";
    case Errc::kUnknownRegion: return "UnknownRegion";
    case Errc::kDimensionMismatch: return "DimensionMismatch";
    case Errc::kNonScalarLoss: return "NonScalarLoss";
    case Errc::kEmptyCandidates: return "EmptyCandidates";
    case Errc::kInvalidDistribution: return "InvalidDistribution";
    case Errc::kFormat: return "FormatError";
    case Errc::kIo: return "IoError";
  }
  return "Unknown";
}

std::string_view group_name(SensitiveGroup g) {
  switch (g) {
    case SensitiveGroup::kLow: return "Low";
    case SensitiveGroup::kMiddle: return "Middle";
    case SensitiveGroup::kHigh: return "High";
  }
  return "?";
}

std::optional<SensitiveGroup> group_from_int(long long v) {
  if (v < 0 || v >= static_cast<long long>(kNumGroups)) return std::nullopt;
  return static_cast<SensitiveGroup>(v);
}

double distance_km(const Point& a, const Point& b) {
  return std::hypot(a.x - b.x, a.y - b.y);
}

std::optional<Error> validate_region(const Region& r) {
  if (r.features.size() != kFeatureDim) {
    return Error(Errc::kFeatureDimension,
                 "region " + std::to_string(r.id) + " has " +
                     std::to_string(r.features.size()) + " features, expected " +
                     std::to_string(kFeatureDim));
  }
  if (r.request_count < 0) {
    return Error(Errc::kNegativeRequestCount,
                 "region " + std::to_string(r.id) + " has request_count " +
                     std::to_string(r.request_count));
  }
  if (!group_from_int(static_cast<int>(r.group))) {
    return Error(Errc::kInvalidConfig,
                 "region " + std::to_string(r.id) + " has an invalid group");
  }
  return std::nullopt;
}

std::optional<Error> validate_record(const RepairRecord& r) {
  if (r.features.size() != kFeatureDim) {
    return Error(Errc::kFeatureDimension,
                 "record for region " + std::to_string(r.region_id) + " has " +
                     std::to_string(r.features.size()) + " features");
  }
  if (!(r.repair_duration > 0.0) || !std::isfinite(r.repair_duration)) {
    return Error(Errc::kParseError, "repair_duration must be finite and > 0");
  }
  return std::nullopt;
}

bool is_permutation_of_ids(const std::vector<RegionId>& sequence,
                           std::size_t n) {
  if (sequence.size() != n) return false;
  std::vector<bool> seen(n, false);
  for (RegionId id : sequence) {
    if (id < 0 || static_cast<std::size_t>(id) >= n || seen[id]) return false;
    seen[id] = true;
  }
  return true;
}

}  // namespace epopr
