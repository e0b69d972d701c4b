#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace epopr {

enum class Errc {
  kFeatureDimension,
  kNegativeRequestCount,
  kInvalidConfig,
  kPrecondition,
  kGroupTooSmall,
  kParseError,
  kSchemaError,
  kEmptyTrainingSet,
  kAlphaOutOfRange,
  kEmptyScores,
  kEmptyCalibration,
  kUnknownGroup,
  kEmptyInput,
  kFewerThanTwoGroups,
  kAlreadyRepaired,
  kUnknownRegion,
  kDimensionMismatch,
  kNonScalarLoss,
  kEmptyCandidates,
  kInvalidDistribution,
  kFormat,
  kIo,
};

std::string_view errc_name(Errc code);

// Every failure surfaced by the library carries one of the codes above so
// callers (and the CLI exit-code mapping) can branch without parsing text.
class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what)
      : std::runtime_error(std::string(errc_name(code)) + ": " + what),
        code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

}  // namespace epopr
