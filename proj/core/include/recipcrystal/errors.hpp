#pragma once

#include <stdexcept>
#include <string>

namespace recip {

// Base class for all library errors. Specific subclasses let callers
// distinguish data problems (bad input files, off-grid coordinates) from
// usage problems (bad config) at the CLI boundary.
struct Error : std::runtime_error {
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

struct SingularLattice : Error {
  using Error::Error;
};
struct InvalidDenominator : Error {
  using Error::Error;
};
struct CollisionAfterSnap : Error {
  using Error::Error;
};
struct GenerationFailure : Error {
  using Error::Error;
};
struct OffGridTranslation : Error {
  using Error::Error;
};
struct WaveSetNotClosed : Error {
  using Error::Error;
};
struct NonIntegerMultiplicity : Error {
  using Error::Error;
};
struct EmptyCorpus : Error {
  using Error::Error;
};
struct ScalesNotFrozen : Error {
  using Error::Error;
};
struct DivergenceDetected : Error {
  using Error::Error;
};
struct ParseError : Error {
  using Error::Error;
};
struct ArchiveCorrupt : Error {
  using Error::Error;
};
struct ConfigError : Error {
  using Error::Error;
};
struct CheckpointMismatch : Error {
  using Error::Error;
};

}  // namespace recip
