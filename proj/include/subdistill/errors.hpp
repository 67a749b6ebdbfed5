#pragma once

#include <stdexcept>
#include <string>

namespace subdistill {

// Error taxonomy. The CLI maps these onto its exit codes:
//   input/format/config -> 2, degenerate math -> 3, divergence -> 4,
//   aggregation/schema -> 5.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct DimensionError : Error {
  using Error::Error;
};

struct NumericError : Error {
  using Error::Error;
};

struct RankError : Error {
  using Error::Error;
};

struct DegenerateError : Error {
  using Error::Error;
};

struct FormatError : Error {
  using Error::Error;
};

struct IoError : Error {
  using Error::Error;
};

struct ConfigError : Error {
  using Error::Error;
};

struct SchemaError : Error {
  using Error::Error;
};

struct DivergenceError : Error {
  DivergenceError(const std::string& what, std::size_t epoch_index)
      : Error(what), epoch(epoch_index) {}
  std::size_t epoch;
};

}  // namespace subdistill
