#pragma once

#include <stdexcept>
#include <string>

namespace blockpool {

// Base for every error the library raises. The CLI maps UsageError to exit
// code 2 and everything else to exit code 1.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define BLOCKPOOL_DEFINE_ERROR(Name)   \
  class Name : public Error {          \
   public:                             \
    using Error::Error;                \
  }

BLOCKPOOL_DEFINE_ERROR(ArgumentError);
BLOCKPOOL_DEFINE_ERROR(DimensionError);
BLOCKPOOL_DEFINE_ERROR(LengthError);
BLOCKPOOL_DEFINE_ERROR(StateError);
BLOCKPOOL_DEFINE_ERROR(EncodingError);
BLOCKPOOL_DEFINE_ERROR(SegmentationError);
BLOCKPOOL_DEFINE_ERROR(DataError);
BLOCKPOOL_DEFINE_ERROR(ConfigError);
BLOCKPOOL_DEFINE_ERROR(CheckpointError);
BLOCKPOOL_DEFINE_ERROR(UsageError);
BLOCKPOOL_DEFINE_ERROR(NumericError);

#undef BLOCKPOOL_DEFINE_ERROR

class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t line)
      : Error(what + " (line " + std::to_string(line) + ")"), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

}  // namespace blockpool
