#pragma once

#include <stdexcept>
#include <string>

namespace decorfuse {

enum class ErrorKind {
  MissingKey,
  WrongCount,
  NonFiniteValue,
  TruncatedRecord,
  ChannelMismatch,
  ShapeMismatch,
  BadDims,
  StrideMismatch,
  SpatialMismatch,
  EmptyKeySet,
  BadClass,
  LengthMismatch,
  PlacementFailure,
  ConfigMismatch,
  InvalidConfig,
  BadFormat,
  Io,
};

const char* to_string(ErrorKind kind);

/// Every failure raised by the library carries a machine-checkable kind.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

}  // namespace decorfuse
