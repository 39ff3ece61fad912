#pragma once

#include <stdexcept>
#include <string>

namespace lpaf {

enum class ErrorKind {
  Dimension,
  Divergence,
  EmptyBatch,
  DegenerateVector,
  OracleFault,
  TaskOutOfRange,
  SceneInfeasible,
  ExpertFailure,
  ControllerFault,
  InvalidArgument,
  MissingInput,
  Io,
  Format,
};

/// Single exception type for the library; `kind()` lets callers (the CLI in
/// particular) map failures onto exit codes without parsing messages.
class Error : public std::runtime_error {
public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

private:
  ErrorKind kind_;
};

inline void require(bool cond, ErrorKind kind, const std::string& what) {
  if (!cond) throw Error(kind, what);
}

} // namespace lpaf
