#pragma once

#include <stdexcept>
#include <string>

namespace swingctl {

/// Malformed input file (JSON syntax, missing fields, wrong shapes).
struct ParseError : std::runtime_error {
  explicit ParseError(const std::string& what) : std::runtime_error(what) {}
};

/// Structurally valid input that violates a model invariant.
struct ValidationError : std::runtime_error {
  explicit ValidationError(const std::string& what) : std::runtime_error(what) {}
};

/// A numeric procedure failed to converge or left its domain.
struct SolveError : std::runtime_error {
  explicit SolveError(const std::string& what) : std::runtime_error(what) {}
};

namespace detail {
inline void require(bool ok, const std::string& msg) {
  if (!ok) throw ValidationError(msg);
}
}  // namespace detail

}  // namespace swingctl
