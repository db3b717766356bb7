#pragma once

#include <Eigen/Dense>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace sfmm {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;

enum class ErrorKind { validation, numerical, convergence, io };

// Every failure carries a stable machine-readable tag (e.g. "signal_too_short")
// plus a human message; the CLI maps the kind to an exit code.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, std::string tag, const std::string& message)
      : std::runtime_error(tag + ": " + message), kind_(kind), tag_(std::move(tag)) {}
  ErrorKind kind() const { return kind_; }
  const std::string& tag() const { return tag_; }

 private:
  ErrorKind kind_;
  std::string tag_;
};

[[noreturn]] inline void fail(const std::string& tag, const std::string& message) {
  throw Error(ErrorKind::validation, tag, message);
}
[[noreturn]] inline void fail_numeric(const std::string& tag, const std::string& message) {
  throw Error(ErrorKind::numerical, tag, message);
}

inline bool all_finite(const Eigen::Ref<const Matrix>& m) { return m.allFinite(); }

}  // namespace sfmm
