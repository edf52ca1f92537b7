#ifndef NEUMANN_TYPES_HPP
#define NEUMANN_TYPES_HPP

#include <Eigen/Dense>

#include <numbers>
#include <stdexcept>
#include <string>

namespace neumann {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

inline constexpr double kPi = std::numbers::pi;
inline constexpr double kTwoPi = 2.0 * std::numbers::pi;

// Raised when a two-form that must be symplectic turns out to be singular.
class DegenerateFormError : public std::runtime_error {
 public:
  explicit DegenerateFormError(const std::string& what) : std::runtime_error(what) {}
};

// Raised when an operation is called outside its documented precondition.
class PreconditionError : public std::runtime_error {
 public:
  explicit PreconditionError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace neumann

#endif
