#pragma once

#include <functional>
#include <span>
#include <string>

#include "profchat/numgrad/tape.hpp"

namespace profchat::numgrad {

// Builds a scalar loss on the given tape from parameters captured by the
// caller. Must be deterministic.
using LossFn = std::function<Tensor(Tape&)>;

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::string worst_name;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t entries_checked = 0;
  // Diagnostics beside the headline number. Central differences carry about
  // |f| * 1e-16 / eps of rounding noise, so entries whose true gradient is
  // near zero can show a large relative error while being correct.
  double max_absolute_error = 0.0;
  double max_relative_error_significant = 0.0;  // entries with max(|a|,|n|) >= kSignificantGradient
};

inline constexpr double kSignificantGradient = 1e-5;

inline constexpr double kDefaultGradCheckEps = 1e-5;

// Compares reverse-mode gradients against central differences
// (f(t+eps) - f(t-eps)) / (2 eps) for every entry of every tensor in
// `params`. Relative error is |a - n| / max(|a|, |n|, 1e-12). Parameter
// values are restored afterwards; their grads are left holding the
// analytic gradient.
GradCheckResult grad_check(const LossFn& fn, std::span<NamedTensor> params,
                           double eps = kDefaultGradCheckEps);

}  // namespace profchat::numgrad
