#include "profchat/numgrad/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "profchat/errors.hpp"

namespace profchat::numgrad {

namespace {

void require_scalar(const Tensor& loss) {
  if (loss.size() != 1) {
    throw ContractError("grad_check: loss function must return a scalar, got " +
                        shape_string(loss.shape()));
  }
}

double evaluate(const LossFn& fn) {
  Tape tape(Tape::Mode::kNoGrad);
  Tensor loss = fn(tape);
  require_scalar(loss);
  return loss.item();
}

}  // namespace

GradCheckResult grad_check(const LossFn& fn, std::span<NamedTensor> params,
                           double eps) {
  if (!(eps > 0.0)) throw DomainError("grad_check: eps must be positive");

  for (NamedTensor& p : params) {
    p.tensor.set_requires_grad(true);
    p.tensor.zero_grad();
  }
  double recorded = 0.0;
  {
    Tape tape;
    Tensor loss = fn(tape);
    require_scalar(loss);
    recorded = loss.item();
    tape.backward(loss);
  }
  const double first = evaluate(fn);
  const double second = evaluate(fn);
  if (first != second || first != recorded) {
    std::ostringstream msg;
    msg.precision(17);
    msg << "grad_check: loss function is not deterministic (" << recorded
        << ", " << first << ", " << second << ")";
    throw DeterminismError(msg.str());
  }

  GradCheckResult result;
  for (NamedTensor& p : params) {
    const std::vector<double> analytic = p.tensor.grad();
    std::span<double> values = p.tensor.mutable_data();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      values[i] = saved + eps;
      const double plus = evaluate(fn);
      values[i] = saved - eps;
      const double minus = evaluate(fn);
      values[i] = saved;
      const double numeric = (plus - minus) / (2.0 * eps);
      const double a = analytic[i];
      const double denom = std::max({std::abs(a), std::abs(numeric), 1e-12});
      const double rel = std::abs(a - numeric) / denom;
      ++result.entries_checked;
      result.max_absolute_error = std::max(result.max_absolute_error, std::abs(a - numeric));
      if (denom >= kSignificantGradient) {
        result.max_relative_error_significant =
            std::max(result.max_relative_error_significant, rel);
      }
      if (rel > result.max_relative_error) {
        result.max_relative_error = rel;
        result.worst_name = p.name;
        result.worst_index = i;
        result.worst_analytic = a;
        result.worst_numeric = numeric;
      }
    }
  }
  return result;
}

}  // namespace profchat::numgrad
