#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <span>
#include <utility>
#include <vector>

#include "archopt/autodiff.hpp"

namespace archopt {

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t worst_param = 0;
  Index worst_element = 0;
  double autodiff_at_worst = 0.0;
  double numeric_at_worst = 0.0;
  std::size_t checked = 0;
  bool passed = true;
};

/// One scalar weight addressed as (parameter index, flat element index).
using Probe = std::pair<std::size_t, Index>;

/// Relative error with an absolute floor so that gradients that are zero on
/// both routes compare as equal.
inline double relative_error(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-6});
}

/// Compares the tape gradient of `loss_fn` against central differences
/// (f(w + h) - f(w - h)) / 2h for the probed weights. `loss_fn` must bind the
/// parameters through `Tape::leaf`.
template <typename Scalar>
GradCheckReport finite_diff_check(const std::function<Var<Scalar>(Tape<Scalar>&)>& loss_fn,
                                  std::span<Tensor<Scalar>* const> params, const std::vector<Probe>& probes,
                                  double h, double tol) {
  if (!(h > 0)) throw Error(ErrorKind::invalid_config, "finite_diff_check: step must be positive");
  for (auto* p : params) {
    p->set_requires_grad(true);
    p->zero_grad();
  }
  {
    Tape<Scalar> tape;
    tape.backward(loss_fn(tape));
  }
  auto evaluate = [&] {
    Tape<Scalar> tape;
    return static_cast<double>(loss_fn(tape).value()(0, 0));
  };

  GradCheckReport report;
  for (const auto& [pi, ei] : probes) {
    Tensor<Scalar>& p = *params[pi];
    const double analytic = p.has_grad() ? static_cast<double>(p.grad().data()[ei]) : 0.0;
    Scalar& w = p.matrix().data()[ei];
    const Scalar saved = w;
    w = saved + static_cast<Scalar>(h);
    const double up = evaluate();
    w = saved - static_cast<Scalar>(h);
    const double down = evaluate();
    w = saved;
    const double numeric = (up - down) / (2 * h);
    const double err = relative_error(analytic, numeric);
    if (err > report.max_rel_error || report.checked == 0) {
      report.max_rel_error = err;
      report.worst_param = pi;
      report.worst_element = ei;
      report.autodiff_at_worst = analytic;
      report.numeric_at_worst = numeric;
    }
    ++report.checked;
  }
  report.passed = report.max_rel_error < tol;
  return report;
}

/// Checks every element of every parameter.
template <typename Scalar>
GradCheckReport finite_diff_check(const std::function<Var<Scalar>(Tape<Scalar>&)>& loss_fn,
                                  std::span<Tensor<Scalar>* const> params, double h, double tol) {
  std::vector<Probe> probes;
  for (std::size_t i = 0; i < params.size(); ++i)
    for (Index e = 0; e < params[i]->size(); ++e) probes.emplace_back(i, e);
  return finite_diff_check<Scalar>(loss_fn, params, probes, h, tol);
}

}  // namespace archopt
