#pragma once

#include <cmath>

#include "archopt/encoder.hpp"

namespace archopt {

struct OneCycle {
  long total_steps = 3000;
  double lr_start = 4e-6;
  double lr_peak = 4e-4;
  double lr_final = 1e-7;
};

/// Piecewise-linear: start -> peak over [0, 0.45T], peak -> start over
/// [0.45T, 0.9T], start -> final over [0.9T, T].
double one_cycle_lr(long step, const OneCycle& schedule);

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.98;
  double eps = 1e-9;
};

struct AdamState {
  long step = 0;
};

/// One bias-corrected Adam update of `p` using its accumulated gradient.
/// Parameters without a gradient this step are left untouched.
template <typename Scalar>
void adam_update(Parameter<Scalar>& p, const AdamConfig& cfg, long t, double lr) {
  auto& v = p.value;
  if (!v.has_grad()) return;
  if (p.first_moment.rows() != v.rows() || p.first_moment.cols() != v.cols() ||
      p.second_moment.rows() != v.rows() || p.second_moment.cols() != v.cols())
    throw Error(ErrorKind::invalid_state, "optimizer moments do not match parameter shape " + shape_string(v.shape()));
  const Scalar b1 = static_cast<Scalar>(cfg.beta1), b2 = static_cast<Scalar>(cfg.beta2);
  const auto g = v.grad().array();
  p.first_moment.array() = b1 * p.first_moment.array() + (Scalar(1) - b1) * g;
  p.second_moment.array() = b2 * p.second_moment.array() + (Scalar(1) - b2) * g.square();
  const Scalar c1 = static_cast<Scalar>(1.0 - std::pow(cfg.beta1, static_cast<double>(t)));
  const Scalar c2 = static_cast<Scalar>(1.0 - std::pow(cfg.beta2, static_cast<double>(t)));
  const Scalar step = static_cast<Scalar>(lr);
  v.matrix().array() -=
      step * (p.first_moment.array() / c1) / ((p.second_moment.array() / c2).sqrt() + static_cast<Scalar>(cfg.eps));
}

template <typename Scalar>
void adam_step(PartitionedEncoder<Scalar>& model, AdamState& state, const AdamConfig& cfg, double lr) {
  ++state.step;
  model.visit_parameters([&](const std::string&, Parameter<Scalar>& p) { adam_update(p, cfg, state.step, lr); });
}

template <typename Scalar>
void zero_grads(PartitionedEncoder<Scalar>& model) {
  model.visit_parameters([](const std::string&, Parameter<Scalar>& p) { p.value.zero_grad(); });
}

}  // namespace archopt
