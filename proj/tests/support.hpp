#pragma once

#include <functional>
#include <vector>

#include "archopt/gradcheck.hpp"

namespace archopt::testing {

inline Tensor<double> random_tensor(Shape shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  return alloc<double>(std::move(shape), init::Uniform{lo, hi, seed}, true);
}

/// Finite-difference check of `f` over every element of `inputs`.
inline GradCheckReport check_all(std::vector<Tensor<double>*> inputs,
                                 const std::function<Var<double>(Tape<double>&, std::vector<Var<double>>&)>& f,
                                 double h = 1e-6, double tol = 1e-4) {
  const std::function<Var<double>(Tape<double>&)> loss = [&](Tape<double>& tape) {
    std::vector<Var<double>> vars;
    for (auto* t : inputs) vars.push_back(tape.leaf(*t));
    return f(tape, vars);
  };
  return finite_diff_check<double>(loss, inputs, h, tol);
}

/// Reduces a matrix-valued op to a scalar with fixed random weights so that
/// every output element influences the loss differently.
inline Var<double> weighted_sum(Var<double> y, std::uint64_t seed) {
  Mat<double> w = alloc<double>({y.rows(), y.cols()}, init::Normal{0.0, 1.0, seed}).matrix();
  return sum(mul(y, y.tape().constant(std::move(w))));
}

}  // namespace archopt::testing
