// Copyright 2026 The packenc Authors
// SPDX-License-Identifier: Apache-2.0

#include "packenc/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace packenc {

Tensor finite_diff_grad(const ScalarFn& f, const Tensor& x, double h) {
  Tensor grad(x.shape());
  Tensor probe = x;
  for (std::size_t i = 0; i < x.numel(); ++i) {
    const double orig = probe[i];
    probe[i] = orig + h;
    const double up = f(probe);
    probe[i] = orig - h;
    const double down = f(probe);
    probe[i] = orig;
    grad[i] = (up - down) / (2.0 * h);
  }
  return grad;
}

double grad_rel_error(const Tensor& analytic, const Tensor& numeric, double floor) {
  if (analytic.shape() != numeric.shape()) {
    throw ShapeError("grad_rel_error: incompatible shapes " + shape_str(analytic.shape()) + " and " +
                     shape_str(numeric.shape()));
  }
  double worst = 0.0;
  for (std::size_t i = 0; i < analytic.numel(); ++i) {
    const double a = analytic[i], n = numeric[i];
    const double denom = std::max({std::abs(a), std::abs(n), floor});
    worst = std::max(worst, std::abs(a - n) / denom);
  }
  return worst;
}

double check_gradients(const VarFn& build, const std::vector<Tensor>& inputs, double h, double floor) {
  std::vector<Tensor> analytic;
  {
    ad::GradTape tape;
    std::vector<ad::Var> leaves;
    for (const auto& t : inputs) leaves.push_back(tape.leaf(t));
    tape.backward(build(leaves));
    for (const auto& v : leaves) analytic.push_back(tape.grad(v));
  }
  double worst = 0.0;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const ScalarFn f = [&](const Tensor& probe) {
      ad::GradTape tape(ad::GradTape::Mode::kInference);
      std::vector<ad::Var> leaves;
      for (std::size_t j = 0; j < inputs.size(); ++j) leaves.push_back(tape.constant(j == i ? probe : inputs[j]));
      return build(leaves).value().item();
    };
    worst = std::max(worst, grad_rel_error(analytic[i], finite_diff_grad(f, inputs[i], h), floor));
  }
  return worst;
}

}  // namespace packenc
