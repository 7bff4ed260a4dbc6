// Copyright 2026 The packenc Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <functional>
#include <span>
#include <vector>

#include "packenc/autodiff.hpp"
#include "packenc/tensor.hpp"

namespace packenc {

using ScalarFn = std::function<double(const Tensor&)>;

/// Central-difference gradient (f(x + h e_i) - f(x - h e_i)) / 2h for every
/// coordinate of x. Touches nothing but `f`, so it stays independent of the
/// reverse pass it is used to check.
Tensor finite_diff_grad(const ScalarFn& f, const Tensor& x, double h = 1e-5);

/// Elementwise relative error max_i |a_i - n_i| / max(|a_i|, |n_i|, floor).
/// The floor keeps near-zero components from dominating the ratio.
double grad_rel_error(const Tensor& analytic, const Tensor& numeric, double floor = 1e-5);

/// Builds a scalar from leaves bound to `inputs` (same order).
using VarFn = std::function<ad::Var(std::span<const ad::Var>)>;

/// Worst grad_rel_error between the reverse pass and finite_diff_grad over
/// every input of `build`.
double check_gradients(const VarFn& build, const std::vector<Tensor>& inputs, double h = 1e-5,
                       double floor = 1e-5);

}  // namespace packenc
