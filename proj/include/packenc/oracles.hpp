// Copyright 2026 The packenc Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "packenc/aoe.hpp"
#include "packenc/tensor.hpp"

// Reference implementations written with explicit loops over raw values.
// They share no kernels with the library paths they are compared against.

namespace packenc::oracle {

using Matrix = std::vector<std::vector<double>>;

Matrix to_matrix(const Tensor& t);

/// Runs every expert to completion, ranks experts by ||x w_down^i||, and
/// softmax-weights the top k (ties to the lower index).
std::vector<double> aoe_all_experts(std::span<const double> x, const aoe::ExpertBank& bank);

/// x w_down^i for one expert.
std::vector<double> down_projection(std::span<const double> x, const aoe::ExpertWeights& e);

/// -sum_i log(exp(a_i . p_i / tau) / sum_j exp(a_i . c_j / tau)) over c = [a; p].
double info_nce(const Matrix& anchors, const Matrix& positives, double tau, bool exclude_self = false);

/// Mean over rows of -log(exp(l[y]) / sum exp(l)).
double cross_entropy(const Matrix& logits, std::span<const std::size_t> labels);

/// Mean over rows of -sum_c softmax(teacher)_c * log softmax(student)_c.
double soft_cross_entropy(const Matrix& student, const Matrix& teacher);

double mean_squared_error(const Matrix& a, const Matrix& b);

}  // namespace packenc::oracle
