// Copyright 2026 The packenc Authors
// SPDX-License-Identifier: Apache-2.0

#include "packenc/oracles.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace packenc::oracle {

Matrix to_matrix(const Tensor& t) {
  const std::size_t r = t.rank() == 1 ? 1 : t.rows();
  const std::size_t c = t.rank() == 1 ? t.numel() : t.cols();
  Matrix m(r, std::vector<double>(c));
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) m[i][j] = t[i * c + j];
  return m;
}

namespace {

// row vector times matrix
std::vector<double> vecmat(std::span<const double> x, const Tensor& w) {
  const std::size_t n = w.cols();
  std::vector<double> out(n, 0.0);
  for (std::size_t j = 0; j < n; ++j) {
    double acc = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) acc += x[i] * w.at(i, j);
    out[j] = acc;
  }
  return out;
}

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

}  // namespace

std::vector<double> down_projection(std::span<const double> x, const aoe::ExpertWeights& e) {
  return vecmat(x, e.w_down);
}

std::vector<double> aoe_all_experts(std::span<const double> x, const aoe::ExpertBank& bank) {
  const std::size_t n = bank.n_experts();
  std::vector<std::vector<double>> outputs(n);
  std::vector<double> norms(n);
  for (std::size_t e = 0; e < n; ++e) {
    const auto& w = bank.expert(e);
    const auto low = vecmat(x, w.w_down);
    norms[e] = std::sqrt(dot(low, low));
    auto gate = vecmat(low, w.w_up);
    for (double& g : gate) g = g / (1.0 + std::exp(-g));
    auto value = vecmat(x, w.w_p);
    for (std::size_t j = 0; j < gate.size(); ++j) value[j] *= gate[j];
    outputs[e] = vecmat(value, w.w_o);
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return norms[a] > norms[b] || (norms[a] == norms[b] && a < b);
  });
  const std::size_t k = bank.k_active();
  double top = norms[order[0]];
  double denom = 0.0;
  for (std::size_t i = 0; i < k; ++i) denom += std::exp(norms[order[i]] - top);
  std::vector<double> h(x.size(), 0.0);
  for (std::size_t i = 0; i < k; ++i) {
    const double w = std::exp(norms[order[i]] - top) / denom;
    for (std::size_t j = 0; j < h.size(); ++j) h[j] += w * outputs[order[i]][j];
  }
  return h;
}

double info_nce(const Matrix& anchors, const Matrix& positives, double tau, bool exclude_self) {
  const std::size_t n = anchors.size();
  double loss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double denom = 0.0;
    for (std::size_t j = 0; j < 2 * n; ++j) {
      if (exclude_self && j == i) continue;
      const auto& c = j < n ? anchors[j] : positives[j - n];
      denom += std::exp(dot(anchors[i], c) / tau);
    }
    loss -= std::log(std::exp(dot(anchors[i], positives[i]) / tau) / denom);
  }
  return loss;
}

double cross_entropy(const Matrix& logits, std::span<const std::size_t> labels) {
  double total = 0.0;
  for (std::size_t r = 0; r < logits.size(); ++r) {
    double denom = 0.0;
    for (double l : logits[r]) denom += std::exp(l);
    total -= std::log(std::exp(logits[r][labels[r]]) / denom);
  }
  return total / static_cast<double>(logits.size());
}

double soft_cross_entropy(const Matrix& student, const Matrix& teacher) {
  double total = 0.0;
  for (std::size_t r = 0; r < student.size(); ++r) {
    double zs = 0.0, zt = 0.0;
    for (double l : student[r]) zs += std::exp(l);
    for (double l : teacher[r]) zt += std::exp(l);
    for (std::size_t c = 0; c < student[r].size(); ++c) {
      total -= std::exp(teacher[r][c]) / zt * std::log(std::exp(student[r][c]) / zs);
    }
  }
  return total / static_cast<double>(student.size());
}

double mean_squared_error(const Matrix& a, const Matrix& b) {
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t r = 0; r < a.size(); ++r) {
    for (std::size_t c = 0; c < a[r].size(); ++c) {
      const double d = a[r][c] - b[r][c];
      total += d * d;
      ++count;
    }
  }
  return total / static_cast<double>(count);
}

}  // namespace packenc::oracle
