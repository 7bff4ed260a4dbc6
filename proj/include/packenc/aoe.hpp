// Copyright 2026 The packenc Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "packenc/autodiff.hpp"
#include "packenc/rng.hpp"
#include "packenc/tensor.hpp"

// Autonomy-of-Experts: a router-free mixture of experts. Every expert's gate
// projection is factorized as w_down * w_up; the down-projections of all
// experts are evaluated together (the activation cache), the per-expert norms
// of that cache pick the top-k experts, and only those experts finish the
// forward pass, reusing their cached rows.

namespace packenc::aoe {

struct ExpertWeights {
  Tensor w_down;  // d_model x d_low
  Tensor w_up;    // d_low x d_ffn
  Tensor w_p;     // d_model x d_ffn
  Tensor w_o;     // d_ffn x d_model

  std::size_t d_model() const { return w_down.rows(); }
  std::size_t d_low() const { return w_down.cols(); }
  std::size_t d_ffn() const { return w_p.cols(); }

  static ExpertWeights random(std::size_t d_model, std::size_t d_low, std::size_t d_ffn, Rng& rng);
  /// Throws ShapeError on inconsistent shapes or d_low >= d_model.
  void validate() const;
};

/// Immutable set of experts plus the column-concatenated down-projection
/// [w_down^0, ..., w_down^{n-1}], built eagerly and rebuilt on every mutation.
class ExpertBank {
 public:
  ExpertBank(std::vector<ExpertWeights> experts, std::size_t k_active);

  static ExpertBank random(std::size_t n_experts, std::size_t d_model, std::size_t d_low, std::size_t d_ffn,
                           std::size_t k_active, Rng& rng);

  std::size_t n_experts() const noexcept { return experts_.size(); }
  std::size_t k_active() const noexcept { return k_active_; }
  std::size_t d_model() const { return experts_.front().d_model(); }
  std::size_t d_low() const { return experts_.front().d_low(); }
  std::size_t d_ffn() const { return experts_.front().d_ffn(); }

  const std::vector<ExpertWeights>& experts() const noexcept { return experts_; }
  const ExpertWeights& expert(std::size_t i) const { return experts_.at(i); }
  const Tensor& combined_down() const noexcept { return combined_down_; }

  void set_expert(std::size_t i, ExpertWeights w);
  /// Runs `fn` on the mutable expert list, then re-validates and rebuilds
  /// combined_down.
  template <typename Fn>
  void update_experts(Fn&& fn) {
    fn(experts_);
    rebuild();
  }

 private:
  void rebuild();

  std::vector<ExpertWeights> experts_;
  std::size_t k_active_;
  Tensor combined_down_;
};

struct Selection {
  std::vector<std::size_t> indices;  // descending norm, ties by ascending index
  Tensor weights;                    // softmax over the selected norms
};

/// Selection counts, counted multiply-adds, and the smallest gap between the
/// k-th and (k+1)-th expert norm seen by any token (infinite when k == n).
struct AoeStats {
  std::vector<std::uint64_t> selection_counts;
  std::uint64_t multiply_adds = 0;
  std::uint64_t tokens = 0;
  double min_selection_margin = std::numeric_limits<double>::infinity();

  nlohmann::json to_json() const;
};

/// (SiLU(x w_down w_up) * (x w_p)) w_o for a single d_model vector.
Tensor expert_forward(const Tensor& x, const ExpertWeights& e);

/// x * combined_down reshaped to n x d_low.
Tensor activation_cache(const Tensor& x, const ExpertBank& bank);

/// Top-k rows of `cache` by Euclidean norm, weighted by a softmax over the
/// selected norms. Throws std::invalid_argument unless 1 <= k <= n.
Selection select_experts(const Tensor& cache, std::size_t k);

Tensor aoe_forward(const Tensor& x, const ExpertBank& bank, AoeStats* stats = nullptr);
/// Row-wise aoe_forward; each token selects its own experts.
Tensor aoe_forward_batch(const Tensor& xs, const ExpertBank& bank, AoeStats* stats = nullptr);

/// Multiply-adds per token with the cache: n*d*d_low + k*(d_low*d_ffn + 2*d*d_ffn).
std::uint64_t cached_multiply_adds(std::size_t n, std::size_t d_model, std::size_t d_low, std::size_t d_ffn,
                                   std::size_t k);
/// Multiply-adds per token when every expert runs to completion.
std::uint64_t all_expert_multiply_adds(std::size_t n, std::size_t d_model, std::size_t d_low, std::size_t d_ffn);

struct ExpertVars {
  ad::Var w_down, w_up, w_p, w_o;
};

struct BankVars {
  std::vector<ExpertVars> experts;
  ad::Var combined_down;
  std::size_t k_active = 1;
};

/// Leaves for every expert weight. When the tape records gradients the
/// combined down-projection is a concatenation of the per-expert leaves, so
/// gradients reach each w_down; otherwise the bank's cached matrix is used.
BankVars bind(ad::GradTape& tape, const ExpertBank& bank, bool requires_grad);

/// Differentiable layer over L x d_model tokens. Selection is read from the
/// forward values and held constant in the reverse pass; unselected experts
/// receive zero gradient.
ad::Var aoe_forward(ad::Var xs, const BankVars& bank, AoeStats* stats = nullptr);

}  // namespace packenc::aoe
