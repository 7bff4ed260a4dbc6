// Copyright 2026 The packenc Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "packenc/autodiff.hpp"
#include "packenc/rng.hpp"
#include "packenc/tensor.hpp"

namespace packenc::attention {

/// Positive feature map phi used by the linearized kernel phi(q)^T phi(k).
enum class FeatureMap { kEluPlusOne, kRelu };

std::string to_string(FeatureMap fm);
FeatureMap feature_map_from_string(const std::string& name);

/// Raised when a query's linear-attention normalizer phi(q_i)^T z is zero.
class ZeroNormalizerError : public std::domain_error {
 public:
  ZeroNormalizerError(std::size_t position);
  std::size_t position() const noexcept { return position_; }

 private:
  std::size_t position_;
};

/// Single-head projection weights, all d_model x d_model.
struct AttentionParams {
  std::size_t d_model = 0;
  Tensor w_q, w_k, w_v, w_o;

  static AttentionParams identity(std::size_t d_model);
  /// Normal entries scaled by 1/sqrt(d_model).
  static AttentionParams random(std::size_t d_model, Rng& rng);
  void validate() const;
};

/// n_linear_layers linear-attention layers followed by exactly one softmax
/// layer.
struct HybridStackConfig {
  std::size_t n_linear_layers = 1;
  std::size_t d_model = 0;
  FeatureMap feature_map = FeatureMap::kEluPlusOne;

  void validate() const;
};

/// Segment ids, one per row. An empty span means a single segment.
using SegmentIds = std::span<const std::size_t>;

/// softmax(q k^T / sqrt(d)) v. Positions with mask == 0 get -1e30 added to
/// their score. Throws if any row is fully masked.
Tensor softmax_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                         const std::optional<Tensor>& mask = std::nullopt);

/// Linear-cost path: per segment, S = sum_j phi(k_j) v_j^T and
/// z = sum_j phi(k_j) are accumulated once, then
/// out_i = phi(q_i)^T S / phi(q_i)^T z. O(L d^2).
Tensor linear_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                        FeatureMap fm = FeatureMap::kEluPlusOne, SegmentIds segments = {});

/// Same product associated the other way: materializes the L x L similarity
/// matrix phi(Q) phi(K)^T, zeroes cross-segment entries, row-normalizes, and
/// multiplies by V. O(L^2 d). Test oracle and benchmark baseline.
Tensor linear_attention_quadratic_oracle(const Tensor& q, const Tensor& k, const Tensor& v,
                                         FeatureMap fm = FeatureMap::kEluPlusOne,
                                         SegmentIds segments = {});

/// Applies cfg.n_linear_layers linear layers, then one softmax layer. Each
/// layer projects through w_q/w_k/w_v, attends within segments, and projects
/// through w_o.
Tensor hybrid_stack_forward(const Tensor& x, std::span<const AttentionParams> params,
                            const HybridStackConfig& cfg, SegmentIds segments = {});

// Differentiable counterparts. Each attention op is one tape node with a
// hand-written reverse pass.

struct AttentionVars {
  ad::Var w_q, w_k, w_v, w_o;
};

AttentionVars bind(ad::GradTape& tape, const AttentionParams& p, bool requires_grad);

ad::Var softmax_attention(ad::Var q, ad::Var k, ad::Var v, const std::optional<Tensor>& mask = std::nullopt);
ad::Var linear_attention(ad::Var q, ad::Var k, ad::Var v, FeatureMap fm = FeatureMap::kEluPlusOne,
                         SegmentIds segments = {});

enum class AttentionKind { kLinear, kSoftmax };

/// Projection, attention of the given kind, and output projection. `mask` is
/// used by the softmax kind and must agree with `segments`.
ad::Var attention_layer(ad::Var x, const AttentionVars& p, AttentionKind kind, FeatureMap fm,
                        SegmentIds segments, const std::optional<Tensor>& mask);

ad::Var hybrid_stack_forward(ad::Var x, std::span<const AttentionVars> params, const HybridStackConfig& cfg,
                             SegmentIds segments = {});

}  // namespace packenc::attention
