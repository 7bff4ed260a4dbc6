// Copyright 2026 The packenc Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "packenc/autodiff.hpp"
#include "packenc/tensor.hpp"

namespace packenc::losses {

/// Anchor and positive features, one unit-length row per sample.
struct ContrastiveBatch {
  Tensor anchors;    // N x d
  Tensor positives;  // N x d
  double temperature = 0.07;

  /// Shapes agree, temperature > 0, every row has unit norm within 1e-6.
  void validate() const;
};

struct VideoContrastiveBatch {
  std::vector<ContrastiveBatch> steps;  // one per frame, shared N, d, tau

  void validate() const;
};

struct RewardTrace {
  std::vector<double> rewards;
  double gamma = 1.0;
};

struct InfoNceOptions {
  /// Drop the j == i self-similarity from the denominator (SimCLR variant).
  bool exclude_self = false;
};

/// -sum_i log( exp(s(z_i, z_i+)/tau) / sum_{j<2N} exp(s(z_i, c_j)/tau) ),
/// where c = [anchors; positives] and s is the dot product. The denominator
/// includes j == i unless options.exclude_self.
double info_nce(const ContrastiveBatch& batch, InfoNceOptions options = {});

/// Sum of info_nce over frames.
double video_info_nce(const VideoContrastiveBatch& batch, InfoNceOptions options = {});

/// Mean over rows of -log softmax(logits)[label].
double cross_entropy(const Tensor& logits, std::span<const std::size_t> labels);

/// alpha * CE(student, softmax(teacher)) + (1 - alpha) * MSE(features).
double distill_loss(const Tensor& student_logits, const Tensor& teacher_logits, const Tensor& student_feat,
                    const Tensor& teacher_feat, double alpha);

/// sum_t gamma^t r_t.
double discounted_return(const RewardTrace& trace);

/// keep[i] = probs[i] >= epsilon; a sample is rejected only when strictly
/// below the threshold.
std::vector<bool> rejection_filter(std::span<const double> probs, double epsilon);

/// w + b * a, leaving w untouched. Requires rank(b * a) = r <= min(p, q).
Tensor lora_apply(const Tensor& w, const Tensor& b, const Tensor& a);

// Differentiable forms. These skip the unit-norm check so callers can feed
// raw features through ad::normalize_rows first.

ad::Var info_nce(ad::Var anchors, ad::Var positives, double temperature, InfoNceOptions options = {});
ad::Var video_info_nce(std::span<const ad::Var> anchors, std::span<const ad::Var> positives, double temperature,
                       InfoNceOptions options = {});
ad::Var cross_entropy(ad::Var logits, std::span<const std::size_t> labels);
/// Teacher logits are a constant target distribution after softmax.
ad::Var distill_loss(ad::Var student_logits, const Tensor& teacher_logits, ad::Var student_feat,
                     ad::Var teacher_feat, double alpha);

}  // namespace packenc::losses
