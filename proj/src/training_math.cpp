// Copyright 2026 The packenc Authors
// SPDX-License-Identifier: Apache-2.0

#include "packenc/training_math.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace packenc::losses {

namespace {

void check_temperature(double tau) {
  if (!(tau > 0.0)) throw std::invalid_argument("info_nce: temperature must be positive, got " + std::to_string(tau));
}

void check_alpha(double alpha) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) {
    throw std::invalid_argument("distill_loss: alpha " + std::to_string(alpha) + " outside [0, 1]");
  }
}

Tensor as_matrix(const Tensor& t) { return t.rank() == 1 ? t.reshaped({1, t.numel()}) : t; }

}  // namespace

void ContrastiveBatch::validate() const {
  check_temperature(temperature);
  if (anchors.rank() != 2 || anchors.shape() != positives.shape()) {
    throw ShapeError("ContrastiveBatch: incompatible shapes " + shape_str(anchors.shape()) + " and " +
                     shape_str(positives.shape()));
  }
  for (const Tensor* t : {&anchors, &positives}) {
    const Tensor norms = l2_norm_rows(*t);
    for (std::size_t i = 0; i < norms.numel(); ++i) {
      if (std::abs(norms[i] - 1.0) > 1e-6) {
        throw std::invalid_argument("ContrastiveBatch: row " + std::to_string(i) + " has norm " +
                                    std::to_string(norms[i]) + ", expected unit length");
      }
    }
  }
}

void VideoContrastiveBatch::validate() const {
  if (steps.empty()) throw std::invalid_argument("VideoContrastiveBatch: no frames");
  for (const auto& s : steps) {
    s.validate();
    if (s.anchors.shape() != steps.front().anchors.shape() || s.temperature != steps.front().temperature) {
      throw std::invalid_argument("VideoContrastiveBatch: frames disagree on N, d or temperature");
    }
  }
}

ad::Var info_nce(ad::Var anchors, ad::Var positives, double temperature, InfoNceOptions options) {
  check_temperature(temperature);
  if (anchors.value().rank() != 2 || anchors.shape() != positives.shape()) {
    throw ShapeError("info_nce: incompatible shapes " + shape_str(anchors.shape()) + " and " +
                     shape_str(positives.shape()));
  }
  const std::size_t n = anchors.value().rows();
  const ad::Var parts[] = {anchors, positives};
  const ad::Var candidates = ad::concat_rows(parts);
  ad::Var logits = ad::scale(ad::matmul_nt(anchors, candidates), 1.0 / temperature);
  if (options.exclude_self) {
    Tensor self_mask({n, 2 * n});
    for (std::size_t i = 0; i < n; ++i) self_mask.at(i, i) = -1e30;
    logits = ad::add(logits, anchors.tape()->constant(std::move(self_mask)));
  }
  const ad::Var log_probs = ad::log_softmax_rows(logits);
  std::vector<std::size_t> positive_index(n);
  for (std::size_t i = 0; i < n; ++i) positive_index[i] = i * 2 * n + n + i;
  return ad::scale(ad::sum(ad::gather(log_probs, positive_index, {n})), -1.0);
}

ad::Var video_info_nce(std::span<const ad::Var> anchors, std::span<const ad::Var> positives, double temperature,
                       InfoNceOptions options) {
  if (anchors.empty() || anchors.size() != positives.size()) {
    throw std::invalid_argument("video_info_nce: need one anchor and positive set per frame");
  }
  ad::Var total = info_nce(anchors[0], positives[0], temperature, options);
  for (std::size_t t = 1; t < anchors.size(); ++t) {
    total = ad::add(total, info_nce(anchors[t], positives[t], temperature, options));
  }
  return total;
}

ad::Var cross_entropy(ad::Var logits, std::span<const std::size_t> labels) {
  const Tensor& lv = logits.value();
  if (lv.rank() != 2 || labels.size() != lv.rows()) {
    throw ShapeError("cross_entropy: " + std::to_string(labels.size()) + " labels for logits " +
                     shape_str(lv.shape()));
  }
  const std::size_t classes = lv.cols();
  std::vector<std::size_t> index(labels.size());
  for (std::size_t r = 0; r < labels.size(); ++r) {
    if (labels[r] >= classes) {
      throw std::invalid_argument("cross_entropy: label " + std::to_string(labels[r]) + " outside [0, " +
                                  std::to_string(classes) + ")");
    }
    index[r] = r * classes + labels[r];
  }
  const ad::Var picked = ad::gather(ad::log_softmax_rows(logits), index, {labels.size()});
  return ad::scale(ad::mean(picked), -1.0);
}

ad::Var distill_loss(ad::Var student_logits, const Tensor& teacher_logits, ad::Var student_feat,
                     ad::Var teacher_feat, double alpha) {
  check_alpha(alpha);
  if (student_logits.shape() != teacher_logits.shape() || student_logits.value().rank() != 2) {
    throw ShapeError("distill_loss: logits shapes " + shape_str(student_logits.shape()) + " and " +
                     shape_str(teacher_logits.shape()));
  }
  if (student_feat.shape() != teacher_feat.shape()) {
    throw ShapeError("distill_loss: feature shapes " + shape_str(student_feat.shape()) + " and " +
                     shape_str(teacher_feat.shape()));
  }
  ad::GradTape& tape = *student_logits.tape();
  const std::size_t rows = teacher_logits.rows();
  const ad::Var targets = tape.constant(softmax_rows(teacher_logits));
  const ad::Var ce = ad::scale(ad::sum(ad::mul(targets, ad::log_softmax_rows(student_logits))),
                               -1.0 / static_cast<double>(rows));
  const ad::Var feat = ad::mse(student_feat, teacher_feat);
  return ad::add(ad::scale(ce, alpha), ad::scale(feat, 1.0 - alpha));
}

double info_nce(const ContrastiveBatch& batch, InfoNceOptions options) {
  batch.validate();
  ad::GradTape tape(ad::GradTape::Mode::kInference);
  return info_nce(tape.constant(batch.anchors), tape.constant(batch.positives), batch.temperature, options)
      .value()
      .item();
}

double video_info_nce(const VideoContrastiveBatch& batch, InfoNceOptions options) {
  batch.validate();
  double total = 0.0;
  for (const auto& step : batch.steps) total += info_nce(step, options);
  return total;
}

double cross_entropy(const Tensor& logits, std::span<const std::size_t> labels) {
  ad::GradTape tape(ad::GradTape::Mode::kInference);
  return cross_entropy(tape.constant(as_matrix(logits)), labels).value().item();
}

double distill_loss(const Tensor& student_logits, const Tensor& teacher_logits, const Tensor& student_feat,
                    const Tensor& teacher_feat, double alpha) {
  ad::GradTape tape(ad::GradTape::Mode::kInference);
  return distill_loss(tape.constant(as_matrix(student_logits)), as_matrix(teacher_logits),
                      tape.constant(student_feat), tape.constant(teacher_feat), alpha)
      .value()
      .item();
}

double discounted_return(const RewardTrace& trace) {
  if (!(trace.gamma >= 0.0 && trace.gamma <= 1.0)) {
    throw std::invalid_argument("discounted_return: gamma " + std::to_string(trace.gamma) + " outside [0, 1]");
  }
  double total = 0.0;
  double discount = 1.0;
  for (double r : trace.rewards) {
    if (!std::isfinite(r)) throw std::invalid_argument("discounted_return: non-finite reward");
    total += discount * r;
    discount *= trace.gamma;
  }
  return total;
}

std::vector<bool> rejection_filter(std::span<const double> probs, double epsilon) {
  if (!(epsilon >= 0.0 && epsilon <= 1.0)) {
    throw std::invalid_argument("rejection_filter: epsilon " + std::to_string(epsilon) + " outside [0, 1]");
  }
  std::vector<bool> keep;
  keep.reserve(probs.size());
  for (double p : probs) {
    if (!(p >= 0.0 && p <= 1.0)) {
      throw std::invalid_argument("rejection_filter: probability " + std::to_string(p) + " outside [0, 1]");
    }
    keep.push_back(!(p < epsilon));
  }
  return keep;
}

Tensor lora_apply(const Tensor& w, const Tensor& b, const Tensor& a) {
  if (w.rank() != 2 || b.rank() != 2 || a.rank() != 2 || b.rows() != w.rows() || a.cols() != w.cols() ||
      b.cols() != a.rows()) {
    throw ShapeError("lora_apply: incompatible shapes W" + shape_str(w.shape()) + ", B" + shape_str(b.shape()) +
                     ", A" + shape_str(a.shape()));
  }
  const std::size_t r = b.cols();
  if (r > std::min(w.rows(), w.cols())) {
    throw std::invalid_argument("lora_apply: rank " + std::to_string(r) + " exceeds min" + shape_str(w.shape()));
  }
  return add(w, matmul(b, a));
}

}  // namespace packenc::losses
