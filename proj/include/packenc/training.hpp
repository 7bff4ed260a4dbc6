// Copyright 2026 The packenc Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <vector>

#include "packenc/encoder.hpp"
#include "packenc/tensor.hpp"

namespace packenc::train {

struct AdamWOptions {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

/// AdamW with decoupled weight decay. Parameters are addressed by slot; the
/// moment buffers of a slot are created on first use and must keep their
/// shape afterwards.
class AdamW {
 public:
  explicit AdamW(double lr, AdamWOptions options = {}) : lr_(lr), options_(options) {}

  /// Advances the step counter used for bias correction.
  void begin_step() { ++step_; }
  void update(std::size_t slot, Tensor& param, const Tensor& grad);

  double lr() const noexcept { return lr_; }
  std::uint64_t steps() const noexcept { return step_; }

 private:
  double lr_;
  AdamWOptions options_;
  std::uint64_t step_ = 0;
  std::vector<Tensor> m_, v_;
};

/// One update of every stack parameter, grads in LayerStack::visit order.
/// `first_slot` offsets the optimizer slots so extra heads can share `opt`.
void apply_update(AdamW& opt, encoder::LayerStack& stack, std::span<const Tensor> grads, std::size_t first_slot = 0);

struct ContrastivePairs {
  std::vector<encoder::ImageGrid> anchors;
  std::vector<encoder::ImageGrid> positives;

  std::size_t size() const { return anchors.size(); }
};

/// Shape images with sides drawn from [min_px, max_px]; each positive is a
/// random_uniform_scale of its anchor over `range`.
ContrastivePairs make_toy_pairs(std::uint64_t seed, std::size_t n_pairs, encoder::ScaleRange range = {},
                                std::size_t min_px = 20, std::size_t max_px = 36);

/// info_nce between the two encoded views, without touching the stack.
double evaluate_contrastive_loss(const encoder::LayerStack& stack, const ContrastivePairs& pairs,
                                 const encoder::EncoderConfig& cfg);

/// Forward both views, info_nce, backward, one AdamW update. Returns the loss
/// before the update. Requires at least two pairs.
double contrastive_train_step(encoder::LayerStack& stack, AdamW& opt, const ContrastivePairs& pairs,
                              const encoder::EncoderConfig& cfg);

struct TeacherOutput {
  Tensor logits;    // N x classes
  Tensor features;  // N x d_teacher
};

/// Frozen source of distillation targets.
class Teacher {
 public:
  virtual ~Teacher() = default;
  virtual std::size_t classes() const = 0;
  virtual std::size_t feature_dim() const = 0;
  virtual TeacherOutput predict(std::span<const encoder::ImageGrid> images) const = 0;
};

/// Random frozen teacher: features are the mean patch vector times w_feat,
/// logits are features times w_cls.
class SyntheticTeacher : public Teacher {
 public:
  SyntheticTeacher(std::size_t patch_px, Tensor w_feat, Tensor w_cls);
  static SyntheticTeacher random(std::size_t patch_px, std::size_t feature_dim, std::size_t classes,
                                 std::uint64_t seed);

  std::size_t classes() const override { return w_cls_.cols(); }
  std::size_t feature_dim() const override { return w_feat_.cols(); }
  TeacherOutput predict(std::span<const encoder::ImageGrid> images) const override;

  /// `<stem>.bin` / `<stem>.json` in the tensor manifest format.
  void save(const std::filesystem::path& dir, const std::string& stem) const;
  static SyntheticTeacher load(const std::filesystem::path& dir, const std::string& stem);

 private:
  std::size_t patch_px_;
  Tensor w_feat_, w_cls_;
};

/// Precomputed targets read from a tensor file holding "logits" and
/// "features"; predict() returns the first N rows for N images.
class FileTeacher : public Teacher {
 public:
  static FileTeacher load(const std::filesystem::path& dir, const std::string& stem);
  FileTeacher(Tensor logits, Tensor features);

  std::size_t classes() const override { return logits_.cols(); }
  std::size_t feature_dim() const override { return features_.cols(); }
  TeacherOutput predict(std::span<const encoder::ImageGrid> images) const override;

 private:
  Tensor logits_, features_;
};

/// Student heads mapping encoder features to teacher logits and features.
struct DistillHead {
  Tensor w_cls;   // d_model x classes
  Tensor w_feat;  // d_model x d_teacher

  static DistillHead random(std::size_t d_model, const Teacher& teacher, std::uint64_t seed);
};

/// distill_loss(student, teacher) on one image batch, backward, one AdamW
/// update of the stack and the head. Returns the loss before the update.
double distill_train_step(encoder::LayerStack& stack, DistillHead& head, AdamW& opt,
                          std::span<const encoder::ImageGrid> images, const Teacher& teacher,
                          const encoder::EncoderConfig& cfg, double alpha);

}  // namespace packenc::train
