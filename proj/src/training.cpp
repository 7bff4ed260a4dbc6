// Copyright 2026 The packenc Authors
// SPDX-License-Identifier: Apache-2.0

#include "packenc/training.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "packenc/rng.hpp"
#include "packenc/serialize.hpp"
#include "packenc/training_math.hpp"

namespace packenc::train {

void AdamW::update(std::size_t slot, Tensor& param, const Tensor& grad) {
  if (step_ == 0) throw std::logic_error("AdamW::update: call begin_step() first");
  if (param.shape() != grad.shape()) {
    throw ShapeError("AdamW::update: parameter " + shape_str(param.shape()) + " and gradient " +
                     shape_str(grad.shape()));
  }
  if (slot >= m_.size()) {
    m_.resize(slot + 1);
    v_.resize(slot + 1);
  }
  if (m_[slot].numel() == 0) {
    m_[slot] = Tensor::zeros(param.shape());
    v_[slot] = Tensor::zeros(param.shape());
  } else if (m_[slot].shape() != param.shape()) {
    throw ShapeError("AdamW::update: slot " + std::to_string(slot) + " changed shape from " +
                     shape_str(m_[slot].shape()) + " to " + shape_str(param.shape()));
  }
  const double c1 = 1.0 - std::pow(options_.beta1, static_cast<double>(step_));
  const double c2 = 1.0 - std::pow(options_.beta2, static_cast<double>(step_));
  auto p = param.data();
  auto m = m_[slot].data();
  auto v = v_[slot].data();
  const auto g = grad.data();
  for (std::size_t i = 0; i < p.size(); ++i) {
    m[i] = options_.beta1 * m[i] + (1.0 - options_.beta1) * g[i];
    v[i] = options_.beta2 * v[i] + (1.0 - options_.beta2) * g[i] * g[i];
    p[i] -= lr_ * options_.weight_decay * p[i];
    p[i] -= lr_ * (m[i] / c1) / (std::sqrt(v[i] / c2) + options_.eps);
  }
}

void apply_update(AdamW& opt, encoder::LayerStack& stack, std::span<const Tensor> grads, std::size_t first_slot) {
  std::size_t i = 0;
  stack.visit_mut([&](const std::string& name, Tensor& p) {
    if (i >= grads.size()) throw std::invalid_argument("apply_update: no gradient for " + name);
    opt.update(first_slot + i, p, grads[i]);
    ++i;
  });
  if (i != grads.size()) throw std::invalid_argument("apply_update: more gradients than parameters");
}

ContrastivePairs make_toy_pairs(std::uint64_t seed, std::size_t n_pairs, encoder::ScaleRange range,
                                std::size_t min_px, std::size_t max_px) {
  if (min_px == 0 || min_px > max_px) throw std::invalid_argument("make_toy_pairs: invalid size range");
  Rng rng(seed);
  ContrastivePairs pairs;
  for (std::size_t i = 0; i < n_pairs; ++i) {
    const std::size_t h = min_px + rng.below(max_px - min_px + 1);
    const std::size_t w = min_px + rng.below(max_px - min_px + 1);
    pairs.anchors.push_back(encoder::make_shape_image(rng, h, w));
    pairs.positives.push_back(encoder::random_uniform_scale(pairs.anchors.back(), rng, range));
  }
  return pairs;
}

namespace {

void check_pairs(const ContrastivePairs& pairs) {
  if (pairs.anchors.size() != pairs.positives.size()) {
    throw std::invalid_argument("contrastive: anchors and positives differ in count");
  }
  if (pairs.size() < 2) throw std::invalid_argument("contrastive: need at least two pairs");
}

}  // namespace

double evaluate_contrastive_loss(const encoder::LayerStack& stack, const ContrastivePairs& pairs,
                                 const encoder::EncoderConfig& cfg) {
  check_pairs(pairs);
  const Tensor za = encoder::encode_images(pairs.anchors, stack, cfg);
  const Tensor zp = encoder::encode_images(pairs.positives, stack, cfg);
  ad::GradTape tape(ad::GradTape::Mode::kInference);
  return losses::info_nce(tape.constant(za), tape.constant(zp), cfg.temperature).value().item();
}

double contrastive_train_step(encoder::LayerStack& stack, AdamW& opt, const ContrastivePairs& pairs,
                              const encoder::EncoderConfig& cfg) {
  check_pairs(pairs);
  ad::GradTape tape;
  const encoder::StackVars vars = encoder::bind(tape, stack, true);
  const ad::Var za = encoder::encode(tape, vars, pairs.anchors, cfg);
  const ad::Var zp = encoder::encode(tape, vars, pairs.positives, cfg);
  const ad::Var loss = losses::info_nce(za, zp, cfg.temperature);
  tape.backward(loss);
  std::vector<Tensor> grads;
  grads.reserve(vars.params.size());
  for (const auto& p : vars.params) grads.push_back(tape.grad(p));
  opt.begin_step();
  apply_update(opt, stack, grads);
  return loss.value().item();
}

SyntheticTeacher::SyntheticTeacher(std::size_t patch_px, Tensor w_feat, Tensor w_cls)
    : patch_px_(patch_px), w_feat_(std::move(w_feat)), w_cls_(std::move(w_cls)) {
  const std::size_t patch_dim = patch_px_ * patch_px_ * encoder::ImageGrid::kChannels;
  if (w_feat_.rank() != 2 || w_feat_.rows() != patch_dim || w_cls_.rank() != 2 || w_cls_.rows() != w_feat_.cols()) {
    throw ShapeError("SyntheticTeacher: w_feat " + shape_str(w_feat_.shape()) + " and w_cls " +
                     shape_str(w_cls_.shape()) + " for patch " + std::to_string(patch_px_));
  }
}

SyntheticTeacher SyntheticTeacher::random(std::size_t patch_px, std::size_t feature_dim, std::size_t classes,
                                          std::uint64_t seed) {
  Rng rng(seed);
  const std::size_t patch_dim = patch_px * patch_px * encoder::ImageGrid::kChannels;
  Tensor w_feat = rng.normal_tensor({patch_dim, feature_dim}, 1.0 / std::sqrt(static_cast<double>(patch_dim)));
  Tensor w_cls = rng.normal_tensor({feature_dim, classes}, 1.0 / std::sqrt(static_cast<double>(feature_dim)));
  return {patch_px, std::move(w_feat), std::move(w_cls)};
}

TeacherOutput SyntheticTeacher::predict(std::span<const encoder::ImageGrid> images) const {
  if (images.empty()) throw std::invalid_argument("SyntheticTeacher::predict: no images");
  Tensor features({images.size(), feature_dim()});
  for (std::size_t i = 0; i < images.size(); ++i) {
    const Tensor patches = encoder::extract_patches(images[i], patch_px_);
    Tensor mean_patch({1, patches.cols()});
    for (std::size_t r = 0; r < patches.rows(); ++r)
      for (std::size_t c = 0; c < patches.cols(); ++c) mean_patch[c] += patches.at(r, c);
    const Tensor f = matmul(scale(mean_patch, 1.0 / static_cast<double>(patches.rows())), w_feat_);
    for (std::size_t c = 0; c < f.cols(); ++c) features.at(i, c) = f[c];
  }
  Tensor logits = matmul(features, w_cls_);
  return {std::move(logits), std::move(features)};
}

void SyntheticTeacher::save(const std::filesystem::path& dir, const std::string& stem) const {
  std::filesystem::create_directories(dir);
  const NamedTensor tensors[] = {{"patch_px", Tensor::scalar(static_cast<double>(patch_px_))},
                                 {"w_feat", w_feat_},
                                 {"w_cls", w_cls_}};
  write_tensor_file(dir, stem, tensors);
}

namespace {

const Tensor& find_tensor(const std::vector<NamedTensor>& ts, const std::string& name, const std::string& who) {
  for (const auto& t : ts)
    if (t.name == name) return t.tensor;
  throw std::runtime_error(who + ": tensor '" + name + "' missing");
}

}  // namespace

SyntheticTeacher SyntheticTeacher::load(const std::filesystem::path& dir, const std::string& stem) {
  const auto ts = read_tensor_file(dir, stem);
  const double p = find_tensor(ts, "patch_px", "SyntheticTeacher::load").item();
  return {static_cast<std::size_t>(p), find_tensor(ts, "w_feat", "SyntheticTeacher::load"),
          find_tensor(ts, "w_cls", "SyntheticTeacher::load")};
}

FileTeacher::FileTeacher(Tensor logits, Tensor features) : logits_(std::move(logits)), features_(std::move(features)) {
  if (logits_.rank() != 2 || features_.rank() != 2 || logits_.rows() != features_.rows()) {
    throw ShapeError("FileTeacher: logits " + shape_str(logits_.shape()) + " and features " +
                     shape_str(features_.shape()));
  }
}

FileTeacher FileTeacher::load(const std::filesystem::path& dir, const std::string& stem) {
  const auto ts = read_tensor_file(dir, stem);
  return {find_tensor(ts, "logits", "FileTeacher::load"), find_tensor(ts, "features", "FileTeacher::load")};
}

TeacherOutput FileTeacher::predict(std::span<const encoder::ImageGrid> images) const {
  const std::size_t n = images.size();
  if (n == 0 || n > logits_.rows()) {
    throw std::invalid_argument("FileTeacher::predict: " + std::to_string(n) + " images for " +
                                std::to_string(logits_.rows()) + " stored targets");
  }
  auto head = [n](const Tensor& t) {
    std::vector<double> rows(t.data().begin(), t.data().begin() + static_cast<std::ptrdiff_t>(n * t.cols()));
    return Tensor({n, t.cols()}, std::move(rows));
  };
  return {head(logits_), head(features_)};
}

DistillHead DistillHead::random(std::size_t d_model, const Teacher& teacher, std::uint64_t seed) {
  Rng rng(seed);
  const double s = 1.0 / std::sqrt(static_cast<double>(d_model));
  return {rng.normal_tensor({d_model, teacher.classes()}, s), rng.normal_tensor({d_model, teacher.feature_dim()}, s)};
}

double distill_train_step(encoder::LayerStack& stack, DistillHead& head, AdamW& opt,
                          std::span<const encoder::ImageGrid> images, const Teacher& teacher,
                          const encoder::EncoderConfig& cfg, double alpha) {
  const TeacherOutput target = teacher.predict(images);
  ad::GradTape tape;
  const encoder::StackVars vars = encoder::bind(tape, stack, true);
  const ad::Var w_cls = tape.leaf(head.w_cls);
  const ad::Var w_feat = tape.leaf(head.w_feat);
  const ad::Var z = encoder::encode(tape, vars, images, cfg);
  const ad::Var loss = losses::distill_loss(ad::matmul(z, w_cls), target.logits, ad::matmul(z, w_feat),
                                            tape.constant(target.features), alpha);
  tape.backward(loss);
  std::vector<Tensor> grads;
  for (const auto& p : vars.params) grads.push_back(tape.grad(p));
  opt.begin_step();
  apply_update(opt, stack, grads);
  opt.update(grads.size(), head.w_cls, tape.grad(w_cls));
  opt.update(grads.size() + 1, head.w_feat, tape.grad(w_feat));
  return loss.value().item();
}

}  // namespace packenc::train
