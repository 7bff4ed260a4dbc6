// Copyright 2026 The packenc Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "packenc/aoe.hpp"
#include "packenc/attention.hpp"
#include "packenc/autodiff.hpp"
#include "packenc/image.hpp"
#include "packenc/packing.hpp"
#include "packenc/serialize.hpp"

namespace packenc::encoder {

enum class Pooling { kMean, kLastToken };

struct AoeConfig {
  std::size_t n_experts = 4;
  std::size_t d_low = 4;
  std::size_t d_ffn = 32;
  std::size_t k_active = 2;
};

/// Encoder hyperparameters. Every field has a default; temperature, lr,
/// batch_size and scale_range default to the published training settings.
struct EncoderConfig {
  std::size_t d_model = 48;
  std::size_t n_layers = 2;
  /// Linear-attention layers before the softmax layer(s); n_layers - 1 when unset.
  std::optional<std::size_t> n_linear_attention_layers;
  AoeConfig aoe;
  /// Layer l gets the full expert bank when l % aoe_interval == 0, otherwise a
  /// single always-selected expert (a plain gated FFN).
  std::size_t aoe_interval = 1;
  attention::FeatureMap feature_map = attention::FeatureMap::kEluPlusOne;
  std::size_t patch_px = 14;
  std::size_t capacity = 256;
  Pooling pool = Pooling::kMean;
  /// Mean pooling also averages the size token.
  bool pool_include_size_token = false;
  /// Dense residual sums start at H_0 (the embedding); false starts at H_1.
  bool residual_include_embedding = true;
  double temperature = 0.07;
  double lr = 2e-5;
  ScaleRange scale_range{0.5, 1.5};
  std::size_t batch_size = 256;
  std::uint64_t seed = 0;

  std::size_t linear_layers() const;
  void validate() const;
  nlohmann::json to_json() const;
  /// Missing keys keep their defaults; unknown keys are rejected.
  static EncoderConfig from_json(const nlohmann::json& j);
};

struct LayerNormParams {
  Tensor gamma, beta;

  static LayerNormParams unit(std::size_t d);
};

struct EncoderLayer {
  attention::AttentionParams attn;
  aoe::ExpertBank ffn;
  LayerNormParams norm_attn, norm_ffn;
};

/// All encoder weights. Sublayer s (attention is 2l, AoE is 2l + 1) owns a
/// residual row alphas[s] of length s + 1 weighting states H_0..H_s.
struct LayerStack {
  Tensor patch_proj;  // patch_px^2 * 3 x d_model
  Tensor patch_bias;  // d_model
  std::vector<EncoderLayer> layers;
  LayerNormParams final_norm;
  std::vector<Tensor> residual_alphas;

  /// Seeded initialization; alphas start at the plain residual (alpha_{s,s} = 1).
  static LayerStack init(const EncoderConfig& cfg);

  /// Every trainable tensor, in a fixed order shared with bind().
  void visit(const std::function<void(const std::string&, const Tensor&)>& fn) const;
  void visit_mut(const std::function<void(const std::string&, Tensor&)>& fn);
  std::vector<NamedTensor> named_tensors() const;
  std::size_t parameter_count() const;

  /// Writes weights.bin, weights.json and weights.crc32 into `dir`.
  void save(const std::filesystem::path& dir) const;
  /// Loads weights written by save() into a stack shaped by `cfg`; verifies
  /// the checksum and every tensor shape.
  static LayerStack load(const std::filesystem::path& dir, const EncoderConfig& cfg);
};

/// Differentiable view of a LayerStack bound to one tape. `params` lists the
/// leaves in LayerStack::visit order.
struct StackVars {
  ad::Var patch_proj, patch_bias;
  struct Layer {
    attention::AttentionVars attn;
    aoe::BankVars ffn;
    ad::Var norm_attn_gamma, norm_attn_beta, norm_ffn_gamma, norm_ffn_beta;
  };
  std::vector<Layer> layers;
  ad::Var final_gamma, final_beta;
  std::vector<ad::Var> alphas;
  std::vector<ad::Var> params;
};

StackVars bind(ad::GradTape& tape, const LayerStack& stack, bool requires_grad);

/// layer_output + sum_i alphas_row[i] * history[i].
Tensor dense_residual_step(const Tensor& layer_output, std::span<const Tensor> history, const Tensor& alphas_row);
ad::Var dense_residual_step(ad::Var layer_output, std::span<const ad::Var> history, ad::Var alphas_row);

/// Non-overlapping patch_px x patch_px patches in row-major order, edge
/// patches zero-padded, each flattened (y, x, channel) into one row.
Tensor extract_patches(const ImageGrid& img, std::size_t patch_px);

/// extract_patches(img) * projection (+ bias).
packing::PatchedImage patchify(const ImageGrid& img, std::size_t patch_px, const Tensor& projection,
                               const std::optional<Tensor>& bias = std::nullopt, std::size_t image_id = 0);

struct ForwardStats {
  std::vector<aoe::AoeStats> aoe_layers;  // one per encoder layer
  std::size_t batches = 0;
  std::size_t packed_rows = 0;

  /// Smallest top-k selection margin over every layer and token.
  double min_selection_margin() const;
};

/// Packs the images, runs every layer on each packed batch, pools each
/// segment and L2-normalizes. Row i of the result belongs to images[i].
ad::Var encode(ad::GradTape& tape, const StackVars& vars, std::span<const ImageGrid> images,
               const EncoderConfig& cfg, ForwardStats* stats = nullptr);

/// Inference form of encode(): N x d_model unit rows in input order.
Tensor encode_images(std::span<const ImageGrid> images, const LayerStack& stack, const EncoderConfig& cfg,
                     ForwardStats* stats = nullptr);

/// Frames are packed like images, one segment per frame. T x d_model.
Tensor encode_video(std::span<const ImageGrid> frames, const LayerStack& stack, const EncoderConfig& cfg);

/// Independent copy of the image encoder's weights.
LayerStack init_video_encoder(const LayerStack& image_stack);

}  // namespace packenc::encoder
