// Copyright 2026 The packenc Authors
// SPDX-License-Identifier: Apache-2.0

#include "packenc/encoder.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <limits>
#include <stdexcept>
#include <type_traits>

namespace packenc::encoder {

namespace {

const char* pooling_name(Pooling p) { return p == Pooling::kMean ? "mean" : "last_token"; }

Pooling pooling_from_string(const std::string& s) {
  if (s == "mean") return Pooling::kMean;
  if (s == "last_token") return Pooling::kLastToken;
  throw std::invalid_argument("EncoderConfig: unknown pool '" + s + "' (expected mean or last_token)");
}

void require(bool ok, const std::string& msg) {
  if (!ok) throw std::invalid_argument("EncoderConfig: " + msg);
}

std::string layer_prefix(std::size_t l) { return "layer" + std::to_string(l) + "."; }

}  // namespace

std::size_t EncoderConfig::linear_layers() const {
  return n_linear_attention_layers.value_or(n_layers == 0 ? 0 : n_layers - 1);
}

void EncoderConfig::validate() const {
  require(d_model >= 2 && d_model % 2 == 0, "d_model must be even and >= 2, got " + std::to_string(d_model));
  require(n_layers >= 1, "n_layers must be >= 1");
  require(linear_layers() < n_layers, "n_linear_attention_layers must be below n_layers");
  require(aoe.n_experts >= 1, "aoe.n_experts must be >= 1");
  require(aoe.k_active >= 1 && aoe.k_active <= aoe.n_experts, "aoe.k_active must lie in [1, n_experts]");
  require(aoe.d_low >= 1 && aoe.d_low < d_model, "aoe.d_low must lie in [1, d_model)");
  require(aoe.d_ffn >= 1, "aoe.d_ffn must be >= 1");
  require(aoe_interval >= 1, "aoe_interval must be >= 1");
  require(patch_px >= 1, "patch_px must be >= 1");
  require(capacity >= 2, "capacity must be >= 2");
  require(temperature > 0.0, "temperature must be positive");
  require(lr >= 0.0 && std::isfinite(lr), "lr must be finite and non-negative");
  require(scale_range.lo > 0.0 && scale_range.lo <= scale_range.hi, "scale_range needs 0 < lo <= hi");
  require(batch_size >= 1, "batch_size must be >= 1");
}

nlohmann::json EncoderConfig::to_json() const {
  nlohmann::json j;
  j["d_model"] = d_model;
  j["n_layers"] = n_layers;
  if (n_linear_attention_layers) j["n_linear_attention_layers"] = *n_linear_attention_layers;
  j["aoe"] = {{"n_experts", aoe.n_experts}, {"d_low", aoe.d_low}, {"d_ffn", aoe.d_ffn}, {"k_active", aoe.k_active}};
  j["aoe_interval"] = aoe_interval;
  j["feature_map"] = attention::to_string(feature_map);
  j["patch_px"] = patch_px;
  j["capacity"] = capacity;
  j["pool"] = pooling_name(pool);
  j["pool_include_size_token"] = pool_include_size_token;
  j["residual_include_embedding"] = residual_include_embedding;
  j["temperature"] = temperature;
  j["lr"] = lr;
  j["scale_range"] = {scale_range.lo, scale_range.hi};
  j["batch_size"] = batch_size;
  j["seed"] = seed;
  return j;
}

EncoderConfig EncoderConfig::from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw std::invalid_argument("EncoderConfig: expected a JSON object");
  static const std::set<std::string> known = {
      "d_model",  "n_layers", "n_linear_attention_layers", "aoe",         "aoe_interval",
      "feature_map", "patch_px", "capacity", "pool", "pool_include_size_token", "residual_include_embedding",
      "temperature", "lr",       "scale_range", "batch_size", "seed"};
  for (const auto& [key, _] : j.items()) {
    if (!known.count(key)) throw std::invalid_argument("EncoderConfig: unknown key '" + key + "'");
  }
  EncoderConfig c;
  auto get = [&j](const char* key, auto& field) {
    if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
  };
  get("d_model", c.d_model);
  get("n_layers", c.n_layers);
  if (j.contains("n_linear_attention_layers") && !j.at("n_linear_attention_layers").is_null()) {
    c.n_linear_attention_layers = j.at("n_linear_attention_layers").get<std::size_t>();
  }
  if (j.contains("aoe")) {
    const auto& a = j.at("aoe");
    for (const auto& [key, _] : a.items()) {
      if (key != "n_experts" && key != "d_low" && key != "d_ffn" && key != "k_active") {
        throw std::invalid_argument("EncoderConfig: unknown key 'aoe." + key + "'");
      }
    }
    if (a.contains("n_experts")) c.aoe.n_experts = a.at("n_experts").get<std::size_t>();
    if (a.contains("d_low")) c.aoe.d_low = a.at("d_low").get<std::size_t>();
    if (a.contains("d_ffn")) c.aoe.d_ffn = a.at("d_ffn").get<std::size_t>();
    if (a.contains("k_active")) c.aoe.k_active = a.at("k_active").get<std::size_t>();
  }
  get("aoe_interval", c.aoe_interval);
  if (j.contains("feature_map")) c.feature_map = attention::feature_map_from_string(j.at("feature_map").get<std::string>());
  get("patch_px", c.patch_px);
  get("capacity", c.capacity);
  if (j.contains("pool")) c.pool = pooling_from_string(j.at("pool").get<std::string>());
  get("pool_include_size_token", c.pool_include_size_token);
  get("residual_include_embedding", c.residual_include_embedding);
  get("temperature", c.temperature);
  get("lr", c.lr);
  if (j.contains("scale_range")) {
    const auto& r = j.at("scale_range");
    if (!r.is_array() || r.size() != 2) throw std::invalid_argument("EncoderConfig: scale_range must be [lo, hi]");
    c.scale_range = {r[0].get<double>(), r[1].get<double>()};
  }
  get("batch_size", c.batch_size);
  get("seed", c.seed);
  c.validate();
  return c;
}

LayerNormParams LayerNormParams::unit(std::size_t d) { return {Tensor::ones({d}), Tensor::zeros({d})}; }

LayerStack LayerStack::init(const EncoderConfig& cfg) {
  cfg.validate();
  Rng rng(cfg.seed);
  const std::size_t d = cfg.d_model;
  const std::size_t patch_dim = cfg.patch_px * cfg.patch_px * ImageGrid::kChannels;
  LayerStack s;
  s.patch_proj = rng.normal_tensor({patch_dim, d}, 1.0 / std::sqrt(static_cast<double>(patch_dim)));
  s.patch_bias = Tensor::zeros({d});
  for (std::size_t l = 0; l < cfg.n_layers; ++l) {
    auto attn = attention::AttentionParams::random(d, rng);
    const bool full = l % cfg.aoe_interval == 0;
    auto bank = aoe::ExpertBank::random(full ? cfg.aoe.n_experts : 1, d, cfg.aoe.d_low, cfg.aoe.d_ffn,
                                        full ? cfg.aoe.k_active : 1, rng);
    s.layers.push_back({std::move(attn), std::move(bank), LayerNormParams::unit(d), LayerNormParams::unit(d)});
  }
  s.final_norm = LayerNormParams::unit(d);
  for (std::size_t sub = 0; sub < 2 * cfg.n_layers; ++sub) {
    Tensor row = Tensor::zeros({sub + 1});
    row[sub] = 1.0;
    s.residual_alphas.push_back(std::move(row));
  }
  return s;
}

namespace {

template <typename Stack, typename Fn>
void visit_impl(Stack& s, Fn&& fn) {
  fn("patch_proj", s.patch_proj);
  fn("patch_bias", s.patch_bias);
  for (std::size_t l = 0; l < s.layers.size(); ++l) {
    const std::string p = layer_prefix(l);
    auto& layer = s.layers[l];
    fn(p + "attn.w_q", layer.attn.w_q);
    fn(p + "attn.w_k", layer.attn.w_k);
    fn(p + "attn.w_v", layer.attn.w_v);
    fn(p + "attn.w_o", layer.attn.w_o);
    auto experts_fn = [&](auto& experts) {
      for (std::size_t e = 0; e < experts.size(); ++e) {
        const std::string q = p + "ffn.expert" + std::to_string(e) + ".";
        fn(q + "w_down", experts[e].w_down);
        fn(q + "w_up", experts[e].w_up);
        fn(q + "w_p", experts[e].w_p);
        fn(q + "w_o", experts[e].w_o);
      }
    };
    if constexpr (std::is_const_v<Stack>) {
      experts_fn(layer.ffn.experts());
    } else {
      layer.ffn.update_experts(experts_fn);
    }
    fn(p + "norm_attn.gamma", layer.norm_attn.gamma);
    fn(p + "norm_attn.beta", layer.norm_attn.beta);
    fn(p + "norm_ffn.gamma", layer.norm_ffn.gamma);
    fn(p + "norm_ffn.beta", layer.norm_ffn.beta);
  }
  fn("final_norm.gamma", s.final_norm.gamma);
  fn("final_norm.beta", s.final_norm.beta);
  for (std::size_t i = 0; i < s.residual_alphas.size(); ++i) {
    fn("residual.alpha" + std::to_string(i), s.residual_alphas[i]);
  }
}

}  // namespace

void LayerStack::visit(const std::function<void(const std::string&, const Tensor&)>& fn) const {
  visit_impl(*this, fn);
}

void LayerStack::visit_mut(const std::function<void(const std::string&, Tensor&)>& fn) { visit_impl(*this, fn); }

std::vector<NamedTensor> LayerStack::named_tensors() const {
  std::vector<NamedTensor> out;
  visit([&out](const std::string& name, const Tensor& t) { out.push_back({name, t}); });
  return out;
}

std::size_t LayerStack::parameter_count() const {
  std::size_t n = 0;
  visit([&n](const std::string&, const Tensor& t) { n += t.numel(); });
  return n;
}

void LayerStack::save(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir);
  const auto tensors = named_tensors();
  write_tensor_file(dir, "weights", tensors);
  char hex[9];
  std::snprintf(hex, sizeof hex, "%08x", file_crc32(dir / "weights.bin"));
  std::ofstream out(dir / "weights.crc32");
  out << hex << "  weights.bin\n";
  if (!out) throw std::runtime_error("LayerStack::save: cannot write " + (dir / "weights.crc32").string());
}

LayerStack LayerStack::load(const std::filesystem::path& dir, const EncoderConfig& cfg) {
  std::ifstream crc_in(dir / "weights.crc32");
  std::string expected;
  if (!(crc_in >> expected)) throw std::runtime_error("LayerStack::load: missing " + (dir / "weights.crc32").string());
  char actual[9];
  std::snprintf(actual, sizeof actual, "%08x", file_crc32(dir / "weights.bin"));
  if (expected != actual) {
    throw std::runtime_error("LayerStack::load: checksum mismatch, expected " + expected + " got " + actual);
  }
  std::map<std::string, Tensor> by_name;
  for (auto& nt : read_tensor_file(dir, "weights")) by_name.emplace(nt.name, std::move(nt.tensor));
  LayerStack s = init(cfg);
  std::size_t used = 0;
  s.visit_mut([&](const std::string& name, Tensor& t) {
    auto it = by_name.find(name);
    if (it == by_name.end()) throw std::runtime_error("LayerStack::load: missing tensor " + name);
    if (it->second.shape() != t.shape()) {
      throw ShapeError("LayerStack::load: tensor " + name + " has shape " + shape_str(it->second.shape()) +
                       ", config expects " + shape_str(t.shape()));
    }
    t = it->second;
    ++used;
  });
  if (used != by_name.size()) throw std::runtime_error("LayerStack::load: weight file has unexpected tensors");
  return s;
}

StackVars bind(ad::GradTape& tape, const LayerStack& stack, bool requires_grad) {
  StackVars v;
  auto leaf = [&](const Tensor& t) {
    ad::Var x = tape.leaf(t, requires_grad);
    v.params.push_back(x);
    return x;
  };
  v.patch_proj = leaf(stack.patch_proj);
  v.patch_bias = leaf(stack.patch_bias);
  for (const auto& layer : stack.layers) {
    StackVars::Layer lv;
    lv.attn = attention::bind(tape, layer.attn, requires_grad);
    for (ad::Var x : {lv.attn.w_q, lv.attn.w_k, lv.attn.w_v, lv.attn.w_o}) v.params.push_back(x);
    lv.ffn = aoe::bind(tape, layer.ffn, requires_grad);
    for (const auto& e : lv.ffn.experts) {
      for (ad::Var x : {e.w_down, e.w_up, e.w_p, e.w_o}) v.params.push_back(x);
    }
    lv.norm_attn_gamma = leaf(layer.norm_attn.gamma);
    lv.norm_attn_beta = leaf(layer.norm_attn.beta);
    lv.norm_ffn_gamma = leaf(layer.norm_ffn.gamma);
    lv.norm_ffn_beta = leaf(layer.norm_ffn.beta);
    v.layers.push_back(lv);
  }
  v.final_gamma = leaf(stack.final_norm.gamma);
  v.final_beta = leaf(stack.final_norm.beta);
  for (const auto& a : stack.residual_alphas) v.alphas.push_back(leaf(a));
  return v;
}

Tensor dense_residual_step(const Tensor& layer_output, std::span<const Tensor> history, const Tensor& alphas_row) {
  ad::GradTape tape(ad::GradTape::Mode::kInference);
  std::vector<ad::Var> hs;
  for (const auto& h : history) hs.push_back(tape.constant(h));
  return dense_residual_step(tape.constant(layer_output), hs, tape.constant(alphas_row)).value();
}

ad::Var dense_residual_step(ad::Var layer_output, std::span<const ad::Var> history, ad::Var alphas_row) {
  if (alphas_row.value().numel() != history.size()) {
    throw ShapeError("dense_residual_step: " + std::to_string(history.size()) + " history states for alphas " +
                     shape_str(alphas_row.shape()));
  }
  for (const auto& h : history) {
    if (h.shape() != layer_output.shape()) {
      throw ShapeError("dense_residual_step: history shape " + shape_str(h.shape()) + " vs layer output " +
                       shape_str(layer_output.shape()));
    }
  }
  if (history.empty()) return layer_output;
  return ad::add(layer_output, ad::weighted_sum(alphas_row, history));
}

Tensor extract_patches(const ImageGrid& img, std::size_t patch_px) {
  img.validate();
  if (patch_px == 0) throw std::invalid_argument("extract_patches: patch_px must be positive");
  const std::size_t gy = (img.height_px + patch_px - 1) / patch_px;
  const std::size_t gx = (img.width_px + patch_px - 1) / patch_px;
  const std::size_t cols = patch_px * patch_px * ImageGrid::kChannels;
  Tensor out({gy * gx, cols});
  for (std::size_t py = 0; py < gy; ++py) {
    for (std::size_t px = 0; px < gx; ++px) {
      double* row = out.data().data() + (py * gx + px) * cols;
      for (std::size_t y = 0; y < patch_px; ++y) {
        const std::size_t sy = py * patch_px + y;
        if (sy >= img.height_px) break;
        for (std::size_t x = 0; x < patch_px; ++x) {
          const std::size_t sx = px * patch_px + x;
          if (sx >= img.width_px) break;
          for (std::size_t c = 0; c < ImageGrid::kChannels; ++c) {
            row[(y * patch_px + x) * ImageGrid::kChannels + c] = img.at(sy, sx, c);
          }
        }
      }
    }
  }
  return out;
}

packing::PatchedImage patchify(const ImageGrid& img, std::size_t patch_px, const Tensor& projection,
                               const std::optional<Tensor>& bias, std::size_t image_id) {
  const std::size_t cols = patch_px * patch_px * ImageGrid::kChannels;
  if (projection.rank() != 2 || projection.rows() != cols) {
    throw ShapeError("patchify: projection " + shape_str(projection.shape()) + " does not map " +
                     std::to_string(cols) + " patch values");
  }
  Tensor tokens = matmul(extract_patches(img, patch_px), projection);
  if (bias) {
    if (bias->numel() != projection.cols()) {
      throw ShapeError("patchify: bias " + shape_str(bias->shape()) + " for projection " +
                       shape_str(projection.shape()));
    }
    for (std::size_t r = 0; r < tokens.rows(); ++r)
      for (std::size_t c = 0; c < tokens.cols(); ++c) tokens.at(r, c) += (*bias)[c];
  }
  return {image_id, img.width_px, img.height_px, std::move(tokens)};
}

double ForwardStats::min_selection_margin() const {
  double m = std::numeric_limits<double>::infinity();
  for (const auto& s : aoe_layers) m = std::min(m, s.min_selection_margin);
  return m;
}

namespace {

// Runs every layer on one packed batch and returns the final-normed states.
ad::Var run_layers(ad::GradTape& tape, const StackVars& vars, const packing::PackedBatch& batch, ad::Var h0,
                   const EncoderConfig& cfg, ForwardStats* stats) {
  const std::size_t n_linear = cfg.linear_layers();
  std::optional<Tensor> mask;
  std::vector<ad::Var> history{h0};
  const std::size_t first = cfg.residual_include_embedding ? 0 : 1;
  auto residual = [&](ad::Var out, std::size_t sub) {
    const std::span<const ad::Var> hs(history.data() + std::min(first, history.size()),
                                      history.size() - std::min(first, history.size()));
    ad::Var alphas = vars.alphas[sub];
    if (first > 0) {
      std::vector<std::size_t> idx;
      for (std::size_t i = first; i < history.size(); ++i) idx.push_back(i);
      if (idx.empty()) return out;
      alphas = ad::gather(alphas, idx, {idx.size()});
    }
    return dense_residual_step(out, hs, alphas);
  };
  for (std::size_t l = 0; l < vars.layers.size(); ++l) {
    const auto& lv = vars.layers[l];
    const auto kind = l < n_linear ? attention::AttentionKind::kLinear : attention::AttentionKind::kSoftmax;
    if (kind == attention::AttentionKind::kSoftmax && !mask) mask = batch.block_mask;
    const ad::Var a_in = ad::layer_norm_rows(history.back(), lv.norm_attn_gamma, lv.norm_attn_beta);
    const ad::Var a = attention::attention_layer(a_in, lv.attn, kind, cfg.feature_map, batch.segment_ids, mask);
    history.push_back(residual(a, 2 * l));
    const ad::Var f_in = ad::layer_norm_rows(history.back(), lv.norm_ffn_gamma, lv.norm_ffn_beta);
    const ad::Var f = aoe::aoe_forward(f_in, lv.ffn, stats ? &stats->aoe_layers[l] : nullptr);
    history.push_back(residual(f, 2 * l + 1));
  }
  (void)tape;
  return ad::layer_norm_rows(history.back(), vars.final_gamma, vars.final_beta);
}

}  // namespace

ad::Var encode(ad::GradTape& tape, const StackVars& vars, std::span<const ImageGrid> images,
               const EncoderConfig& cfg, ForwardStats* stats) {
  cfg.validate();
  if (images.empty()) throw std::invalid_argument("encode: no images");
  if (vars.layers.size() != cfg.n_layers || vars.alphas.size() != 2 * cfg.n_layers) {
    throw std::invalid_argument("encode: stack has " + std::to_string(vars.layers.size()) +
                                " layers, config expects " + std::to_string(cfg.n_layers));
  }
  if (stats) stats->aoe_layers.resize(cfg.n_layers);

  std::vector<ad::Var> tokens;
  std::vector<packing::PatchedImage> plan;
  for (std::size_t i = 0; i < images.size(); ++i) {
    const ad::Var patches = tape.constant(extract_patches(images[i], cfg.patch_px));
    tokens.push_back(ad::add_row_vector(ad::matmul(patches, vars.patch_proj), vars.patch_bias));
    plan.push_back({i, images[i].width_px, images[i].height_px, tokens.back().value()});
  }
  const auto batches = packing::greedy_pack(plan, cfg.capacity);

  std::vector<ad::Var> pooled(images.size());
  for (const auto& batch : batches) {
    std::vector<ad::Var> parts;
    for (const auto& seg : batch.segments) {
      parts.push_back(tokens[seg.image_id]);
      parts.push_back(tape.constant(
          packing::size_embedding(seg.width_px, seg.height_px, cfg.d_model).reshaped({1, cfg.d_model})));
    }
    const ad::Var h0 =
        ad::add(ad::concat_rows(parts), tape.constant(packing::position_encoding(batch.positions, cfg.d_model)));
    const ad::Var out = run_layers(tape, vars, batch, h0, cfg, stats);
    for (const auto& seg : batch.segments) {
      const std::size_t end = seg.offset + seg.token_count;
      if (cfg.pool == Pooling::kLastToken) {
        pooled[seg.image_id] = ad::slice_rows(out, end - 1, end);
      } else {
        pooled[seg.image_id] = ad::mean_rows(out, seg.offset, cfg.pool_include_size_token ? end : end - 1);
      }
    }
    if (stats) {
      ++stats->batches;
      stats->packed_rows += batch.length();
    }
  }
  return ad::normalize_rows(ad::concat_rows(pooled));
}

Tensor encode_images(std::span<const ImageGrid> images, const LayerStack& stack, const EncoderConfig& cfg,
                     ForwardStats* stats) {
  ad::GradTape tape(ad::GradTape::Mode::kInference);
  const StackVars vars = bind(tape, stack, false);
  return encode(tape, vars, images, cfg, stats).value();
}

Tensor encode_video(std::span<const ImageGrid> frames, const LayerStack& stack, const EncoderConfig& cfg) {
  if (frames.empty()) throw std::invalid_argument("encode_video: need at least one frame");
  return encode_images(frames, stack, cfg);
}

LayerStack init_video_encoder(const LayerStack& image_stack) { return image_stack; }

}  // namespace packenc::encoder
