// Copyright 2026 The packenc Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <iterator>

#include "packenc/encoder.hpp"
#include "packenc/gradcheck.hpp"
#include "packenc/image.hpp"
#include "packenc/rng.hpp"
#include "test_util.hpp"

namespace packenc::encoder {
namespace {

EncoderConfig small_config(std::uint64_t seed = 3) {
  EncoderConfig cfg;
  cfg.d_model = 8;
  cfg.n_layers = 2;
  cfg.aoe = {3, 2, 6, 2};
  cfg.patch_px = 4;
  cfg.capacity = 64;
  cfg.seed = seed;
  return cfg;
}

ImageGrid random_image(Rng& rng, std::size_t h, std::size_t w) {
  ImageGrid img(h, w);
  for (auto& v : img.pixels) v = rng.uniform();
  return img;
}

std::string read_bytes(const std::filesystem::path& p) {
  std::ifstream f(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

TEST(EncoderConfig, DefaultsMatchPublishedTrainingSettings) {
  const EncoderConfig cfg;
  EXPECT_EQ(cfg.temperature, 0.07);
  EXPECT_EQ(cfg.lr, 2e-5);
  EXPECT_EQ(cfg.batch_size, 256u);
  EXPECT_EQ(cfg.scale_range.lo, 0.5);
  EXPECT_EQ(cfg.scale_range.hi, 1.5);
  EXPECT_EQ(cfg.patch_px, 14u);
  EXPECT_EQ(cfg.linear_layers(), cfg.n_layers - 1);
  EXPECT_EQ(cfg.pool, Pooling::kMean);
  EXPECT_FALSE(cfg.pool_include_size_token);
  EXPECT_TRUE(cfg.residual_include_embedding);
}

TEST(EncoderConfig, JsonRoundTripIsLossless) {
  EncoderConfig cfg = small_config(77);
  cfg.n_linear_attention_layers = 0;
  cfg.aoe_interval = 2;
  cfg.feature_map = attention::FeatureMap::kRelu;
  cfg.pool = Pooling::kLastToken;
  cfg.pool_include_size_token = true;
  cfg.residual_include_embedding = false;
  cfg.temperature = 0.123456789;
  cfg.lr = 3.3e-4;
  cfg.scale_range = {0.75, 1.25};
  cfg.batch_size = 17;
  const EncoderConfig back = EncoderConfig::from_json(cfg.to_json());
  EXPECT_EQ(back.to_json(), cfg.to_json());
  EXPECT_EQ(back.n_linear_attention_layers, std::optional<std::size_t>(0));
  EXPECT_EQ(back.lr, cfg.lr);
  EXPECT_EQ(EncoderConfig::from_json(EncoderConfig().to_json()).to_json(), EncoderConfig().to_json());
}

TEST(EncoderConfig, PartialJsonKeepsDefaults) {
  const EncoderConfig cfg = EncoderConfig::from_json({{"d_model", 16}, {"aoe", {{"k_active", 1}}}});
  EXPECT_EQ(cfg.d_model, 16u);
  EXPECT_EQ(cfg.aoe.k_active, 1u);
  EXPECT_EQ(cfg.aoe.n_experts, 4u);
  EXPECT_EQ(cfg.temperature, 0.07);
}

TEST(EncoderConfig, RejectsInvalid) {
  EXPECT_THROW(EncoderConfig::from_json({{"d_modle", 16}}), std::invalid_argument);
  EXPECT_THROW(EncoderConfig::from_json({{"aoe", {{"experts", 2}}}}), std::invalid_argument);
  EXPECT_THROW(EncoderConfig::from_json({{"pool", "max"}}), std::invalid_argument);
  EXPECT_THROW(EncoderConfig::from_json({{"d_model", 7}}), std::invalid_argument);
  EXPECT_THROW(EncoderConfig::from_json({{"n_layers", 2}, {"n_linear_attention_layers", 2}}), std::invalid_argument);
  EXPECT_THROW(EncoderConfig::from_json({{"scale_range", {1.0}}}), std::invalid_argument);
  EXPECT_THROW(EncoderConfig::from_json({{"temperature", 0.0}}), std::invalid_argument);
}

TEST(DenseResidual, Examples) {
  Rng rng(1);
  const Tensor out = rng.normal_tensor({3, 2}, 1.0);
  const std::vector<Tensor> hist = {rng.normal_tensor({3, 2}, 1.0), rng.normal_tensor({3, 2}, 1.0),
                                    rng.normal_tensor({3, 2}, 1.0)};
  EXPECT_EQ(dense_residual_step(out, hist, Tensor::zeros({3})), out);
  const Tensor doubled = dense_residual_step(hist[2], hist, Tensor::vector({0, 0, 1}));
  EXPECT_EQ(doubled, scale(hist[2], 2.0));
  const Tensor got = dense_residual_step(out, hist, Tensor::vector({0.5, 0.25, 1.0}));
  for (std::size_t i = 0; i < 6; ++i) {
    EXPECT_NEAR(got[i], out[i] + 0.5 * hist[0][i] + 0.25 * hist[1][i] + 1.0 * hist[2][i], 1e-15);
  }
  EXPECT_THROW(dense_residual_step(out, hist, Tensor::zeros({2})), ShapeError);
  const std::vector<Tensor> bad = {Tensor::zeros({2, 2})};
  EXPECT_THROW(dense_residual_step(out, bad, Tensor::zeros({1})), ShapeError);
}

TEST(Patchify, Examples) {
  Rng rng(2);
  const std::size_t p = 3;
  const Tensor proj = rng.normal_tensor({p * p * 3, 5}, 1.0);
  EXPECT_EQ(patchify(random_image(rng, p, p), p, proj).token_count(), 1u);
  const auto zero = patchify(ImageGrid(2 * p, p + 1), p, proj, Tensor::zeros({5}));
  EXPECT_EQ(zero.token_count(), 4u);
  EXPECT_EQ(zero.tokens, Tensor::zeros({4, 5}));

  // 2p wide, p tall: two tokens from the left and right halves.
  const ImageGrid img = random_image(rng, p, 2 * p);
  const auto pi = patchify(img, p, proj);
  ASSERT_EQ(pi.token_count(), 2u);
  for (std::size_t half = 0; half < 2; ++half) {
    for (std::size_t j = 0; j < 5; ++j) {
      double v = 0.0;
      for (std::size_t y = 0; y < p; ++y)
        for (std::size_t x = 0; x < p; ++x)
          for (std::size_t c = 0; c < 3; ++c) v += img.at(y, half * p + x, c) * proj.at((y * p + x) * 3 + c, j);
      EXPECT_NEAR(pi.tokens.at(half, j), v, 1e-13);
    }
  }
  EXPECT_THROW(patchify(img, p, rng.normal_tensor({5, 5}, 1.0)), ShapeError);
}

TEST(RandomUniformScale, Examples) {
  Rng rng(3);
  const ImageGrid img = random_image(rng, 5, 7);
  EXPECT_EQ(random_uniform_scale(img, rng, {1.0, 1.0}), img);

  ImageGrid c(2, 2, 0.4);
  const ImageGrid half = random_uniform_scale(c, rng, {0.5, 0.5});
  ASSERT_EQ(half.height_px, 1u);
  ASSERT_EQ(half.width_px, 1u);
  for (double v : half.pixels) EXPECT_DOUBLE_EQ(v, 0.4);

  const ImageGrid tiny = random_uniform_scale(ImageGrid(1, 1, 0.2), rng, {0.5, 0.5});
  EXPECT_EQ(tiny.height_px, 1u);

  for (int i = 0; i < 50; ++i) {
    const ImageGrid s = random_uniform_scale(img, rng, {0.5, 1.5});
    EXPECT_GE(s.height_px, 2u);
    EXPECT_LE(s.height_px, 8u);
    EXPECT_GE(s.width_px, 3u);
    EXPECT_LE(s.width_px, 11u);
  }
  EXPECT_THROW(random_uniform_scale(img, rng, {0.0, 1.0}), std::invalid_argument);
  EXPECT_THROW(random_uniform_scale(img, rng, {1.5, 0.5}), std::invalid_argument);
}

TEST(ResizeBilinear, TwoByTwoToFourByFour) {
  ImageGrid img(2, 2);
  const double src[2][2] = {{0, 1}, {2, 3}};
  for (std::size_t y = 0; y < 2; ++y)
    for (std::size_t x = 0; x < 2; ++x)
      for (std::size_t c = 0; c < 3; ++c) img.at(y, x, c) = src[y][x];
  const ImageGrid up = resize_bilinear(img, 4, 4);
  // Half-pixel centers: inner samples at source coordinates 0.25 and 0.75.
  EXPECT_DOUBLE_EQ(up.at(1, 1, 0), 0.75);
  EXPECT_DOUBLE_EQ(up.at(1, 2, 0), 1.25);
  EXPECT_DOUBLE_EQ(up.at(2, 1, 0), 1.75);
  EXPECT_DOUBLE_EQ(up.at(2, 2, 0), 2.25);
  const double center = (up.at(1, 1, 0) + up.at(1, 2, 0) + up.at(2, 1, 0) + up.at(2, 2, 0)) / 4.0;
  EXPECT_DOUBLE_EQ(center, 1.5);
  EXPECT_DOUBLE_EQ(up.at(0, 0, 0), 0.0);
  EXPECT_DOUBLE_EQ(up.at(3, 3, 0), 3.0);
}

TEST(LayerStack, InitShapesAndAlphas) {
  const EncoderConfig cfg = small_config();
  const LayerStack s = LayerStack::init(cfg);
  EXPECT_EQ(s.patch_proj.shape(), (Shape{48, 8}));
  ASSERT_EQ(s.layers.size(), 2u);
  ASSERT_EQ(s.residual_alphas.size(), 4u);
  for (std::size_t sub = 0; sub < 4; ++sub) {
    ASSERT_EQ(s.residual_alphas[sub].numel(), sub + 1);
    for (std::size_t i = 0; i <= sub; ++i) EXPECT_EQ(s.residual_alphas[sub][i], i == sub ? 1.0 : 0.0);
  }
  EncoderConfig sparse = cfg;
  sparse.aoe_interval = 2;
  const LayerStack t = LayerStack::init(sparse);
  EXPECT_EQ(t.layers[0].ffn.n_experts(), 3u);
  EXPECT_EQ(t.layers[1].ffn.n_experts(), 1u);
}

TEST(LayerStack, BindOrderMatchesVisitOrder) {
  const LayerStack s = LayerStack::init(small_config());
  ad::GradTape tape;
  const StackVars v = bind(tape, s, true);
  std::vector<const Tensor*> visited;
  s.visit([&](const std::string&, const Tensor& t) { visited.push_back(&t); });
  ASSERT_EQ(v.params.size(), visited.size());
  std::size_t total = 0;
  for (std::size_t i = 0; i < visited.size(); ++i) {
    EXPECT_EQ(v.params[i].value(), *visited[i]) << i;
    total += visited[i]->numel();
  }
  EXPECT_EQ(total, s.parameter_count());
}

TEST(LayerStack, SaveLoadRoundTripAndChecksum) {
  test::TempDir dir("stack");
  const EncoderConfig cfg = small_config(5);
  const LayerStack s = LayerStack::init(cfg);
  s.save(dir.path());
  const std::string crc = read_bytes(dir.path() / "weights.crc32");
  EXPECT_EQ(crc.size(), std::string("01234567  weights.bin\n").size());
  const LayerStack back = LayerStack::load(dir.path(), cfg);
  const auto a = s.named_tensors(), b = back.named_tensors();
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].name, b[i].name);
    EXPECT_EQ(a[i].tensor, b[i].tensor);
  }
  // Bank caches are rebuilt on load.
  EXPECT_EQ(back.layers[1].ffn.combined_down(), s.layers[1].ffn.combined_down());

  {
    std::fstream f(dir.path() / "weights.bin", std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(3);
    f.put('\x5a');
  }
  EXPECT_THROW(LayerStack::load(dir.path(), cfg), std::runtime_error);
}

TEST(LayerStack, LoadRejectsMismatchedConfig) {
  test::TempDir dir("stack_cfg");
  const EncoderConfig cfg = small_config(5);
  LayerStack::init(cfg).save(dir.path());
  EncoderConfig other = cfg;
  other.d_model = 10;
  EXPECT_THROW(LayerStack::load(dir.path(), other), std::exception);
}

TEST(EncodeImages, NormsDuplicatesAndPackEquivalence) {
  const EncoderConfig cfg = small_config(9);
  const LayerStack stack = LayerStack::init(cfg);
  Rng rng(10);
  const ImageGrid a = random_image(rng, 9, 5), b = random_image(rng, 4, 13), c = random_image(rng, 7, 7);
  const std::vector<ImageGrid> batch = {a, b, c, a};
  ForwardStats stats;
  const Tensor f = encode_images(batch, stack, cfg, &stats);
  ASSERT_EQ(f.shape(), (Shape{4, 8}));
  EXPECT_EQ(stats.batches, 1u);
  for (std::size_t r = 0; r < 4; ++r) {
    double n = 0.0;
    for (double v : f.row(r)) n += v * v;
    EXPECT_NEAR(std::sqrt(n), 1.0, 1e-12);
  }
  for (std::size_t c2 = 0; c2 < 8; ++c2) EXPECT_EQ(f.at(0, c2), f.at(3, c2));
  for (std::size_t i = 0; i < 3; ++i) {
    const std::vector<ImageGrid> one = {batch[i]};
    const Tensor solo = encode_images(one, stack, cfg);
    for (std::size_t c2 = 0; c2 < 8; ++c2) EXPECT_NEAR(f.at(i, c2), solo.at(0, c2), 1e-9);
  }
}

TEST(EncodeImages, Deterministic) {
  const EncoderConfig cfg = small_config(12);
  Rng rng(13);
  const std::vector<ImageGrid> imgs = {random_image(rng, 6, 6), random_image(rng, 5, 11)};
  EXPECT_EQ(encode_images(imgs, LayerStack::init(cfg), cfg), encode_images(imgs, LayerStack::init(cfg), cfg));
}

// Layer norm, attention and pooling with plain loops and tensor-level ops:
// a conventional pre-norm residual stack.
Tensor layer_norm(const Tensor& x, const LayerNormParams& p) {
  Tensor out(x.shape());
  for (std::size_t r = 0; r < x.rows(); ++r) {
    double mu = 0.0, var = 0.0;
    for (double v : x.row(r)) mu += v;
    mu /= static_cast<double>(x.cols());
    for (double v : x.row(r)) var += (v - mu) * (v - mu);
    var /= static_cast<double>(x.cols());
    for (std::size_t c = 0; c < x.cols(); ++c)
      out.at(r, c) = p.gamma[c] * (x.at(r, c) - mu) / std::sqrt(var + 1e-5) + p.beta[c];
  }
  return out;
}

Tensor prenorm_reference(const ImageGrid& img, const LayerStack& s, const EncoderConfig& cfg) {
  const auto pi = patchify(img, cfg.patch_px, s.patch_proj, s.patch_bias);
  const std::size_t t = pi.token_count(), n = t + 1, d = cfg.d_model;
  Tensor h({n, d});
  const Tensor size_tok = packing::size_embedding(img.width_px, img.height_px, d);
  std::vector<std::size_t> pos(n);
  for (std::size_t i = 0; i < n; ++i) pos[i] = i;
  const Tensor pe = packing::position_encoding(pos, d);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < d; ++c) h.at(r, c) = (r < t ? pi.tokens.at(r, c) : size_tok[c]) + pe.at(r, c);
  for (std::size_t l = 0; l < s.layers.size(); ++l) {
    const auto& layer = s.layers[l];
    const Tensor a_in = layer_norm(h, layer.norm_attn);
    const Tensor q = matmul(a_in, layer.attn.w_q), k = matmul(a_in, layer.attn.w_k), v = matmul(a_in, layer.attn.w_v);
    const Tensor att = l < cfg.linear_layers() ? attention::linear_attention(q, k, v, cfg.feature_map)
                                               : attention::softmax_attention(q, k, v);
    h = add(h, matmul(att, layer.attn.w_o));
    h = add(h, aoe::aoe_forward_batch(layer_norm(h, layer.norm_ffn), layer.ffn));
  }
  h = layer_norm(h, s.final_norm);
  Tensor pooled({1, d});
  for (std::size_t r = 0; r < t; ++r)
    for (std::size_t c = 0; c < d; ++c) pooled[c] += h.at(r, c) / static_cast<double>(t);
  double norm = 0.0;
  for (double v : pooled.values()) norm += v * v;
  return scale(pooled, 1.0 / std::sqrt(norm));
}

TEST(EncodeImages, InitialAlphasGivePrenormResidualStack) {
  for (std::size_t layers : {1, 2, 3}) {
    EncoderConfig cfg = small_config(20 + layers);
    cfg.n_layers = layers;
    const LayerStack stack = LayerStack::init(cfg);
    Rng rng(30 + layers);
    const ImageGrid img = random_image(rng, 10, 7);
    const std::vector<ImageGrid> one = {img};
    EXPECT_LE(max_abs_diff(encode_images(one, stack, cfg), prenorm_reference(img, stack, cfg)), 1e-12);
  }
}

TEST(EncodeImages, FlagsChangeOutput) {
  const EncoderConfig base = small_config(40);
  const LayerStack stack = LayerStack::init(base);
  Rng rng(41);
  const std::vector<ImageGrid> imgs = {random_image(rng, 8, 8)};
  const Tensor f0 = encode_images(imgs, stack, base);
  EncoderConfig with_size = base;
  with_size.pool_include_size_token = true;
  EncoderConfig last = base;
  last.pool = Pooling::kLastToken;
  EXPECT_GT(max_abs_diff(f0, encode_images(imgs, stack, with_size)), 1e-6);
  EXPECT_GT(max_abs_diff(f0, encode_images(imgs, stack, last)), 1e-6);

  // Excluding the embedding from the dense sum only matters once alphas use it.
  LayerStack dense = stack;
  dense.residual_alphas[1][0] = 0.5;
  EncoderConfig skip = base;
  skip.residual_include_embedding = false;
  EXPECT_GT(max_abs_diff(encode_images(imgs, dense, base), encode_images(imgs, dense, skip)), 1e-6);
}

TEST(EncodeImages, FullModelGradientSmallConfig) {
  EncoderConfig cfg;
  cfg.d_model = 4;
  cfg.n_layers = 1;
  cfg.aoe = {3, 2, 3, 2};
  cfg.patch_px = 2;
  cfg.capacity = 32;
  std::size_t checked = 0;
  for (std::uint64_t s = 0; s < 8; ++s) {
    cfg.seed = 100 + s;
    LayerStack stack = LayerStack::init(cfg);
    Rng rng(200 + s);
    stack.visit_mut([&](const std::string&, Tensor& t) {
      for (auto& v : t.data()) v += 0.1 * rng.normal();
    });
    const std::vector<ImageGrid> imgs = {random_image(rng, 3, 4), random_image(rng, 2, 2)};
    ForwardStats stats;
    encode_images(imgs, stack, cfg, &stats);
    if (stats.min_selection_margin() < 1e-3) continue;
    ++checked;
    std::vector<Tensor> in;
    stack.visit([&](const std::string&, const Tensor& t) { in.push_back(t); });
    const double err = check_gradients(
        [&](std::span<const ad::Var> v) {
          ad::GradTape& tape = *v[0].tape();
          StackVars sv = bind(tape, stack, false);
          std::size_t i = 0;
          sv.patch_proj = v[i++];
          sv.patch_bias = v[i++];
          for (auto& lv : sv.layers) {
            lv.attn = {v[i], v[i + 1], v[i + 2], v[i + 3]};
            i += 4;
            std::vector<ad::Var> downs;
            for (auto& e : lv.ffn.experts) {
              e = {v[i], v[i + 1], v[i + 2], v[i + 3]};
              downs.push_back(v[i]);
              i += 4;
            }
            lv.ffn.combined_down = ad::concat_cols(downs);
            lv.norm_attn_gamma = v[i++];
            lv.norm_attn_beta = v[i++];
            lv.norm_ffn_gamma = v[i++];
            lv.norm_ffn_beta = v[i++];
          }
          sv.final_gamma = v[i++];
          sv.final_beta = v[i++];
          for (auto& a : sv.alphas) a = v[i++];
          return ad::sum(encode(tape, sv, imgs, cfg));
        },
        in);
    EXPECT_LE(err, 1e-3) << "seed " << s;
  }
  EXPECT_GE(checked, 4u);
}

TEST(VideoEncoder, InitCopiesAndIsolates) {
  test::TempDir dir("video");
  const EncoderConfig cfg = small_config(50);
  const LayerStack image = LayerStack::init(cfg);
  LayerStack video = init_video_encoder(image);
  Rng rng(51);
  const std::vector<ImageGrid> frames = {random_image(rng, 6, 9), random_image(rng, 6, 9), random_image(rng, 6, 9)};
  EXPECT_EQ(encode_video(frames, video, cfg), encode_video(frames, image, cfg));

  image.save(dir.path() / "a");
  video.save(dir.path() / "b");
  EXPECT_EQ(read_bytes(dir.path() / "a" / "weights.bin"), read_bytes(dir.path() / "b" / "weights.bin"));
  EXPECT_EQ(read_bytes(dir.path() / "a" / "weights.json"), read_bytes(dir.path() / "b" / "weights.json"));

  const Tensor before = image.patch_proj;
  video.patch_proj.at(0, 0) += 1.0;
  video.layers[0].ffn.update_experts([](auto& ex) { ex[0].w_o.at(0, 0) += 1.0; });
  EXPECT_EQ(image.patch_proj, before);
  EXPECT_NE(image.layers[0].ffn.expert(0).w_o, video.layers[0].ffn.expert(0).w_o);
}

TEST(VideoEncoder, FrameSemantics) {
  const EncoderConfig cfg = small_config(60);
  const LayerStack stack = LayerStack::init(cfg);
  Rng rng(61);
  const std::vector<ImageGrid> frames = {random_image(rng, 8, 5), random_image(rng, 8, 5), random_image(rng, 8, 5)};
  const Tensor f = encode_video(frames, stack, cfg);
  ASSERT_EQ(f.rows(), 3u);
  const std::vector<ImageGrid> first = {frames[0]};
  EXPECT_EQ(encode_video(first, stack, cfg), encode_images(first, stack, cfg));
  for (std::size_t t = 0; t < 3; ++t) {
    const std::vector<ImageGrid> one = {frames[t]};
    const Tensor solo = encode_video(one, stack, cfg);
    for (std::size_t c = 0; c < 8; ++c) EXPECT_NEAR(f.at(t, c), solo.at(0, c), 1e-9);
  }
  const std::vector<ImageGrid> permuted = {frames[2], frames[0], frames[1]};
  const Tensor p = encode_video(permuted, stack, cfg);
  const std::size_t src[3] = {2, 0, 1};
  for (std::size_t t = 0; t < 3; ++t)
    for (std::size_t c = 0; c < 8; ++c) EXPECT_NEAR(p.at(t, c), f.at(src[t], c), 1e-9);
  EXPECT_THROW(encode_video(std::vector<ImageGrid>{}, stack, cfg), std::invalid_argument);
}

}  // namespace
}  // namespace packenc::encoder
