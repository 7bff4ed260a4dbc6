// Copyright 2026 The packenc Authors
// SPDX-License-Identifier: Apache-2.0

#include "packenc/suites.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <set>
#include <stdexcept>
#include <thread>
#include <utility>

#include "packenc/aoe.hpp"
#include "packenc/attention.hpp"
#include "packenc/gradcheck.hpp"
#include "packenc/oracles.hpp"
#include "packenc/packing.hpp"
#include "packenc/training_math.hpp"

namespace packenc::cli {

namespace {

using Item = std::function<void(Report&, std::uint64_t)>;

Rng item_rng(std::uint64_t seed, std::uint64_t salt) { return Rng(seed ^ (salt * 0x9E3779B97F4A7C15ULL)); }

std::size_t pick(Rng& rng, std::size_t lo, std::size_t hi) { return lo + rng.below(hi - lo + 1); }

double max_abs_row_diff(const Tensor& a, std::size_t row, const Tensor& b) {
  double m = 0.0;
  for (std::size_t c = 0; c < a.cols(); ++c) m = std::max(m, std::abs(a.at(row, c) - b[c]));
  return m;
}

// ---------------------------------------------------------------- pack suite

void pack_equivalence(Report& r, std::uint64_t seed) {
  Rng rng = item_rng(seed, 1);
  constexpr std::size_t kConfigs = 50;
  const std::size_t depths[] = {1, 2, 4};
  const std::size_t widths[] = {8, 16};
  std::map<std::size_t, double> by_depth;
  double worst = 0.0;
  for (std::size_t c = 0; c < kConfigs; ++c) {
    const std::size_t n_layers = depths[c % 3];
    const PackCase pc = random_pack_case(rng, n_layers, widths[(c / 3) % 2]);
    const double err = pack_equivalence_error(pc);
    worst = std::max(worst, err);
    by_depth[n_layers] = std::max(by_depth[n_layers], err);
  }
  r.at_most("pack.equivalence_max_abs_error", worst, "abs", 1e-9);
  r.info("pack.equivalence_configs", kConfigs, "count");
  for (const auto& [depth, err] : by_depth) {
    r.info("pack.equivalence_max_abs_error.n_layers_" + std::to_string(depth), err, "abs");
  }
}

void pack_fixture(Report& r, std::uint64_t) {
  std::size_t mismatches = 0;
  const packing::PackItem items[] = {{0, 60}, {1, 50}, {2, 40}, {3, 30}};
  const std::vector<std::vector<std::size_t>> expected_bins = {{0, 2}, {1, 3}};
  if (packing::first_fit_decreasing(items, 100) != expected_bins) ++mismatches;

  std::vector<packing::PatchedImage> images;
  for (std::size_t i = 0; i < 4; ++i) {
    const std::size_t t = items[i].tokens - 1;
    images.push_back({i, t, 1, Tensor::zeros({t, 2})});
  }
  const auto batches = packing::greedy_pack(images, 100);
  const std::vector<std::vector<std::size_t>> expected_counts = {{60, 40}, {50, 30}};
  std::vector<std::vector<std::size_t>> counts;
  for (const auto& b : batches) {
    counts.emplace_back();
    for (const auto& s : b.segments) counts.back().push_back(s.token_count);
  }
  if (counts != expected_counts) ++mismatches;

  const std::size_t ids_a[] = {0, 0, 1};
  const Tensor expected_a = Tensor::from_rows({{1, 1, 0}, {1, 1, 0}, {0, 0, 1}});
  if (!(packing::build_block_mask(ids_a) == expected_a)) ++mismatches;

  const std::size_t ids_b[] = {0, 1, 1, 2};
  const Tensor expected_b = Tensor::from_rows({{1, 0, 0, 0}, {0, 1, 1, 0}, {0, 1, 1, 0}, {0, 0, 0, 1}});
  if (!(packing::build_block_mask(ids_b) == expected_b)) ++mismatches;

  try {
    const packing::PatchedImage big[] = {{7, 99, 1, Tensor::zeros({99, 2})}};
    packing::greedy_pack(big, 99);
    ++mismatches;
  } catch (const packing::CapacityError& e) {
    if (e.image_id() != 7 || e.token_count() != 100) ++mismatches;
  }
  r.exact("pack.fixture_mismatches", static_cast<double>(mismatches));
  r.exact("pack.fixture_utilization_error", packing::utilization(batches) - 180.0 / 200.0, "abs");
}

void pack_content(Report& r, std::uint64_t seed) {
  Rng rng = item_rng(seed, 2);
  std::size_t mismatches = 0;
  double util_error = 0.0;
  for (std::size_t trial = 0; trial < 30; ++trial) {
    const std::size_t d = 2 * pick(rng, 1, 4);
    const std::size_t n = pick(rng, 1, 8);
    std::vector<packing::PatchedImage> images;
    std::size_t largest = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t t = pick(rng, 1, 12);
      largest = std::max(largest, t + 1);
      images.push_back({i * 3 + 1, pick(rng, 1, 300), pick(rng, 1, 300), rng.normal_tensor({t, d}, 1.0)});
    }
    const std::size_t capacity = largest + rng.below(30);
    const auto batches = packing::greedy_pack(images, capacity);
    std::multiset<std::size_t> seen;
    std::size_t rows = 0;
    for (const auto& b : batches) {
      if (b.length() > capacity) ++mismatches;
      rows += b.length();
      for (const auto& s : b.segments) {
        seen.insert(s.image_id);
        const auto& img = *std::find_if(images.begin(), images.end(),
                                        [&](const packing::PatchedImage& p) { return p.image_id == s.image_id; });
        for (std::size_t t = 0; t < s.token_count; ++t) {
          const std::size_t row = s.offset + t;
          if (b.segment_ids[row] != s.image_id || b.positions[row] != t) ++mismatches;
          for (std::size_t c = 0; c < d; ++c) {
            const double want = t + 1 < s.token_count
                                    ? img.tokens.at(t, c)
                                    : packing::size_embedding(img.width_px, img.height_px, d)[c];
            if (b.tokens.at(row, c) != want) ++mismatches;
          }
        }
      }
      for (std::size_t i = 0; i < b.length(); ++i)
        for (std::size_t j = 0; j < b.length(); ++j)
          if ((b.block_mask.at(i, j) == 1.0) != (b.segment_ids[i] == b.segment_ids[j])) ++mismatches;
    }
    std::multiset<std::size_t> want;
    for (const auto& img : images) want.insert(img.image_id);
    if (seen != want) ++mismatches;
    const double manual = static_cast<double>(rows) / static_cast<double>(batches.size() * capacity);
    util_error = std::max(util_error, std::abs(packing::utilization(batches) - manual));
  }
  r.exact("pack.content_mismatches", static_cast<double>(mismatches));
  r.exact("pack.utilization_error", util_error, "abs");
}

// ----------------------------------------------------------- attention suite

void attention_two_path(Report& r, std::uint64_t seed) {
  Rng rng = item_rng(seed, 10);
  constexpr std::size_t kSeeds = 200;
  double worst = 0.0;
  for (std::size_t s = 0; s < kSeeds; ++s) {
    const std::size_t length = pick(rng, 1, 64);
    const std::size_t d = pick(rng, 1, 8);
    const bool relu = s % 4 == 3;
    Tensor q = rng.normal_tensor({length, d}, 1.0);
    Tensor k = rng.normal_tensor({length, d}, 1.0);
    const Tensor v = rng.normal_tensor({length, d}, 1.0);
    if (relu) {
      // keep every relu normalizer positive
      for (auto& x : q.data()) x = std::abs(x) + 0.01;
      for (auto& x : k.data()) x = std::abs(x) + 0.01;
    }
    std::vector<std::size_t> segments;
    if (s % 2 == 1)
      for (std::size_t i = 0; i < length; ++i) segments.push_back(rng.below(3));
    const auto fm = relu ? attention::FeatureMap::kRelu : attention::FeatureMap::kEluPlusOne;
    worst = std::max(worst, max_abs_diff(attention::linear_attention(q, k, v, fm, segments),
                                         attention::linear_attention_quadratic_oracle(q, k, v, fm, segments)));
  }
  r.at_most("attention.two_path_max_abs_error", worst, "abs", 1e-10);
  r.info("attention.two_path_seeds", kSeeds, "count");
}

void attention_softmax_rows(Report& r, std::uint64_t seed) {
  Rng rng = item_rng(seed, 11);
  double worst = 0.0;
  double min_entry = 0.0;
  for (std::size_t s = 0; s < 100; ++s) {
    const Tensor x = rng.uniform_tensor({pick(rng, 1, 16), pick(rng, 1, 16)}, -1e3, 1e3);
    const Tensor p = softmax_rows(x);
    for (std::size_t i = 0; i < p.rows(); ++i) {
      double total = 0.0;
      for (std::size_t j = 0; j < p.cols(); ++j) {
        total += p.at(i, j);
        min_entry = std::min(min_entry, p.at(i, j));
      }
      worst = std::max(worst, std::abs(total - 1.0));
    }
  }
  r.at_most("attention.softmax_row_sum_max_error", worst, "abs", 1e-12);
  r.exact("attention.softmax_negative_entry", min_entry < 0.0 ? 1.0 : 0.0);
}

void attention_isolation(Report& r, std::uint64_t seed) {
  Rng rng = item_rng(seed, 12);
  double linear_change = 0.0;
  double softmax_change = 0.0;
  for (std::size_t s = 0; s < 50; ++s) {
    const std::size_t d = pick(rng, 1, 6);
    const std::size_t la = pick(rng, 1, 10), lb = pick(rng, 1, 10);
    const std::size_t length = la + lb;
    std::vector<std::size_t> ids(length, 1);
    std::fill(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(la), 0);
    Tensor q = rng.normal_tensor({length, d}, 1.0), k = rng.normal_tensor({length, d}, 1.0),
           v = rng.normal_tensor({length, d}, 1.0);
    const Tensor mask = packing::build_block_mask(ids);
    const Tensor lin = attention::linear_attention(q, k, v, attention::FeatureMap::kEluPlusOne, ids);
    const Tensor soft = attention::softmax_attention(q, k, v, mask);
    for (std::size_t i = 0; i < la; ++i) {
      for (std::size_t c = 0; c < d; ++c) {
        q.at(i, c) = 10.0 * rng.normal();
        k.at(i, c) = 10.0 * rng.normal();
        v.at(i, c) = 10.0 * rng.normal();
      }
    }
    const Tensor lin2 = attention::linear_attention(q, k, v, attention::FeatureMap::kEluPlusOne, ids);
    const Tensor soft2 = attention::softmax_attention(q, k, v, mask);
    for (std::size_t i = la; i < length; ++i) {
      for (std::size_t c = 0; c < d; ++c) {
        linear_change = std::max(linear_change, std::abs(lin.at(i, c) - lin2.at(i, c)));
        softmax_change = std::max(softmax_change, std::abs(soft.at(i, c) - soft2.at(i, c)));
      }
    }
  }
  r.exact("attention.linear_segment_isolation_change", linear_change, "abs");
  r.at_most("attention.softmax_segment_isolation_change", softmax_change, "abs", 1e-12);
}

void attention_hybrid_packing(Report& r, std::uint64_t seed) {
  Rng rng = item_rng(seed, 13);
  double worst = 0.0;
  for (std::size_t s = 0; s < 30; ++s) {
    const std::size_t d = pick(rng, 1, 8);
    attention::HybridStackConfig cfg{pick(rng, 1, 3), d, attention::FeatureMap::kEluPlusOne};
    std::vector<attention::AttentionParams> params;
    for (std::size_t l = 0; l <= cfg.n_linear_layers; ++l) params.push_back(attention::AttentionParams::random(d, rng));
    const std::size_t la = pick(rng, 1, 12), lb = pick(rng, 1, 12);
    const Tensor xa = rng.normal_tensor({la, d}, 1.0), xb = rng.normal_tensor({lb, d}, 1.0);
    std::vector<double> joined(xa.data().begin(), xa.data().end());
    joined.insert(joined.end(), xb.data().begin(), xb.data().end());
    std::vector<std::size_t> ids(la + lb, 1);
    std::fill(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(la), 0);
    const Tensor packed = attention::hybrid_stack_forward(Tensor({la + lb, d}, joined), params, cfg, ids);
    const Tensor ya = attention::hybrid_stack_forward(xa, params, cfg);
    const Tensor yb = attention::hybrid_stack_forward(xb, params, cfg);
    for (std::size_t i = 0; i < la + lb; ++i) {
      const Tensor& ref = i < la ? ya : yb;
      const std::size_t row = i < la ? i : i - la;
      for (std::size_t c = 0; c < d; ++c) worst = std::max(worst, std::abs(packed.at(i, c) - ref.at(row, c)));
    }
  }
  r.at_most("attention.hybrid_pack_equivalence_max_abs_error", worst, "abs", 1e-9);
}

// ----------------------------------------------------------------- aoe suite

aoe::ExpertBank random_bank(Rng& rng, std::size_t& d) {
  const std::size_t n = pick(rng, 1, 8);
  const std::size_t k = pick(rng, 1, n);
  d = pick(rng, 2, 8);
  const std::size_t d_low = pick(rng, 1, d - 1);
  const std::size_t d_ffn = pick(rng, 1, 8);
  return aoe::ExpertBank::random(n, d, d_low, d_ffn, k, rng);
}

void aoe_oracle(Report& r, std::uint64_t seed) {
  Rng rng = item_rng(seed, 20);
  constexpr std::size_t kSeeds = 200;
  double out_err = 0.0, weight_err = 0.0, cache_err = 0.0, batch_err = 0.0;
  std::size_t flop_violations = 0;
  for (std::size_t s = 0; s < kSeeds; ++s) {
    std::size_t d = 0;
    const aoe::ExpertBank bank = random_bank(rng, d);
    const Tensor x = rng.normal_tensor({d}, 1.0);
    aoe::AoeStats stats;
    const Tensor h = aoe::aoe_forward(x, bank, &stats);
    const auto ref = oracle::aoe_all_experts(x.data(), bank);
    for (std::size_t j = 0; j < d; ++j) out_err = std::max(out_err, std::abs(h[j] - ref[j]));

    const Tensor cache = aoe::activation_cache(x, bank);
    for (std::size_t e = 0; e < bank.n_experts(); ++e) {
      const auto row = oracle::down_projection(x.data(), bank.expert(e));
      for (std::size_t j = 0; j < row.size(); ++j) cache_err = std::max(cache_err, std::abs(cache.at(e, j) - row[j]));
    }
    const aoe::Selection sel = aoe::select_experts(cache, bank.k_active());
    double total = 0.0;
    for (double w : sel.weights.data()) {
      if (w < 0.0) ++flop_violations;
      total += w;
    }
    weight_err = std::max(weight_err, std::abs(total - 1.0));

    const std::size_t n = bank.n_experts(), k = bank.k_active();
    const auto cached = aoe::cached_multiply_adds(n, d, bank.d_low(), bank.d_ffn(), k);
    const auto full = aoe::all_expert_multiply_adds(n, d, bank.d_low(), bank.d_ffn());
    if (stats.multiply_adds != cached) ++flop_violations;
    if (k < n && !(cached < full)) ++flop_violations;

    const std::size_t length = pick(rng, 1, 5);
    const Tensor xs = rng.normal_tensor({length, d}, 1.0);
    const Tensor batch = aoe::aoe_forward_batch(xs, bank);
    for (std::size_t i = 0; i < length; ++i) {
      const Tensor row = aoe::aoe_forward(Tensor({d}, std::vector<double>(xs.row(i).begin(), xs.row(i).end())), bank);
      batch_err = std::max(batch_err, max_abs_row_diff(batch, i, row));
    }
  }
  r.at_most("aoe.oracle_max_abs_error", out_err, "abs", 1e-12);
  r.at_most("aoe.weight_sum_max_error", weight_err, "abs", 1e-12);
  r.exact("aoe.flop_violations", static_cast<double>(flop_violations));
  r.at_most("aoe.cache_max_abs_error", cache_err, "abs", 1e-15);
  r.at_most("aoe.batch_rowwise_max_abs_error", batch_err, "abs", 1e-12);
  r.info("aoe.oracle_seeds", kSeeds, "count");
}

// ---------------------------------------------------------------- grad suite

constexpr std::size_t kGradSeeds = 100;

// Reduces any tensor to a scalar through fixed random weights, so that
// shift-invariant outputs (softmax rows) still carry gradient.
ad::Var weighted_total(ad::Var out, const Tensor& weights) {
  return ad::sum(ad::mul(out, out.tape()->constant(weights)));
}

struct GradCase {
  std::vector<Tensor> inputs;
  VarFn build;
};

void run_grad(Report& r, const std::string& op, std::uint64_t seed, std::uint64_t salt,
              const std::function<GradCase(Rng&)>& make, double tolerance = 1e-4) {
  Rng rng = item_rng(seed, salt);
  double worst = 0.0;
  for (std::size_t s = 0; s < kGradSeeds; ++s) {
    const GradCase c = make(rng);
    worst = std::max(worst, check_gradients(c.build, c.inputs));
  }
  r.at_most("grad." + op + ".max_rel_error", worst, "rel", tolerance);
}

void grad_primitives(Report& r, std::uint64_t seed) {
  r.info("grad.seeds_per_op", kGradSeeds, "count");
  run_grad(r, "matmul", seed, 30, [](Rng& rng) {
    const std::size_t m = pick(rng, 1, 8), k = pick(rng, 1, 8), n = pick(rng, 1, 8);
    Tensor w = rng.normal_tensor({m, n}, 1.0);
    return GradCase{{rng.normal_tensor({m, k}, 1.0), rng.normal_tensor({k, n}, 1.0)},
                    [w](std::span<const ad::Var> v) { return weighted_total(ad::matmul(v[0], v[1]), w); }};
  });
  run_grad(r, "softmax_rows", seed, 31, [](Rng& rng) {
    const std::size_t m = pick(rng, 1, 8), n = pick(rng, 1, 8);
    Tensor w = rng.normal_tensor({m, n}, 1.0);
    return GradCase{{rng.normal_tensor({m, n}, 2.0)},
                    [w](std::span<const ad::Var> v) { return weighted_total(ad::softmax_rows(v[0]), w); }};
  });
  run_grad(r, "silu", seed, 32, [](Rng& rng) {
    const std::size_t m = pick(rng, 1, 8), n = pick(rng, 1, 8);
    Tensor w = rng.normal_tensor({m, n}, 1.0);
    return GradCase{{rng.normal_tensor({m, n}, 2.0)},
                    [w](std::span<const ad::Var> v) { return weighted_total(ad::silu(v[0]), w); }};
  });
  run_grad(r, "l2_norm_rows", seed, 33, [](Rng& rng) {
    const std::size_t m = pick(rng, 1, 8), n = pick(rng, 1, 8);
    Tensor w = rng.normal_tensor({m}, 1.0);
    return GradCase{{rng.normal_tensor({m, n}, 1.0)},
                    [w](std::span<const ad::Var> v) { return weighted_total(ad::l2_norm_rows(v[0]), w); }};
  });
  run_grad(r, "layer_norm_rows", seed, 34, [](Rng& rng) {
    const std::size_t m = pick(rng, 1, 8), n = pick(rng, 2, 8);
    Tensor w = rng.normal_tensor({m, n}, 1.0);
    return GradCase{{rng.normal_tensor({m, n}, 1.0), rng.normal_tensor({n}, 1.0), rng.normal_tensor({n}, 1.0)},
                    [w](std::span<const ad::Var> v) {
                      return weighted_total(ad::layer_norm_rows(v[0], v[1], v[2]), w);
                    }};
  });
}

void grad_attention(Report& r, std::uint64_t seed) {
  run_grad(r, "softmax_attention", seed, 40, [](Rng& rng) {
    const std::size_t length = pick(rng, 1, 4), d = pick(rng, 1, 4);
    std::optional<Tensor> mask;
    if (rng.below(2) == 1) {
      std::vector<std::size_t> ids;
      for (std::size_t i = 0; i < length; ++i) ids.push_back(rng.below(2));
      mask = packing::build_block_mask(ids);
    }
    Tensor w = rng.normal_tensor({length, d}, 1.0);
    return GradCase{{rng.normal_tensor({length, d}, 1.0), rng.normal_tensor({length, d}, 1.0),
                     rng.normal_tensor({length, d}, 1.0)},
                    [w, mask](std::span<const ad::Var> v) {
                      return weighted_total(attention::softmax_attention(v[0], v[1], v[2], mask), w);
                    }};
  });
  run_grad(r, "linear_attention", seed, 41, [](Rng& rng) {
    const std::size_t length = pick(rng, 1, 4), d = pick(rng, 1, 4);
    std::vector<std::size_t> ids;
    if (rng.below(2) == 1)
      for (std::size_t i = 0; i < length; ++i) ids.push_back(rng.below(2));
    Tensor w = rng.normal_tensor({length, d}, 1.0);
    return GradCase{{rng.normal_tensor({length, d}, 1.0), rng.normal_tensor({length, d}, 1.0),
                     rng.normal_tensor({length, d}, 1.0)},
                    [w, ids](std::span<const ad::Var> v) {
                      return weighted_total(
                          attention::linear_attention(v[0], v[1], v[2], attention::FeatureMap::kEluPlusOne, ids), w);
                    }};
  });
  run_grad(r, "hybrid_stack", seed, 42, [](Rng& rng) {
    const std::size_t length = pick(rng, 1, 4), d = pick(rng, 1, 4);
    std::vector<std::size_t> ids;
    for (std::size_t i = 0; i < length; ++i) ids.push_back(i < length / 2 ? 0 : 1);
    GradCase c;
    c.inputs.push_back(rng.normal_tensor({length, d}, 1.0));
    for (std::size_t l = 0; l < 2; ++l) {
      const auto p = attention::AttentionParams::random(d, rng);
      for (const Tensor* t : {&p.w_q, &p.w_k, &p.w_v, &p.w_o}) c.inputs.push_back(*t);
    }
    Tensor w = rng.normal_tensor({length, d}, 1.0);
    c.build = [w, ids, d](std::span<const ad::Var> v) {
      const attention::AttentionVars layers[] = {{v[1], v[2], v[3], v[4]}, {v[5], v[6], v[7], v[8]}};
      const attention::HybridStackConfig cfg{1, d, attention::FeatureMap::kEluPlusOne};
      return weighted_total(attention::hybrid_stack_forward(v[0], layers, cfg, ids), w);
    };
    return c;
  });
}

void grad_aoe(Report& r, std::uint64_t seed) {
  Rng rng = item_rng(seed, 50);
  double worst = 0.0;
  std::size_t skipped = 0;
  for (std::size_t s = 0; s < kGradSeeds;) {
    std::size_t d = 0;
    const aoe::ExpertBank bank = random_bank(rng, d);
    const std::size_t length = pick(rng, 1, 3);
    const Tensor xs = rng.normal_tensor({length, d}, 1.0);
    aoe::AoeStats stats;
    aoe::aoe_forward_batch(xs, bank, &stats);
    // Finite differences straddle the selection boundary when two norms are
    // this close; such draws do not measure the gradient.
    if (stats.min_selection_margin < 1e-3) {
      ++skipped;
      continue;
    }
    ++s;
    std::vector<Tensor> inputs{xs};
    for (const auto& e : bank.experts())
      for (const Tensor* t : {&e.w_down, &e.w_up, &e.w_p, &e.w_o}) inputs.push_back(*t);
    const Tensor w = rng.normal_tensor({length, d}, 1.0);
    const std::size_t k = bank.k_active(), n = bank.n_experts();
    const VarFn build = [&](std::span<const ad::Var> v) {
      aoe::BankVars bv;
      bv.k_active = k;
      std::vector<ad::Var> downs;
      for (std::size_t e = 0; e < n; ++e) {
        bv.experts.push_back({v[1 + 4 * e], v[2 + 4 * e], v[3 + 4 * e], v[4 + 4 * e]});
        downs.push_back(v[1 + 4 * e]);
      }
      bv.combined_down = ad::concat_cols(downs);
      return weighted_total(aoe::aoe_forward(v[0], bv), w);
    };
    worst = std::max(worst, check_gradients(build, inputs));
  }
  r.at_most("grad.aoe_forward.max_rel_error", worst, "rel", 1e-4);
  r.info("grad.aoe_forward.skipped_near_ties", static_cast<double>(skipped), "count");
}

void grad_residual(Report& r, std::uint64_t seed) {
  run_grad(r, "dense_residual_step", seed, 60, [](Rng& rng) {
    const std::size_t m = pick(rng, 1, 8), n = pick(rng, 1, 8), l = pick(rng, 0, 4);
    GradCase c;
    c.inputs.push_back(rng.normal_tensor({m, n}, 1.0));
    c.inputs.push_back(rng.normal_tensor({l + 1}, 1.0));
    for (std::size_t i = 0; i <= l; ++i) c.inputs.push_back(rng.normal_tensor({m, n}, 1.0));
    Tensor w = rng.normal_tensor({m, n}, 1.0);
    c.build = [w](std::span<const ad::Var> v) {
      return weighted_total(encoder::dense_residual_step(v[0], v.subspan(2), v[1]), w);
    };
    return c;
  });
}

void grad_losses(Report& r, std::uint64_t seed) {
  const double taus[] = {0.07, 0.5, 1.0};
  run_grad(r, "info_nce", seed, 70, [&taus](Rng& rng) {
    const std::size_t n = pick(rng, 1, 3), d = pick(rng, 1, 4);
    const double tau = taus[rng.below(3)];
    const bool exclude = rng.below(2) == 1;
    return GradCase{{rng.normal_tensor({n, d}, 1.0), rng.normal_tensor({n, d}, 1.0)},
                    [tau, exclude](std::span<const ad::Var> v) {
                      return losses::info_nce(ad::normalize_rows(v[0]), ad::normalize_rows(v[1]), tau, {exclude});
                    }};
  });
  run_grad(r, "video_info_nce", seed, 71, [&taus](Rng& rng) {
    const std::size_t t = pick(rng, 1, 3), n = pick(rng, 1, 3), d = pick(rng, 1, 4);
    const double tau = taus[rng.below(3)];
    GradCase c;
    for (std::size_t i = 0; i < 2 * t; ++i) c.inputs.push_back(rng.normal_tensor({n, d}, 1.0));
    c.build = [t, tau](std::span<const ad::Var> v) {
      std::vector<ad::Var> a, p;
      for (std::size_t i = 0; i < t; ++i) {
        a.push_back(ad::normalize_rows(v[2 * i]));
        p.push_back(ad::normalize_rows(v[2 * i + 1]));
      }
      return losses::video_info_nce(a, p, tau);
    };
    return c;
  });
  run_grad(r, "cross_entropy", seed, 72, [](Rng& rng) {
    const std::size_t m = pick(rng, 1, 6), classes = pick(rng, 1, 6);
    std::vector<std::size_t> labels;
    for (std::size_t i = 0; i < m; ++i) labels.push_back(rng.below(classes));
    return GradCase{{rng.normal_tensor({m, classes}, 2.0)},
                    [labels](std::span<const ad::Var> v) { return losses::cross_entropy(v[0], labels); }};
  });
  run_grad(r, "distill_loss", seed, 73, [](Rng& rng) {
    const std::size_t m = pick(rng, 1, 4), classes = pick(rng, 1, 5), d = pick(rng, 1, 4);
    const double alpha = rng.uniform();
    const Tensor teacher = rng.normal_tensor({m, classes}, 2.0);
    return GradCase{{rng.normal_tensor({m, classes}, 2.0), rng.normal_tensor({m, d}, 1.0),
                     rng.normal_tensor({m, d}, 1.0)},
                    [alpha, teacher](std::span<const ad::Var> v) {
                      return losses::distill_loss(v[0], teacher, v[1], v[2], alpha);
                    }};
  });
}

encoder::EncoderConfig tiny_encoder_config(Rng& rng, std::size_t n_layers) {
  encoder::EncoderConfig cfg;
  cfg.d_model = 4;
  cfg.n_layers = n_layers;
  cfg.aoe = {pick(rng, 1, 3), pick(rng, 1, 3), pick(rng, 2, 4), 1};
  cfg.aoe.k_active = pick(rng, 1, cfg.aoe.n_experts);
  cfg.patch_px = 2;
  cfg.capacity = 32;
  cfg.seed = rng.next_u64();
  return cfg;
}

void grad_encoder(Report& r, std::uint64_t seed, std::size_t n_layers, std::size_t seeds, std::uint64_t salt,
                  const std::string& op) {
  Rng rng = item_rng(seed, salt);
  double worst = 0.0;
  std::size_t skipped = 0;
  for (std::size_t s = 0; s < seeds;) {
    const encoder::EncoderConfig cfg = tiny_encoder_config(rng, n_layers);
    const encoder::LayerStack stack = encoder::LayerStack::init(cfg);
    std::vector<encoder::ImageGrid> images;
    for (std::size_t i = 0; i < 2; ++i) {
      encoder::ImageGrid img(pick(rng, 2, 4), pick(rng, 2, 4));
      for (auto& p : img.pixels) p = rng.uniform();
      images.push_back(std::move(img));
    }
    encoder::ForwardStats stats;
    encoder::encode_images(images, stack, cfg, &stats);
    if (stats.min_selection_margin() < 1e-3) {
      ++skipped;
      continue;
    }
    ++s;
    const auto named = stack.named_tensors();
    std::vector<Tensor> inputs;
    for (const auto& nt : named) inputs.push_back(nt.tensor);
    // Same structure as bind(), with every parameter routed through the
    // caller's leaves in visit order.
    const VarFn build = [&](std::span<const ad::Var> v) {
      ad::GradTape& tape = *v[0].tape();
      encoder::StackVars vars = encoder::bind(tape, stack, false);
      std::size_t i = 0;
      vars.patch_proj = v[i++];
      vars.patch_bias = v[i++];
      for (auto& lv : vars.layers) {
        lv.attn = {v[i], v[i + 1], v[i + 2], v[i + 3]};
        i += 4;
        std::vector<ad::Var> downs;
        for (auto& e : lv.ffn.experts) {
          e = {v[i], v[i + 1], v[i + 2], v[i + 3]};
          downs.push_back(e.w_down);
          i += 4;
        }
        lv.ffn.combined_down = ad::concat_cols(downs);
        lv.norm_attn_gamma = v[i++];
        lv.norm_attn_beta = v[i++];
        lv.norm_ffn_gamma = v[i++];
        lv.norm_ffn_beta = v[i++];
      }
      vars.final_gamma = v[i++];
      vars.final_beta = v[i++];
      for (auto& a : vars.alphas) a = v[i++];
      return ad::sum(encoder::encode(tape, vars, images, cfg));
    };
    worst = std::max(worst, check_gradients(build, inputs));
  }
  r.at_most("grad." + op + ".max_rel_error", worst, "rel", 1e-3);
  r.info("grad." + op + ".skipped_near_ties", static_cast<double>(skipped), "count");
}

// -------------------------------------------------------------- losses suite

void losses_fixtures(Report& r, std::uint64_t seed) {
  Rng rng = item_rng(seed, 80);
  const Tensor e0 = Tensor::from_rows({{1.0, 0.0}});
  const Tensor e1 = Tensor::from_rows({{0.0, 1.0}});
  r.at_most("losses.info_nce_identical_error",
            std::abs(losses::info_nce({e0, e0, 1.0}) - std::log(2.0)), "abs", 1e-12);
  r.at_most("losses.info_nce_orthogonal_error",
            std::abs(losses::info_nce({e0, e1, 1.0}) - std::log(1.0 + std::exp(1.0))), "abs", 1e-12);

  double oracle_err = 0.0, perm_err = 0.0;
  for (std::size_t n = 1; n <= 16; ++n) {
    for (std::size_t trial = 0; trial < 8; ++trial) {
      const std::size_t d = pick(rng, 1, 8);
      const double tau = trial % 2 == 0 ? 0.07 : rng.uniform(0.05, 2.0);
      const bool exclude = trial % 4 == 3;
      const losses::ContrastiveBatch b{rng.unit_rows(n, d), rng.unit_rows(n, d), tau};
      const double got = losses::info_nce(b, {exclude});
      const double want = oracle::info_nce(oracle::to_matrix(b.anchors), oracle::to_matrix(b.positives), tau, exclude);
      oracle_err = std::max(oracle_err, std::abs(got - want));
      // jointly permute the pairs
      std::vector<std::size_t> perm(n);
      for (std::size_t i = 0; i < n; ++i) perm[i] = (i + 1 + trial) % n;
      Tensor pa({n, d}), pp({n, d});
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t c = 0; c < d; ++c) {
          pa.at(i, c) = b.anchors.at(perm[i], c);
          pp.at(i, c) = b.positives.at(perm[i], c);
        }
      perm_err = std::max(perm_err, std::abs(losses::info_nce({pa, pp, tau}, {exclude}) - got));
    }
  }
  r.at_most("losses.info_nce_oracle_max_error", oracle_err, "abs", 1e-12);
  r.at_most("losses.info_nce_permutation_error", perm_err, "abs", 1e-12);

  // Temperature widens the gap between aligned and shuffled positives.
  {
    Rng f(5);
    const Tensor a = f.unit_rows(2, 4);
    Tensor shuffled({2, 4});
    for (std::size_t c = 0; c < 4; ++c) {
      shuffled.at(0, c) = a.at(1, c);
      shuffled.at(1, c) = a.at(0, c);
    }
    auto gap = [&](double tau) {
      return losses::info_nce({a, shuffled, tau}) - losses::info_nce({a, a, tau});
    };
    r.exact("losses.temperature_gap_violation", gap(0.07) > gap(1.0) ? 0.0 : 1.0);
  }

  // Video loss is the sum over frames.
  double video_err = 0.0;
  for (std::size_t t = 1; t <= 4; ++t) {
    const losses::ContrastiveBatch step{rng.unit_rows(3, 4), rng.unit_rows(3, 4), 0.07};
    losses::VideoContrastiveBatch v{std::vector<losses::ContrastiveBatch>(t, step)};
    video_err = std::max(video_err, std::abs(losses::video_info_nce(v) - static_cast<double>(t) * losses::info_nce(step)));
  }
  r.at_most("losses.video_additivity_error", video_err, "abs", 1e-12);

  // Cross-entropy fixtures.
  {
    const std::size_t label[] = {2};
    const double uniform = losses::cross_entropy(Tensor::from_rows({{0.3, 0.3, 0.3, 0.3}}), label);
    r.at_most("losses.cross_entropy_uniform_error", std::abs(uniform - std::log(4.0)), "abs", 1e-12);
    const double confident = losses::cross_entropy(Tensor::from_rows({{0.0, 0.0, 100.0, 0.0}}), label);
    r.at_most("losses.cross_entropy_confident", confident, "abs", 1e-8);
    double ce_err = 0.0;
    for (std::size_t trial = 0; trial < 20; ++trial) {
      const Tensor logits = rng.normal_tensor({2, 3}, 2.0);
      const std::size_t labels[] = {rng.below(3), rng.below(3)};
      ce_err = std::max(ce_err, std::abs(losses::cross_entropy(logits, labels) -
                                         oracle::cross_entropy(oracle::to_matrix(logits), labels)));
    }
    r.at_most("losses.cross_entropy_oracle_error", ce_err, "abs", 1e-12);
  }

  // Distillation: endpoints are exact, the blend matches the hand oracle.
  {
    std::size_t endpoint_mismatch = 0;
    double blend_err = 0.0;
    for (std::size_t trial = 0; trial < 20; ++trial) {
      const Tensor s = rng.normal_tensor({2, 2}, 1.0), t = rng.normal_tensor({2, 2}, 1.0);
      const Tensor fs = rng.normal_tensor({2, 2}, 1.0), ft = rng.normal_tensor({2, 2}, 1.0);
      const Tensor other = rng.normal_tensor({2, 2}, 1.0);
      if (losses::distill_loss(s, t, fs, fs, 0.0) != 0.0) ++endpoint_mismatch;
      if (losses::distill_loss(s, t, fs, ft, 1.0) != losses::distill_loss(s, t, other, ft, 1.0)) ++endpoint_mismatch;
      if (losses::distill_loss(s, t, fs, ft, 0.0) != losses::distill_loss(other, t, fs, ft, 0.0)) ++endpoint_mismatch;
      const auto ms = oracle::to_matrix(s), mt = oracle::to_matrix(t);
      const double ce = oracle::soft_cross_entropy(ms, mt);
      const double mse = oracle::mean_squared_error(oracle::to_matrix(fs), oracle::to_matrix(ft));
      blend_err = std::max(blend_err, std::abs(losses::distill_loss(s, t, fs, ft, 1.0) - ce));
      blend_err = std::max(blend_err, std::abs(losses::distill_loss(s, t, fs, ft, 0.0) - mse));
      blend_err = std::max(blend_err, std::abs(losses::distill_loss(s, t, fs, ft, 0.5) - (0.5 * ce + 0.5 * mse)));
    }
    r.exact("losses.distill_endpoint_mismatches", static_cast<double>(endpoint_mismatch));
    r.at_most("losses.distill_oracle_error", blend_err, "abs", 1e-12);
  }

  r.exact("losses.discounted_return_fixture_error", losses::discounted_return({{1.0, 1.0, 1.0}, 0.5}) - 1.75, "abs");
  r.at_most("losses.discounted_return_hand_error",
            std::abs(losses::discounted_return({{2.0, -1.0, 3.0}, 0.9}) - 3.53), "abs", 1e-12);
  {
    std::size_t mismatches = 0;
    const double probs[] = {0.1, 0.9, 0.5};
    if (losses::rejection_filter(probs, 0.5) != std::vector<bool>{false, true, true}) ++mismatches;
    if (losses::rejection_filter(probs, 0.0) != std::vector<bool>{true, true, true}) ++mismatches;
    const Tensor w = Tensor::identity(2);
    const Tensor b = Tensor::from_rows({{1.0}, {0.0}});
    const Tensor a = Tensor::from_rows({{0.0, 1.0}});
    if (!(losses::lora_apply(w, b, a) == Tensor::from_rows({{1.0, 1.0}, {0.0, 1.0}}))) ++mismatches;
    if (!(w == Tensor::identity(2))) ++mismatches;
    r.exact("losses.rejection_and_lora_mismatches", static_cast<double>(mismatches));
  }
}

std::vector<std::pair<std::string, Item>> suite_items(const std::string& name) {
  if (name == "pack") return {{"equivalence", pack_equivalence}, {"fixture", pack_fixture}, {"content", pack_content}};
  if (name == "attention") {
    return {{"two_path", attention_two_path},
            {"softmax_rows", attention_softmax_rows},
            {"isolation", attention_isolation},
            {"hybrid_packing", attention_hybrid_packing}};
  }
  if (name == "aoe") return {{"oracle", aoe_oracle}};
  if (name == "grad") {
    return {{"primitives", grad_primitives},
            {"attention", grad_attention},
            {"aoe", grad_aoe},
            {"residual", grad_residual},
            {"losses", grad_losses},
            {"encoder", [](Report& r, std::uint64_t s) { grad_encoder(r, s, 1, kGradSeeds, 90, "encoder"); }},
            {"encoder_2layer",
             [](Report& r, std::uint64_t s) { grad_encoder(r, s, 2, 20, 91, "encoder_2layer"); }}};
  }
  if (name == "losses") return {{"fixtures", losses_fixtures}};
  throw std::invalid_argument("unknown suite '" + name + "' (expected pack, attention, aoe, grad, losses or all)");
}

}  // namespace

const std::vector<std::string>& suite_names() {
  static const std::vector<std::string> names = {"pack", "attention", "aoe", "grad", "losses"};
  return names;
}

void run_suite(const std::string& name, Report& report, const SuiteOptions& options) {
  std::vector<std::pair<std::string, Item>> items;
  if (name == "all") {
    for (const auto& n : suite_names())
      for (auto& it : suite_items(n)) items.push_back(std::move(it));
  } else {
    items = suite_items(name);
  }
  std::vector<Report> parts;
  parts.reserve(items.size());
  for (std::size_t i = 0; i < items.size(); ++i) parts.emplace_back(items[i].first, options.seed, report.tol_scale());
  if (options.parallel) {
    std::vector<std::thread> workers;
    std::vector<std::exception_ptr> errors(items.size());
    for (std::size_t i = 0; i < items.size(); ++i) {
      workers.emplace_back([&, i] {
        try {
          items[i].second(parts[i], options.seed);
        } catch (...) {
          errors[i] = std::current_exception();
        }
      });
    }
    for (auto& w : workers) w.join();
    for (const auto& e : errors)
      if (e) std::rethrow_exception(e);
  } else {
    for (std::size_t i = 0; i < items.size(); ++i) items[i].second(parts[i], options.seed);
  }
  for (const auto& p : parts) report.merge(p);
}

PackCase random_pack_case(Rng& rng, std::size_t n_layers, std::size_t d_model) {
  PackCase c;
  auto& cfg = c.config;
  cfg.d_model = d_model;
  cfg.n_layers = n_layers;
  cfg.n_linear_attention_layers = rng.below(n_layers);
  cfg.aoe.n_experts = pick(rng, 1, 4);
  cfg.aoe.k_active = pick(rng, 1, cfg.aoe.n_experts);
  cfg.aoe.d_low = pick(rng, 1, 4);
  cfg.aoe.d_ffn = pick(rng, 4, 16);
  cfg.aoe_interval = pick(rng, 1, 2);
  cfg.patch_px = pick(rng, 2, 4);
  cfg.pool = rng.below(4) == 0 ? encoder::Pooling::kLastToken : encoder::Pooling::kMean;
  cfg.pool_include_size_token = rng.below(2) == 1;
  cfg.residual_include_embedding = rng.below(4) != 0;
  cfg.seed = rng.next_u64();

  const std::size_t n_images = pick(rng, 2, 8);
  std::set<std::pair<std::size_t, std::size_t>> sizes;
  std::size_t largest = 0, total = 0;
  while (sizes.size() < n_images) {
    const std::size_t h = pick(rng, 1, 5 * cfg.patch_px), w = pick(rng, 1, 5 * cfg.patch_px);
    if (!sizes.insert({h, w}).second) continue;
    encoder::ImageGrid img(h, w);
    for (auto& p : img.pixels) p = rng.uniform();
    const std::size_t tokens = packing::patch_token_count(w, h, cfg.patch_px) + 1;
    largest = std::max(largest, tokens);
    total += tokens;
    c.images.push_back(std::move(img));
  }
  cfg.capacity = largest + rng.below(total);
  return c;
}

double pack_equivalence_error(const PackCase& c) {
  const encoder::LayerStack stack = encoder::LayerStack::init(c.config);
  const Tensor packed = encoder::encode_images(c.images, stack, c.config);
  double worst = 0.0;
  for (std::size_t i = 0; i < c.images.size(); ++i) {
    const Tensor alone = encoder::encode_images(std::span(&c.images[i], 1), stack, c.config);
    worst = std::max(worst, max_abs_row_diff(packed, i, alone));
  }
  return worst;
}

}  // namespace packenc::cli
