// Copyright 2026 The packenc Authors
// SPDX-License-Identifier: Apache-2.0

#include "packenc/aoe.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace packenc::aoe {

ExpertWeights ExpertWeights::random(std::size_t d_model, std::size_t d_low, std::size_t d_ffn, Rng& rng) {
  const double sd = 1.0 / std::sqrt(static_cast<double>(d_model));
  ExpertWeights e;
  e.w_down = rng.normal_tensor({d_model, d_low}, sd);
  e.w_up = rng.normal_tensor({d_low, d_ffn}, 1.0 / std::sqrt(static_cast<double>(d_low)));
  e.w_p = rng.normal_tensor({d_model, d_ffn}, sd);
  e.w_o = rng.normal_tensor({d_ffn, d_model}, 1.0 / std::sqrt(static_cast<double>(d_ffn)));
  e.validate();
  return e;
}

void ExpertWeights::validate() const {
  for (const Tensor* w : {&w_down, &w_up, &w_p, &w_o}) {
    if (w->rank() != 2) throw ShapeError("ExpertWeights: expected matrices, got " + shape_str(w->shape()));
  }
  const std::size_t d = w_down.rows(), dl = w_down.cols(), df = w_p.cols();
  if (w_up.shape() != Shape{dl, df} || w_p.shape() != Shape{d, df} || w_o.shape() != Shape{df, d}) {
    throw ShapeError("ExpertWeights: inconsistent shapes w_down" + shape_str(w_down.shape()) + ", w_up" +
                     shape_str(w_up.shape()) + ", w_p" + shape_str(w_p.shape()) + ", w_o" +
                     shape_str(w_o.shape()));
  }
  if (dl >= d) {
    throw ShapeError("ExpertWeights: d_low " + std::to_string(dl) + " must be below d_model " + std::to_string(d));
  }
}

ExpertBank::ExpertBank(std::vector<ExpertWeights> experts, std::size_t k_active)
    : experts_(std::move(experts)), k_active_(k_active) {
  rebuild();
}

ExpertBank ExpertBank::random(std::size_t n_experts, std::size_t d_model, std::size_t d_low, std::size_t d_ffn,
                              std::size_t k_active, Rng& rng) {
  std::vector<ExpertWeights> experts;
  experts.reserve(n_experts);
  for (std::size_t i = 0; i < n_experts; ++i) experts.push_back(ExpertWeights::random(d_model, d_low, d_ffn, rng));
  return ExpertBank(std::move(experts), k_active);
}

void ExpertBank::set_expert(std::size_t i, ExpertWeights w) {
  experts_.at(i) = std::move(w);
  rebuild();
}

void ExpertBank::rebuild() {
  if (experts_.empty()) throw std::invalid_argument("ExpertBank: at least one expert is required");
  if (k_active_ < 1 || k_active_ > experts_.size()) {
    throw std::invalid_argument("ExpertBank: k_active " + std::to_string(k_active_) + " outside [1, " +
                                std::to_string(experts_.size()) + "]");
  }
  for (const auto& e : experts_) {
    e.validate();
    if (e.w_down.shape() != experts_.front().w_down.shape() || e.w_p.shape() != experts_.front().w_p.shape()) {
      throw ShapeError("ExpertBank: experts disagree on shapes " + shape_str(experts_.front().w_down.shape()) +
                       " and " + shape_str(e.w_down.shape()));
    }
  }
  const std::size_t d = d_model(), dl = d_low(), n = experts_.size();
  combined_down_ = Tensor({d, n * dl});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t r = 0; r < d; ++r)
      for (std::size_t c = 0; c < dl; ++c) combined_down_.at(r, i * dl + c) = experts_[i].w_down.at(r, c);
}

nlohmann::json AoeStats::to_json() const {
  nlohmann::json j{{"selection_counts", selection_counts}, {"multiply_adds", multiply_adds}, {"tokens", tokens}};
  j["min_selection_margin"] = std::isfinite(min_selection_margin) ? nlohmann::json(min_selection_margin)
                                                                  : nlohmann::json(nullptr);
  return j;
}

namespace {

Tensor as_row(const Tensor& x, std::size_t d_model) {
  if (x.numel() != d_model || (x.rank() == 2 && x.rows() != 1) || x.rank() > 2) {
    throw ShapeError("aoe: input shape " + shape_str(x.shape()) + " is not a single vector of length " +
                     std::to_string(d_model));
  }
  return x.reshaped({1, d_model});
}

/// Indices of the k largest values, descending, ties to the lower index.
std::vector<std::size_t> top_k(std::span<const double> norms, std::size_t k) {
  std::vector<std::size_t> order(norms.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return norms[a] > norms[b]; });
  order.resize(k);
  return order;
}

double selection_margin(std::span<const double> norms, std::size_t k) {
  if (k >= norms.size()) return std::numeric_limits<double>::infinity();
  std::vector<double> sorted(norms.begin(), norms.end());
  std::sort(sorted.begin(), sorted.end(), std::greater<>());
  return sorted[k - 1] - sorted[k];
}

}  // namespace

Tensor expert_forward(const Tensor& x, const ExpertWeights& e) {
  e.validate();
  const Tensor row = as_row(x, e.d_model());
  const Tensor gate = silu(matmul(matmul(row, e.w_down), e.w_up));
  const Tensor proj = matmul(row, e.w_p);
  return matmul(mul(gate, proj), e.w_o).reshaped({e.d_model()});
}

Tensor activation_cache(const Tensor& x, const ExpertBank& bank) {
  const Tensor row = as_row(x, bank.d_model());
  return matmul(row, bank.combined_down()).reshaped({bank.n_experts(), bank.d_low()});
}

Selection select_experts(const Tensor& cache, std::size_t k) {
  if (cache.rank() != 2) throw ShapeError("select_experts: cache shape " + shape_str(cache.shape()));
  if (k < 1 || k > cache.rows()) {
    throw std::invalid_argument("select_experts: k = " + std::to_string(k) + " outside [1, " +
                                std::to_string(cache.rows()) + "]");
  }
  const Tensor norms = l2_norm_rows(cache);
  Selection sel;
  sel.indices = top_k(norms.data(), k);
  Tensor picked({1, k});
  for (std::size_t i = 0; i < k; ++i) picked[i] = norms[sel.indices[i]];
  sel.weights = softmax_rows(picked).reshaped({k});
  return sel;
}

Tensor aoe_forward(const Tensor& x, const ExpertBank& bank, AoeStats* stats) {
  return aoe_forward_batch(as_row(x, bank.d_model()), bank, stats).reshaped({bank.d_model()});
}

Tensor aoe_forward_batch(const Tensor& xs, const ExpertBank& bank, AoeStats* stats) {
  ad::GradTape tape(ad::GradTape::Mode::kInference);
  const BankVars vars = bind(tape, bank, false);
  return aoe_forward(tape.constant(xs), vars, stats).value();
}

std::uint64_t cached_multiply_adds(std::size_t n, std::size_t d_model, std::size_t d_low, std::size_t d_ffn,
                                   std::size_t k) {
  return static_cast<std::uint64_t>(n * d_model * d_low + k * (d_low * d_ffn + 2 * d_model * d_ffn));
}

std::uint64_t all_expert_multiply_adds(std::size_t n, std::size_t d_model, std::size_t d_low, std::size_t d_ffn) {
  return static_cast<std::uint64_t>(n * (d_model * d_low + d_low * d_ffn + 2 * d_model * d_ffn));
}

BankVars bind(ad::GradTape& tape, const ExpertBank& bank, bool requires_grad) {
  BankVars out;
  out.k_active = bank.k_active();
  std::vector<ad::Var> downs;
  for (const auto& e : bank.experts()) {
    ExpertVars v{tape.leaf(e.w_down, requires_grad), tape.leaf(e.w_up, requires_grad),
                 tape.leaf(e.w_p, requires_grad), tape.leaf(e.w_o, requires_grad)};
    downs.push_back(v.w_down);
    out.experts.push_back(v);
  }
  out.combined_down = tape.recording() && requires_grad ? ad::concat_cols(downs) : tape.constant(bank.combined_down());
  return out;
}

ad::Var aoe_forward(ad::Var xs, const BankVars& bank, AoeStats* stats) {
  const Tensor& xv = xs.value();
  const std::size_t n = bank.experts.size();
  const std::size_t k = bank.k_active;
  const std::size_t d = bank.experts.front().w_down.value().rows();
  const std::size_t dl = bank.experts.front().w_down.value().cols();
  const std::size_t df = bank.experts.front().w_p.value().cols();
  if (xv.rank() != 2 || xv.cols() != d) {
    throw ShapeError("aoe_forward: input shape " + shape_str(xv.shape()) + " incompatible with d_model " +
                     std::to_string(d));
  }
  const std::size_t length = xv.rows();
  std::uint64_t macs = 0;

  const ad::Var cache = ad::matmul(xs, bank.combined_down);
  macs += length * d * n * dl;
  const ad::Var cache_rows = ad::reshape(cache, {length * n, dl});
  const ad::Var norms = ad::l2_norm_rows(cache_rows);
  const Tensor& nv = norms.value();

  // token_slots[e] = (token, slot in that token's selection) pairs
  std::vector<std::vector<std::pair<std::size_t, std::size_t>>> token_slots(n);
  std::vector<std::size_t> picked_index;
  picked_index.reserve(length * k);
  double margin = std::numeric_limits<double>::infinity();
  for (std::size_t t = 0; t < length; ++t) {
    const auto token_norms = nv.data().subspan(t * n, n);
    const auto sel = top_k(token_norms, k);
    margin = std::min(margin, selection_margin(token_norms, k));
    for (std::size_t s = 0; s < k; ++s) {
      picked_index.push_back(t * n + sel[s]);
      token_slots[sel[s]].emplace_back(t, s);
    }
  }
  const ad::Var weights = ad::softmax_rows(ad::gather(norms, picked_index, {length, k}));

  ad::Var out;
  for (std::size_t e = 0; e < n; ++e) {
    if (token_slots[e].empty()) continue;
    std::vector<std::size_t> tokens, cache_idx, weight_idx;
    for (auto [t, s] : token_slots[e]) {
      tokens.push_back(t);
      cache_idx.push_back(t * n + e);
      weight_idx.push_back(t * k + s);
    }
    const std::size_t m = tokens.size();
    const ExpertVars& ev = bank.experts[e];
    const ad::Var gate = ad::silu(ad::matmul(ad::gather_rows(cache_rows, cache_idx), ev.w_up));
    const ad::Var proj = ad::matmul(ad::gather_rows(xs, tokens), ev.w_p);
    const ad::Var expert_out = ad::matmul(ad::mul(gate, proj), ev.w_o);
    macs += m * (dl * df + d * df + df * d);
    const ad::Var w = ad::gather(weights, weight_idx, {m});
    const ad::Var contrib = ad::scatter_add_rows(ad::scale_rows(expert_out, w), tokens, length);
    out = out.valid() ? ad::add(out, contrib) : contrib;
  }

  if (stats) {
    if (stats->selection_counts.size() != n) stats->selection_counts.assign(n, 0);
    for (std::size_t e = 0; e < n; ++e) stats->selection_counts[e] += token_slots[e].size();
    stats->multiply_adds += macs;
    stats->tokens += length;
    stats->min_selection_margin = std::min(stats->min_selection_margin, margin);
  }
  return out;
}

}  // namespace packenc::aoe
