// Copyright 2026 The packenc Authors
// SPDX-License-Identifier: Apache-2.0

#include "packenc/attention.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <memory>
#include <stdexcept>

#include "packenc/packing.hpp"

namespace packenc::attention {

std::string to_string(FeatureMap fm) { return fm == FeatureMap::kRelu ? "relu" : "elu_plus_one"; }

FeatureMap feature_map_from_string(const std::string& name) {
  if (name == "elu_plus_one") return FeatureMap::kEluPlusOne;
  if (name == "relu") return FeatureMap::kRelu;
  throw std::invalid_argument("unknown feature map '" + name + "'");
}

ZeroNormalizerError::ZeroNormalizerError(std::size_t position)
    : std::domain_error("linear_attention: zero normalizer at position " + std::to_string(position)),
      position_(position) {}

AttentionParams AttentionParams::identity(std::size_t d_model) {
  const Tensor eye = Tensor::identity(d_model);
  return {d_model, eye, eye, eye, eye};
}

AttentionParams AttentionParams::random(std::size_t d_model, Rng& rng) {
  const double s = 1.0 / std::sqrt(static_cast<double>(d_model));
  AttentionParams p{d_model, {}, {}, {}, {}};
  p.w_q = rng.normal_tensor({d_model, d_model}, s);
  p.w_k = rng.normal_tensor({d_model, d_model}, s);
  p.w_v = rng.normal_tensor({d_model, d_model}, s);
  p.w_o = rng.normal_tensor({d_model, d_model}, s);
  return p;
}

void AttentionParams::validate() const {
  const Shape expected{d_model, d_model};
  for (const Tensor* w : {&w_q, &w_k, &w_v, &w_o}) {
    if (w->shape() != expected) {
      throw ShapeError("AttentionParams: projection shape " + shape_str(w->shape()) + " is not " +
                       shape_str(expected));
    }
  }
}

void HybridStackConfig::validate() const {
  if (n_linear_layers < 1) throw std::invalid_argument("HybridStackConfig: n_linear_layers must be >= 1");
  if (d_model < 1) throw std::invalid_argument("HybridStackConfig: d_model must be >= 1");
}

namespace {

double phi(FeatureMap fm, double x) {
  if (fm == FeatureMap::kRelu) return x > 0.0 ? x : 0.0;
  return x > 0.0 ? x + 1.0 : std::exp(x);
}

double phi_prime(FeatureMap fm, double x) {
  if (fm == FeatureMap::kRelu) return x > 0.0 ? 1.0 : 0.0;
  return x > 0.0 ? 1.0 : std::exp(x);
}

Tensor apply_phi(FeatureMap fm, const Tensor& x) {
  Tensor out = x;
  for (auto& v : out.data()) v = phi(fm, v);
  return out;
}

void check_qkv(const char* op, const Tensor& q, const Tensor& k, const Tensor& v) {
  if (q.rank() != 2 || k.rank() != 2 || v.rank() != 2 || q.shape() != k.shape() || v.rows() != q.rows()) {
    throw ShapeError(std::string(op) + ": incompatible shapes q" + shape_str(q.shape()) + ", k" +
                     shape_str(k.shape()) + ", v" + shape_str(v.shape()));
  }
}

/// Maps each row to a dense group index; an empty id list is one group.
std::vector<std::size_t> group_index(SegmentIds segments, std::size_t length, std::size_t& n_groups) {
  std::vector<std::size_t> group(length, 0);
  if (segments.empty()) {
    n_groups = 1;
    return group;
  }
  if (segments.size() != length) {
    throw ShapeError("attention: " + std::to_string(segments.size()) + " segment ids for sequence length " +
                     std::to_string(length));
  }
  std::map<std::size_t, std::size_t> dense;
  for (std::size_t i = 0; i < length; ++i) {
    auto [it, inserted] = dense.try_emplace(segments[i], dense.size());
    group[i] = it->second;
  }
  n_groups = dense.size();
  return group;
}

void check_mask(const Tensor& mask, std::size_t length) {
  if (mask.shape() != Shape{length, length}) {
    throw ShapeError("softmax_attention: mask shape " + shape_str(mask.shape()) + " for sequence length " +
                     std::to_string(length));
  }
  for (std::size_t i = 0; i < length; ++i) {
    bool any = false;
    for (double m : mask.row(i)) {
      if (m != 0.0 && m != 1.0) throw std::invalid_argument("softmax_attention: mask entries must be 0 or 1");
      any = any || m == 1.0;
    }
    if (!any) {
      throw std::domain_error("softmax_attention: row " + std::to_string(i) +
                              " is fully masked, attention distribution undefined");
    }
  }
}

constexpr double kMaskedScore = -1e30;

struct SoftmaxForward {
  Tensor probs;
  Tensor out;
};

SoftmaxForward softmax_forward(const Tensor& q, const Tensor& k, const Tensor& v,
                               const std::optional<Tensor>& mask) {
  check_qkv("softmax_attention", q, k, v);
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(q.cols()));
  Tensor scores = scale(matmul_nt(q, k), inv_sqrt_d);
  if (mask) {
    check_mask(*mask, q.rows());
    for (std::size_t i = 0; i < scores.numel(); ++i)
      if ((*mask)[i] == 0.0) scores[i] += kMaskedScore;
  }
  Tensor probs = softmax_rows(scores);
  Tensor out = matmul(probs, v);
  return {std::move(probs), std::move(out)};
}

struct LinearForward {
  Tensor phi_q, phi_k;
  std::vector<std::size_t> group;
  std::vector<Tensor> s;  // per group, d x dv
  std::vector<Tensor> z;  // per group, d
  Tensor norm;            // per row
  Tensor out;
};

LinearForward linear_forward(const Tensor& q, const Tensor& k, const Tensor& v, FeatureMap fm,
                             SegmentIds segments) {
  check_qkv("linear_attention", q, k, v);
  const std::size_t length = q.rows(), d = q.cols(), dv = v.cols();
  LinearForward f;
  std::size_t n_groups = 0;
  f.group = group_index(segments, length, n_groups);
  f.phi_q = apply_phi(fm, q);
  f.phi_k = apply_phi(fm, k);
  f.s.assign(n_groups, Tensor({d, dv}));
  f.z.assign(n_groups, Tensor({d}));
  for (std::size_t j = 0; j < length; ++j) {
    Tensor& s = f.s[f.group[j]];
    Tensor& z = f.z[f.group[j]];
    const auto pk = f.phi_k.row(j);
    const auto vj = v.row(j);
    for (std::size_t a = 0; a < d; ++a) {
      z[a] += pk[a];
      auto srow = s.row(a);
      for (std::size_t b = 0; b < dv; ++b) srow[b] += pk[a] * vj[b];
    }
  }
  f.norm = Tensor({length});
  f.out = Tensor({length, dv});
  for (std::size_t i = 0; i < length; ++i) {
    const Tensor& s = f.s[f.group[i]];
    const Tensor& z = f.z[f.group[i]];
    const auto pq = f.phi_q.row(i);
    auto orow = f.out.row(i);
    double c = 0.0;
    for (std::size_t a = 0; a < d; ++a) {
      c += pq[a] * z[a];
      const auto srow = s.row(a);
      for (std::size_t b = 0; b < dv; ++b) orow[b] += pq[a] * srow[b];
    }
    if (!(c > 0.0)) throw ZeroNormalizerError(i);
    f.norm[i] = c;
    for (auto& o : orow) o /= c;
  }
  return f;
}

}  // namespace

Tensor softmax_attention(const Tensor& q, const Tensor& k, const Tensor& v, const std::optional<Tensor>& mask) {
  return softmax_forward(q, k, v, mask).out;
}

Tensor linear_attention(const Tensor& q, const Tensor& k, const Tensor& v, FeatureMap fm, SegmentIds segments) {
  return linear_forward(q, k, v, fm, segments).out;
}

Tensor linear_attention_quadratic_oracle(const Tensor& q, const Tensor& k, const Tensor& v, FeatureMap fm,
                                         SegmentIds segments) {
  check_qkv("linear_attention_quadratic_oracle", q, k, v);
  const std::size_t length = q.rows();
  std::size_t n_groups = 0;
  const auto group = group_index(segments, length, n_groups);
  Tensor sim = matmul_nt(apply_phi(fm, q), apply_phi(fm, k));
  for (std::size_t i = 0; i < length; ++i) {
    auto row = sim.row(i);
    double c = 0.0;
    for (std::size_t j = 0; j < length; ++j) {
      if (group[i] != group[j]) row[j] = 0.0;
      c += row[j];
    }
    if (!(c > 0.0)) throw ZeroNormalizerError(i);
    for (auto& x : row) x /= c;
  }
  return matmul(sim, v);
}

Tensor hybrid_stack_forward(const Tensor& x, std::span<const AttentionParams> params,
                            const HybridStackConfig& cfg, SegmentIds segments) {
  ad::GradTape tape(ad::GradTape::Mode::kInference);
  std::vector<AttentionVars> vars;
  vars.reserve(params.size());
  for (const auto& p : params) vars.push_back(bind(tape, p, false));
  return hybrid_stack_forward(tape.constant(x), vars, cfg, segments).value();
}

AttentionVars bind(ad::GradTape& tape, const AttentionParams& p, bool requires_grad) {
  p.validate();
  return {tape.leaf(p.w_q, requires_grad), tape.leaf(p.w_k, requires_grad), tape.leaf(p.w_v, requires_grad),
          tape.leaf(p.w_o, requires_grad)};
}

ad::Var softmax_attention(ad::Var q, ad::Var k, ad::Var v, const std::optional<Tensor>& mask) {
  SoftmaxForward f = softmax_forward(q.value(), k.value(), v.value(), mask);
  Tensor probs = std::move(f.probs);
  return q.tape()->record(
      std::move(f.out), {q, k, v}, [q, k, v, probs](ad::GradTape& t, const Tensor& g) {
        const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(q.value().cols()));
        if (v.requires_grad()) t.accumulate(v, matmul_tn(probs, g));
        if (!q.requires_grad() && !k.requires_grad()) return;
        Tensor dscores = matmul_nt(g, v.value());
        for (std::size_t r = 0; r < probs.rows(); ++r) {
          auto pr = probs.row(r);
          auto dr = dscores.row(r);
          double dot = 0.0;
          for (std::size_t c = 0; c < pr.size(); ++c) dot += pr[c] * dr[c];
          for (std::size_t c = 0; c < pr.size(); ++c) dr[c] = pr[c] * (dr[c] - dot) * inv_sqrt_d;
        }
        if (q.requires_grad()) t.accumulate(q, matmul(dscores, k.value()));
        if (k.requires_grad()) t.accumulate(k, matmul_tn(dscores, q.value()));
      });
}

ad::Var linear_attention(ad::Var q, ad::Var k, ad::Var v, FeatureMap fm, SegmentIds segments) {
  auto f = std::make_shared<LinearForward>(linear_forward(q.value(), k.value(), v.value(), fm, segments));
  Tensor out = f->out;
  return q.tape()->record(std::move(out), {q, k, v}, [q, k, v, fm, f](ad::GradTape& t, const Tensor& g) {
    const Tensor& qv = q.value();
    const Tensor& kv = k.value();
    const Tensor& vv = v.value();
    const std::size_t length = qv.rows(), d = qv.cols(), dv = vv.cols();
    const std::size_t n_groups = f->s.size();
    std::vector<Tensor> ds(n_groups, Tensor({d, dv}));
    std::vector<Tensor> dz(n_groups, Tensor({d}));
    Tensor dq({length, d});
    for (std::size_t i = 0; i < length; ++i) {
      const std::size_t grp = f->group[i];
      const double c = f->norm[i];
      const auto gi = g.row(i);
      const auto oi = f->out.row(i);
      double dc = 0.0;
      for (std::size_t b = 0; b < dv; ++b) dc -= gi[b] * oi[b];
      dc /= c;
      const auto pq = f->phi_q.row(i);
      auto dqi = dq.row(i);
      for (std::size_t a = 0; a < d; ++a) {
        const auto srow = f->s[grp].row(a);
        auto dsrow = ds[grp].row(a);
        double acc = f->z[grp][a] * dc;
        for (std::size_t b = 0; b < dv; ++b) {
          const double dn = gi[b] / c;
          acc += srow[b] * dn;
          dsrow[b] += pq[a] * dn;
        }
        dz[grp][a] += pq[a] * dc;
        dqi[a] = acc * phi_prime(fm, qv.at(i, a));
      }
    }
    if (q.requires_grad()) t.accumulate(q, dq);
    if (!k.requires_grad() && !v.requires_grad()) return;
    Tensor dk({length, d});
    Tensor dvv({length, dv});
    for (std::size_t j = 0; j < length; ++j) {
      const std::size_t grp = f->group[j];
      const auto vj = vv.row(j);
      const auto pk = f->phi_k.row(j);
      auto dkj = dk.row(j);
      auto dvj = dvv.row(j);
      for (std::size_t a = 0; a < d; ++a) {
        const auto dsrow = ds[grp].row(a);
        double acc = dz[grp][a];
        for (std::size_t b = 0; b < dv; ++b) {
          acc += dsrow[b] * vj[b];
          dvj[b] += dsrow[b] * pk[a];
        }
        dkj[a] = acc * phi_prime(fm, kv.at(j, a));
      }
    }
    if (k.requires_grad()) t.accumulate(k, dk);
    if (v.requires_grad()) t.accumulate(v, dvv);
  });
}

ad::Var attention_layer(ad::Var x, const AttentionVars& p, AttentionKind kind, FeatureMap fm, SegmentIds segments,
                        const std::optional<Tensor>& mask) {
  const ad::Var q = ad::matmul(x, p.w_q);
  const ad::Var k = ad::matmul(x, p.w_k);
  const ad::Var v = ad::matmul(x, p.w_v);
  const ad::Var a = kind == AttentionKind::kLinear ? linear_attention(q, k, v, fm, segments)
                                                   : softmax_attention(q, k, v, mask);
  return ad::matmul(a, p.w_o);
}

ad::Var hybrid_stack_forward(ad::Var x, std::span<const AttentionVars> params, const HybridStackConfig& cfg,
                             SegmentIds segments) {
  cfg.validate();
  if (params.size() != cfg.n_linear_layers + 1) {
    throw std::invalid_argument("hybrid_stack_forward: expected " + std::to_string(cfg.n_linear_layers + 1) +
                                " parameter sets, got " + std::to_string(params.size()));
  }
  std::optional<Tensor> mask;
  if (!segments.empty()) mask = packing::build_block_mask(segments);
  ad::Var h = x;
  for (std::size_t l = 0; l < params.size(); ++l) {
    const auto kind = l < cfg.n_linear_layers ? AttentionKind::kLinear : AttentionKind::kSoftmax;
    h = attention_layer(h, params[l], kind, cfg.feature_map, segments, mask);
  }
  return h;
}

}  // namespace packenc::attention
