// Copyright 2026 The packenc Authors
// SPDX-License-Identifier: Apache-2.0

#include "packenc/autodiff.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace packenc::ad {

const Tensor& Var::value() const {
  if (!tape_) throw std::logic_error("Var: use of an unbound variable");
  return tape_->value(id_);
}

bool Var::requires_grad() const { return tape_ && tape_->requires_grad(id_); }

void GradTape::check_owned(Var v) const {
  if (v.tape() != this) throw std::logic_error("GradTape: variable belongs to a different tape");
}

Var GradTape::leaf(Tensor value, bool requires_grad) {
  nodes_.push_back(Node{std::move(value), requires_grad && recording(), {}, {}, false});
  return Var(this, nodes_.size() - 1);
}

Var GradTape::record(Tensor value, std::initializer_list<Var> parents, BackwardFn backward) {
  return record(std::move(value), std::span<const Var>(parents.begin(), parents.size()),
                std::move(backward));
}

Var GradTape::record(Tensor value, std::span<const Var> parents, BackwardFn backward) {
  bool needs = false;
  for (const Var& p : parents) {
    check_owned(p);
    needs = needs || nodes_[p.id()].requires_grad;
  }
  needs = needs && recording();
  nodes_.push_back(Node{std::move(value), needs, needs ? std::move(backward) : BackwardFn{}, {}, false});
  return Var(this, nodes_.size() - 1);
}

void GradTape::backward(Var loss) {
  check_owned(loss);
  if (!recording()) throw std::logic_error("GradTape::backward: tape was recorded in inference mode");
  if (consumed_) throw std::logic_error("GradTape::backward: tape already consumed");
  if (loss.value().numel() != 1) {
    throw std::invalid_argument("GradTape::backward: loss must be scalar, got shape " +
                                shape_str(loss.shape()));
  }
  consumed_ = true;
  accumulate(loss, Tensor::ones(loss.shape()));
  for (std::size_t id = loss.id() + 1; id-- > 0;) {
    Node& node = nodes_[id];
    if (node.has_grad && node.backward) node.backward(*this, node.grad);
  }
}

Tensor GradTape::grad(Var v) const {
  check_owned(v);
  const Node& node = nodes_[v.id()];
  return node.has_grad ? node.grad : Tensor::zeros(node.value.shape());
}

void GradTape::accumulate(Var v, const Tensor& g) {
  Node& node = nodes_[v.id()];
  if (!node.requires_grad) return;
  if (g.shape() != node.value.shape()) {
    throw ShapeError("GradTape::accumulate: gradient shape " + shape_str(g.shape()) +
                     " does not match value shape " + shape_str(node.value.shape()));
  }
  if (node.has_grad) {
    axpy(node.grad, 1.0, g);
  } else {
    node.grad = g;
    node.has_grad = true;
  }
}

namespace {

GradTape& tape_of(Var a) {
  if (!a.valid()) throw std::logic_error("autodiff: unbound variable");
  return *a.tape();
}

GradTape& tape_of(std::span<const Var> vs) {
  if (vs.empty()) throw std::invalid_argument("autodiff: empty operand list");
  return tape_of(vs.front());
}

void require_rows(const char* op, const Tensor& x, std::size_t begin, std::size_t end) {
  if (x.rank() != 2 || begin >= end || end > x.rows()) {
    throw ShapeError(std::string(op) + ": row range [" + std::to_string(begin) + ", " +
                     std::to_string(end) + ") invalid for shape " + shape_str(x.shape()));
  }
}

}  // namespace

Var matmul(Var a, Var b) {
  return tape_of(a).record(packenc::matmul(a.value(), b.value()), {a, b},
                           [a, b](GradTape& t, const Tensor& g) {
                             if (a.requires_grad()) t.accumulate(a, matmul_nt(g, b.value()));
                             if (b.requires_grad()) t.accumulate(b, matmul_tn(a.value(), g));
                           });
}

Var matmul_nt(Var a, Var b) {
  return tape_of(a).record(packenc::matmul_nt(a.value(), b.value()), {a, b},
                           [a, b](GradTape& t, const Tensor& g) {
                             if (a.requires_grad()) t.accumulate(a, packenc::matmul(g, b.value()));
                             if (b.requires_grad()) t.accumulate(b, matmul_tn(g, a.value()));
                           });
}

Var transpose(Var a) {
  return tape_of(a).record(packenc::transpose(a.value()), {a}, [a](GradTape& t, const Tensor& g) {
    t.accumulate(a, packenc::transpose(g));
  });
}

Var add(Var a, Var b) {
  return tape_of(a).record(packenc::add(a.value(), b.value()), {a, b},
                           [a, b](GradTape& t, const Tensor& g) {
                             t.accumulate(a, g);
                             t.accumulate(b, g);
                           });
}

Var sub(Var a, Var b) {
  return tape_of(a).record(packenc::sub(a.value(), b.value()), {a, b},
                           [a, b](GradTape& t, const Tensor& g) {
                             t.accumulate(a, g);
                             if (b.requires_grad()) t.accumulate(b, packenc::scale(g, -1.0));
                           });
}

Var mul(Var a, Var b) {
  return tape_of(a).record(packenc::mul(a.value(), b.value()), {a, b},
                           [a, b](GradTape& t, const Tensor& g) {
                             if (a.requires_grad()) t.accumulate(a, packenc::mul(g, b.value()));
                             if (b.requires_grad()) t.accumulate(b, packenc::mul(g, a.value()));
                           });
}

Var scale(Var a, double s) {
  return tape_of(a).record(packenc::scale(a.value(), s), {a}, [a, s](GradTape& t, const Tensor& g) {
    t.accumulate(a, packenc::scale(g, s));
  });
}

Var add_row_vector(Var x, Var bias) {
  const Tensor& xv = x.value();
  const Tensor& bv = bias.value();
  if (xv.rank() != 2 || bv.numel() != xv.cols()) {
    throw ShapeError("add_row_vector: incompatible shapes " + shape_str(xv.shape()) + " and " +
                     shape_str(bv.shape()));
  }
  Tensor out = xv;
  for (std::size_t r = 0; r < out.rows(); ++r) {
    auto row = out.row(r);
    for (std::size_t c = 0; c < row.size(); ++c) row[c] += bv[c];
  }
  return tape_of(x).record(std::move(out), {x, bias}, [x, bias](GradTape& t, const Tensor& g) {
    t.accumulate(x, g);
    if (bias.requires_grad()) {
      Tensor gb = Tensor::zeros(bias.shape());
      for (std::size_t r = 0; r < g.rows(); ++r) {
        auto row = g.row(r);
        for (std::size_t c = 0; c < row.size(); ++c) gb[c] += row[c];
      }
      t.accumulate(bias, gb);
    }
  });
}

Var scale_rows(Var x, Var w) {
  const Tensor& xv = x.value();
  const Tensor& wv = w.value();
  if (xv.rank() != 2 || wv.numel() != xv.rows()) {
    throw ShapeError("scale_rows: incompatible shapes " + shape_str(xv.shape()) + " and " +
                     shape_str(wv.shape()));
  }
  Tensor out = xv;
  for (std::size_t r = 0; r < out.rows(); ++r)
    for (auto& v : out.row(r)) v *= wv[r];
  return tape_of(x).record(std::move(out), {x, w}, [x, w](GradTape& t, const Tensor& g) {
    const Tensor& xv = x.value();
    const Tensor& wv = w.value();
    if (x.requires_grad()) {
      Tensor gx = g;
      for (std::size_t r = 0; r < gx.rows(); ++r)
        for (auto& v : gx.row(r)) v *= wv[r];
      t.accumulate(x, gx);
    }
    if (w.requires_grad()) {
      Tensor gw = Tensor::zeros(w.shape());
      for (std::size_t r = 0; r < xv.rows(); ++r) {
        double acc = 0.0;
        auto gr = g.row(r);
        auto xr = xv.row(r);
        for (std::size_t c = 0; c < gr.size(); ++c) acc += gr[c] * xr[c];
        gw[r] = acc;
      }
      t.accumulate(w, gw);
    }
  });
}

Var weighted_sum(Var weights, std::span<const Var> terms) {
  const Tensor& wv = weights.value();
  if (terms.empty() || wv.numel() != terms.size()) {
    throw ShapeError("weighted_sum: " + std::to_string(terms.size()) + " terms for weights of shape " +
                     shape_str(wv.shape()));
  }
  Tensor out = Tensor::zeros(terms.front().shape());
  for (std::size_t i = 0; i < terms.size(); ++i) {
    if (terms[i].shape() != out.shape()) {
      throw ShapeError("weighted_sum: term shapes " + shape_str(out.shape()) + " and " +
                       shape_str(terms[i].shape()) + " differ");
    }
    axpy(out, wv[i], terms[i].value());
  }
  std::vector<Var> parents(terms.begin(), terms.end());
  parents.push_back(weights);
  std::vector<Var> captured(terms.begin(), terms.end());
  return tape_of(weights).record(
      std::move(out), parents, [weights, captured](GradTape& t, const Tensor& g) {
        const Tensor& wv = weights.value();
        Tensor gw = Tensor::zeros(weights.shape());
        for (std::size_t i = 0; i < captured.size(); ++i) {
          if (captured[i].requires_grad()) t.accumulate(captured[i], packenc::scale(g, wv[i]));
          const Tensor& ti = captured[i].value();
          double acc = 0.0;
          for (std::size_t j = 0; j < g.numel(); ++j) acc += g[j] * ti[j];
          gw[i] = acc;
        }
        t.accumulate(weights, gw);
      });
}

Var sum(Var a) {
  return tape_of(a).record(Tensor::scalar(packenc::sum(a.value())), {a},
                           [a](GradTape& t, const Tensor& g) {
                             t.accumulate(a, Tensor(a.shape(), g.item()));
                           });
}

Var mean(Var a) {
  const double n = static_cast<double>(a.value().numel());
  return tape_of(a).record(Tensor::scalar(packenc::sum(a.value()) / n), {a},
                           [a, n](GradTape& t, const Tensor& g) {
                             t.accumulate(a, Tensor(a.shape(), g.item() / n));
                           });
}

Var mean_rows(Var x, std::size_t begin, std::size_t end) {
  const Tensor& xv = x.value();
  require_rows("mean_rows", xv, begin, end);
  const double count = static_cast<double>(end - begin);
  Tensor out({1, xv.cols()});
  for (std::size_t r = begin; r < end; ++r) {
    auto row = xv.row(r);
    for (std::size_t c = 0; c < row.size(); ++c) out[c] += row[c];
  }
  for (auto& v : out.data()) v /= count;
  return tape_of(x).record(std::move(out), {x}, [x, begin, end, count](GradTape& t, const Tensor& g) {
    Tensor gx = Tensor::zeros(x.shape());
    for (std::size_t r = begin; r < end; ++r) {
      auto row = gx.row(r);
      for (std::size_t c = 0; c < row.size(); ++c) row[c] = g[c] / count;
    }
    t.accumulate(x, gx);
  });
}

Var silu(Var x) {
  return tape_of(x).record(packenc::silu(x.value()), {x}, [x](GradTape& t, const Tensor& g) {
    const Tensor& xv = x.value();
    Tensor gx = g;
    for (std::size_t i = 0; i < gx.numel(); ++i) {
      const double s = sigmoid(xv[i]);
      gx[i] *= s * (1.0 + xv[i] * (1.0 - s));
    }
    t.accumulate(x, gx);
  });
}

Var softmax_rows(Var x) {
  Tensor y = packenc::softmax_rows(x.value());
  GradTape& tape = tape_of(x);
  // The output value is read back from the tape inside the closure.
  const std::size_t out_id = tape.size();
  return tape.record(std::move(y), {x}, [x, out_id](GradTape& t, const Tensor& g) {
    const Tensor& y = t.value(out_id);
    Tensor gx = g;
    for (std::size_t r = 0; r < y.rows(); ++r) {
      auto yr = y.row(r);
      auto gr = gx.row(r);
      double dot = 0.0;
      for (std::size_t c = 0; c < yr.size(); ++c) dot += gr[c] * yr[c];
      for (std::size_t c = 0; c < yr.size(); ++c) gr[c] = yr[c] * (gr[c] - dot);
    }
    t.accumulate(x, gx);
  });
}

Var log_softmax_rows(Var x) {
  Tensor y = packenc::log_softmax_rows(x.value());
  GradTape& tape = tape_of(x);
  const std::size_t out_id = tape.size();
  return tape.record(std::move(y), {x}, [x, out_id](GradTape& t, const Tensor& g) {
    const Tensor& y = t.value(out_id);
    Tensor gx = g;
    for (std::size_t r = 0; r < y.rows(); ++r) {
      auto yr = y.row(r);
      auto gr = gx.row(r);
      double total = 0.0;
      for (double v : gr) total += v;
      for (std::size_t c = 0; c < yr.size(); ++c) gr[c] -= std::exp(yr[c]) * total;
    }
    t.accumulate(x, gx);
  });
}

Var l2_norm_rows(Var x) {
  Tensor n = packenc::l2_norm_rows(x.value());
  GradTape& tape = tape_of(x);
  const std::size_t out_id = tape.size();
  return tape.record(std::move(n), {x}, [x, out_id](GradTape& t, const Tensor& g) {
    const Tensor& norms = t.value(out_id);
    Tensor gx = x.value();
    for (std::size_t r = 0; r < gx.rows(); ++r) {
      const double f = norms[r] > 0.0 ? g[r] / norms[r] : 0.0;
      for (auto& v : gx.row(r)) v *= f;
    }
    t.accumulate(x, gx);
  });
}

Var normalize_rows(Var x) {
  const Tensor& xv = x.value();
  Tensor norms = packenc::l2_norm_rows(xv);
  Tensor y = xv;
  for (std::size_t r = 0; r < y.rows(); ++r) {
    if (norms[r] == 0.0) {
      throw std::domain_error("normalize_rows: row " + std::to_string(r) + " has zero norm");
    }
    for (auto& v : y.row(r)) v /= norms[r];
  }
  GradTape& tape = tape_of(x);
  const std::size_t out_id = tape.size();
  return tape.record(std::move(y), {x}, [x, out_id, norms](GradTape& t, const Tensor& g) {
    const Tensor& y = t.value(out_id);
    Tensor gx = g;
    for (std::size_t r = 0; r < y.rows(); ++r) {
      auto yr = y.row(r);
      auto gr = gx.row(r);
      double dot = 0.0;
      for (std::size_t c = 0; c < yr.size(); ++c) dot += gr[c] * yr[c];
      for (std::size_t c = 0; c < yr.size(); ++c) gr[c] = (gr[c] - yr[c] * dot) / norms[r];
    }
    t.accumulate(x, gx);
  });
}

Var layer_norm_rows(Var x, Var gamma, Var beta, double eps) {
  const Tensor& xv = x.value();
  if (xv.rank() != 2 || gamma.value().numel() != xv.cols() || beta.value().numel() != xv.cols()) {
    throw ShapeError("layer_norm_rows: incompatible shapes " + shape_str(xv.shape()) + ", " +
                     shape_str(gamma.shape()) + " and " + shape_str(beta.shape()));
  }
  const std::size_t m = xv.rows(), n = xv.cols();
  Tensor xhat({m, n});
  Tensor inv_std({m});
  Tensor out({m, n});
  const Tensor& gv = gamma.value();
  const Tensor& bv = beta.value();
  for (std::size_t r = 0; r < m; ++r) {
    auto xr = xv.row(r);
    double mu = 0.0;
    for (double v : xr) mu += v;
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (double v : xr) var += (v - mu) * (v - mu);
    var /= static_cast<double>(n);
    const double rs = 1.0 / std::sqrt(var + eps);
    inv_std[r] = rs;
    for (std::size_t c = 0; c < n; ++c) {
      const double h = (xr[c] - mu) * rs;
      xhat.at(r, c) = h;
      out.at(r, c) = gv[c] * h + bv[c];
    }
  }
  return tape_of(x).record(
      std::move(out), {x, gamma, beta},
      [x, gamma, beta, xhat, inv_std](GradTape& t, const Tensor& g) {
        const std::size_t m = xhat.rows(), n = xhat.cols();
        const Tensor& gv = gamma.value();
        if (gamma.requires_grad() || beta.requires_grad()) {
          Tensor gg = Tensor::zeros(gamma.shape());
          Tensor gb = Tensor::zeros(beta.shape());
          for (std::size_t r = 0; r < m; ++r)
            for (std::size_t c = 0; c < n; ++c) {
              gg[c] += g.at(r, c) * xhat.at(r, c);
              gb[c] += g.at(r, c);
            }
          t.accumulate(gamma, gg);
          t.accumulate(beta, gb);
        }
        if (x.requires_grad()) {
          Tensor gx({m, n});
          const double dn = static_cast<double>(n);
          for (std::size_t r = 0; r < m; ++r) {
            double s1 = 0.0, s2 = 0.0;
            for (std::size_t c = 0; c < n; ++c) {
              const double dh = g.at(r, c) * gv[c];
              s1 += dh;
              s2 += dh * xhat.at(r, c);
            }
            for (std::size_t c = 0; c < n; ++c) {
              const double dh = g.at(r, c) * gv[c];
              gx.at(r, c) = inv_std[r] / dn * (dn * dh - s1 - xhat.at(r, c) * s2);
            }
          }
          t.accumulate(x, gx);
        }
      });
}

Var reshape(Var a, Shape shape) {
  return tape_of(a).record(a.value().reshaped(std::move(shape)), {a},
                           [a](GradTape& t, const Tensor& g) { t.accumulate(a, g.reshaped(a.shape())); });
}

Var slice_rows(Var x, std::size_t begin, std::size_t end) {
  const Tensor& xv = x.value();
  require_rows("slice_rows", xv, begin, end);
  const std::size_t n = xv.cols();
  std::vector<double> data(xv.data().begin() + static_cast<std::ptrdiff_t>(begin * n),
                           xv.data().begin() + static_cast<std::ptrdiff_t>(end * n));
  return tape_of(x).record(Tensor({end - begin, n}, std::move(data)), {x},
                           [x, begin, n](GradTape& t, const Tensor& g) {
                             Tensor gx = Tensor::zeros(x.shape());
                             std::copy(g.data().begin(), g.data().end(),
                                       gx.data().begin() + static_cast<std::ptrdiff_t>(begin * n));
                             t.accumulate(x, gx);
                           });
}

Var gather_rows(Var x, std::span<const std::size_t> rows) {
  const Tensor& xv = x.value();
  if (xv.rank() != 2 || rows.empty()) {
    throw ShapeError("gather_rows: need a matrix and at least one row, got " + shape_str(xv.shape()));
  }
  Tensor out({rows.size(), xv.cols()});
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= xv.rows()) {
      throw ShapeError("gather_rows: row " + std::to_string(rows[i]) + " out of range for " +
                       shape_str(xv.shape()));
    }
    std::copy(xv.row(rows[i]).begin(), xv.row(rows[i]).end(), out.row(i).begin());
  }
  std::vector<std::size_t> idx(rows.begin(), rows.end());
  return tape_of(x).record(std::move(out), {x}, [x, idx](GradTape& t, const Tensor& g) {
    Tensor gx = Tensor::zeros(x.shape());
    for (std::size_t i = 0; i < idx.size(); ++i) {
      auto dst = gx.row(idx[i]);
      auto src = g.row(i);
      for (std::size_t c = 0; c < dst.size(); ++c) dst[c] += src[c];
    }
    t.accumulate(x, gx);
  });
}

Var scatter_add_rows(Var x, std::span<const std::size_t> rows, std::size_t n_rows) {
  const Tensor& xv = x.value();
  if (xv.rank() != 2 || rows.size() != xv.rows()) {
    throw ShapeError("scatter_add_rows: " + std::to_string(rows.size()) + " targets for shape " +
                     shape_str(xv.shape()));
  }
  Tensor out({n_rows, xv.cols()});
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= n_rows) throw ShapeError("scatter_add_rows: target row out of range");
    auto dst = out.row(rows[i]);
    auto src = xv.row(i);
    for (std::size_t c = 0; c < dst.size(); ++c) dst[c] += src[c];
  }
  std::vector<std::size_t> idx(rows.begin(), rows.end());
  return tape_of(x).record(std::move(out), {x}, [x, idx](GradTape& t, const Tensor& g) {
    Tensor gx(x.shape());
    for (std::size_t i = 0; i < idx.size(); ++i)
      std::copy(g.row(idx[i]).begin(), g.row(idx[i]).end(), gx.row(i).begin());
    t.accumulate(x, gx);
  });
}

Var gather(Var x, std::span<const std::size_t> flat_index, Shape shape) {
  const Tensor& xv = x.value();
  if (shape_numel(shape) != flat_index.size()) {
    throw ShapeError("gather: " + std::to_string(flat_index.size()) + " indices for shape " +
                     shape_str(shape));
  }
  Tensor out(std::move(shape));
  for (std::size_t i = 0; i < flat_index.size(); ++i) {
    if (flat_index[i] >= xv.numel()) throw ShapeError("gather: index out of range for " + shape_str(xv.shape()));
    out[i] = xv[flat_index[i]];
  }
  std::vector<std::size_t> idx(flat_index.begin(), flat_index.end());
  return tape_of(x).record(std::move(out), {x}, [x, idx](GradTape& t, const Tensor& g) {
    Tensor gx = Tensor::zeros(x.shape());
    for (std::size_t i = 0; i < idx.size(); ++i) gx[idx[i]] += g[i];
    t.accumulate(x, gx);
  });
}

Var concat_rows(std::span<const Var> parts) {
  GradTape& tape = tape_of(parts);
  const std::size_t n = parts.front().value().cols();
  std::size_t total = 0;
  for (const Var& p : parts) {
    if (p.value().rank() != 2 || p.value().cols() != n) {
      throw ShapeError("concat_rows: incompatible shapes " + shape_str(parts.front().shape()) + " and " +
                       shape_str(p.shape()));
    }
    total += p.value().rows();
  }
  std::vector<double> data;
  data.reserve(total * n);
  for (const Var& p : parts) data.insert(data.end(), p.value().data().begin(), p.value().data().end());
  std::vector<Var> captured(parts.begin(), parts.end());
  return tape.record(Tensor({total, n}, std::move(data)), parts, [captured](GradTape& t, const Tensor& g) {
    std::size_t offset = 0;
    for (const Var& p : captured) {
      const std::size_t len = p.value().numel();
      if (p.requires_grad()) {
        std::vector<double> part(g.data().begin() + static_cast<std::ptrdiff_t>(offset),
                                 g.data().begin() + static_cast<std::ptrdiff_t>(offset + len));
        t.accumulate(p, Tensor(p.shape(), std::move(part)));
      }
      offset += len;
    }
  });
}

Var concat_cols(std::span<const Var> parts) {
  GradTape& tape = tape_of(parts);
  const std::size_t m = parts.front().value().rows();
  std::size_t total = 0;
  for (const Var& p : parts) {
    if (p.value().rank() != 2 || p.value().rows() != m) {
      throw ShapeError("concat_cols: incompatible shapes " + shape_str(parts.front().shape()) + " and " +
                       shape_str(p.shape()));
    }
    total += p.value().cols();
  }
  Tensor out({m, total});
  std::size_t offset = 0;
  for (const Var& p : parts) {
    const Tensor& pv = p.value();
    for (std::size_t r = 0; r < m; ++r)
      std::copy(pv.row(r).begin(), pv.row(r).end(), out.row(r).begin() + static_cast<std::ptrdiff_t>(offset));
    offset += pv.cols();
  }
  std::vector<Var> captured(parts.begin(), parts.end());
  return tape.record(std::move(out), parts, [captured](GradTape& t, const Tensor& g) {
    std::size_t offset = 0;
    for (const Var& p : captured) {
      const std::size_t w = p.value().cols();
      if (p.requires_grad()) {
        Tensor gp(p.shape());
        for (std::size_t r = 0; r < gp.rows(); ++r) {
          auto src = g.row(r).subspan(offset, w);
          std::copy(src.begin(), src.end(), gp.row(r).begin());
        }
        t.accumulate(p, gp);
      }
      offset += w;
    }
  });
}

Var mse(Var a, Var b) {
  const Tensor diff = packenc::sub(a.value(), b.value());
  double acc = 0.0;
  for (double v : diff.data()) acc += v * v;
  const double n = static_cast<double>(diff.numel());
  return tape_of(a).record(Tensor::scalar(acc / n), {a, b}, [a, b, diff, n](GradTape& t, const Tensor& g) {
    const Tensor ga = packenc::scale(diff, 2.0 * g.item() / n);
    t.accumulate(a, ga);
    if (b.requires_grad()) t.accumulate(b, packenc::scale(ga, -1.0));
  });
}

}  // namespace packenc::ad
