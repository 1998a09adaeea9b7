#include "d3pcqa/net/autograd.hpp"

#include <algorithm>
#include <cassert>
#include <cmath>
#include <unordered_set>

#include "d3pcqa/errors.hpp"

namespace d3pcqa::net {

struct Var::Node {
  Tensor value;
  Tensor grad;
  bool requires_grad = false;
  std::vector<Var> parents;
  BackwardFn backward;
};

Var::Var(Tensor value, bool requires_grad) : node_(std::make_shared<Node>()) {
  node_->value = std::move(value);
  node_->requires_grad = requires_grad;
}

const Tensor& Var::value() const { return node_->value; }
Tensor& Var::mutable_value() { return node_->value; }
bool Var::requires_grad() const { return node_ && node_->requires_grad; }

const Tensor& Var::grad() const {
  if (node_->grad.empty() && !node_->value.empty()) node_->grad = Tensor(node_->value.shape(), 0.0);
  return node_->grad;
}

Tensor& Var::mutable_grad() {
  if (node_->grad.empty() && !node_->value.empty()) node_->grad = Tensor(node_->value.shape(), 0.0);
  return node_->grad;
}

void Var::zero_grad() {
  if (node_) node_->grad = Tensor();
}

void Var::accumulate(std::span<const double> g) {
  if (!requires_grad()) return;
  Tensor& dst = mutable_grad();
  assert(dst.size() == g.size());
  double* d = dst.data();
  for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i];
}

void Var::accumulate(const Tensor& g) { accumulate(g.values()); }

Var Var::op(Tensor value, std::vector<Var> parents, BackwardFn backward_fn) {
  assert(value.all_finite() && "non-finite value produced by an operation");
  Var out(std::move(value), false);
  const bool needs = std::any_of(parents.begin(), parents.end(),
                                 [](const Var& p) { return p.requires_grad(); });
  if (needs) {
    out.node_->requires_grad = true;
    out.node_->parents = std::move(parents);
    out.node_->backward = std::move(backward_fn);
  }
  return out;
}

void backward(const Var& root) {
  if (!root.requires_grad()) return;
  if (root.value().size() != 1) throw ShapeError("backward: root must hold a single value");

  // Iterative post-order DFS yields a topological order.
  std::vector<Var::Node*> order;
  std::unordered_set<Var::Node*> seen;
  std::vector<std::pair<Var::Node*, std::size_t>> stack;
  stack.emplace_back(root.node_.get(), 0);
  seen.insert(root.node_.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Var::Node* p = node->parents[next++].node_.get();
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  Tensor& seed = root.node_->grad;
  if (seed.empty()) seed = Tensor(root.value().shape(), 0.0);
  seed[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Var::Node* node = *it;
    if (!node->backward || node->grad.empty()) continue;
    node->backward(node->value, node->grad, node->parents);
    node->grad = Tensor();  // interior gradients are not needed afterwards
  }
}

Var constant(Tensor value) { return Var(std::move(value), false); }

// ===========================================================================

namespace {

void require(bool ok, const std::string& what) {
  if (!ok) throw ShapeError(what);
}

void require_matrix(const Var& x, const char* op) {
  require(x.value().rank() == 2, std::string(op) + ": expected a matrix, got " + shape_str(x.shape()));
}

// C[n,m] += A[n,k] * B[k,m]
void gemm_nn(const double* a, const double* b, double* c, std::size_t n, std::size_t k,
             std::size_t m) {
  for (std::size_t i = 0; i < n; ++i) {
    double* ci = c + i * m;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a[i * k + p];
      if (av == 0.0) continue;
      const double* bp = b + p * m;
      for (std::size_t j = 0; j < m; ++j) ci[j] += av * bp[j];
    }
  }
}

// C[n,m] += A[n,k] * B[m,k]^T
void gemm_nt(const double* a, const double* b, double* c, std::size_t n, std::size_t k,
             std::size_t m) {
  for (std::size_t i = 0; i < n; ++i) {
    const double* ai = a + i * k;
    for (std::size_t j = 0; j < m; ++j) {
      const double* bj = b + j * k;
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += ai[p] * bj[p];
      c[i * m + j] += s;
    }
  }
}

// C[k,m] += A[n,k]^T * B[n,m]
void gemm_tn(const double* a, const double* b, double* c, std::size_t n, std::size_t k,
             std::size_t m) {
  for (std::size_t i = 0; i < n; ++i) {
    const double* bi = b + i * m;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a[i * k + p];
      if (av == 0.0) continue;
      double* cp = c + p * m;
      for (std::size_t j = 0; j < m; ++j) cp[j] += av * bi[j];
    }
  }
}

template <typename F>
Var unary(const Var& x, F&& f, std::function<double(double, double, double)> df) {
  const Tensor& xv = x.value();
  Tensor y(xv.shape());
  for (std::size_t i = 0; i < xv.size(); ++i) y[i] = f(xv[i]);
  return Var::op(std::move(y), {x}, [df](const Tensor& yc, const Tensor& g, std::span<Var> ps) {
    const Tensor& xv = ps[0].value();
    Tensor dx(xv.shape());
    for (std::size_t i = 0; i < xv.size(); ++i) dx[i] = g[i] * df(xv[i], yc[i], g[i]);
    ps[0].accumulate(dx);
  });
}

}  // namespace

Var matmul(const Var& a, const Var& b) {
  require_matrix(a, "matmul");
  require_matrix(b, "matmul");
  const std::size_t n = a.value().dim(0), k = a.value().dim(1), m = b.value().dim(1);
  require(b.value().dim(0) == k, "matmul: inner dimensions differ " + shape_str(a.shape()) + " x " +
                                     shape_str(b.shape()));
  Tensor c({n, m}, 0.0);
  gemm_nn(a.value().data(), b.value().data(), c.data(), n, k, m);
  return Var::op(std::move(c), {a, b}, [n, k, m](const Tensor&, const Tensor& g, std::span<Var> ps) {
    if (ps[0].requires_grad()) {
      Tensor da({n, k}, 0.0);
      gemm_nt(g.data(), ps[1].value().data(), da.data(), n, m, k);
      ps[0].accumulate(da);
    }
    if (ps[1].requires_grad()) {
      Tensor db({k, m}, 0.0);
      gemm_tn(ps[0].value().data(), g.data(), db.data(), n, k, m);
      ps[1].accumulate(db);
    }
  });
}

Var matmul_nt(const Var& a, const Var& b) {
  require_matrix(a, "matmul_nt");
  require_matrix(b, "matmul_nt");
  const std::size_t n = a.value().dim(0), k = a.value().dim(1), m = b.value().dim(0);
  require(b.value().dim(1) == k, "matmul_nt: inner dimensions differ");
  Tensor c({n, m}, 0.0);
  gemm_nt(a.value().data(), b.value().data(), c.data(), n, k, m);
  return Var::op(std::move(c), {a, b}, [n, k, m](const Tensor&, const Tensor& g, std::span<Var> ps) {
    if (ps[0].requires_grad()) {
      Tensor da({n, k}, 0.0);
      gemm_nn(g.data(), ps[1].value().data(), da.data(), n, m, k);
      ps[0].accumulate(da);
    }
    if (ps[1].requires_grad()) {
      Tensor db({m, k}, 0.0);
      gemm_tn(g.data(), ps[0].value().data(), db.data(), n, m, k);
      ps[1].accumulate(db);
    }
  });
}

Var add_bias(const Var& x, const Var& bias) {
  require_matrix(x, "add_bias");
  const std::size_t n = x.value().dim(0), m = x.value().dim(1);
  require(bias.value().size() == m, "add_bias: bias length " + std::to_string(bias.value().size()) +
                                        " vs " + std::to_string(m) + " columns");
  Tensor y = x.value();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < m; ++j) y[i * m + j] += bias.value()[j];
  }
  return Var::op(std::move(y), {x, bias}, [n, m](const Tensor&, const Tensor& g, std::span<Var> ps) {
    ps[0].accumulate(g);
    if (ps[1].requires_grad()) {
      std::vector<double> db(m, 0.0);
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < m; ++j) db[j] += g[i * m + j];
      }
      ps[1].accumulate(db);
    }
  });
}

Var add(const Var& a, const Var& b) {
  require(a.value().size() == b.value().size(), "add: size mismatch");
  Tensor y = a.value();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] += b.value()[i];
  return Var::op(std::move(y), {a, b}, [](const Tensor&, const Tensor& g, std::span<Var> ps) {
    ps[0].accumulate(g);
    ps[1].accumulate(g);
  });
}

Var sub(const Var& a, const Var& b) {
  require(a.value().size() == b.value().size(), "sub: size mismatch");
  Tensor y = a.value();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] -= b.value()[i];
  return Var::op(std::move(y), {a, b}, [](const Tensor&, const Tensor& g, std::span<Var> ps) {
    ps[0].accumulate(g);
    if (ps[1].requires_grad()) {
      Tensor ng = g;
      for (auto& v : ng.values()) v = -v;
      ps[1].accumulate(ng);
    }
  });
}

Var mul(const Var& a, const Var& b) {
  require(a.value().size() == b.value().size(), "mul: size mismatch");
  Tensor y = a.value();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] *= b.value()[i];
  return Var::op(std::move(y), {a, b}, [](const Tensor&, const Tensor& g, std::span<Var> ps) {
    for (int s = 0; s < 2; ++s) {
      if (!ps[s].requires_grad()) continue;
      Tensor d = g;
      const Tensor& other = ps[1 - s].value();
      for (std::size_t i = 0; i < d.size(); ++i) d[i] *= other[i];
      ps[s].accumulate(d);
    }
  });
}

Var scale(const Var& x, double s) {
  Tensor y = x.value();
  for (auto& v : y.values()) v *= s;
  return Var::op(std::move(y), {x}, [s](const Tensor&, const Tensor& g, std::span<Var> ps) {
    Tensor d = g;
    for (auto& v : d.values()) v *= s;
    ps[0].accumulate(d);
  });
}

Var add_scalar(const Var& x, double s) {
  Tensor y = x.value();
  for (auto& v : y.values()) v += s;
  return Var::op(std::move(y), {x}, [](const Tensor&, const Tensor& g, std::span<Var> ps) { ps[0].accumulate(g); });
}

Var relu(const Var& x) {
  return unary(
      x, [](double v) { return v > 0 ? v : 0.0; },
      [](double xv, double, double) { return xv > 0 ? 1.0 : 0.0; });
}

Var sigmoid(const Var& x) {
  return unary(
      x,
      [](double v) {
        if (v >= 0) return 1.0 / (1.0 + std::exp(-v));
        const double e = std::exp(v);
        return e / (1.0 + e);
      },
      [](double, double y, double) { return y * (1.0 - y); });
}

Var softmax_rows(const Var& x) {
  require_matrix(x, "softmax_rows");
  const std::size_t n = x.value().dim(0), m = x.value().dim(1);
  Tensor y(x.shape());
  for (std::size_t i = 0; i < n; ++i) {
    const auto xr = x.value().row_span(i);
    const double mx = *std::max_element(xr.begin(), xr.end());
    double z = 0.0;
    for (std::size_t j = 0; j < m; ++j) z += (y[i * m + j] = std::exp(xr[j] - mx));
    for (std::size_t j = 0; j < m; ++j) y[i * m + j] /= z;
  }
  return Var::op(std::move(y), {x}, [n, m](const Tensor& yc, const Tensor& g, std::span<Var> ps) {
    Tensor dx({n, m});
    for (std::size_t i = 0; i < n; ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < m; ++j) dot += g[i * m + j] * yc[i * m + j];
      for (std::size_t j = 0; j < m; ++j) dx[i * m + j] = yc[i * m + j] * (g[i * m + j] - dot);
    }
    ps[0].accumulate(dx);
  });
}

Var l2_normalize_rows(const Var& x) {
  require_matrix(x, "l2_normalize_rows");
  const std::size_t n = x.value().dim(0), m = x.value().dim(1);
  Tensor y(x.shape());
  std::vector<double> norms(n);
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (double v : x.value().row_span(i)) s += v * v;
    norms[i] = std::max(std::sqrt(s), 1e-12);
    for (std::size_t j = 0; j < m; ++j) y[i * m + j] = x.value()[i * m + j] / norms[i];
  }
  return Var::op(std::move(y), {x}, [norms, n, m](const Tensor& yc, const Tensor& g, std::span<Var> ps) {
    Tensor dx({n, m});
    for (std::size_t i = 0; i < n; ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < m; ++j) dot += yc[i * m + j] * g[i * m + j];
      for (std::size_t j = 0; j < m; ++j) {
        dx[i * m + j] = (g[i * m + j] - yc[i * m + j] * dot) / norms[i];
      }
    }
    ps[0].accumulate(dx);
  });
}

Var reshape(const Var& x, Shape shape) {
  Tensor y = x.value().reshaped(std::move(shape));
  return Var::op(std::move(y), {x}, [](const Tensor&, const Tensor& g, std::span<Var> ps) { ps[0].accumulate(g); });
}

Var slice_cols(const Var& x, std::size_t start, std::size_t count) {
  require_matrix(x, "slice_cols");
  const std::size_t n = x.value().dim(0), m = x.value().dim(1);
  require(start + count <= m, "slice_cols: range out of bounds");
  Tensor y({n, count});
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < count; ++j) y[i * count + j] = x.value()[i * m + start + j];
  }
  return Var::op(std::move(y), {x}, [n, m, start, count](const Tensor&, const Tensor& g, std::span<Var> ps) {
    Tensor dx({n, m}, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < count; ++j) dx[i * m + start + j] = g[i * count + j];
    }
    ps[0].accumulate(dx);
  });
}

Var concat_cols(std::span<const Var> parts) {
  require(!parts.empty(), "concat_cols: no inputs");
  const std::size_t n = parts[0].value().dim(0);
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (const auto& p : parts) {
    require_matrix(p, "concat_cols");
    require(p.value().dim(0) == n, "concat_cols: row counts differ");
    widths.push_back(p.value().dim(1));
    total += widths.back();
  }
  Tensor y({n, total});
  std::size_t off = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    for (std::size_t i = 0; i < n; ++i) {
      std::copy_n(parts[k].value().data() + i * widths[k], widths[k], y.data() + i * total + off);
    }
    off += widths[k];
  }
  return Var::op(std::move(y), std::vector<Var>(parts.begin(), parts.end()),
                 [n, total, widths](const Tensor&, const Tensor& g, std::span<Var> ps) {
                   std::size_t off = 0;
                   for (std::size_t k = 0; k < ps.size(); ++k) {
                     if (ps[k].requires_grad()) {
                       Tensor d({n, widths[k]});
                       for (std::size_t i = 0; i < n; ++i) {
                         std::copy_n(g.data() + i * total + off, widths[k], d.data() + i * widths[k]);
                       }
                       ps[k].accumulate(d);
                     }
                     off += widths[k];
                   }
                 });
}

Var concat_rows(std::span<const Var> parts) {
  require(!parts.empty(), "concat_rows: no inputs");
  const std::size_t m = parts[0].value().cols();
  std::vector<std::size_t> counts;
  std::size_t total = 0;
  for (const auto& p : parts) {
    require(p.value().cols() == m, "concat_rows: column counts differ");
    counts.push_back(p.value().rows());
    total += counts.back();
  }
  Tensor y({total, m});
  std::size_t off = 0;
  for (const auto& p : parts) {
    std::copy(p.value().storage().begin(), p.value().storage().end(), y.data() + off * m);
    off += p.value().rows();
  }
  return Var::op(std::move(y), std::vector<Var>(parts.begin(), parts.end()),
                 [m, counts](const Tensor&, const Tensor& g, std::span<Var> ps) {
                   std::size_t off = 0;
                   for (std::size_t k = 0; k < ps.size(); ++k) {
                     if (ps[k].requires_grad()) {
                       ps[k].accumulate(std::span<const double>(g.data() + off * m, counts[k] * m));
                     }
                     off += counts[k];
                   }
                 });
}

Var gather_rows(const Var& x, std::span<const std::size_t> indices) {
  const std::size_t n = x.value().rows(), m = x.value().cols();
  Tensor y({indices.size(), m});
  for (std::size_t i = 0; i < indices.size(); ++i) {
    require(indices[i] < n, "gather_rows: index out of range");
    std::copy_n(x.value().data() + indices[i] * m, m, y.data() + i * m);
  }
  std::vector<std::size_t> idx(indices.begin(), indices.end());
  Shape in_shape = x.shape();
  return Var::op(std::move(y), {x}, [idx, m, in_shape](const Tensor&, const Tensor& g, std::span<Var> ps) {
    Tensor dx(in_shape, 0.0);
    for (std::size_t i = 0; i < idx.size(); ++i) {
      for (std::size_t j = 0; j < m; ++j) dx[idx[i] * m + j] += g[i * m + j];
    }
    ps[0].accumulate(dx);
  });
}

Var group_mean_rows(const Var& x, std::size_t group) {
  const std::size_t n = x.value().rows(), m = x.value().cols();
  require(group > 0 && n % group == 0, "group_mean_rows: rows not divisible by group");
  const std::size_t out_rows = n / group;
  Tensor y({out_rows, m}, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < m; ++j) y[(i / group) * m + j] += x.value()[i * m + j];
  }
  for (auto& v : y.values()) v /= static_cast<double>(group);
  Shape in_shape = x.shape();
  return Var::op(std::move(y), {x}, [in_shape, group, m, n](const Tensor&, const Tensor& g, std::span<Var> ps) {
    Tensor dx(in_shape);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < m; ++j) dx[i * m + j] = g[(i / group) * m + j] / static_cast<double>(group);
    }
    ps[0].accumulate(dx);
  });
}

Var sum(const Var& x) {
  double s = 0.0;
  for (double v : x.value().values()) s += v;
  Shape in_shape = x.shape();
  return Var::op(Tensor::scalar(s), {x}, [in_shape](const Tensor&, const Tensor& g, std::span<Var> ps) {
    ps[0].accumulate(Tensor(in_shape, g[0]));
  });
}

Var mean(const Var& x) { return scale(sum(x), 1.0 / static_cast<double>(x.value().size())); }

// ---------------------------------------------------------------------------
// Convolution

namespace {

struct ConvGeom {
  std::size_t B, C, H, W, Co, Ho, Wo;
  [[nodiscard]] std::size_t patch() const { return C * 9; }
  [[nodiscard]] std::size_t out_px() const { return Ho * Wo; }
};

void im2col(const double* x, const ConvGeom& g, double* cols) {
  for (std::size_t c = 0; c < g.C; ++c) {
    const double* xc = x + c * g.H * g.W;
    for (int ky = 0; ky < 3; ++ky) {
      for (int kx = 0; kx < 3; ++kx) {
        double* row = cols + (c * 9 + ky * 3 + kx) * g.out_px();
        for (std::size_t oy = 0; oy < g.Ho; ++oy) {
          const long iy = static_cast<long>(2 * oy) + ky - 1;
          for (std::size_t ox = 0; ox < g.Wo; ++ox) {
            const long ix = static_cast<long>(2 * ox) + kx - 1;
            row[oy * g.Wo + ox] = (iy >= 0 && iy < static_cast<long>(g.H) && ix >= 0 &&
                                   ix < static_cast<long>(g.W))
                                      ? xc[iy * g.W + ix]
                                      : 0.0;
          }
        }
      }
    }
  }
}

void col2im(const double* cols, const ConvGeom& g, double* dx) {
  for (std::size_t c = 0; c < g.C; ++c) {
    double* dc = dx + c * g.H * g.W;
    for (int ky = 0; ky < 3; ++ky) {
      for (int kx = 0; kx < 3; ++kx) {
        const double* row = cols + (c * 9 + ky * 3 + kx) * g.out_px();
        for (std::size_t oy = 0; oy < g.Ho; ++oy) {
          const long iy = static_cast<long>(2 * oy) + ky - 1;
          if (iy < 0 || iy >= static_cast<long>(g.H)) continue;
          for (std::size_t ox = 0; ox < g.Wo; ++ox) {
            const long ix = static_cast<long>(2 * ox) + kx - 1;
            if (ix < 0 || ix >= static_cast<long>(g.W)) continue;
            dc[iy * g.W + ix] += row[oy * g.Wo + ox];
          }
        }
      }
    }
  }
}

}  // namespace

Var conv3x3_s2(const Var& x, const Var& w, const Var& b) {
  const Tensor& xv = x.value();
  const Tensor& wv = w.value();
  require(xv.rank() == 4, "conv3x3_s2: input must be [B,C,H,W], got " + shape_str(xv.shape()));
  require(wv.rank() == 4 && wv.dim(1) == xv.dim(1) && wv.dim(2) == 3 && wv.dim(3) == 3,
          "conv3x3_s2: weight " + shape_str(wv.shape()) + " incompatible with input " +
              shape_str(xv.shape()));
  ConvGeom g{xv.dim(0), xv.dim(1), xv.dim(2), xv.dim(3), wv.dim(0),
             (xv.dim(2) + 1) / 2, (xv.dim(3) + 1) / 2};
  require(b.value().size() == g.Co, "conv3x3_s2: bias length mismatch");

  Tensor y({g.B, g.Co, g.Ho, g.Wo});
  const auto nb = static_cast<std::ptrdiff_t>(g.B);
#pragma omp parallel
  {
    std::vector<double> cols(g.patch() * g.out_px());
#pragma omp for schedule(static)
    for (std::ptrdiff_t bi = 0; bi < nb; ++bi) {
      const auto ib = static_cast<std::size_t>(bi);
      im2col(xv.data() + ib * g.C * g.H * g.W, g, cols.data());
      double* out = y.data() + ib * g.Co * g.out_px();
      for (std::size_t co = 0; co < g.Co; ++co) {
        std::fill_n(out + co * g.out_px(), g.out_px(), b.value()[co]);
      }
      gemm_nn(wv.data(), cols.data(), out, g.Co, g.patch(), g.out_px());
    }
  }

  return Var::op(std::move(y), {x, w, b}, [g](const Tensor&, const Tensor& grad, std::span<Var> ps) {
    const Tensor& xv = ps[0].value();
    const Tensor& wv = ps[1].value();
    const bool need_x = ps[0].requires_grad();
    const bool need_w = ps[1].requires_grad() || ps[2].requires_grad();
    Tensor dx;
    if (need_x) dx = Tensor(xv.shape(), 0.0);
    // Weight gradients are reduced over a fixed chunking of the batch so the
    // summation order does not depend on the thread count.
    const std::size_t chunks = std::min<std::size_t>(g.B, 16);
    std::vector<std::vector<double>> dw(need_w ? chunks : 0,
                                        std::vector<double>(g.Co * g.patch(), 0.0));
    std::vector<std::vector<double>> db(need_w ? chunks : 0, std::vector<double>(g.Co, 0.0));
    const auto nchunks = static_cast<std::ptrdiff_t>(chunks);
#pragma omp parallel
    {
      std::vector<double> cols(g.patch() * g.out_px());
      std::vector<double> dcols(g.patch() * g.out_px());
#pragma omp for schedule(static)
      for (std::ptrdiff_t ci = 0; ci < nchunks; ++ci) {
        const auto c = static_cast<std::size_t>(ci);
        const std::size_t b0 = c * g.B / chunks, b1 = (c + 1) * g.B / chunks;
        for (std::size_t ib = b0; ib < b1; ++ib) {
          const double* go = grad.data() + ib * g.Co * g.out_px();
          if (need_w) {
            im2col(xv.data() + ib * g.C * g.H * g.W, g, cols.data());
            gemm_nt(go, cols.data(), dw[c].data(), g.Co, g.out_px(), g.patch());
            for (std::size_t co = 0; co < g.Co; ++co) {
              double s = 0.0;
              for (std::size_t p = 0; p < g.out_px(); ++p) s += go[co * g.out_px() + p];
              db[c][co] += s;
            }
          }
          if (need_x) {
            std::fill(dcols.begin(), dcols.end(), 0.0);
            gemm_tn(wv.data(), go, dcols.data(), g.Co, g.patch(), g.out_px());
            col2im(dcols.data(), g, dx.data() + ib * g.C * g.H * g.W);
          }
        }
      }
    }
    if (need_x) ps[0].accumulate(dx);
    if (need_w) {
      std::vector<double> dw_total(g.Co * g.patch(), 0.0), db_total(g.Co, 0.0);
      for (std::size_t c = 0; c < chunks; ++c) {
        for (std::size_t i = 0; i < dw_total.size(); ++i) dw_total[i] += dw[c][i];
        for (std::size_t i = 0; i < g.Co; ++i) db_total[i] += db[c][i];
      }
      ps[1].accumulate(dw_total);
      ps[2].accumulate(db_total);
    }
  });
}

Var global_avg_pool(const Var& x) {
  const Tensor& xv = x.value();
  require(xv.rank() == 4, "global_avg_pool: input must be [B,C,H,W]");
  const std::size_t B = xv.dim(0), C = xv.dim(1), P = xv.dim(2) * xv.dim(3);
  Tensor y({B, C});
  for (std::size_t i = 0; i < B * C; ++i) {
    double s = 0.0;
    for (std::size_t p = 0; p < P; ++p) s += xv[i * P + p];
    y[i] = s / static_cast<double>(P);
  }
  Shape in_shape = xv.shape();
  return Var::op(std::move(y), {x}, [in_shape, B, C, P](const Tensor&, const Tensor& g, std::span<Var> ps) {
    Tensor dx(in_shape);
    for (std::size_t i = 0; i < B * C; ++i) {
      const double v = g[i] / static_cast<double>(P);
      std::fill_n(dx.data() + i * P, P, v);
    }
    ps[0].accumulate(dx);
  });
}

}  // namespace d3pcqa::net
