#include "d3pcqa/ranklosses.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include "d3pcqa/errors.hpp"

namespace d3pcqa {

using net::Tensor;
using net::Var;

namespace {

struct Block {
  std::size_t start = 0;
  std::size_t count = 0;
  double sum = 0.0;
  double mean() const { return sum / static_cast<double>(count); }
};

// Sorted order (descending, ties by index) and the PAV blocks of the
// decreasing isotonic fit of z_sorted - rho.
struct Projection {
  std::vector<std::size_t> order;
  std::vector<Block> blocks;
  std::vector<double> ranks;
};

Projection project_permutahedron(std::span<const double> x, double eps) {
  const std::size_t n = x.size();
  if (n < 2) throw ValidationError("soft_rank: need at least two values");
  if (!(eps > 0.0)) throw ValidationError("soft_rank: eps must be positive");
  Projection p;
  p.order.resize(n);
  std::iota(p.order.begin(), p.order.end(), std::size_t{0});
  std::stable_sort(p.order.begin(), p.order.end(),
                   [&](std::size_t a, std::size_t b) { return x[a] > x[b]; });

  // y_i = z_(i) - rho_i with rho = (n, n-1, ..., 1)
  std::vector<double> y(n);
  for (std::size_t i = 0; i < n; ++i) {
    y[i] = x[p.order[i]] / eps - static_cast<double>(n - i);
  }
  for (std::size_t i = 0; i < n; ++i) {
    p.blocks.push_back({i, 1, y[i]});
    while (p.blocks.size() >= 2) {
      const Block& top = p.blocks.back();
      Block& prev = p.blocks[p.blocks.size() - 2];
      if (prev.mean() > top.mean()) break;
      prev.sum += top.sum;
      prev.count += top.count;
      p.blocks.pop_back();
    }
  }

  p.ranks.assign(n, 0.0);
  for (const Block& b : p.blocks) {
    const double v = b.mean();
    for (std::size_t i = b.start; i < b.start + b.count; ++i) {
      const std::size_t k = p.order[i];
      p.ranks[k] = x[k] / eps - v;
    }
  }
  return p;
}

void require_same_length(std::size_t a, std::size_t b, const char* what) {
  if (a != b) {
    throw ValidationError(std::string(what) + ": length mismatch (" + std::to_string(a) + " vs " +
                          std::to_string(b) + ")");
  }
}

struct Centered {
  std::vector<double> c;
  double norm = 0.0;
};

Centered center(std::span<const double> v) {
  Centered out;
  const double m = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  out.c.resize(v.size());
  double ss = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    out.c[i] = v[i] - m;
    ss += out.c[i] * out.c[i];
  }
  out.norm = std::sqrt(ss);
  return out;
}

// Spread below this (relative to magnitude) counts as constant.
bool is_constant(const Centered& c, std::span<const double> v) {
  double mag = 1.0;
  for (double x : v) mag = std::max(mag, std::abs(x));
  return c.norm <= 1e-12 * mag * std::sqrt(static_cast<double>(v.size()));
}

}  // namespace

std::vector<double> soft_rank(std::span<const double> x, double eps) {
  return project_permutahedron(x, eps).ranks;
}

std::vector<double> soft_rank_jacobian(std::span<const double> x, double eps) {
  const Projection p = project_permutahedron(x, eps);
  const std::size_t n = x.size();
  std::vector<double> jac(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) jac[i * n + i] = 1.0 / eps;
  for (const Block& b : p.blocks) {
    const double w = 1.0 / (eps * static_cast<double>(b.count));
    for (std::size_t i = b.start; i < b.start + b.count; ++i) {
      for (std::size_t j = b.start; j < b.start + b.count; ++j) {
        jac[p.order[i] * n + p.order[j]] -= w;
      }
    }
  }
  return jac;
}

Var soft_rank(const Var& x, double eps) {
  Projection p = project_permutahedron(x.value().values(), eps);
  Tensor out(x.shape(), std::move(p.ranks));
  auto blocks = std::move(p.blocks);
  auto order = std::move(p.order);
  return Var::op(std::move(out), {x},
                 [blocks = std::move(blocks), order = std::move(order), eps](
                     const Tensor&, const Tensor& g, std::span<Var> parents) {
                   // J is symmetric: (I - block mean) / eps in sorted coordinates
                   std::vector<double> dx(g.size());
                   for (const Block& b : blocks) {
                     double s = 0.0;
                     for (std::size_t i = b.start; i < b.start + b.count; ++i) s += g[order[i]];
                     const double m = s / static_cast<double>(b.count);
                     for (std::size_t i = b.start; i < b.start + b.count; ++i) {
                       dx[order[i]] = (g[order[i]] - m) / eps;
                     }
                   }
                   parents[0].accumulate(dx);
                 });
}

Var plcc_loss(const Var& pred, const Var& target) {
  const auto a = pred.value().values();
  const auto b = target.value().values();
  require_same_length(a.size(), b.size(), "plcc_loss");
  if (a.size() < 3) throw ValidationError("plcc_loss: need at least three samples");
  Centered ca = center(a), cb = center(b);
  if (is_constant(cb, b)) throw ValidationError("plcc_loss: target is constant");
  const bool flat = is_constant(ca, a);
  double r = 0.0;
  if (!flat) {
    double dot = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) dot += ca.c[i] * cb.c[i];
    r = dot / (ca.norm * cb.norm);
  }
  return Var::op(Tensor::scalar(r), {pred, target},
                 [ca = std::move(ca), cb = std::move(cb), r, flat](
                     const Tensor&, const Tensor& g, std::span<Var> parents) {
                   if (flat) return;
                   const std::size_t n = ca.c.size();
                   const double nab = ca.norm * cb.norm;
                   std::vector<double> da(n), db(n);
                   for (std::size_t i = 0; i < n; ++i) {
                     da[i] = g[0] * (cb.c[i] / nab - r * ca.c[i] / (ca.norm * ca.norm));
                     db[i] = g[0] * (ca.c[i] / nab - r * cb.c[i] / (cb.norm * cb.norm));
                   }
                   parents[0].accumulate(da);
                   parents[1].accumulate(db);
                 });
}

Var srocc_loss(const Var& pred, const Var& target, double eps) {
  return plcc_loss(soft_rank(pred, eps), soft_rank(target, eps));
}

Var quality_regularizer(const Var& pred, const Var& target, double eps) {
  return net::scale(net::add(plcc_loss(pred, target), srocc_loss(pred, target, eps)), -1.0);
}

// ---------------------------------------------------------------------------

double pearson(std::span<const double> a, std::span<const double> b) {
  require_same_length(a.size(), b.size(), "pearson");
  if (a.empty()) return 0.0;
  const Centered ca = center(a), cb = center(b);
  if (is_constant(ca, a) || is_constant(cb, b)) return 0.0;
  double dot = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) dot += ca.c[i] * cb.c[i];
  return std::clamp(dot / (ca.norm * cb.norm), -1.0, 1.0);
}

std::vector<double> average_ranks(std::span<const double> x) {
  const std::size_t n = x.size();
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
  std::vector<double> r(n);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && x[idx[j + 1]] == x[idx[i]]) ++j;
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) r[idx[k]] = avg;
    i = j + 1;
  }
  return r;
}

double spearman(std::span<const double> a, std::span<const double> b) {
  require_same_length(a.size(), b.size(), "spearman");
  const auto ra = average_ranks(a), rb = average_ranks(b);
  return pearson(ra, rb);
}

double kendall_tau_b(std::span<const double> a, std::span<const double> b) {
  require_same_length(a.size(), b.size(), "kendall_tau_b");
  const std::size_t n = a.size();
  long long s = 0, tie_a = 0, tie_b = 0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      const int sa = (a[i] > a[j]) - (a[i] < a[j]);
      const int sb = (b[i] > b[j]) - (b[i] < b[j]);
      s += sa * sb;
      tie_a += sa == 0;
      tie_b += sb == 0;
    }
  }
  const long long n0 = static_cast<long long>(n * (n - 1) / 2);
  const double denom = std::sqrt(static_cast<double>(n0 - tie_a) * static_cast<double>(n0 - tie_b));
  return denom > 0.0 ? static_cast<double>(s) / denom : 0.0;
}

double rmse(std::span<const double> a, std::span<const double> b) {
  require_same_length(a.size(), b.size(), "rmse");
  if (a.empty()) return 0.0;
  double ss = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) ss += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(ss / static_cast<double>(a.size()));
}

Metrics eval_metrics(std::span<const double> pred, std::span<const double> target) {
  require_same_length(pred.size(), target.size(), "eval_metrics");
  if (pred.size() < 3) throw ValidationError("eval_metrics: need at least three samples");
  return {pearson(pred, target), spearman(pred, target), kendall_tau_b(pred, target),
          rmse(pred, target)};
}

// ---------------------------------------------------------------------------

double logistic4(double s, const Logistic4Params& b) noexcept {
  return b[1] + (b[0] - b[1]) / (1.0 + std::exp(-(s - b[2]) / b[3]));
}

namespace {

double sse(std::span<const double> s, std::span<const double> t, const Logistic4Params& b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    const double r = logistic4(s[i], b) - t[i];
    acc += r * r;
  }
  return acc;
}

struct LmResult {
  Logistic4Params beta;
  double sse;
  int iterations;
  bool converged;
};

LmResult levenberg_marquardt(std::span<const double> s, std::span<const double> t, Logistic4Params beta,
                             int max_iterations) {
  const std::size_t n = s.size();
  double cost = sse(s, t, beta);
  double lambda = 1e-3;
  int it = 0;
  bool converged = false;
  Eigen::MatrixXd J(n, 4);
  Eigen::VectorXd r(n);
  for (; it < max_iterations && !converged; ++it) {
    for (std::size_t i = 0; i < n; ++i) {
      const double u = (s[i] - beta[2]) / beta[3];
      const double sig = 1.0 / (1.0 + std::exp(-u));
      const double ds = (beta[0] - beta[1]) * sig * (1.0 - sig);
      J(i, 0) = sig;
      J(i, 1) = 1.0 - sig;
      J(i, 2) = -ds / beta[3];
      J(i, 3) = -ds * u / beta[3];
      r(i) = beta[1] + (beta[0] - beta[1]) * sig - t[i];
    }
    const Eigen::Matrix4d jtj = J.transpose() * J;
    const Eigen::Vector4d jtr = J.transpose() * r;
    if (jtr.lpNorm<Eigen::Infinity>() <= 1e-15 * std::max(1.0, cost)) {
      converged = true;
      break;
    }
    bool accepted = false;
    while (!accepted && lambda < 1e16) {
      Eigen::Matrix4d a = jtj;
      for (int k = 0; k < 4; ++k) a(k, k) += lambda * std::max(jtj(k, k), 1e-300);
      const Eigen::Vector4d step = a.ldlt().solve(-jtr);
      Logistic4Params cand = beta;
      for (int k = 0; k < 4; ++k) cand[k] += step(k);
      const double c = (cand[3] != 0.0 && std::isfinite(cand[3])) ? sse(s, t, cand)
                                                                 : std::numeric_limits<double>::infinity();
      if (std::isfinite(c) && c <= cost) {
        const double rel = (cost - c) / std::max(cost, 1e-300);
        double step_rel = 0.0;
        for (int k = 0; k < 4; ++k) {
          step_rel = std::max(step_rel, std::abs(step(k)) / (std::abs(beta[k]) + 1e-12));
        }
        beta = cand;
        cost = c;
        lambda = std::max(lambda / 3.0, 1e-12);
        accepted = true;
        if (rel < 1e-14 || step_rel < 1e-13 || cost == 0.0) converged = true;
      } else {
        lambda *= 4.0;
      }
    }
    if (!accepted) {
      converged = true;  // no descent direction left at machine precision
      break;
    }
  }
  return {beta, cost, it, converged};
}

}  // namespace

Logistic4Fit logistic4_fit(std::span<const double> pred, std::span<const double> target, int max_iterations) {
  require_same_length(pred.size(), target.size(), "logistic4_fit");
  const std::size_t n = pred.size();
  if (n < 4) throw ValidationError("logistic4_fit: need at least four samples");
  const Centered cp = center(pred);
  if (is_constant(cp, pred)) throw ValidationError("logistic4_fit: predictions are constant");

  const auto [tmin, tmax] = std::minmax_element(target.begin(), target.end());
  const auto [pmin, pmax] = std::minmax_element(pred.begin(), pred.end());
  const double pmean = std::accumulate(pred.begin(), pred.end(), 0.0) / static_cast<double>(n);
  const double tmean = std::accumulate(target.begin(), target.end(), 0.0) / static_cast<double>(n);
  const double pstd = cp.norm / std::sqrt(static_cast<double>(n));
  const double prange = *pmax - *pmin;

  // least-squares affine map t ~ a*s + c
  double cov = 0.0;
  for (std::size_t i = 0; i < n; ++i) cov += cp.c[i] * (target[i] - tmean);
  const double slope = cov / (cp.norm * cp.norm);
  const double intercept = tmean - slope * pmean;

  std::vector<Logistic4Params> starts;
  const double tspan = std::max(*tmax - *tmin, 1e-6);
  starts.push_back({*tmax, *tmin, pmean, std::max(pstd, 1e-6) / 4.0});
  starts.push_back({*tmin, *tmax, pmean, std::max(pstd, 1e-6) / 4.0});
  starts.push_back({*tmax + 0.1 * tspan, *tmin - 0.1 * tspan, pmean, std::max(prange, 1e-6) / 2.0});
  {
    // A logistic with a very wide scale L is affine to third order around
    // its centre: b1 - b2 = 4aL, centre value a*b3 + c.
    const double L = 3e4 * prange;
    const double b3 = pmean;
    const double mid = slope * b3 + intercept;
    const double b2 = mid - 2.0 * slope * L;
    const double b1 = mid + 2.0 * slope * L;
    if (slope != 0.0) starts.push_back({b1, b2, b3, L});
  }

  LmResult best{starts.front(), std::numeric_limits<double>::infinity(), 0, false};
  for (const auto& s0 : starts) {
    const LmResult r = levenberg_marquardt(pred, target, s0, max_iterations);
    if (r.sse < best.sse) best = r;
  }

  Logistic4Fit fit;
  fit.beta = best.beta;
  fit.iterations = best.iterations;
  fit.converged = best.converged;
  fit.mapped.resize(n);
  for (std::size_t i = 0; i < n; ++i) fit.mapped[i] = logistic4(pred[i], fit.beta);
  fit.rmse = rmse(fit.mapped, target);
  return fit;
}

}  // namespace d3pcqa
