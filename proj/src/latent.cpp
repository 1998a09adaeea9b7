#include "d3pcqa/latent.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "d3pcqa/errors.hpp"

namespace d3pcqa {

using net::Tensor;
using net::Var;

Var disentangle(net::ParamStore& store, const Var& group, const LatentConfig& cfg, bool joint) {
  if (group.value().rank() != 2 || group.value().dim(0) == 0) {
    throw ShapeError("disentangle: expected a non-empty [k, d] matrix, got " + net::shape_str(group.shape()));
  }
  const std::size_t d = group.value().dim(1);
  Var y = group;
  for (std::size_t b = 0; b < cfg.blocks; ++b) {
    const std::string prefix = "phi." + std::to_string(b);
    if (joint) {
      y = net::msa(store, prefix + ".msa", y, cfg.attention);
    } else {
      if (d % cfg.attention.heads != 0) {
        throw ConfigError("disentangle: width " + std::to_string(d) + " is not divisible by " +
                          std::to_string(cfg.attention.heads) + " heads");
      }
      constexpr auto linear = net::Init::LecunUniform;
      y = net::dense(store, prefix + ".msa.out", net::dense(store, prefix + ".msa.qkv", y, d, linear), d, linear);
    }
    y = net::relu(net::dense(store, prefix + ".fc1", y, cfg.hidden));
    y = net::dense(store, prefix + ".fc2", y, d, net::Init::LecunUniform);
  }
  return y;
}

Var disentangle_group(net::ParamStore& store, const Var& group, std::span<const int> levels,
                      const LatentConfig& cfg) {
  if (levels.size() != group.value().rows()) {
    throw ShapeError("disentangle_group: " + std::to_string(levels.size()) + " levels for " +
                     std::to_string(group.value().rows()) + " rows");
  }
  for (int l : levels) {
    if (l != levels.front()) {
      throw ValidationError("disentangle_group: support group mixes levels " +
                            std::to_string(levels.front()) + " and " + std::to_string(l));
    }
  }
  return disentangle(store, group, cfg, true);
}

std::vector<std::size_t> sample_positive_partners(std::span<const int> levels, std::mt19937_64& rng) {
  const std::size_t n = levels.size();
  std::vector<std::size_t> partners(n, kNoPartner);
  for (std::size_t a = 0; a < n; ++a) {
    std::vector<std::size_t> mates;
    for (std::size_t b = 0; b < n; ++b) {
      if (b != a && levels[b] == levels[a]) mates.push_back(b);
    }
    if (mates.empty()) continue;
    std::uniform_int_distribution<std::size_t> pick(0, mates.size() - 1);
    partners[a] = mates[pick(rng)];
  }
  return partners;
}

namespace {

double pos_weight(double qa, double qb) { return 1.0 / ((qa - qb) * (qa - qb) + 1.0); }
double neg_weight(double qa, double qb) { return 1.0 - pos_weight(qa, qb); }

// Weighted InfoNCE on a precomputed cosine-similarity matrix S [n, n].
Var infonce_on_similarity(const Var& sim, std::vector<int> levels, std::vector<double> q,
                          std::vector<std::size_t> partners, double tau, std::size_t anchors) {
  const Tensor& s = sim.value();
  const std::size_t n = s.rows();
  double total = 0.0;
  for (std::size_t a = 0; a < n; ++a) {
    const std::size_t p = partners[a];
    if (p == kNoPartner) continue;
    // log-sum-exp over {p} and the other-level rows, with weights folded in
    double m = s.at(a, p) / tau;
    for (std::size_t b = 0; b < n; ++b) {
      if (levels[b] != levels[a]) m = std::max(m, s.at(a, b) / tau);
    }
    const double lnum = std::log(pos_weight(q[a], q[p])) + s.at(a, p) / tau;
    double den = std::exp(lnum - m);
    for (std::size_t b = 0; b < n; ++b) {
      if (levels[b] == levels[a]) continue;
      den += neg_weight(q[a], q[b]) * std::exp(s.at(a, b) / tau - m);
    }
    total += -(lnum - m - std::log(den));
  }
  const double inv = 1.0 / static_cast<double>(anchors);
  return Var::op(
      Tensor::scalar(total * inv), {sim},
      [levels = std::move(levels), q = std::move(q), partners = std::move(partners), tau, inv](
          const Tensor&, const Tensor& g, std::span<Var> parents) {
        const Tensor& s = parents[0].value();
        const std::size_t n = s.rows();
        Tensor ds(s.shape(), 0.0);
        std::vector<double> t(n);
        for (std::size_t a = 0; a < n; ++a) {
          const std::size_t p = partners[a];
          if (p == kNoPartner) continue;
          double m = s.at(a, p) / tau;
          for (std::size_t b = 0; b < n; ++b) {
            if (levels[b] != levels[a]) m = std::max(m, s.at(a, b) / tau);
          }
          double den = 0.0;
          for (std::size_t b = 0; b < n; ++b) {
            t[b] = 0.0;
            if (b == p) {
              t[b] = pos_weight(q[a], q[p]) * std::exp(s.at(a, b) / tau - m);
            } else if (levels[b] != levels[a]) {
              t[b] = neg_weight(q[a], q[b]) * std::exp(s.at(a, b) / tau - m);
            }
            den += t[b];
          }
          // d term / d S_ab = (pi_ab - [b == p]) / tau
          const double c = g[0] * inv / tau;
          for (std::size_t b = 0; b < n; ++b) {
            ds.at(a, b) += c * (t[b] / den - (b == p ? 1.0 : 0.0));
          }
        }
        parents[0].accumulate(ds);
      });
}

}  // namespace

DistributionLoss distribution_loss(const Var& features, std::span<const int> levels,
                                   std::span<const double> q, std::span<const std::size_t> partners,
                                   double tau_sim) {
  const std::size_t n = features.value().rows();
  if (features.value().rank() != 2 || levels.size() != n || q.size() != n || partners.size() != n) {
    throw ShapeError("distribution_loss: features, levels, q and partners must have one entry per row");
  }
  if (!(tau_sim > 0.0)) throw ValidationError("distribution_loss: tau_sim must be positive");

  DistributionLoss out;
  std::vector<int> seen;
  for (std::size_t a = 0; a < n; ++a) {
    const std::size_t p = partners[a];
    if (p == kNoPartner) {
      if (std::find(seen.begin(), seen.end(), levels[a]) == seen.end()) {
        out.skipped_levels.push_back(levels[a]);
        seen.push_back(levels[a]);
      }
      continue;
    }
    if (p >= n || p == a || levels[p] != levels[a]) {
      throw ValidationError("distribution_loss: row " + std::to_string(a) + " has an invalid partner");
    }
    ++out.anchors;
  }
  if (out.anchors == 0) {
    throw ValidationError("distribution_loss: no level has two samples, nothing to contrast");
  }
  std::sort(out.skipped_levels.begin(), out.skipped_levels.end());

  const Var unit = net::l2_normalize_rows(features);
  const Var sim = net::matmul_nt(unit, unit);
  out.loss = infonce_on_similarity(sim, {levels.begin(), levels.end()}, {q.begin(), q.end()},
                                   {partners.begin(), partners.end()}, tau_sim, out.anchors);
  return out;
}

DistributionLoss distribution_loss(const Var& features, std::span<const int> levels,
                                   std::span<const double> q, double tau_sim, std::mt19937_64& rng) {
  const auto partners = sample_positive_partners(levels, rng);
  return distribution_loss(features, levels, q, partners, tau_sim);
}

Var aggregate_anchors(const Var& features, std::span<const int> levels) {
  const Tensor& x = features.value();
  if (x.rank() != 2 || levels.size() != x.rows()) {
    throw ShapeError("aggregate_anchors: need one level per feature row");
  }
  std::vector<std::size_t> count(kNumLevels, 0);
  for (int l : levels) {
    if (l < 1 || l > kNumLevels) throw ValidationError("aggregate_anchors: level " + std::to_string(l) + " out of range");
    ++count[static_cast<std::size_t>(l - 1)];
  }
  std::string missing;
  for (int j = 0; j < kNumLevels; ++j) {
    if (count[static_cast<std::size_t>(j)] == 0) missing += (missing.empty() ? "" : ", ") + std::to_string(j + 1);
  }
  if (!missing.empty()) throw ValidationError("aggregate_anchors: no support samples for level(s) " + missing);

  const std::size_t d = x.cols();
  Tensor out({static_cast<std::size_t>(kNumLevels), d}, 0.0);
  for (std::size_t r = 0; r < x.rows(); ++r) {
    const auto j = static_cast<std::size_t>(levels[r] - 1);
    for (std::size_t c = 0; c < d; ++c) out.at(j, c) += x.at(r, c);
  }
  for (std::size_t j = 0; j < out.rows(); ++j) {
    for (std::size_t c = 0; c < d; ++c) out.at(j, c) /= static_cast<double>(count[j]);
  }
  return Var::op(std::move(out), {features},
                 [lv = std::vector<int>(levels.begin(), levels.end()), count](
                     const Tensor&, const Tensor& g, std::span<Var> parents) {
                   const std::size_t d = g.cols();
                   Tensor dx(parents[0].shape(), 0.0);
                   for (std::size_t r = 0; r < lv.size(); ++r) {
                     const auto j = static_cast<std::size_t>(lv[r] - 1);
                     const double w = 1.0 / static_cast<double>(count[j]);
                     for (std::size_t c = 0; c < d; ++c) dx.at(r, c) = g.at(j, c) * w;
                   }
                   parents[0].accumulate(dx);
                 });
}

}  // namespace d3pcqa
