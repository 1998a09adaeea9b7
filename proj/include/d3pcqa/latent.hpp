#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "d3pcqa/net/autograd.hpp"
#include "d3pcqa/net/layers.hpp"
#include "d3pcqa/net/params.hpp"

namespace d3pcqa {

inline constexpr int kNumLevels = 5;

struct LatentConfig {
  std::size_t blocks = 3;   // l
  std::size_t hidden = 64;  // d_m
  net::AttentionOptions attention{8, true};
};

/// Disentangler Phi applied to one group of perception features [k, d].
///
/// Each block is msa -> FC(d, d_m) -> ReLU -> FC(d_m, d). With `joint` the
/// rows attend to each other (a level-pure support group). Without it every
/// row is processed on its own, which is the k = 1 path: attention over a
/// single row returns its value projection, so the block reduces to an MLP.
net::Var disentangle(net::ParamStore& store, const net::Var& group, const LatentConfig& cfg,
                     bool joint = true);

/// disentangle() after checking that all `levels` agree (ValidationError otherwise).
net::Var disentangle_group(net::ParamStore& store, const net::Var& group,
                           std::span<const int> levels, const LatentConfig& cfg);

/// For every row, one partner drawn uniformly from the other rows of the same
/// level. Rows alone in their level get no partner (npos).
inline constexpr std::size_t kNoPartner = static_cast<std::size_t>(-1);
std::vector<std::size_t> sample_positive_partners(std::span<const int> levels, std::mt19937_64& rng);

struct DistributionLoss {
  net::Var loss;
  std::size_t anchors = 0;            // rows that contributed a term
  std::vector<int> skipped_levels;    // levels with a single sample
};

/// Quality-weighted InfoNCE over the rows of `features` [n, d].
///
/// Rows are L2-normalised; for row a with partner p the term is
///   -log( w(a,p) h(a,p) / (w(a,p) h(a,p) + sum_b w(a,b) h(a,b)) )
/// with h = exp(cos / tau), the sum running over rows of other levels,
/// w(a,p) = 1 / ((q_a - q_p)^2 + 1) and w(a,b) = 1 - 1 / ((q_a - q_b)^2 + 1).
/// The loss is the mean over rows that have a partner. Throws ValidationError
/// if no row has one.
DistributionLoss distribution_loss(const net::Var& features, std::span<const int> levels,
                                   std::span<const double> q, std::span<const std::size_t> partners,
                                   double tau_sim);

/// Same loss with partners drawn from `rng`.
DistributionLoss distribution_loss(const net::Var& features, std::span<const int> levels,
                                   std::span<const double> q, double tau_sim, std::mt19937_64& rng);

/// Per-level mean of the rows of `features`: [5, d], row j is level j + 1.
/// Throws ValidationError naming every level without rows.
net::Var aggregate_anchors(const net::Var& features, std::span<const int> levels);

}  // namespace d3pcqa
