#pragma once

#include <array>
#include <span>
#include <string_view>
#include <vector>

#include "d3pcqa/latent.hpp"
#include "d3pcqa/net/autograd.hpp"
#include "d3pcqa/net/params.hpp"

namespace d3pcqa {

struct StageConfig {
  std::size_t hidden = 64;  // d_m
  double delta = 1.0;
  /// Categorical cross entropy instead of the summed one-vs-all BCE.
  bool categorical_ce = false;
  /// Separate G weights per level instead of one shared trunk.
  bool per_level_weights = false;
};

/// BT.500 degradation description for level 1..5.
std::string_view level_description(int level);

struct QualityScore {
  int level = 1;
  double confidence = 0.0;
  double score = 1.0;
  std::array<double, kNumLevels> probabilities{};
  std::string_view description() const { return level_description(level); }
};

// ---------------------------------------------------------------------------
// Stage 1 (G)

/// Relevance logits [n, 5] between samples [n, d] and anchors [5, d]:
/// logit_ij = FC(d_m, 1)(ReLU(FC(2d, d_m)([x_i, a_j]))). The last layer starts
/// at zero, so an untrained head yields uniform probabilities.
net::Var level_logits(net::ParamStore& store, const net::Var& samples, const net::Var& anchors,
                      const StageConfig& cfg);

struct Classification {
  std::vector<int> levels;                                   // 1-based
  std::vector<std::array<double, kNumLevels>> probabilities;
};

/// Softmax and argmax per row; ties go to the lowest level.
Classification classify(const net::Tensor& logits);

/// Boundary loss on logits [n, 5], averaged over rows. By default the sum of
/// binary cross entropies over the five levels against a one-hot target;
/// `categorical` switches to -log p_true.
net::Var boundary_loss(const net::Var& logits, std::span<const int> true_levels, bool categorical = false);

/// The same loss for one probability vector, with probabilities clamped to
/// [eps, 1 - eps].
double boundary_loss(std::span<const double> probabilities, int true_level, bool categorical = false,
                     double eps = 1e-12);

// ---------------------------------------------------------------------------
// Stage 2 (H)

/// Bias h = sigmoid(FC(d_m, 1)(ReLU(FC(2d, d_m)([x, s])))) - 0.5 for every
/// row pair (x_i, s_k) listed in `pairs`: [pairs.size(), 1].
net::Var confidence_biases(net::ParamStore& store, const net::Var& samples, const net::Var& support,
                           std::span<const std::pair<std::size_t, std::size_t>> pairs,
                           const StageConfig& cfg);

/// Confidence of every sample [n] from the support rows sharing its assigned
/// level: mean_k(q_R,k + h_ik), clamped to [-0.5 delta, 0.5 delta].
/// Throws ValidationError when an assigned level has no support rows.
net::Var confidence(net::ParamStore& store, const net::Var& samples, std::span<const int> assigned_levels,
                    const net::Var& support, std::span<const int> support_levels,
                    std::span<const double> support_confidence, const StageConfig& cfg);

/// level + confidence / delta
QualityScore combine(int level, double confidence, double delta);

}  // namespace d3pcqa
