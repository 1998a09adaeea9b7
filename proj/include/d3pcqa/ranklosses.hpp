#pragma once

#include <array>
#include <span>
#include <vector>

#include "d3pcqa/net/autograd.hpp"

namespace d3pcqa {

// ---------------------------------------------------------------------------
// Soft ranking
//
// The soft rank of x is the Euclidean projection of x/eps onto the
// permutahedron spanned by (n, n-1, ..., 1). It is computed by sorting,
// solving a decreasing isotonic regression with pool-adjacent-violators and
// undoing the sort. Ranks are ascending: the largest value approaches rank n
// as eps -> 0.

/// Soft ranks of `x` (n >= 2, eps > 0).
std::vector<double> soft_rank(std::span<const double> x, double eps);

/// d soft_rank / d x as a row-major n x n matrix.
std::vector<double> soft_rank_jacobian(std::span<const double> x, double eps);

/// Differentiable soft rank of a tensor holding n values; output has the
/// input's shape.
net::Var soft_rank(const net::Var& x, double eps);

// ---------------------------------------------------------------------------
// Correlation losses

/// Pearson correlation as a differentiable scalar. A constant `pred` yields 0
/// with zero gradient; a constant `target` throws ValidationError. n >= 3.
net::Var plcc_loss(const net::Var& pred, const net::Var& target);

/// Pearson correlation of the soft ranks of both arguments.
net::Var srocc_loss(const net::Var& pred, const net::Var& target, double eps);

/// -plcc_loss - srocc_loss
net::Var quality_regularizer(const net::Var& pred, const net::Var& target, double eps);

// ---------------------------------------------------------------------------
// Evaluation metrics (exact, non-differentiable)

struct Metrics {
  double plcc = 0.0;
  double srocc = 0.0;
  double krocc = 0.0;
  double rmse = 0.0;
};

/// Pearson correlation; 0 when either side is constant.
double pearson(std::span<const double> a, std::span<const double> b);
/// 1-based ascending ranks; ties share their average rank.
std::vector<double> average_ranks(std::span<const double> x);
double spearman(std::span<const double> a, std::span<const double> b);
/// Kendall tau-b.
double kendall_tau_b(std::span<const double> a, std::span<const double> b);
double rmse(std::span<const double> a, std::span<const double> b);

/// All four metrics; throws ValidationError when n < 3 or lengths differ.
Metrics eval_metrics(std::span<const double> pred, std::span<const double> target);

// ---------------------------------------------------------------------------
// Logistic-4 mapping
//
//   f(s) = b2 + (b1 - b2) / (1 + exp(-(s - b3) / b4))

using Logistic4Params = std::array<double, 4>;

double logistic4(double s, const Logistic4Params& beta) noexcept;

struct Logistic4Fit {
  Logistic4Params beta{};
  std::vector<double> mapped;
  double rmse = 0.0;
  int iterations = 0;
  bool converged = false;
};

/// Damped Gauss-Newton (Levenberg-Marquardt) least-squares fit of f(pred) to
/// target from several starting points, keeping the best. One start is a
/// near-linear logistic matching the least-squares affine map, so the fit is
/// never meaningfully worse than the raw predictions. Requires n >= 4 and a
/// non-constant `pred`.
Logistic4Fit logistic4_fit(std::span<const double> pred, std::span<const double> target,
                           int max_iterations = 500);

}  // namespace d3pcqa
