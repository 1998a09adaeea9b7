#pragma once

#include <Eigen/Dense>

#include <array>
#include <span>
#include <string>
#include <vector>

#include "d3pcqa/checkpoint.hpp"
#include "d3pcqa/latent.hpp"
#include "d3pcqa/projection.hpp"
#include "d3pcqa/stages.hpp"

// Closed-form grouped kernel ridge regression on fixed features. Serves as a
// structural reference for the learned pipeline: per-level anchors, bilinear
// relevance for the level decision, kernel ridge confidence within a level.
namespace d3pcqa::kernel {

enum class KernelKind { Linear, Rbf };

std::string to_string(KernelKind kind);
KernelKind kernel_from_string(const std::string& name);

struct KernelConfig {
  KernelKind kind = KernelKind::Linear;
  double gamma = 0.0;     // RBF width; 0 means 1/d
  double lambda1 = 0.1;   // ridge weight on alpha
  double lambda2 = 0.1;   // Frobenius weight on beta
  int iterations = 10;
  double delta = 1.0;
};

/// Per-level training data: rows of features[j] are samples of level j + 1,
/// confidence[j] their decimal confidences.
struct GroupedData {
  std::array<Eigen::MatrixXd, kNumLevels> features;
  std::array<Eigen::VectorXd, kNumLevels> confidence;
};

/// Groups flat samples by level (1..5).
GroupedData group_by_level(const std::vector<Eigen::VectorXd>& features, std::span<const int> levels,
                           std::span<const double> confidence);

struct IterationLog {
  int iteration = 0;
  double objective_before_alpha = 0.0;
  double objective_after_alpha = 0.0;
  double objective_after_beta = 0.0;
  /// ||beta_psd - beta_unconstrained||_F summed over levels.
  double projection_distance = 0.0;
  /// Upper bound on the objective increase caused by the PSD projection.
  double projection_bound = 0.0;
  /// max(0, objective after beta - objective after alpha)
  double projection_increase = 0.0;
};

struct KernelModel {
  KernelConfig config;
  std::size_t dim = 0;
  std::array<Eigen::MatrixXd, kNumLevels> support;  // X_j, one sample per row
  std::array<Eigen::VectorXd, kNumLevels> alpha_L;
  std::array<Eigen::MatrixXd, kNumLevels> beta_L;
  std::array<Eigen::VectorXd, kNumLevels> alpha_R;
  std::vector<IterationLog> log;

  [[nodiscard]] Eigen::VectorXd anchor(int level) const;
};

/// sum_k alpha_k * samples.row(k)
Eigen::VectorXd anchor_feature(const Eigen::MatrixXd& samples, const Eigen::VectorXd& alpha);

/// Nearest symmetric PSD matrix in Frobenius norm: symmetrise, then clip
/// negative eigenvalues to zero.
Eigen::MatrixXd nearest_psd(const Eigen::MatrixXd& m);

double kernel_value(const KernelConfig& cfg, const Eigen::VectorXd& a, const Eigen::VectorXd& b);
/// G(i, k) = k(a_i, b_k) over rows.
Eigen::MatrixXd gram(const KernelConfig& cfg, const Eigen::MatrixXd& a, const Eigen::MatrixXd& b);

/// Level-decision objective of one level:
///   sum_i (y_i - a^T beta phi_i)^2 + lambda1/2 alpha^T X beta X^T alpha + lambda2/2 ||beta||_F^2
/// with a = X^T alpha and labels y_i equal to the level number.
double stage1_objective(const Eigen::MatrixXd& x, double label, const Eigen::VectorXd& alpha,
                        const Eigen::MatrixXd& beta, double lambda1, double lambda2);

/// Alternating fit (alpha step, then beta step with PSD projection) followed
/// by the per-level confidence ridge solve. Needs all five levels with at
/// least two samples each. Throws NumericError for a singular ridge system.
KernelModel fit(const GroupedData& data, const KernelConfig& cfg);

struct Prediction {
  QualityScore score;
  std::array<double, kNumLevels> responses{};
};

/// Level = argmax_j anchor_j^T beta_j x (lowest index on ties); confidence =
/// sum_k alpha_R,k k(x_k, x) clamped to +-0.5 delta. Probabilities are the
/// softmax of the responses.
Prediction predict(const KernelModel& model, const Eigen::VectorXd& x);

/// Stores the model under the `kernel/` tensor prefix and `kernel` meta key.
void export_model(const KernelModel& model, CheckpointData& ckpt);
KernelModel import_model(const CheckpointData& ckpt);

/// Hand-crafted per-cloud statistics of a projection set (occupancy, colour
/// moments, depth moments, texture gradient energy per view, plus density).
std::vector<double> projection_statistics(const ProjectionSet& proj);

/// Column standardisation fitted on training rows.
struct Standardizer {
  Eigen::VectorXd mean;
  Eigen::VectorXd scale;
  static Standardizer fit(const std::vector<Eigen::VectorXd>& rows);
  [[nodiscard]] Eigen::VectorXd apply(const Eigen::VectorXd& x) const;
};

}  // namespace d3pcqa::kernel
