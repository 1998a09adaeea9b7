#include "d3pcqa/kernel_oracle.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "d3pcqa/errors.hpp"

namespace d3pcqa::kernel {

using Eigen::MatrixXd;
using Eigen::VectorXd;

std::string to_string(KernelKind kind) { return kind == KernelKind::Linear ? "linear" : "rbf"; }

KernelKind kernel_from_string(const std::string& name) {
  if (name == "linear") return KernelKind::Linear;
  if (name == "rbf") return KernelKind::Rbf;
  throw ConfigError("unknown kernel '" + name + "' (expected linear or rbf)");
}

GroupedData group_by_level(const std::vector<VectorXd>& features, std::span<const int> levels,
                           std::span<const double> confidence) {
  if (features.size() != levels.size() || features.size() != confidence.size()) {
    throw ValidationError("group_by_level: features, levels and confidences differ in length");
  }
  if (features.empty()) throw ValidationError("group_by_level: no samples");
  const Eigen::Index d = features.front().size();
  std::array<std::vector<std::size_t>, kNumLevels> members;
  for (std::size_t i = 0; i < features.size(); ++i) {
    if (levels[i] < 1 || levels[i] > kNumLevels) throw ValidationError("group_by_level: level out of range");
    if (features[i].size() != d) throw ShapeError("group_by_level: feature widths differ");
    members[static_cast<std::size_t>(levels[i] - 1)].push_back(i);
  }
  GroupedData g;
  for (std::size_t j = 0; j < members.size(); ++j) {
    const auto k = static_cast<Eigen::Index>(members[j].size());
    g.features[j].resize(k, d);
    g.confidence[j].resize(k);
    for (Eigen::Index r = 0; r < k; ++r) {
      g.features[j].row(r) = features[members[j][static_cast<std::size_t>(r)]].transpose();
      g.confidence[j](r) = confidence[members[j][static_cast<std::size_t>(r)]];
    }
  }
  return g;
}

VectorXd KernelModel::anchor(int level) const {
  const auto j = static_cast<std::size_t>(level - 1);
  return anchor_feature(support.at(j), alpha_L.at(j));
}

VectorXd anchor_feature(const MatrixXd& samples, const VectorXd& alpha) {
  if (samples.rows() != alpha.size()) {
    throw ValidationError("anchor_feature: " + std::to_string(alpha.size()) + " weights for " +
                          std::to_string(samples.rows()) + " samples");
  }
  if (samples.rows() == 0) throw ValidationError("anchor_feature: empty group");
  return samples.transpose() * alpha;
}

MatrixXd nearest_psd(const MatrixXd& m) {
  if (m.rows() != m.cols()) throw ShapeError("nearest_psd: matrix must be square");
  if (!m.allFinite()) throw ValidationError("nearest_psd: matrix has non-finite entries");
  const MatrixXd b = 0.5 * (m + m.transpose());
  Eigen::SelfAdjointEigenSolver<MatrixXd> eig(b);
  if (eig.info() != Eigen::Success) throw NumericError("nearest_psd: eigendecomposition failed");
  const VectorXd lambda = eig.eigenvalues().cwiseMax(0.0);
  const MatrixXd r = eig.eigenvectors() * lambda.asDiagonal() * eig.eigenvectors().transpose();
  return 0.5 * (r + r.transpose());
}

namespace {

double rbf_gamma(const KernelConfig& cfg, Eigen::Index d) {
  return cfg.gamma > 0.0 ? cfg.gamma : 1.0 / static_cast<double>(std::max<Eigen::Index>(d, 1));
}

// (A + lambda/2 I)^-1 y for symmetric PSD A, refusing numerically singular systems.
VectorXd ridge_solve(const MatrixXd& a, const VectorXd& y, double lambda1, const char* what) {
  const MatrixXd sys = a + 0.5 * lambda1 * MatrixXd::Identity(a.rows(), a.cols());
  Eigen::SelfAdjointEigenSolver<MatrixXd> eig(sys);
  if (eig.info() != Eigen::Success) throw NumericError(std::string(what) + ": eigendecomposition failed");
  const double hi = std::max(1.0, eig.eigenvalues().cwiseAbs().maxCoeff());
  if (eig.eigenvalues().minCoeff() <= 1e-12 * hi) {
    throw NumericError(std::string(what) + ": singular ridge system; use lambda1 > 0");
  }
  return eig.eigenvectors() * (eig.eigenvalues().cwiseInverse().asDiagonal() * (eig.eigenvectors().transpose() * y));
}

}  // namespace

double kernel_value(const KernelConfig& cfg, const VectorXd& a, const VectorXd& b) {
  if (a.size() != b.size()) throw ShapeError("kernel_value: widths differ");
  if (cfg.kind == KernelKind::Linear) return a.dot(b);
  return std::exp(-rbf_gamma(cfg, a.size()) * (a - b).squaredNorm());
}

MatrixXd gram(const KernelConfig& cfg, const MatrixXd& a, const MatrixXd& b) {
  if (a.cols() != b.cols()) throw ShapeError("gram: widths differ");
  if (cfg.kind == KernelKind::Linear) return a * b.transpose();
  MatrixXd g(a.rows(), b.rows());
  const double gamma = rbf_gamma(cfg, a.cols());
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    for (Eigen::Index k = 0; k < b.rows(); ++k) {
      g(i, k) = std::exp(-gamma * (a.row(i) - b.row(k)).squaredNorm());
    }
  }
  return g;
}

double stage1_objective(const MatrixXd& x, double label, const VectorXd& alpha, const MatrixXd& beta,
                        double lambda1, double lambda2) {
  const VectorXd a = x.transpose() * alpha;
  const VectorXd r = x * (beta.transpose() * a);
  const double fit = (VectorXd::Constant(x.rows(), label) - r).squaredNorm();
  return fit + 0.5 * lambda1 * a.dot(beta * a) + 0.5 * lambda2 * beta.squaredNorm();
}

KernelModel fit(const GroupedData& data, const KernelConfig& cfg) {
  if (cfg.lambda1 < 0.0 || !(cfg.lambda2 > 0.0)) {
    throw ConfigError("kernel fit: lambda1 must be >= 0 and lambda2 > 0");
  }
  if (cfg.iterations < 1) throw ConfigError("kernel fit: need at least one iteration");
  KernelModel model;
  model.config = cfg;
  std::string missing;
  for (int j = 0; j < kNumLevels; ++j) {
    const auto& x = data.features[static_cast<std::size_t>(j)];
    if (x.rows() < 2) missing += (missing.empty() ? "" : ", ") + std::to_string(j + 1);
  }
  if (!missing.empty()) {
    throw ValidationError("kernel fit: every level needs at least two samples; short: " + missing);
  }
  model.dim = static_cast<std::size_t>(data.features[0].cols());
  const auto d = static_cast<Eigen::Index>(model.dim);
  for (std::size_t j = 0; j < static_cast<std::size_t>(kNumLevels); ++j) {
    if (data.features[j].cols() != d || data.confidence[j].size() != data.features[j].rows()) {
      throw ShapeError("kernel fit: inconsistent group shapes");
    }
    model.support[j] = data.features[j];
    model.alpha_L[j] = VectorXd::Zero(data.features[j].rows());
    model.beta_L[j] = MatrixXd::Identity(d, d);
  }

  for (int it = 1; it <= cfg.iterations; ++it) {
    IterationLog log;
    log.iteration = it;
    for (std::size_t j = 0; j < static_cast<std::size_t>(kNumLevels); ++j) {
      const MatrixXd& x = model.support[j];
      const double label = static_cast<double>(j + 1);
      const VectorXd y = VectorXd::Constant(x.rows(), label);
      VectorXd& alpha = model.alpha_L[j];
      MatrixXd& beta = model.beta_L[j];

      log.objective_before_alpha += stage1_objective(x, label, alpha, beta, cfg.lambda1, cfg.lambda2);
      const MatrixXd kprime = x * beta * x.transpose();
      alpha = ridge_solve(0.5 * (kprime + kprime.transpose()), y, cfg.lambda1, "kernel fit (level decision)");
      const double after_alpha = stage1_objective(x, label, alpha, beta, cfg.lambda1, cfg.lambda2);
      log.objective_after_alpha += after_alpha;

      // Unconstrained minimiser over beta is rank one, a u^T, with
      // (2 |a|^2 X^T X + lambda2 I) u = 2 X^T y - lambda1/2 a.
      const VectorXd a = x.transpose() * alpha;
      const MatrixXd sys = 2.0 * a.squaredNorm() * (x.transpose() * x) + cfg.lambda2 * MatrixXd::Identity(d, d);
      const VectorXd rhs = 2.0 * (x.transpose() * y) - 0.5 * cfg.lambda1 * a;
      const VectorXd u = sys.ldlt().solve(rhs);
      const MatrixXd unconstrained = a * u.transpose();
      beta = nearest_psd(unconstrained);
      const double dist2 = (beta - unconstrained).squaredNorm();
      const double curvature = a.squaredNorm() * x.rowwise().squaredNorm().sum() + 0.5 * cfg.lambda2;
      log.projection_distance += std::sqrt(dist2);
      log.projection_bound += curvature * dist2;
      const double after_beta = stage1_objective(x, label, alpha, beta, cfg.lambda1, cfg.lambda2);
      log.objective_after_beta += after_beta;
      log.projection_increase += std::max(0.0, after_beta - after_alpha);
    }
    model.log.push_back(log);
  }

  for (std::size_t j = 0; j < static_cast<std::size_t>(kNumLevels); ++j) {
    const MatrixXd k = gram(cfg, model.support[j], model.support[j]);
    model.alpha_R[j] = ridge_solve(k, data.confidence[j], cfg.lambda1, "kernel fit (confidence)");
  }
  return model;
}

Prediction predict(const KernelModel& model, const VectorXd& x) {
  if (static_cast<std::size_t>(x.size()) != model.dim) {
    throw ShapeError("kernel predict: feature width " + std::to_string(x.size()) + ", model expects " +
                     std::to_string(model.dim));
  }
  Prediction p;
  int best = 0;
  for (std::size_t j = 0; j < static_cast<std::size_t>(kNumLevels); ++j) {
    p.responses[j] = model.anchor(static_cast<int>(j + 1)).dot(model.beta_L[j] * x);
    if (p.responses[j] > p.responses[static_cast<std::size_t>(best)]) best = static_cast<int>(j);
  }
  const auto jb = static_cast<std::size_t>(best);
  const VectorXd kx = gram(model.config, model.support[jb], x.transpose());
  const double bound = 0.5 * model.config.delta;
  const double conf = std::clamp(model.alpha_R[jb].dot(kx), -bound, bound);
  p.score = combine(best + 1, conf, model.config.delta);
  const double m = *std::max_element(p.responses.begin(), p.responses.end());
  double z = 0.0;
  for (std::size_t j = 0; j < p.responses.size(); ++j) z += p.score.probabilities[j] = std::exp(p.responses[j] - m);
  for (double& v : p.score.probabilities) v /= z;
  return p;
}

namespace {

net::Tensor to_tensor(const MatrixXd& m) {
  net::Tensor t({static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols())});
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) t.at(static_cast<std::size_t>(r), static_cast<std::size_t>(c)) = m(r, c);
  }
  return t;
}

net::Tensor to_tensor(const VectorXd& v) {
  return net::Tensor({static_cast<std::size_t>(v.size())}, std::vector<double>(v.data(), v.data() + v.size()));
}

MatrixXd to_matrix(const net::Tensor& t) {
  if (t.rank() != 2) throw CheckpointError("kernel model: expected a matrix tensor");
  MatrixXd m(static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols()));
  for (std::size_t r = 0; r < t.rows(); ++r) {
    for (std::size_t c = 0; c < t.cols(); ++c) m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = t.at(r, c);
  }
  return m;
}

VectorXd to_vector(const net::Tensor& t) {
  return Eigen::Map<const VectorXd>(t.data(), static_cast<Eigen::Index>(t.size()));
}

const net::Tensor& find(const CheckpointData& ckpt, const std::string& name) {
  auto it = ckpt.tensors.find(name);
  if (it == ckpt.tensors.end()) throw CheckpointError("kernel model: missing tensor '" + name + "'");
  return it->second;
}

}  // namespace

void export_model(const KernelModel& model, CheckpointData& ckpt) {
  ckpt.meta["kernel"] = {{"kind", to_string(model.config.kind)},
                         {"gamma", model.config.gamma},
                         {"lambda1", model.config.lambda1},
                         {"lambda2", model.config.lambda2},
                         {"iterations", model.config.iterations},
                         {"delta", model.config.delta},
                         {"dim", model.dim}};
  for (std::size_t j = 0; j < static_cast<std::size_t>(kNumLevels); ++j) {
    const std::string s = std::to_string(j + 1);
    ckpt.tensors["kernel/support/" + s] = to_tensor(model.support[j]);
    ckpt.tensors["kernel/alpha_L/" + s] = to_tensor(model.alpha_L[j]);
    ckpt.tensors["kernel/beta_L/" + s] = to_tensor(model.beta_L[j]);
    ckpt.tensors["kernel/alpha_R/" + s] = to_tensor(model.alpha_R[j]);
  }
}

KernelModel import_model(const CheckpointData& ckpt) {
  if (!ckpt.meta.contains("kernel")) throw CheckpointError("checkpoint has no kernel model section");
  const auto& m = ckpt.meta.at("kernel");
  KernelModel model;
  model.config.kind = kernel_from_string(m.at("kind").get<std::string>());
  model.config.gamma = m.at("gamma").get<double>();
  model.config.lambda1 = m.at("lambda1").get<double>();
  model.config.lambda2 = m.at("lambda2").get<double>();
  model.config.iterations = m.at("iterations").get<int>();
  model.config.delta = m.at("delta").get<double>();
  model.dim = m.at("dim").get<std::size_t>();
  for (std::size_t j = 0; j < static_cast<std::size_t>(kNumLevels); ++j) {
    const std::string s = std::to_string(j + 1);
    model.support[j] = to_matrix(find(ckpt, "kernel/support/" + s));
    model.alpha_L[j] = to_vector(find(ckpt, "kernel/alpha_L/" + s));
    model.beta_L[j] = to_matrix(find(ckpt, "kernel/beta_L/" + s));
    model.alpha_R[j] = to_vector(find(ckpt, "kernel/alpha_R/" + s));
  }
  return model;
}

std::vector<double> projection_statistics(const ProjectionSet& proj) {
  std::vector<double> out;
  const int n = proj.size;
  for (std::size_t v = 0; v < static_cast<std::size_t>(kNumViews); ++v) {
    const auto& tex = proj.textures[v];
    const auto& dep = proj.depths[v];
    const auto& occ = proj.occupancy[v];
    double count = 0.0, lum = 0.0, lum2 = 0.0, dm = 0.0, dm2 = 0.0, grad = 0.0, grad_n = 0.0;
    std::array<double, 3> rgb{};
    auto luminance = [&](std::size_t p) {
      return 0.299 * tex[p * 3] + 0.587 * tex[p * 3 + 1] + 0.114 * tex[p * 3 + 2];
    };
    for (int y = 0; y < n; ++y) {
      for (int x = 0; x < n; ++x) {
        const auto p = static_cast<std::size_t>(y * n + x);
        if (!occ[p]) continue;
        count += 1.0;
        const double l = luminance(p);
        lum += l;
        lum2 += l * l;
        dm += dep[p];
        dm2 += dep[p] * dep[p];
        for (std::size_t c = 0; c < 3; ++c) rgb[c] += tex[p * 3 + c];
        if (x + 1 < n && occ[p + 1]) {
          grad += std::abs(luminance(p + 1) - l);
          grad_n += 1.0;
        }
        if (y + 1 < n && occ[p + static_cast<std::size_t>(n)]) {
          grad += std::abs(luminance(p + static_cast<std::size_t>(n)) - l);
          grad_n += 1.0;
        }
      }
    }
    const double c = std::max(count, 1.0);
    out.push_back(count / static_cast<double>(proj.pixels()));
    for (double s : rgb) out.push_back(s / c);
    out.push_back(std::sqrt(std::max(0.0, lum2 / c - (lum / c) * (lum / c))));
    out.push_back(dm / c);
    out.push_back(std::sqrt(std::max(0.0, dm2 / c - (dm / c) * (dm / c))));
    out.push_back(grad / std::max(grad_n, 1.0));
  }
  out.push_back(std::log(std::max(proj.density, 1e-12)));
  out.push_back(static_cast<double>(proj.blur_radius));
  return out;
}

Standardizer Standardizer::fit(const std::vector<VectorXd>& rows) {
  if (rows.empty()) throw ValidationError("standardizer: no rows");
  Standardizer s;
  const Eigen::Index d = rows.front().size();
  s.mean = VectorXd::Zero(d);
  for (const auto& r : rows) s.mean += r;
  s.mean /= static_cast<double>(rows.size());
  VectorXd var = VectorXd::Zero(d);
  for (const auto& r : rows) var += (r - s.mean).cwiseAbs2();
  var /= static_cast<double>(rows.size());
  s.scale = var.cwiseSqrt().unaryExpr([](double v) { return v > 1e-12 ? v : 1.0; });
  return s;
}

VectorXd Standardizer::apply(const VectorXd& x) const { return (x - mean).cwiseQuotient(scale); }

}  // namespace d3pcqa::kernel
