#include "d3pcqa/stages.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "d3pcqa/errors.hpp"
#include "d3pcqa/net/layers.hpp"

namespace d3pcqa {

using net::Tensor;
using net::Var;

std::string_view level_description(int level) {
  switch (level) {
    case 5: return "The distortion is almost imperceptible";
    case 4: return "The distortion is perceptible but not annoying";
    case 3: return "The distortion is slightly annoying";
    case 2: return "The distortion is annoying";
    case 1: return "The distortion is seriously annoying";
    default: throw ValidationError("level " + std::to_string(level) + " outside 1..5");
  }
}

namespace {

void require_same_width(const Var& a, const Var& b, const char* what) {
  if (a.value().rank() != 2 || b.value().rank() != 2 || a.value().dim(1) != b.value().dim(1)) {
    throw ShapeError(std::string(what) + ": feature widths differ (" + net::shape_str(a.shape()) + " vs " +
                     net::shape_str(b.shape()) + ")");
  }
}

Var pair_head(net::ParamStore& store, const std::string& name, const Var& left, const Var& right,
              std::size_t hidden) {
  const std::array<Var, 2> parts{left, right};
  const Var h = net::relu(net::dense(store, name + ".fc1", net::concat_cols(parts), hidden));
  return net::dense(store, name + ".fc2", h, 1, net::Init::Zero);
}

}  // namespace

Var level_logits(net::ParamStore& store, const Var& samples, const Var& anchors, const StageConfig& cfg) {
  require_same_width(samples, anchors, "level_logits");
  if (anchors.value().rows() != static_cast<std::size_t>(kNumLevels)) {
    throw ShapeError("level_logits: expected 5 anchors, got " + std::to_string(anchors.value().rows()));
  }
  const std::size_t n = samples.value().rows();
  if (cfg.per_level_weights) {
    std::vector<Var> cols;
    for (std::size_t j = 0; j < static_cast<std::size_t>(kNumLevels); ++j) {
      const std::vector<std::size_t> rep(n, j);
      cols.push_back(pair_head(store, "g.level" + std::to_string(j + 1), samples,
                               net::gather_rows(anchors, rep), cfg.hidden));
    }
    return net::concat_cols(cols);
  }
  std::vector<std::size_t> si, ai;
  si.reserve(n * kNumLevels);
  ai.reserve(n * kNumLevels);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < static_cast<std::size_t>(kNumLevels); ++j) {
      si.push_back(i);
      ai.push_back(j);
    }
  }
  const Var out = pair_head(store, "g", net::gather_rows(samples, si), net::gather_rows(anchors, ai), cfg.hidden);
  return net::reshape(out, {n, static_cast<std::size_t>(kNumLevels)});
}

Classification classify(const Tensor& logits) {
  if (logits.rank() != 2 || logits.cols() != static_cast<std::size_t>(kNumLevels)) {
    throw ShapeError("classify: logits must be [n, 5], got " + net::shape_str(logits.shape()));
  }
  Classification out;
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    const auto row = logits.row_span(i);
    const double m = *std::max_element(row.begin(), row.end());
    std::array<double, kNumLevels> p{};
    double z = 0.0;
    for (int j = 0; j < kNumLevels; ++j) z += p[j] = std::exp(row[j] - m);
    for (double& v : p) v /= z;
    int best = 0;
    for (int j = 1; j < kNumLevels; ++j) {
      if (row[j] > row[best]) best = j;
    }
    out.levels.push_back(best + 1);
    out.probabilities.push_back(p);
  }
  return out;
}

Var boundary_loss(const Var& logits, std::span<const int> true_levels, bool categorical) {
  const Tensor& z = logits.value();
  const std::size_t n = z.rows();
  if (z.rank() != 2 || z.cols() != static_cast<std::size_t>(kNumLevels) || true_levels.size() != n || n == 0) {
    throw ShapeError("boundary_loss: need [n, 5] logits and n target levels");
  }
  for (int l : true_levels) {
    if (l < 1 || l > kNumLevels) throw ValidationError("boundary_loss: level " + std::to_string(l) + " out of range");
  }
  constexpr std::size_t N = kNumLevels;
  // p_j and 1 - p_j from max-shifted exponentials so neither loses precision
  std::vector<double> p(n * N), notp(n * N);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const auto row = z.row_span(i);
    const double m = *std::max_element(row.begin(), row.end());
    std::array<double, N> e{};
    double s = 0.0;
    for (std::size_t j = 0; j < N; ++j) s += e[j] = std::exp(row[j] - m);
    for (std::size_t j = 0; j < N; ++j) {
      p[i * N + j] = e[j] / s;
      notp[i * N + j] = (s - e[j]) / s;
    }
    const auto t = static_cast<std::size_t>(true_levels[i] - 1);
    if (categorical) {
      total -= std::log(p[i * N + t]);
    } else {
      for (std::size_t j = 0; j < N; ++j) {
        total -= j == t ? std::log(p[i * N + j]) : std::log(notp[i * N + j]);
      }
    }
  }
  const double inv = 1.0 / static_cast<double>(n);
  return Var::op(Tensor::scalar(total * inv), {logits},
                 [p = std::move(p), notp = std::move(notp), lv = std::vector<int>(true_levels.begin(), true_levels.end()),
                  categorical, inv](const Tensor&, const Tensor& g, std::span<Var> parents) {
                   const std::size_t n = lv.size();
                   Tensor dz({n, N}, 0.0);
                   for (std::size_t i = 0; i < n; ++i) {
                     const auto t = static_cast<std::size_t>(lv[i] - 1);
                     const double* pi = &p[i * N];
                     for (std::size_t k = 0; k < N; ++k) {
                       double d;
                       if (categorical) {
                         d = pi[k] - (k == t ? 1.0 : 0.0);
                       } else {
                         // -log p_t contributes p_k - [k = t]; each -log(1 - p_j), j != t,
                         // contributes p_k - [k != j] p_k / (1 - p_j)
                         d = pi[k] - (k == t ? 1.0 : 0.0);
                         for (std::size_t j = 0; j < N; ++j) {
                           if (j == t) continue;
                           d += pi[k] - (k != j ? pi[k] / notp[i * N + j] : 0.0);
                         }
                       }
                       dz.at(i, k) = g[0] * inv * d;
                     }
                   }
                   parents[0].accumulate(dz);
                 });
}

double boundary_loss(std::span<const double> probabilities, int true_level, bool categorical, double eps) {
  if (probabilities.size() != static_cast<std::size_t>(kNumLevels)) {
    throw ShapeError("boundary_loss: expected 5 probabilities");
  }
  if (true_level < 1 || true_level > kNumLevels) throw ValidationError("boundary_loss: level out of range");
  const auto t = static_cast<std::size_t>(true_level - 1);
  auto clamp = [eps](double v) { return std::clamp(v, eps, 1.0 - eps); };
  if (categorical) return -std::log(clamp(probabilities[t]));
  double loss = 0.0;
  for (std::size_t j = 0; j < probabilities.size(); ++j) {
    const double pj = clamp(probabilities[j]);
    loss -= j == t ? std::log(pj) : std::log(1.0 - pj);
  }
  return loss;
}

Var confidence_biases(net::ParamStore& store, const Var& samples, const Var& support,
                      std::span<const std::pair<std::size_t, std::size_t>> pairs, const StageConfig& cfg) {
  require_same_width(samples, support, "confidence");
  std::vector<std::size_t> si, ki;
  si.reserve(pairs.size());
  ki.reserve(pairs.size());
  for (const auto& [i, k] : pairs) {
    si.push_back(i);
    ki.push_back(k);
  }
  const Var raw = pair_head(store, "h", net::gather_rows(samples, si), net::gather_rows(support, ki), cfg.hidden);
  return net::add_scalar(net::sigmoid(raw), -0.5);
}

Var confidence(net::ParamStore& store, const Var& samples, std::span<const int> assigned_levels,
               const Var& support, std::span<const int> support_levels,
               std::span<const double> support_confidence, const StageConfig& cfg) {
  const std::size_t n = samples.value().rows();
  const std::size_t m = support.value().rows();
  if (assigned_levels.size() != n || support_levels.size() != m || support_confidence.size() != m) {
    throw ShapeError("confidence: level/confidence lists do not match the feature rows");
  }
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  std::vector<std::size_t> offsets{0};
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < m; ++k) {
      if (support_levels[k] == assigned_levels[i]) pairs.emplace_back(i, k);
    }
    if (pairs.size() == offsets.back()) {
      throw ValidationError("confidence: no support samples at level " + std::to_string(assigned_levels[i]));
    }
    offsets.push_back(pairs.size());
  }
  const Var h = confidence_biases(store, samples, support, pairs, cfg);

  const double bound = 0.5 * cfg.delta;
  Tensor out({n}, 0.0);
  std::vector<bool> clamped(n, false);
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::size_t r = offsets[i]; r < offsets[i + 1]; ++r) s += support_confidence[pairs[r].second] + h.value()[r];
    const double mean = s / static_cast<double>(offsets[i + 1] - offsets[i]);
    out[i] = std::clamp(mean, -bound, bound);
    clamped[i] = mean != out[i];
  }
  return Var::op(std::move(out), {h},
                 [offsets = std::move(offsets), clamped = std::move(clamped)](
                     const Tensor&, const Tensor& g, std::span<Var> parents) {
                   std::vector<double> dh(offsets.back(), 0.0);
                   for (std::size_t i = 0; i + 1 < offsets.size(); ++i) {
                     if (clamped[i]) continue;
                     const double w = g[i] / static_cast<double>(offsets[i + 1] - offsets[i]);
                     for (std::size_t r = offsets[i]; r < offsets[i + 1]; ++r) dh[r] = w;
                   }
                   parents[0].accumulate(dh);
                 });
}

QualityScore combine(int level, double confidence, double delta) {
  if (level < 1 || level > kNumLevels) throw ValidationError("combine: level " + std::to_string(level) + " out of range");
  QualityScore s;
  s.level = level;
  s.confidence = confidence;
  s.score = static_cast<double>(level) + confidence / delta;
  return s;
}

}  // namespace d3pcqa
