#pragma once

// Helpers shared by the unit tests and the acceptance runner.

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "d3pcqa/net/autograd.hpp"
#include "d3pcqa/net/params.hpp"

namespace d3pcqa::testing {

inline net::Tensor random_tensor(net::Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  net::Tensor t(std::move(shape));
  for (double& v : t.values()) v = u(rng);
  return t;
}

inline net::Var random_leaf(net::Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  return net::Var(random_tensor(std::move(shape), rng, lo, hi), true);
}

/// Overwrites every parameter of the store with uniform noise so zero-initialised
/// layers do not hide gradient paths.
inline void randomize_params(net::ParamStore& store, std::mt19937_64& rng, double scale = 0.5) {
  for (const auto& name : store.names()) {
    for (double& v : store.at(name).mutable_value().values()) {
      v = std::uniform_real_distribution<double>(-scale, scale)(rng);
    }
  }
}

/// Scalar probe sum(y * w) with fixed random weights w, so every output
/// element contributes a distinct upstream gradient.
inline net::Var probe(const net::Var& y, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return net::sum(net::mul(y, net::constant(random_tensor(y.shape(), rng))));
}

struct GradCheck {
  double rel_error = 0.0;   // ||analytic - numeric|| / max(||analytic||, ||numeric||)
  double max_abs_error = 0.0;
  double analytic_norm = 0.0;
  std::size_t coordinates = 0;
};

/// Central finite differences of `f` with respect to the leaves. At most
/// `max_coords` randomly chosen coordinates per leaf are probed; the relative
/// error is taken over the concatenated probed gradient.
inline GradCheck grad_check(std::vector<net::Var> leaves, const std::function<net::Var()>& f, std::mt19937_64& rng,
                            double h = 1e-6, std::size_t max_coords = 64) {
  for (auto& l : leaves) l.zero_grad();
  net::backward(f());
  std::vector<net::Tensor> analytic;
  for (const auto& l : leaves) {
    analytic.push_back(l.requires_grad() && l.grad().size() == l.value().size() ? l.grad()
                                                                               : net::Tensor(l.shape(), 0.0));
  }
  for (auto& l : leaves) l.zero_grad();

  double diff2 = 0.0, a2 = 0.0, n2 = 0.0;
  GradCheck out;
  for (std::size_t li = 0; li < leaves.size(); ++li) {
    auto& leaf = leaves[li];
    std::vector<std::size_t> coords(leaf.value().size());
    for (std::size_t i = 0; i < coords.size(); ++i) coords[i] = i;
    if (coords.size() > max_coords) {
      std::shuffle(coords.begin(), coords.end(), rng);
      coords.resize(max_coords);
    }
    for (std::size_t c : coords) {
      double& v = leaf.mutable_value()[c];
      const double saved = v;
      v = saved + h;
      const double fp = f().value()[0];
      v = saved - h;
      const double fm = f().value()[0];
      v = saved;
      const double numeric = (fp - fm) / (2.0 * h);
      const double a = analytic[li][c];
      diff2 += (a - numeric) * (a - numeric);
      a2 += a * a;
      n2 += numeric * numeric;
      out.max_abs_error = std::max(out.max_abs_error, std::abs(a - numeric));
      ++out.coordinates;
    }
  }
  const double denom = std::max(std::sqrt(std::max(a2, n2)), 1e-300);
  out.rel_error = std::sqrt(diff2) / denom;
  out.analytic_norm = std::sqrt(a2);
  if (a2 == 0.0 && n2 == 0.0) out.rel_error = 0.0;
  return out;
}

/// Leaves of every parameter in the store.
inline std::vector<net::Var> param_leaves(net::ParamStore& store) {
  std::vector<net::Var> out;
  for (const auto& name : store.names()) out.push_back(store.at(name));
  return out;
}

}  // namespace d3pcqa::testing
