#pragma once

#include <functional>
#include <memory>
#include <span>
#include <vector>

#include "d3pcqa/net/tensor.hpp"

namespace d3pcqa::net {

/// Handle to a node of the reverse-mode graph. Copies share the node.
///
/// Leaves created with requires_grad=true (parameters, or inputs under a
/// gradient check) accumulate into grad() when backward() runs. Interior nodes
/// keep their parents alive until the handle to the root is dropped.
class Var {
 public:
  struct Node;

  Var() = default;
  explicit Var(Tensor value, bool requires_grad = false);

  [[nodiscard]] const Tensor& value() const;
  /// Mutable access for leaves (parameter updates, test perturbations).
  [[nodiscard]] Tensor& mutable_value();
  [[nodiscard]] const Tensor& grad() const;
  [[nodiscard]] Tensor& mutable_grad();
  [[nodiscard]] bool requires_grad() const;
  [[nodiscard]] bool defined() const noexcept { return node_ != nullptr; }
  [[nodiscard]] const Shape& shape() const { return value().shape(); }

  /// Drops any accumulated gradient.
  void zero_grad();

  /// Builds an interior node. `backward` receives the node's own value and
  /// upstream gradient and must accumulate into the parents that require
  /// gradients.
  using BackwardFn =
      std::function<void(const Tensor& out, const Tensor& grad_out, std::span<Var> parents)>;
  static Var op(Tensor value, std::vector<Var> parents, BackwardFn backward);

  /// Adds `g` into this node's gradient buffer (allocated on first use).
  void accumulate(const Tensor& g);
  void accumulate(std::span<const double> g);

  friend void backward(const Var& root);

 private:
  std::shared_ptr<Node> node_;
};

/// Reverse sweep from a single-element root; the root's seed gradient is 1.
void backward(const Var& root);

/// Detached copy of a value.
Var constant(Tensor value);

// ---------------------------------------------------------------------------
// Differentiable operations. Matrices are [rows, cols]; higher-rank tensors
// are treated as [dim0, rest] where noted.

Var matmul(const Var& a, const Var& b);      // [n,k] x [k,m]
Var matmul_nt(const Var& a, const Var& b);   // [n,k] x [m,k]^T
Var add_bias(const Var& x, const Var& bias); // [n,m] + [m]
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);         // elementwise
Var scale(const Var& x, double s);
Var add_scalar(const Var& x, double s);
Var relu(const Var& x);
Var sigmoid(const Var& x);
Var softmax_rows(const Var& x);
Var l2_normalize_rows(const Var& x);

Var reshape(const Var& x, Shape shape);
Var slice_cols(const Var& x, std::size_t start, std::size_t count);
Var concat_cols(std::span<const Var> parts);
Var concat_rows(std::span<const Var> parts);
/// Output row i is input row indices[i]; repeats allowed.
Var gather_rows(const Var& x, std::span<const std::size_t> indices);
/// Mean over consecutive blocks of `group` rows: [n*group, m] -> [n, m].
Var group_mean_rows(const Var& x, std::size_t group);

Var sum(const Var& x);
Var mean(const Var& x);

/// 3x3 convolution, stride 2, zero padding 1, NCHW layout.
/// x [B,C,H,W], w [Co,C,3,3], b [Co] -> [B,Co,ceil(H/2),ceil(W/2)].
Var conv3x3_s2(const Var& x, const Var& w, const Var& b);
/// [B,C,H,W] -> [B,C]
Var global_avg_pool(const Var& x);

}  // namespace d3pcqa::net
