#pragma once

#include <string>

#include "d3pcqa/net/autograd.hpp"
#include "d3pcqa/net/params.hpp"

namespace d3pcqa::net {

/// Fully connected layer `x * W + b` with `W` stored as `<name>.weight`
/// [din, dout] and `b` as `<name>.bias` [dout]. Parameters are created on
/// first use; `init` applies to the weight, the bias always starts at zero.
Var dense(ParamStore& store, const std::string& name, const Var& x, std::size_t dout,
          Init init = Init::HeUniform);

struct AttentionOptions {
  std::size_t heads = 1;
  /// Divide logits by sqrt(model width) rather than sqrt(head width).
  bool scale_by_model_dim = true;
};

/// Multi-head self-attention over the rows of `x` [k, d].
///
/// A single projection `<name>.qkv` produces the tensor used as queries, keys
/// and values alike. Each head attends with softmax(Q Q^T / sqrt(d)) (or
/// sqrt(d/heads)), heads are concatenated and mixed back to width d through
/// `<name>.out`. Throws ConfigError when d is not divisible by the head count.
Var msa(ParamStore& store, const std::string& name, const Var& x, const AttentionOptions& opts);

/// Attention weights of the first head for inspection; same parameters as msa.
Tensor attention_weights(ParamStore& store, const std::string& name, const Var& x,
                         const AttentionOptions& opts, std::size_t head = 0);

}  // namespace d3pcqa::net
