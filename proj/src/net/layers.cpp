#include "d3pcqa/net/layers.hpp"

#include <cmath>
#include <vector>

#include "d3pcqa/errors.hpp"

namespace d3pcqa::net {

Var dense(ParamStore& store, const std::string& name, const Var& x, std::size_t dout, Init init) {
  if (x.value().rank() != 2) {
    throw ShapeError("dense '" + name + "': input must be a matrix, got " + shape_str(x.shape()));
  }
  const std::size_t din = x.value().dim(1);
  const std::string wname = name + ".weight";
  if (store.contains(wname) && store.at(wname).shape() != Shape{din, dout}) {
    throw ShapeError("dense '" + name + "': weight is " + shape_str(store.at(wname).shape()) +
                     " but input has " + std::to_string(din) + " features");
  }
  Var& w = store.get(wname, {din, dout}, init, din);
  Var& b = store.get(name + ".bias", {dout}, Init::Zero, din);
  return add_bias(matmul(x, w), b);
}

namespace {

void check_heads(const Var& x, const AttentionOptions& opts, const std::string& name) {
  if (x.value().rank() != 2 || x.value().dim(0) == 0) {
    throw ShapeError("msa '" + name + "': input must be a non-empty [k, d] matrix");
  }
  if (opts.heads == 0 || x.value().dim(1) % opts.heads != 0) {
    throw ConfigError("msa '" + name + "': width " + std::to_string(x.value().dim(1)) +
                      " is not divisible by " + std::to_string(opts.heads) + " heads");
  }
}

double logit_scale(std::size_t d, const AttentionOptions& opts) {
  const std::size_t denom = opts.scale_by_model_dim ? d : d / opts.heads;
  return 1.0 / std::sqrt(static_cast<double>(denom));
}

}  // namespace

Var msa(ParamStore& store, const std::string& name, const Var& x, const AttentionOptions& opts) {
  check_heads(x, opts, name);
  const std::size_t k = x.value().dim(0), d = x.value().dim(1);
  const std::size_t dh = d / opts.heads;
  const Var qkv = dense(store, name + ".qkv", x, d, Init::LecunUniform);
  Var mixed;
  if (k == 1) {
    // softmax over a single logit is exactly 1, so each head returns V itself
    mixed = qkv;
  } else {
    const double s = logit_scale(d, opts);
    std::vector<Var> heads;
    heads.reserve(opts.heads);
    for (std::size_t h = 0; h < opts.heads; ++h) {
      const Var q = opts.heads == 1 ? qkv : slice_cols(qkv, h * dh, dh);
      const Var alpha = softmax_rows(scale(matmul_nt(q, q), s));
      heads.push_back(matmul(alpha, q));
    }
    mixed = opts.heads == 1 ? heads.front() : concat_cols(heads);
  }
  return dense(store, name + ".out", mixed, d, Init::LecunUniform);
}

Tensor attention_weights(ParamStore& store, const std::string& name, const Var& x,
                         const AttentionOptions& opts, std::size_t head) {
  check_heads(x, opts, name);
  const std::size_t d = x.value().dim(1), dh = d / opts.heads;
  const Var qkv = dense(store, name + ".qkv", x, d, Init::LecunUniform);
  const Var q = slice_cols(qkv, head * dh, dh);
  return softmax_rows(scale(matmul_nt(q, q), logit_scale(d, opts))).value();
}

}  // namespace d3pcqa::net
