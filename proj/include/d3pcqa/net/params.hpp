#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "d3pcqa/checkpoint.hpp"
#include "d3pcqa/net/autograd.hpp"

namespace d3pcqa::net {

enum class Init {
  HeUniform,     // U(-sqrt(6/fan_in), +sqrt(6/fan_in)), for layers feeding a ReLU
  LecunUniform,  // U(-sqrt(3/fan_in), +sqrt(3/fan_in)), unit gain for linear layers
  Zero,
};

/// Named trainable parameters plus their adaptive-moment state.
///
/// Initial values depend only on (seed, name), so registration order does not
/// change them. A store is single-writer: backward/step on it must not run
/// concurrently.
class ParamStore {
 public:
  explicit ParamStore(std::uint64_t seed = 0) : seed_(seed) {}

  /// Returns the named parameter, creating it on first use. `fan_in` drives
  /// the He-uniform scale. Throws ShapeError if an existing parameter has a
  /// different shape.
  Var& get(const std::string& name, const Shape& shape, Init init, std::size_t fan_in);

  [[nodiscard]] bool contains(const std::string& name) const { return entries_.count(name) != 0; }
  [[nodiscard]] Var& at(const std::string& name);
  [[nodiscard]] const Var& at(const std::string& name) const;

  /// Registers or overwrites a parameter value (moments reset to zero).
  void set(const std::string& name, Tensor value);

  [[nodiscard]] std::vector<std::string> names() const;
  [[nodiscard]] std::size_t parameter_count() const;
  [[nodiscard]] std::uint64_t step() const noexcept { return step_; }
  [[nodiscard]] std::uint64_t seed() const noexcept { return seed_; }

  void zero_grad();

  /// Adam with L2 weight decay folded into the gradient; zeroes gradients and
  /// increments the step counter.
  void adam_step(double lr, double weight_decay, double beta1 = 0.9, double beta2 = 0.999,
                 double eps = 1e-8);

  /// Writes params under `param/`, moments under `adam_m/` and `adam_v/`.
  void export_to(CheckpointData& ckpt) const;
  /// Restores a store written by export_to.
  static ParamStore import_from(const CheckpointData& ckpt);

  friend bool operator==(const ParamStore& a, const ParamStore& b);

 private:
  struct Entry {
    Var var;
    Tensor m;
    Tensor v;
  };
  std::map<std::string, Entry> entries_;
  std::uint64_t seed_ = 0;
  std::uint64_t step_ = 0;
};

/// Free-function form of ParamStore::adam_step.
void optimizer_step(ParamStore& store, double lr, double weight_decay);

}  // namespace d3pcqa::net
