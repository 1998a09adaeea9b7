#include "d3pcqa/net/params.hpp"

#include <cmath>
#include <random>

#include "d3pcqa/errors.hpp"

namespace d3pcqa::net {

namespace {

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace

Var& ParamStore::get(const std::string& name, const Shape& shape, Init init, std::size_t fan_in) {
  auto it = entries_.find(name);
  if (it != entries_.end()) {
    if (it->second.var.shape() != shape) {
      throw ShapeError("parameter '" + name + "' has shape " + shape_str(it->second.var.shape()) +
                       ", requested " + shape_str(shape));
    }
    return it->second.var;
  }
  Tensor value(shape, 0.0);
  if (init != Init::Zero) {
    std::mt19937_64 rng(seed_ ^ fnv1a(name));
    const double gain = init == Init::HeUniform ? 6.0 : 3.0;
    const double bound = std::sqrt(gain / static_cast<double>(std::max<std::size_t>(fan_in, 1)));
    std::uniform_real_distribution<double> u(-bound, bound);
    for (auto& v : value.values()) v = u(rng);
  }
  Entry e{Var(std::move(value), true), Tensor(shape, 0.0), Tensor(shape, 0.0)};
  return entries_.emplace(name, std::move(e)).first->second.var;
}

Var& ParamStore::at(const std::string& name) {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw ConfigError("unknown parameter '" + name + "'");
  return it->second.var;
}

const Var& ParamStore::at(const std::string& name) const {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw ConfigError("unknown parameter '" + name + "'");
  return it->second.var;
}

void ParamStore::set(const std::string& name, Tensor value) {
  const Shape shape = value.shape();
  entries_.insert_or_assign(name, Entry{Var(std::move(value), true), Tensor(shape, 0.0), Tensor(shape, 0.0)});
}

std::vector<std::string> ParamStore::names() const {
  std::vector<std::string> out;
  for (const auto& [name, e] : entries_) out.push_back(name);
  return out;
}

std::size_t ParamStore::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [name, e] : entries_) n += e.var.value().size();
  return n;
}

void ParamStore::zero_grad() {
  for (auto& [name, e] : entries_) e.var.zero_grad();
}

void ParamStore::adam_step(double lr, double weight_decay, double beta1, double beta2, double eps) {
  ++step_;
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(step_));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(step_));
  for (auto& [name, e] : entries_) {
    Tensor& w = e.var.mutable_value();
    const Tensor& g = e.var.grad();
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double gi = g[i] + weight_decay * w[i];
      e.m[i] = beta1 * e.m[i] + (1.0 - beta1) * gi;
      e.v[i] = beta2 * e.v[i] + (1.0 - beta2) * gi * gi;
      const double mhat = e.m[i] / bc1;
      const double vhat = e.v[i] / bc2;
      w[i] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
    e.var.zero_grad();
  }
}

void ParamStore::export_to(CheckpointData& ckpt) const {
  for (const auto& [name, e] : entries_) {
    ckpt.tensors["param/" + name] = e.var.value();
    ckpt.tensors["adam_m/" + name] = e.m;
    ckpt.tensors["adam_v/" + name] = e.v;
  }
  ckpt.meta["params"] = {{"seed", seed_}, {"step", step_}, {"count", entries_.size()}};
}

ParamStore ParamStore::import_from(const CheckpointData& ckpt) {
  if (!ckpt.meta.contains("params")) throw CheckpointError("checkpoint has no parameter section");
  const auto& meta = ckpt.meta.at("params");
  ParamStore store(meta.at("seed").get<std::uint64_t>());
  store.step_ = meta.at("step").get<std::uint64_t>();
  const std::string prefix = "param/";
  for (const auto& [key, t] : ckpt.tensors) {
    if (key.rfind(prefix, 0) != 0) continue;
    const std::string name = key.substr(prefix.size());
    auto m = ckpt.tensors.find("adam_m/" + name);
    auto v = ckpt.tensors.find("adam_v/" + name);
    if (m == ckpt.tensors.end() || v == ckpt.tensors.end()) {
      throw CheckpointError("checkpoint: missing optimizer moments for '" + name + "'");
    }
    store.entries_.emplace(name, Entry{Var(t, true), m->second, v->second});
  }
  if (store.entries_.size() != meta.at("count").get<std::size_t>()) {
    throw CheckpointError("checkpoint: parameter count mismatch");
  }
  return store;
}

bool operator==(const ParamStore& a, const ParamStore& b) {
  if (a.seed_ != b.seed_ || a.step_ != b.step_ || a.entries_.size() != b.entries_.size()) return false;
  for (const auto& [name, e] : a.entries_) {
    auto it = b.entries_.find(name);
    if (it == b.entries_.end()) return false;
    if (!(e.var.value() == it->second.var.value()) || !(e.m == it->second.m) || !(e.v == it->second.v)) {
      return false;
    }
  }
  return true;
}

void optimizer_step(ParamStore& store, double lr, double weight_decay) {
  store.adam_step(lr, weight_decay);
}

}  // namespace d3pcqa::net
