#pragma once

#include <memory>
#include <span>
#include <string>
#include <vector>

#include "d3pcqa/net/autograd.hpp"
#include "d3pcqa/net/params.hpp"
#include "d3pcqa/projection.hpp"

namespace d3pcqa {

inline constexpr std::size_t kViewChannels = 4;  // RGB + depth

/// Image stack -> per-image feature vector. Implementations register their
/// parameters in the store under their own prefix.
class Backbone {
 public:
  virtual ~Backbone() = default;
  [[nodiscard]] virtual std::string name() const = 0;
  [[nodiscard]] virtual std::size_t output_dim() const = 0;
  /// images [B, 4, H, W] -> [B, output_dim()]
  virtual net::Var forward(net::ParamStore& store, const net::Var& images) const = 0;
};

/// Strided 3x3 convolutions with ReLU, then global average pooling.
class ConvBackbone final : public Backbone {
 public:
  explicit ConvBackbone(std::vector<std::size_t> channels = {8, 16, 32, 64});
  [[nodiscard]] std::string name() const override { return "conv" + std::to_string(channels_.size()); }
  [[nodiscard]] std::size_t output_dim() const override { return channels_.back(); }
  net::Var forward(net::ParamStore& store, const net::Var& images) const override;

 private:
  std::vector<std::size_t> channels_;
};

/// ConvBackbone variant that only looks at the object. A pixel stays valid
/// while its whole 3x3 input footprint is occupied (depth channel above the
/// background value); activations outside the valid set are zeroed after
/// every stage and the final pool averages valid positions only. Silhouette
/// edges therefore never reach the pooled feature.
class MaskedConvBackbone final : public Backbone {
 public:
  explicit MaskedConvBackbone(std::vector<std::size_t> channels = {16, 32}, bool residual_input = false);
  [[nodiscard]] std::string name() const override {
    return (residual_input_ ? "hp" : "conv") + std::to_string(channels_.size()) + "m";
  }
  [[nodiscard]] std::size_t output_dim() const override { return channels_.back(); }
  net::Var forward(net::ParamStore& store, const net::Var& images) const override;

 private:
  std::vector<std::size_t> channels_;
  bool residual_input_ = false;
};

/// Backbone by preset name ("conv4", "conv3", "conv3m", "conv2m").
std::unique_ptr<Backbone> make_backbone(const std::string& preset);

struct FeatureConfig {
  std::size_t image_size = 64;
  std::size_t dim = 64;     // d
  std::size_t hidden = 64;  // d_m
  std::string backbone = "conv4";
};

/// Packs the six views as [6, 4, size, size] with values mapped to [-1, 1].
/// Throws ValidationError when the projection size differs from `image_size`.
net::Tensor view_tensor(const ProjectionSet& proj, std::size_t image_size);

/// Concatenates per-sample view tensors along the first axis.
net::Tensor stack_views(std::span<const net::Tensor* const> views);

/// Perception features: backbone on every view, mean over the six views of a
/// sample, then FC(d_b, d_m) -> ReLU -> FC(d_m, d).
class FeatureExtractor {
 public:
  explicit FeatureExtractor(FeatureConfig cfg);

  [[nodiscard]] const FeatureConfig& config() const noexcept { return cfg_; }
  [[nodiscard]] const Backbone& backbone() const noexcept { return *backbone_; }

  /// views [B * 6, 4, H, W] -> [B, d]
  net::Var extract(net::ParamStore& store, const net::Var& views) const;
  /// Single projection -> [1, d].
  net::Var extract(net::ParamStore& store, const ProjectionSet& proj) const;

 private:
  FeatureConfig cfg_;
  std::shared_ptr<const Backbone> backbone_;
};

}  // namespace d3pcqa
