#include "d3pcqa/features.hpp"

#include <cstdint>
#include <string>

#include "d3pcqa/errors.hpp"
#include "d3pcqa/net/layers.hpp"

namespace d3pcqa {

using net::Tensor;
using net::Var;

ConvBackbone::ConvBackbone(std::vector<std::size_t> channels) : channels_(std::move(channels)) {
  if (channels_.empty()) throw ConfigError("conv backbone needs at least one stage");
}

Var ConvBackbone::forward(net::ParamStore& store, const Var& images) const {
  if (images.value().rank() != 4 || images.value().dim(1) != kViewChannels) {
    throw ShapeError("backbone: expected [B, 4, H, W], got " + net::shape_str(images.shape()));
  }
  Var x = images;
  std::size_t cin = kViewChannels;
  for (std::size_t s = 0; s < channels_.size(); ++s) {
    const std::string name = "feat.conv" + std::to_string(s);
    const std::size_t cout = channels_[s];
    Var& w = store.get(name + ".weight", {cout, cin, 3, 3}, net::Init::HeUniform, cin * 9);
    Var& b = store.get(name + ".bias", {cout}, net::Init::Zero, cin * 9);
    x = net::relu(net::conv3x3_s2(x, w, b));
    cin = cout;
  }
  return net::global_avg_pool(x);
}

namespace {

// Occupancy of each image, [B, H, W] flattened, read off the depth channel.
std::vector<std::uint8_t> occupancy_mask(const Tensor& images) {
  const std::size_t b = images.dim(0), hw = images.dim(2) * images.dim(3);
  std::vector<std::uint8_t> mask(b * hw);
  for (std::size_t i = 0; i < b; ++i) {
    const double* depth = images.data() + (i * kViewChannels + 3) * hw;
    for (std::size_t p = 0; p < hw; ++p) mask[i * hw + p] = depth[p] > -1.0 + 1e-9 ? 1 : 0;
  }
  return mask;
}

// Valid set after one 3x3 stride-2 pad-1 convolution. Eroding: all nine
// taps inside the image and valid. Otherwise: at least one valid tap.
std::vector<std::uint8_t> downsample_mask(const std::vector<std::uint8_t>& mask, std::size_t b, std::size_t h,
                                          std::size_t w, bool erode) {
  const std::size_t ho = (h + 1) / 2, wo = (w + 1) / 2;
  std::vector<std::uint8_t> out(b * ho * wo, 0);
  for (std::size_t i = 0; i < b; ++i) {
    for (std::size_t y = 0; y < ho; ++y) {
      for (std::size_t x = 0; x < wo; ++x) {
        int hits = 0;
        for (int dy = -1; dy <= 1; ++dy) {
          for (int dx = -1; dx <= 1; ++dx) {
            const long sy = static_cast<long>(2 * y) + dy, sx = static_cast<long>(2 * x) + dx;
            hits += sy >= 0 && sx >= 0 && sy < static_cast<long>(h) && sx < static_cast<long>(w) &&
                    mask[(i * h + static_cast<std::size_t>(sy)) * w + static_cast<std::size_t>(sx)] != 0;
          }
        }
        out[(i * ho + y) * wo + x] = (erode ? hits == 9 : hits > 0) ? 1 : 0;
      }
    }
  }
  return out;
}

// Mask broadcast over channels, each image's entries scaled by `weight(i)`.
template <typename Weight>
Tensor broadcast_mask(const std::vector<std::uint8_t>& mask, std::size_t b, std::size_t c, std::size_t hw,
                      Weight weight) {
  Tensor out({b, c, hw}, 0.0);
  for (std::size_t i = 0; i < b; ++i) {
    const double wi = weight(i);
    for (std::size_t ch = 0; ch < c; ++ch) {
      double* o = out.data() + (i * c + ch) * hw;
      for (std::size_t p = 0; p < hw; ++p) o[p] = mask[i * hw + p] != 0 ? wi : 0.0;
    }
  }
  return out;
}

// Every occupied pixel minus the mean of the occupied pixels in its 3x3
// neighbourhood, per channel; background becomes 0.
Tensor local_residual(const Tensor& images, const std::vector<std::uint8_t>& mask) {
  const std::size_t b = images.dim(0), c = images.dim(1), h = images.dim(2), w = images.dim(3);
  Tensor out(images.shape(), 0.0);
  for (std::size_t i = 0; i < b; ++i) {
    const std::uint8_t* m = mask.data() + i * h * w;
    for (std::size_t ch = 0; ch < c; ++ch) {
      const double* x = images.data() + (i * c + ch) * h * w;
      double* o = out.data() + (i * c + ch) * h * w;
      for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t xx = 0; xx < w; ++xx) {
          if (m[y * w + xx] == 0) continue;
          double acc = 0;
          int n = 0;
          for (std::size_t yy = y == 0 ? 0 : y - 1; yy <= std::min(h - 1, y + 1); ++yy) {
            for (std::size_t xs = xx == 0 ? 0 : xx - 1; xs <= std::min(w - 1, xx + 1); ++xs) {
              if (m[yy * w + xs] == 0) continue;
              acc += x[yy * w + xs];
              ++n;
            }
          }
          o[y * w + xx] = x[y * w + xx] - acc / n;
        }
      }
    }
  }
  return out;
}

}  // namespace

MaskedConvBackbone::MaskedConvBackbone(std::vector<std::size_t> channels, bool residual_input)
    : channels_(std::move(channels)), residual_input_(residual_input) {
  if (channels_.empty()) throw ConfigError("conv backbone needs at least one stage");
}

Var MaskedConvBackbone::forward(net::ParamStore& store, const Var& images) const {
  if (images.value().rank() != 4 || images.value().dim(1) != kViewChannels) {
    throw ShapeError("backbone: expected [B, 4, H, W], got " + net::shape_str(images.shape()));
  }
  const std::size_t b = images.value().dim(0);
  std::size_t h = images.value().dim(2), w = images.value().dim(3);
  std::vector<std::uint8_t> mask = occupancy_mask(images.value());
  Var x = residual_input_ ? net::constant(local_residual(images.value(), mask)) : images;
  std::size_t cin = kViewChannels;
  for (std::size_t s = 0; s < channels_.size(); ++s) {
    const std::string name = "feat.conv" + std::to_string(s);
    const std::size_t cout = channels_[s];
    Var& wt = store.get(name + ".weight", {cout, cin, 3, 3}, net::Init::HeUniform, cin * 9);
    Var& bias = store.get(name + ".bias", {cout}, net::Init::Zero, cin * 9);
    x = net::relu(net::conv3x3_s2(x, wt, bias));
    mask = downsample_mask(mask, b, h, w, !residual_input_);
    h = (h + 1) / 2;
    w = (w + 1) / 2;
    const bool last = s + 1 == channels_.size();
    Tensor m;
    if (last) {
      // Rescale so the plain average over all positions becomes the mean
      // over valid ones; an image with no valid position pools to zero.
      const std::size_t hw = h * w;
      m = broadcast_mask(mask, b, cout, hw, [&](std::size_t i) {
        std::size_t n = 0;
        for (std::size_t p = 0; p < hw; ++p) n += mask[i * hw + p];
        return n == 0 ? 0.0 : static_cast<double>(hw) / static_cast<double>(n);
      });
    } else {
      m = broadcast_mask(mask, b, cout, h * w, [](std::size_t) { return 1.0; });
    }
    x = net::mul(x, net::constant(m.reshaped({b, cout, h, w})));
    cin = cout;
  }
  return net::global_avg_pool(x);
}

std::unique_ptr<Backbone> make_backbone(const std::string& preset) {
  if (preset == "conv4") return std::make_unique<ConvBackbone>(std::vector<std::size_t>{8, 16, 32, 64});
  if (preset == "conv3") return std::make_unique<ConvBackbone>(std::vector<std::size_t>{8, 16, 32});
  if (preset == "conv3m") return std::make_unique<MaskedConvBackbone>(std::vector<std::size_t>{16, 32, 64});
  if (preset == "conv2m") return std::make_unique<MaskedConvBackbone>(std::vector<std::size_t>{16, 32});
  if (preset == "hp3m") return std::make_unique<MaskedConvBackbone>(std::vector<std::size_t>{16, 32, 64}, true);
  if (preset == "hp2m") return std::make_unique<MaskedConvBackbone>(std::vector<std::size_t>{16, 32}, true);
  throw ConfigError("unknown backbone preset '" + preset + "'");
}

Tensor view_tensor(const ProjectionSet& proj, std::size_t image_size) {
  if (proj.size <= 0 || static_cast<std::size_t>(proj.size) != image_size) {
    throw ValidationError("projection is " + std::to_string(proj.size) + " px but the extractor expects " +
                          std::to_string(image_size) + " px");
  }
  const std::size_t hw = proj.pixels();
  Tensor out({static_cast<std::size_t>(kNumViews), kViewChannels, image_size, image_size}, 0.0);
  double* o = out.data();
  for (std::size_t v = 0; v < static_cast<std::size_t>(kNumViews); ++v) {
    const auto& tex = proj.textures[v];
    const auto& dep = proj.depths[v];
    double* base = o + v * kViewChannels * hw;
    for (std::size_t p = 0; p < hw; ++p) {
      for (std::size_t c = 0; c < 3; ++c) base[c * hw + p] = 2.0 * tex[p * 3 + c] - 1.0;
      base[3 * hw + p] = 2.0 * dep[p] - 1.0;
    }
  }
  return out;
}

Tensor stack_views(std::span<const Tensor* const> views) {
  if (views.empty()) throw ValidationError("stack_views: nothing to stack");
  net::Shape shape = views.front()->shape();
  std::vector<double> data;
  data.reserve(views.size() * views.front()->size());
  for (const Tensor* t : views) {
    if (t->shape() != views.front()->shape()) throw ShapeError("stack_views: view tensors differ in shape");
    data.insert(data.end(), t->values().begin(), t->values().end());
  }
  shape[0] *= views.size();
  return Tensor(std::move(shape), std::move(data));
}

FeatureExtractor::FeatureExtractor(FeatureConfig cfg)
    : cfg_(std::move(cfg)), backbone_(make_backbone(cfg_.backbone)) {}

Var FeatureExtractor::extract(net::ParamStore& store, const Var& views) const {
  const Tensor& v = views.value();
  if (v.rank() != 4 || v.dim(0) % kNumViews != 0 || v.dim(2) != cfg_.image_size || v.dim(3) != cfg_.image_size) {
    throw ValidationError("extract: expected [B*6, 4, " + std::to_string(cfg_.image_size) + ", " +
                          std::to_string(cfg_.image_size) + "] views, got " + net::shape_str(v.shape()));
  }
  const Var per_view = backbone_->forward(store, views);
  const Var pooled = net::group_mean_rows(per_view, kNumViews);
  const Var h = net::relu(net::dense(store, "feat.mlp1", pooled, cfg_.hidden));
  return net::dense(store, "feat.mlp2", h, cfg_.dim, net::Init::LecunUniform);
}

Var FeatureExtractor::extract(net::ParamStore& store, const ProjectionSet& proj) const {
  return extract(store, net::constant(view_tensor(proj, cfg_.image_size)));
}

}  // namespace d3pcqa
