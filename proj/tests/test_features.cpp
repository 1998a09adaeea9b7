#include <gtest/gtest.h>

#include <algorithm>
#include <random>

#include "d3pcqa/errors.hpp"
#include "d3pcqa/features.hpp"
#include "support.hpp"

using namespace d3pcqa;
using namespace d3pcqa::testing;
using net::Tensor;

namespace {

ProjectionSet flat_projection(int size, double gray, double depth) {
  ProjectionSet p;
  p.size = size;
  for (int f = 0; f < kNumViews; ++f) {
    p.textures[f].assign(static_cast<std::size_t>(size * size * 3), gray);
    p.depths[f].assign(static_cast<std::size_t>(size * size), depth);
    p.occupancy[f].assign(static_cast<std::size_t>(size * size), 1);
  }
  return p;
}

// [6, 4, size, size] with a square object of side `side` at (y0, x0); random
// content inside, background elsewhere.
Tensor object_views(std::size_t size, std::size_t side, std::size_t y0, std::size_t x0, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-0.9, 0.9);
  Tensor t({6, kViewChannels, size, size}, 0.0);
  for (std::size_t v = 0; v < 6; ++v) {
    double* depth = t.data() + (v * kViewChannels + 3) * size * size;
    std::fill_n(depth, size * size, -1.0);
    for (std::size_t y = 0; y < side; ++y) {
      for (std::size_t x = 0; x < side; ++x) {
        const std::size_t p = (y0 + y) * size + x0 + x;
        for (std::size_t c = 0; c < 4; ++c) t.data()[(v * kViewChannels + c) * size * size + p] = u(rng);
      }
    }
  }
  return t;
}

Tensor run(const std::string& preset, const Tensor& views, net::ParamStore& store) {
  return make_backbone(preset)->forward(store, net::constant(views)).value();
}

void expect_near(const Tensor& a, const Tensor& b, double tol) {
  ASSERT_EQ(a.shape(), b.shape());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], tol) << "index " << i;
}

}  // namespace

TEST(ViewTensor, LayoutAndRange) {
  ProjectionSet p = flat_projection(8, 0.5, 0.0);
  p.textures[2][3 * 3 + 1] = 1.0;  // view 2, pixel 3, green
  p.depths[5][7] = 0.75;
  const Tensor t = view_tensor(p, 8);
  EXPECT_EQ(t.shape(), (net::Shape{6, 4, 8, 8}));
  EXPECT_EQ(t[0], 0.0);                          // gray 0.5 -> 0
  EXPECT_EQ(t[3 * 64], -1.0);                    // depth 0 -> -1
  EXPECT_EQ(t[(2 * 4 + 1) * 64 + 3], 1.0);       // texture 1 -> 1
  EXPECT_EQ(t[(5 * 4 + 3) * 64 + 7], 0.5);       // depth 0.75 -> 0.5
  EXPECT_THROW((void)view_tensor(p, 16), ValidationError);
}

TEST(ViewTensor, StackChecksShapes) {
  const Tensor a = view_tensor(flat_projection(8, 0.2, 0.3), 8);
  const Tensor b = view_tensor(flat_projection(8, 0.4, 0.5), 8);
  const std::vector<const Tensor*> two{&a, &b};
  const Tensor s = stack_views(two);
  EXPECT_EQ(s.shape(), (net::Shape{12, 4, 8, 8}));
  EXPECT_EQ(s[a.size()], b[0]);
  const Tensor c = view_tensor(flat_projection(16, 0.2, 0.3), 16);
  const std::vector<const Tensor*> mixed{&a, &c};
  EXPECT_THROW((void)stack_views(mixed), ShapeError);
  EXPECT_THROW((void)stack_views(std::vector<const Tensor*>{}), ValidationError);
}

TEST(Backbone, PresetsAndNames) {
  for (const std::string p : {"conv4", "conv3", "conv3m", "conv2m", "hp3m", "hp2m"}) {
    EXPECT_EQ(make_backbone(p)->name(), p);
  }
  EXPECT_EQ(make_backbone("conv4")->output_dim(), 64u);
  EXPECT_EQ(make_backbone("hp2m")->output_dim(), 32u);
  EXPECT_THROW((void)make_backbone("resnet50"), ConfigError);
}

TEST(Extract, IdenticalProjectionsGiveIdenticalFeatures) {
  for (const std::string preset : {"conv4", "hp2m"}) {
    FeatureConfig cfg;
    cfg.image_size = 16;
    cfg.backbone = preset;
    const FeatureExtractor fx(cfg);
    net::ParamStore store(3);
    const ProjectionSet p = flat_projection(16, 0.3, 0.6);
    const Tensor a = fx.extract(store, p).value();
    const Tensor b = fx.extract(store, ProjectionSet(p)).value();
    EXPECT_EQ(a.shape(), (net::Shape{1, cfg.dim}));
    EXPECT_EQ(a, b) << preset;
  }
}

TEST(Extract, RowsAreIndependentAndViewOrderDoesNotMatter) {
  FeatureConfig cfg;
  cfg.image_size = 16;
  const FeatureExtractor fx(cfg);
  net::ParamStore store(4);
  std::mt19937_64 rng(4);
  const Tensor a = random_tensor({6, 4, 16, 16}, rng), b = random_tensor({6, 4, 16, 16}, rng);
  const std::vector<const Tensor*> both{&a, &b};
  const Tensor joint = fx.extract(store, net::constant(stack_views(both))).value();
  const Tensor only_b = fx.extract(store, net::constant(b)).value();
  for (std::size_t c = 0; c < cfg.dim; ++c) EXPECT_EQ(joint.at(1, c), only_b.at(0, c));

  // reverse the six views of b
  Tensor rev(b.shape());
  const std::size_t per_view = b.size() / 6;
  for (std::size_t v = 0; v < 6; ++v) {
    std::copy_n(b.data() + v * per_view, per_view, rev.data() + (5 - v) * per_view);
  }
  expect_near(fx.extract(store, net::constant(rev)).value(), only_b, 1e-12);
}

TEST(Extract, RejectsWrongShapes) {
  FeatureConfig cfg;
  cfg.image_size = 16;
  const FeatureExtractor fx(cfg);
  net::ParamStore store(5);
  EXPECT_THROW((void)fx.extract(store, net::constant(Tensor({5, 4, 16, 16}, 0.0))), ValidationError);
  EXPECT_THROW((void)fx.extract(store, net::constant(Tensor({6, 4, 8, 8}, 0.0))), ValidationError);
  EXPECT_THROW((void)make_backbone("conv4")->forward(store, net::constant(Tensor({6, 3, 16, 16}, 0.0))), ShapeError);
}

TEST(MaskedBackbone, EmptyViewPoolsToZero) {
  net::ParamStore store(6);
  std::mt19937_64 rng(6);
  for (const std::string preset : {"conv2m", "hp2m"}) {
    Tensor views = random_tensor({6, 4, 16, 16}, rng);
    for (std::size_t v = 0; v < 6; ++v) std::fill_n(views.data() + (v * 4 + 3) * 256, 256, -1.0);
    const Tensor out = run(preset, views, store);
    for (double x : out.values()) EXPECT_EQ(x, 0.0) << preset;
  }
}

TEST(MaskedBackbone, TranslationAndMarginInvariance) {
  // Two stride-2 stages: a shift by 4 px shifts the final map by one cell.
  for (const std::string preset : {"conv2m", "hp2m"}) {
    net::ParamStore store(7);
    std::mt19937_64 rng(7);
    (void)run(preset, object_views(32, 12, 4, 4, 1), store);
    randomize_params(store, rng);
    const Tensor base = run(preset, object_views(32, 12, 4, 4, 1), store);
    expect_near(run(preset, object_views(32, 12, 12, 16, 1), store), base, 1e-12);
    // same object on a larger canvas
    Tensor big = object_views(48, 12, 20, 8, 1);
    expect_near(run(preset, big, store), base, 1e-12);
  }
}

TEST(MaskedBackbone, ResidualInputIgnoresFlatColourAndDepth) {
  net::ParamStore store(8);
  std::mt19937_64 rng(8);
  // 12x12 square of constant colour and depth on a 24 px canvas
  auto flat_object = [](double colour, double depth) {
    Tensor t({6, kViewChannels, 24, 24}, 0.0);
    for (std::size_t v = 0; v < 6; ++v) {
      for (std::size_t c = 0; c < 4; ++c) {
        double* ch = t.data() + (v * 4 + c) * 576;
        if (c == 3) std::fill_n(ch, 576, -1.0);
        for (std::size_t y = 4; y < 16; ++y) {
          for (std::size_t x = 4; x < 16; ++x) ch[y * 24 + x] = c == 3 ? depth : colour;
        }
      }
    }
    return t;
  };
  (void)run("hp2m", flat_object(0.1, 0.2), store);
  randomize_params(store, rng);
  expect_near(run("hp2m", flat_object(0.1, 0.2), store), run("hp2m", flat_object(-0.7, 0.9), store), 1e-12);
  // the raw masked variant does see the offset
  net::ParamStore raw(9);
  (void)run("conv2m", flat_object(0.1, 0.2), raw);
  randomize_params(raw, rng);
  const Tensor a = run("conv2m", flat_object(0.1, 0.2), raw), b = run("conv2m", flat_object(-0.7, 0.9), raw);
  EXPECT_NE(a, b);
}
