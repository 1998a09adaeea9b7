#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "d3pcqa/errors.hpp"
#include "d3pcqa/ingest.hpp"
#include "d3pcqa/latent.hpp"
#include "d3pcqa/stages.hpp"
#include "support.hpp"

using namespace d3pcqa;
using net::Tensor;
using net::Var;
using d3pcqa::testing::random_leaf;
using d3pcqa::testing::random_tensor;
using d3pcqa::testing::randomize_params;

namespace {

LatentConfig small_latent() {
  LatentConfig cfg;
  cfg.blocks = 2;
  cfg.hidden = 12;
  cfg.attention = {2, true};
  return cfg;
}

// ---------------------------------------------------------------------------
// Disentangler

TEST(Disentangle, SingleRowMatchesExplicitMlp) {
  net::ParamStore store(1);
  std::mt19937_64 rng(2);
  const LatentConfig cfg = small_latent();
  const Var x = random_leaf({1, 8}, rng);
  const Tensor joint = disentangle(store, x, cfg, true).value();
  randomize_params(store, rng);
  const Tensor y = disentangle(store, x, cfg, true).value();

  // Hand evaluation from the stored weights: per block v = (x Wqkv + b) Wout + b, then FC-ReLU-FC.
  auto affine = [&](const std::vector<double>& in, const std::string& name) {
    const Tensor& w = store.at(name + ".weight").value();
    const Tensor& b = store.at(name + ".bias").value();
    std::vector<double> out(w.dim(1));
    for (std::size_t o = 0; o < out.size(); ++o) {
      double s = b[o];
      for (std::size_t i = 0; i < in.size(); ++i) s += in[i] * w.at(i, o);
      out[o] = s;
    }
    return out;
  };
  std::vector<double> v(x.value().values().begin(), x.value().values().end());
  for (std::size_t blk = 0; blk < cfg.blocks; ++blk) {
    const std::string p = "phi." + std::to_string(blk);
    v = affine(affine(v, p + ".msa.qkv"), p + ".msa.out");
    auto h = affine(v, p + ".fc1");
    for (double& e : h) e = std::max(e, 0.0);
    v = affine(h, p + ".fc2");
  }
  ASSERT_EQ(y.size(), v.size());
  for (std::size_t i = 0; i < v.size(); ++i) EXPECT_NEAR(y[i], v[i], 1e-12);
  EXPECT_EQ(joint.size(), y.size());
}

TEST(Disentangle, JointAndSeparatePathsAgreeForOneRow) {
  net::ParamStore store(3);
  std::mt19937_64 rng(4);
  const Var x = random_leaf({1, 8}, rng);
  (void)disentangle(store, x, small_latent(), true);
  randomize_params(store, rng);
  const Tensor a = disentangle(store, x, small_latent(), true).value();
  const Tensor b = disentangle(store, x, small_latent(), false).value();
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], 1e-12);
}

TEST(Disentangle, IdenticalInputsGiveIdenticalOutputs) {
  net::ParamStore store(5);
  std::mt19937_64 rng(6);
  const Tensor row = random_tensor({1, 8}, rng);
  Tensor x({4, 8});
  for (std::size_t r = 0; r < 4; ++r) {
    for (std::size_t c = 0; c < 8; ++c) x.at(r, c) = row[c];
  }
  (void)disentangle(store, Var(x), small_latent());
  randomize_params(store, rng);
  const Tensor y = disentangle(store, Var(x), small_latent()).value();
  for (std::size_t r = 1; r < 4; ++r) {
    for (std::size_t c = 0; c < 8; ++c) EXPECT_EQ(y.at(r, c), y.at(0, c));
  }
}

TEST(Disentangle, MixedLevelGroupIsRejected) {
  net::ParamStore store(1);
  const std::vector<int> levels{2, 2, 3};
  EXPECT_THROW((void)disentangle_group(store, Var(Tensor({3, 8})), levels, small_latent()), ValidationError);
}

// ---------------------------------------------------------------------------
// Distribution loss

// Independent evaluation of the quality-weighted InfoNCE.
double infonce_oracle(const Tensor& f, const std::vector<int>& levels, const std::vector<double>& q,
                      const std::vector<std::size_t>& partners, double tau) {
  const std::size_t n = f.rows(), d = f.cols();
  auto cosine = [&](std::size_t a, std::size_t b) {
    double ab = 0, aa = 0, bb = 0;
    for (std::size_t c = 0; c < d; ++c) {
      ab += f.at(a, c) * f.at(b, c);
      aa += f.at(a, c) * f.at(a, c);
      bb += f.at(b, c) * f.at(b, c);
    }
    return ab / std::sqrt(aa * bb);
  };
  double total = 0;
  int count = 0;
  for (std::size_t a = 0; a < n; ++a) {
    const std::size_t p = partners[a];
    if (p == kNoPartner) continue;
    const double dq = q[a] - q[p];
    const double pos = std::exp(cosine(a, p) / tau) / (dq * dq + 1.0);
    double neg = 0;
    for (std::size_t b = 0; b < n; ++b) {
      if (levels[b] == levels[a]) continue;
      const double e = q[a] - q[b];
      neg += (1.0 - 1.0 / (e * e + 1.0)) * std::exp(cosine(a, b) / tau);
    }
    total += -std::log(pos / (pos + neg));
    ++count;
  }
  return total / count;
}

TEST(DistributionLoss, OrthogonalLevelsHandValue) {
  Tensor f({4, 2}, std::vector<double>{1, 0, 1, 0, 0, 1, 0, 1});
  const std::vector<int> levels{1, 1, 2, 2};
  const std::vector<double> q{1.0, 1.0, 2.0, 2.0};
  const std::vector<std::size_t> partners{1, 0, 3, 2};
  const auto r = distribution_loss(Var(f), levels, q, partners, 1.0);
  const double e = std::exp(1.0);
  EXPECT_NEAR(r.loss.value()[0], -std::log(e / (e + 2.0 * 0.5 * 1.0)), 1e-14);
  EXPECT_EQ(r.anchors, 4u);
}

TEST(DistributionLoss, MatchesOracleOnRandomBatches) {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<int> levels;
    std::vector<double> q;
    for (int l = 1; l <= 5; ++l) {
      const int k = (l == 1 ? 2 : 1) + static_cast<int>(rng() % 3);
      for (int i = 0; i < k; ++i) {
        levels.push_back(l);
        q.push_back(l + std::uniform_real_distribution<double>(-0.5, 0.5)(rng));
      }
    }
    const Tensor f = random_tensor({levels.size(), 6}, rng);
    const auto partners = sample_positive_partners(levels, rng);
    const double tau = std::uniform_real_distribution<double>(0.05, 1.0)(rng);
    const double got = distribution_loss(Var(f), levels, q, partners, tau).loss.value()[0];
    EXPECT_NEAR(got, infonce_oracle(f, levels, q, partners, tau), 1e-10 * std::max(1.0, std::abs(got)));
  }
}

TEST(DistributionLoss, InvariantToPositiveRescaling) {
  std::mt19937_64 rng(8);
  const std::vector<int> levels{1, 1, 3, 3, 5, 5};
  const std::vector<double> q{1.1, 0.8, 3.2, 2.9, 5.0, 5.3};
  Tensor f = random_tensor({6, 5}, rng);
  const auto partners = sample_positive_partners(levels, rng);
  const double base = distribution_loss(Var(f), levels, q, partners, 0.1).loss.value()[0];
  for (std::size_t c = 0; c < 5; ++c) f.at(2, c) *= 37.5;
  for (std::size_t c = 0; c < 5; ++c) f.at(4, c) *= 0.01;
  EXPECT_NEAR(distribution_loss(Var(f), levels, q, partners, 0.1).loss.value()[0], base, 1e-9);
}

TEST(DistributionLoss, SingletonLevelsAreSkipped) {
  const std::vector<int> levels{1, 2, 2, 4};
  const std::vector<double> q{1, 2, 2, 4};
  std::mt19937_64 rng(1);
  const auto partners = sample_positive_partners(levels, rng);
  EXPECT_EQ(partners[0], kNoPartner);
  EXPECT_EQ(partners[3], kNoPartner);
  EXPECT_EQ(partners[1], 2u);
  EXPECT_EQ(partners[2], 1u);
  const auto r = distribution_loss(Var(random_tensor({4, 3}, rng)), levels, q, partners, 0.1);
  EXPECT_EQ(r.anchors, 2u);
  EXPECT_EQ(r.skipped_levels, (std::vector<int>{1, 4}));
  const std::vector<int> alone{1, 2, 3};
  EXPECT_THROW((void)distribution_loss(Var(Tensor({3, 2}, 1.0)), alone, std::vector<double>{1, 2, 3}, 0.1, rng),
               ValidationError);
}

TEST(DistributionLoss, PartnersAreLevelMatesAndNeverSelf) {
  std::mt19937_64 rng(9);
  const std::vector<int> levels{1, 1, 1, 2, 2, 3, 3, 3, 3};
  for (int trial = 0; trial < 200; ++trial) {
    const auto p = sample_positive_partners(levels, rng);
    for (std::size_t i = 0; i < levels.size(); ++i) {
      ASSERT_NE(p[i], i);
      ASSERT_EQ(levels[p[i]], levels[i]);
    }
  }
}

TEST(DistributionLoss, DecreasesUnderTraining) {
  net::ParamStore store(10);
  std::mt19937_64 rng(11);
  const LatentConfig cfg = small_latent();
  const std::vector<int> levels{1, 1, 2, 2, 3, 3, 4, 4, 5, 5};
  std::vector<double> q(levels.begin(), levels.end());
  const Var x(random_tensor({10, 8}, rng));
  const auto partners = sample_positive_partners(levels, rng);
  auto loss = [&] { return distribution_loss(disentangle(store, x, cfg, false), levels, q, partners, 0.1).loss; };
  const double first = loss().value()[0];
  for (int step = 0; step < 20; ++step) {
    net::backward(loss());
    store.adam_step(1e-2, 0.0);
  }
  EXPECT_LT(loss().value()[0], first);
}

// ---------------------------------------------------------------------------
// Anchors

TEST(Anchors, MeansPerLevel) {
  std::mt19937_64 rng(12);
  const Tensor v = random_tensor({1, 4}, rng);
  Tensor f({12, 4});
  std::vector<int> levels;
  for (std::size_t r = 0; r < 12; ++r) {
    const int l = 1 + static_cast<int>(r % 5);
    levels.push_back(l);
    for (std::size_t c = 0; c < 4; ++c) f.at(r, c) = l == 3 ? v[c] : (l == 4 ? (r % 2 ? 1.0 : -1.0) * v[c] : 0.0);
  }
  const Tensor a = aggregate_anchors(Var(f), levels).value();
  ASSERT_EQ(a.shape(), (net::Shape{5, 4}));
  for (std::size_t c = 0; c < 4; ++c) {
    EXPECT_DOUBLE_EQ(a.at(2, c), v[c]);  // copies of v
    EXPECT_NEAR(a.at(3, c), 0.0, 1e-15);  // {v, -v}
  }
}

TEST(Anchors, MatchesSummationOracleAndIsPermutationInvariant) {
  std::mt19937_64 rng(13);
  for (int trial = 0; trial < 20; ++trial) {
    const Tensor f = random_tensor({30, 7}, rng);
    std::vector<int> levels(30);
    for (std::size_t i = 0; i < 30; ++i) levels[i] = 1 + static_cast<int>(i / 6);
    const Tensor a = aggregate_anchors(Var(f), levels).value();
    for (int l = 0; l < 5; ++l) {
      for (std::size_t c = 0; c < 7; ++c) {
        double s = 0;
        for (int k = 0; k < 6; ++k) s += f.at(l * 6 + k, c);
        EXPECT_NEAR(a.at(l, c), s / 6.0, 1e-12);
      }
    }
    std::vector<std::size_t> perm(30);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<int> plevels(30);
    for (std::size_t i = 0; i < 30; ++i) plevels[i] = levels[perm[i]];
    const Tensor b = aggregate_anchors(net::gather_rows(Var(f), perm), plevels).value();
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], 1e-12);
  }
}

TEST(Anchors, MissingLevelsAreNamed) {
  const std::vector<int> levels{1, 1, 3, 5};
  try {
    (void)aggregate_anchors(Var(Tensor({4, 2})), levels);
    FAIL() << "expected ValidationError";
  } catch (const ValidationError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find('2'), std::string::npos) << msg;
    EXPECT_NE(msg.find('4'), std::string::npos) << msg;
  }
}

// ---------------------------------------------------------------------------
// Stage 1

TEST(Stage1, UntrainedHeadIsUniformAndPicksLevelOne) {
  net::ParamStore store(14);
  std::mt19937_64 rng(15);
  StageConfig cfg;
  cfg.hidden = 8;
  const Var s = random_leaf({3, 6}, rng), a = random_leaf({5, 6}, rng);
  const Tensor logits = level_logits(store, s, a, cfg).value();
  for (double v : logits.values()) EXPECT_EQ(v, 0.0);
  const Classification c = classify(logits);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(c.levels[i], 1);
    for (double p : c.probabilities[i]) EXPECT_DOUBLE_EQ(p, 0.2);
  }
}

TEST(Stage1, ClassifyTieBreaksLowAndIgnoresMonotoneTransforms) {
  const Tensor t = Tensor::matrix(2, 5, {0, 3, 3, 1, 3, -1, -1, -2, -5, -1});
  const Classification c = classify(t);
  EXPECT_EQ(c.levels, (std::vector<int>{2, 1}));
  std::mt19937_64 rng(16);
  for (int trial = 0; trial < 100; ++trial) {
    Tensor x = random_tensor({1, 5}, rng, -4, 4);
    const int level = classify(x).levels[0];
    for (double& v : x.values()) v = std::exp(0.5 * v) * 3.0 + 2.0;
    EXPECT_EQ(classify(x).levels[0], level);
  }
}

TEST(Stage1, BoundaryLossValues) {
  const std::array<double, 5> uniform{0.2, 0.2, 0.2, 0.2, 0.2};
  for (int l = 1; l <= 5; ++l) {
    EXPECT_NEAR(boundary_loss(uniform, l), -std::log(0.2) - 4 * std::log(0.8), 1e-14);
    EXPECT_NEAR(boundary_loss(uniform, l, true), -std::log(0.2), 1e-14);
  }
  const double eps = 1e-9;
  std::array<double, 5> onehot{};
  onehot[2] = 1.0;
  EXPECT_LE(boundary_loss(onehot, 3, false, eps), 5 * 2 * eps);
  // logits path agrees with the probability path
  const Tensor zero({2, 5}, 0.0);
  const std::vector<int> levels{1, 4};
  EXPECT_NEAR(boundary_loss(Var(zero), levels).value()[0], -std::log(0.2) - 4 * std::log(0.8), 1e-14);
}

TEST(Stage1, LearnsOrthogonalClusters) {
  net::ParamStore store(17);
  std::mt19937_64 rng(18);
  StageConfig cfg;
  cfg.hidden = 16;
  Tensor anchors({5, 5}, 0.0), samples({25, 5}, 0.0);
  std::vector<int> levels;
  std::normal_distribution<double> noise(0.0, 0.05);
  for (std::size_t j = 0; j < 5; ++j) {
    anchors.at(j, j) = 1.0;
    for (std::size_t k = 0; k < 5; ++k) {
      const std::size_t r = j * 5 + k;
      for (std::size_t c = 0; c < 5; ++c) samples.at(r, c) = (c == j ? 1.0 : 0.0) + noise(rng);
      levels.push_back(static_cast<int>(j) + 1);
    }
  }
  const Var a(anchors), s(samples);
  for (int step = 0; step < 400; ++step) {
    net::backward(boundary_loss(level_logits(store, s, a, cfg), levels));
    store.adam_step(1e-2, 0.0);
  }
  const Classification c = classify(level_logits(store, s, a, cfg).value());
  EXPECT_EQ(c.levels, levels);

  // Reordering anchors with matching relabelling keeps every prediction.
  const std::vector<std::size_t> perm{3, 0, 4, 1, 2};
  const Classification cp = classify(level_logits(store, s, net::gather_rows(a, perm), cfg).value());
  for (std::size_t i = 0; i < levels.size(); ++i) EXPECT_EQ(static_cast<int>(perm[cp.levels[i] - 1]) + 1, c.levels[i]);
}

TEST(Stage1, PerLevelWeightsVariantTrains) {
  net::ParamStore store(19);
  StageConfig cfg;
  cfg.hidden = 8;
  cfg.per_level_weights = true;
  Tensor anchors({5, 5}, 0.0);
  for (std::size_t j = 0; j < 5; ++j) anchors.at(j, j) = 1.0;
  const std::vector<int> levels{1, 2, 3, 4, 5};
  const Var a(anchors);
  const double before = boundary_loss(level_logits(store, a, a, cfg), levels).value()[0];
  for (int step = 0; step < 100; ++step) {
    net::backward(boundary_loss(level_logits(store, a, a, cfg), levels));
    store.adam_step(1e-2, 0.0);
  }
  EXPECT_LT(boundary_loss(level_logits(store, a, a, cfg), levels).value()[0], before);
  EXPECT_TRUE(store.contains("g.level5.fc2.weight"));
}

// ---------------------------------------------------------------------------
// Stage 2

TEST(Stage2, ZeroHeadAveragesSupportConfidence) {
  net::ParamStore store(20);
  std::mt19937_64 rng(21);
  StageConfig cfg;
  cfg.hidden = 6;
  const std::vector<int> support_levels{1, 2, 2, 3, 4, 5};
  const std::vector<double> support_conf{0.3, -0.2, 0.2, 0.1, -0.4, 0.05};
  const std::vector<int> assigned{2, 1, 4};
  const Tensor c = confidence(store, random_leaf({3, 4}, rng), assigned, random_leaf({6, 4}, rng), support_levels,
                              support_conf, cfg)
                       .value();
  EXPECT_NEAR(c[0], 0.0, 1e-15);
  EXPECT_NEAR(c[1], 0.3, 1e-15);
  EXPECT_NEAR(c[2], -0.4, 1e-15);
}

TEST(Stage2, MatchesPerPairEvaluation) {
  std::mt19937_64 rng(22);
  for (int trial = 0; trial < 20; ++trial) {
    net::ParamStore store(trial);
    StageConfig cfg;
    cfg.hidden = 5;
    cfg.delta = 2.0;
    const std::size_t d = 4;
    const std::vector<int> support_levels{3, 3, 3, 3, 3, 3};
    std::vector<double> support_conf(6);
    for (double& v : support_conf) v = std::uniform_real_distribution<double>(-0.3, 0.3)(rng);
    const Tensor x = random_tensor({2, d}, rng), s = random_tensor({6, d}, rng);
    const std::vector<int> assigned{3, 3};
    (void)confidence(store, Var(x), assigned, Var(s), support_levels, support_conf, cfg);
    randomize_params(store, rng, 0.3);
    const Tensor got = confidence(store, Var(x), assigned, Var(s), support_levels, support_conf, cfg).value();

    const Tensor& w1 = store.at("h.fc1.weight").value();
    const Tensor& b1 = store.at("h.fc1.bias").value();
    const Tensor& w2 = store.at("h.fc2.weight").value();
    const Tensor& b2 = store.at("h.fc2.bias").value();
    for (std::size_t i = 0; i < 2; ++i) {
      double acc = 0;
      for (std::size_t k = 0; k < 6; ++k) {
        double out = b2[0];
        for (std::size_t h = 0; h < cfg.hidden; ++h) {
          double z = b1[h];
          for (std::size_t c = 0; c < d; ++c) z += x.at(i, c) * w1.at(c, h) + s.at(k, c) * w1.at(d + c, h);
          out += std::max(z, 0.0) * w2.at(h, 0);
        }
        acc += support_conf[k] + 1.0 / (1.0 + std::exp(-out)) - 0.5;
      }
      const double expect = std::clamp(acc / 6.0, -0.5 * cfg.delta, 0.5 * cfg.delta);
      EXPECT_NEAR(got[i], expect, 1e-12);
    }
  }
}

TEST(Stage2, AlwaysWithinHalfDelta) {
  std::mt19937_64 rng(23);
  for (double delta : {0.5, 1.0, 2.0}) {
    net::ParamStore store(static_cast<std::uint64_t>(delta * 10));
    StageConfig cfg;
    cfg.hidden = 4;
    cfg.delta = delta;
    const std::vector<int> support_levels{1, 2, 3, 4, 5};
    const std::vector<double> support_conf{0.5 * delta, 0.5 * delta, -0.5 * delta, 0.5 * delta, -0.5 * delta};
    const std::vector<int> assigned{1, 2, 3, 4, 5};
    for (int trial = 0; trial < 20; ++trial) {
      const Var x = random_leaf({5, 3}, rng, -5, 5), s = random_leaf({5, 3}, rng, -5, 5);
      (void)confidence(store, x, assigned, s, support_levels, support_conf, cfg);
      randomize_params(store, rng, 3.0);
      const Tensor c = confidence(store, x, assigned, s, support_levels, support_conf, cfg).value();
      for (double v : c.values()) {
        EXPECT_GE(v, -0.5 * delta);
        EXPECT_LE(v, 0.5 * delta);
      }
    }
  }
}

TEST(Stage2, MissingSupportLevelIsAnError) {
  net::ParamStore store(1);
  StageConfig cfg;
  const std::vector<int> support_levels{1, 2};
  const std::vector<double> support_conf{0, 0};
  const std::vector<int> assigned{3};
  EXPECT_THROW((void)confidence(store, Var(Tensor({1, 2})), assigned, Var(Tensor({2, 2})), support_levels,
                                support_conf, cfg),
               ValidationError);
}

TEST(Combine, Examples) {
  EXPECT_DOUBLE_EQ(combine(3, 0.0, 1.0).score, 3.0);
  EXPECT_DOUBLE_EQ(combine(5, 0.5, 1.0).score, 5.5);
  EXPECT_DOUBLE_EQ(combine(2, -0.3, 2.0).score, 1.85);
  EXPECT_EQ(combine(4, 0.1, 1.0).description(), "The distortion is perceptible but not annoying");
  EXPECT_THROW((void)combine(0, 0.0, 1.0), ValidationError);
}

TEST(Combine, InvertsTheQualityDecomposition) {
  std::mt19937_64 rng(24);
  for (double delta : {0.5, 1.0, 2.0}) {
    for (int i = 0; i < 2000; ++i) {
      const double mos = std::uniform_real_distribution<double>(0.0, 10.0)(rng);
      const QualityLabel q = normalize_score(mos, 0.0, 10.0, delta);
      EXPECT_NEAR(combine(q.level, q.confidence, delta).score, q.q, 1e-12);
    }
  }
}

TEST(Descriptions, AllFiveLevels) {
  EXPECT_EQ(level_description(5), "The distortion is almost imperceptible");
  EXPECT_EQ(level_description(4), "The distortion is perceptible but not annoying");
  EXPECT_EQ(level_description(3), "The distortion is slightly annoying");
  EXPECT_EQ(level_description(2), "The distortion is annoying");
  EXPECT_EQ(level_description(1), "The distortion is seriously annoying");
  EXPECT_THROW((void)level_description(6), ValidationError);
}

}  // namespace
