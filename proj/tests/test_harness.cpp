#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include "d3pcqa/errors.hpp"
#include "d3pcqa/harness.hpp"
#include "d3pcqa/latent.hpp"

using namespace d3pcqa;

namespace {

RunConfig small_config() {
  RunConfig cfg;
  cfg.image_size = 16;
  cfg.d = 16;
  cfg.d_m = 16;
  cfg.heads = 4;
  cfg.layers = 1;
  return cfg;
}

// Eight contents, 120 samples, rendered once per process.
const Dataset& eight_contents() {
  static const Dataset data = [] {
    SynthConfig sc = SynthConfig::defaults();
    sc.points_per_shape = 3000;
    const SynthDataset ds = synth_dataset(sc);
    return prepare_dataset(ds.clouds, ds.manifest, small_config());
  }();
  return data;
}

std::vector<std::size_t> all_indices(const Dataset& data) {
  std::vector<std::size_t> idx(data.samples.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  return idx;
}

std::vector<std::size_t> first_contents(const Dataset& data, std::size_t n) {
  const auto ids = data.content_ids();
  return data.indices_of(std::vector<std::string>(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(n)));
}

}  // namespace

TEST(Episode, DefaultSizesGiveFortyFiveSamples) {
  const Dataset& data = eight_contents();
  const RunConfig cfg = small_config();
  const auto train = all_indices(data);
  const SplitPlan plan = split_support_query(data, train, cfg.seed);
  EXPECT_EQ(plan.support_contents.size(), 4u);
  EXPECT_EQ(plan.query_contents.size(), 4u);

  const EpisodeBatch b = build_episode(data, plan, cfg, cfg.seed, 0);
  EXPECT_EQ(b.support.size(), 30u);
  EXPECT_EQ(b.query.size(), 15u);
  EXPECT_EQ(b.support.size() + b.query.size(), 45u);
  EXPECT_FALSE(b.resampled);

  const std::set<std::string> sup(plan.support_contents.begin(), plan.support_contents.end());
  const std::set<std::string> qry(plan.query_contents.begin(), plan.query_contents.end());
  for (std::size_t r = 0; r < b.support.size(); ++r) {
    EXPECT_TRUE(sup.count(data.samples[b.support[r]].content_id));
    EXPECT_EQ(data.samples[b.support[r]].label.level, static_cast<int>(r / cfg.k_l) + 1);
  }
  for (std::size_t i : b.query) EXPECT_TRUE(qry.count(data.samples[i].content_id));
}

TEST(Episode, DeterministicInSeedAndStep) {
  const Dataset& data = eight_contents();
  const RunConfig cfg = small_config();
  const SplitPlan plan = split_support_query(data, all_indices(data), 11);
  const EpisodeBatch a = build_episode(data, plan, cfg, 11, 5);
  const EpisodeBatch b = build_episode(data, plan, cfg, 11, 5);
  EXPECT_EQ(a.support, b.support);
  EXPECT_EQ(a.query, b.query);
  const EpisodeBatch c = build_episode(data, plan, cfg, 11, 6);
  EXPECT_TRUE(a.support != c.support || a.query != c.query);
}

TEST(Episode, PurityAndDisjointnessOverManySteps) {
  const Dataset& data = eight_contents();
  const RunConfig cfg = small_config();
  const SplitPlan plan = split_support_query(data, all_indices(data), 3);
  for (std::uint64_t step = 0; step < 50; ++step) {
    const EpisodeBatch b = build_episode(data, plan, cfg, 3, step);
    EXPECT_NO_THROW(check_episode(data, b, cfg));
    std::set<std::size_t> sup(b.support.begin(), b.support.end());
    EXPECT_EQ(sup.size(), b.support.size());
    for (std::size_t i : b.query) EXPECT_FALSE(sup.count(i));
  }
}

TEST(Episode, CheckRejectsTamperedBatches) {
  const Dataset& data = eight_contents();
  const RunConfig cfg = small_config();
  const SplitPlan plan = split_support_query(data, all_indices(data), 3);
  const EpisodeBatch good = build_episode(data, plan, cfg, 3, 0);

  EpisodeBatch overlap = good;
  overlap.query[0] = overlap.support[0];
  EXPECT_THROW(check_episode(data, overlap, cfg), ValidationError);

  EpisodeBatch impure = good;
  std::swap(impure.support[0], impure.support[cfg.k_l]);
  EXPECT_THROW(check_episode(data, impure, cfg), ValidationError);
}

TEST(Episode, ShortLevelIsAnErrorNamingLevelAndCount) {
  const Dataset& data = eight_contents();
  RunConfig cfg = small_config();
  cfg.k_l = 13;  // four support contents carry 12 samples per level
  const SplitPlan plan = split_support_query(data, all_indices(data), cfg.seed);
  try {
    (void)build_episode(data, plan, cfg, cfg.seed, 0);
    FAIL() << "expected ValidationError";
  } catch (const ValidationError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("level 1"), std::string::npos) << msg;
    EXPECT_NE(msg.find("12"), std::string::npos) << msg;
  }
  cfg.allow_resample = true;
  const EpisodeBatch b = build_episode(data, plan, cfg, cfg.seed, 0);
  EXPECT_TRUE(b.resampled);
  EXPECT_EQ(b.support.size(), 5u * 13u);
}

TEST(Episode, SplitNeedsTwoContents) {
  const Dataset& data = eight_contents();
  EXPECT_THROW((void)split_support_query(data, first_contents(data, 1), 1), ValidationError);
}

TEST(TrainStep, ZeroWeightsLeaveParametersUnchanged) {
  const Dataset& data = eight_contents();
  RunConfig cfg = small_config();
  cfg.lambda_dis = cfg.lambda_cls = cfg.lambda_reg = 0.0;
  cfg.weight_decay = 0.0;
  Model model(cfg);
  const SplitPlan plan = split_support_query(data, all_indices(data), cfg.seed);
  const EpisodeBatch b = build_episode(data, plan, cfg, cfg.seed, 0);
  (void)model.forward(data, b);  // materialise every parameter
  std::map<std::string, net::Tensor> before;
  for (const auto& name : model.params().names()) before[name] = model.params().at(name).value();

  const LossBreakdown l = model.train_step(data, b);
  EXPECT_EQ(l.total, 0.0);
  EXPECT_GT(l.dis, 0.0);  // still reported
  for (const auto& name : model.params().names()) EXPECT_EQ(model.params().at(name).value(), before.at(name)) << name;
}

TEST(TrainStep, ReportedLossesMatchStandaloneEvaluation) {
  const Dataset& data = eight_contents();
  const RunConfig cfg = small_config();
  const SplitPlan plan = split_support_query(data, all_indices(data), cfg.seed);
  const EpisodeBatch b = build_episode(data, plan, cfg, cfg.seed, 2);

  Model model(cfg);
  const EpisodeForward f = model.forward(data, b);

  std::vector<double> sq, qq;
  std::vector<int> ql;
  for (std::size_t i : b.support) sq.push_back(data.samples[i].label.q);
  for (std::size_t i : b.query) {
    qq.push_back(data.samples[i].label.q);
    ql.push_back(data.samples[i].label.level);
  }
  const double dis =
      distribution_loss(net::constant(f.support_latent.value()), b.support_levels, sq, f.partners, cfg.tau_sim)
          .loss.value()[0];
  const double cls = boundary_loss(net::constant(f.logits.value()), ql).value()[0];
  const double reg =
      quality_regularizer(net::constant(f.prediction.value()), net::constant(net::Tensor({qq.size()}, qq)),
                          cfg.epsilon)
          .value()[0];
  EXPECT_NEAR(f.losses.dis, dis, 1e-12);
  EXPECT_NEAR(f.losses.cls, cls, 1e-12);
  EXPECT_NEAR(f.losses.reg, reg, 1e-12);
  EXPECT_NE(f.losses.dis, 0.0);
  EXPECT_NEAR(f.losses.total, dis + cls + reg, 1e-12);

  // train_step reports the pre-update values of the same forward pass.
  Model twin(cfg);
  const LossBreakdown l = twin.train_step(data, b);
  EXPECT_EQ(l.dis, f.losses.dis);
  EXPECT_EQ(l.cls, f.losses.cls);
  EXPECT_EQ(l.reg, f.losses.reg);
}

TEST(TrainStep, LossWeightsScaleTheTotal) {
  const Dataset& data = eight_contents();
  RunConfig cfg = small_config();
  cfg.lambda_dis = 0.5;
  cfg.lambda_cls = 2.0;
  cfg.lambda_reg = 0.25;
  const SplitPlan plan = split_support_query(data, all_indices(data), cfg.seed);
  Model model(cfg);
  const EpisodeForward f = model.forward(data, build_episode(data, plan, cfg, cfg.seed, 0));
  EXPECT_NEAR(f.losses.total, 0.5 * f.losses.dis + 2.0 * f.losses.cls + 0.25 * f.losses.reg, 1e-12);
}

TEST(TrainStep, TwoHundredStepsOnTwoContentsReduceTheLoss) {
  const Dataset& data = eight_contents();
  RunConfig cfg = small_config();
  cfg.k_l = 3;  // one support content holds three samples per level
  const auto train = first_contents(data, 2);
  const SplitPlan plan = split_support_query(data, train, cfg.seed);
  Model model(cfg);
  const EpisodeBatch first = build_episode(data, plan, cfg, cfg.seed, 0);
  const double initial = model.forward(data, first).losses.total;
  std::vector<double> totals;
  for (std::uint64_t s = 0; s < 200; ++s) {
    totals.push_back(model.train_step(data, build_episode(data, plan, cfg, cfg.seed, s)).total);
    ASSERT_TRUE(std::isfinite(totals.back()));
  }
  EXPECT_EQ(totals.front(), initial);
  EXPECT_LT(model.forward(data, first).losses.total, initial);
  EXPECT_LT(totals.back(), totals.front());
}

TEST(Train, ScoresAreFiniteAndInRangeAfterCheckpointRoundTrip) {
  const Dataset& data = eight_contents();
  RunConfig cfg = small_config();
  cfg.epochs = 2;
  const auto train_idx = all_indices(data);
  const TrainResult r = train(data, train_idx, cfg);
  EXPECT_EQ(r.history.size(), 2 * steps_per_epoch(cfg, train_idx.size()));
  ASSERT_FALSE(r.model.bank().empty());

  std::vector<const net::Tensor*> views;
  for (std::size_t i = 0; i < 20; ++i) views.push_back(&data.samples[i].views);
  Model a = r.model;
  Model b = Model::from_checkpoint(decode_checkpoint(encode_checkpoint(a.to_checkpoint())));
  const auto sa = a.score(views);
  const auto sb = b.score(views);
  ASSERT_EQ(sa.size(), views.size());
  for (std::size_t i = 0; i < sa.size(); ++i) {
    EXPECT_TRUE(std::isfinite(sa[i].score));
    EXPECT_GE(sa[i].score, 0.5);
    EXPECT_LE(sa[i].score, 5.5);
    EXPECT_EQ(sa[i].score, sb[i].score);
    EXPECT_EQ(sa[i].level, sb[i].level);
  }
}

TEST(Train, IdenticalRunsGiveIdenticalCheckpoints) {
  const Dataset& data = eight_contents();
  RunConfig cfg = small_config();
  cfg.epochs = 1;
  const auto idx = first_contents(data, 4);
  const std::string a = encode_checkpoint(train(data, idx, cfg).model.to_checkpoint());
  const std::string b = encode_checkpoint(train(data, idx, cfg).model.to_checkpoint());
  EXPECT_EQ(a, b);
  cfg.seed += 1;
  EXPECT_NE(encode_checkpoint(train(data, idx, cfg).model.to_checkpoint()), a);
}

TEST(Score, WithoutRegressionLossConfidenceIsZero) {
  const Dataset& data = eight_contents();
  RunConfig cfg = small_config();
  cfg.lambda_reg = 0.0;
  cfg.epochs = 1;
  TrainResult r = train(data, first_contents(data, 4), cfg);
  std::vector<const net::Tensor*> views{&data.samples[0].views, &data.samples[50].views};
  for (const auto& s : r.model.score(views)) {
    EXPECT_EQ(s.confidence, 0.0);
    EXPECT_EQ(s.score, static_cast<double>(s.level));
  }
}

TEST(Score, EmptyBankIsAnError) {
  Model m(small_config());
  std::vector<const net::Tensor*> views{&eight_contents().samples[0].views};
  EXPECT_THROW((void)m.score(views), ValidationError);
}

TEST(Folds, TenContentsFiveFoldsPartition) {
  std::vector<std::string> contents;
  for (int i = 0; i < 10; ++i) contents.push_back("c" + std::to_string(i));
  const auto folds = content_folds(contents, 5, 42);
  ASSERT_EQ(folds.size(), 5u);
  std::map<std::string, int> seen;
  for (const auto& f : folds) {
    EXPECT_EQ(f.size(), 2u);
    for (const auto& c : f) ++seen[c];
  }
  EXPECT_EQ(seen.size(), 10u);
  for (const auto& [c, n] : seen) EXPECT_EQ(n, 1) << c;
  EXPECT_EQ(content_folds(contents, 5, 42), folds);
}

TEST(Folds, TooFewContentsIsAnError) {
  EXPECT_THROW((void)content_folds({"a", "b"}, 3, 1), ValidationError);
  EXPECT_THROW((void)content_folds({"a", "b"}, 1, 1), ValidationError);
}

TEST(Crossval, DeterministicAndContentDisjoint) {
  const Dataset& data = eight_contents();
  RunConfig cfg = small_config();
  cfg.folds = 4;
  cfg.epochs = 1;
  const CrossvalReport a = crossval(data, cfg);
  const CrossvalReport b = crossval(data, cfg);
  ASSERT_EQ(a.folds.size(), 4u);
  std::set<std::string> tested;
  std::size_t n = 0;
  for (std::size_t k = 0; k < a.folds.size(); ++k) {
    for (const auto& c : a.folds[k].test_contents) EXPECT_TRUE(tested.insert(c).second) << c;
    n += a.folds[k].ids.size();
    EXPECT_EQ(a.folds[k].scores, b.folds[k].scores);
    EXPECT_EQ(a.folds[k].test_contents, b.folds[k].test_contents);
  }
  EXPECT_EQ(tested.size(), 8u);
  EXPECT_EQ(n, data.samples.size());
  EXPECT_EQ(a.to_json().dump(), b.to_json().dump());
  const auto j = a.to_json();
  for (const char* key : {"plcc", "srocc", "krocc", "rmse"}) EXPECT_TRUE(j["mean"].contains(key)) << key;
}

TEST(Evaluate, IdenticalColumnsArePerfect) {
  const std::vector<double> v{1.0, 2.5, 3.0, 7.0, 9.5, 4.0};
  const FoldReport r = evaluate_predictions(v, v);
  EXPECT_NEAR(r.metrics.plcc, 1.0, 1e-9);
  EXPECT_NEAR(r.metrics.srocc, 1.0, 1e-12);
  EXPECT_NEAR(r.metrics.rmse, 0.0, 1e-6);
}

TEST(Evaluate, ConstantPredictionsSkipTheMapping) {
  const FoldReport r = evaluate_predictions({2.0, 2.0, 2.0, 2.0, 2.0}, {1.0, 2.0, 3.0, 4.0, 5.0});
  EXPECT_FALSE(r.mapping_applied);
  EXPECT_EQ(r.mapped, r.scores);
}

TEST(Reports, ScoreCsvCarriesDescriptions) {
  const std::vector<std::string> ids{"a", "b,c"};
  const std::vector<QualityScore> scores{combine(5, 0.2, 1.0), combine(1, -0.3, 1.0)};
  const std::string csv = score_report_csv(ids, scores);
  EXPECT_EQ(csv.rfind("sample_id,level,description,confidence,score,p1,p2,p3,p4,p5\n", 0), 0u);
  EXPECT_NE(csv.find(std::string(level_description(5))), std::string::npos);
  EXPECT_NE(csv.find(std::string(level_description(1))), std::string::npos);
  EXPECT_NE(csv.find("\"b,c\""), std::string::npos);
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 3);
}

TEST(Reports, EmbeddingCsvShape) {
  const net::Tensor e({2, 3}, std::vector<double>{1, 2, 3, 4, 5, 6});
  const std::vector<std::string> ids{"x", "y"};
  const std::vector<int> levels{1, 4};
  const std::string csv = embedding_csv(ids, levels, e);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "sample_id,level,e0,e1,e2");
  EXPECT_THROW((void)embedding_csv(ids, std::vector<int>{1}, e), ValidationError);
}
