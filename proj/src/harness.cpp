#include "d3pcqa/harness.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include "d3pcqa/errors.hpp"
#include "d3pcqa/latent.hpp"
#include "d3pcqa/projection.hpp"

namespace d3pcqa {

using net::Tensor;
using net::Var;

// ---------------------------------------------------------------------------
// Data

std::vector<std::string> Dataset::content_ids() const {
  std::set<std::string> ids;
  for (const auto& s : samples) ids.insert(s.content_id);
  return {ids.begin(), ids.end()};
}

std::vector<std::size_t> Dataset::indices_of(std::span<const std::string> contents) const {
  const std::set<std::string> wanted(contents.begin(), contents.end());
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (wanted.count(samples[i].content_id)) out.push_back(i);
  }
  return out;
}

Dataset prepare_dataset(std::span<const PointCloud> clouds, const DatasetManifest& manifest, const RunConfig& cfg) {
  manifest.validate();
  if (clouds.size() != manifest.entries.size()) {
    throw ValidationError("prepare_dataset: " + std::to_string(clouds.size()) + " clouds for " +
                          std::to_string(manifest.entries.size()) + " manifest entries");
  }
  const auto projections = render_batch(clouds, cfg.projection());
  Dataset data;
  data.scale_min = manifest.scale_min;
  data.scale_max = manifest.scale_max;
  data.samples.reserve(clouds.size());
  for (std::size_t i = 0; i < clouds.size(); ++i) {
    const auto& e = manifest.entries[i];
    Sample s;
    s.id = clouds[i].id;
    s.content_id = e.content_id;
    s.mos = e.mos;
    s.label = normalize_score(e.mos, manifest.scale_min, manifest.scale_max, cfg.delta);
    s.views = view_tensor(projections[i], cfg.image_size);
    data.samples.push_back(std::move(s));
  }
  return data;
}

// ---------------------------------------------------------------------------
// Episodes

namespace {

std::mt19937_64 episode_rng(std::uint64_t seed, std::uint64_t step, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(step), static_cast<std::uint32_t>(step >> 32),
                    static_cast<std::uint32_t>(stream)};
  return std::mt19937_64(seq);
}

}  // namespace

SplitPlan split_support_query(const Dataset& data, std::span<const std::size_t> train, std::uint64_t seed) {
  std::set<std::string> distinct;
  for (std::size_t i : train) distinct.insert(data.samples.at(i).content_id);
  if (distinct.size() < 2) {
    throw ValidationError("split_support_query: need at least two training contents, got " +
                          std::to_string(distinct.size()));
  }
  std::vector<std::string> contents(distinct.begin(), distinct.end());
  auto rng = episode_rng(seed, 0, 0x5e11);
  std::shuffle(contents.begin(), contents.end(), rng);
  const std::size_t n_support = (contents.size() + 1) / 2;
  SplitPlan plan;
  plan.support_contents.assign(contents.begin(), contents.begin() + static_cast<std::ptrdiff_t>(n_support));
  plan.query_contents.assign(contents.begin() + static_cast<std::ptrdiff_t>(n_support), contents.end());
  std::sort(plan.support_contents.begin(), plan.support_contents.end());
  std::sort(plan.query_contents.begin(), plan.query_contents.end());
  const std::set<std::string> sup(plan.support_contents.begin(), plan.support_contents.end());
  for (std::size_t i : train) {
    (sup.count(data.samples[i].content_id) ? plan.support : plan.query).push_back(i);
  }
  std::sort(plan.support.begin(), plan.support.end());
  std::sort(plan.query.begin(), plan.query.end());
  return plan;
}

EpisodeBatch build_episode(const Dataset& data, const SplitPlan& plan, const RunConfig& cfg, std::uint64_t seed,
                           std::uint64_t step) {
  EpisodeBatch batch;
  batch.seed = seed;
  batch.step = step;
  auto rng = episode_rng(seed, step, 0xe915);

  std::array<std::vector<std::size_t>, kNumLevels> by_level;
  for (std::size_t i : plan.support) by_level[static_cast<std::size_t>(data.samples[i].label.level - 1)].push_back(i);
  for (int j = 0; j < kNumLevels; ++j) {
    auto pool = by_level[static_cast<std::size_t>(j)];
    if (pool.size() < cfg.k_l) {
      if (!cfg.allow_resample || pool.empty()) {
        throw ValidationError("build_episode: level " + std::to_string(j + 1) + " has " + std::to_string(pool.size()) +
                              " support samples, need " + std::to_string(cfg.k_l));
      }
      batch.resampled = true;
      std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
      for (std::size_t k = 0; k < cfg.k_l; ++k) {
        batch.support.push_back(pool[pick(rng)]);
        batch.support_levels.push_back(j + 1);
      }
      continue;
    }
    std::shuffle(pool.begin(), pool.end(), rng);
    for (std::size_t k = 0; k < cfg.k_l; ++k) {
      batch.support.push_back(pool[k]);
      batch.support_levels.push_back(j + 1);
    }
  }

  if (plan.query.size() < cfg.k_q) {
    throw ValidationError("build_episode: query side has " + std::to_string(plan.query.size()) + " samples, need " +
                          std::to_string(cfg.k_q));
  }
  auto pool = plan.query;
  std::shuffle(pool.begin(), pool.end(), rng);
  batch.query.assign(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(cfg.k_q));
  check_episode(data, batch, cfg);
  return batch;
}

void check_episode(const Dataset& data, const EpisodeBatch& batch, const RunConfig& cfg) {
  if (batch.support.size() != static_cast<std::size_t>(kNumLevels) * cfg.k_l ||
      batch.support_levels.size() != batch.support.size() || batch.query.size() != cfg.k_q) {
    throw ValidationError("episode: sizes do not match k_l / k_q");
  }
  for (std::size_t r = 0; r < batch.support.size(); ++r) {
    const int expect = static_cast<int>(r / cfg.k_l) + 1;
    if (batch.support_levels[r] != expect || data.samples.at(batch.support[r]).label.level != expect) {
      throw ValidationError("episode: support group " + std::to_string(expect) + " is not level pure");
    }
  }
  const std::set<std::size_t> sup(batch.support.begin(), batch.support.end());
  std::set<std::string> sup_contents;
  for (std::size_t i : batch.support) sup_contents.insert(data.samples[i].content_id);
  for (std::size_t i : batch.query) {
    if (sup.count(i) || sup_contents.count(data.samples.at(i).content_id)) {
      throw ValidationError("episode: query sample " + data.samples[i].id + " overlaps the support side");
    }
  }
}

// ---------------------------------------------------------------------------
// Model

Model::Model(RunConfig cfg) : cfg_(std::move(cfg)), store_(cfg_.seed), extractor_(cfg_.features()) {
  cfg_.validate();
}

Var Model::perception(std::span<const Tensor* const> views) {
  return extractor_.extract(store_, net::constant(stack_views(views)));
}

EpisodeForward Model::forward(const Dataset& data, const EpisodeBatch& batch) {
  check_episode(data, batch, cfg_);
  const LatentConfig lcfg = cfg_.latent();
  const StageConfig scfg = cfg_.stages();
  const std::size_t ns = batch.support.size(), nq = batch.query.size();

  std::vector<const Tensor*> views;
  for (std::size_t i : batch.support) views.push_back(&data.samples[i].views);
  for (std::size_t i : batch.query) views.push_back(&data.samples[i].views);
  const Var p = perception(views);

  EpisodeForward f;
  std::vector<Var> groups;
  for (std::size_t g = 0; g < static_cast<std::size_t>(kNumLevels); ++g) {
    std::vector<std::size_t> rows(cfg_.k_l);
    std::iota(rows.begin(), rows.end(), g * cfg_.k_l);
    const std::span<const int> lv(batch.support_levels.data() + g * cfg_.k_l, cfg_.k_l);
    groups.push_back(disentangle_group(store_, net::gather_rows(p, rows), lv, lcfg));
  }
  f.support_latent = net::concat_rows(groups);
  std::vector<std::size_t> qrows(nq);
  std::iota(qrows.begin(), qrows.end(), ns);
  f.query_latent = disentangle(store_, net::gather_rows(p, qrows), lcfg, false);

  std::vector<double> support_q, support_conf, query_q;
  std::vector<int> query_levels;
  for (std::size_t i : batch.support) {
    support_q.push_back(data.samples[i].label.q);
    support_conf.push_back(data.samples[i].label.confidence);
  }
  for (std::size_t i : batch.query) {
    query_q.push_back(data.samples[i].label.q);
    query_levels.push_back(data.samples[i].label.level);
  }

  auto rng = episode_rng(batch.seed, batch.step, 0xd15);
  f.partners = sample_positive_partners(batch.support_levels, rng);
  const Var l_dis = distribution_loss(f.support_latent, batch.support_levels, support_q, f.partners, cfg_.tau_sim).loss;

  f.anchors = aggregate_anchors(f.support_latent, batch.support_levels);
  f.logits = level_logits(store_, f.query_latent, f.anchors, scfg);
  const Var l_cls = boundary_loss(f.logits, query_levels, cfg_.categorical_ce);
  f.predicted_levels = classify(f.logits.value()).levels;

  f.confidence = confidence(store_, f.query_latent, f.predicted_levels, f.support_latent, batch.support_levels,
                            support_conf, scfg);
  Tensor level_values({nq}, 0.0);
  for (std::size_t i = 0; i < nq; ++i) level_values[i] = f.predicted_levels[i];
  f.prediction = net::add(net::scale(f.confidence, 1.0 / cfg_.delta), net::constant(level_values));

  Var l_reg;
  const bool constant_target =
      std::all_of(query_q.begin(), query_q.end(), [&](double v) { return v == query_q.front(); });
  if (constant_target) {
    f.losses.reg_skipped = true;
  } else {
    l_reg = quality_regularizer(f.prediction, net::constant(Tensor({nq}, query_q)), cfg_.epsilon);
    f.losses.reg = l_reg.value()[0];
  }
  f.losses.dis = l_dis.value()[0];
  f.losses.cls = l_cls.value()[0];

  std::vector<Var> terms;
  if (cfg_.lambda_dis > 0.0) terms.push_back(net::scale(l_dis, cfg_.lambda_dis));
  if (cfg_.lambda_cls > 0.0) terms.push_back(net::scale(l_cls, cfg_.lambda_cls));
  if (cfg_.lambda_reg > 0.0 && l_reg.defined()) terms.push_back(net::scale(l_reg, cfg_.lambda_reg));
  if (terms.empty()) {
    f.total = net::constant(Tensor::scalar(0.0));
  } else {
    f.total = terms.front();
    for (std::size_t t = 1; t < terms.size(); ++t) f.total = net::add(f.total, terms[t]);
  }
  f.losses.total = f.total.value()[0];
  return f;
}

LossBreakdown Model::train_step(const Dataset& data, const EpisodeBatch& batch) {
  EpisodeForward f = forward(data, batch);
  const LossBreakdown& l = f.losses;
  if (!std::isfinite(l.total) || !std::isfinite(l.dis) || !std::isfinite(l.cls) || !std::isfinite(l.reg)) {
    std::ostringstream os;
    os << "non-finite loss at step " << batch.step << ": dis=" << l.dis << " cls=" << l.cls << " reg=" << l.reg
       << " total=" << l.total << "; query ids:";
    for (std::size_t i : batch.query) os << ' ' << data.samples[i].id;
    throw NumericError(os.str());
  }
  net::backward(f.total);
  store_.adam_step(cfg_.lr, cfg_.weight_decay);
  return l;
}

void Model::build_bank(const Dataset& data, std::span<const std::size_t> support) {
  const LatentConfig lcfg = cfg_.latent();
  SupportBank bank;
  std::vector<double> rows;
  std::size_t d = cfg_.d;
  for (int j = 1; j <= kNumLevels; ++j) {
    std::vector<std::size_t> members;
    for (std::size_t i : support) {
      if (data.samples.at(i).label.level == j) members.push_back(i);
    }
    std::vector<std::vector<std::size_t>> chunks;
    for (std::size_t s = 0; s < members.size(); s += cfg_.k_l) {
      chunks.emplace_back(members.begin() + static_cast<std::ptrdiff_t>(s),
                          members.begin() + static_cast<std::ptrdiff_t>(std::min(members.size(), s + cfg_.k_l)));
    }
    if (chunks.size() >= 2 && chunks.back().size() == 1) {
      chunks[chunks.size() - 2].push_back(chunks.back().front());
      chunks.pop_back();
    }
    for (const auto& chunk : chunks) {
      std::vector<const Tensor*> views;
      for (std::size_t i : chunk) views.push_back(&data.samples[i].views);
      const Var z = disentangle(store_, perception(views), lcfg, true);
      rows.insert(rows.end(), z.value().values().begin(), z.value().values().end());
      for (std::size_t i : chunk) {
        bank.levels.push_back(j);
        bank.confidence.push_back(data.samples[i].label.confidence);
        bank.ids.push_back(data.samples[i].id);
      }
    }
  }
  bank.features = Tensor({bank.levels.size(), d}, std::move(rows));
  bank.anchors = aggregate_anchors(net::constant(bank.features), bank.levels).value();
  bank_ = std::move(bank);
}

std::vector<QualityScore> Model::score(std::span<const Tensor* const> views) {
  if (bank_.empty()) throw ValidationError("score: model has no support bank");
  const StageConfig scfg = cfg_.stages();
  const Var anchors = net::constant(bank_.anchors);
  const Var bank_features = net::constant(bank_.features);
  std::vector<QualityScore> out;
  constexpr std::size_t kChunk = 16;
  for (std::size_t s = 0; s < views.size(); s += kChunk) {
    const auto part = views.subspan(s, std::min(kChunk, views.size() - s));
    const Var z = disentangle(store_, perception(part), cfg_.latent(), false);
    const Classification cls = classify(level_logits(store_, z, anchors, scfg).value());
    std::vector<double> conf(part.size(), 0.0);
    if (cfg_.lambda_reg > 0.0) {
      const Var c = confidence(store_, z, cls.levels, bank_features, bank_.levels, bank_.confidence, scfg);
      conf.assign(c.value().values().begin(), c.value().values().end());
    }
    for (std::size_t i = 0; i < part.size(); ++i) {
      QualityScore q = combine(cls.levels[i], conf[i], cfg_.delta);
      q.probabilities = cls.probabilities[i];
      out.push_back(q);
    }
  }
  return out;
}

Tensor Model::embed(std::span<const Tensor* const> views) {
  std::vector<double> rows;
  constexpr std::size_t kChunk = 16;
  for (std::size_t s = 0; s < views.size(); s += kChunk) {
    const auto part = views.subspan(s, std::min(kChunk, views.size() - s));
    const Var z = disentangle(store_, perception(part), cfg_.latent(), false);
    rows.insert(rows.end(), z.value().values().begin(), z.value().values().end());
  }
  return Tensor({views.size(), cfg_.d}, std::move(rows));
}

CheckpointData Model::to_checkpoint() const {
  CheckpointData ckpt;
  store_.export_to(ckpt);
  ckpt.meta["config"] = format_config(cfg_);
  if (!bank_.empty()) {
    ckpt.tensors["bank/features"] = bank_.features;
    ckpt.tensors["bank/anchors"] = bank_.anchors;
    ckpt.tensors["bank/confidence"] = Tensor({bank_.confidence.size()}, bank_.confidence);
    std::vector<double> lv(bank_.levels.begin(), bank_.levels.end());
    const std::size_t m = lv.size();
    ckpt.tensors["bank/levels"] = Tensor({m}, std::move(lv));
    ckpt.meta["bank_ids"] = bank_.ids;
  }
  return ckpt;
}

Model Model::from_checkpoint(const CheckpointData& ckpt) {
  if (!ckpt.meta.contains("config")) throw CheckpointError("checkpoint has no model config");
  Model m(parse_config(ckpt.meta.at("config").get<std::string>()));
  m.store_ = net::ParamStore::import_from(ckpt);
  if (ckpt.tensors.count("bank/features")) {
    m.bank_.features = ckpt.tensors.at("bank/features");
    m.bank_.anchors = ckpt.tensors.at("bank/anchors");
    const auto& c = ckpt.tensors.at("bank/confidence");
    m.bank_.confidence.assign(c.values().begin(), c.values().end());
    for (double v : ckpt.tensors.at("bank/levels").values()) m.bank_.levels.push_back(static_cast<int>(v));
    m.bank_.ids = ckpt.meta.value("bank_ids", std::vector<std::string>{});
  }
  return m;
}

std::size_t steps_per_epoch(const RunConfig& cfg, std::size_t train_size) {
  if (cfg.steps_per_epoch > 0) return cfg.steps_per_epoch;
  const std::size_t per_episode = static_cast<std::size_t>(kNumLevels) * cfg.k_l + cfg.k_q;
  return std::max<std::size_t>(1, (train_size + per_episode - 1) / per_episode);
}

TrainResult train(const Dataset& data, std::span<const std::size_t> train_idx, const RunConfig& cfg,
                  const Logger& log) {
  TrainResult result{Model(cfg), {}};
  const SplitPlan plan = split_support_query(data, train_idx, cfg.seed);
  const std::size_t per_epoch = steps_per_epoch(cfg, train_idx.size());
  std::uint64_t step = 0;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    LossBreakdown mean;
    for (std::size_t s = 0; s < per_epoch; ++s, ++step) {
      const EpisodeBatch batch = build_episode(data, plan, cfg, cfg.seed, step);
      if (batch.resampled && log) log("step " + std::to_string(step) + ": short level filled with replacement");
      const LossBreakdown l = result.model.train_step(data, batch);
      result.history.push_back(l);
      mean.dis += l.dis / static_cast<double>(per_epoch);
      mean.cls += l.cls / static_cast<double>(per_epoch);
      mean.reg += l.reg / static_cast<double>(per_epoch);
      mean.total += l.total / static_cast<double>(per_epoch);
    }
    if (log) {
      std::ostringstream os;
      os.precision(4);
      os << "epoch " << epoch + 1 << "/" << cfg.epochs << " dis=" << mean.dis << " cls=" << mean.cls
         << " reg=" << mean.reg << " total=" << mean.total;
      log(os.str());
    }
  }
  result.model.build_bank(data, plan.support);
  return result;
}

// ---------------------------------------------------------------------------
// Evaluation

std::vector<std::vector<std::string>> content_folds(std::vector<std::string> contents, std::size_t folds,
                                                    std::uint64_t seed) {
  std::sort(contents.begin(), contents.end());
  contents.erase(std::unique(contents.begin(), contents.end()), contents.end());
  if (folds < 2 || contents.size() < folds) {
    throw ValidationError("content_folds: " + std::to_string(contents.size()) + " contents cannot fill " +
                          std::to_string(folds) + " folds");
  }
  auto rng = episode_rng(seed, 0, 0xf01d);
  std::shuffle(contents.begin(), contents.end(), rng);
  std::vector<std::vector<std::string>> out(folds);
  for (std::size_t i = 0; i < contents.size(); ++i) out[i % folds].push_back(contents[i]);
  for (auto& f : out) std::sort(f.begin(), f.end());
  return out;
}

FoldReport evaluate_predictions(std::vector<double> scores, std::vector<double> mos) {
  FoldReport r;
  r.scores = std::move(scores);
  r.mos = std::move(mos);
  const bool flat = std::all_of(r.scores.begin(), r.scores.end(), [&](double v) { return v == r.scores.front(); });
  if (!flat && r.scores.size() >= 4) {
    r.fit = logistic4_fit(r.scores, r.mos);
    r.mapped = r.fit.mapped;
    r.mapping_applied = true;
  } else {
    r.mapped = r.scores;
  }
  r.metrics = eval_metrics(r.mapped, r.mos);
  return r;
}

CrossvalReport crossval(const Dataset& data, const RunConfig& cfg, const Logger& log) {
  const auto folds = content_folds(data.content_ids(), cfg.folds, cfg.seed);
  CrossvalReport report;
  for (std::size_t k = 0; k < folds.size(); ++k) {
    const auto test = data.indices_of(folds[k]);
    std::vector<std::size_t> train_idx;
    const std::set<std::string> test_contents(folds[k].begin(), folds[k].end());
    for (std::size_t i = 0; i < data.samples.size(); ++i) {
      if (!test_contents.count(data.samples[i].content_id)) train_idx.push_back(i);
    }
    for (std::size_t i : train_idx) {
      if (test_contents.count(data.samples[i].content_id)) {
        throw ValidationError("crossval: content overlap between train and test in fold " + std::to_string(k));
      }
    }
    if (log) log("fold " + std::to_string(k + 1) + "/" + std::to_string(folds.size()) + ": " +
                 std::to_string(train_idx.size()) + " train, " + std::to_string(test.size()) + " test");
    RunConfig fold_cfg = cfg;
    fold_cfg.seed = cfg.seed + 1000003ULL * k;
    TrainResult trained = train(data, train_idx, fold_cfg, log);

    std::vector<const Tensor*> views;
    std::vector<double> mos;
    std::vector<std::string> ids;
    for (std::size_t i : test) {
      views.push_back(&data.samples[i].views);
      mos.push_back(data.samples[i].mos);
      ids.push_back(data.samples[i].id);
    }
    const auto scores = trained.model.score(views);
    std::vector<double> raw;
    for (const auto& s : scores) raw.push_back(s.score);
    FoldReport fr = evaluate_predictions(std::move(raw), std::move(mos));
    fr.fold = k;
    fr.test_contents = folds[k];
    fr.ids = std::move(ids);
    if (log) {
      std::ostringstream os;
      os.precision(4);
      os << "fold " << k + 1 << " plcc=" << fr.metrics.plcc << " srocc=" << fr.metrics.srocc
         << " krocc=" << fr.metrics.krocc << " rmse=" << fr.metrics.rmse;
      log(os.str());
    }
    report.folds.push_back(std::move(fr));
  }
  const double n = static_cast<double>(report.folds.size());
  for (const auto& f : report.folds) {
    report.mean.plcc += f.metrics.plcc / n;
    report.mean.srocc += f.metrics.srocc / n;
    report.mean.krocc += f.metrics.krocc / n;
    report.mean.rmse += f.metrics.rmse / n;
  }
  return report;
}

nlohmann::json metrics_json(const Metrics& m) {
  return {{"plcc", m.plcc}, {"srocc", m.srocc}, {"krocc", m.krocc}, {"rmse", m.rmse}};
}

nlohmann::json CrossvalReport::to_json() const {
  nlohmann::json j;
  j["mean"] = metrics_json(mean);
  j["folds"] = nlohmann::json::array();
  for (const auto& f : folds) {
    j["folds"].push_back({{"fold", f.fold},
                          {"test_contents", f.test_contents},
                          {"n", f.ids.size()},
                          {"logistic4_applied", f.mapping_applied},
                          {"logistic4_beta", f.fit.beta},
                          {"metrics", metrics_json(f.metrics)}});
  }
  return j;
}

std::string CrossvalReport::to_csv() const {
  std::ostringstream os;
  os.precision(10);
  os << "fold,n,plcc,srocc,krocc,rmse\n";
  for (const auto& f : folds) {
    os << f.fold << ',' << f.ids.size() << ',' << f.metrics.plcc << ',' << f.metrics.srocc << ',' << f.metrics.krocc
       << ',' << f.metrics.rmse << '\n';
  }
  os << "mean," << "," << mean.plcc << ',' << mean.srocc << ',' << mean.krocc << ',' << mean.rmse << '\n';
  return os.str();
}

namespace {

std::string csv_field(std::string_view s) {
  if (s.find_first_of(",\"\n") == std::string_view::npos) return std::string(s);
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + '"';
}

}  // namespace

std::string score_report_csv(std::span<const std::string> ids, std::span<const QualityScore> scores) {
  if (ids.size() != scores.size()) throw ValidationError("score_report_csv: ids and scores differ in length");
  std::ostringstream os;
  os.precision(10);
  os << "sample_id,level,description,confidence,score,p1,p2,p3,p4,p5\n";
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const auto& s = scores[i];
    os << csv_field(ids[i]) << ',' << s.level << ',' << csv_field(s.description()) << ',' << s.confidence << ','
       << s.score;
    for (double p : s.probabilities) os << ',' << p;
    os << '\n';
  }
  return os.str();
}

std::string embedding_csv(std::span<const std::string> ids, std::span<const int> levels, const Tensor& embeddings) {
  if (ids.size() != embeddings.rows() || levels.size() != ids.size()) {
    throw ValidationError("embedding_csv: ids, levels and rows differ in count");
  }
  std::ostringstream os;
  os.precision(10);
  os << "sample_id,level";
  for (std::size_t c = 0; c < embeddings.cols(); ++c) os << ",e" << c;
  os << '\n';
  for (std::size_t i = 0; i < ids.size(); ++i) {
    os << csv_field(ids[i]) << ',' << levels[i];
    for (double v : embeddings.row_span(i)) os << ',' << v;
    os << '\n';
  }
  return os.str();
}

}  // namespace d3pcqa
