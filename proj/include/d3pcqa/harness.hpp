#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "d3pcqa/checkpoint.hpp"
#include "d3pcqa/config.hpp"
#include "d3pcqa/features.hpp"
#include "d3pcqa/ingest.hpp"
#include "d3pcqa/net/params.hpp"
#include "d3pcqa/ranklosses.hpp"
#include "d3pcqa/stages.hpp"

namespace d3pcqa {

using Logger = std::function<void(const std::string&)>;

// ---------------------------------------------------------------------------
// Data

struct Sample {
  std::string id;
  std::string content_id;
  double mos = 0.0;
  QualityLabel label;
  net::Tensor views;  // [6, 4, H, W]
};

struct Dataset {
  std::vector<Sample> samples;
  double scale_min = 0.0;
  double scale_max = 1.0;

  /// Sorted distinct content ids.
  [[nodiscard]] std::vector<std::string> content_ids() const;
  [[nodiscard]] std::vector<std::size_t> indices_of(std::span<const std::string> contents) const;
};

/// Renders every cloud (entry i of the manifest describes cloud i) and
/// attaches normalised labels.
Dataset prepare_dataset(std::span<const PointCloud> clouds, const DatasetManifest& manifest, const RunConfig& cfg);

// ---------------------------------------------------------------------------
// Episodes

/// Training split divided by content into a support side and a query side.
struct SplitPlan {
  std::vector<std::string> support_contents;
  std::vector<std::string> query_contents;
  std::vector<std::size_t> support;
  std::vector<std::size_t> query;
};

/// Shuffles the distinct contents of `train` with `seed` and gives the first
/// half (rounded up) to the support side. Needs at least two contents.
SplitPlan split_support_query(const Dataset& data, std::span<const std::size_t> train, std::uint64_t seed);

struct EpisodeBatch {
  std::vector<std::size_t> support;      // 5 * k_l dataset indices, grouped by level 1..5
  std::vector<int> support_levels;
  std::vector<std::size_t> query;        // k_q dataset indices
  std::uint64_t seed = 0;
  std::uint64_t step = 0;
  bool resampled = false;                // a short level was filled with replacement
};

/// Support: k_l samples per level from the support side; query: k_q samples
/// from the query side. Deterministic in (seed, step). A level with fewer
/// than k_l support samples is an error unless cfg.allow_resample.
EpisodeBatch build_episode(const Dataset& data, const SplitPlan& plan, const RunConfig& cfg, std::uint64_t seed,
                           std::uint64_t step);

/// Throws ValidationError unless support groups are level pure, sized k_l,
/// and support and query are disjoint.
void check_episode(const Dataset& data, const EpisodeBatch& batch, const RunConfig& cfg);

// ---------------------------------------------------------------------------
// Model

struct LossBreakdown {
  double dis = 0.0;
  double cls = 0.0;
  double reg = 0.0;
  double total = 0.0;
  bool reg_skipped = false;  // constant query targets
};

/// Frozen support features used at inference.
struct SupportBank {
  net::Tensor features;  // [m, d] disentangled
  std::vector<int> levels;
  std::vector<double> confidence;
  std::vector<std::string> ids;
  net::Tensor anchors;   // [5, d]
  [[nodiscard]] bool empty() const noexcept { return levels.empty(); }
};

/// Intermediate values of one episode forward pass.
struct EpisodeForward {
  net::Var support_latent;  // [5 k_l, d]
  net::Var query_latent;    // [k_q, d]
  net::Var anchors;         // [5, d]
  net::Var logits;          // [k_q, 5]
  net::Var confidence;      // [k_q]
  net::Var prediction;      // [k_q] level + confidence / delta
  net::Var total;
  std::vector<std::size_t> partners;
  std::vector<int> predicted_levels;
  LossBreakdown losses;
};

class Model {
 public:
  explicit Model(RunConfig cfg);

  [[nodiscard]] const RunConfig& config() const noexcept { return cfg_; }
  [[nodiscard]] net::ParamStore& params() noexcept { return store_; }
  [[nodiscard]] const net::ParamStore& params() const noexcept { return store_; }
  [[nodiscard]] const SupportBank& bank() const noexcept { return bank_; }

  /// Perception features [B, d] of the given view tensors.
  net::Var perception(std::span<const net::Tensor* const> views);

  /// Forward pass over an episode including all three losses.
  EpisodeForward forward(const Dataset& data, const EpisodeBatch& batch);

  /// forward + backward + optimiser step. Throws NumericError on a
  /// non-finite loss.
  LossBreakdown train_step(const Dataset& data, const EpisodeBatch& batch);

  /// Disentangles the given support samples with the current weights in
  /// level-pure groups of k_l and freezes them with their anchors.
  void build_bank(const Dataset& data, std::span<const std::size_t> support);

  /// Scores view tensors against the bank. When the regression loss is
  /// disabled (lambda_reg == 0) the confidence is zero.
  std::vector<QualityScore> score(std::span<const net::Tensor* const> views);

  /// Disentangled query-path features [B, d] (for embedding dumps).
  net::Tensor embed(std::span<const net::Tensor* const> views);

  [[nodiscard]] CheckpointData to_checkpoint() const;
  static Model from_checkpoint(const CheckpointData& ckpt);

 private:
  RunConfig cfg_;
  net::ParamStore store_;
  FeatureExtractor extractor_;
  SupportBank bank_;
};

struct TrainResult {
  Model model;
  std::vector<LossBreakdown> history;  // one entry per step
};

std::size_t steps_per_epoch(const RunConfig& cfg, std::size_t train_size);

/// Episodic training on `train` followed by building the support bank.
TrainResult train(const Dataset& data, std::span<const std::size_t> train, const RunConfig& cfg,
                  const Logger& log = {});

// ---------------------------------------------------------------------------
// Evaluation

/// Content ids shuffled with `seed` and dealt round-robin into `folds` sets.
std::vector<std::vector<std::string>> content_folds(std::vector<std::string> contents, std::size_t folds,
                                                    std::uint64_t seed);

struct FoldReport {
  std::size_t fold = 0;
  std::vector<std::string> test_contents;
  std::vector<std::string> ids;
  std::vector<double> scores;  // raw predictions
  std::vector<double> mapped;  // after Logistic-4
  std::vector<double> mos;
  Logistic4Fit fit;
  bool mapping_applied = false;
  Metrics metrics;
};

struct CrossvalReport {
  std::vector<FoldReport> folds;
  Metrics mean;
  [[nodiscard]] nlohmann::json to_json() const;
  [[nodiscard]] std::string to_csv() const;
};

/// Maps predictions onto the MOS scale with Logistic-4 (falls back to the
/// raw predictions when they are constant) and computes the four metrics.
FoldReport evaluate_predictions(std::vector<double> scores, std::vector<double> mos);

/// Content-disjoint k-fold cross-validation.
CrossvalReport crossval(const Dataset& data, const RunConfig& cfg, const Logger& log = {});

nlohmann::json metrics_json(const Metrics& m);

/// CSV rows: sample_id, level, description, confidence, score, p1..p5.
std::string score_report_csv(std::span<const std::string> ids, std::span<const QualityScore> scores);

/// CSV rows: sample_id, level, e0..e{d-1}.
std::string embedding_csv(std::span<const std::string> ids, std::span<const int> levels, const net::Tensor& embeddings);

}  // namespace d3pcqa
