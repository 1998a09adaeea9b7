#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "d3pcqa/features.hpp"
#include "d3pcqa/kernel_oracle.hpp"
#include "d3pcqa/latent.hpp"
#include "d3pcqa/projection.hpp"
#include "d3pcqa/stages.hpp"

namespace d3pcqa {

/// Every tunable of a run. Keys in the config file match the field names.
struct RunConfig {
  // features
  std::size_t d = 64;
  std::size_t d_m = 64;
  std::string backbone = "conv4";
  std::size_t image_size = 64;
  // disentangler
  std::size_t layers = 3;
  std::size_t heads = 8;
  bool scale_by_model_dim = true;
  double tau_sim = 0.1;
  // projection
  double tau_density = 1.0;
  double k_blur = 4.0;
  // scores and losses
  double delta = 1.0;
  double epsilon = 1e-2;
  double lambda_dis = 1.0;
  double lambda_cls = 1.0;
  double lambda_reg = 1.0;
  bool categorical_ce = false;
  bool per_level_weights = false;
  // optimisation
  double lr = 1e-3;
  double weight_decay = 1e-4;
  std::size_t epochs = 50;
  std::size_t steps_per_epoch = 0;  // 0: enough episodes to cover the training split once
  std::size_t k_l = 6;
  std::size_t k_q = 15;
  bool allow_resample = false;
  // evaluation
  std::size_t folds = 5;
  std::uint64_t seed = 7;
  // kernel oracle
  std::string oracle_kernel = "linear";
  double oracle_gamma = 0.0;
  double oracle_lambda1 = 0.1;
  double oracle_lambda2 = 0.1;
  int oracle_iterations = 10;

  /// Throws ConfigError on values outside their domain.
  void validate() const;

  [[nodiscard]] ProjectionConfig projection() const;
  [[nodiscard]] FeatureConfig features() const;
  [[nodiscard]] LatentConfig latent() const;
  [[nodiscard]] StageConfig stages() const;
  [[nodiscard]] kernel::KernelConfig oracle() const;
};

/// Names of all keys, in declaration order.
std::vector<std::string> config_keys();

/// Sets one key from its text form. Throws ConfigError for unknown keys or
/// unparsable values.
void set_config_value(RunConfig& cfg, std::string_view key, std::string_view value);

/// Reads `key = value` lines; `#` starts a comment, blank lines are ignored.
RunConfig parse_config(std::string_view text, RunConfig base = {});
RunConfig load_config(const std::filesystem::path& path, RunConfig base = {});

/// Applies `key=value` overrides in order.
void apply_overrides(RunConfig& cfg, const std::vector<std::string>& overrides);

/// Full resolved config in the file format, one key per line.
std::string format_config(const RunConfig& cfg);
void write_config_snapshot(const RunConfig& cfg, const std::filesystem::path& path);

}  // namespace d3pcqa
