#include "d3pcqa/config.hpp"

#include <charconv>
#include <fstream>
#include <sstream>
#include <variant>

#include "d3pcqa/errors.hpp"

namespace d3pcqa {

namespace {

static_assert(std::is_same_v<std::size_t, std::uint64_t>, "seed is stored through a size_t member pointer");

using Member = std::variant<std::size_t RunConfig::*, int RunConfig::*, double RunConfig::*,
                            bool RunConfig::*, std::string RunConfig::*>;

struct Field {
  const char* key;
  Member member;
};

const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      {"d", &RunConfig::d},
      {"d_m", &RunConfig::d_m},
      {"backbone", &RunConfig::backbone},
      {"image_size", &RunConfig::image_size},
      {"layers", &RunConfig::layers},
      {"heads", &RunConfig::heads},
      {"scale_by_model_dim", &RunConfig::scale_by_model_dim},
      {"tau_sim", &RunConfig::tau_sim},
      {"tau_density", &RunConfig::tau_density},
      {"k_blur", &RunConfig::k_blur},
      {"delta", &RunConfig::delta},
      {"epsilon", &RunConfig::epsilon},
      {"lambda_dis", &RunConfig::lambda_dis},
      {"lambda_cls", &RunConfig::lambda_cls},
      {"lambda_reg", &RunConfig::lambda_reg},
      {"categorical_ce", &RunConfig::categorical_ce},
      {"per_level_weights", &RunConfig::per_level_weights},
      {"lr", &RunConfig::lr},
      {"weight_decay", &RunConfig::weight_decay},
      {"epochs", &RunConfig::epochs},
      {"steps_per_epoch", &RunConfig::steps_per_epoch},
      {"k_l", &RunConfig::k_l},
      {"k_q", &RunConfig::k_q},
      {"allow_resample", &RunConfig::allow_resample},
      {"folds", &RunConfig::folds},
      {"seed", &RunConfig::seed},
      {"oracle_kernel", &RunConfig::oracle_kernel},
      {"oracle_gamma", &RunConfig::oracle_gamma},
      {"oracle_lambda1", &RunConfig::oracle_lambda1},
      {"oracle_lambda2", &RunConfig::oracle_lambda2},
      {"oracle_iterations", &RunConfig::oracle_iterations},
  };
  return table;
}

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename T>
T parse_number(std::string_view key, std::string_view text) {
  T v{};
  const auto* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, v);
  if (ec != std::errc() || ptr != end) {
    throw ConfigError("config: cannot parse '" + std::string(text) + "' for key '" + std::string(key) + "'");
  }
  return v;
}

bool parse_bool(std::string_view key, std::string_view text) {
  if (text == "true" || text == "1" || text == "yes") return true;
  if (text == "false" || text == "0" || text == "no") return false;
  throw ConfigError("config: expected true/false for key '" + std::string(key) + "', got '" + std::string(text) + "'");
}

std::string format_double(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

}  // namespace

void RunConfig::validate() const {
  auto require = [](bool ok, const std::string& msg) {
    if (!ok) throw ConfigError("config: " + msg);
  };
  require(d > 0 && d_m > 0, "d and d_m must be positive");
  require(image_size >= 8, "image_size must be at least 8");
  require(layers > 0, "layers must be positive");
  require(heads > 0 && d % heads == 0, "d must be divisible by heads");
  require(tau_sim > 0.0, "tau_sim must be positive");
  require(tau_density > 0.0, "tau_density must be positive");
  require(k_blur >= 0.0, "k_blur must be non-negative");
  require(delta > 0.0, "delta must be positive");
  require(epsilon > 0.0, "epsilon must be positive");
  require(lambda_dis >= 0.0 && lambda_cls >= 0.0 && lambda_reg >= 0.0, "loss weights must be non-negative");
  require(lr >= 0.0 && weight_decay >= 0.0, "lr and weight_decay must be non-negative");
  require(k_l >= 2, "k_l must be at least 2");
  require(k_q >= 3, "k_q must be at least 3");
  require(folds >= 2, "folds must be at least 2");
  require(oracle_lambda1 >= 0.0 && oracle_lambda2 > 0.0, "oracle_lambda1 >= 0 and oracle_lambda2 > 0 required");
  require(oracle_iterations >= 1, "oracle_iterations must be positive");
  make_backbone(backbone);
  kernel::kernel_from_string(oracle_kernel);
}

ProjectionConfig RunConfig::projection() const {
  return {static_cast<int>(image_size), tau_density, k_blur};
}

FeatureConfig RunConfig::features() const { return {image_size, d, d_m, backbone}; }

LatentConfig RunConfig::latent() const { return {layers, d_m, {heads, scale_by_model_dim}}; }

StageConfig RunConfig::stages() const { return {d_m, delta, categorical_ce, per_level_weights}; }

kernel::KernelConfig RunConfig::oracle() const {
  return {kernel::kernel_from_string(oracle_kernel), oracle_gamma, oracle_lambda1, oracle_lambda2,
          oracle_iterations, delta};
}

std::vector<std::string> config_keys() {
  std::vector<std::string> keys;
  for (const auto& f : fields()) keys.emplace_back(f.key);
  return keys;
}

void set_config_value(RunConfig& cfg, std::string_view key, std::string_view value) {
  value = trim(value);
  for (const auto& f : fields()) {
    if (key != f.key) continue;
    std::visit(
        [&](auto member) {
          using T = std::remove_reference_t<decltype(cfg.*member)>;
          if constexpr (std::is_same_v<T, bool>) {
            cfg.*member = parse_bool(key, value);
          } else if constexpr (std::is_same_v<T, std::string>) {
            cfg.*member = std::string(value);
          } else {
            cfg.*member = parse_number<T>(key, value);
          }
        },
        f.member);
    return;
  }
  throw ConfigError("config: unknown key '" + std::string(key) + "'");
}

RunConfig parse_config(std::string_view text, RunConfig base) {
  std::size_t line_no = 0;
  while (!text.empty()) {
    const auto nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw ParseError("config line " + std::to_string(line_no) + ": expected 'key = value'");
    }
    try {
      set_config_value(base, trim(line.substr(0, eq)), line.substr(eq + 1));
    } catch (const ConfigError& e) {
      throw ConfigError("config line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return base;
}

RunConfig load_config(const std::filesystem::path& path, RunConfig base) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_config(buf.str(), std::move(base));
}

void apply_overrides(RunConfig& cfg, const std::vector<std::string>& overrides) {
  for (const auto& o : overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos) throw ConfigError("override '" + o + "' is not key=value");
    set_config_value(cfg, trim(std::string_view(o).substr(0, eq)), std::string_view(o).substr(eq + 1));
  }
}

std::string format_config(const RunConfig& cfg) {
  std::ostringstream os;
  for (const auto& f : fields()) {
    os << f.key << " = ";
    std::visit(
        [&](auto member) {
          using T = std::remove_cvref_t<decltype(cfg.*member)>;
          if constexpr (std::is_same_v<T, bool>) {
            os << (cfg.*member ? "true" : "false");
          } else if constexpr (std::is_same_v<T, double>) {
            os << format_double(cfg.*member);
          } else {
            os << cfg.*member;
          }
        },
        f.member);
    os << '\n';
  }
  return os.str();
}

void write_config_snapshot(const RunConfig& cfg, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write config snapshot " + path.string());
  out << "# resolved configuration\n" << format_config(cfg);
}

}  // namespace d3pcqa
