// Command-line front end: synth, project, train, score, eval, crossval, oracle.

#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "d3pcqa/checkpoint.hpp"
#include "d3pcqa/config.hpp"
#include "d3pcqa/errors.hpp"
#include "d3pcqa/harness.hpp"
#include "d3pcqa/ingest.hpp"
#include "d3pcqa/kernel_oracle.hpp"
#include "d3pcqa/projection.hpp"

namespace fs = std::filesystem;
using namespace d3pcqa;

namespace {

struct DataArgs {
  std::string manifest;
  double scale_min = 0.0;
  double scale_max = 10.0;
};

struct ConfigArgs {
  std::string file;
  std::vector<std::string> overrides;
};

void add_data_options(CLI::App* cmd, DataArgs& a, bool required = true) {
  auto* opt = cmd->add_option("-m,--manifest", a.manifest, "Manifest CSV (path,mos,content_id)");
  if (required) opt->required();
  cmd->add_option("--scale-min", a.scale_min, "Lower end of the MOS scale")->capture_default_str();
  cmd->add_option("--scale-max", a.scale_max, "Upper end of the MOS scale")->capture_default_str();
}

void add_config_options(CLI::App* cmd, ConfigArgs& a) {
  cmd->add_option("-c,--config", a.file, "Config file (key = value lines)")->check(CLI::ExistingFile);
  cmd->add_option("--set", a.overrides, "Override a config key, key=value (repeatable)");
}

RunConfig resolve_config(const ConfigArgs& a) {
  RunConfig cfg = a.file.empty() ? RunConfig{} : load_config(a.file);
  apply_overrides(cfg, a.overrides);
  cfg.validate();
  return cfg;
}

void log_line(const std::string& s) { std::cerr << s << std::endl; }

struct LoadedData {
  DatasetManifest manifest;
  std::vector<PointCloud> clouds;
};

LoadedData load_data(const DataArgs& a) {
  LoadedData d;
  d.manifest = read_manifest(a.manifest, a.scale_min, a.scale_max);
  d.clouds = load_clouds(d.manifest, fs::path(a.manifest).parent_path());
  return d;
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << text;
}

/// Snapshot file placed beside an output file: report.csv -> report.config.txt
fs::path snapshot_beside(const fs::path& output) {
  fs::path p = output;
  p.replace_extension(".config.txt");
  return p;
}

// Minimal CSV reader with quoted fields; first row is the header.
std::vector<std::map<std::string, std::string>> read_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open " + path.string());
  auto split = [](const std::string& line) {
    std::vector<std::string> out(1);
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
      const char c = line[i];
      if (quoted) {
        if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
          out.back() += '"';
          ++i;
        } else if (c == '"') {
          quoted = false;
        } else {
          out.back() += c;
        }
      } else if (c == '"') {
        quoted = true;
      } else if (c == ',') {
        out.emplace_back();
      } else if (c != '\r') {
        out.back() += c;
      }
    }
    return out;
  };
  std::string line;
  if (!std::getline(in, line)) throw ParseError(path.string() + ": empty file");
  const auto header = split(line);
  std::vector<std::map<std::string, std::string>> rows;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    const auto fields = split(line);
    if (fields.size() != header.size()) {
      throw ParseError(path.string() + " line " + std::to_string(line_no) + ": expected " +
                       std::to_string(header.size()) + " fields, got " + std::to_string(fields.size()));
    }
    std::map<std::string, std::string> row;
    for (std::size_t i = 0; i < header.size(); ++i) row[header[i]] = fields[i];
    rows.push_back(std::move(row));
  }
  return rows;
}

double to_double(const std::string& s, const std::string& what) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw ParseError("cannot parse " + what + " value '" + s + "'");
  }
}

std::vector<const net::Tensor*> view_ptrs(const Dataset& data) {
  std::vector<const net::Tensor*> v;
  for (const auto& s : data.samples) v.push_back(&s.views);
  return v;
}

// ---------------------------------------------------------------------------

struct SynthArgs {
  std::string out;
  std::uint64_t seed = 7;
  int shapes = 8;
  int points = 12000;
  bool ascii = false;
};

int run_synth(const SynthArgs& a) {
  SynthConfig cfg = SynthConfig::defaults();
  cfg.seed = a.seed;
  cfg.n_shapes = a.shapes;
  cfg.points_per_shape = a.points;
  const SynthDataset ds = synth_dataset(cfg);
  fs::create_directories(a.out);
  for (const auto& c : ds.clouds) {
    write_ply_file(c, fs::path(a.out) / (c.id + ".ply"),
                   a.ascii ? PlyEncoding::Ascii : PlyEncoding::BinaryLittleEndian);
  }
  write_text(fs::path(a.out) / "manifest.csv", manifest_to_csv(ds.manifest));
  nlohmann::json info{{"samples", ds.clouds.size()},  {"shapes", cfg.n_shapes}, {"points_per_shape", cfg.points_per_shape},
                      {"seed", cfg.seed},             {"scale_min", cfg.scale_min}, {"scale_max", cfg.scale_max}};
  write_text(fs::path(a.out) / "synth.json", info.dump(2) + "\n");
  std::cout << "wrote " << ds.clouds.size() << " clouds to " << a.out << "\n";
  return 0;
}

struct ProjectArgs {
  DataArgs data;
  ConfigArgs config;
  std::vector<std::string> plys;
  std::string out;
};

int run_project(const ProjectArgs& a) {
  const RunConfig cfg = resolve_config(a.config);
  std::vector<PointCloud> clouds;
  if (!a.data.manifest.empty()) clouds = load_data(a.data).clouds;
  for (const auto& p : a.plys) clouds.push_back(read_ply(p));
  if (clouds.empty()) throw ValidationError("project: give --manifest or --ply");
  const auto sets = render_batch(clouds, cfg.projection());
  for (std::size_t i = 0; i < clouds.size(); ++i) dump_projection(sets[i], a.out, clouds[i].id);
  write_config_snapshot(cfg, fs::path(a.out) / "config.txt");
  std::cout << "projected " << clouds.size() << " clouds into " << a.out << "\n";
  return 0;
}

struct TrainArgs {
  DataArgs data;
  ConfigArgs config;
  std::string out;
};

int run_train(const TrainArgs& a) {
  const RunConfig cfg = resolve_config(a.config);
  fs::create_directories(a.out);
  write_config_snapshot(cfg, fs::path(a.out) / "config.txt");
  const LoadedData loaded = load_data(a.data);
  const Dataset data = prepare_dataset(loaded.clouds, loaded.manifest, cfg);
  std::vector<std::size_t> all(data.samples.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  TrainResult result = train(data, all, cfg, log_line);

  std::ostringstream hist;
  hist.precision(10);
  hist << "step,dis,cls,reg,total\n";
  for (std::size_t s = 0; s < result.history.size(); ++s) {
    const auto& l = result.history[s];
    hist << s << ',' << l.dis << ',' << l.cls << ',' << l.reg << ',' << l.total << '\n';
  }
  write_text(fs::path(a.out) / "history.csv", hist.str());
  save_checkpoint(fs::path(a.out) / "model.ckpt", result.model.to_checkpoint());
  std::cout << "checkpoint: " << (fs::path(a.out) / "model.ckpt").string() << "\n";
  return 0;
}

struct ScoreArgs {
  DataArgs data;
  std::vector<std::string> plys;
  std::string checkpoint;
  std::string out;
  std::string embeddings;
};

int run_score(const ScoreArgs& a) {
  Model model = Model::from_checkpoint(load_checkpoint(a.checkpoint));
  const RunConfig& cfg = model.config();
  std::vector<PointCloud> clouds;
  DatasetManifest manifest;
  manifest.scale_min = a.data.scale_min;
  manifest.scale_max = a.data.scale_max;
  if (!a.data.manifest.empty()) {
    LoadedData loaded = load_data(a.data);
    clouds = std::move(loaded.clouds);
    manifest = std::move(loaded.manifest);
  }
  for (const auto& p : a.plys) {
    clouds.push_back(read_ply(p));
    // MOS unknown for loose files; the midpoint keeps the label valid.
    manifest.entries.push_back({p, 0.5 * (manifest.scale_min + manifest.scale_max), clouds.back().id});
  }
  if (clouds.empty()) throw ValidationError("score: give --manifest or --ply");
  const Dataset data = prepare_dataset(clouds, manifest, cfg);
  const auto views = view_ptrs(data);
  const auto scores = model.score(views);
  std::vector<std::string> ids;
  for (const auto& s : data.samples) ids.push_back(s.id);
  write_text(a.out, score_report_csv(ids, scores));
  write_config_snapshot(cfg, snapshot_beside(a.out));
  if (!a.embeddings.empty()) {
    std::vector<int> levels;
    for (const auto& s : scores) levels.push_back(s.level);
    write_text(a.embeddings, embedding_csv(ids, levels, model.embed(views)));
  }
  std::cout << "scored " << scores.size() << " samples into " << a.out << "\n";
  return 0;
}

struct EvalArgs {
  DataArgs data;
  std::string predictions;
  std::string pred_column = "score";
  std::string mos_column;
  std::string out;
};

int run_eval(const EvalArgs& a) {
  const auto rows = read_csv(a.predictions);
  std::map<std::string, double> mos_by_id;
  if (a.mos_column.empty()) {
    if (a.data.manifest.empty()) throw ValidationError("eval: give --manifest or --mos-column");
    const auto manifest = read_manifest(a.data.manifest, a.data.scale_min, a.data.scale_max);
    for (const auto& e : manifest.entries) mos_by_id[fs::path(e.path).stem().string()] = e.mos;
  }
  std::vector<double> pred, mos;
  for (const auto& row : rows) {
    const auto p = row.find(a.pred_column);
    if (p == row.end()) throw ParseError("eval: predictions have no column '" + a.pred_column + "'");
    pred.push_back(to_double(p->second, a.pred_column));
    if (!a.mos_column.empty()) {
      const auto m = row.find(a.mos_column);
      if (m == row.end()) throw ParseError("eval: predictions have no column '" + a.mos_column + "'");
      mos.push_back(to_double(m->second, a.mos_column));
    } else {
      const auto id = row.find("sample_id");
      if (id == row.end()) throw ParseError("eval: predictions have no sample_id column");
      const auto it = mos_by_id.find(id->second);
      if (it == mos_by_id.end()) throw ValidationError("eval: sample '" + id->second + "' not in manifest");
      mos.push_back(it->second);
    }
  }
  const Metrics raw = eval_metrics(pred, mos);
  const FoldReport mapped = evaluate_predictions(pred, mos);
  nlohmann::json report{{"n", pred.size()},
                        {"raw", metrics_json(raw)},
                        {"mapped", metrics_json(mapped.metrics)},
                        {"logistic4_applied", mapped.mapping_applied},
                        {"logistic4_beta", mapped.fit.beta}};
  const std::string text = report.dump(2) + "\n";
  if (a.out.empty()) {
    std::cout << text;
  } else {
    write_text(a.out, text);
    std::cout << "metrics: " << a.out << "\n";
  }
  return 0;
}

struct CrossvalArgs {
  DataArgs data;
  ConfigArgs config;
  std::string out;
};

int run_crossval(const CrossvalArgs& a) {
  const RunConfig cfg = resolve_config(a.config);
  fs::create_directories(a.out);
  write_config_snapshot(cfg, fs::path(a.out) / "config.txt");
  const LoadedData loaded = load_data(a.data);
  const Dataset data = prepare_dataset(loaded.clouds, loaded.manifest, cfg);
  const CrossvalReport report = crossval(data, cfg, log_line);
  write_text(fs::path(a.out) / "metrics.json", report.to_json().dump(2) + "\n");
  write_text(fs::path(a.out) / "folds.csv", report.to_csv());
  std::cout << "mean plcc=" << report.mean.plcc << " srocc=" << report.mean.srocc << " krocc=" << report.mean.krocc
            << " rmse=" << report.mean.rmse << "\n";
  return 0;
}

struct OracleArgs {
  DataArgs data;
  ConfigArgs config;
  std::string out;
};

// Kernel oracle on hand-crafted projection statistics: content-disjoint
// folds for metrics, then one fit on everything saved as a checkpoint.
int run_oracle(const OracleArgs& a) {
  const RunConfig cfg = resolve_config(a.config);
  fs::create_directories(a.out);
  write_config_snapshot(cfg, fs::path(a.out) / "config.txt");
  const LoadedData loaded = load_data(a.data);
  const auto sets = render_batch(loaded.clouds, cfg.projection());
  std::vector<Eigen::VectorXd> feats;
  std::vector<QualityLabel> labels;
  for (std::size_t i = 0; i < sets.size(); ++i) {
    const auto s = kernel::projection_statistics(sets[i]);
    feats.push_back(Eigen::Map<const Eigen::VectorXd>(s.data(), static_cast<Eigen::Index>(s.size())));
    labels.push_back(normalize_score(loaded.manifest.entries[i].mos, a.data.scale_min, a.data.scale_max, cfg.delta));
  }
  const kernel::KernelConfig kcfg = cfg.oracle();
  auto fit_on = [&](const std::vector<std::size_t>& idx, kernel::Standardizer& st) {
    std::vector<Eigen::VectorXd> rows;
    std::vector<int> lv;
    std::vector<double> conf;
    for (std::size_t i : idx) {
      rows.push_back(feats[i]);
      lv.push_back(labels[i].level);
      conf.push_back(labels[i].confidence);
    }
    st = kernel::Standardizer::fit(rows);
    for (auto& r : rows) r = st.apply(r);
    return kernel::fit(kernel::group_by_level(rows, lv, conf), kcfg);
  };

  std::vector<std::string> contents;
  for (const auto& e : loaded.manifest.entries) contents.push_back(e.content_id);
  const auto folds = content_folds(contents, cfg.folds, cfg.seed);
  nlohmann::json fold_json = nlohmann::json::array();
  Metrics mean;
  for (std::size_t k = 0; k < folds.size(); ++k) {
    const std::set<std::string> test_set(folds[k].begin(), folds[k].end());
    std::vector<std::size_t> tr, te;
    for (std::size_t i = 0; i < contents.size(); ++i) (test_set.count(contents[i]) ? te : tr).push_back(i);
    kernel::Standardizer st;
    const kernel::KernelModel model = fit_on(tr, st);
    std::vector<double> pred, mos;
    for (std::size_t i : te) {
      pred.push_back(kernel::predict(model, st.apply(feats[i])).score.score);
      mos.push_back(loaded.manifest.entries[i].mos);
    }
    const FoldReport r = evaluate_predictions(pred, mos);
    fold_json.push_back({{"fold", k}, {"test_contents", folds[k]}, {"metrics", metrics_json(r.metrics)}});
    const double n = static_cast<double>(folds.size());
    mean.plcc += r.metrics.plcc / n;
    mean.srocc += r.metrics.srocc / n;
    mean.krocc += r.metrics.krocc / n;
    mean.rmse += r.metrics.rmse / n;
  }

  std::vector<std::size_t> all(feats.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  kernel::Standardizer st;
  const kernel::KernelModel full = fit_on(all, st);
  CheckpointData ckpt;
  kernel::export_model(full, ckpt);
  ckpt.meta["standardizer"] = {{"mean", std::vector<double>(st.mean.data(), st.mean.data() + st.mean.size())},
                               {"scale", std::vector<double>(st.scale.data(), st.scale.data() + st.scale.size())}};
  save_checkpoint(fs::path(a.out) / "oracle.ckpt", ckpt);

  nlohmann::json iters = nlohmann::json::array();
  for (const auto& it : full.log) {
    iters.push_back({{"iteration", it.iteration},
                     {"objective_before_alpha", it.objective_before_alpha},
                     {"objective_after_alpha", it.objective_after_alpha},
                     {"objective_after_beta", it.objective_after_beta},
                     {"projection_distance", it.projection_distance},
                     {"projection_bound", it.projection_bound}});
  }
  nlohmann::json report{{"kernel", kernel::to_string(kcfg.kind)},
                        {"mean", metrics_json(mean)},
                        {"folds", fold_json},
                        {"full_fit_iterations", iters}};
  write_text(fs::path(a.out) / "oracle_metrics.json", report.dump(2) + "\n");
  std::cout << "oracle mean plcc=" << mean.plcc << " srocc=" << mean.srocc << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"No-reference point cloud quality assessment"};
  app.require_subcommand(1);

  SynthArgs synth;
  auto* c_synth = app.add_subcommand("synth", "Generate the synthetic distorted dataset");
  c_synth->add_option("-o,--out", synth.out, "Output directory")->required();
  c_synth->add_option("--seed", synth.seed)->capture_default_str();
  c_synth->add_option("--shapes", synth.shapes)->capture_default_str()->check(CLI::PositiveNumber);
  c_synth->add_option("--points", synth.points, "Points per base shape")->capture_default_str()->check(CLI::PositiveNumber);
  c_synth->add_flag("--ascii", synth.ascii, "Write ascii PLY");

  ProjectArgs project;
  auto* c_project = app.add_subcommand("project", "Render the six views and dump them as PNG");
  add_data_options(c_project, project.data, false);
  add_config_options(c_project, project.config);
  c_project->add_option("--ply", project.plys, "Extra PLY files");
  c_project->add_option("-o,--out", project.out, "Output directory")->required();

  TrainArgs train_args;
  auto* c_train = app.add_subcommand("train", "Episodic training on a manifest");
  add_data_options(c_train, train_args.data);
  add_config_options(c_train, train_args.config);
  c_train->add_option("-o,--out", train_args.out, "Output directory")->required();

  ScoreArgs score;
  auto* c_score = app.add_subcommand("score", "Score clouds with a trained checkpoint");
  add_data_options(c_score, score.data, false);
  c_score->add_option("--ply", score.plys, "PLY files to score");
  c_score->add_option("-k,--checkpoint", score.checkpoint)->required()->check(CLI::ExistingFile);
  c_score->add_option("-o,--out", score.out, "Score CSV")->required();
  c_score->add_option("--embeddings", score.embeddings, "Also write disentangled features to this CSV");

  EvalArgs eval;
  auto* c_eval = app.add_subcommand("eval", "Metrics of predictions against MOS");
  add_data_options(c_eval, eval.data, false);
  c_eval->add_option("-p,--predictions", eval.predictions, "CSV with a prediction column")->required()->check(CLI::ExistingFile);
  c_eval->add_option("--pred-column", eval.pred_column)->capture_default_str();
  c_eval->add_option("--mos-column", eval.mos_column, "Take MOS from this column instead of the manifest");
  c_eval->add_option("-o,--out", eval.out, "Metrics JSON (stdout when omitted)");

  CrossvalArgs cv;
  auto* c_cv = app.add_subcommand("crossval", "Content-disjoint k-fold cross-validation");
  add_data_options(c_cv, cv.data);
  add_config_options(c_cv, cv.config);
  c_cv->add_option("-o,--out", cv.out, "Output directory")->required();

  OracleArgs oracle;
  auto* c_oracle = app.add_subcommand("oracle", "Kernel oracle on projection statistics");
  add_data_options(c_oracle, oracle.data);
  add_config_options(c_oracle, oracle.config);
  c_oracle->add_option("-o,--out", oracle.out, "Output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n\n" << app.help();
    return e.get_exit_code() == 0 ? 2 : e.get_exit_code();
  }

  try {
    if (*c_synth) return run_synth(synth);
    if (*c_project) return run_project(project);
    if (*c_train) return run_train(train_args);
    if (*c_score) return run_score(score);
    if (*c_eval) return run_eval(eval);
    if (*c_cv) return run_crossval(cv);
    if (*c_oracle) return run_oracle(oracle);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
