// mts2graph command line: full cross-validated runs, single stages, explanations, sweeps.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "mts2graph/pipeline.hpp"

namespace fs = std::filesystem;
using namespace mts2graph;
using nlohmann::json;

namespace {

struct CommonOptions {
  std::string config;
  std::string dataset;
  std::string format;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::size_t fold = 0;
};

void add_common(CLI::App* sub, CommonOptions& o, bool with_fold) {
  sub->add_option("--config", o.config, "JSON config file");
  sub->add_option("--dataset", o.dataset, "dataset directory (tabular) or CSV file (single-file)");
  sub->add_option("--format", o.format, "tabular | single-file");
  sub->add_option("--seed", o.seed, "root seed");
  sub->add_option("--out", o.out, "run directory");
  if (with_fold) sub->add_option("--fold", o.fold, "fold index")->capture_default_str();
  sub->allow_extras();
  sub->footer("Any config field can be set with its dotted name, e.g. --cnn.epochs 50 --kshape.cluster_counts 10,8,6");
}

// Remaining "--a.b value" / "--a.b=value" pairs.
std::vector<std::pair<std::string, std::string>> dotted_overrides(const std::vector<std::string>& extra) {
  std::vector<std::pair<std::string, std::string>> out;
  for (std::size_t i = 0; i < extra.size(); ++i) {
    const auto& a = extra[i];
    if (a.rfind("--", 0) != 0) throw Error("unexpected argument '" + a + "'");
    const auto eq = a.find('=');
    if (eq != std::string::npos) {
      out.emplace_back(a.substr(2, eq - 2), a.substr(eq + 1));
    } else {
      if (i + 1 >= extra.size()) throw Error("option " + a + " needs a value");
      out.emplace_back(a.substr(2), extra[++i]);
    }
  }
  return out;
}

// Defaults, then the config file (or the run directory's config.json), then explicit flags.
PipelineConfig resolve_config(const CommonOptions& o, const std::vector<std::string>& extra, bool use_run_config) {
  json doc = config_to_json(PipelineConfig{});
  if (!o.config.empty()) {
    doc = config_to_json(load_config(o.config));
  } else if (use_run_config && !o.out.empty() && fs::exists(fs::path(o.out) / "config.json")) {
    doc = config_to_json(load_config(fs::path(o.out) / "config.json"));
  }
  if (!o.dataset.empty()) doc["dataset"]["path"] = o.dataset;
  if (!o.format.empty()) doc["dataset"]["format"] = o.format;
  if (o.seed) doc["seed"] = *o.seed;
  if (!o.out.empty()) doc["out"] = o.out;
  for (const auto& [key, value] : dotted_overrides(extra)) apply_override(doc, key, value);
  auto cfg = config_from_json(doc);
  cfg.validate();
  return cfg;
}

void require_out(const PipelineConfig& cfg) {
  if (cfg.out.empty()) throw Error("--out is required");
}

// Stage commands persist the config so later commands and `explain` see the same settings.
void ensure_run_config(const PipelineConfig& cfg) {
  require_out(cfg);
  fs::create_directories(cfg.out);
  save_config(cfg, cfg.out / "config.json");
}

std::vector<std::string> split_list(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, sep))
    if (!item.empty()) out.push_back(item);
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"mts2graph: MHAP graph pipeline for multivariate series (cross-validated runs, single stages, explanations)"};
  app.require_subcommand(1);

  CommonOptions pipe_opts;
  auto* pipeline_cmd = app.add_subcommand("pipeline", "run every stage on every fold and write the metrics report");
  add_common(pipeline_cmd, pipe_opts, false);
  pipeline_cmd->get_option("--dataset")->required();
  pipeline_cmd->get_option("--seed")->required();
  pipeline_cmd->get_option("--out")->required();

  struct StageCommand {
    const char* name;
    const char* help;
    std::vector<std::string> stages;
  };
  const std::vector<StageCommand> stage_commands{
      {"train", "make the fold split and train the CNN", {"split", "train"}},
      {"extract", "compute activation thresholds and extract MHAPs", {"thresholds", "extract"}},
      {"cluster", "K-shape cluster the MHAPs of each layer and assign every MHAP", {"cluster", "assign"}},
      {"graph", "build the merged evolution graph", {"graph"}},
      {"embed", "DeepWalk node embeddings", {"embed"}},
      {"represent", "segment representations of every sample", {"represent"}},
      {"fit", "train the boosted-tree classifier", {"fit"}},
      {"evaluate", "test-fold accuracy", {"evaluate"}},
  };
  std::vector<CommonOptions> stage_opts(stage_commands.size());
  std::vector<CLI::App*> stage_apps;
  std::string elbow;
  std::size_t elbow_layer = 0;
  for (std::size_t i = 0; i < stage_commands.size(); ++i) {
    auto* sub = app.add_subcommand(stage_commands[i].name, stage_commands[i].help);
    add_common(sub, stage_opts[i], true);
    if (std::string(stage_commands[i].name) == "cluster") {
      sub->add_option("--elbow", elbow, "comma list of cluster counts: print the inertia curve instead of clustering");
      sub->add_option("--layer", elbow_layer, "layer for --elbow")->capture_default_str();
    }
    stage_apps.push_back(sub);
  }

  CommonOptions explain_opts;
  std::size_t sample_id = 0;
  std::string dot_file;
  auto* explain_cmd = app.add_subcommand("explain", "list a sample's MHAPs, node paths and a DOT subgraph");
  add_common(explain_cmd, explain_opts, true);
  explain_cmd->add_option("--sample", sample_id, "dataset sample index")->required();
  explain_cmd->add_option("--dot", dot_file, "write the highlighted subgraph here instead of stdout");

  CommonOptions sweep_opts;
  std::string sweep_param, sweep_grid;
  auto* sweep_cmd = app.add_subcommand("sweep", "accuracy on fold 0 over a parameter grid");
  add_common(sweep_cmd, sweep_opts, false);
  sweep_cmd->add_option("--param", sweep_param, "embedding.dim | representation.segment_length | kshape.cluster_counts")
      ->required();
  sweep_cmd->add_option("--grid", sweep_grid,
                        "grid values separated by ';' (or ',' for single numbers), e.g. 32,64,100 or '10,8,6;20,14,8'")
      ->required();

  CommonOptions dot_opts;
  std::string dot_out;
  auto* dot_cmd = app.add_subcommand("export-dot", "write the merged graph of a fold as Graphviz DOT");
  add_common(dot_cmd, dot_opts, true);
  dot_cmd->add_option("--file", dot_out, "output file (default stdout)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (pipeline_cmd->parsed()) {
      const auto cfg = resolve_config(pipe_opts, pipeline_cmd->remaining(), false);
      const auto report = run_pipeline(cfg);
      std::cout << metrics_text(report);
      return 0;
    }
    for (std::size_t i = 0; i < stage_apps.size(); ++i) {
      if (!stage_apps[i]->parsed()) continue;
      const auto cfg = resolve_config(stage_opts[i], stage_apps[i]->remaining(), true);
      ensure_run_config(cfg);
      const std::size_t fold = stage_opts[i].fold;
      if (std::string(stage_commands[i].name) == "cluster" && !elbow.empty()) {
        const auto ds = prepare_dataset(cfg);
        const auto st = load_fold_state(ArtifactStore(fold_dir(cfg.out, fold)), ds);
        if (elbow_layer >= st.mhaps.size()) throw Error("--layer out of range (run extract first?)");
        std::vector<std::vector<double>> vectors;
        const std::set<std::size_t> train(st.split.train.begin(), st.split.train.end());
        for (const auto& m : st.mhaps[elbow_layer])
          if (train.count(m.sample_id)) vectors.push_back(m.flattened());
        std::vector<std::size_t> ks;
        for (const auto& k : split_list(elbow, ',')) ks.push_back(std::stoul(k));
        const auto inertia = kshape_elbow(vectors, ks, stage_seeds(cfg.seed, fold).kshape, cfg.kshape);
        std::cout << "k\tinertia\n";
        for (std::size_t j = 0; j < ks.size(); ++j) std::cout << ks[j] << '\t' << inertia[j] << '\n';
        return 0;
      }
      for (const auto& stage : stage_commands[i].stages) run_stage(stage, cfg, fold);
      if (std::string(stage_commands[i].name) == "evaluate") {
        const auto ds = prepare_dataset(cfg);
        const auto st = load_fold_state(ArtifactStore(fold_dir(cfg.out, fold)), ds);
        std::cout << "fold " << fold << " accuracy " << st.accuracy << '\n';
      } else {
        std::cout << "fold " << fold << ": " << stage_commands[i].name << " done -> " << fold_dir(cfg.out, fold).string() << '\n';
      }
      return 0;
    }
    if (explain_cmd->parsed()) {
      const auto cfg = resolve_config(explain_opts, explain_cmd->remaining(), true);
      require_out(cfg);
      const auto ex = explain_sample(cfg, explain_opts.fold, sample_id);
      std::cout << ex.text;
      if (!dot_file.empty()) {
        write_text_file(dot_file, ex.dot);
        std::cout << "subgraph written to " << dot_file << '\n';
      } else {
        std::cout << '\n' << ex.dot;
      }
      return 0;
    }
    if (sweep_cmd->parsed()) {
      const auto cfg = resolve_config(sweep_opts, sweep_cmd->remaining(), true);
      const auto param = parse_sweep_parameter(sweep_param);
      const auto grid = (param == SweepParameter::ClusterCounts || sweep_grid.find(';') != std::string::npos)
                            ? split_list(sweep_grid, ';')
                            : split_list(sweep_grid, ',');
      std::cout << sweep_table(sweep(cfg, param, grid), sweep_param);
      return 0;
    }
    if (dot_cmd->parsed()) {
      const auto cfg = resolve_config(dot_opts, dot_cmd->remaining(), true);
      require_out(cfg);
      ArtifactStore store(fold_dir(cfg.out, dot_opts.fold));
      std::istringstream in(store.get("graph"));
      const auto g = read_adjacency(in);
      std::ostringstream dot;
      write_dot(dot, g);
      if (dot_out.empty())
        std::cout << dot.str();
      else
        write_text_file(dot_out, dot.str());
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
