#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "mts2graph/pipeline.hpp"
#include "support/synthetic.hpp"

using namespace mts2graph;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

fs::path fresh_dir(const std::string& name) {
  auto p = fs::temp_directory_path() / ("mts2graph_test_pipeline_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

// A small order dataset on disk, written once per process.
const fs::path& order_data() {
  static const fs::path dir = [] {
    auto d = fresh_dir("data");
    save_dataset_tabular(testing::order_dataset(60, 100, 0.1, 3), d);
    return d;
  }();
  return dir;
}

PipelineConfig tiny(const fs::path& out) {
  PipelineConfig c;
  c.dataset = order_data();
  c.out = out;
  c.seed = 4;
  c.cnn.conv_layers = {{4, 8}, {4, 5}, {4, 3}};
  c.cnn.epochs = 3;
  c.cnn.learning_rate = 1e-2;
  c.cluster_counts = {4, 4, 4};
  c.kshape.restarts = 1;
  c.kshape_max_samples = 300;
  c.embedding.dim = 8;
  c.embedding.walks_per_node = 5;
  c.embedding.epochs = 2;
  c.gbdt.rounds = 10;
  c.max_folds = 1;
  return c;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("config: validation, overrides, JSON round-trip") {
  PipelineConfig bad;
  bad.dataset = "x";
  bad.cluster_counts = {5, 5};
  CHECK_THROWS_AS(bad.validate(), Error);

  auto doc = config_to_json(PipelineConfig{});
  apply_override(doc, "cnn.epochs", "7");
  apply_override(doc, "kshape.cluster_counts", "10,8,6");
  apply_override(doc, "mhap.nms", "false");
  apply_override(doc, "dataset.path", "some/dir");
  const auto c = config_from_json(doc);
  CHECK(c.cnn.epochs == 7);
  CHECK(c.cluster_counts == std::vector<std::size_t>{10, 8, 6});
  CHECK_FALSE(c.nms);
  CHECK(c.dataset == fs::path("some/dir"));
  CHECK_THROWS_AS(apply_override(doc, "cnn.nope", "1"), Error);
  CHECK_THROWS_AS(apply_override(doc, "cnn.epochs", "many"), Error);
  CHECK_THROWS_AS(apply_override(doc, "mhap.nms", "3"), Error);

  CHECK(config_to_json(config_from_json(config_to_json(c))) == config_to_json(c));
  json extra = config_to_json(c);
  extra["gbdt"]["leaves"] = 3;
  CHECK_THROWS_AS(config_from_json(extra), Error);
  CHECK_THROWS_AS(config_from_json(json::array()), Error);
}

TEST_CASE("seeds are derived per stage and per fold") {
  const auto a = stage_seeds(1, 0), b = stage_seeds(1, 1), c = stage_seeds(2, 0);
  CHECK(a.folds == b.folds);  // one fold plan per root seed
  CHECK(a.cnn != b.cnn);
  CHECK(a.cnn != c.cnn);
  CHECK(a.cnn != a.kshape);
  CHECK(stage_seeds(1, 0).embedding == a.embedding);
}

TEST_CASE("full run: identical metrics bytes for identical runs, artifacts reload, tampering detected") {
  const auto out1 = fresh_dir("run1"), out2 = fresh_dir("run2");
  const auto r1 = run_pipeline(tiny(out1));
  run_pipeline(tiny(out2));
  REQUIRE(r1.folds.size() == 1);
  CHECK(r1.mean_accuracy >= 0.0);
  CHECK(r1.mean_accuracy <= 1.0);
  for (const char* f : {"config.json", "metrics.json", "timing.json", "report.txt"}) CHECK(fs::exists(out1 / f));
  CHECK(slurp(out1 / "metrics.json") == slurp(out2 / "metrics.json"));
  const auto metrics = json::parse(slurp(out1 / "metrics.json"));
  CHECK(metrics.dump().find("seconds") == std::string::npos);

  const auto ds = prepare_dataset(tiny(out1));
  ArtifactStore store(fold_dir(out1, 0));
  for (const auto& s : stage_names()) CHECK(store.has(s));
  const auto st = load_fold_state(store, ds);
  CHECK(st.accuracy == r1.folds[0].accuracy);
  CHECK(st.graph.intra == load_fold_state(ArtifactStore(fold_dir(out2, 0)), ds).graph.intra);

  // explanation from a finished fold
  const auto ex = explain_sample(tiny(out1), 0, st.split.test.front());
  CHECK(ex.verified);
  const bool any = ex.text.find("path") != std::string::npos || ex.text.find("no highly activated periods") != std::string::npos;
  CHECK(any);
  CHECK(ex.dot.find("digraph") != std::string::npos);
  CHECK_THROWS_AS(explain_sample(tiny(out1), 0, ds.size()), Error);

  // a changed artifact is refused on reload
  {
    std::ofstream f(fold_dir(out1, 0) / "graph.tsv", std::ios::app);
    f << "# edited\n";
  }
  CHECK_THROWS_AS(load_fold_state(ArtifactStore(fold_dir(out1, 0)), ds), Error);
}

TEST_CASE("stage-by-stage execution matches the in-memory fold") {
  const auto out = fresh_dir("stages");
  auto cfg = tiny(out);
  save_config(cfg, out / "config.json");
  for (const auto& s : stage_names()) run_stage(s, cfg, 0);
  const auto ds = prepare_dataset(cfg);
  const auto staged = load_fold_state(ArtifactStore(fold_dir(out, 0)), ds);
  const auto plan = make_folds(ds, cfg.folds, stage_seeds(cfg.seed, 0).folds);
  const auto mem = run_fold(ds, plan, 0, cfg);
  CHECK(staged.accuracy == mem.accuracy);
  CHECK(staged.graph.intra == mem.graph.intra);
  CHECK(staged.features == mem.features);
  CHECK_THROWS_AS(run_stage("no-such-stage", cfg, 0), Error);
}

TEST_CASE("sweep: empty grid gives an empty table, one point reproduces the fold") {
  auto cfg = tiny(fresh_dir("sweep"));
  CHECK(sweep(cfg, SweepParameter::SegmentLength, {}).empty());
  CHECK(parse_sweep_parameter("embedding.dim") == SweepParameter::EmbeddingDim);
  CHECK_THROWS_AS(parse_sweep_parameter("cnn.epochs"), Error);
  const auto rows = sweep(cfg, SweepParameter::SegmentLength, {"10", "100"});
  REQUIRE(rows.size() == 2);
  const auto ds = prepare_dataset(cfg);
  const auto plan = make_folds(ds, cfg.folds, stage_seeds(cfg.seed, 0).folds);
  const auto st = run_fold(ds, plan, 0, cfg);
  CHECK(rows[0].accuracy == st.accuracy);
  CHECK(rows[1].accuracy == rerun_with_segment_length(st, ds, cfg, 100));
  CHECK(sweep_table(rows, "segment_length").find("segment_length") != std::string::npos);
}

TEST_CASE("command line: pipeline, explain and bad flags") {
  const std::string cli = MTS2GRAPH_CLI_PATH;
  const auto out = fresh_dir("cli");
  const std::string common = " --dataset " + order_data().string() + " --seed 4 --out " + out.string() +
                             " --cnn.conv_layers '[{\"filters\":4,\"kernel\":8},{\"filters\":4,\"kernel\":5},{\"filters\":4,\"kernel\":3}]' --cnn.epochs 2 --kshape.cluster_counts 3,3,3"
                             " --kshape.max_samples 200 --embedding.dim 4 --embedding.walks_per_node 3"
                             " --gbdt.rounds 5 --folds.max_folds 1";
  CHECK(std::system((cli + " pipeline" + common + " > " + (out / "log.txt").string() + " 2>&1").c_str()) == 0);
  CHECK(fs::exists(out / "metrics.json"));
  CHECK(std::system((cli + " explain --out " + out.string() + " --sample 0 > " + (out / "explain.txt").string() + " 2>&1")
                        .c_str()) == 0);
  CHECK(slurp(out / "explain.txt").find("sample 0") != std::string::npos);
  CHECK(std::system((cli + " pipeline" + common + " --cnn.bogus 1 > /dev/null 2>&1").c_str()) != 0);
  CHECK(std::system((cli + " pipeline --seed 1 > /dev/null 2>&1").c_str()) != 0);
}
