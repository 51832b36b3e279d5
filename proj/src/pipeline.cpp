#include "mts2graph/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <iomanip>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include "binary_io.hpp"
#include "mts2graph/json_io.hpp"
#include "mts2graph/kernels.hpp"

namespace mts2graph {

using nlohmann::json;

// ---------------------------------------------------------------- config

void PipelineConfig::validate() const {
  if (cnn.conv_layers.size() < 2) throw Error("config: the CNN needs at least two conv layers");
  if (cluster_counts.size() != cnn.conv_layers.size())
    throw Error("config: " + std::to_string(cluster_counts.size()) + " cluster counts given for a " +
                std::to_string(cnn.conv_layers.size()) + "-layer CNN");
  for (auto k : cluster_counts)
    if (k < 1) throw Error("config: cluster counts must be at least 1");
  if (!(quantile > 0.0 && quantile < 1.0)) throw Error("config: quantile must lie in (0, 1)");
  if (segment_length < 1) throw Error("config: segment_length must be at least 1");
  if (folds < 2) throw Error("config: need at least 2 folds");
  embedding.validate();
  gbdt.validate();
}

void PipelineConfig::validate(const MTSDataset& ds) const {
  validate();
  cnn.validate(ds.T);
}

json config_to_json(const PipelineConfig& cfg) {
  json cnn = cfg.cnn, emb = cfg.embedding, gb = cfg.gbdt;
  // per-stage seeds come from the root seed
  cnn.erase("seed");
  emb.erase("seed");
  gb.erase("seed");
  return {
      {"dataset", {{"path", cfg.dataset.string()}, {"format", to_string(cfg.format)}, {"normalize", cfg.normalize}}},
      {"cnn", cnn},
      {"mhap", {{"quantile", cfg.quantile}, {"nms", cfg.nms}, {"input_set", to_string(cfg.input_set)}}},
      {"kshape",
       {{"cluster_counts", cfg.cluster_counts},
        {"max_iter", cfg.kshape.max_iter},
        {"restarts", cfg.kshape.restarts},
        {"max_samples", cfg.kshape_max_samples}}},
      {"embedding", emb},
      {"representation", {{"segment_length", cfg.segment_length}}},
      {"gbdt", gb},
      {"folds", {{"k", cfg.folds}, {"max_folds", cfg.max_folds}}},
      {"seed", cfg.seed},
      {"out", cfg.out.string()},
  };
}

namespace {

void check_keys(const json& given, const json& known, const std::string& prefix) {
  for (const auto& [key, value] : given.items()) {
    const std::string path = prefix.empty() ? key : prefix + "." + key;
    if (!known.contains(key)) throw Error("config: unknown key '" + path + "'");
    if (value.is_object() && known[key].is_object()) check_keys(value, known[key], path);
  }
}

}  // namespace

PipelineConfig config_from_json(const json& j) {
  const PipelineConfig d;
  if (!j.is_object()) throw Error("config: top level must be an object");
  check_keys(j, config_to_json(d), "");
  PipelineConfig c;
  try {
    const json empty = json::object();
    const auto& ds = j.contains("dataset") ? j["dataset"] : empty;
    c.dataset = ds.value("path", std::string());
    c.format = parse_dataset_format(ds.value("format", to_string(d.format)));
    c.normalize = ds.value("normalize", d.normalize);
    if (j.contains("cnn")) c.cnn = j["cnn"].get<CNNConfig>();
    const auto& mh = j.contains("mhap") ? j["mhap"] : empty;
    c.quantile = mh.value("quantile", d.quantile);
    c.nms = mh.value("nms", d.nms);
    c.input_set = parse_input_set_policy(mh.value("input_set", to_string(d.input_set)));
    const auto& ks = j.contains("kshape") ? j["kshape"] : empty;
    c.cluster_counts = ks.value("cluster_counts", d.cluster_counts);
    c.kshape.max_iter = ks.value("max_iter", d.kshape.max_iter);
    c.kshape.restarts = ks.value("restarts", d.kshape.restarts);
    c.kshape_max_samples = ks.value("max_samples", d.kshape_max_samples);
    if (j.contains("embedding")) c.embedding = j["embedding"].get<EmbeddingConfig>();
    c.segment_length = j.contains("representation") ? j["representation"].value("segment_length", d.segment_length)
                                                    : d.segment_length;
    if (j.contains("gbdt")) c.gbdt = j["gbdt"].get<GBDTConfig>();
    const auto& fo = j.contains("folds") ? j["folds"] : empty;
    c.folds = fo.value("k", d.folds);
    c.max_folds = fo.value("max_folds", d.max_folds);
    c.seed = j.value("seed", d.seed);
    c.out = j.value("out", std::string());
  } catch (const json::exception& e) {
    throw Error(std::string("config: ") + e.what());
  }
  return c;
}

PipelineConfig load_config(const std::filesystem::path& path) {
  json j;
  try {
    j = json::parse(read_text_file(path));
  } catch (const json::exception& e) {
    throw Error("config " + path.string() + ": " + e.what());
  }
  return config_from_json(j);
}

void save_config(const PipelineConfig& cfg, const std::filesystem::path& path) {
  write_text_file(path, config_to_json(cfg).dump(2) + "\n");
}

void apply_override(json& doc, const std::string& dotted_key, const std::string& value) {
  json* node = &doc;
  std::size_t start = 0;
  while (true) {
    const auto dot = dotted_key.find('.', start);
    const std::string part = dotted_key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (part.empty()) throw Error("config: malformed key '" + dotted_key + "'");
    if (dot == std::string::npos) {
      if (!node->is_object() || !node->contains(part)) throw Error("config: unknown key '" + dotted_key + "'");
      json& target = (*node)[part];
      json parsed;
      try {
        parsed = json::parse(value);
      } catch (const json::exception&) {
        parsed = value;
      }
      if (target.is_array() && !parsed.is_array()) {
        // "10,8,6" for list fields
        json arr = json::array();
        std::stringstream ss(value);
        std::string item;
        while (std::getline(ss, item, ',')) {
          try {
            arr.push_back(json::parse(item));
          } catch (const json::exception&) {
            throw Error("config: cannot parse list item '" + item + "' for " + dotted_key);
          }
        }
        parsed = arr;
      }
      if (target.is_string() && !parsed.is_string()) parsed = value;
      if (target.is_number() && !parsed.is_number()) throw Error("config: " + dotted_key + " expects a number");
      if (target.is_boolean() && !parsed.is_boolean()) throw Error("config: " + dotted_key + " expects true or false");
      target = parsed;
      return;
    }
    if (!node->contains(part) || !(*node)[part].is_object()) throw Error("config: unknown key '" + dotted_key + "'");
    node = &(*node)[part];
    start = dot + 1;
  }
}

StageSeeds stage_seeds(std::uint64_t root, std::size_t fold) {
  return {derive_seed(root, "folds"), derive_seed(root, "cnn", fold), derive_seed(root, "kshape", fold),
          derive_seed(root, "embedding", fold), derive_seed(root, "gbdt", fold)};
}

MTSDataset prepare_dataset(const PipelineConfig& cfg) {
  if (cfg.dataset.empty()) throw Error("config: dataset path is empty");
  auto ds = load_dataset(cfg.dataset, cfg.format);
  return cfg.normalize ? znormalize(ds) : ds;
}

std::string dataset_fingerprint(const MTSDataset& ds) {
  std::string bytes;
  binary::put_le<std::uint64_t>(bytes, ds.d);
  binary::put_le<std::uint64_t>(bytes, ds.T);
  binary::put_le<std::uint64_t>(bytes, ds.C);
  binary::put_le<std::uint64_t>(bytes, ds.size());
  for (const auto& s : ds.samples) {
    binary::put_le<std::uint64_t>(bytes, static_cast<std::uint64_t>(s.label));
    for (double v : s.values.data) binary::put_f64(bytes, v);
  }
  return sha256_hex(bytes);
}

// ---------------------------------------------------------------- stages

TrainedCNN stage_train(const MTSDataset& ds, const Fold& split, const PipelineConfig& cfg, std::uint64_t seed) {
  CNNConfig c = cfg.cnn;
  c.seed = seed;
  return train_cnn(ds.subset(split.train), ds.subset(split.val), c);
}

ActivationThresholds stage_thresholds(const TrainedCNN& model, const MTSDataset& ds, const Fold& split,
                                      const PipelineConfig& cfg) {
  return compute_thresholds(model, ds.subset(split.train), cfg.quantile, false, cfg.input_set);
}

std::vector<std::vector<MHAP>> stage_extract(const TrainedCNN& model, const MTSDataset& ds, const ActivationThresholds& thr,
                                             const PipelineConfig& cfg) {
  return extract_mhaps(model, ds, thr, ExtractOptions{cfg.input_set, cfg.nms});
}

namespace {

std::vector<std::size_t> train_rows(const std::vector<MHAP>& mhaps, const Fold& split) {
  const std::set<std::size_t> train(split.train.begin(), split.train.end());
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < mhaps.size(); ++i)
    if (train.count(mhaps[i].sample_id)) rows.push_back(i);
  return rows;
}

}  // namespace

ClusterModel stage_cluster(const std::vector<std::vector<MHAP>>& mhaps, const Fold& split, const PipelineConfig& cfg,
                           std::uint64_t seed) {
  if (mhaps.size() != cfg.cluster_counts.size())
    throw Error("cluster: " + std::to_string(cfg.cluster_counts.size()) + " cluster counts for " +
                std::to_string(mhaps.size()) + " MHAP layers");
  ClusterModel model;
  model.seed = seed;
  for (std::size_t l = 0; l < mhaps.size(); ++l) {
    auto rows = train_rows(mhaps[l], split);
    if (rows.empty()) throw Error("cluster: layer " + std::to_string(l) + " has no MHAPs in the training split");
    if (cfg.kshape_max_samples > 0 && rows.size() > cfg.kshape_max_samples) {
      std::mt19937_64 rng(derive_seed(seed, "kshape-subsample", l));
      std::shuffle(rows.begin(), rows.end(), rng);
      rows.resize(cfg.kshape_max_samples);
      std::sort(rows.begin(), rows.end());
    }
    std::vector<std::vector<double>> vectors;
    vectors.reserve(rows.size());
    for (auto r : rows) vectors.push_back(mhaps[l][r].flattened());
    const std::size_t k = std::min(cfg.cluster_counts[l], vectors.size());
    model.layers.push_back(kshape_cluster(vectors, k, derive_seed(seed, "layer", l), cfg.kshape));
  }
  return model;
}

std::vector<std::vector<std::size_t>> stage_assign(const std::vector<std::vector<MHAP>>& mhaps, const ClusterModel& clusters) {
  if (mhaps.size() != clusters.layers.size()) throw Error("assign: cluster model and MHAP dump disagree on layer count");
  std::vector<std::vector<std::size_t>> out(mhaps.size());
  for (std::size_t l = 0; l < mhaps.size(); ++l) {
    std::vector<std::vector<double>> vectors;
    vectors.reserve(mhaps[l].size());
    for (const auto& m : mhaps[l]) vectors.push_back(znormalize(m.values.data));
    if (vectors.empty()) continue;
    if (clusters.layers[l].centroids.empty()) throw Error("assign: layer " + std::to_string(l) + " has no centroids");
    if (vectors.front().size() != clusters.layers[l].centroids.front().size())
      throw Error("assign: MHAP length does not match the centroids of layer " + std::to_string(l));
    const auto nearest = kernels::parallel::nearest_centroids(vectors, clusters.layers[l].centroids);
    out[l] = nearest.ids;
  }
  return out;
}

MergedGraph stage_graph(const std::vector<std::vector<MHAP>>& mhaps, const std::vector<std::vector<std::size_t>>& assignments,
                        const Fold& split, const TrainedCNN& model, const std::vector<std::size_t>& cluster_counts) {
  const std::size_t L = mhaps.size();
  if (assignments.size() != L || cluster_counts.size() != L) throw Error("graph: inconsistent layer counts");
  std::vector<std::vector<MHAP>> train_mhaps(L);
  std::vector<std::vector<std::size_t>> train_assign(L);
  std::vector<LayerGraph> graphs;
  for (std::size_t l = 0; l < L; ++l) {
    if (assignments[l].size() != mhaps[l].size()) throw Error("graph: assignment count mismatch in layer " + std::to_string(l));
    for (auto r : train_rows(mhaps[l], split)) {
      train_mhaps[l].push_back(mhaps[l][r]);
      train_assign[l].push_back(assignments[l][r]);
    }
    graphs.push_back(build_layer_graph(l, layer_sequences(train_mhaps[l], train_assign[l]), cluster_counts[l]));
  }
  return merge_graphs(graphs, train_mhaps, train_assign, model);
}

NodeEmbeddings stage_embed(const MergedGraph& graph, const PipelineConfig& cfg, std::uint64_t seed) {
  EmbeddingConfig c = cfg.embedding;
  c.seed = seed;
  return embed_graph(graph, c);
}

std::vector<std::vector<NodeHit>> node_hits(const std::vector<std::vector<MHAP>>& mhaps,
                                            const std::vector<std::vector<std::size_t>>& assignments,
                                            const MergedGraph& graph, std::size_t num_samples) {
  std::vector<std::vector<NodeHit>> hits(num_samples);
  for (std::size_t l = 0; l < mhaps.size(); ++l)
    for (std::size_t i = 0; i < mhaps[l].size(); ++i) {
      const auto& m = mhaps[l][i];
      if (m.sample_id >= num_samples) throw Error("represent: MHAP sample id out of range");
      hits[m.sample_id].push_back({m.window.begin, graph.node_id(l, assignments[l][i])});
    }
  return hits;
}

Matrix stage_represent(const std::vector<std::vector<NodeHit>>& hits, const NodeEmbeddings& emb, const MTSDataset& ds,
                       std::size_t segment_length) {
  return represent_dataset(hits, emb, segment_length, ds.T);
}

namespace {

std::vector<std::size_t> fit_rows(const Fold& split) {
  std::vector<std::size_t> rows = split.train;
  rows.insert(rows.end(), split.val.begin(), split.val.end());
  std::sort(rows.begin(), rows.end());
  return rows;
}

Matrix take_rows(const Matrix& X, const std::vector<std::size_t>& rows) {
  Matrix out(rows.size(), X.cols);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= X.rows) throw Error("feature matrix has fewer rows than the dataset");
    std::copy(X.row(rows[i]).begin(), X.row(rows[i]).end(), out.row(i).begin());
  }
  return out;
}

std::vector<int> take_labels(const MTSDataset& ds, const std::vector<std::size_t>& rows) {
  std::vector<int> y;
  for (auto r : rows) y.push_back(ds.samples.at(r).label);
  return y;
}

}  // namespace

GBDTModel stage_fit(const Matrix& features, const MTSDataset& ds, const Fold& split, const PipelineConfig& cfg,
                    std::uint64_t seed) {
  GBDTConfig c = cfg.gbdt;
  c.seed = seed;
  const auto rows = fit_rows(split);
  return fit(take_rows(features, rows), take_labels(ds, rows), c);
}

double stage_evaluate(const GBDTModel& model, const Matrix& features, const MTSDataset& ds, const Fold& split,
                      std::vector<int>* predictions) {
  const auto X = take_rows(features, split.test);
  const auto y = take_labels(ds, split.test);
  const auto pred = predict(model, X);
  if (predictions) *predictions = pred.labels;
  return accuracy(pred.labels, y);
}

// ---------------------------------------------------------------- serialisation of small artifacts

std::string serialize_split(const Fold& split, std::size_t fold, const std::string& dataset_sha) {
  json j = {{"format", "mts2graph-split"}, {"version", 1},        {"fold", fold},          {"dataset_sha256", dataset_sha},
            {"train", split.train},        {"val", split.val},    {"test", split.test}};
  return j.dump() + "\n";
}

Fold deserialize_split(const std::string& bytes, std::string* dataset_sha) {
  try {
    const auto j = json::parse(bytes);
    Fold f;
    f.train = j.at("train").get<std::vector<std::size_t>>();
    f.val = j.at("val").get<std::vector<std::size_t>>();
    f.test = j.at("test").get<std::vector<std::size_t>>();
    if (dataset_sha) *dataset_sha = j.at("dataset_sha256").get<std::string>();
    return f;
  } catch (const json::exception& e) {
    throw Error(std::string("split file: ") + e.what());
  }
}

std::string serialize_thresholds(const ActivationThresholds& thr) {
  json j = {{"format", "mts2graph-thresholds"}, {"version", 1},          {"q", thr.q},
            {"pool", thr.pool_policy},          {"values", thr.values}};
  return j.dump() + "\n";
}

ActivationThresholds deserialize_thresholds(const std::string& bytes) {
  try {
    const auto j = json::parse(bytes);
    ActivationThresholds t;
    t.q = j.at("q").get<double>();
    t.pool_policy = j.at("pool").get<std::string>();
    t.values = j.at("values").get<std::vector<std::vector<double>>>();
    return t;
  } catch (const json::exception& e) {
    throw Error(std::string("threshold file: ") + e.what());
  }
}

std::string serialize_assignments(const std::vector<std::vector<std::size_t>>& a) {
  std::ostringstream out;
  out << "# mts2graph-assignments v1\n# layers " << a.size() << '\n';
  for (std::size_t l = 0; l < a.size(); ++l) {
    out << l << ' ' << a[l].size();
    for (auto v : a[l]) out << ' ' << v;
    out << '\n';
  }
  return out.str();
}

std::vector<std::vector<std::size_t>> deserialize_assignments(const std::string& bytes) {
  std::istringstream in(bytes);
  std::string line;
  std::vector<std::vector<std::size_t>> a;
  std::size_t layers = 0;
  bool header = false;
  while (std::getline(in, line)) {
    if (line.rfind("# layers ", 0) == 0) {
      layers = std::stoul(line.substr(9));
      a.resize(layers);
      header = true;
      continue;
    }
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ss(line);
    std::size_t l, n;
    if (!(ss >> l >> n) || l >= layers) throw Error("assignment file: malformed line");
    a[l].resize(n);
    for (auto& v : a[l])
      if (!(ss >> v)) throw Error("assignment file: short line for layer " + std::to_string(l));
  }
  if (!header) throw Error("assignment file: missing header");
  return a;
}

// ---------------------------------------------------------------- fold runs

const std::vector<std::string>& stage_names() {
  static const std::vector<std::string> names{"split", "train", "thresholds", "extract", "cluster", "assign",
                                              "graph", "embed", "represent",  "fit",     "evaluate"};
  return names;
}

std::filesystem::path fold_dir(const std::filesystem::path& out, std::size_t fold) {
  std::ostringstream name;
  name << "fold_" << std::setw(2) << std::setfill('0') << fold;
  return out / name.str();
}

namespace {

using Clock = std::chrono::steady_clock;

template <typename Fn>
auto timed(std::map<std::string, double>& seconds, const std::string& stage, Fn&& fn) {
  const auto t0 = Clock::now();
  try {
    if constexpr (std::is_void_v<decltype(fn())>) {
      fn();
      seconds[stage] += std::chrono::duration<double>(Clock::now() - t0).count();
    } else {
      auto r = fn();
      seconds[stage] += std::chrono::duration<double>(Clock::now() - t0).count();
      return r;
    }
  } catch (const Error& e) {
    throw Error("stage " + stage + ": " + e.what());
  }
}

std::string to_text(const auto& writer) {
  std::ostringstream ss;
  writer(ss);
  return ss.str();
}

std::string evaluation_bytes(const FoldState& st) {
  json j = {{"format", "mts2graph-evaluation"}, {"version", 1},  {"fold", st.fold}, {"accuracy", st.accuracy},
            {"test", st.split.test},            {"predictions", st.test_predictions}};
  return j.dump() + "\n";
}

void persist(ArtifactStore& store, const std::string& stage, const FoldState& st, const MTSDataset& ds,
             const PipelineConfig& cfg) {
  if (stage == "split")
    store.put("split", "split.json", serialize_split(st.split, st.fold, dataset_fingerprint(ds)), std::nullopt);
  else if (stage == "train")
    store.put("train", "checkpoint.bin", serialize_checkpoint(st.model), "split");
  else if (stage == "thresholds")
    store.put("thresholds", "thresholds.json", serialize_thresholds(st.thresholds), "train");
  else if (stage == "extract")
    store.put("extract", "mhaps.txt", to_text([&](std::ostream& o) { write_mhap_dump(o, st.mhaps); }), "thresholds");
  else if (stage == "cluster")
    store.put("cluster", "clusters.bin", serialize_cluster_model(st.clusters), "extract");
  else if (stage == "assign")
    store.put("assign", "assignments.txt", serialize_assignments(st.assignments), "cluster");
  else if (stage == "graph")
    store.put("graph", "graph.tsv", to_text([&](std::ostream& o) { write_adjacency(o, st.graph); }), "assign");
  else if (stage == "embed")
    store.put("embed", "embeddings.txt",
              to_text([&](std::ostream& o) { write_embeddings(o, st.embeddings, stage_seeds(cfg.seed, st.fold).embedding); }), "graph");
  else if (stage == "represent")
    store.put("represent", "features.txt", to_text([&](std::ostream& o) { write_features(o, st.features, ds.labels()); }),
              "embed");
  else if (stage == "fit")
    store.put("fit", "gbdt.txt", to_text([&](std::ostream& o) { write_gbdt(o, st.classifier); }), "represent");
  else if (stage == "evaluate")
    store.put("evaluate", "evaluation.json", evaluation_bytes(st), "fit");
  else
    throw Error("unknown stage '" + stage + "'");
}

std::vector<std::size_t> effective_counts(const ClusterModel& m) {
  std::vector<std::size_t> k;
  for (const auto& l : m.layers) k.push_back(l.k);
  return k;
}

void compute_stage(const std::string& stage, FoldState& st, const MTSDataset& ds, const PipelineConfig& cfg) {
  const auto seeds = stage_seeds(cfg.seed, st.fold);
  auto& t = st.seconds;
  if (stage == "train") {
    st.model = timed(t, stage, [&] { return stage_train(ds, st.split, cfg, seeds.cnn); });
  } else if (stage == "thresholds") {
    st.thresholds = timed(t, stage, [&] { return stage_thresholds(st.model, ds, st.split, cfg); });
  } else if (stage == "extract") {
    st.mhaps = timed(t, stage, [&] { return stage_extract(st.model, ds, st.thresholds, cfg); });
  } else if (stage == "cluster") {
    st.clusters = timed(t, stage, [&] { return stage_cluster(st.mhaps, st.split, cfg, seeds.kshape); });
  } else if (stage == "assign") {
    st.assignments = timed(t, stage, [&] { return stage_assign(st.mhaps, st.clusters); });
  } else if (stage == "graph") {
    st.graph = timed(t, stage, [&] {
      return stage_graph(st.mhaps, st.assignments, st.split, st.model, effective_counts(st.clusters));
    });
  } else if (stage == "embed") {
    st.embeddings = timed(t, stage, [&] { return stage_embed(st.graph, cfg, seeds.embedding); });
  } else if (stage == "represent") {
    st.features = timed(t, stage, [&] {
      return stage_represent(node_hits(st.mhaps, st.assignments, st.graph, ds.size()), st.embeddings, ds,
                             cfg.segment_length);
    });
  } else if (stage == "fit") {
    st.classifier = timed(t, stage, [&] { return stage_fit(st.features, ds, st.split, cfg, seeds.gbdt); });
  } else if (stage == "evaluate") {
    st.accuracy = timed(t, stage, [&] { return stage_evaluate(st.classifier, st.features, ds, st.split, &st.test_predictions); });
  } else {
    throw Error("unknown stage '" + stage + "'");
  }
}

}  // namespace

FoldState run_fold(const MTSDataset& ds, const FoldPlan& plan, std::size_t fold, const PipelineConfig& cfg,
                   ArtifactStore* store) {
  cfg.validate(ds);
  if (fold >= plan.folds.size()) throw Error("fold " + std::to_string(fold) + " not in plan");
  FoldState st;
  st.fold = fold;
  st.split = plan.folds[fold];
  for (const auto& stage : stage_names()) {
    if (stage != "split") compute_stage(stage, st, ds, cfg);
    if (store) persist(*store, stage, st, ds, cfg);
  }
  return st;
}

double rerun_with_segment_length(const FoldState& st, const MTSDataset& ds, const PipelineConfig& cfg,
                                 std::size_t segment_length) {
  PipelineConfig c = cfg;
  c.segment_length = segment_length;
  const auto seeds = stage_seeds(cfg.seed, st.fold);
  const auto X = stage_represent(node_hits(st.mhaps, st.assignments, st.graph, ds.size()), st.embeddings, ds, segment_length);
  const auto model = stage_fit(X, ds, st.split, c, seeds.gbdt);
  return stage_evaluate(model, X, ds, st.split);
}

// ---------------------------------------------------------------- reports

FoldReport fold_report(const FoldState& st) {
  FoldReport r;
  r.fold = st.fold;
  r.accuracy = st.accuracy;
  r.train = st.split.train.size();
  r.val = st.split.val.size();
  r.test = st.split.test.size();
  r.cnn_best_epoch = st.model.metrics.best_epoch;
  r.cnn_best_val_accuracy = st.model.metrics.best_val_accuracy;
  for (const auto& l : st.mhaps) r.mhaps_per_layer.push_back(l.size());
  r.graph = graph_stats(st.graph);
  r.embedding_initial_loss = st.embeddings.initial_loss;
  r.embedding_final_loss = st.embeddings.epoch_loss.empty() ? st.embeddings.initial_loss : st.embeddings.epoch_loss.back();
  r.seconds = st.seconds;
  return r;
}

PipelineReport summarize(std::vector<FoldReport> folds) {
  PipelineReport r;
  r.folds = std::move(folds);
  if (r.folds.empty()) return r;
  double sum = 0.0;
  for (const auto& f : r.folds) {
    sum += f.accuracy;
    for (const auto& [k, v] : f.seconds) r.seconds[k] += v;
  }
  r.mean_accuracy = sum / static_cast<double>(r.folds.size());
  double var = 0.0;
  for (const auto& f : r.folds) var += (f.accuracy - r.mean_accuracy) * (f.accuracy - r.mean_accuracy);
  r.std_accuracy = std::sqrt(var / static_cast<double>(r.folds.size()));
  return r;
}

json metrics_json(const PipelineReport& r) {
  json folds = json::array();
  for (const auto& f : r.folds) {
    json layers = json::array();
    for (const auto& l : f.graph.per_layer)
      layers.push_back({{"nodes", l.nodes},
                        {"intra_edges", l.intra_edges},
                        {"intra_weight", l.intra_weight},
                        {"cross_in_edges", l.cross_in_edges},
                        {"cross_in_weight", l.cross_in_weight}});
    folds.push_back({{"fold", f.fold},
                     {"accuracy", f.accuracy},
                     {"train", f.train},
                     {"val", f.val},
                     {"test", f.test},
                     {"cnn_best_epoch", f.cnn_best_epoch},
                     {"cnn_best_val_accuracy", f.cnn_best_val_accuracy},
                     {"mhaps_per_layer", f.mhaps_per_layer},
                     {"graph",
                      {{"nodes", f.graph.nodes}, {"edges", f.graph.edges}, {"total_weight", f.graph.total_weight}, {"layers", layers}}},
                     {"embedding_loss", {{"initial", f.embedding_initial_loss}, {"final", f.embedding_final_loss}}}});
  }
  return {{"format", "mts2graph-metrics"},
          {"version", 1},
          {"folds", folds},
          {"mean_accuracy", r.mean_accuracy},
          {"std_accuracy", r.std_accuracy}};
}

json timing_json(const PipelineReport& r) {
  json folds = json::array();
  for (const auto& f : r.folds) folds.push_back({{"fold", f.fold}, {"seconds", f.seconds}});
  return {{"folds", folds}, {"total_seconds", r.seconds}};
}

std::string metrics_text(const PipelineReport& r) {
  std::ostringstream out;
  out << std::fixed << std::setprecision(4);
  out << "fold  accuracy  train  val  test  nodes  edges  weight\n";
  for (const auto& f : r.folds)
    out << std::setw(4) << f.fold << "  " << std::setw(8) << f.accuracy << "  " << std::setw(5) << f.train << "  "
        << std::setw(3) << f.val << "  " << std::setw(4) << f.test << "  " << std::setw(5) << f.graph.nodes << "  "
        << std::setw(5) << f.graph.edges << "  " << f.graph.total_weight << '\n';
  out << "mean accuracy: " << r.mean_accuracy << " +/- " << r.std_accuracy << " (" << r.folds.size() << " folds)\n";
  double total = 0.0;
  for (const auto& [k, v] : r.seconds) total += v;
  out << "time per stage (summed over folds):\n";
  for (const auto& name : stage_names()) {
    const auto it = r.seconds.find(name);
    if (it == r.seconds.end()) continue;
    out << "  " << std::left << std::setw(11) << name << std::right << std::setw(10) << std::setprecision(2) << it->second
        << " s  " << std::setw(5) << std::setprecision(1) << (total > 0 ? 100.0 * it->second / total : 0.0) << "%\n";
  }
  return out.str();
}

PipelineReport run_pipeline(const PipelineConfig& cfg) {
  if (cfg.out.empty()) throw Error("config: output directory is empty");
  const auto ds = prepare_dataset(cfg);
  cfg.validate(ds);
  std::filesystem::create_directories(cfg.out);
  save_config(cfg, cfg.out / "config.json");
  const auto plan = make_folds(ds, cfg.folds, stage_seeds(cfg.seed, 0).folds);
  const std::size_t n = cfg.max_folds ? std::min(cfg.max_folds, plan.folds.size()) : plan.folds.size();
  std::vector<FoldReport> reports;
  for (std::size_t f = 0; f < n; ++f) {
    ArtifactStore store(fold_dir(cfg.out, f));
    reports.push_back(fold_report(run_fold(ds, plan, f, cfg, &store)));
  }
  auto report = summarize(std::move(reports));
  write_text_file(cfg.out / "metrics.json", metrics_json(report).dump(2) + "\n");
  write_text_file(cfg.out / "timing.json", timing_json(report).dump(2) + "\n");
  write_text_file(cfg.out / "report.txt", metrics_text(report));
  return report;
}

// ---------------------------------------------------------------- loading and single stages

FoldState load_fold_state(const ArtifactStore& store, const MTSDataset& ds) {
  FoldState st;
  for (const auto& stage : stage_names()) {
    if (!store.has(stage)) break;
    const auto bytes = store.get(stage);
    if (stage == "split") {
      std::string sha;
      st.split = deserialize_split(bytes, &sha);
      st.fold = json::parse(bytes).at("fold").get<std::size_t>();
      if (sha != dataset_fingerprint(ds)) throw Error("fold " + std::to_string(st.fold) + " was computed on a different dataset");
    } else if (stage == "train") {
      st.model = deserialize_checkpoint(bytes);
    } else if (stage == "thresholds") {
      st.thresholds = deserialize_thresholds(bytes);
    } else if (stage == "extract") {
      std::istringstream in(bytes);
      st.mhaps = read_mhap_dump(in);
    } else if (stage == "cluster") {
      st.clusters = deserialize_cluster_model(bytes);
    } else if (stage == "assign") {
      st.assignments = deserialize_assignments(bytes);
    } else if (stage == "graph") {
      std::istringstream in(bytes);
      st.graph = read_adjacency(in);
    } else if (stage == "embed") {
      std::istringstream in(bytes);
      st.embeddings = read_embeddings(in);
    } else if (stage == "represent") {
      std::istringstream in(bytes);
      std::vector<int> labels;
      read_features(in, st.features, labels);
    } else if (stage == "fit") {
      std::istringstream in(bytes);
      st.classifier = read_gbdt(in);
    } else if (stage == "evaluate") {
      const auto j = json::parse(bytes);
      st.accuracy = j.at("accuracy").get<double>();
      st.test_predictions = j.at("predictions").get<std::vector<int>>();
    }
  }
  return st;
}

void run_stage(const std::string& stage, const PipelineConfig& cfg, std::size_t fold) {
  const auto& names = stage_names();
  const auto pos = std::find(names.begin(), names.end(), stage);
  if (pos == names.end()) throw Error("unknown stage '" + stage + "'");
  if (cfg.out.empty()) throw Error("config: output directory is empty");
  const auto ds = prepare_dataset(cfg);
  cfg.validate(ds);
  ArtifactStore store(fold_dir(cfg.out, fold));
  FoldState st;
  if (stage == "split") {
    const auto plan = make_folds(ds, cfg.folds, stage_seeds(cfg.seed, 0).folds);
    if (fold >= plan.folds.size()) throw Error("fold " + std::to_string(fold) + " not in plan");
    st.fold = fold;
    st.split = plan.folds[fold];
  } else {
    const auto& prev = *(pos - 1);
    if (!store.has(prev)) throw Error("stage " + stage + " needs stage " + prev + " to be run first");
    st = load_fold_state(store, ds);
    compute_stage(stage, st, ds, cfg);
  }
  persist(store, stage, st, ds, cfg);
}

// ---------------------------------------------------------------- explanation

Explanation explain_sample(const FoldState& st, const MTSDataset& ds, std::size_t sample_id) {
  if (sample_id >= ds.size())
    throw Error("unknown sample id " + std::to_string(sample_id) + " (dataset has " + std::to_string(ds.size()) + " samples)");
  struct Row {
    const MHAP* m;
    std::size_t node;
  };
  std::vector<Row> rows;
  const std::size_t L = st.mhaps.size();
  for (std::size_t l = 0; l < L; ++l)
    for (std::size_t i = 0; i < st.mhaps[l].size(); ++i)
      if (st.mhaps[l][i].sample_id == sample_id) rows.push_back({&st.mhaps[l][i], st.graph.node_id(l, st.assignments.at(l).at(i))});
  std::stable_sort(rows.begin(), rows.end(), [](const Row& a, const Row& b) {
    if (a.m->window.begin != b.m->window.begin) return a.m->window.begin < b.m->window.begin;
    return a.m->layer < b.m->layer;
  });

  Explanation ex;
  ex.paths.assign(L, {});
  std::ostringstream out;
  const auto& s = ds.samples[sample_id];
  out << "sample " << sample_id << " (label " << s.label;
  if (static_cast<std::size_t>(s.label) < ds.class_names.size()) out << " '" << ds.class_names[static_cast<std::size_t>(s.label)] << "'";
  out << "), fold " << st.fold << '\n';
  if (rows.empty()) {
    out << "no highly activated periods\n";
  } else {
    // recompute activations of every masked variant once
    std::map<std::string, ForwardResult> forward;
    out << "window        channels  layer  node  peak       threshold  recomputed\n";
    for (const auto& r : rows) {
      const auto& m = *r.m;
      const auto bits = m.mask.bits();
      auto it = forward.find(bits);
      if (it == forward.end()) it = forward.emplace(bits, forward_with_activations(st.model, apply_mask(s, m.mask))).first;
      const double recomputed = it->second.activations.at(m.layer).values(m.channel, m.neuron);
      const double thr = st.thresholds.at(m.layer, m.channel);
      const bool ok = recomputed >= thr;
      ex.verified = ex.verified && ok;
      std::ostringstream win;
      win << '[' << m.window.begin << ", " << m.window.end << ']';
      out << std::left << std::setw(14) << win.str() << std::setw(10) << bits << std::right << std::setw(5) << m.layer
          << std::setw(6) << r.node << "  " << std::setw(9) << std::setprecision(5) << m.peak << "  " << std::setw(9) << thr
          << "  " << std::setw(9) << recomputed << (ok ? "" : "  BELOW THRESHOLD") << '\n';
      ex.paths[m.layer].push_back(r.node);
    }
  }
  std::vector<EdgeKey> highlight;
  std::set<std::size_t> nodes;
  for (std::size_t l = 0; l < L; ++l) {
    if (ex.paths[l].empty()) continue;
    out << "layer " << l << " path: ";
    for (std::size_t i = 0; i < ex.paths[l].size(); ++i) {
      out << (i ? " -> " : "") << ex.paths[l][i];
      nodes.insert(ex.paths[l][i]);
      if (i) highlight.emplace_back(ex.paths[l][i - 1], ex.paths[l][i]);
    }
    out << '\n';
  }
  if (!rows.empty()) out << (ex.verified ? "all windows re-verified against thresholds\n" : "some windows failed re-verification\n");
  ex.text = out.str();

  DotOptions opts;
  opts.name = "sample_" + std::to_string(sample_id);
  opts.restrict_to = std::vector<std::size_t>(nodes.begin(), nodes.end());
  opts.highlight = highlight;
  std::ostringstream dot;
  write_dot(dot, st.graph, opts);
  ex.dot = dot.str();
  return ex;
}

Explanation explain_sample(const PipelineConfig& cfg, std::size_t fold, std::size_t sample_id) {
  const auto ds = prepare_dataset(cfg);
  ArtifactStore store(fold_dir(cfg.out, fold));
  for (const char* needed : {"train", "thresholds", "extract", "assign", "graph"})
    if (!store.has(needed)) throw Error(std::string("explain: fold is missing stage ") + needed);
  return explain_sample(load_fold_state(store, ds), ds, sample_id);
}

// ---------------------------------------------------------------- sweep

SweepParameter parse_sweep_parameter(const std::string& name) {
  if (name == "embedding.dim" || name == "D" || name == "dim") return SweepParameter::EmbeddingDim;
  if (name == "representation.segment_length" || name == "segment_length") return SweepParameter::SegmentLength;
  if (name == "kshape.cluster_counts" || name == "cluster_counts") return SweepParameter::ClusterCounts;
  throw Error("unknown sweep parameter '" + name + "' (use embedding.dim, representation.segment_length or kshape.cluster_counts)");
}

namespace {

std::size_t parse_positive(const std::string& s) {
  std::size_t pos = 0;
  unsigned long v = 0;
  try {
    v = std::stoul(s, &pos);
  } catch (const std::exception&) {
    throw Error("sweep: '" + s + "' is not a positive integer");
  }
  if (pos != s.size() || v == 0) throw Error("sweep: '" + s + "' is not a positive integer");
  return v;
}

std::vector<std::size_t> parse_counts(const std::string& s) {
  std::vector<std::size_t> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_positive(item));
  return out;
}

}  // namespace

std::vector<SweepRow> sweep(const PipelineConfig& cfg, SweepParameter param, const std::vector<std::string>& grid) {
  if (grid.empty()) return {};
  // validate the whole grid before any work
  for (const auto& v : grid) {
    if (param == SweepParameter::ClusterCounts) {
      if (parse_counts(v).size() != cfg.cnn.conv_layers.size())
        throw Error("sweep: cluster counts '" + v + "' do not match the " + std::to_string(cfg.cnn.conv_layers.size()) + " conv layers");
    } else {
      parse_positive(v);
    }
  }
  const auto ds = prepare_dataset(cfg);
  cfg.validate(ds);
  const auto plan = make_folds(ds, cfg.folds, stage_seeds(cfg.seed, 0).folds);
  const auto base = run_fold(ds, plan, 0, cfg);
  const auto seeds = stage_seeds(cfg.seed, 0);

  std::vector<SweepRow> rows;
  for (const auto& v : grid) {
    PipelineConfig c = cfg;
    FoldState st = base;
    if (param == SweepParameter::SegmentLength) {
      rows.push_back({v, rerun_with_segment_length(base, ds, c, parse_positive(v))});
      continue;
    }
    if (param == SweepParameter::ClusterCounts) {
      c.cluster_counts = parse_counts(v);
      st.clusters = stage_cluster(st.mhaps, st.split, c, seeds.kshape);
      st.assignments = stage_assign(st.mhaps, st.clusters);
      st.graph = stage_graph(st.mhaps, st.assignments, st.split, st.model, effective_counts(st.clusters));
    } else {
      c.embedding.dim = parse_positive(v);
    }
    st.embeddings = stage_embed(st.graph, c, seeds.embedding);
    st.features = stage_represent(node_hits(st.mhaps, st.assignments, st.graph, ds.size()), st.embeddings, ds, c.segment_length);
    st.classifier = stage_fit(st.features, ds, st.split, c, seeds.gbdt);
    rows.push_back({v, stage_evaluate(st.classifier, st.features, ds, st.split)});
  }
  return rows;
}

std::string sweep_table(const std::vector<SweepRow>& rows, const std::string& header) {
  std::ostringstream out;
  out << header << "\taccuracy\n";
  out << std::fixed << std::setprecision(4);
  for (const auto& r : rows) out << r.value << '\t' << r.accuracy << '\n';
  return out.str();
}

}  // namespace mts2graph
