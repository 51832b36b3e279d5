#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"
#include "mts2graph/artifacts.hpp"
#include "mts2graph/dataset.hpp"
#include "mts2graph/embedding.hpp"
#include "mts2graph/evograph.hpp"
#include "mts2graph/gbdt.hpp"
#include "mts2graph/kshape.hpp"
#include "mts2graph/mhap.hpp"
#include "mts2graph/nn.hpp"
#include "mts2graph/representation.hpp"

namespace mts2graph {

struct PipelineConfig {
  std::filesystem::path dataset;
  DatasetFormat format = DatasetFormat::TabularPerSample;
  bool normalize = true;  // per-sample, per-channel z-normalisation before everything else
  CNNConfig cnn;
  double quantile = 0.95;
  bool nms = true;
  InputSetPolicy input_set = InputSetPolicy::Auto;
  std::vector<std::size_t> cluster_counts{38, 28, 18};
  KShapeOptions kshape;
  /// Upper bound on MHAPs per layer fed to K-shape (seeded subsample); 0 = all.
  std::size_t kshape_max_samples = 0;
  EmbeddingConfig embedding;
  std::size_t segment_length = 10;
  GBDTConfig gbdt;
  std::size_t folds = 10;
  /// Run only the first `max_folds` folds of the plan; 0 = all.
  std::size_t max_folds = 0;
  std::uint64_t seed = 0;
  std::filesystem::path out;

  /// Layer count agreement and per-module parameter checks (T known once the dataset is loaded).
  void validate() const;
  void validate(const MTSDataset& ds) const;
};

nlohmann::json config_to_json(const PipelineConfig& cfg);
/// Missing keys keep their defaults; unknown keys are rejected.
PipelineConfig config_from_json(const nlohmann::json& j);
PipelineConfig load_config(const std::filesystem::path& path);
void save_config(const PipelineConfig& cfg, const std::filesystem::path& path);

/// Sets `dotted.key` in a config document. The value is parsed as JSON when possible
/// (numbers, booleans, arrays) and taken as a string otherwise.
void apply_override(nlohmann::json& doc, const std::string& dotted_key, const std::string& value);

/// Seeds of one fold, all derived from the root seed.
struct StageSeeds {
  std::uint64_t folds = 0;
  std::uint64_t cnn = 0;
  std::uint64_t kshape = 0;
  std::uint64_t embedding = 0;
  std::uint64_t gbdt = 0;
};
StageSeeds stage_seeds(std::uint64_t root, std::size_t fold);

/// Loads the dataset and applies normalisation.
MTSDataset prepare_dataset(const PipelineConfig& cfg);
/// SHA-256 of the dataset contents (shape, labels and values as little-endian float64).
std::string dataset_fingerprint(const MTSDataset& ds);

/// Everything computed for one fold. MHAP sample ids are dataset indices; MHAPs are extracted
/// for every sample, the clusters and graph come from training samples only.
struct FoldState {
  std::size_t fold = 0;
  Fold split;
  TrainedCNN model;
  ActivationThresholds thresholds;
  std::vector<std::vector<MHAP>> mhaps;               // [layer]
  ClusterModel clusters;
  std::vector<std::vector<std::size_t>> assignments;  // [layer][mhap] cluster id
  MergedGraph graph;
  NodeEmbeddings embeddings;
  Matrix features;  // one row per dataset sample
  GBDTModel classifier;
  std::vector<int> test_predictions;
  double accuracy = 0.0;
  std::map<std::string, double> seconds;  // wall time per stage
};

// Stage functions. Each is deterministic given its inputs and the config.
TrainedCNN stage_train(const MTSDataset& ds, const Fold& split, const PipelineConfig& cfg, std::uint64_t seed);
ActivationThresholds stage_thresholds(const TrainedCNN& model, const MTSDataset& ds, const Fold& split,
                                      const PipelineConfig& cfg);
std::vector<std::vector<MHAP>> stage_extract(const TrainedCNN& model, const MTSDataset& ds, const ActivationThresholds& thr,
                                             const PipelineConfig& cfg);
ClusterModel stage_cluster(const std::vector<std::vector<MHAP>>& mhaps, const Fold& split, const PipelineConfig& cfg,
                           std::uint64_t seed);
std::vector<std::vector<std::size_t>> stage_assign(const std::vector<std::vector<MHAP>>& mhaps, const ClusterModel& clusters);
MergedGraph stage_graph(const std::vector<std::vector<MHAP>>& mhaps, const std::vector<std::vector<std::size_t>>& assignments,
                        const Fold& split, const TrainedCNN& model, const std::vector<std::size_t>& cluster_counts);
NodeEmbeddings stage_embed(const MergedGraph& graph, const PipelineConfig& cfg, std::uint64_t seed);
/// Per-sample node hits over all layers, indexed by dataset sample.
std::vector<std::vector<NodeHit>> node_hits(const std::vector<std::vector<MHAP>>& mhaps,
                                            const std::vector<std::vector<std::size_t>>& assignments,
                                            const MergedGraph& graph, std::size_t num_samples);
Matrix stage_represent(const std::vector<std::vector<NodeHit>>& hits, const NodeEmbeddings& emb, const MTSDataset& ds,
                       std::size_t segment_length);
/// Fits on train + validation rows.
GBDTModel stage_fit(const Matrix& features, const MTSDataset& ds, const Fold& split, const PipelineConfig& cfg,
                    std::uint64_t seed);
/// Accuracy on the test rows; predictions are written in test order.
double stage_evaluate(const GBDTModel& model, const Matrix& features, const MTSDataset& ds, const Fold& split,
                      std::vector<int>* predictions = nullptr);

/// Runs every stage of one fold in memory. With a store, each stage is persisted as it completes.
FoldState run_fold(const MTSDataset& ds, const FoldPlan& plan, std::size_t fold, const PipelineConfig& cfg,
                   ArtifactStore* store = nullptr);

/// Re-runs representation, fit and evaluation of an existing fold with another segment length.
double rerun_with_segment_length(const FoldState& state, const MTSDataset& ds, const PipelineConfig& cfg,
                                 std::size_t segment_length);

struct FoldReport {
  std::size_t fold = 0;
  double accuracy = 0.0;
  std::size_t train = 0, val = 0, test = 0;
  std::size_t cnn_best_epoch = 0;
  double cnn_best_val_accuracy = 0.0;
  std::vector<std::size_t> mhaps_per_layer;
  GraphStats graph;
  double embedding_initial_loss = 0.0;
  double embedding_final_loss = 0.0;
  std::map<std::string, double> seconds;
};

struct PipelineReport {
  std::vector<FoldReport> folds;
  double mean_accuracy = 0.0;
  double std_accuracy = 0.0;  // population std over folds
  std::map<std::string, double> seconds;  // summed over folds
};

FoldReport fold_report(const FoldState& st);
PipelineReport summarize(std::vector<FoldReport> folds);

/// Metrics document without timings, so identical runs produce identical bytes.
nlohmann::json metrics_json(const PipelineReport& r);
nlohmann::json timing_json(const PipelineReport& r);
std::string metrics_text(const PipelineReport& r);

/// Full run: writes <out>/config.json, <out>/fold_NN/ artifacts, metrics.json, timing.json and report.txt.
PipelineReport run_pipeline(const PipelineConfig& cfg);

std::filesystem::path fold_dir(const std::filesystem::path& out, std::size_t fold);

// Persisting and reloading stage artifacts of one fold.
std::string serialize_split(const Fold& split, std::size_t fold, const std::string& dataset_sha);
Fold deserialize_split(const std::string& bytes, std::string* dataset_sha = nullptr);
std::string serialize_thresholds(const ActivationThresholds& thr);
ActivationThresholds deserialize_thresholds(const std::string& bytes);
std::string serialize_assignments(const std::vector<std::vector<std::size_t>>& a);
std::vector<std::vector<std::size_t>> deserialize_assignments(const std::string& bytes);

/// Names of the fold stages in execution order.
const std::vector<std::string>& stage_names();

/// Loads every stage of a fold present in the store (hash chain checked), stopping at the first missing one.
FoldState load_fold_state(const ArtifactStore& store, const MTSDataset& ds);

/// CLI-level single stage: loads what it needs from the fold store, computes `stage`, persists it.
void run_stage(const std::string& stage, const PipelineConfig& cfg, std::size_t fold);

struct Explanation {
  std::string text;
  std::string dot;
  std::vector<std::vector<std::size_t>> paths;  // per layer, global node ids in temporal order
  bool verified = true;                         // every window's recomputed activation met its threshold
};

/// Per-sample report from a completed fold directory.
Explanation explain_sample(const PipelineConfig& cfg, std::size_t fold, std::size_t sample_id);
Explanation explain_sample(const FoldState& st, const MTSDataset& ds, std::size_t sample_id);

enum class SweepParameter { EmbeddingDim, SegmentLength, ClusterCounts };
SweepParameter parse_sweep_parameter(const std::string& name);

struct SweepRow {
  std::string value;
  double accuracy = 0.0;
};

/// One run per grid point on fold 0, reusing upstream stages that the parameter does not touch.
/// Grid values are strings: integers, or comma lists for cluster counts.
std::vector<SweepRow> sweep(const PipelineConfig& cfg, SweepParameter param, const std::vector<std::string>& grid);
std::string sweep_table(const std::vector<SweepRow>& rows, const std::string& header);

}  // namespace mts2graph
