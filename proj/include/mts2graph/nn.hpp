#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "mts2graph/common.hpp"
#include "mts2graph/dataset.hpp"

namespace mts2graph {

struct ConvLayerSpec {
  std::size_t filters = 0;
  std::size_t kernel = 0;
  bool operator==(const ConvLayerSpec&) const = default;
};

/// Architecture and optimiser settings. Stride is 1 and there is no padding.
struct CNNConfig {
  std::vector<ConvLayerSpec> conv_layers{{32, 8}, {64, 5}, {128, 3}};
  std::size_t epochs = 500;
  std::size_t batch_size = 16;
  double learning_rate = 1e-3;
  double momentum = 0.9;
  std::uint64_t seed = 0;

  /// Output length of each conv layer for input length T (L_l = L_{l-1} - k_l + 1).
  /// Throws Error if any length would drop below 1.
  std::vector<std::size_t> layer_lengths(std::size_t T) const;
  void validate(std::size_t T) const;
};

struct ConvLayer {
  std::size_t filters = 0;
  std::size_t in_channels = 0;
  std::size_t kernel = 0;
  std::vector<double> weights;  // filters x in_channels x kernel
  std::vector<double> bias;     // filters
};

struct TrainingMetrics {
  std::size_t best_epoch = 0;
  double best_val_accuracy = 0.0;
  std::vector<double> epoch_train_loss;
  std::vector<double> epoch_val_accuracy;
};

/// Conv stack (conv -> ReLU per layer), global average pooling and a dense softmax head.
struct TrainedCNN {
  std::size_t input_channels = 0;
  std::size_t input_length = 0;
  std::size_t num_classes = 0;
  CNNConfig config;
  std::vector<ConvLayer> conv;
  Matrix dense_w;  // num_classes x filters of last layer
  std::vector<double> dense_b;
  TrainingMetrics metrics;

  std::size_t num_layers() const { return conv.size(); }
  std::size_t layer_length(std::size_t layer) const;
  /// 1 + sum_{i <= layer} (kernel_i - 1)
  std::size_t rf_length(std::size_t layer) const;
};

/// Post-ReLU output of one conv layer, filters x neurons.
struct ActivationTensor {
  std::size_t layer = 0;
  Matrix values;
};

struct ForwardResult {
  std::vector<double> probs;
  std::vector<ActivationTensor> activations;
};

/// Inclusive input-time interval.
struct Interval {
  std::size_t begin = 0;
  std::size_t end = 0;
  std::size_t length() const { return end - begin + 1; }
  bool operator==(const Interval&) const = default;
};

/// Gradients with the same layout as the model parameters.
struct CNNGradients {
  std::vector<std::vector<double>> conv_w;
  std::vector<std::vector<double>> conv_b;
  Matrix dense_w;
  std::vector<double> dense_b;
};

/// Randomly initialised model (Glorot-uniform weights, zero biases) seeded from cfg.seed.
TrainedCNN init_cnn(std::size_t d, std::size_t T, std::size_t C, const CNNConfig& cfg);

/// Momentum SGD on mean cross-entropy; returns the weights of the epoch with the best
/// validation accuracy (earliest on ties). Weights are rounded to float32 on return so
/// that checkpoints reproduce the model exactly. Single threaded and deterministic.
TrainedCNN train_cnn(const MTSDataset& train, const MTSDataset& val, const CNNConfig& cfg);

ForwardResult forward_with_activations(const TrainedCNN& model, const MTSSample& sample);

/// Mean cross-entropy over `batch` and its gradient with respect to every parameter.
double loss_and_gradients(const TrainedCNN& model, const std::vector<const MTSSample*>& batch, CNNGradients& grads);

/// Mean cross-entropy over a dataset.
double dataset_loss(const TrainedCNN& model, const MTSDataset& ds);

Interval receptive_field(const TrainedCNN& model, std::size_t layer, std::size_t neuron);

struct Prediction {
  std::vector<int> labels;
  double accuracy = 0.0;
};

/// Arg-max labels (ties to the lowest class) and their accuracy against ds labels.
Prediction predict(const TrainedCNN& model, const MTSDataset& ds);

/// Checkpoint container; see docs/formats.md.
std::string serialize_checkpoint(const TrainedCNN& model);
TrainedCNN deserialize_checkpoint(const std::string& bytes);
void save_checkpoint(const TrainedCNN& model, const std::filesystem::path& path);
TrainedCNN load_checkpoint(const std::filesystem::path& path);

}  // namespace mts2graph
