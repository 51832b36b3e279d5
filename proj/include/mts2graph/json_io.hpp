#pragma once

// JSON conversions for the configuration structs (nlohmann ADL hooks).

#include "json.hpp"
#include "mts2graph/embedding.hpp"
#include "mts2graph/gbdt.hpp"
#include "mts2graph/nn.hpp"

namespace mts2graph {

inline void to_json(nlohmann::json& j, const ConvLayerSpec& s) { j = {{"filters", s.filters}, {"kernel", s.kernel}}; }
inline void from_json(const nlohmann::json& j, ConvLayerSpec& s) {
  j.at("filters").get_to(s.filters);
  j.at("kernel").get_to(s.kernel);
}

inline void to_json(nlohmann::json& j, const CNNConfig& c) {
  j = {{"conv_layers", c.conv_layers}, {"epochs", c.epochs},     {"batch_size", c.batch_size},
       {"learning_rate", c.learning_rate}, {"momentum", c.momentum}, {"seed", c.seed}};
}
inline void from_json(const nlohmann::json& j, CNNConfig& c) {
  const CNNConfig d;
  c.conv_layers = j.value("conv_layers", d.conv_layers);
  c.epochs = j.value("epochs", d.epochs);
  c.batch_size = j.value("batch_size", d.batch_size);
  c.learning_rate = j.value("learning_rate", d.learning_rate);
  c.momentum = j.value("momentum", d.momentum);
  c.seed = j.value("seed", d.seed);
}

inline void to_json(nlohmann::json& j, const EmbeddingConfig& c) {
  j = {{"dim", c.dim},           {"walks_per_node", c.walks_per_node}, {"walk_length", c.walk_length},
       {"window", c.window},     {"negatives", c.negatives},           {"epochs", c.epochs},
       {"learning_rate", c.learning_rate}, {"seed", c.seed}};
}
inline void from_json(const nlohmann::json& j, EmbeddingConfig& c) {
  const EmbeddingConfig d;
  c.dim = j.value("dim", d.dim);
  c.walks_per_node = j.value("walks_per_node", d.walks_per_node);
  c.walk_length = j.value("walk_length", d.walk_length);
  c.window = j.value("window", d.window);
  c.negatives = j.value("negatives", d.negatives);
  c.epochs = j.value("epochs", d.epochs);
  c.learning_rate = j.value("learning_rate", d.learning_rate);
  c.seed = j.value("seed", d.seed);
}

inline void to_json(nlohmann::json& j, const GBDTConfig& c) {
  j = {{"rounds", c.rounds},
       {"max_depth", c.max_depth},
       {"learning_rate", c.learning_rate},
       {"min_samples_leaf", c.min_samples_leaf},
       {"lambda", c.lambda},
       {"seed", c.seed}};
}
inline void from_json(const nlohmann::json& j, GBDTConfig& c) {
  const GBDTConfig d;
  c.rounds = j.value("rounds", d.rounds);
  c.max_depth = j.value("max_depth", d.max_depth);
  c.learning_rate = j.value("learning_rate", d.learning_rate);
  c.min_samples_leaf = j.value("min_samples_leaf", d.min_samples_leaf);
  c.lambda = j.value("lambda", d.lambda);
  c.seed = j.value("seed", d.seed);
}

}  // namespace mts2graph
