#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <vector>

#include "mts2graph/common.hpp"

namespace mts2graph {

struct GBDTConfig {
  std::size_t rounds = 200;
  std::size_t max_depth = 3;
  double learning_rate = 0.1;
  std::size_t min_samples_leaf = 2;
  double lambda = 1.0;  // L2 penalty on leaf weights
  std::uint64_t seed = 0;

  void validate() const;
};

struct TreeNode {
  int feature = -1;  // -1 marks a leaf
  double threshold = 0.0;
  int left = -1;     // x[feature] <= threshold
  int right = -1;
  double value = 0.0;
};

struct RegressionTree {
  std::vector<TreeNode> nodes;
  double predict(std::span<const double> x) const;
};

struct GBDTModel {
  std::size_t num_features = 0;
  std::size_t num_classes = 0;
  double learning_rate = 0.1;
  std::uint64_t seed = 0;
  std::vector<std::vector<RegressionTree>> rounds;  // [round][class]
  std::vector<double> train_loss;                   // mean softmax loss after each round; [0] before any round

  /// Raw per-class scores (sum of learning_rate * tree outputs).
  std::vector<double> scores(std::span<const double> x) const;
};

/// Mean multiclass softmax cross-entropy of `scores` (n x C) and its gradient and diagonal
/// Hessian per (sample, class), unscaled by 1/n.
struct SoftmaxGradients {
  double loss = 0.0;
  Matrix grad;
  Matrix hess;
};
SoftmaxGradients softmax_gradients(const Matrix& scores, const std::vector<int>& y);

/// Newton boosting with exact greedy splits: one regression tree per class and round.
GBDTModel fit(const Matrix& X, const std::vector<int>& y, const GBDTConfig& cfg);

struct GBDTPrediction {
  Matrix probs;
  std::vector<int> labels;
};

GBDTPrediction predict(const GBDTModel& model, const Matrix& X);
double evaluate(const GBDTModel& model, const Matrix& X, const std::vector<int>& y);
/// Fraction of exact label matches.
double accuracy(const std::vector<int>& predicted, const std::vector<int>& truth);

/// Versioned text serialisation: header, then one line per tree node.
void write_gbdt(std::ostream& out, const GBDTModel& model);
GBDTModel read_gbdt(std::istream& in);

}  // namespace mts2graph
