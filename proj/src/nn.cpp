#include "mts2graph/nn.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <sstream>

#include "json.hpp"
#include "mts2graph/json_io.hpp"
#include "mts2graph/kernels.hpp"
#include "binary_io.hpp"

namespace mts2graph {

using nlohmann::json;

std::vector<std::size_t> CNNConfig::layer_lengths(std::size_t T) const {
  std::vector<std::size_t> lengths;
  std::size_t L = T;
  for (std::size_t l = 0; l < conv_layers.size(); ++l) {
    const std::size_t k = conv_layers[l].kernel;
    if (L < k)
      throw Error("architecture invalid for T=" + std::to_string(T) + ": layer " + std::to_string(l) +
                  " output length would be " + std::to_string(static_cast<long long>(L) - static_cast<long long>(k) + 1));
    L = L - k + 1;
    lengths.push_back(L);
  }
  return lengths;
}

void CNNConfig::validate(std::size_t T) const {
  if (conv_layers.size() < 2) throw Error("CNN needs at least two conv layers");
  for (const auto& spec : conv_layers) {
    if (spec.kernel < 2) throw Error("conv kernel width must be at least 2");
    if (spec.filters < 1) throw Error("conv layer needs at least one filter");
  }
  if (batch_size < 1) throw Error("batch_size must be positive");
  if (!(learning_rate > 0.0)) throw Error("learning_rate must be positive");
  layer_lengths(T);
}

std::size_t TrainedCNN::layer_length(std::size_t layer) const {
  std::size_t L = input_length;
  for (std::size_t l = 0; l <= layer; ++l) L = L - conv[l].kernel + 1;
  return L;
}

std::size_t TrainedCNN::rf_length(std::size_t layer) const {
  std::size_t rf = 1;
  for (std::size_t l = 0; l <= layer; ++l) rf += conv[l].kernel - 1;
  return rf;
}

TrainedCNN init_cnn(std::size_t d, std::size_t T, std::size_t C, const CNNConfig& cfg) {
  cfg.validate(T);
  if (C < 1) throw Error("CNN needs at least one class");
  TrainedCNN m;
  m.input_channels = d;
  m.input_length = T;
  m.num_classes = C;
  m.config = cfg;
  std::mt19937_64 rng(derive_seed(cfg.seed, "cnn-init"));
  std::size_t in_ch = d;
  for (const auto& spec : cfg.conv_layers) {
    ConvLayer layer;
    layer.filters = spec.filters;
    layer.in_channels = in_ch;
    layer.kernel = spec.kernel;
    const double fan_in = static_cast<double>(in_ch * spec.kernel);
    const double fan_out = static_cast<double>(spec.filters * spec.kernel);
    std::uniform_real_distribution<double> dist(-std::sqrt(6.0 / (fan_in + fan_out)), std::sqrt(6.0 / (fan_in + fan_out)));
    layer.weights.resize(spec.filters * in_ch * spec.kernel);
    for (double& w : layer.weights) w = dist(rng);
    layer.bias.assign(spec.filters, 0.0);
    m.conv.push_back(std::move(layer));
    in_ch = spec.filters;
  }
  m.dense_w = Matrix(C, in_ch);
  std::uniform_real_distribution<double> dist(-std::sqrt(6.0 / static_cast<double>(in_ch + C)),
                                              std::sqrt(6.0 / static_cast<double>(in_ch + C)));
  for (double& w : m.dense_w.data) w = dist(rng);
  m.dense_b.assign(C, 0.0);
  return m;
}

namespace {

void check_shape(const TrainedCNN& model, const MTSSample& s) {
  if (s.values.rows != model.input_channels || s.values.cols != model.input_length)
    throw Error("shape mismatch: sample is " + std::to_string(s.values.rows) + "x" + std::to_string(s.values.cols) +
                ", model expects " + std::to_string(model.input_channels) + "x" + std::to_string(model.input_length));
}

kernels::ConvShape conv_shape(const ConvLayer& layer, std::size_t in_length) {
  return {layer.in_channels, in_length, layer.filters, layer.kernel};
}

// Runs the conv stack; acts[0] is the input, acts[l + 1] the post-ReLU output of layer l.
template <bool Parallel>
std::vector<Matrix> run_stack(const TrainedCNN& model, const Matrix& input) {
  std::vector<Matrix> acts;
  acts.reserve(model.conv.size() + 1);
  acts.push_back(input);
  for (const auto& layer : model.conv) {
    const Matrix& in = acts.back();
    const auto shape = conv_shape(layer, in.cols);
    Matrix out(layer.filters, shape.out_length());
    if constexpr (Parallel)
      kernels::parallel::conv1d_forward(shape, in.data, layer.weights, layer.bias, out.data, true);
    else
      kernels::serial::conv1d_forward(shape, in.data, layer.weights, layer.bias, out.data, true);
    acts.push_back(std::move(out));
  }
  return acts;
}

std::vector<double> head_logits(const TrainedCNN& model, const Matrix& last, std::vector<double>& pooled) {
  pooled.assign(last.rows, 0.0);
  for (std::size_t f = 0; f < last.rows; ++f) {
    double s = 0.0;
    for (double v : last.row(f)) s += v;
    pooled[f] = s / static_cast<double>(last.cols);
  }
  std::vector<double> logits(model.num_classes);
  for (std::size_t c = 0; c < model.num_classes; ++c) logits[c] = model.dense_b[c] + dot(model.dense_w.row(c), pooled);
  return logits;
}

CNNGradients zero_gradients(const TrainedCNN& model) {
  CNNGradients g;
  for (const auto& layer : model.conv) {
    g.conv_w.emplace_back(layer.weights.size(), 0.0);
    g.conv_b.emplace_back(layer.bias.size(), 0.0);
  }
  g.dense_w = Matrix(model.dense_w.rows, model.dense_w.cols);
  g.dense_b.assign(model.dense_b.size(), 0.0);
  return g;
}

// Accumulates the gradient of -log p[label] for one sample; returns that loss.
double accumulate_sample(const TrainedCNN& model, const MTSSample& sample, CNNGradients& g) {
  const auto acts = run_stack<false>(model, sample.values);
  std::vector<double> pooled;
  const auto logits = head_logits(model, acts.back(), pooled);
  const auto probs = softmax(logits);
  const auto y = static_cast<std::size_t>(sample.label);
  const double loss = -std::log(std::max(probs[y], 1e-300));

  std::vector<double> dlogits = probs;
  dlogits[y] -= 1.0;
  std::vector<double> dpooled(pooled.size(), 0.0);
  for (std::size_t c = 0; c < model.num_classes; ++c) {
    g.dense_b[c] += dlogits[c];
    for (std::size_t f = 0; f < pooled.size(); ++f) {
      g.dense_w(c, f) += dlogits[c] * pooled[f];
      dpooled[f] += dlogits[c] * model.dense_w(c, f);
    }
  }

  const std::size_t L_last = acts.back().cols;
  Matrix dact(acts.back().rows, L_last);
  for (std::size_t f = 0; f < dact.rows; ++f)
    for (std::size_t t = 0; t < L_last; ++t) dact(f, t) = dpooled[f] / static_cast<double>(L_last);

  for (std::size_t li = model.conv.size(); li-- > 0;) {
    const auto& layer = model.conv[li];
    const Matrix& out = acts[li + 1];
    const Matrix& in = acts[li];
    // ReLU: out == 0 exactly where the pre-activation was <= 0
    for (std::size_t i = 0; i < dact.data.size(); ++i)
      if (out.data[i] <= 0.0) dact.data[i] = 0.0;
    auto& gw = g.conv_w[li];
    auto& gb = g.conv_b[li];
    Matrix din(in.rows, in.cols);
    const std::size_t L = out.cols;
    for (std::size_t f = 0; f < layer.filters; ++f) {
      const auto dz = dact.row(f);
      double sb = 0.0;
      for (double v : dz) sb += v;
      gb[f] += sb;
      for (std::size_t c = 0; c < layer.in_channels; ++c) {
        const auto x = in.row(c);
        auto dx = din.row(c);
        const std::size_t base = (f * layer.in_channels + c) * layer.kernel;
        for (std::size_t k = 0; k < layer.kernel; ++k) {
          const double w = layer.weights[base + k];
          double s = 0.0;
          for (std::size_t t = 0; t < L; ++t) {
            s += dz[t] * x[t + k];
            dx[t + k] += dz[t] * w;
          }
          gw[base + k] += s;
        }
      }
    }
    dact = std::move(din);
  }
  return loss;
}

void scale_gradients(CNNGradients& g, double s) {
  for (auto& v : g.conv_w)
    for (double& x : v) x *= s;
  for (auto& v : g.conv_b)
    for (double& x : v) x *= s;
  for (double& x : g.dense_w.data) x *= s;
  for (double& x : g.dense_b) x *= s;
}

void round_to_float(TrainedCNN& m) {
  auto r = [](double& x) { x = static_cast<double>(static_cast<float>(x)); };
  for (auto& layer : m.conv) {
    std::for_each(layer.weights.begin(), layer.weights.end(), r);
    std::for_each(layer.bias.begin(), layer.bias.end(), r);
  }
  std::for_each(m.dense_w.data.begin(), m.dense_w.data.end(), r);
  std::for_each(m.dense_b.begin(), m.dense_b.end(), r);
}

bool all_finite(const TrainedCNN& m) {
  auto ok = [](const std::vector<double>& v) { return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); }); };
  for (const auto& layer : m.conv)
    if (!ok(layer.weights) || !ok(layer.bias)) return false;
  return ok(m.dense_w.data) && ok(m.dense_b);
}

}  // namespace

double loss_and_gradients(const TrainedCNN& model, const std::vector<const MTSSample*>& batch, CNNGradients& grads) {
  grads = zero_gradients(model);
  if (batch.empty()) return 0.0;
  double loss = 0.0;
  for (const auto* s : batch) {
    check_shape(model, *s);
    loss += accumulate_sample(model, *s, grads);
  }
  const double inv = 1.0 / static_cast<double>(batch.size());
  scale_gradients(grads, inv);
  return loss * inv;
}

double dataset_loss(const TrainedCNN& model, const MTSDataset& ds) {
  if (ds.size() == 0) return 0.0;
  double loss = 0.0;
  for (const auto& s : ds.samples) {
    const auto r = forward_with_activations(model, s);
    loss -= std::log(std::max(r.probs[static_cast<std::size_t>(s.label)], 1e-300));
  }
  return loss / static_cast<double>(ds.size());
}

TrainedCNN train_cnn(const MTSDataset& train, const MTSDataset& val, const CNNConfig& cfg) {
  if (train.size() == 0) throw Error("train_cnn: empty training set");
  if (val.size() > 0 && (val.d != train.d || val.T != train.T || val.C != train.C))
    throw Error("train_cnn: train and validation sets differ in shape");
  TrainedCNN model = init_cnn(train.d, train.T, train.C, cfg);
  TrainedCNN best = model;
  double best_acc = -1.0;

  CNNGradients velocity = zero_gradients(model);
  CNNGradients grads;
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  const MTSDataset& selection = val.size() > 0 ? val : train;

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::mt19937_64 rng(derive_seed(cfg.seed, "cnn-shuffle", epoch));
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      std::vector<const MTSSample*> batch;
      for (std::size_t i = start; i < std::min(order.size(), start + cfg.batch_size); ++i)
        batch.push_back(&train.samples[order[i]]);
      epoch_loss += loss_and_gradients(model, batch, grads) * static_cast<double>(batch.size());

      auto step = [&](std::vector<double>& w, std::vector<double>& v, const std::vector<double>& g) {
        for (std::size_t i = 0; i < w.size(); ++i) {
          v[i] = cfg.momentum * v[i] - cfg.learning_rate * g[i];
          w[i] += v[i];
        }
      };
      for (std::size_t l = 0; l < model.conv.size(); ++l) {
        step(model.conv[l].weights, velocity.conv_w[l], grads.conv_w[l]);
        step(model.conv[l].bias, velocity.conv_b[l], grads.conv_b[l]);
      }
      step(model.dense_w.data, velocity.dense_w.data, grads.dense_w.data);
      step(model.dense_b, velocity.dense_b, grads.dense_b);
    }
    if (!all_finite(model)) throw Error("train_cnn: weights diverged at epoch " + std::to_string(epoch));
    const double acc = predict(model, selection).accuracy;
    model.metrics.epoch_train_loss.push_back(epoch_loss / static_cast<double>(train.size()));
    model.metrics.epoch_val_accuracy.push_back(acc);
    if (acc > best_acc) {
      best_acc = acc;
      best = model;
      best.metrics.best_epoch = epoch;
      best.metrics.best_val_accuracy = acc;
    }
  }
  if (cfg.epochs == 0) {
    best_acc = predict(model, selection).accuracy;
    best.metrics.best_val_accuracy = best_acc;
  }
  best.metrics.epoch_train_loss = model.metrics.epoch_train_loss;
  best.metrics.epoch_val_accuracy = model.metrics.epoch_val_accuracy;
  round_to_float(best);
  return best;
}

ForwardResult forward_with_activations(const TrainedCNN& model, const MTSSample& sample) {
  check_shape(model, sample);
  auto acts = run_stack<true>(model, sample.values);
  std::vector<double> pooled;
  ForwardResult r;
  r.probs = softmax(head_logits(model, acts.back(), pooled));
  for (std::size_t l = 0; l < model.conv.size(); ++l) r.activations.push_back({l, std::move(acts[l + 1])});
  return r;
}

Interval receptive_field(const TrainedCNN& model, std::size_t layer, std::size_t neuron) {
  if (layer >= model.num_layers()) throw Error("receptive_field: layer " + std::to_string(layer) + " out of range");
  if (neuron >= model.layer_length(layer))
    throw Error("receptive_field: neuron " + std::to_string(neuron) + " out of range for layer " + std::to_string(layer));
  return {neuron, neuron + model.rf_length(layer) - 1};
}

Prediction predict(const TrainedCNN& model, const MTSDataset& ds) {
  Prediction p;
  p.labels.resize(ds.size());
  std::size_t correct = 0;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const auto r = forward_with_activations(model, ds.samples[i]);
    p.labels[i] = static_cast<int>(argmax(r.probs));
    if (p.labels[i] == ds.samples[i].label) ++correct;
  }
  p.accuracy = ds.size() ? static_cast<double>(correct) / static_cast<double>(ds.size()) : 0.0;
  return p;
}

// ---- checkpoint container ---------------------------------------------------

namespace {

constexpr char kCheckpointMagic[8] = {'M', 'T', 'S', '2', 'G', 'C', 'K', 'P'};
constexpr std::uint32_t kCheckpointVersion = 1;

void put_floats(std::string& blob, const std::vector<double>& v) {
  for (double x : v) binary::put_f32(blob, x);
}

std::vector<double> get_floats(const std::string& bytes, std::size_t pos, std::size_t count) {
  std::vector<double> v(count);
  for (std::size_t i = 0; i < count; ++i) v[i] = binary::get_f32(bytes, pos);
  return v;
}

}  // namespace

std::string serialize_checkpoint(const TrainedCNN& model) {
  std::string blob;
  json tensors = json::array();
  auto add = [&](const std::string& name, const std::vector<std::size_t>& shape, const std::vector<double>& v) {
    tensors.push_back({{"name", name}, {"shape", shape}, {"offset", blob.size()}, {"count", v.size()}});
    put_floats(blob, v);
  };
  for (std::size_t l = 0; l < model.conv.size(); ++l) {
    const auto& layer = model.conv[l];
    add("conv" + std::to_string(l) + ".weight", {layer.filters, layer.in_channels, layer.kernel}, layer.weights);
    add("conv" + std::to_string(l) + ".bias", {layer.filters}, layer.bias);
  }
  add("dense.weight", {model.dense_w.rows, model.dense_w.cols}, model.dense_w.data);
  add("dense.bias", {model.dense_b.size()}, model.dense_b);

  std::vector<std::size_t> rf;
  for (std::size_t l = 0; l < model.num_layers(); ++l) rf.push_back(model.rf_length(l));
  json index = {
      {"format", "mts2graph-checkpoint"},
      {"version", kCheckpointVersion},
      {"input_channels", model.input_channels},
      {"input_length", model.input_length},
      {"num_classes", model.num_classes},
      {"architecture", model.config},
      {"seed", model.config.seed},
      {"receptive_fields", rf},
      {"metrics",
       {{"best_epoch", model.metrics.best_epoch},
        {"best_val_accuracy", model.metrics.best_val_accuracy},
        {"epoch_train_loss", model.metrics.epoch_train_loss},
        {"epoch_val_accuracy", model.metrics.epoch_val_accuracy}}},
      {"tensors", tensors},
  };
  return binary::write_container(kCheckpointMagic, kCheckpointVersion, index.dump(), blob);
}

TrainedCNN deserialize_checkpoint(const std::string& bytes) {
  const auto container = binary::read_container(bytes, kCheckpointMagic, "checkpoint");
  if (container.version != kCheckpointVersion)
    throw Error("checkpoint: unsupported version " + std::to_string(container.version));
  json index;
  try {
    index = json::parse(container.index);
  } catch (const json::exception& e) {
    throw Error(std::string("checkpoint: bad index: ") + e.what());
  }
  const std::size_t blob_start = container.blob_start;

  TrainedCNN m;
  m.input_channels = index.at("input_channels").get<std::size_t>();
  m.input_length = index.at("input_length").get<std::size_t>();
  m.num_classes = index.at("num_classes").get<std::size_t>();
  m.config = index.at("architecture").get<CNNConfig>();
  const auto& met = index.at("metrics");
  m.metrics.best_epoch = met.at("best_epoch").get<std::size_t>();
  m.metrics.best_val_accuracy = met.at("best_val_accuracy").get<double>();
  m.metrics.epoch_train_loss = met.at("epoch_train_loss").get<std::vector<double>>();
  m.metrics.epoch_val_accuracy = met.at("epoch_val_accuracy").get<std::vector<double>>();

  std::map<std::string, std::vector<double>> tensors;
  std::map<std::string, std::vector<std::size_t>> shapes;
  for (const auto& t : index.at("tensors")) {
    const auto name = t.at("name").get<std::string>();
    const auto offset = t.at("offset").get<std::size_t>();
    const auto count = t.at("count").get<std::size_t>();
    if (blob_start + offset + 4 * count > bytes.size()) throw Error("checkpoint: tensor '" + name + "' truncated");
    tensors[name] = get_floats(bytes, blob_start + offset, count);
    shapes[name] = t.at("shape").get<std::vector<std::size_t>>();
  }
  auto take = [&](const std::string& name) {
    auto it = tensors.find(name);
    if (it == tensors.end()) throw Error("checkpoint: missing tensor '" + name + "'");
    return it->second;
  };
  for (std::size_t l = 0; l < m.config.conv_layers.size(); ++l) {
    ConvLayer layer;
    const auto& shape = shapes["conv" + std::to_string(l) + ".weight"];
    if (shape.size() != 3) throw Error("checkpoint: bad shape for conv" + std::to_string(l));
    layer.filters = shape[0];
    layer.in_channels = shape[1];
    layer.kernel = shape[2];
    layer.weights = take("conv" + std::to_string(l) + ".weight");
    layer.bias = take("conv" + std::to_string(l) + ".bias");
    m.conv.push_back(std::move(layer));
  }
  const auto& dshape = shapes["dense.weight"];
  if (dshape.size() != 2) throw Error("checkpoint: bad dense shape");
  m.dense_w = Matrix(dshape[0], dshape[1]);
  m.dense_w.data = take("dense.weight");
  m.dense_b = take("dense.bias");
  if (!all_finite(m)) throw Error("checkpoint: non-finite weights");
  return m;
}

void save_checkpoint(const TrainedCNN& model, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write '" + path.string() + "'");
  const auto bytes = serialize_checkpoint(model);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

TrainedCNN load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return deserialize_checkpoint(ss.str());
}

}  // namespace mts2graph
