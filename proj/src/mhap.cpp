#include "mts2graph/mhap.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <ostream>
#include <sstream>
#include <tuple>

namespace mts2graph {

double nearest_rank_quantile(std::vector<double> pool, double q) {
  if (pool.empty()) throw Error("threshold pool is empty");
  if (!(q > 0.0 && q < 1.0)) throw Error("quantile q must lie in (0, 1)");
  const auto n = pool.size();
  auto rank = static_cast<std::size_t>(std::ceil(q * static_cast<double>(n) - 1e-9));
  rank = std::clamp<std::size_t>(rank, 1, n);
  std::nth_element(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(rank - 1), pool.end());
  return pool[rank - 1];
}

ActivationThresholds compute_thresholds(const TrainedCNN& model, const MTSDataset& ds, double q, bool include_masked,
                                        InputSetPolicy policy) {
  if (!(q > 0.0 && q < 1.0)) throw Error("quantile q must lie in (0, 1)");
  std::vector<std::vector<std::vector<double>>> pools(model.num_layers());
  for (std::size_t l = 0; l < model.num_layers(); ++l) pools[l].resize(model.conv[l].filters);

  auto add = [&](const MTSSample& s) {
    const auto r = forward_with_activations(model, s);
    for (const auto& act : r.activations)
      for (std::size_t c = 0; c < act.values.rows; ++c) {
        const auto row = act.values.row(c);
        pools[act.layer][c].insert(pools[act.layer][c].end(), row.begin(), row.end());
      }
  };
  for (const auto& s : ds.samples) {
    if (include_masked) {
      for (const auto& [mask, masked] : build_input_set(s, policy)) add(masked);
    } else {
      add(s);
    }
  }

  ActivationThresholds thr;
  thr.q = q;
  thr.pool_policy = include_masked ? "masked-train" : "unmasked-train";
  thr.values.resize(model.num_layers());
  for (std::size_t l = 0; l < model.num_layers(); ++l)
    for (auto& pool : pools[l]) {
      if (pool.empty()) throw Error("threshold pool for layer " + std::to_string(l) + " is empty");
      thr.values[l].push_back(nearest_rank_quantile(std::move(pool), q));
    }
  return thr;
}

std::vector<NeuronRef> extract_han(const ActivationTensor& act, const ActivationThresholds& thr) {
  if (act.layer >= thr.values.size()) throw Error("extract_han: no thresholds for layer " + std::to_string(act.layer));
  std::vector<NeuronRef> out;
  for (std::size_t c = 0; c < act.values.rows; ++c) {
    const double t = thr.at(act.layer, c);
    for (std::size_t n = 0; n < act.values.cols; ++n) {
      const double a = act.values(c, n);
      if (a >= t && a > 0.0) out.push_back({c, n});
    }
  }
  return out;
}

namespace {

// Keeps the arg-max of each run of consecutive neurons on the same channel.
std::vector<NeuronRef> suppress_runs(const std::vector<NeuronRef>& han, const Matrix& act) {
  std::vector<NeuronRef> out;
  std::size_t i = 0;
  while (i < han.size()) {
    std::size_t j = i;
    NeuronRef best = han[i];
    while (j + 1 < han.size() && han[j + 1].channel == han[i].channel && han[j + 1].neuron == han[j].neuron + 1) {
      ++j;
      if (act(han[j].channel, han[j].neuron) > act(best.channel, best.neuron)) best = han[j];
    }
    out.push_back(best);
    i = j + 1;
  }
  return out;
}

bool mhap_order(const MHAP& a, const MHAP& b) {
  return std::tie(a.window.begin, a.layer, a.channel, a.mask) < std::tie(b.window.begin, b.layer, b.channel, b.mask);
}

}  // namespace

std::vector<MHAP> extract_sample_mhaps(const TrainedCNN& model, const MTSSample& sample, std::size_t sample_id,
                                       const ActivationThresholds& thr, const ExtractOptions& opts) {
  std::vector<MHAP> out;
  for (const auto& [mask, masked] : build_input_set(sample, opts.policy)) {
    const auto r = forward_with_activations(model, masked);
    for (const auto& act : r.activations) {
      auto han = extract_han(act, thr);
      if (opts.nms) han = suppress_runs(han, act.values);
      for (const auto& h : han) {
        MHAP m;
        m.sample_id = sample_id;
        m.mask = mask;
        m.layer = act.layer;
        m.channel = h.channel;
        m.neuron = h.neuron;
        m.window = receptive_field(model, act.layer, h.neuron);
        m.peak = act.values(h.channel, h.neuron);
        m.values = Matrix(masked.values.rows, m.window.length());
        for (std::size_t c = 0; c < masked.values.rows; ++c)
          for (std::size_t t = 0; t < m.window.length(); ++t) m.values(c, t) = masked.values(c, m.window.begin + t);
        out.push_back(std::move(m));
      }
    }
  }
  std::stable_sort(out.begin(), out.end(), mhap_order);
  return out;
}

std::vector<std::vector<MHAP>> extract_mhaps(const TrainedCNN& model, const MTSDataset& ds,
                                             const ActivationThresholds& thr, const ExtractOptions& opts,
                                             const std::vector<std::size_t>& sample_ids) {
  if (!sample_ids.empty() && sample_ids.size() != ds.size()) throw Error("extract_mhaps: sample id count mismatch");
  std::vector<std::vector<MHAP>> per_sample(ds.size());
  const auto n = static_cast<std::ptrdiff_t>(ds.size());
#pragma omp parallel for schedule(dynamic, 1)
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    const auto ui = static_cast<std::size_t>(i);
    per_sample[ui] = extract_sample_mhaps(model, ds.samples[ui], sample_ids.empty() ? ui : sample_ids[ui], thr, opts);
  }
  std::vector<std::vector<MHAP>> per_layer(model.num_layers());
  for (auto& list : per_sample)
    for (auto& m : list) per_layer[m.layer].push_back(std::move(m));
  return per_layer;
}

void write_mhap_dump(std::ostream& out, const std::vector<std::vector<MHAP>>& per_layer) {
  out << "# mts2graph-mhaps v1\n";
  out << "# layers " << per_layer.size() << '\n';
  out << "# sample_id mask_bits layer channel neuron a b peak d rf values...\n";
  const auto old = out.precision(17);
  for (const auto& layer : per_layer)
    for (const auto& m : layer) {
      out << m.sample_id << ' ' << m.mask.bits() << ' ' << m.layer << ' ' << m.channel << ' ' << m.neuron << ' '
          << m.window.begin << ' ' << m.window.end << ' ' << m.peak << ' ' << m.values.rows << ' ' << m.values.cols;
      for (double v : m.values.data) out << ' ' << v;
      out << '\n';
    }
  out.precision(old);
}

std::vector<std::vector<MHAP>> read_mhap_dump(std::istream& in) {
  std::vector<std::vector<MHAP>> per_layer;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.rfind("# layers ", 0) == 0) {
      per_layer.resize(std::stoul(line.substr(9)));
      continue;
    }
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ss(line);
    MHAP m;
    std::string bits;
    std::size_t rows = 0, cols = 0;
    if (!(ss >> m.sample_id >> bits >> m.layer >> m.channel >> m.neuron >> m.window.begin >> m.window.end >> m.peak >>
          rows >> cols))
      throw Error("mhap dump: malformed line " + std::to_string(lineno));
    m.mask = ChannelMask::from_bits(bits);
    m.values = Matrix(rows, cols);
    for (double& v : m.values.data)
      if (!(ss >> v)) throw Error("mhap dump: short value list on line " + std::to_string(lineno));
    if (per_layer.size() <= m.layer) per_layer.resize(m.layer + 1);
    per_layer[m.layer].push_back(std::move(m));
  }
  return per_layer;
}

}  // namespace mts2graph
