#include "mts2graph/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <set>
#include <sstream>

#include "json.hpp"

namespace mts2graph {

namespace fs = std::filesystem;
using nlohmann::json;

std::vector<int> MTSDataset::labels() const {
  std::vector<int> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back(s.label);
  return out;
}

MTSDataset MTSDataset::subset(const std::vector<std::size_t>& indices) const {
  MTSDataset out;
  out.d = d;
  out.T = T;
  out.C = C;
  out.class_names = class_names;
  out.samples.reserve(indices.size());
  for (std::size_t i : indices) {
    if (i >= samples.size()) throw Error("subset: index " + std::to_string(i) + " out of range");
    out.samples.push_back(samples[i]);
  }
  return out;
}

void MTSDataset::validate() const {
  if (d == 0 || T == 0) throw Error("dataset: d and T must be positive");
  std::vector<std::size_t> per_class(C, 0);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& s = samples[i];
    if (s.values.rows != d || s.values.cols != T)
      throw Error("dataset: sample " + std::to_string(i) + " has shape " + std::to_string(s.values.rows) + "x" +
                  std::to_string(s.values.cols) + ", expected " + std::to_string(d) + "x" + std::to_string(T));
    if (s.label < 0 || static_cast<std::size_t>(s.label) >= C)
      throw Error("dataset: sample " + std::to_string(i) + " label out of range");
    ++per_class[static_cast<std::size_t>(s.label)];
    for (std::size_t c = 0; c < d; ++c)
      for (std::size_t t = 0; t < T; ++t)
        if (!std::isfinite(s.values(c, t)))
          throw Error("non-finite value at (" + std::to_string(i) + ", " + std::to_string(c) + ", " +
                      std::to_string(t) + ")");
  }
}

DatasetFormat parse_dataset_format(const std::string& name) {
  if (name == "tabular-per-sample" || name == "tabular") return DatasetFormat::TabularPerSample;
  if (name == "single-file") return DatasetFormat::SingleFile;
  throw Error("unknown dataset format '" + name + "'");
}

std::string to_string(DatasetFormat f) {
  return f == DatasetFormat::TabularPerSample ? "tabular-per-sample" : "single-file";
}

namespace {

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw Error("cannot open '" + p.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

std::vector<std::string_view> split_commas(std::string_view line) {
  std::vector<std::string_view> cells;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = line.find(',', start);
    cells.push_back(trim(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start)));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return cells;
}

std::optional<double> parse_number(std::string_view cell) {
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
  if (ec != std::errc() || ptr != cell.data() + cell.size() || cell.empty()) return std::nullopt;
  return v;
}

std::vector<std::string> nonempty_lines(const std::string& text) {
  std::vector<std::string> lines;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line))
    if (!trim(line).empty()) lines.push_back(line);
  return lines;
}

struct Meta {
  std::size_t d = 0;
  std::optional<std::size_t> T;
  std::vector<std::string> class_names;
};

Meta read_meta(const fs::path& p) {
  if (!fs::exists(p)) throw Error("missing file '" + p.string() + "'");
  json j;
  try {
    j = json::parse(read_file(p));
  } catch (const json::exception& e) {
    throw Error("meta.json: " + std::string(e.what()));
  }
  Meta m;
  if (!j.contains("d")) throw Error("meta.json: missing field 'd'");
  m.d = j.at("d").get<std::size_t>();
  if (j.contains("T")) m.T = j.at("T").get<std::size_t>();
  if (j.contains("class_names")) m.class_names = j.at("class_names").get<std::vector<std::string>>();
  return m;
}

struct RawSample {
  std::vector<std::vector<double>> channels;
  std::string label;
};

// Orders raw labels numerically when every label parses as a number.
std::vector<std::string> ordered_labels(const std::vector<RawSample>& raw) {
  std::set<std::string> uniq;
  for (const auto& r : raw) uniq.insert(r.label);
  std::vector<std::string> names(uniq.begin(), uniq.end());
  const bool numeric = std::all_of(names.begin(), names.end(), [](const std::string& s) { return parse_number(s).has_value(); });
  if (numeric)
    std::stable_sort(names.begin(), names.end(),
                     [](const std::string& a, const std::string& b) { return *parse_number(a) < *parse_number(b); });
  return names;
}

MTSDataset assemble(std::vector<RawSample> raw, const Meta& meta, bool pad_ragged) {
  MTSDataset ds;
  ds.d = meta.d;
  std::size_t max_len = 0;
  for (const auto& r : raw) {
    if (r.channels.size() != meta.d)
      throw Error("sample has " + std::to_string(r.channels.size()) + " channels, meta says " + std::to_string(meta.d));
    for (const auto& ch : r.channels) max_len = std::max(max_len, ch.size());
  }
  ds.T = meta.T.value_or(max_len);
  if (max_len > ds.T) throw Error("series longer than meta T=" + std::to_string(ds.T));

  ds.class_names = meta.class_names.empty() ? ordered_labels(raw) : meta.class_names;
  std::map<std::string, int> index;
  for (std::size_t i = 0; i < ds.class_names.size(); ++i) index[ds.class_names[i]] = static_cast<int>(i);
  ds.C = ds.class_names.size();

  for (std::size_t i = 0; i < raw.size(); ++i) {
    auto& r = raw[i];
    MTSSample s;
    s.values = Matrix(ds.d, ds.T, 0.0);
    const auto it = index.find(r.label);
    if (it == index.end()) throw Error("unknown label '" + r.label + "' in sample " + std::to_string(i));
    s.label = it->second;
    std::size_t len = r.channels.front().size();
    for (std::size_t c = 0; c < ds.d; ++c) {
      const auto& ch = r.channels[c];
      if ((ch.size() != ds.T || ch.size() != len) && !pad_ragged)
        throw Error("ragged channel lengths in sample " + std::to_string(i) + " and padding disabled");
      len = std::max(len, ch.size());
      for (std::size_t t = 0; t < ch.size(); ++t) {
        if (!std::isfinite(ch[t]))
          throw Error("non-finite value at (" + std::to_string(i) + ", " + std::to_string(c) + ", " +
                      std::to_string(t) + ")");
        s.values(c, t) = ch[t];
      }
    }
    s.original_length = len;
    ds.samples.push_back(std::move(s));
  }
  std::vector<std::size_t> per_class(ds.C, 0);
  for (const auto& s : ds.samples) ++per_class[static_cast<std::size_t>(s.label)];
  for (std::size_t c = 0; c < ds.C; ++c)
    if (per_class[c] == 0) throw Error("class '" + ds.class_names[c] + "' has no samples");
  ds.validate();
  return ds;
}

std::vector<double> parse_row(std::string_view line, const std::string& where) {
  std::vector<double> row;
  std::size_t col = 0;
  for (auto cell : split_commas(line)) {
    const auto v = parse_number(cell);
    if (!v) throw Error("non-numeric cell '" + std::string(cell) + "' at " + where + " column " + std::to_string(col));
    row.push_back(*v);
    ++col;
  }
  return row;
}

MTSDataset load_tabular(const fs::path& dir, bool pad_ragged) {
  if (!fs::is_directory(dir)) throw Error("missing dataset directory '" + dir.string() + "'");
  const Meta meta = read_meta(dir / "meta.json");

  struct Entry {
    fs::path path;
    std::string id;
    std::string label;
  };
  std::vector<Entry> entries;
  for (const auto& de : fs::directory_iterator(dir)) {
    if (!de.is_regular_file() || de.path().extension() != ".csv") continue;
    const std::string stem = de.path().stem().string();
    const std::size_t us = stem.rfind('_');
    if (us == std::string::npos || us + 1 == stem.size())
      throw Error("unknown label column: file name '" + de.path().filename().string() + "' is not <id>_<label>.csv");
    entries.push_back({de.path(), stem.substr(0, us), stem.substr(us + 1)});
  }
  std::sort(entries.begin(), entries.end(), [](const Entry& a, const Entry& b) {
    const auto na = parse_number(a.id), nb = parse_number(b.id);
    if (na && nb && *na != *nb) return *na < *nb;
    if (na.has_value() != nb.has_value()) return na.has_value();
    return a.id < b.id;
  });

  std::vector<RawSample> raw;
  for (const auto& e : entries) {
    RawSample r;
    r.label = e.label;
    const auto lines = nonempty_lines(read_file(e.path));
    for (std::size_t li = 0; li < lines.size(); ++li)
      r.channels.push_back(parse_row(lines[li], e.path.filename().string() + " row " + std::to_string(li)));
    raw.push_back(std::move(r));
  }
  if (raw.empty()) throw Error("dataset directory '" + dir.string() + "' holds no sample files");
  return assemble(std::move(raw), meta, pad_ragged);
}

MTSDataset load_single_file(const fs::path& file, bool pad_ragged) {
  if (!fs::exists(file)) throw Error("missing file '" + file.string() + "'");
  const Meta meta = read_meta(file.parent_path() / "meta.json");
  if (meta.d == 0) throw Error("meta.json: d must be positive");
  const auto lines = nonempty_lines(read_file(file));
  std::vector<RawSample> raw;
  for (std::size_t li = 0; li < lines.size(); ++li) {
    auto cells = split_commas(lines[li]);
    if (cells.empty() || cells.front().empty()) throw Error("unknown label column in row " + std::to_string(li));
    RawSample r;
    r.label = std::string(cells.front());
    std::vector<double> values;
    for (std::size_t ci = 1; ci < cells.size(); ++ci) {
      const auto v = parse_number(cells[ci]);
      if (!v)
        throw Error("non-numeric cell '" + std::string(cells[ci]) + "' at row " + std::to_string(li) + " column " +
                    std::to_string(ci));
      values.push_back(*v);
    }
    if (values.size() % meta.d != 0)
      throw Error("row " + std::to_string(li) + " has " + std::to_string(values.size()) + " values, not a multiple of d");
    const std::size_t len = values.size() / meta.d;
    if (meta.T && len != *meta.T && !pad_ragged)
      throw Error("ragged channel lengths in row " + std::to_string(li) + " and padding disabled");
    for (std::size_t c = 0; c < meta.d; ++c)
      r.channels.emplace_back(values.begin() + static_cast<std::ptrdiff_t>(c * len),
                              values.begin() + static_cast<std::ptrdiff_t>((c + 1) * len));
    raw.push_back(std::move(r));
  }
  if (raw.empty()) throw Error("dataset file '" + file.string() + "' holds no rows");
  return assemble(std::move(raw), meta, pad_ragged);
}

void write_meta(const MTSDataset& ds, const fs::path& p) {
  json j{{"d", ds.d}, {"T", ds.T}, {"C", ds.C}, {"class_names", ds.class_names}};
  std::ofstream out(p);
  if (!out) throw Error("cannot write '" + p.string() + "'");
  out << j.dump(2) << '\n';
}

}  // namespace

MTSDataset load_dataset(const fs::path& path, DatasetFormat format, bool pad_ragged) {
  return format == DatasetFormat::TabularPerSample ? load_tabular(path, pad_ragged) : load_single_file(path, pad_ragged);
}

void save_dataset_tabular(const MTSDataset& ds, const fs::path& dir) {
  fs::create_directories(dir);
  write_meta(ds, dir / "meta.json");
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const auto& s = ds.samples[i];
    const std::string label = ds.class_names.empty() ? std::to_string(s.label) : ds.class_names[static_cast<std::size_t>(s.label)];
    std::ofstream out(dir / (std::to_string(i) + "_" + label + ".csv"));
    out.precision(17);
    for (std::size_t c = 0; c < ds.d; ++c) {
      for (std::size_t t = 0; t < ds.T; ++t) out << (t ? "," : "") << s.values(c, t);
      out << '\n';
    }
  }
}

void save_dataset_single_file(const MTSDataset& ds, const fs::path& file) {
  if (file.has_parent_path()) fs::create_directories(file.parent_path());
  write_meta(ds, file.parent_path() / "meta.json");
  std::ofstream out(file);
  out.precision(17);
  for (const auto& s : ds.samples) {
    out << (ds.class_names.empty() ? std::to_string(s.label) : ds.class_names[static_cast<std::size_t>(s.label)]);
    for (double v : s.values.data) out << ',' << v;
    out << '\n';
  }
}

MTSDataset znormalize(const MTSDataset& ds) {
  MTSDataset out = ds;
  for (auto& s : out.samples)
    for (std::size_t c = 0; c < s.values.rows; ++c) {
      const auto z = mts2graph::znormalize(s.values.row(c));
      std::copy(z.begin(), z.end(), s.values.row(c).begin());
    }
  return out;
}

FoldPlan make_folds(const MTSDataset& ds, std::size_t k, std::uint64_t seed) {
  if (k < 2) throw Error("make_folds: k must be at least 2");
  std::vector<std::vector<std::size_t>> by_class(ds.C);
  for (std::size_t i = 0; i < ds.size(); ++i) by_class[static_cast<std::size_t>(ds.samples[i].label)].push_back(i);

  // blocks[b] collects block b of every class
  std::vector<std::vector<std::size_t>> blocks(k);
  for (std::size_t c = 0; c < ds.C; ++c) {
    auto& idx = by_class[c];
    if (idx.size() < k)
      throw Error("make_folds: class " + std::to_string(c) + " has " + std::to_string(idx.size()) +
                  " samples, fewer than k=" + std::to_string(k));
    std::mt19937_64 rng(derive_seed(seed, "folds", c));
    std::shuffle(idx.begin(), idx.end(), rng);
    // floor boundaries spread the remainder, so any run of adjacent blocks is within one
    // sample of its share; the rotation by class keeps overall block sizes balanced
    const std::size_t n = idx.size();
    for (std::size_t b = 0; b < k; ++b) {
      const std::size_t bb = (b + c) % k;
      const std::size_t lo = b * n / k, hi = (b + 1) * n / k;
      blocks[bb].insert(blocks[bb].end(), idx.begin() + static_cast<std::ptrdiff_t>(lo),
                        idx.begin() + static_cast<std::ptrdiff_t>(hi));
    }
  }
  FoldPlan plan;
  plan.k = k;
  plan.seed = seed;
  for (std::size_t f = 0; f < k; ++f) {
    Fold fold;
    fold.test = blocks[f];
    fold.val = blocks[(f + 1) % k];
    for (std::size_t b = 0; b < k; ++b)
      if (b != f && b != (f + 1) % k) fold.train.insert(fold.train.end(), blocks[b].begin(), blocks[b].end());
    std::sort(fold.train.begin(), fold.train.end());
    std::sort(fold.val.begin(), fold.val.end());
    std::sort(fold.test.begin(), fold.test.end());
    plan.folds.push_back(std::move(fold));
  }
  return plan;
}

std::size_t ChannelMask::count() const {
  return static_cast<std::size_t>(std::count(active.begin(), active.end(), std::uint8_t{1}));
}

std::string ChannelMask::bits() const {
  std::string s;
  for (auto a : active) s.push_back(a ? '1' : '0');
  return s;
}

ChannelMask ChannelMask::from_bits(const std::string& bits) {
  ChannelMask m;
  for (char ch : bits) {
    if (ch != '0' && ch != '1') throw Error("bad mask bits '" + bits + "'");
    m.active.push_back(ch == '1' ? 1 : 0);
  }
  return m;
}

ChannelMask ChannelMask::all(std::size_t d) { return ChannelMask{std::vector<std::uint8_t>(d, 1)}; }

InputSetPolicy parse_input_set_policy(const std::string& name) {
  if (name == "auto") return InputSetPolicy::Auto;
  if (name == "full-powerset") return InputSetPolicy::FullPowerset;
  if (name == "capped") return InputSetPolicy::Capped;
  throw Error("unknown input-set policy '" + name + "'");
}

std::string to_string(InputSetPolicy p) {
  switch (p) {
    case InputSetPolicy::Auto: return "auto";
    case InputSetPolicy::FullPowerset: return "full-powerset";
    case InputSetPolicy::Capped: return "capped";
  }
  return "auto";
}

std::vector<ChannelMask> input_masks(std::size_t d, InputSetPolicy policy) {
  if (d == 0) return {};
  if (policy == InputSetPolicy::Auto) policy = d <= 10 ? InputSetPolicy::FullPowerset : InputSetPolicy::Capped;
  std::vector<ChannelMask> masks;
  if (policy == InputSetPolicy::FullPowerset) {
    if (d >= 63) throw Error("full power set over " + std::to_string(d) + " channels is not representable");
    for (std::uint64_t bits = 1; bits < (std::uint64_t{1} << d); ++bits) {
      ChannelMask m{std::vector<std::uint8_t>(d, 0)};
      for (std::size_t c = 0; c < d; ++c) m.active[c] = (bits >> c) & 1U;
      masks.push_back(std::move(m));
    }
    return masks;
  }
  for (std::size_t c = 0; c < d; ++c) {
    ChannelMask m{std::vector<std::uint8_t>(d, 0)};
    m.active[c] = 1;
    masks.push_back(std::move(m));
  }
  for (std::size_t a = 0; a < d; ++a)
    for (std::size_t b = a + 1; b < d; ++b) {
      ChannelMask m{std::vector<std::uint8_t>(d, 0)};
      m.active[a] = m.active[b] = 1;
      masks.push_back(std::move(m));
    }
  if (d > 2) masks.push_back(ChannelMask::all(d));
  return masks;
}

MTSSample apply_mask(const MTSSample& sample, const ChannelMask& mask) {
  MTSSample out = sample;
  for (std::size_t c = 0; c < out.values.rows; ++c)
    if (!mask.active[c]) std::fill(out.values.row(c).begin(), out.values.row(c).end(), 0.0);
  return out;
}

std::vector<std::pair<ChannelMask, MTSSample>> build_input_set(const MTSSample& sample, InputSetPolicy policy) {
  std::vector<std::pair<ChannelMask, MTSSample>> out;
  for (auto& m : input_masks(sample.values.rows, policy)) {
    auto masked = apply_mask(sample, m);
    out.emplace_back(std::move(m), std::move(masked));
  }
  return out;
}

}  // namespace mts2graph
