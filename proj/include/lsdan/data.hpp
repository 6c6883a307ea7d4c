#pragma once

// Citation-network ingestion and positive-unlabeled split construction.
//
// Content file: one node per line, `<id> <f_1> ... <f_m> <label>`.
// Cites file:   one citation per line, `<citing id> <cited id>`.
// Split file:   JSON {version, dataset, p, seed, positive_class, P, U, prior}.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "lsdan/graph.hpp"
#include "lsdan/tensor.hpp"

namespace lsdan {

namespace detail {

inline std::vector<std::string_view> split_ws(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && (line[i] == ' ' || line[i] == '\t' || line[i] == '\r')) ++i;
    std::size_t j = i;
    while (j < line.size() && line[j] != ' ' && line[j] != '\t' && line[j] != '\r') ++j;
    if (j > i) out.push_back(line.substr(i, j - i));
    i = j;
  }
  return out;
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return std::move(ss).str();
}

template <class F>
void for_each_line(std::string_view text, F&& f) {
  std::size_t line_no = 0, pos = 0;
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    f(++line_no, text.substr(pos, end - pos));
    pos = end + 1;
  }
}

}  // namespace detail

struct ContentFile {
  Tensor features;  // [n x m]
  std::vector<std::string> labels;
  std::vector<std::string> node_ids;
};

inline ContentFile load_content(const std::filesystem::path& path) {
  const std::string text = detail::read_file(path);
  const std::string file = path.string();
  ContentFile out;
  std::vector<double> values;
  std::unordered_map<std::string, std::size_t> seen;
  std::optional<std::size_t> m;
  detail::for_each_line(text, [&](std::size_t line_no, std::string_view line) {
    const auto tokens = detail::split_ws(line);
    if (tokens.empty()) return;
    if (tokens.size() < 3) throw ParseError(file, line_no, "expected <id> <features...> <label>");
    const std::size_t width = tokens.size() - 2;
    if (!m) m = width;
    if (width != *m)
      throw ParseError(file, line_no, "ragged line: " + std::to_string(width) + " features, expected " + std::to_string(*m));
    std::string id(tokens.front());
    if (!seen.emplace(id, out.node_ids.size()).second) throw ParseError(file, line_no, "duplicate node id '" + id + "'");
    for (std::size_t k = 1; k + 1 < tokens.size(); ++k) {
      double v = 0.0;
      auto tok = tokens[k];
      auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
      if (ec != std::errc{} || ptr != tok.data() + tok.size())
        throw ParseError(file, line_no, "bad feature value '" + std::string(tok) + "'");
      values.push_back(v);
    }
    out.node_ids.push_back(std::move(id));
    out.labels.emplace_back(tokens.back());
  });
  if (out.node_ids.empty()) throw ParseError(file, 0, "no nodes");
  out.features = Tensor(out.node_ids.size(), *m, std::move(values));
  return out;
}

struct CitesFile {
  std::vector<Edge> edges;     // between known nodes, in file order
  std::size_t records = 0;     // non-blank lines
  std::size_t dangling = 0;    // lines naming an unknown id (skipped)
};

inline CitesFile load_cites(const std::filesystem::path& path, std::span<const std::string> node_ids) {
  const std::string text = detail::read_file(path);
  const std::string file = path.string();
  std::unordered_map<std::string_view, std::size_t> index;
  index.reserve(node_ids.size());
  for (std::size_t i = 0; i < node_ids.size(); ++i) index.emplace(node_ids[i], i);
  CitesFile out;
  detail::for_each_line(text, [&](std::size_t line_no, std::string_view line) {
    const auto tokens = detail::split_ws(line);
    if (tokens.empty()) return;
    if (tokens.size() != 2) throw ParseError(file, line_no, "expected <citing id> <cited id>");
    ++out.records;
    auto a = index.find(tokens[0]);
    auto b = index.find(tokens[1]);
    if (a == index.end() || b == index.end()) {
      ++out.dangling;
      return;
    }
    out.edges.emplace_back(a->second, b->second);
  });
  return out;
}

// ---------------------------------------------------------------------------
// Class handling

/// Canonical class order of a known benchmark, so that integer positive-class
/// ids mean the same class as in the usual Planetoid-style label encoding.
inline std::vector<std::string> preset_class_order(std::string_view dataset) {
  if (dataset == "cora")
    return {"Theory", "Reinforcement_Learning", "Genetic_Algorithms", "Neural_Networks", "Probabilistic_Methods",
            "Case_Based", "Rule_Learning"};
  if (dataset == "citeseer") return {"AI", "ML", "IR", "DB", "Agents", "HCI"};
  return {};
}

/// Default positive class id per benchmark.
inline std::string default_positive_class(std::string_view dataset) {
  if (dataset == "cora") return "3";
  if (dataset == "citeseer") return "2";
  if (dataset == "dblp") return "1";
  return "0";
}

inline bool is_integer(std::string_view s) {
  if (s.empty()) return false;
  long long v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  return ec == std::errc{} && ptr == s.data() + s.size();
}

/// Class order for a label column: the preset when it names exactly the
/// observed classes, otherwise sorted (numerically when every label is an integer).
inline std::vector<std::string> class_order(std::span<const std::string> labels, std::string_view dataset = {}) {
  std::vector<std::string> uniq(labels.begin(), labels.end());
  std::sort(uniq.begin(), uniq.end());
  uniq.erase(std::unique(uniq.begin(), uniq.end()), uniq.end());
  auto preset = preset_class_order(dataset);
  if (!preset.empty()) {
    auto sorted = preset;
    std::sort(sorted.begin(), sorted.end());
    if (sorted == uniq) return preset;
  }
  if (std::all_of(uniq.begin(), uniq.end(), [](const std::string& s) { return is_integer(s); }))
    std::sort(uniq.begin(), uniq.end(), [](const std::string& a, const std::string& b) { return std::stoll(a) < std::stoll(b); });
  return uniq;
}

inline std::string join(std::span<const std::string> items, std::string_view sep = ", ") {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (i) out += sep;
    out += items[i];
  }
  return out;
}

/// Resolves a class given by name or by index into `order`.
inline std::size_t resolve_class(std::span<const std::string> order, std::string_view positive) {
  for (std::size_t i = 0; i < order.size(); ++i)
    if (order[i] == positive) return i;
  if (is_integer(positive)) {
    const long long idx = std::stoll(std::string(positive));
    if (idx >= 0 && static_cast<std::size_t>(idx) < order.size()) return static_cast<std::size_t>(idx);
  }
  std::string avail;
  for (std::size_t i = 0; i < order.size(); ++i) avail += (i ? ", " : "") + std::to_string(i) + "=" + order[i];
  throw ConfigError("positive class '" + std::string(positive) + "' not found; available: " + avail);
}

/// 1 where the label equals the positive class, 0 elsewhere.
inline std::vector<int> binarize(std::span<const std::string> labels, std::string_view positive) {
  const auto order = class_order(labels);
  const std::string& cls = order[resolve_class(order, positive)];
  std::vector<int> out(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) out[i] = labels[i] == cls ? 1 : 0;
  return out;
}

// ---------------------------------------------------------------------------
// Dataset

struct DatasetSource {
  std::string name;
  std::filesystem::path content;
  std::filesystem::path cites;
  std::string positive_class;  // empty: benchmark default
  bool row_normalize = false;
};

struct GraphDataset {
  std::string name;
  Tensor features;
  Adjacency adjacency;
  std::vector<std::string> node_ids;
  std::vector<std::string> classes;  // class order; raw_labels index into it
  std::vector<std::size_t> raw_labels;
  std::vector<int> binary_labels;
  std::string positive_class;        // resolved class name
  std::size_t citation_records = 0;
  std::size_t dangling_citations = 0;
  bool row_normalized = false;
  std::uint64_t content_hash = 0;

  std::size_t n() const noexcept { return features.rows(); }
  std::size_t m() const noexcept { return features.cols(); }
  std::size_t positives() const noexcept {
    return static_cast<std::size_t>(std::count(binary_labels.begin(), binary_labels.end(), 1));
  }
};

inline Tensor row_normalized(const Tensor& x) {
  std::vector<double> v(x.values().begin(), x.values().end());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < x.cols(); ++j) s += v[i * x.cols() + j];
    if (s != 0.0)
      for (std::size_t j = 0; j < x.cols(); ++j) v[i * x.cols() + j] /= s;
  }
  return Tensor(x.rows(), x.cols(), std::move(v));
}

inline GraphDataset load_dataset(const DatasetSource& src) {
  if (!std::filesystem::exists(src.content)) throw IoError("content file not found: " + src.content.string());
  if (!std::filesystem::exists(src.cites)) throw IoError("cites file not found: " + src.cites.string());
  GraphDataset ds;
  ds.name = src.name;
  auto content = load_content(src.content);
  auto cites = load_cites(src.cites, content.node_ids);
  ds.content_hash = fnv1a64(detail::read_file(src.cites), fnv1a64(detail::read_file(src.content)));
  ds.features = src.row_normalize ? row_normalized(content.features) : content.features;
  ds.row_normalized = src.row_normalize;
  ds.adjacency = build_adjacency(cites.edges, content.node_ids.size());
  ds.citation_records = cites.records;
  ds.dangling_citations = cites.dangling;
  ds.classes = class_order(content.labels, src.name);
  std::unordered_map<std::string, std::size_t> cls;
  for (std::size_t c = 0; c < ds.classes.size(); ++c) cls.emplace(ds.classes[c], c);
  for (const auto& l : content.labels) ds.raw_labels.push_back(cls.at(l));
  const std::string positive = src.positive_class.empty() ? default_positive_class(src.name) : src.positive_class;
  const std::size_t pos = resolve_class(ds.classes, positive);
  ds.positive_class = ds.classes[pos];
  for (auto c : ds.raw_labels) ds.binary_labels.push_back(c == pos ? 1 : 0);
  ds.node_ids = std::move(content.node_ids);
  return ds;
}

// ---------------------------------------------------------------------------
// PU splits

struct PUSplit {
  std::vector<std::size_t> positives_labeled;  // P, ascending
  std::vector<std::size_t> unlabeled;          // U, ascending
  double p = 0.0;
  std::uint64_t seed = 0;
  double prior = 0.0;  // fraction of U that is truly positive
  std::string dataset;
  std::string positive_class;

  friend bool operator==(const PUSplit&, const PUSplit&) = default;
};

inline std::size_t labeled_count(double p, std::size_t n_pos) {
  // Tolerance keeps products such as 0.05 * 100 from rounding up to 6.
  return static_cast<std::size_t>(std::ceil(p * static_cast<double>(n_pos) - 1e-9));
}

/// Balanced PU split: N_PN negatives sampled from all negatives, ceil(p N_PN)
/// positives labeled, the rest of the positives plus the sampled negatives unlabeled.
inline PUSplit make_pu_split(std::span<const int> binary_labels, double p, std::uint64_t seed) {
  if (!(p > 0.0 && p < 1.0)) throw ConfigError("label fraction p must lie in (0,1), got " + std::to_string(p));
  std::vector<std::size_t> pos, neg;
  for (std::size_t i = 0; i < binary_labels.size(); ++i) (binary_labels[i] == 1 ? pos : neg).push_back(i);
  const std::size_t n_pos = pos.size();
  const std::size_t n_lab = labeled_count(p, n_pos);
  if (n_lab == 0) throw ConfigError("split: no positives to label");
  if (n_lab >= n_pos) throw ConfigError("split: p labels every positive; the unlabeled set would have no positives");
  if (neg.size() < n_pos)
    throw ConfigError("split: need " + std::to_string(n_pos) + " negatives to balance, only " +
                      std::to_string(neg.size()) + " available");

  std::mt19937_64 rng(seed);
  std::shuffle(neg.begin(), neg.end(), rng);
  std::shuffle(pos.begin(), pos.end(), rng);

  PUSplit s;
  s.p = p;
  s.seed = seed;
  s.positives_labeled.assign(pos.begin(), pos.begin() + static_cast<std::ptrdiff_t>(n_lab));
  s.unlabeled.assign(pos.begin() + static_cast<std::ptrdiff_t>(n_lab), pos.end());
  s.unlabeled.insert(s.unlabeled.end(), neg.begin(), neg.begin() + static_cast<std::ptrdiff_t>(n_pos));
  std::sort(s.positives_labeled.begin(), s.positives_labeled.end());
  std::sort(s.unlabeled.begin(), s.unlabeled.end());
  s.prior = static_cast<double>(n_pos - n_lab) / static_cast<double>(s.unlabeled.size());
  return s;
}

inline PUSplit make_pu_split(const GraphDataset& ds, double p, std::uint64_t seed) {
  PUSplit s = make_pu_split(ds.binary_labels, p, seed);
  s.dataset = ds.name;
  s.positive_class = ds.positive_class;
  return s;
}

/// Fraction of U that is truly positive.
inline double unlabeled_prior(const PUSplit& s, std::span<const int> binary_labels) {
  std::size_t k = 0;
  for (auto i : s.unlabeled) k += binary_labels[i] == 1;
  return static_cast<double>(k) / static_cast<double>(s.unlabeled.size());
}

inline constexpr int kSplitVersion = 1;

inline nlohmann::json split_to_json(const PUSplit& s) {
  return {{"version", kSplitVersion}, {"dataset", s.dataset}, {"p", s.p}, {"seed", s.seed},
          {"positive_class", s.positive_class}, {"P", s.positives_labeled}, {"U", s.unlabeled},
          {"prior", s.prior}};
}

inline PUSplit split_from_json(const nlohmann::json& j) {
  if (!j.is_object() || !j.contains("version")) throw ConfigError("split: missing version field");
  if (j.at("version") != kSplitVersion)
    throw ConfigError("split: unsupported version " + j.at("version").dump() + ", expected " +
                      std::to_string(kSplitVersion));
  PUSplit s;
  j.at("dataset").get_to(s.dataset);
  j.at("p").get_to(s.p);
  j.at("seed").get_to(s.seed);
  j.at("positive_class").get_to(s.positive_class);
  j.at("P").get_to(s.positives_labeled);
  j.at("U").get_to(s.unlabeled);
  j.at("prior").get_to(s.prior);
  return s;
}

inline void save_split(const std::filesystem::path& path, const PUSplit& s) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot write split " + path.string());
  os << split_to_json(s).dump(1) << '\n';
}

inline PUSplit load_split(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open split " + path.string());
  try {
    return split_from_json(nlohmann::json::parse(is));
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path.string(), 0, std::string("split file: ") + e.what());
  } catch (const ConfigError& e) {
    throw ParseError(path.string(), 0, e.what());
  }
}

}  // namespace lsdan
