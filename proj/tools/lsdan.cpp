// lsdan: prepare datasets, run PU node-classification experiments, write reports.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "lsdan/lsdan.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Options {
  std::string dataset = "cora";
  std::string data_dir;
  std::string content;
  std::string cites;
  std::string positive_class;
  bool row_normalize = false;
  std::string out = "runs";
  std::string cache_dir;

  std::size_t kappa = 4;
  std::size_t layers = 2;
  std::size_t dim = 64;
  std::string key = "layer_input";
  bool exact_walk = false;

  std::size_t steps = 500;
  double lr = 1e-4;
  std::string objective = "nnpu";
  double prior = 0.0;

  std::vector<double> p_list = {0.01, 0.02, 0.03, 0.04, 0.05};
  std::size_t trials = 10;
  std::uint64_t seed = 0;
  std::size_t parallel = 1;

  // command specific
  std::string split_file;
  std::string param = "dim";
  std::vector<std::size_t> values;
  std::vector<std::size_t> hops = {1, 2, 3, 4};
  std::string emit;
  std::string load;
};

struct Resolved {
  lsdan::NetworkConfig net;
  lsdan::TrainConfig train;
  lsdan::DatasetSource source;
  lsdan::WalkMode walk = lsdan::WalkMode::with_self_loops;
};

Resolved resolve(const Options& o) {
  Resolved r;
  r.net.kappa = o.kappa;
  r.net.layers = o.layers;
  r.net.hidden_dim = o.dim;
  if (o.key == "layer_input")
    r.net.key = lsdan::KeySource::layer_input;
  else if (o.key == "raw_features")
    r.net.key = lsdan::KeySource::raw_features;
  else
    throw lsdan::ConfigError("--key must be layer_input or raw_features");
  r.train.steps = o.steps;
  r.train.learning_rate = o.lr;
  r.train.objective = lsdan::parse_objective(o.objective);
  r.train.seed = o.seed;
  r.train.prior_override = o.prior;
  r.walk = o.exact_walk ? lsdan::WalkMode::exact : lsdan::WalkMode::with_self_loops;

  std::string dir = o.data_dir;
  if (dir.empty())
    if (const char* env = std::getenv("LSDAN_DATA_DIR")) dir = env;
  if (dir.empty()) dir = "data";
  r.source.name = o.dataset;
  r.source.content = o.content.empty() ? fs::path(dir) / (o.dataset + ".content") : fs::path(o.content);
  r.source.cites = o.cites.empty() ? fs::path(dir) / (o.dataset + ".cites") : fs::path(o.cites);
  r.source.positive_class = o.positive_class;
  r.source.row_normalize = o.row_normalize;

  for (double p : o.p_list)
    if (!(p > 0.0 && p <= 1.0)) throw lsdan::ConfigError("--p values must lie in (0,1]");
  if (o.trials < 1) throw lsdan::ConfigError("--trials must be >= 1");
  if (o.parallel < 1) throw lsdan::ConfigError("--parallel-trials must be >= 1");
  r.net.input_dim = 1;  // real value is filled in from the data; this only lets validate() run early
  r.net.validate();
  r.net.input_dim = 0;
  r.train.validate();
  return r;
}

json config_json(const Options& o, const Resolved& r, const std::string& command) {
  return {{"command", command},
          {"dataset", o.dataset},
          {"content", r.source.content.string()},
          {"cites", r.source.cites.string()},
          {"positive_class", o.positive_class},
          {"row_normalize", o.row_normalize},
          {"exact_walk", o.exact_walk},
          {"network", r.net},
          {"train", r.train},
          {"p", o.p_list},
          {"trials", o.trials},
          {"seed", o.seed},
          {"version", lsdan::version_string()}};
}

fs::path cache_dir(const Options& o) { return o.cache_dir.empty() ? fs::path(o.out) / "cache" : fs::path(o.cache_dir); }

fs::path cache_path(const Options& o, const lsdan::GraphDataset& ds, std::size_t kappa, lsdan::WalkMode mode) {
  char hash[17];
  std::snprintf(hash, sizeof hash, "%016llx", static_cast<unsigned long long>(ds.content_hash));
  const std::string loops = mode == lsdan::WalkMode::with_self_loops ? "loops" : "exact";
  return cache_dir(o) / (ds.name + "-" + hash + "-k" + std::to_string(kappa) + "-" + loops + ".hop");
}

/// Masks for hops 1..kappa, from the on-disk cache when a matching entry exists.
lsdan::HopMaskSet obtain_masks(const Options& o, const lsdan::GraphDataset& ds, std::size_t kappa, lsdan::WalkMode mode,
                               bool* hit = nullptr) {
  const fs::path path = cache_path(o, ds, kappa, mode);
  if (fs::exists(path)) {
    try {
      auto loaded = lsdan::load_hop_masks(path);
      const bool loops = mode == lsdan::WalkMode::with_self_loops;
      if (loaded.dataset_hash == ds.content_hash && loaded.masks.kappa == kappa && loaded.masks.n() == ds.n() &&
          loaded.masks.with_self_loops == loops) {
        if (hit) *hit = true;
        return std::move(loaded.masks);
      }
    } catch (const std::exception& e) {
      std::cerr << "warning: ignoring unreadable mask cache " << path << ": " << e.what() << "\n";
    }
  }
  if (hit) *hit = false;
  auto masks = lsdan::compute_hop_masks(ds.adjacency, kappa, mode);
  fs::create_directories(path.parent_path());
  lsdan::save_hop_masks(path, masks, ds.content_hash);
  return masks;
}

std::string p_tag(double p) {
  std::string s = lsdan::format_p(p);
  for (auto& c : s)
    if (c == '.') c = '_';
  return s;
}

void write_trials(const fs::path& dir, const lsdan::TrialSummary& s, const json& config) {
  const std::string variant = s.label.empty() ? lsdan::to_string(s.objective) : s.label;
  for (const auto& t : s.trials) {
    json j = t;
    j["variant"] = variant;
    j["config"] = config;
    lsdan::write_json(dir / "trials" /
                          (variant + "_p" + p_tag(s.p) + "_k" + std::to_string(s.kappa) + "_L" +
                           std::to_string(s.layers) + "_d" + std::to_string(s.dim) + "_seed" + std::to_string(t.seed) +
                           ".json"),
                      j);
  }
}

/// Reports failures; returns the number of failed trials.
std::size_t report_failures(const lsdan::TrialSummary& s) {
  for (const auto& f : s.failures)
    std::cerr << "trial failed: " << s.dataset << " " << lsdan::to_string(s.objective) << " p=" << lsdan::format_p(s.p)
              << " seed=" << f.seed << ": " << f.message << "\n";
  return s.failures.size();
}

std::string header(const json& config) { return "# lsdan " + lsdan::version_string() + " config=" + config.dump() + "\n"; }

lsdan::GraphDataset load(const Resolved& r) {
  auto ds = lsdan::load_dataset(r.source);
  std::cerr << "loaded " << ds.name << ": " << ds.n() << " nodes, positive class '" << ds.positive_class << "' ("
            << ds.positives() << " nodes)\n";
  return ds;
}

// ---------------------------------------------------------------------------
// Commands

int cmd_prepare(const Options& o) {
  const Resolved r = resolve(o);
  const auto ds = load(r);
  bool hit = false;
  const auto masks = obtain_masks(o, ds, r.net.kappa, r.walk, &hit);
  std::cout << ds.n() << " nodes, " << ds.citation_records << " edges, " << ds.classes.size() << " classes, " << ds.m()
            << " features\n";
  std::cout << "undirected edges: " << ds.adjacency.edge_count()
            << ", self-citations dropped: " << ds.adjacency.report().self_edges_dropped
            << ", dangling citations: " << ds.dangling_citations << "\n";
  std::cout << "classes:";
  for (std::size_t c = 0; c < ds.classes.size(); ++c) std::cout << " " << c << "=" << ds.classes[c];
  std::cout << "\npositive class: " << ds.positive_class << " (" << ds.positives() << " nodes)\n";
  for (std::size_t k = 1; k <= masks.kappa; ++k)
    std::cout << "hop " << k << ": " << masks.mask(k).count() << " mask entries"
              << (masks.patched_rows[k - 1] ? ", " + std::to_string(masks.patched_rows[k - 1]) + " rows patched" : "")
              << "\n";
  std::cout << "mask cache " << (hit ? "hit" : "written") << ": " << cache_path(o, ds, r.net.kappa, r.walk).string()
            << "\n";
  return 0;
}

int cmd_train(const Options& o) {
  const Resolved r = resolve(o);
  const auto ds = load(r);
  const fs::path out(o.out);
  const json config = config_json(o, r, "train");
  const auto masks = obtain_masks(o, ds, r.net.kappa, r.walk);

  std::vector<lsdan::TrialSummary> rows;
  if (!o.split_file.empty()) {
    const auto split = lsdan::load_split(o.split_file);
    if (!split.dataset.empty() && split.dataset != ds.name)
      throw lsdan::ConfigError("split file was made for dataset '" + split.dataset + "'");
    for (auto i : split.positives_labeled)
      if (i >= ds.n() || ds.binary_labels[i] != 1)
        throw lsdan::ConfigError("split file does not match the dataset's positive class");
    lsdan::NetworkConfig net = r.net;
    lsdan::TrainConfig train = r.train;
    train.seed = split.seed;
    lsdan::TrialSummary s;
    s.dataset = ds.name;
    s.objective = train.objective;
    s.p = split.p;
    s.kappa = net.kappa;
    s.layers = net.layers;
    s.dim = net.hidden_dim;
    try {
      s.trials.push_back(lsdan::train_once(ds, lsdan::first_hops(masks, net.kappa), split, net, train));
    } catch (const std::exception& e) {
      s.failures.push_back({split.seed, e.what()});
    }
    lsdan::summarize(s);
    rows.push_back(std::move(s));
  } else {
    for (double p : o.p_list) {
      auto s = lsdan::run_trials(ds, masks, r.net, r.train, {p, o.trials, o.seed, o.parallel});
      std::cerr << "p=" << lsdan::format_p(p) << " F1 " << lsdan::mean_std(s) << "\n";
      rows.push_back(std::move(s));
    }
  }

  std::size_t failed = 0;
  std::vector<const lsdan::TrialSummary*> cells;
  std::vector<double> ps;
  json agg = json::array();
  for (const auto& s : rows) {
    write_trials(out, s, config);
    failed += report_failures(s);
    agg.push_back(lsdan::summary_to_json(s));
    ps.push_back(s.p);
  }
  lsdan::write_text(out / "results.csv", lsdan::csv_document(rows, config));
  lsdan::write_json(out / "results.json", {{"config", config}, {"results", agg}});
  std::vector<std::vector<const lsdan::TrialSummary*>> grid;
  for (const auto& s : rows) grid.push_back({&s});
  const std::string col = lsdan::to_string(r.train.objective);
  const std::string table = lsdan::summary_table(ds.name + " F1 on U (mean+-std over trials)",
                                                 std::span<const std::string>(&col, 1), ps, grid);
  lsdan::write_text(out / "summary.txt", header(config) + table);
  std::cout << table;
  return failed ? 2 : 0;
}

int cmd_sweep(const Options& o, bool p_given) {
  const Resolved r = resolve(o);
  const auto param = lsdan::parse_sweep_parameter(o.param);
  std::vector<std::size_t> values = o.values;
  if (values.empty()) {
    switch (param) {
      case lsdan::SweepParameter::dim:
        values = {8, 16, 32, 64, 128};
        break;
      case lsdan::SweepParameter::kappa:
        values = {1, 2, 3, 4, 5, 6, 7, 8};
        break;
      case lsdan::SweepParameter::layers:
        values = {1, 2, 3, 4, 5, 6};
        break;
    }
  }
  for (auto v : values)
    if (v < 1) throw lsdan::ConfigError("--values must be >= 1");
  const double p = p_given ? o.p_list.front() : 0.02;
  if (p_given && o.p_list.size() > 1) std::cerr << "note: sweep uses only the first --p value\n";

  const auto ds = load(r);
  const fs::path out(o.out);
  json config = config_json(o, r, "sweep");
  config["sweep"] = {{"parameter", o.param}, {"values", values}, {"p", p}};
  std::size_t kappa = r.net.kappa;
  if (param == lsdan::SweepParameter::kappa) kappa = *std::max_element(values.begin(), values.end());
  const auto masks = obtain_masks(o, ds, kappa, r.walk);

  auto rows = lsdan::sweep(ds, masks, r.net, r.train, param, values, {p, o.trials, o.seed, o.parallel});
  std::size_t failed = 0;
  std::string table = ds.name + " sweep over " + o.param + " at p=" + lsdan::format_p(p) + "\n";
  for (std::size_t i = 0; i < rows.size(); ++i) {
    rows[i].label = o.param + "=" + std::to_string(values[i]);
    write_trials(out, rows[i], config);
    failed += report_failures(rows[i]);
    table += rows[i].label + "  " + lsdan::mean_std(rows[i]) + "\n";
  }
  lsdan::write_text(out / "sweep.csv", lsdan::csv_document(rows, config));
  lsdan::write_text(out / "summary.txt", header(config) + table);
  std::cout << table;
  return failed ? 2 : 0;
}

int cmd_ablate(const Options& o) {
  const Resolved r = resolve(o);
  const auto ds = load(r);
  const fs::path out(o.out);
  const json config = config_json(o, r, "ablate");
  const auto masks = obtain_masks(o, ds, r.net.kappa, r.walk);
  const auto grid = lsdan::ablation_suite(ds, masks, r.net, r.train, o.p_list, o.trials, o.seed, o.parallel);

  std::vector<lsdan::TrialSummary> flat;
  std::vector<std::vector<const lsdan::TrialSummary*>> cells;
  std::size_t failed = 0;
  for (const auto& row : grid)
    for (const auto& s : row.columns) flat.push_back(s);
  for (std::size_t r_i = 0, k = 0; r_i < grid.size(); ++r_i) {
    cells.emplace_back();
    for (std::size_t c = 0; c < grid[r_i].columns.size(); ++c, ++k) cells.back().push_back(&flat[k]);
  }
  for (const auto& s : flat) {
    write_trials(out, s, config);
    failed += report_failures(s);
  }
  lsdan::write_text(out / "ablation.csv", lsdan::csv_document(flat, config));
  const std::string table =
      lsdan::summary_table(ds.name + " ablation, F1 on U (k1 = single hop)", lsdan::ablation_columns(), o.p_list, cells);
  lsdan::write_text(out / "summary.txt", header(config) + table);
  std::cout << table;
  return failed ? 2 : 0;
}

int cmd_attention(const Options& o, bool p_given) {
  const Resolved r = resolve(o);
  if (o.hops.empty()) throw lsdan::ConfigError("--hops must list at least one hop");
  for (auto k : o.hops)
    if (k < 1) throw lsdan::ConfigError("--hops are 1-based");
  const double p = p_given ? o.p_list.front() : 0.05;
  const auto ds = load(r);
  const fs::path out(o.out);
  json config = config_json(o, r, "attention");
  config["attention"] = {{"hops", o.hops}, {"p", p}};
  const std::size_t kmax = *std::max_element(o.hops.begin(), o.hops.end());
  const auto masks = obtain_masks(o, ds, kmax, r.walk);
  const auto rows = lsdan::single_hop_analysis(ds, masks, r.net, r.train, o.hops, {p, o.trials, o.seed, o.parallel});

  std::string csv = header(config) + "k,f1,std_f1,mean_attention\n";
  std::string table = ds.name + " per-hop F1 (B^k alone) and mean hop attention, p=" + lsdan::format_p(p) + "\n";
  json arr = json::array();
  double total = 0.0;
  for (const auto& row : rows) {
    csv += std::to_string(row.k) + "," + lsdan::format_fixed(row.f1) + "," + lsdan::format_fixed(row.std_f1) + "," +
           lsdan::format_fixed(row.mean_attention) + "\n";
    table += "k=" + std::to_string(row.k) + "  F1 " + lsdan::format_fixed(row.f1, 3) + "+-" +
             lsdan::format_fixed(row.std_f1, 3) + "  attention " + lsdan::format_fixed(row.mean_attention, 4) + "\n";
    arr.push_back({{"k", row.k}, {"f1", row.f1}, {"std_f1", row.std_f1}, {"mean_attention", row.mean_attention}});
    total += row.mean_attention;
  }
  table += "attention total " + lsdan::format_fixed(total, 6) + "\n";
  lsdan::write_text(out / "attention.csv", csv);
  lsdan::write_json(out / "attention.json", {{"config", config}, {"rows", arr}});
  lsdan::write_text(out / "summary.txt", header(config) + table);
  std::cout << table;
  return 0;
}

int cmd_split(const Options& o) {
  if (o.emit.empty() == o.load.empty()) throw lsdan::ConfigError("split needs exactly one of --emit FILE or --load FILE");
  if (!o.load.empty()) {
    const auto s = lsdan::load_split(o.load);
    std::cout << "dataset " << (s.dataset.empty() ? "?" : s.dataset) << ", positive class "
              << (s.positive_class.empty() ? "?" : s.positive_class) << ", p=" << lsdan::format_p(s.p)
              << ", seed " << s.seed << ": |P|=" << s.positives_labeled.size() << " |U|=" << s.unlabeled.size()
              << " prior=" << lsdan::format_fixed(s.prior) << "\n";
    return 0;
  }
  const Resolved r = resolve(o);
  const auto ds = load(r);
  const auto s = lsdan::make_pu_split(ds, o.p_list.front(), o.seed);
  lsdan::save_split(o.emit, s);
  std::cout << "wrote " << o.emit << ": |P|=" << s.positives_labeled.size() << " |U|=" << s.unlabeled.size()
            << " prior=" << lsdan::format_fixed(s.prior) << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Positive-unlabeled node classification with long-short distance attention"};
  app.set_version_flag("--version", lsdan::version_string());
  app.set_config("--config", "", "Read options from a TOML or INI file (command-line flags take precedence)");
  app.require_subcommand(1);
  app.fallthrough();
  // A repeated flag overrides the earlier one; list options append.
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);

  Options o;
  auto* data = app.add_option_group("data");
  data->add_option("--dataset", o.dataset, "Dataset name; selects <name>.content/<name>.cites and class presets")
      ->capture_default_str();
  data->add_option("--data-dir", o.data_dir, "Directory holding the dataset files (default $LSDAN_DATA_DIR or ./data)");
  data->add_option("--content", o.content, "Explicit path to the .content file");
  data->add_option("--cites", o.cites, "Explicit path to the .cites file");
  data->add_option("--positive-class", o.positive_class, "Positive class, by name or index in the class order");
  data->add_flag("--row-normalize", o.row_normalize, "Scale each feature row to sum to 1");
  app.add_option("--out", o.out, "Output directory")->capture_default_str();
  app.add_option("--cache-dir", o.cache_dir, "Hop mask cache directory (default <out>/cache)");

  app.add_option("--kappa", o.kappa, "Number of hop masks per layer")->capture_default_str();
  app.add_option("--layers", o.layers, "Number of attention layers")->capture_default_str();
  app.add_option("--dim", o.dim, "Hidden dimension")->capture_default_str();
  app.add_option("--key", o.key, "Hop attention key source: layer_input or raw_features")->capture_default_str();
  app.add_flag("--exact-walk", o.exact_walk, "Masks mark walks of exactly k steps (no self-loops)");
  app.add_option("--steps", o.steps, "Adam steps per trial")->capture_default_str();
  app.add_option("--lr", o.lr, "Adam learning rate")->capture_default_str();
  app.add_option("--objective", o.objective, "nnpu, upu, naive_ce or pn")->capture_default_str();
  app.add_option("--prior", o.prior, "Override the class prior (default: ground truth of U)");
  auto* p_opt = app.add_option("--p", o.p_list, "Labeled-positive fractions")->delimiter(',')->multi_option_policy(CLI::MultiOptionPolicy::TakeAll)->capture_default_str();
  app.add_option("--trials", o.trials, "Trials per setting")->capture_default_str();
  app.add_option("--seed", o.seed, "Base seed; trial t uses seed+t")->capture_default_str();
  app.add_option("--parallel-trials", o.parallel, "Trials run concurrently")->capture_default_str();

  auto* prepare = app.add_subcommand("prepare", "Parse a dataset, print its statistics and cache its hop masks");
  auto* train = app.add_subcommand("train", "Run trials for each p and write per-trial JSON, CSV and a summary table");
  train->add_option("--split", o.split_file, "Train once on a split file instead of sampling splits");
  auto* sweep = app.add_subcommand("sweep", "Vary one hyperparameter (default p=0.02)");
  sweep->add_option("--param", o.param, "dim, kappa or layers")->capture_default_str();
  sweep->add_option("--values", o.values, "Values to try (default depends on --param)")->delimiter(',')->multi_option_policy(CLI::MultiOptionPolicy::TakeAll);
  auto* ablate = app.add_subcommand("ablate", "Objective and hop-count ablation grid over the p list");
  auto* attention = app.add_subcommand("attention", "Per-hop F1 and mean hop attention (default p=0.05)");
  attention->add_option("--hops", o.hops, "Hops to analyse")->delimiter(',')->multi_option_policy(CLI::MultiOptionPolicy::TakeAll)->capture_default_str();
  auto* split = app.add_subcommand("split", "Write or inspect a PU split file (uses the first --p value)");
  split->add_option("--emit", o.emit, "Write a split for --dataset, --p and --seed");
  split->add_option("--load", o.load, "Print a summary of an existing split file");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    const bool p_given = p_opt->count() > 0;
    if (*prepare) return cmd_prepare(o);
    if (*train) return cmd_train(o);
    if (*sweep) return cmd_sweep(o, p_given);
    if (*ablate) return cmd_ablate(o);
    if (*attention) return cmd_attention(o, p_given);
    if (*split) return cmd_split(o);
  } catch (const lsdan::ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << "\n";
    return 64;
  } catch (const lsdan::IoError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 66;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
