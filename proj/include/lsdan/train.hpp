#pragma once

// Full-batch training, evaluation and the multi-trial experiment drivers.

#include <chrono>
#include <cmath>
#include <cstdint>
#include <exception>
#include <numeric>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "lsdan/data.hpp"
#include "lsdan/model.hpp"
#include "lsdan/purisk.hpp"

namespace lsdan {

enum class Objective { upu, nnpu, naive_ce, pn };

NLOHMANN_JSON_SERIALIZE_ENUM(Objective, {{Objective::upu, "upu"},
                                         {Objective::nnpu, "nnpu"},
                                         {Objective::naive_ce, "naive_ce"},
                                         {Objective::pn, "pn"}})

inline std::string to_string(Objective o) { return nlohmann::json(o).get<std::string>(); }

inline Objective parse_objective(std::string_view s) {
  if (s == "upu") return Objective::upu;
  if (s == "nnpu") return Objective::nnpu;
  if (s == "naive_ce" || s == "ce") return Objective::naive_ce;
  if (s == "pn") return Objective::pn;
  throw ConfigError("unknown objective '" + std::string(s) + "' (upu, nnpu, naive_ce, pn)");
}

struct TrainConfig {
  std::size_t steps = 500;
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  Objective objective = Objective::nnpu;
  std::uint64_t seed = 0;
  double eval_threshold = 0.5;
  double prior_override = 0.0;  // 0: use the ground-truth prior of U

  void validate() const {
    if (prior_override != 0.0 && !(prior_override > 0.0 && prior_override < 1.0))
      throw ConfigError("prior override must lie in (0,1)");
    if (steps < 1) throw ConfigError("steps must be >= 1");
    if (!(learning_rate > 0.0)) throw ConfigError("learning rate must be > 0");
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("Adam betas must lie in [0,1)");
    if (!(eps > 0.0)) throw ConfigError("Adam eps must be > 0");
  }
};

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = {{"steps", c.steps}, {"learning_rate", c.learning_rate}, {"beta1", c.beta1}, {"beta2", c.beta2},
       {"eps", c.eps},     {"objective", c.objective},         {"seed", c.seed},   {"eval_threshold", c.eval_threshold},
       {"prior_override", c.prior_override}};
}

// ---------------------------------------------------------------------------
// Adam

class Adam {
 public:
  Adam(std::vector<Tensor> params, double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
    for (const auto& p : params_) {
      if (!p.is_leaf() || !p.requires_grad()) throw ContractError("Adam: parameters must be trainable leaf tensors");
      m_.emplace_back(p.size(), 0.0);
      v_.emplace_back(p.size(), 0.0);
    }
  }

  Adam(std::vector<Tensor> params, const TrainConfig& c) : Adam(std::move(params), c.learning_rate, c.beta1, c.beta2, c.eps) {}

  std::size_t steps_taken() const noexcept { return t_; }

  void zero_grad() {
    for (auto& p : params_) p.zero_grad();
  }

  /// One bias-corrected update from the accumulated gradients. A parameter
  /// without a gradient is treated as having a zero gradient.
  void step() {
    for (std::size_t k = 0; k < params_.size(); ++k)
      for (double g : params_[k].grad())
        if (!std::isfinite(g)) throw NumericalError(t_, "non-finite gradient");
    ++t_;
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (std::size_t k = 0; k < params_.size(); ++k) {
      auto w = params_[k].mutable_values();
      auto g = params_[k].grad();
      auto& m = m_[k];
      auto& v = v_[k];
      for (std::size_t i = 0; i < w.size(); ++i) {
        const double gi = g.empty() ? 0.0 : g[i];
        m[i] = beta1_ * m[i] + (1.0 - beta1_) * gi;
        v[i] = beta2_ * v[i] + (1.0 - beta2_) * gi * gi;
        w[i] -= lr_ * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps_);
      }
    }
  }

 private:
  std::vector<Tensor> params_;
  std::vector<std::vector<double>> m_, v_;
  double lr_, beta1_, beta2_, eps_;
  std::size_t t_ = 0;
};

// ---------------------------------------------------------------------------
// Evaluation

struct F1Score {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

/// Positive prediction when score >= threshold. Vanishing denominators give 0.
inline F1Score evaluate_f1(std::span<const double> predictions, std::span<const int> truth, double threshold = 0.5) {
  if (predictions.empty()) throw ConfigError("evaluate_f1: empty evaluation set");
  if (predictions.size() != truth.size()) throw ShapeError("evaluate_f1: predictions and truth differ in length");
  std::size_t tp = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    const bool pred = predictions[i] >= threshold;
    const bool pos = truth[i] == 1;
    tp += pred && pos;
    fp += pred && !pos;
    fn += !pred && pos;
  }
  F1Score s;
  s.precision = tp + fp ? double(tp) / double(tp + fp) : 0.0;
  s.recall = tp + fn ? double(tp) / double(tp + fn) : 0.0;
  s.f1 = s.precision + s.recall > 0.0 ? 2.0 * s.precision * s.recall / (s.precision + s.recall) : 0.0;
  return s;
}

// ---------------------------------------------------------------------------
// Fitting. The fit routine sees index sets and a prior, never node labels.

struct ObjectiveInputs {
  std::vector<std::size_t> positives;  // P for PU objectives, every labeled positive for pn
  std::vector<std::size_t> others;     // U for PU objectives, labeled negatives for pn
  double prior = 0.5;
};

inline ObjectiveInputs pu_inputs(const PUSplit& s) { return {s.positives_labeled, s.unlabeled, s.prior}; }

/// Fully labeled view of the split's node subset, for the supervised reference objective.
inline ObjectiveInputs pn_inputs(const PUSplit& s, std::span<const int> binary_labels) {
  ObjectiveInputs in;
  in.positives = s.positives_labeled;
  for (auto i : s.unlabeled) (binary_labels[i] == 1 ? in.positives : in.others).push_back(i);
  std::sort(in.positives.begin(), in.positives.end());
  in.prior = double(in.positives.size()) / double(in.positives.size() + in.others.size());
  return in;
}

inline Tensor objective_value(Objective o, const Tensor& logits, const ObjectiveInputs& in) {
  switch (o) {
    case Objective::upu:
      return upu_risk(risk_terms(logits, in.positives, in.others), ClassPrior(in.prior));
    case Objective::nnpu:
      return nnpu_risk(risk_terms(logits, in.positives, in.others), ClassPrior(in.prior));
    case Objective::naive_ce:
      return naive_ce_risk(logits, in.positives, in.others);
    case Objective::pn:
      return pn_risk(logits, in.positives, in.others, ClassPrior(in.prior));
  }
  throw ConfigError("unknown objective");
}

struct FitResult {
  std::vector<LayerParams> params;
  std::vector<double> loss_curve;
  std::vector<double> logits;                             // from the final parameters
  std::vector<std::vector<double>> hop_attention_means;   // [layer][hop]
};

inline std::vector<double> column_means(const Tensor& t) {
  std::vector<double> out(t.cols(), 0.0);
  for (std::size_t i = 0; i < t.rows(); ++i)
    for (std::size_t j = 0; j < t.cols(); ++j) out[j] += t(i, j);
  for (auto& v : out) v /= static_cast<double>(t.rows());
  return out;
}

inline FitResult fit(const Tensor& features, const HopPatterns& masks, const ObjectiveInputs& inputs,
                     const NetworkConfig& net, const TrainConfig& train) {
  net.validate();
  train.validate();
  FitResult r;
  r.params = init_params(net, train.seed);
  std::vector<Tensor> flat;
  for (const auto& p : r.params)
    for (auto& t : p.tensors()) flat.push_back(t);
  Adam opt(flat, train);
  r.loss_curve.reserve(train.steps);
  for (std::size_t step = 0; step < train.steps; ++step) {
    const Tensor loss = objective_value(train.objective, forward(features, masks, r.params, net).logits, inputs);
    const double value = loss.item();
    if (!std::isfinite(value)) throw NumericalError(step, "non-finite objective");
    if (train.objective == Objective::nnpu && value < 0.0) throw NumericalError(step, "negative nnPU objective");
    r.loss_curve.push_back(value);
    opt.zero_grad();
    loss.backward();
    try {
      opt.step();
    } catch (const NumericalError& e) {
      throw NumericalError(step, e.what());
    }
  }
  const ForwardResult final_pass = forward(features, masks, r.params, net);
  r.logits.assign(final_pass.logits.values().begin(), final_pass.logits.values().end());
  for (const auto& layer : final_pass.layers) r.hop_attention_means.push_back(column_means(layer.hop_attention));
  return r;
}

// ---------------------------------------------------------------------------
// Trials

struct TrialReport {
  std::string dataset;
  Objective objective = Objective::nnpu;
  double p = 0.0;
  std::size_t kappa = 0;
  std::size_t layers = 0;
  std::size_t dim = 0;
  std::uint64_t seed = 0;
  double prior = 0.0;
  std::size_t labeled = 0;
  std::size_t unlabeled = 0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::vector<double> loss_curve;
  std::vector<double> hop_attention_means;  // first layer
  std::vector<std::vector<double>> hop_attention_by_layer;
  double runtime_seconds = 0.0;
};

inline void to_json(nlohmann::json& j, const TrialReport& r) {
  j = {{"dataset", r.dataset},
       {"objective", r.objective},
       {"p", r.p},
       {"kappa", r.kappa},
       {"layers", r.layers},
       {"dim", r.dim},
       {"seed", r.seed},
       {"prior", r.prior},
       {"labeled", r.labeled},
       {"unlabeled", r.unlabeled},
       {"evaluation_set", "U"},
       {"precision", r.precision},
       {"recall", r.recall},
       {"f1", r.f1},
       {"loss_curve", r.loss_curve},
       {"hop_attention_means", r.hop_attention_means},
       {"hop_attention_by_layer", r.hop_attention_by_layer},
       {"runtime_seconds", r.runtime_seconds}};
}

/// Fresh initialisation from the split seed, trained on the chosen objective,
/// scored by F1 over U at the decision threshold.
inline TrialReport train_once(const GraphDataset& ds, const HopPatterns& masks, const PUSplit& split, NetworkConfig net,
                              const TrainConfig& train) {
  if (net.input_dim == 0) net.input_dim = ds.m();
  const auto start = std::chrono::steady_clock::now();
  ObjectiveInputs inputs = train.objective == Objective::pn ? pn_inputs(split, ds.binary_labels) : pu_inputs(split);
  if (train.prior_override > 0.0 && train.objective != Objective::pn) inputs.prior = train.prior_override;
  const FitResult fitted = fit(ds.features, masks, inputs, net, train);

  std::vector<double> scores;
  std::vector<int> truth;
  for (auto i : split.unlabeled) {
    scores.push_back(stable_sigmoid(fitted.logits[i]));
    truth.push_back(ds.binary_labels[i]);
  }
  const F1Score f = evaluate_f1(scores, truth, train.eval_threshold);

  TrialReport r;
  r.dataset = ds.name;
  r.objective = train.objective;
  r.p = split.p;
  r.kappa = net.kappa;
  r.layers = net.layers;
  r.dim = net.hidden_dim;
  r.seed = train.seed;
  r.prior = inputs.prior;
  r.labeled = split.positives_labeled.size();
  r.unlabeled = split.unlabeled.size();
  r.precision = f.precision;
  r.recall = f.recall;
  r.f1 = f.f1;
  r.loss_curve = fitted.loss_curve;
  r.hop_attention_by_layer = fitted.hop_attention_means;
  r.hop_attention_means = fitted.hop_attention_means.front();
  r.runtime_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return r;
}

/// First `kappa` hop masks of a precomputed set.
inline HopPatterns first_hops(const HopMaskSet& masks, std::size_t kappa) {
  if (kappa > masks.kappa)
    throw ConfigError("requested " + std::to_string(kappa) + " hops, masks cover " + std::to_string(masks.kappa));
  return HopPatterns(masks.patterns.begin(), masks.patterns.begin() + static_cast<std::ptrdiff_t>(kappa));
}

struct TrialFailure {
  std::uint64_t seed = 0;
  std::string message;
};

struct TrialSummary {
  std::string dataset;
  Objective objective = Objective::nnpu;
  double p = 0.0;
  std::size_t kappa = 0;
  std::size_t layers = 0;
  std::size_t dim = 0;
  std::vector<TrialReport> trials;
  std::vector<TrialFailure> failures;
  double mean_f1 = 0.0;
  double std_f1 = 0.0;
  bool single_trial = false;  // std is reported as 0, not estimated
  std::string label;          // optional column tag (ablation/sweep)
};

struct TrialPlan {
  double p = 0.05;
  std::size_t n_trials = 10;
  std::uint64_t base_seed = 0;
  std::size_t parallel = 1;
};

inline void summarize(TrialSummary& s) {
  const std::size_t n = s.trials.size();
  s.mean_f1 = s.std_f1 = 0.0;
  s.single_trial = n == 1;
  if (n == 0) return;
  for (const auto& t : s.trials) s.mean_f1 += t.f1;
  s.mean_f1 /= double(n);
  if (n > 1) {
    double ss = 0.0;
    for (const auto& t : s.trials) ss += (t.f1 - s.mean_f1) * (t.f1 - s.mean_f1);
    s.std_f1 = std::sqrt(ss / double(n - 1));
  }
}

/// Trial t uses seed base_seed + t for both its split and its initialisation.
inline TrialSummary run_trials(const GraphDataset& ds, const HopMaskSet& masks, NetworkConfig net, TrainConfig train,
                               const TrialPlan& plan) {
  if (plan.n_trials < 1) throw ConfigError("n_trials must be >= 1");
  if (net.input_dim == 0) net.input_dim = ds.m();
  net.validate();
  train.validate();
  const HopPatterns hops = first_hops(masks, net.kappa);

  std::vector<std::optional<TrialReport>> reports(plan.n_trials);
  std::vector<std::string> errors(plan.n_trials);
  auto run_one = [&](std::size_t t) {
    TrainConfig tc = train;
    tc.seed = plan.base_seed + t;
    try {
      const PUSplit split = make_pu_split(ds, plan.p, tc.seed);
      reports[t] = train_once(ds, hops, split, net, tc);
    } catch (const std::exception& e) {
      errors[t] = e.what();
    }
  };
  const std::size_t workers = std::max<std::size_t>(1, std::min(plan.parallel, plan.n_trials));
  if (workers == 1) {
    for (std::size_t t = 0; t < plan.n_trials; ++t) run_one(t);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w)
      pool.emplace_back([&, w] {
        for (std::size_t t = w; t < plan.n_trials; t += workers) run_one(t);
      });
    for (auto& th : pool) th.join();
  }

  TrialSummary s;
  s.dataset = ds.name;
  s.objective = train.objective;
  s.p = plan.p;
  s.kappa = net.kappa;
  s.layers = net.layers;
  s.dim = net.hidden_dim;
  for (std::size_t t = 0; t < plan.n_trials; ++t) {
    if (reports[t])
      s.trials.push_back(std::move(*reports[t]));
    else
      s.failures.push_back({plan.base_seed + t, errors[t]});
  }
  summarize(s);
  return s;
}

// ---------------------------------------------------------------------------
// Experiment drivers

struct AblationRow {
  double p = 0.0;
  std::vector<TrialSummary> columns;
};

/// Column labels of the ablation grid, in output order.
inline const std::vector<std::string>& ablation_columns() {
  static const std::vector<std::string> cols = {"naive_ce", "upu_k1", "upu", "nnpu_k1", "nnpu"};
  return cols;
}

/// Per p: naive cross-entropy at full kappa, then {upu, nnpu} x {kappa=1, full kappa}.
inline std::vector<AblationRow> ablation_suite(const GraphDataset& ds, const HopMaskSet& masks, const NetworkConfig& net,
                                               const TrainConfig& train, std::span<const double> p_list,
                                               std::size_t n_trials, std::uint64_t base_seed, std::size_t parallel = 1) {
  struct Variant {
    Objective objective;
    std::size_t kappa;
  };
  const std::vector<Variant> variants = {{Objective::naive_ce, net.kappa},
                                         {Objective::upu, 1},
                                         {Objective::upu, net.kappa},
                                         {Objective::nnpu, 1},
                                         {Objective::nnpu, net.kappa}};
  std::vector<AblationRow> rows;
  for (double p : p_list) {
    AblationRow row{p, {}};
    for (std::size_t v = 0; v < variants.size(); ++v) {
      NetworkConfig nc = net;
      nc.kappa = variants[v].kappa;
      TrainConfig tc = train;
      tc.objective = variants[v].objective;
      TrialSummary s = run_trials(ds, masks, nc, tc, {p, n_trials, base_seed, parallel});
      s.label = ablation_columns()[v];
      row.columns.push_back(std::move(s));
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

struct HopAnalysisRow {
  std::size_t k = 0;
  double f1 = 0.0;              // mean F1 training on B^k alone
  double std_f1 = 0.0;
  double mean_attention = 0.0;  // full model's mean first-layer weight on hop k
};

/// For each k: train with B^k as the only mask; separately train the full
/// model over hops 1..max(k_list) and report its mean hop attention at k.
inline std::vector<HopAnalysisRow> single_hop_analysis(const GraphDataset& ds, const HopMaskSet& masks,
                                                       const NetworkConfig& net, const TrainConfig& train,
                                                       std::span<const std::size_t> k_list, const TrialPlan& plan) {
  if (k_list.empty()) throw ConfigError("single_hop_analysis: empty k list");
  const std::size_t kmax = *std::max_element(k_list.begin(), k_list.end());
  if (kmax > masks.kappa) throw ConfigError("single_hop_analysis: masks only cover " + std::to_string(masks.kappa) + " hops");

  NetworkConfig full = net;
  full.kappa = kmax;
  const TrialSummary full_run = run_trials(ds, masks, full, train, plan);
  if (full_run.trials.empty()) throw NumericalError(0, "every full-model trial failed");
  std::vector<double> attention(kmax, 0.0);
  for (const auto& t : full_run.trials)
    for (std::size_t k = 0; k < kmax; ++k) attention[k] += t.hop_attention_means[k];
  for (auto& a : attention) a /= double(full_run.trials.size());

  std::vector<HopAnalysisRow> rows;
  for (auto k : k_list) {
    if (k < 1) throw ConfigError("single_hop_analysis: hops are 1-based");
    HopMaskSet single;
    single.kappa = 1;
    single.with_self_loops = masks.with_self_loops;
    single.masks = {masks.mask(k)};
    single.patterns = {masks.pattern(k)};
    single.patched_rows = {masks.patched_rows.at(k - 1)};
    NetworkConfig one = net;
    one.kappa = 1;
    const TrialSummary s = run_trials(ds, single, one, train, plan);
    rows.push_back({k, s.mean_f1, s.std_f1, attention[k - 1]});
  }
  return rows;
}

enum class SweepParameter { dim, kappa, layers };

inline SweepParameter parse_sweep_parameter(std::string_view s) {
  if (s == "dim" || s == "d") return SweepParameter::dim;
  if (s == "kappa" || s == "k") return SweepParameter::kappa;
  if (s == "layers" || s == "L") return SweepParameter::layers;
  throw ConfigError("unknown sweep parameter '" + std::string(s) + "' (dim, kappa, layers)");
}

inline std::vector<TrialSummary> sweep(const GraphDataset& ds, const HopMaskSet& masks, const NetworkConfig& net,
                                       const TrainConfig& train, SweepParameter param,
                                       std::span<const std::size_t> values, const TrialPlan& plan) {
  std::vector<TrialSummary> out;
  for (auto v : values) {
    NetworkConfig nc = net;
    switch (param) {
      case SweepParameter::dim:
        nc.hidden_dim = v;
        break;
      case SweepParameter::kappa:
        nc.kappa = v;
        break;
      case SweepParameter::layers:
        nc.layers = v;
        break;
    }
    out.push_back(run_trials(ds, masks, nc, train, plan));
  }
  return out;
}

}  // namespace lsdan
