#pragma once

// Empirical risks for positive-unlabeled training with the logistic loss.
//
//   R_p+ = mean_{i in P} L(f(o_i), 1)      R_p- = mean_{i in P} L(f(o_i), 0)
//   R_u- = mean_{i in U} L(f(o_i), 0)
//   uPU  = pi_p R_p+ + (R_u- - pi_p R_p-)
//   nnPU = pi_p R_p+ + max(0, R_u- - pi_p R_p-)
//
// uPU and nnPU share the bracketed term so they agree bit for bit whenever the
// clamp is inactive.

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "lsdan/errors.hpp"
#include "lsdan/tensor.hpp"

namespace lsdan {

inline constexpr double kProbabilityClamp = 1e-12;

class ClassPrior {
 public:
  explicit ClassPrior(double positive) : pi_p_(positive) {
    if (!(positive > 0.0 && positive < 1.0))
      throw ConfigError("class prior must lie strictly inside (0,1), got " + std::to_string(positive));
  }
  double positive() const noexcept { return pi_p_; }
  double negative() const noexcept { return 1.0 - pi_p_; }

 private:
  double pi_p_;
};

inline void check_label(int label) {
  if (label != 0 && label != 1) throw ContractError("logistic loss label must be 0 or 1, got " + std::to_string(label));
}

/// -[y log p + (1-y) log(1-p)] with p clamped to [eps, 1-eps].
inline double logistic_loss(double prediction, int label) {
  check_label(label);
  const double p = std::clamp(prediction, kProbabilityClamp, 1.0 - kProbabilityClamp);
  return label == 1 ? -std::log(p) : -std::log1p(-p);
}

/// Elementwise logistic loss of probabilities against a constant label.
/// Entries sitting on the clamp receive zero gradient.
inline Tensor logistic_loss(const Tensor& probs, int label) {
  check_label(label);
  std::vector<double> out(probs.size());
  for (std::size_t k = 0; k < out.size(); ++k) out[k] = logistic_loss(probs.values()[k], label);
  return make_op("logistic_loss", probs.rows(), probs.cols(), std::move(out), {probs}, [label](const detail::Node& self) {
    auto& in = *self.inputs[0];
    auto& g = in.grad_buffer();
    for (std::size_t k = 0; k < g.size(); ++k) {
      const double p = in.values[k];
      if (p <= kProbabilityClamp || p >= 1.0 - kProbabilityClamp) continue;
      g[k] += self.grad[k] * (label == 1 ? -1.0 / p : 1.0 / (1.0 - p));
    }
  });
}

/// Mean logistic loss of sigmoid(logits[idx]) against `label`.
inline Tensor mean_logistic_loss(const Tensor& logits, std::span<const std::size_t> idx, int label) {
  if (idx.empty()) throw ConfigError("risk over an empty index set");
  return mean(logistic_loss(sigmoid(gather_rows(logits, idx)), label));
}

struct RiskTerms {
  Tensor r_p_plus;   // labeled positives vs label 1
  Tensor r_p_minus;  // labeled positives vs label 0
  Tensor r_u_minus;  // unlabeled vs label 0
};

inline void check_disjoint(std::span<const std::size_t> a, std::span<const std::size_t> b, std::size_t n) {
  std::vector<char> seen(n, 0);
  for (auto i : a) {
    if (i >= n) throw ConfigError("index " + std::to_string(i) + " outside " + std::to_string(n) + " nodes");
    seen[i] = 1;
  }
  for (auto i : b) {
    if (i >= n) throw ConfigError("index " + std::to_string(i) + " outside " + std::to_string(n) + " nodes");
    if (seen[i]) throw ConfigError("index sets overlap at node " + std::to_string(i));
  }
}

inline RiskTerms risk_terms(const Tensor& logits, std::span<const std::size_t> positives,
                            std::span<const std::size_t> unlabeled) {
  if (logits.cols() != 1) throw ShapeError("risk_terms: logits must be a column, got " + to_string(logits.shape()));
  if (positives.empty()) throw ConfigError("risk_terms: labeled positive set is empty");
  if (unlabeled.empty()) throw ConfigError("risk_terms: unlabeled set is empty");
  check_disjoint(positives, unlabeled, logits.rows());
  const Tensor pos_probs = sigmoid(gather_rows(logits, positives));
  return {mean(logistic_loss(pos_probs, 1)), mean(logistic_loss(pos_probs, 0)),
          mean_logistic_loss(logits, unlabeled, 0)};
}

namespace detail {
inline Tensor negative_part_estimate(const RiskTerms& t, const ClassPrior& prior) {
  return sub(t.r_u_minus, scale(t.r_p_minus, prior.positive()));
}
}  // namespace detail

/// Unbiased PU risk; may be negative.
inline Tensor upu_risk(const RiskTerms& t, const ClassPrior& prior) {
  return add(scale(t.r_p_plus, prior.positive()), detail::negative_part_estimate(t, prior));
}

/// Non-negative PU risk. At the kink the gradient follows the unclamped branch.
inline Tensor nnpu_risk(const RiskTerms& t, const ClassPrior& prior) {
  return add(scale(t.r_p_plus, prior.positive()), relu(detail::negative_part_estimate(t, prior)));
}

/// Fully supervised risk: pi_p R_p+ + pi_n R_n-.
inline Tensor pn_risk(const Tensor& logits, std::span<const std::size_t> positives,
                      std::span<const std::size_t> negatives, const ClassPrior& prior) {
  if (positives.empty() || negatives.empty()) throw ConfigError("pn_risk: both label sets must be non-empty");
  check_disjoint(positives, negatives, logits.rows());
  return add(scale(mean_logistic_loss(logits, positives, 1), prior.positive()),
             scale(mean_logistic_loss(logits, negatives, 0), prior.negative()));
}

/// Plain cross-entropy treating P as positive and U as negative, averaged over P and U.
inline Tensor naive_ce_risk(const Tensor& logits, std::span<const std::size_t> positives,
                            std::span<const std::size_t> unlabeled) {
  if (positives.empty() || unlabeled.empty()) throw ConfigError("naive_ce_risk: empty index set");
  check_disjoint(positives, unlabeled, logits.rows());
  const double np = static_cast<double>(positives.size());
  const double nu = static_cast<double>(unlabeled.size());
  return add(scale(sum(logistic_loss(sigmoid(gather_rows(logits, positives)), 1)), 1.0 / (np + nu)),
             scale(sum(logistic_loss(sigmoid(gather_rows(logits, unlabeled)), 0)), 1.0 / (np + nu)));
}

}  // namespace lsdan
