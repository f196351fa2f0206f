#pragma once

#include <span>

#include "immcognito/tensor.hpp"

namespace immcognito {

inline constexpr double kProbabilityFloor = 1e-12;

// Weights of the composite objective and the de-identification gate.
struct LossWeights {
  double alpha = 1.0;  // reconstruction
  double beta = 2.0;   // gesture preservation
  double gamma = 1.0;  // de-identification
  double delta = 2.0;  // offset of the stabilized identity term
  double tau = 0.25;   // identification-accuracy threshold of the gate

  void validate() const;
};

// Twice chance for S subjects.
inline double default_tau(int subjects) { return 2.0 / subjects; }

// Symmetric Chamfer distance with squared Euclidean norms:
// sum_m min_n |p_m - q_n|^2 + sum_n min_m |q_n - p_m|^2.
double chamfer(const Mat& p, const Mat& q);
// Same value; writes d/dq into `d_q` (argmin routing, lowest index on ties).
double chamfer_with_gradient(const Mat& p, const Mat& q, Mat* d_q);

// Mean negative log-likelihood of the true class; probabilities below
// kProbabilityFloor are clamped (with a warning).
double mean_nll(const Mat& probs, std::span<const int> labels);
// Gesture-preservation loss: mean NLL of the gesture classifier.
double gesture_loss(const Mat& probs, std::span<const int> labels);
// Positive identity NLL; the de-identification term grows as it shrinks.
double deid_nll(const Mat& probs, std::span<const int> labels);

// -log(1 + nll) + delta. Defined for every nll >= 0, decreasing, <= delta.
double deid_stabilized(double nll, double delta);
// d/d(nll) of deid_stabilized; independent of delta.
double deid_stabilized_slope(double nll);

// H(x) = 1 for x >= 0.
inline bool heaviside(double x) { return x >= 0.0; }
inline bool deid_gate(double id_accuracy, double tau) { return heaviside(id_accuracy - tau); }

// alpha*l_point + beta*l_ges + gamma*H(a_id - tau)*l_id_stab. The identity
// term is skipped entirely (never evaluated) when gamma*H is zero.
template <typename IdTerm>
double combined_loss(double l_point, double l_ges, IdTerm&& l_id_stab, const LossWeights& w, double id_accuracy) {
  double total = w.alpha * l_point + w.beta * l_ges;
  if (deid_gate(id_accuracy, w.tau) && w.gamma != 0.0) total += w.gamma * l_id_stab();
  return total;
}

inline double combined_loss(double l_point, double l_ges, double l_id_stab, const LossWeights& w,
                            double id_accuracy) {
  return combined_loss(l_point, l_ges, [l_id_stab] { return l_id_stab; }, w, id_accuracy);
}

}  // namespace immcognito
