#include "immcognito/loss.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "immcognito/errors.hpp"
#include "immcognito/log.hpp"

namespace immcognito {

void LossWeights::validate() const {
  if (alpha < 0.0 || beta < 0.0 || gamma < 0.0) throw ConfigError("loss weights alpha, beta, gamma must be >= 0");
  if (!(tau >= 0.0 && tau <= 1.0)) throw ConfigError("tau must lie in [0, 1]");
  if (!std::isfinite(delta)) throw ConfigError("delta must be finite");
}

namespace {

// For each row of `from`, the index of its nearest row in `to`.
void nearest_rows(const Mat& from, const Mat& to, std::vector<Eigen::Index>& arg, std::vector<double>& dist) {
  arg.resize(static_cast<std::size_t>(from.rows()));
  dist.resize(static_cast<std::size_t>(from.rows()));
  for (Eigen::Index m = 0; m < from.rows(); ++m) {
    const double x = from(m, 0), y = from(m, 1), z = from(m, 2);
    double best = std::numeric_limits<double>::infinity();
    Eigen::Index best_n = 0;
    for (Eigen::Index n = 0; n < to.rows(); ++n) {
      const double dx = x - to(n, 0), dy = y - to(n, 1), dz = z - to(n, 2);
      const double d = dx * dx + dy * dy + dz * dz;
      if (d < best) {
        best = d;
        best_n = n;
      }
    }
    arg[static_cast<std::size_t>(m)] = best_n;
    dist[static_cast<std::size_t>(m)] = best;
  }
}

}  // namespace

double chamfer_with_gradient(const Mat& p, const Mat& q, Mat* d_q) {
  if (p.rows() == 0 || q.rows() == 0) throw DomainError("chamfer distance of an empty cloud");
  if (p.cols() != 3 || q.cols() != 3) throw DomainError("chamfer expects N x 3 clouds");
  std::vector<Eigen::Index> p_to_q, q_to_p;
  std::vector<double> dp, dq;
  nearest_rows(p, q, p_to_q, dp);
  nearest_rows(q, p, q_to_p, dq);
  // Summing in sorted order makes the value exactly invariant to point order.
  std::sort(dp.begin(), dp.end());
  std::sort(dq.begin(), dq.end());
  double forward = 0.0, backward = 0.0;
  for (double d : dp) forward += d;
  for (double d : dq) backward += d;
  if (d_q) {
    d_q->setZero(q.rows(), 3);
    for (Eigen::Index m = 0; m < p.rows(); ++m) {
      const Eigen::Index n = p_to_q[static_cast<std::size_t>(m)];
      d_q->row(n) += 2.0 * (q.row(n) - p.row(m));
    }
    for (Eigen::Index n = 0; n < q.rows(); ++n)
      d_q->row(n) += 2.0 * (q.row(n) - p.row(q_to_p[static_cast<std::size_t>(n)]));
  }
  return forward + backward;
}

double chamfer(const Mat& p, const Mat& q) { return chamfer_with_gradient(p, q, nullptr); }

double mean_nll(const Mat& probs, std::span<const int> labels) {
  if (probs.rows() == 0) throw DomainError("negative log-likelihood of an empty batch");
  if (static_cast<std::size_t>(probs.rows()) != labels.size()) throw DomainError("probabilities and labels disagree");
  double total = 0.0;
  bool clamped = false;
  for (Eigen::Index k = 0; k < probs.rows(); ++k) {
    const int y = labels[static_cast<std::size_t>(k)];
    if (y < 0 || y >= probs.cols()) throw DomainError("label outside the probability vector");
    double p = probs(k, y);
    if (p < kProbabilityFloor) {
      p = kProbabilityFloor;
      clamped = true;
    }
    total -= std::log(p);
  }
  if (clamped) log::warn("true-class probability below 1e-12 clamped in NLL");
  return total / static_cast<double>(probs.rows());
}

double gesture_loss(const Mat& probs, std::span<const int> labels) { return mean_nll(probs, labels); }

double deid_nll(const Mat& probs, std::span<const int> labels) { return mean_nll(probs, labels); }

double deid_stabilized(double nll, double delta) {
  if (!(nll >= 0.0)) throw DomainError("stabilized identity loss needs nll >= 0");
  return -std::log1p(nll) + delta;
}

double deid_stabilized_slope(double nll) { return -1.0 / (1.0 + nll); }

}  // namespace immcognito
