#include "immcognito/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "immcognito/rng.hpp"

namespace immcognito {

ModelConfig GradcheckOptions::small_config() {
  ModelConfig c;
  c.hidden = 4;
  c.message = 4;
  c.key_dim = 2;
  c.value_dim = 2;
  c.heads = 2;
  c.output_dim = 4;
  c.k = 2;
  return c;
}

bool GradcheckReport::passed() const {
  if (!delta_gradient_zero) return false;
  return std::all_of(tensors.begin(), tensors.end(), [](const TensorCheck& t) { return t.passed; });
}

double relative_error(const Mat& analytic, const Mat& numeric) {
  const double diff = (analytic - numeric).cwiseAbs().maxCoeff();
  const double scale = std::max({analytic.cwiseAbs().maxCoeff(), numeric.cwiseAbs().maxCoeff(), 1e-8});
  return diff / scale;
}

namespace {

std::vector<Sample> random_samples(const GradcheckOptions& o, Rng& rng) {
  std::vector<Sample> out(static_cast<std::size_t>(o.batch));
  for (int b = 0; b < o.batch; ++b) {
    Sample& s = out[static_cast<std::size_t>(b)];
    s.coords = Mat(o.frames * o.points_per_frame, 3);
    for (Eigen::Index i = 0; i < s.coords.size(); ++i) s.coords.data()[i] = standard_normal(rng);
    s.points_per_frame = o.points_per_frame;
    s.subject = static_cast<int>(rng() % static_cast<std::uint64_t>(o.subjects));
    s.gesture = static_cast<int>(rng() % static_cast<std::uint64_t>(o.gestures));
  }
  return out;
}

// Perturbs every tensor entry of `params` and compares central differences
// of `loss` with the analytic gradient.
template <typename LossFn>
void compare(const std::string& label, ModelParams& params, const ModelParams& analytic, LossFn&& loss,
             const GradcheckOptions& o, GradcheckReport& report) {
  auto tensors = named_tensors(params);
  auto grads = named_tensors(analytic);
  for (std::size_t t = 0; t < tensors.size(); ++t) {
    Mat& w = *tensors[t].second;
    Mat numeric(w.rows(), w.cols());
    for (Eigen::Index i = 0; i < w.size(); ++i) {
      const double saved = w.data()[i];
      w.data()[i] = saved + o.step;
      const double up = loss();
      w.data()[i] = saved - o.step;
      const double down = loss();
      w.data()[i] = saved;
      numeric.data()[i] = (up - down) / (2.0 * o.step);
    }
    TensorCheck row;
    row.loss = label;
    row.tensor = tensors[t].first;
    row.max_abs_error = (*grads[t].second - numeric).cwiseAbs().maxCoeff();
    row.relative_error = relative_error(*grads[t].second, numeric);
    row.passed = row.relative_error < o.tolerance;
    report.max_relative_error = std::max(report.max_relative_error, row.relative_error);
    report.tensors.push_back(row);
  }
}

// Moves parameters off the zero-bias initialization, where ReLU units of
// all-zero rows sit exactly on their kink.
ModelParams jittered(ModelParams params, Rng& rng) {
  for (auto& [name, t] : named_tensors(params))
    for (Eigen::Index i = 0; i < t->size(); ++i) t->data()[i] += 0.1 * standard_normal(rng);
  return params;
}

bool bit_identical(const ModelParams& a, const ModelParams& b) {
  auto ta = named_tensors(a);
  auto tb = named_tensors(b);
  if (ta.size() != tb.size()) return false;
  for (std::size_t i = 0; i < ta.size(); ++i) {
    const Mat& x = *ta[i].second;
    const Mat& y = *tb[i].second;
    if (x.rows() != y.rows() || x.cols() != y.cols()) return false;
    if (!std::equal(x.data(), x.data() + x.size(), y.data())) return false;
  }
  return true;
}

}  // namespace

GradcheckReport run_gradcheck(const GradcheckOptions& o) {
  o.config.validate();
  Rng rng(derive_seed(o.seed, {0x9c}));
  const std::vector<Sample> samples = random_samples(o, rng);
  std::vector<const Sample*> batch;
  for (const Sample& s : samples) batch.push_back(&s);

  ModelConfig ae_config = o.config;
  ae_config.seed = derive_seed(o.seed, {1});
  ModelConfig g_config = o.config;
  g_config.seed = derive_seed(o.seed, {2});
  ModelConfig u_config = o.config;
  u_config.seed = derive_seed(o.seed, {3});
  const ModelParams g_params = jittered(init_classifier(g_config, o.gestures), rng);
  const ModelParams u_params = jittered(init_classifier(u_config, o.subjects), rng);
  const FrozenClassifier gesture{g_params, g_config};
  const FrozenClassifier identity{u_params, u_config};
  ModelParams ae = jittered(init_autoencoder(ae_config), rng);
  LossWeights w;
  w.tau = 0.0;

  GradcheckReport report;
  for (LossSelector sel : {LossSelector::kChamfer, LossSelector::kGesture, LossSelector::kDeid,
                           LossSelector::kCombined}) {
    ModelParams analytic = zeros_like(ae);
    autoencoder_batch(batch, ae, ae_config, gesture, identity, w, true, sel, &analytic);
    if (o.tamper) o.tamper(analytic);
    auto loss = [&] {
      return autoencoder_batch(batch, ae, ae_config, gesture, identity, w, true, sel, nullptr).total;
    };
    compare(std::string(to_string(sel)), ae, analytic, loss, o, report);
  }

  // Classifier objective (pretraining of G): mean NLL over the batch.
  {
    ModelParams cls = jittered(init_classifier(g_config, o.gestures), rng);
    const double inv_m = 1.0 / static_cast<double>(batch.size());
    auto loss = [&] {
      double total = 0.0;
      for (const Sample* s : batch) {
        const ClassifierPass pass = classifier_pass(s->coords, s->points_per_frame, cls, g_config);
        total -= std::log(std::max(pass.probs(s->gesture), kProbabilityFloor)) * inv_m;
      }
      return total;
    };
    ModelParams analytic = zeros_like(cls);
    for (const Sample* s : batch) {
      const ClassifierPass pass = classifier_pass(s->coords, s->points_per_frame, cls, g_config);
      RowVec d = pass.probs;
      d(s->gesture) -= 1.0;
      classifier_backward(pass, d * inv_m, cls, g_config, &analytic, nullptr);
    }
    if (o.tamper) o.tamper(analytic);
    compare("classifier", cls, analytic, loss, o, report);
  }

  // delta shifts the identity term by a constant only.
  LossWeights w2 = w;
  w2.delta = w.delta + 5.0;
  ModelParams g1 = zeros_like(ae);
  ModelParams g2 = zeros_like(ae);
  autoencoder_batch(batch, ae, ae_config, gesture, identity, w, true, LossSelector::kCombined, &g1);
  autoencoder_batch(batch, ae, ae_config, gesture, identity, w2, true, LossSelector::kCombined, &g2);
  report.delta_gradient_zero = bit_identical(g1, g2);
  return report;
}

void write_gradcheck_report(std::ostream& out, const GradcheckReport& r) {
  char line[200];
  for (const TensorCheck& t : r.tensors) {
    std::snprintf(line, sizeof line, "%-10s %-22s rel %.3e abs %.3e %s\n", t.loss.c_str(), t.tensor.c_str(),
                  t.relative_error, t.max_abs_error, t.passed ? "ok" : "FAIL");
    out << line;
  }
  out << "delta gradient " << (r.delta_gradient_zero ? "zero" : "NONZERO") << '\n';
  std::snprintf(line, sizeof line, "max relative error %.3e: %s\n", r.max_relative_error,
                r.passed() ? "PASS" : "FAIL");
  out << line;
}

}  // namespace immcognito
