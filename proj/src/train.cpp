#include "immcognito/train.hpp"

#include <cmath>
#include <cstdio>
#include <numeric>
#include <string>

#include "immcognito/errors.hpp"
#include "immcognito/graph.hpp"
#include "immcognito/log.hpp"
#include "immcognito/params_io.hpp"
#include "immcognito/rng.hpp"

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace immcognito {

void tune_allocator() {
#if defined(__GLIBC__)
  static const bool done = [] {
    mallopt(M_MMAP_THRESHOLD, 256 << 20);
    mallopt(M_TRIM_THRESHOLD, 1 << 30);
    mallopt(M_TOP_PAD, 64 << 20);
    return true;
  }();
  (void)done;
#endif
}

void TrainConfig::validate() const {
  if (!(eta0 > 0.0) || !std::isfinite(eta0)) throw ConfigError("learning rate must be positive");
  if (!(lambda > 0.0 && lambda <= 1.0)) throw ConfigError("decay factor must lie in (0, 1]");
  if (decay_period < 1) throw ConfigError("decay period must be at least 1");
  if (patience < 1) throw ConfigError("patience must be at least 1");
  if (batch_size < 1) throw ConfigError("batch size must be at least 1");
  if (max_epochs < 0) throw ConfigError("max epochs must be non-negative");
  if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0) || !(adam_beta2 >= 0.0 && adam_beta2 < 1.0))
    throw ConfigError("Adam betas must lie in [0, 1)");
  if (!(adam_epsilon > 0.0)) throw ConfigError("Adam epsilon must be positive");
}

double lr_at(int epoch, const TrainConfig& config) {
  return config.eta0 * std::pow(config.lambda, epoch / config.decay_period);
}

AdamState make_adam_state(const ModelParams& params) {
  return {zeros_like(params), zeros_like(params), 0};
}

void adam_step(ModelParams& params, const ModelParams& grads, AdamState& state, double lr, const TrainConfig& c) {
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double correct1 = 1.0 - std::pow(c.adam_beta1, t);
  const double correct2 = 1.0 - std::pow(c.adam_beta2, t);
  auto p = named_tensors(params);
  auto g = named_tensors(grads);
  auto m = named_tensors(state.m);
  auto v = named_tensors(state.v);
  if (p.size() != g.size() || p.size() != m.size() || p.size() != v.size())
    throw ConfigError("Adam state does not match the parameters");
  for (std::size_t i = 0; i < p.size(); ++i) {
    Mat& pi = *p[i].second;
    const Mat& gi = *g[i].second;
    Mat& mi = *m[i].second;
    Mat& vi = *v[i].second;
    mi = c.adam_beta1 * mi + (1.0 - c.adam_beta1) * gi;
    vi = (c.adam_beta2 * vi.array() + (1.0 - c.adam_beta2) * gi.array().square()).matrix();
    pi.array() -= lr * (mi.array() / correct1) / ((vi.array() / correct2).sqrt() + c.adam_epsilon);
  }
  round_to_float(params);
  round_to_float(state.m);
  round_to_float(state.v);
}

bool EarlyStopping::observe(int epoch, double value) {
  if (value < best) {
    best = value;
    best_epoch = epoch;
    stale_epochs = 0;
    return true;
  }
  ++stale_epochs;
  return false;
}

Sample to_sample(const FrameGrid& grid) {
  return {grid_coords(grid), grid.points_per_frame, grid.subject, grid.gesture};
}

std::vector<Sample> to_samples(std::span<const FrameGrid> grids) {
  std::vector<Sample> out;
  out.reserve(grids.size());
  for (const FrameGrid& g : grids) out.push_back(to_sample(g));
  return out;
}

Task parse_task(std::string_view name) {
  if (name == "gesture") return Task::kGesture;
  if (name == "identity" || name == "id" || name == "subject") return Task::kIdentity;
  throw ConfigError("unknown task '" + std::string(name) + "' (expected gesture or identity)");
}

std::string_view to_string(Task task) { return task == Task::kGesture ? "gesture" : "identity"; }

LossSelector parse_loss_selector(std::string_view name) {
  if (name == "chamfer") return LossSelector::kChamfer;
  if (name == "gesture") return LossSelector::kGesture;
  if (name == "deid") return LossSelector::kDeid;
  if (name == "combined") return LossSelector::kCombined;
  throw ConfigError("unknown loss '" + std::string(name) + "' (expected chamfer, gesture, deid or combined)");
}

std::string_view to_string(LossSelector selector) {
  switch (selector) {
    case LossSelector::kChamfer: return "chamfer";
    case LossSelector::kGesture: return "gesture";
    case LossSelector::kDeid: return "deid";
    case LossSelector::kCombined: return "combined";
  }
  return "combined";
}

// --- checkpoints -----------------------------------------------------------

void save_checkpoint(const std::filesystem::path& path, const TrainingState& s) {
  ParamFile file;
  file.metadata["kind"] = "checkpoint";
  file.metadata["adam_step"] = std::to_string(s.adam.step);
  file.metadata["next_epoch"] = std::to_string(s.next_epoch);
  file.metadata["patience"] = std::to_string(s.stopper.patience);
  file.metadata["best_value"] = exact_double(s.stopper.best);
  file.metadata["best_epoch"] = std::to_string(s.stopper.best_epoch);
  file.metadata["stale_epochs"] = std::to_string(s.stopper.stale_epochs);
  file.metadata["id_accuracy"] = exact_double(s.id_accuracy);
  file.metadata["finished"] = s.finished ? "1" : "0";
  file.sections = {{"params", s.params}, {"best", s.best_params}, {"adam.m", s.adam.m}, {"adam.v", s.adam.v}};
  write_param_file(path, file);
}

TrainingState load_checkpoint(const std::filesystem::path& path) {
  const ParamFile file = read_param_file(path);
  auto meta = [&](const std::string& key) -> const std::string& {
    auto it = file.metadata.find(key);
    if (it == file.metadata.end()) throw FormatError(path.string() + ": checkpoint lacks '" + key + "'");
    return it->second;
  };
  if (meta("kind") != "checkpoint") throw FormatError(path.string() + ": not a training checkpoint");
  TrainingState s;
  s.params = file.section("params");
  s.best_params = file.section("best");
  s.adam.m = file.section("adam.m");
  s.adam.v = file.section("adam.v");
  try {
    s.adam.step = std::stoull(meta("adam_step"));
    s.next_epoch = std::stoi(meta("next_epoch"));
    s.stopper.patience = std::stoi(meta("patience"));
    s.stopper.best = parse_exact_double(meta("best_value"));
    s.stopper.best_epoch = std::stoi(meta("best_epoch"));
    s.stopper.stale_epochs = std::stoi(meta("stale_epochs"));
    s.id_accuracy = parse_exact_double(meta("id_accuracy"));
    s.finished = meta("finished") == "1";
  } catch (const std::logic_error&) {
    throw FormatError(path.string() + ": malformed checkpoint metadata");
  }
  return s;
}

namespace {

void require_finite(const ModelParams& grads) {
  for (const auto& [name, t] : named_tensors(grads))
    if (!t->allFinite()) throw GradientError("non-finite gradient in " + name);
}

void require_finite(double value, const char* what) {
  if (!std::isfinite(value)) throw GradientError(std::string("non-finite ") + what);
}

int argmax(const RowVec& v) {
  Eigen::Index best = 0;
  for (Eigen::Index i = 1; i < v.size(); ++i)
    if (v(i) > v(best)) best = i;
  return static_cast<int>(best);
}

double nll_of(const RowVec& probs, int label) {
  return -std::log(std::max(probs(label), kProbabilityFloor));
}

// d NLL / d logits for one sample; zero when the probability is clamped.
RowVec nll_logit_gradient(const RowVec& probs, int label) {
  if (probs(label) < kProbabilityFloor) return RowVec::Zero(probs.size());
  RowVec d = probs;
  d(label) -= 1.0;
  return d;
}

void check_label(int label, int classes, const char* what) {
  if (label < 0 || label >= classes)
    throw ValidationError(std::string(what) + " label " + std::to_string(label) + " outside the classifier's " +
                          std::to_string(classes) + " classes");
}

std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, int epoch) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(derive_seed(seed, {0x5e, static_cast<std::uint64_t>(epoch)}));
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng() % i]);
  return order;
}

}  // namespace

// --- classifier pretraining ------------------------------------------------

ClassifierEval evaluate_classifier(std::span<const Sample> samples, Task task, const ModelParams& params,
                                   const ModelConfig& config) {
  ClassifierEval ev;
  if (samples.empty()) return ev;
  int correct = 0;
  for (const Sample& s : samples) {
    const int y = label_of(s, task);
    check_label(y, params.num_classes(), "classifier");
    const ClassifierPass pass = classifier_pass(s.coords, s.points_per_frame, params, config);
    ev.loss += nll_of(pass.probs, y);
    correct += argmax(pass.probs) == y;
  }
  ev.loss /= static_cast<double>(samples.size());
  ev.accuracy = static_cast<double>(correct) / static_cast<double>(samples.size());
  return ev;
}

ClassifierResult train_classifier(std::span<const Sample> train, std::span<const Sample> val, Task task,
                                  int num_classes, const ModelConfig& model_config, const TrainConfig& tc,
                                  const ClassifierEpochHook& hook, const TrainingState* resume) {
  model_config.validate();
  tc.validate();
  tune_allocator();
  if (train.empty()) throw ConfigError("empty training set");
  for (const Sample& s : train) check_label(label_of(s, task), num_classes, "training");

  TrainingState state;
  if (resume) {
    state = *resume;
    check_shapes(state.params, model_config);
  } else {
    state.params = init_classifier(model_config, num_classes);
    state.best_params = state.params;
    state.adam = make_adam_state(state.params);
    state.stopper.patience = tc.patience;
  }
  if (state.params.num_classes() != num_classes) throw ConfigError("resumed classifier has a different class count");

  ClassifierResult result;
  std::span<const Sample> monitor = val.empty() ? train : val;
  for (int epoch = state.next_epoch; epoch < tc.max_epochs && !state.finished; ++epoch) {
    const double lr = lr_at(epoch, tc);
    const auto order = epoch_order(train.size(), tc.seed, epoch);
    double train_loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(tc.batch_size)) {
      const std::size_t stop = std::min(order.size(), start + static_cast<std::size_t>(tc.batch_size));
      const double inv_m = 1.0 / static_cast<double>(stop - start);
      ModelParams grads = zeros_like(state.params);
      for (std::size_t b = start; b < stop; ++b) {
        const Sample& s = train[order[b]];
        const int y = label_of(s, task);
        const ClassifierPass pass = classifier_pass(s.coords, s.points_per_frame, state.params, model_config);
        const double nll = nll_of(pass.probs, y);
        require_finite(nll, "classifier loss");
        train_loss += nll;
        classifier_backward(pass, nll_logit_gradient(pass.probs, y) * inv_m, state.params, model_config, &grads,
                            nullptr);
      }
      require_finite(grads);
      adam_step(state.params, grads, state.adam, lr, tc);
    }
    const ClassifierEval ev = evaluate_classifier(monitor, task, state.params, model_config);
    if (state.stopper.observe(epoch, ev.loss)) state.best_params = state.params;
    state.next_epoch = epoch + 1;
    if (state.stopper.should_stop() || state.next_epoch >= tc.max_epochs) state.finished = true;

    ClassifierEpoch row{epoch, train_loss / static_cast<double>(train.size()), ev.loss, ev.accuracy, lr};
    result.history.push_back(row);
    char line[160];
    std::snprintf(line, sizeof line, "%s classifier epoch %d: train %.4f val %.4f acc %.3f lr %.2e",
                  std::string(to_string(task)).c_str(), epoch, row.train_loss, row.val_loss, row.val_accuracy, lr);
    log::info(line);
    if (hook) hook(state, row);
  }
  if (tc.max_epochs <= state.next_epoch) state.finished = true;
  result.params = state.stopper.best_epoch >= 0 ? state.best_params : state.params;
  result.best_epoch = state.stopper.best_epoch;
  result.state = std::move(state);
  return result;
}

// --- autoencoder -----------------------------------------------------------

BatchLoss autoencoder_batch(std::span<const Sample* const> batch, const ModelParams& ae, const ModelConfig& cfg,
                            const FrozenClassifier& gesture, const FrozenClassifier& identity,
                            const LossWeights& w, bool gate, LossSelector selector, ModelParams* grads) {
  if (batch.empty()) throw DomainError("empty batch");
  const std::size_t m = batch.size();
  const double inv_m = 1.0 / static_cast<double>(m);
  const bool use_point = selector == LossSelector::kChamfer || selector == LossSelector::kCombined;
  const bool use_ges = selector == LossSelector::kGesture || selector == LossSelector::kCombined;
  const bool use_id = selector == LossSelector::kDeid || (selector == LossSelector::kCombined && gate && w.gamma != 0.0);

  BatchLoss loss;
  std::vector<AutoencoderPass> passes(m);
  std::vector<Mat> d_out(m);
  std::vector<Mat> d_id(m);
  double nll_id_sum = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    const Sample& s = *batch[i];
    passes[i] = autoencoder_pass(s.coords, s.points_per_frame, ae, cfg);
    const Mat& out = passes[i].output;
    if (!out.allFinite()) throw GradientError("non-finite autoencoder output");
    d_out[i] = Mat::Zero(out.rows(), 3);

    Mat d_cham;
    const double cd = chamfer_with_gradient(s.coords, out, grads && use_point ? &d_cham : nullptr);
    loss.l_point += cd * inv_m;
    if (grads && use_point) d_out[i] += (w.alpha * inv_m) * d_cham;

    check_label(s.gesture, gesture.params.num_classes(), "gesture");
    const ClassifierPass gp = classifier_pass(out, s.points_per_frame, gesture.params, gesture.config);
    loss.l_ges += nll_of(gp.probs, s.gesture) * inv_m;
    loss.gesture_correct += argmax(gp.probs) == s.gesture;
    if (grads && use_ges) {
      Mat d_coords;
      classifier_backward(gp, nll_logit_gradient(gp.probs, s.gesture) * (w.beta * inv_m), gesture.params,
                          gesture.config, nullptr, &d_coords);
      d_out[i] += d_coords;
    }

    check_label(s.subject, identity.params.num_classes(), "subject");
    const ClassifierPass up = classifier_pass(out, s.points_per_frame, identity.params, identity.config);
    loss.identity_correct += argmax(up.probs) == s.subject;
    if (use_id) {
      nll_id_sum += nll_of(up.probs, s.subject);
      if (grads)
        classifier_backward(up, nll_logit_gradient(up.probs, s.subject), identity.params, identity.config, nullptr,
                            &d_id[i]);
    }
  }

  loss.total = 0.0;
  if (use_point) loss.total += w.alpha * loss.l_point;
  if (use_ges) loss.total += w.beta * loss.l_ges;
  if (use_id) {
    loss.id_evaluated = true;
    loss.l_id_nll = nll_id_sum * inv_m;
    loss.l_id_stab = deid_stabilized(loss.l_id_nll, w.delta);
    loss.total += w.gamma * loss.l_id_stab;
  }
  require_finite(loss.total, "batch loss");
  if (!grads) return loss;

  const double id_factor = use_id ? w.gamma * deid_stabilized_slope(loss.l_id_nll) * inv_m : 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    if (use_id) d_out[i] += id_factor * d_id[i];
    autoencoder_backward(passes[i], d_out[i], ae, cfg, *grads);
  }
  require_finite(*grads);
  return loss;
}

AutoencoderEval evaluate_autoencoder(std::span<const Sample> samples, const ModelParams& ae, const ModelConfig& cfg,
                                     const FrozenClassifier& gesture, const FrozenClassifier& identity,
                                     const LossWeights& w, bool deid_enabled, std::size_t* id_term_evaluations) {
  AutoencoderEval ev;
  if (samples.empty()) return ev;
  const double inv_n = 1.0 / static_cast<double>(samples.size());
  double nll_id = 0.0;
  int ges_correct = 0;
  int id_correct = 0;
  for (const Sample& s : samples) {
    const Mat out = autoencoder_pass(s.coords, s.points_per_frame, ae, cfg).output;
    ev.l_point += chamfer(s.coords, out) * inv_n;
    const ClassifierPass gp = classifier_pass(out, s.points_per_frame, gesture.params, gesture.config);
    ev.l_ges += nll_of(gp.probs, s.gesture) * inv_n;
    ges_correct += argmax(gp.probs) == s.gesture;
    const ClassifierPass up = classifier_pass(out, s.points_per_frame, identity.params, identity.config);
    nll_id += nll_of(up.probs, s.subject) * inv_n;
    id_correct += argmax(up.probs) == s.subject;
  }
  ev.gesture_accuracy = ges_correct * inv_n;
  ev.id_accuracy = id_correct * inv_n;
  ev.gate = deid_enabled && deid_gate(ev.id_accuracy, w.tau);
  ev.loss = combined_loss(
      ev.l_point, ev.l_ges,
      [&] {
        if (id_term_evaluations) ++*id_term_evaluations;
        ev.l_id_stab = deid_stabilized(nll_id, w.delta);
        return ev.l_id_stab;
      },
      w, deid_enabled ? ev.id_accuracy : -1.0);
  return ev;
}

AutoencoderResult train_autoencoder(std::span<const Sample> train, std::span<const Sample> val,
                                    const FrozenClassifier& gesture, const FrozenClassifier& identity,
                                    const LossWeights& w, const ModelConfig& cfg, const TrainConfig& tc,
                                    bool deid_enabled, const AutoencoderEpochHook& hook,
                                    const TrainingState* resume) {
  cfg.validate();
  tc.validate();
  w.validate();
  tune_allocator();
  if (train.empty()) throw ConfigError("empty training set");
  std::span<const Sample> monitor = val.empty() ? train : val;

  const std::uint64_t g_sum = checksum(gesture.params);
  const std::uint64_t u_sum = checksum(identity.params);
  auto check_frozen = [&] {
    if (checksum(gesture.params) != g_sum || checksum(identity.params) != u_sum)
      throw Error("frozen classifier parameters changed during autoencoder training");
  };

  AutoencoderResult result;
  TrainingState state;
  if (resume) {
    state = *resume;
    check_shapes(state.params, cfg);
  } else {
    state.params = init_autoencoder(cfg);
    state.best_params = state.params;
    state.adam = make_adam_state(state.params);
    state.stopper.patience = tc.patience;
  }
  if (std::isnan(state.id_accuracy))
    state.id_accuracy = evaluate_autoencoder(monitor, state.params, cfg, gesture, identity, w, false).id_accuracy;

  for (int epoch = state.next_epoch; epoch < tc.max_epochs && !state.finished; ++epoch) {
    AutoencoderEpoch row;
    row.epoch = epoch;
    row.a_id = state.id_accuracy;
    row.gate = deid_enabled && deid_gate(row.a_id, w.tau);
    row.lr = lr_at(epoch, tc);

    const auto order = epoch_order(train.size(), tc.seed, epoch);
    double id_stab_sum = 0.0;
    std::size_t id_stab_count = 0;
    std::vector<const Sample*> batch;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(tc.batch_size)) {
      const std::size_t stop = std::min(order.size(), start + static_cast<std::size_t>(tc.batch_size));
      batch.clear();
      for (std::size_t b = start; b < stop; ++b) batch.push_back(&train[order[b]]);
      ModelParams grads = zeros_like(state.params);
      const BatchLoss bl =
          autoencoder_batch(batch, state.params, cfg, gesture, identity, w, row.gate, LossSelector::kCombined, &grads);
      const double size = static_cast<double>(batch.size());
      row.l_point += bl.l_point * size;
      row.l_ges += bl.l_ges * size;
      if (bl.id_evaluated) {
        ++result.id_term_evaluations;
        id_stab_sum += bl.l_id_stab * size;
        id_stab_count += batch.size();
      }
      adam_step(state.params, grads, state.adam, row.lr, tc);
    }
    check_frozen();
    row.l_point /= static_cast<double>(train.size());
    row.l_ges /= static_cast<double>(train.size());
    if (id_stab_count) row.l_id_stab = id_stab_sum / static_cast<double>(id_stab_count);

    const AutoencoderEval ev = evaluate_autoencoder(monitor, state.params, cfg, gesture, identity, w, deid_enabled,
                                                    &result.id_term_evaluations);
    row.val_gesture_acc = ev.gesture_accuracy;
    row.val_loss = ev.loss;
    state.id_accuracy = ev.id_accuracy;
    if (state.stopper.observe(epoch, ev.loss)) state.best_params = state.params;
    state.next_epoch = epoch + 1;
    if (state.stopper.should_stop() || state.next_epoch >= tc.max_epochs) state.finished = true;

    result.history.push_back(row);
    char line[200];
    std::snprintf(line, sizeof line,
                  "autoencoder epoch %d: chamfer %.5f gesture %.4f a_id %.3f gate %d val_gesture %.3f val_loss %.4f",
                  epoch, row.l_point, row.l_ges, row.a_id, row.gate ? 1 : 0, row.val_gesture_acc, row.val_loss);
    log::info(line);
    if (hook) hook(state, row);
  }
  if (tc.max_epochs <= state.next_epoch) state.finished = true;
  result.params = state.stopper.best_epoch >= 0 ? state.best_params : state.params;
  result.best_epoch = state.stopper.best_epoch;
  result.state = std::move(state);
  return result;
}

// --- history ---------------------------------------------------------------

namespace {
std::string num(double v) {
  if (std::isnan(v)) return "nan";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}
}  // namespace

void write_history_header(std::ostream& out) {
  out << "epoch,l_point,l_ges,l_id_stab,a_id,gate,lr,val_gesture_acc\n";
}

void write_history_row(std::ostream& out, const AutoencoderEpoch& r) {
  out << r.epoch << ',' << num(r.l_point) << ',' << num(r.l_ges) << ',' << num(r.l_id_stab) << ',' << num(r.a_id)
      << ',' << (r.gate ? 1 : 0) << ',' << num(r.lr) << ',' << num(r.val_gesture_acc) << '\n';
}

void write_classifier_history_header(std::ostream& out) { out << "epoch,train_loss,val_loss,val_accuracy,lr\n"; }

void write_classifier_history_row(std::ostream& out, const ClassifierEpoch& r) {
  out << r.epoch << ',' << num(r.train_loss) << ',' << num(r.val_loss) << ',' << num(r.val_accuracy) << ','
      << num(r.lr) << '\n';
}

}  // namespace immcognito
