#include "immcognito/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <memory>
#include <numeric>
#include <sstream>

#include <nlohmann/json.hpp>

#include "immcognito/errors.hpp"
#include "immcognito/graph.hpp"
#include "immcognito/loss.hpp"

namespace immcognito {

namespace {

int row_argmax(const Mat& probs, Eigen::Index r) {
  Eigen::Index best = 0;
  for (Eigen::Index c = 1; c < probs.cols(); ++c)
    if (probs(r, c) > probs(r, best)) best = c;
  return static_cast<int>(best);
}

double nan() { return std::numeric_limits<double>::quiet_NaN(); }

}  // namespace

double roc_auc(std::span<const double> scores, std::span<const bool> positive) {
  if (scores.size() != positive.size()) throw DomainError("scores and labels differ in length");
  const std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double rank_sum = 0.0;
  std::size_t pos = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    const double midrank = 0.5 * static_cast<double>(i + 1 + j);  // mean of ranks i+1..j
    for (std::size_t t = i; t < j; ++t)
      if (positive[order[t]]) {
        rank_sum += midrank;
        ++pos;
      }
    i = j;
  }
  const std::size_t neg = n - pos;
  if (pos == 0 || neg == 0) return nan();
  const double p = static_cast<double>(pos);
  return (rank_sum - p * (p + 1.0) / 2.0) / (p * static_cast<double>(neg));
}

Metrics compute_metrics(const Mat& probs, std::span<const int> labels) {
  if (labels.empty() || probs.rows() == 0) throw DomainError("metrics of an empty batch");
  if (static_cast<std::size_t>(probs.rows()) != labels.size())
    throw DomainError("probability rows and labels differ in count");
  const auto classes = static_cast<std::size_t>(probs.cols());
  Metrics m;
  m.confusion.assign(classes, std::vector<std::int64_t>(classes, 0));
  std::int64_t correct = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const int y = labels[i];
    if (y < 0 || static_cast<std::size_t>(y) >= classes) throw DomainError("label outside the probability columns");
    const int p = row_argmax(probs, static_cast<Eigen::Index>(i));
    ++m.confusion[static_cast<std::size_t>(y)][static_cast<std::size_t>(p)];
    correct += p == y;
  }
  m.accuracy = static_cast<double>(correct) / static_cast<double>(labels.size());

  double f1_sum = 0.0;
  for (std::size_t c = 0; c < classes; ++c) {
    std::int64_t tp = m.confusion[c][c], fp = 0, fn = 0;
    for (std::size_t o = 0; o < classes; ++o) {
      if (o == c) continue;
      fp += m.confusion[o][c];
      fn += m.confusion[c][o];
    }
    const std::int64_t denom = 2 * tp + fp + fn;
    f1_sum += denom == 0 ? 0.0 : 2.0 * static_cast<double>(tp) / static_cast<double>(denom);
  }
  m.f1_macro = f1_sum / static_cast<double>(classes);

  double auc_sum = 0.0;
  int auc_count = 0;
  std::vector<double> scores(labels.size());
  auto positive = std::make_unique<bool[]>(labels.size());
  for (std::size_t c = 0; c < classes; ++c) {
    for (std::size_t i = 0; i < labels.size(); ++i) {
      scores[i] = probs(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c));
      positive[i] = labels[i] == static_cast<int>(c);
    }
    const double auc = roc_auc(scores, std::span<const bool>(positive.get(), labels.size()));
    if (!std::isnan(auc)) {
      auc_sum += auc;
      ++auc_count;
    }
  }
  m.auc_macro = auc_count ? auc_sum / auc_count : nan();
  return m;
}

std::vector<RocCurve> roc_curves(const Mat& probs, std::span<const int> labels) {
  std::vector<RocCurve> out;
  const std::size_t n = labels.size();
  for (Eigen::Index c = 0; c < probs.cols(); ++c) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return probs(static_cast<Eigen::Index>(a), c) > probs(static_cast<Eigen::Index>(b), c);
    });
    std::size_t pos = 0;
    for (int y : labels) pos += y == c;
    const std::size_t neg = n - pos;
    if (pos == 0 || neg == 0) continue;
    RocCurve curve;
    curve.label = static_cast<int>(c);
    curve.fpr.push_back(0.0);
    curve.tpr.push_back(0.0);
    std::size_t tp = 0, fp = 0;
    for (std::size_t i = 0; i < n;) {
      const double s = probs(static_cast<Eigen::Index>(order[i]), c);
      while (i < n && probs(static_cast<Eigen::Index>(order[i]), c) == s) {
        (labels[order[i]] == c ? tp : fp) += 1;
        ++i;
      }
      curve.fpr.push_back(static_cast<double>(fp) / static_cast<double>(neg));
      curve.tpr.push_back(static_cast<double>(tp) / static_cast<double>(pos));
    }
    // Trapezoid area; equals the midrank formula.
    for (std::size_t i = 1; i < curve.fpr.size(); ++i)
      curve.auc += (curve.fpr[i] - curve.fpr[i - 1]) * (curve.tpr[i] + curve.tpr[i - 1]) / 2.0;
    out.push_back(std::move(curve));
  }
  return out;
}

void write_roc_csv(std::ostream& out, const std::vector<RocCurve>& curves) {
  out << "class,fpr,tpr\n";
  out.precision(17);
  for (const RocCurve& c : curves)
    for (std::size_t i = 0; i < c.fpr.size(); ++i) out << c.label << ',' << c.fpr[i] << ',' << c.tpr[i] << '\n';
}

const ScoreRow& Scorecard::row(const std::string& task, const std::string& variant) const {
  for (const ScoreRow& r : rows)
    if (r.task == task && r.variant == variant) return r;
  throw DomainError("scorecard has no row " + task + "/" + variant);
}

Mat predict(std::span<const FrameGrid> grids, const ModelParams& params, const ModelConfig& config) {
  Mat out(static_cast<Eigen::Index>(grids.size()), params.num_classes());
  for (std::size_t i = 0; i < grids.size(); ++i) {
    const ClassifierPass pass = classifier_pass(grid_coords(grids[i]), grids[i].points_per_frame, params, config);
    out.row(static_cast<Eigen::Index>(i)) = pass.probs;
  }
  return out;
}

Scorecard privacy_utility_report(const ModelParams& gesture, const ModelConfig& gesture_config,
                                 const ModelParams& identity, const ModelConfig& identity_config,
                                 std::span<const FrameGrid> test, const GridTransform& transform,
                                 const std::string& variant) {
  if (test.empty()) throw DomainError("empty test set");
  check_shapes(gesture, gesture_config);
  check_shapes(identity, identity_config);
  std::vector<FrameGrid> changed;
  changed.reserve(test.size());
  double chamfer_sum = 0.0;
  for (std::size_t i = 0; i < test.size(); ++i) {
    changed.push_back(transform(test[i], i));
    chamfer_sum += chamfer(grid_coords(test[i]), grid_coords(changed.back()));
  }
  const double mean_chamfer = chamfer_sum / static_cast<double>(test.size());

  std::vector<int> gestures, subjects;
  for (const FrameGrid& g : test) {
    gestures.push_back(g.gesture);
    subjects.push_back(g.subject);
  }
  Scorecard card;
  auto add = [&](const std::string& task, const std::string& name, std::span<const FrameGrid> grids,
                 const ModelParams& p, const ModelConfig& c, const std::vector<int>& labels, double cd) {
    ScoreRow row;
    row.task = task;
    row.variant = name;
    row.probs = predict(grids, p, c);
    row.metrics = compute_metrics(row.probs, labels);
    row.mean_chamfer = cd;
    card.rows.push_back(std::move(row));
  };
  add("gesture", "original", test, gesture, gesture_config, gestures, 0.0);
  add("gesture", variant, changed, gesture, gesture_config, gestures, mean_chamfer);
  add("identity", "original", test, identity, identity_config, subjects, 0.0);
  add("identity", variant, changed, identity, identity_config, subjects, mean_chamfer);
  return card;
}

Scorecard privacy_utility_report(const ModelParams& gesture, const ModelConfig& gesture_config,
                                 const ModelParams& identity, const ModelConfig& identity_config,
                                 const ModelParams& autoencoder, const ModelConfig& autoencoder_config,
                                 std::span<const FrameGrid> test) {
  check_shapes(autoencoder, autoencoder_config);
  return privacy_utility_report(
      gesture, gesture_config, identity, identity_config, test,
      [&](const FrameGrid& g, std::size_t) { return autoencoder_forward(g, autoencoder, autoencoder_config); });
}

namespace {

nlohmann::json number(double v) { return std::isnan(v) ? nlohmann::json(nullptr) : nlohmann::json(v); }

double number_of(const nlohmann::json& j) { return j.is_null() ? nan() : j.get<double>(); }

}  // namespace

std::string scorecard_json(const Scorecard& card) {
  nlohmann::json rows = nlohmann::json::array();
  for (const ScoreRow& r : card.rows) {
    rows.push_back({{"task", r.task},
                    {"variant", r.variant},
                    {"accuracy", number(r.metrics.accuracy)},
                    {"f1_macro", number(r.metrics.f1_macro)},
                    {"auc_macro", number(r.metrics.auc_macro)},
                    {"confusion", r.metrics.confusion},
                    {"mean_chamfer", number(r.mean_chamfer)}});
  }
  nlohmann::json doc = {{"averaging", {{"f1", "macro"}, {"auc", "macro one-vs-rest, midrank ties"}}},
                        {"rows", rows}};
  return doc.dump(2) + "\n";
}

Scorecard parse_scorecard_json(const std::string& text) {
  Scorecard card;
  try {
    const nlohmann::json doc = nlohmann::json::parse(text);
    for (const auto& r : doc.at("rows")) {
      ScoreRow row;
      row.task = r.at("task").get<std::string>();
      row.variant = r.at("variant").get<std::string>();
      row.metrics.accuracy = number_of(r.at("accuracy"));
      row.metrics.f1_macro = number_of(r.at("f1_macro"));
      row.metrics.auc_macro = number_of(r.at("auc_macro"));
      row.metrics.confusion = r.at("confusion").get<std::vector<std::vector<std::int64_t>>>();
      row.mean_chamfer = number_of(r.at("mean_chamfer"));
      card.rows.push_back(std::move(row));
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("scorecard: ") + e.what());
  }
  return card;
}

void write_scorecard(const std::filesystem::path& json_path, const Scorecard& card) {
  auto write = [](const std::filesystem::path& path, const std::string& text) {
    const std::filesystem::path tmp = path.string() + ".tmp";
    {
      std::ofstream out(tmp, std::ios::binary);
      if (!out) throw Error("cannot write " + tmp.string());
      out << text;
      if (!out) throw Error("failed writing " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
  };
  write(json_path, scorecard_json(card));
  std::ostringstream csv;
  write_scorecard_csv(csv, card);
  std::filesystem::path csv_path = json_path;
  csv_path.replace_extension(".csv");
  write(csv_path, csv.str());
}

void write_scorecard_csv(std::ostream& out, const Scorecard& card) {
  out << "task,variant,accuracy,f1_macro,auc_macro,mean_chamfer,confusion\n";
  out.precision(17);
  for (const ScoreRow& r : card.rows) {
    out << r.task << ',' << r.variant << ',' << r.metrics.accuracy << ',' << r.metrics.f1_macro << ','
        << r.metrics.auc_macro << ',' << r.mean_chamfer << ',';
    for (std::size_t i = 0; i < r.metrics.confusion.size(); ++i) {
      if (i) out << ';';
      for (std::size_t j = 0; j < r.metrics.confusion[i].size(); ++j) {
        if (j) out << ' ';
        out << r.metrics.confusion[i][j];
      }
    }
    out << '\n';
  }
}

double mean_inter_gesture_chamfer(std::span<const FrameGrid> grids) {
  std::vector<Mat> coords;
  coords.reserve(grids.size());
  for (const FrameGrid& g : grids) coords.push_back(grid_coords(g));
  double sum = 0.0;
  std::size_t pairs = 0;
  for (std::size_t i = 0; i < grids.size(); ++i)
    for (std::size_t j = i + 1; j < grids.size(); ++j)
      if (grids[i].gesture != grids[j].gesture) {
        sum += chamfer(coords[i], coords[j]);
        ++pairs;
      }
  if (pairs == 0) throw DomainError("no pair of grids with different gestures");
  return sum / static_cast<double>(pairs);
}

}  // namespace immcognito
