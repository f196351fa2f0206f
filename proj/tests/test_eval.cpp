#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <nlohmann/json.hpp>
#include <sstream>

#include "immcognito/errors.hpp"
#include "immcognito/eval.hpp"
#include "immcognito/rng.hpp"

using namespace immcognito;
namespace fs = std::filesystem;

namespace {

Mat rows(std::initializer_list<std::initializer_list<double>> values) {
  Mat m(static_cast<long>(values.size()), static_cast<long>(values.begin()->size()));
  long r = 0;
  for (const auto& row : values) {
    long c = 0;
    for (double v : row) m(r, c++) = v;
    ++r;
  }
  return m;
}

ModelConfig small_config() {
  ModelConfig c;
  c.hidden = 6;
  c.message = 4;
  c.key_dim = 2;
  c.value_dim = 2;
  c.heads = 2;
  c.output_dim = 4;
  return c;
}

std::vector<FrameGrid> random_grids(int count, int subjects, int gestures) {
  Rng rng(41);
  std::vector<FrameGrid> out;
  for (int i = 0; i < count; ++i) {
    FrameGrid g(3, 4);
    for (float& v : g.coords) v = static_cast<float>(standard_normal(rng));
    g.subject = i % subjects;
    g.gesture = i % gestures;
    out.push_back(g);
  }
  return out;
}

}  // namespace

TEST_CASE("perfect predictions") {
  const Metrics m = compute_metrics(rows({{1, 0, 0}, {0, 1, 0}, {0, 0, 1}}), std::vector<int>{0, 1, 2});
  CHECK(m.accuracy == 1.0);
  CHECK(m.f1_macro == 1.0);
  CHECK(m.auc_macro == 1.0);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) CHECK(m.confusion[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] == (i == j));
}

TEST_CASE("two-sample hand example") {
  const Metrics m = compute_metrics(rows({{0.9, 0.1}, {0.8, 0.2}}), std::vector<int>{0, 1});
  CHECK(m.accuracy == 0.5);
  CHECK(m.auc_macro == 1.0);
  // Class 0: tp 1, fp 1, fn 0 -> 2/3. Class 1: no predictions -> 0.
  CHECK(m.f1_macro == doctest::Approx((2.0 / 3.0) / 2.0));
}

TEST_CASE("all predictions in class zero") {
  const std::vector<int> labels = {0, 0, 1, 2, 2};
  Mat p(5, 3);
  for (int i = 0; i < 5; ++i) p.row(i) << 0.6, 0.2, 0.2;
  const Metrics m = compute_metrics(p, labels);
  CHECK(m.accuracy == doctest::Approx(2.0 / 5.0));
  const double f1_0 = 2.0 * 2 / (2.0 * 2 + 3 + 0);
  CHECK(m.f1_macro == doctest::Approx(f1_0 / 3.0));
  CHECK(m.confusion[2][0] == 2);
}

TEST_CASE("argmax ties go to the lowest class") {
  const Metrics m = compute_metrics(rows({{0.5, 0.5}}), std::vector<int>{0});
  CHECK(m.accuracy == 1.0);
}

TEST_CASE("empty batch") { CHECK_THROWS_AS(compute_metrics(Mat(0, 2), std::vector<int>{}), DomainError); }

TEST_CASE("auc rank properties") {
  const double scores[] = {0.1, 0.2, 0.3, 0.4};
  const bool anti[] = {true, true, false, false};
  CHECK(roc_auc(scores, anti) == 0.0);
  const double tied[] = {0.5, 0.5};
  const bool mixed[] = {true, false};
  CHECK(roc_auc(tied, mixed) == 0.5);
  const bool one_class[] = {true, true};
  CHECK(std::isnan(roc_auc(tied, one_class)));

  Rng rng(42);
  std::vector<double> s;
  bool pos[4000];
  for (int i = 0; i < 4000; ++i) {
    s.push_back(uniform01(rng));
    pos[i] = i % 2 == 0;
  }
  CHECK(std::abs(roc_auc(s, std::span<const bool>(pos, 4000)) - 0.5) < 0.05);
}

TEST_CASE("metrics are invariant under row permutation") {
  Rng rng(43);
  Mat p(20, 4);
  std::vector<int> labels;
  for (int i = 0; i < 20; ++i) {
    double total = 0.0;
    for (int c = 0; c < 4; ++c) total += p(i, c) = uniform01(rng);
    p.row(i) /= total;
    labels.push_back(i % 4);
  }
  Mat q(20, 4);
  std::vector<int> ql(20);
  for (int i = 0; i < 20; ++i) {
    q.row(i) = p.row((i * 7) % 20);
    ql[static_cast<std::size_t>(i)] = labels[static_cast<std::size_t>((i * 7) % 20)];
  }
  const Metrics a = compute_metrics(p, labels), b = compute_metrics(q, ql);
  CHECK(a.accuracy == b.accuracy);
  CHECK(a.f1_macro == doctest::Approx(b.f1_macro));
  CHECK(a.auc_macro == doctest::Approx(b.auc_macro));
  CHECK(a.confusion == b.confusion);
  std::int64_t total = 0;
  for (const auto& r : a.confusion)
    for (auto v : r) total += v;
  CHECK(total == 20);
}

TEST_CASE("roc curves") {
  const Mat p = rows({{0.9, 0.1}, {0.6, 0.4}, {0.3, 0.7}, {0.2, 0.8}});
  const std::vector<int> labels = {0, 1, 0, 1};
  const auto curves = roc_curves(p, labels);
  REQUIRE(curves.size() == 2);
  CHECK(curves[0].fpr.front() == 0.0);
  CHECK(curves[0].tpr.back() == 1.0);
  const double s0[] = {0.9, 0.6, 0.3, 0.2};
  const bool p0[] = {true, false, true, false};
  CHECK(curves[0].auc == doctest::Approx(roc_auc(s0, p0)));
  std::ostringstream csv;
  write_roc_csv(csv, curves);
  CHECK(csv.str().rfind("class,fpr,tpr\n", 0) == 0);
}

TEST_CASE("copy-through autoencoder gives identical scorecard rows") {
  const ModelConfig c = small_config();
  const ModelParams g = init_classifier(c, 3), u = init_classifier(c, 4);
  const auto test = random_grids(24, 4, 3);
  const Scorecard card = privacy_utility_report(g, c, u, c, copy_through_autoencoder(c), c, test);
  REQUIRE(card.rows.size() == 4);
  for (const char* task : {"gesture", "identity"}) {
    const ScoreRow& a = card.row(task, "original");
    const ScoreRow& b = card.row(task, "deidentified");
    CHECK(a.metrics.accuracy == b.metrics.accuracy);
    CHECK(a.metrics.confusion == b.metrics.confusion);
    CHECK(b.mean_chamfer == 0.0);
  }
}

TEST_CASE("scorecard json schema and round trip") {
  const ModelConfig c = small_config();
  const auto test = random_grids(12, 4, 3);
  const Scorecard card = privacy_utility_report(
      init_classifier(c, 3), c, init_classifier(c, 4), c, test,
      [](const FrameGrid& g, std::size_t) {
        FrameGrid out = g;
        for (float& v : out.coords) v += 0.5f;
        return out;
      },
      "shifted");
  const auto doc = nlohmann::json::parse(scorecard_json(card));
  CHECK(doc["averaging"]["f1"] == "macro");
  REQUIRE(doc["rows"].size() == 4);
  for (const auto& row : doc["rows"]) {
    for (const char* key : {"task", "variant", "accuracy", "f1_macro", "auc_macro", "confusion", "mean_chamfer"})
      CHECK(row.contains(key));
  }
  CHECK(doc["rows"][1]["variant"] == "shifted");
  const Scorecard back = parse_scorecard_json(scorecard_json(card));
  CHECK(back.row("identity", "shifted").metrics.confusion == card.row("identity", "shifted").metrics.confusion);
  CHECK(back.row("gesture", "shifted").mean_chamfer == card.row("gesture", "shifted").mean_chamfer);

  const fs::path path = fs::temp_directory_path() / "immcognito-test-scorecard.json";
  write_scorecard(path, card);
  CHECK(fs::exists(path));
  std::ostringstream csv;
  write_scorecard_csv(csv, card);
  CHECK(csv.str().rfind("task,variant,accuracy,f1_macro,auc_macro,mean_chamfer,confusion\n", 0) == 0);
}

TEST_CASE("inter-gesture chamfer") {
  FrameGrid a(1, 1), b(1, 1), c(1, 1);
  b.at(0, 0) = 1.0f;
  c.at(0, 0) = 3.0f;
  a.gesture = 0;
  b.gesture = 1;
  c.gesture = 0;
  const std::vector<FrameGrid> grids = {a, b, c};
  // Cross-gesture pairs: (a, b) = 2, (c, b) = 8.
  CHECK(mean_inter_gesture_chamfer(grids) == doctest::Approx(5.0));
}
