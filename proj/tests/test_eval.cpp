#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "instseg/eval.hpp"
#include "instseg/rng.hpp"

using namespace instseg;

namespace {

EvalInstance inst(int image, int category, double conf, std::vector<int> pixels) {
  EvalInstance e;
  e.image = image;
  e.category = category;
  e.confidence = conf;
  std::sort(pixels.begin(), pixels.end());
  e.pixels = std::move(pixels);
  return e;
}

std::vector<int> block(int from, int count) {
  std::vector<int> p;
  for (int i = 0; i < count; ++i) p.push_back(from + i);
  return p;
}

}  // namespace

TEST_CASE("perfect prediction scores 1.0 on every semantic metric") {
  LabelMap gt(4, 4);
  for (int i = 0; i < 16; ++i) gt.values[static_cast<size_t>(i)] = i % 3;
  const SemanticMetrics m = semantic_metrics(gt, gt, 3);
  CHECK(m.pixel_acc == 1.0);
  CHECK(m.mean_acc == 1.0);
  CHECK(m.mean_iou == 1.0);
}

TEST_CASE("hand confusion matrix [[3,1],[1,3]]") {
  ConfusionMatrix cm(2);
  cm.at(0, 0) = 3;
  cm.at(0, 1) = 1;
  cm.at(1, 0) = 1;
  cm.at(1, 1) = 3;
  const SemanticMetrics m = semantic_metrics(cm);
  CHECK(m.pixel_acc == doctest::Approx(0.75));
  CHECK(m.mean_acc == doctest::Approx(0.75));
  CHECK(m.mean_iou == doctest::Approx(0.6));  // mean(3/5, 3/5)
}

TEST_CASE("ignore-masked pixels do not affect the metrics") {
  Rng rng(3);
  LabelMap gt(8, 8), pred(8, 8), ignore(8, 8, 0);
  for (int i = 0; i < 64; ++i) {
    gt.values[static_cast<size_t>(i)] = static_cast<int>(rng.uniform_int(0, 2));
    pred.values[static_cast<size_t>(i)] = static_cast<int>(rng.uniform_int(0, 2));
  }
  for (int i = 0; i < 10; ++i) ignore.values[static_cast<size_t>(i) * 6] = -1;
  const SemanticMetrics before = semantic_metrics(pred, gt, 3, &ignore);
  LabelMap flipped = pred;
  for (int i = 0; i < 10; ++i) {
    auto& v = flipped.values[static_cast<size_t>(i) * 6];
    v = (v + 1) % 3;
  }
  const SemanticMetrics after = semantic_metrics(flipped, gt, 3, &ignore);
  CHECK(before.pixel_acc == after.pixel_acc);
  CHECK(before.mean_iou == after.mean_iou);

  LabelMap all_ignored(2, 2, -1);
  CHECK_THROWS_AS(semantic_metrics(pred, LabelMap(8, 8, -1), 3), std::invalid_argument);
  (void)all_ignored;
}

TEST_CASE("semantic metrics agree with a naive counting oracle on random maps") {
  Rng rng(7);
  for (int trial = 0; trial < 30; ++trial) {
    const int classes = 3;
    LabelMap gt(16, 16), pred(16, 16);
    for (int i = 0; i < 256; ++i) {
      gt.values[static_cast<size_t>(i)] = static_cast<int>(rng.uniform_int(0, classes - 1));
      pred.values[static_cast<size_t>(i)] = static_cast<int>(rng.uniform_int(0, classes - 1));
    }
    const SemanticMetrics m = semantic_metrics(pred, gt, classes);

    // naive per-pixel counting
    double correct = 0;
    std::vector<double> tp(classes, 0), in_gt(classes, 0), in_pred(classes, 0);
    for (int i = 0; i < 256; ++i) {
      const int t = gt.values[static_cast<size_t>(i)], p = pred.values[static_cast<size_t>(i)];
      correct += t == p;
      tp[static_cast<size_t>(t)] += t == p;
      in_gt[static_cast<size_t>(t)] += 1;
      in_pred[static_cast<size_t>(p)] += 1;
    }
    CHECK(m.pixel_acc == doctest::Approx(correct / 256).epsilon(1e-12));
    double acc = 0, iou = 0;
    int present = 0;
    for (int c = 0; c < classes; ++c) {
      if (in_gt[static_cast<size_t>(c)] == 0) continue;
      ++present;
      acc += tp[static_cast<size_t>(c)] / in_gt[static_cast<size_t>(c)];
      iou += tp[static_cast<size_t>(c)] /
             (in_gt[static_cast<size_t>(c)] + in_pred[static_cast<size_t>(c)] - tp[static_cast<size_t>(c)]);
    }
    CHECK(m.mean_acc == doctest::Approx(acc / present).epsilon(1e-12));
    CHECK(m.mean_iou == doctest::Approx(iou / present).epsilon(1e-12));
  }
}

TEST_CASE("matching: exact prediction is a true positive at any threshold") {
  const auto gt = inst(0, 1, 1.0, block(0, 10));
  const auto pred = inst(0, 1, 0.9, block(0, 10));
  for (double thr : {0.1, 0.5, 0.9, 1.0}) {
    const auto matches = match_instances({pred}, {gt}, thr, 1);
    REQUIRE(matches[0].entries.size() == 1);
    CHECK(matches[0].entries[0].true_positive);
    CHECK(matches[0].entries[0].iou == doctest::Approx(1.0));
  }
}

TEST_CASE("greedy matching consumes ground truth in confidence order") {
  // two predictions on one GT: conf 0.9 with IoU 0.6, conf 0.8 with IoU 0.8
  const auto gt = inst(0, 1, 1.0, block(0, 10));
  const auto p1 = inst(0, 1, 0.9, block(0, 6));    // IoU 6/10
  const auto p2 = inst(0, 1, 0.8, block(0, 8));    // IoU 8/10
  const auto matches = match_instances({p1, p2}, {gt}, 0.5, 1);
  REQUIRE(matches[0].entries.size() == 2);
  CHECK(matches[0].entries[0].true_positive);   // 0.9 matches first
  CHECK(!matches[0].entries[1].true_positive);  // GT consumed
}

TEST_CASE("wrong category is a false positive regardless of IoU") {
  const auto gt = inst(0, 1, 1.0, block(0, 10));
  const auto pred = inst(0, 2, 0.9, block(0, 10));
  const auto matches = match_instances({pred}, {gt}, 0.5, 2);
  CHECK(matches[0].entries.empty());             // category 1 has no predictions
  REQUIRE(matches[1].entries.size() == 1);
  CHECK(!matches[1].entries[0].true_positive);   // category 2 has no GT to match
  CHECK(matches[0].num_gt == 1);
  CHECK(matches[1].num_gt == 0);
}

TEST_CASE("matching is scoped to the image") {
  const auto gt = inst(0, 1, 1.0, block(0, 10));
  const auto pred = inst(1, 1, 0.9, block(0, 10));  // same pixels, other image
  const auto matches = match_instances({pred}, {gt}, 0.5, 1);
  CHECK(!matches[0].entries[0].true_positive);
}

TEST_CASE("average precision") {
  SUBCASE("all true positives covering all GT") {
    CategoryMatches cm;
    cm.category = 1;
    cm.num_gt = 2;
    cm.entries = {{0.9, true, 1.0}, {0.8, true, 1.0}};
    CHECK(average_precision(cm) == doctest::Approx(1.0));
  }

  SUBCASE("no predictions") {
    CategoryMatches cm;
    cm.category = 1;
    cm.num_gt = 3;
    CHECK(average_precision(cm) == 0.0);
  }

  SUBCASE("[TP, FP, TP] over 2 GT integrates the precision envelope") {
    CategoryMatches cm;
    cm.category = 1;
    cm.num_gt = 2;
    cm.entries = {{0.9, true, 1.0}, {0.8, false, 0.0}, {0.7, true, 1.0}};
    CHECK(average_precision(cm) == doctest::Approx(0.5 * 1.0 + 0.5 * (2.0 / 3.0)).epsilon(1e-9));
    CHECK(average_precision(cm) == doctest::Approx(0.8333).epsilon(1e-4));
  }

  SUBCASE("zero GT is an error") {
    CategoryMatches cm;
    cm.category = 1;
    cm.num_gt = 0;
    CHECK_THROWS_AS(average_precision(cm), std::invalid_argument);
  }

  SUBCASE("a trailing zero-confidence false positive never raises AP") {
    Rng rng(9);
    for (int trial = 0; trial < 50; ++trial) {
      CategoryMatches cm;
      cm.category = 1;
      cm.num_gt = 3;
      double conf = 1.0;
      for (int i = 0; i < 6; ++i) {
        conf -= 0.1;
        cm.entries.push_back({conf, rng.bernoulli(0.5) && i < 3, 0.0});
      }
      const double base = average_precision(cm);
      cm.entries.push_back({0.0, false, 0.0});
      CHECK(average_precision(cm) <= base + 1e-12);
    }
  }
}

TEST_CASE("map_r properties") {
  const std::vector<EvalInstance> gts = {inst(0, 1, 1.0, block(0, 10)),
                                         inst(0, 2, 1.0, block(20, 10)),
                                         inst(1, 1, 1.0, block(0, 12))};
  const std::vector<EvalInstance> perfect = {inst(0, 1, 0.9, block(0, 10)),
                                             inst(0, 2, 0.8, block(20, 10)),
                                             inst(1, 1, 0.7, block(0, 12))};

  SUBCASE("perfect predictions reach 1.0 at every threshold") {
    for (int i = 1; i <= 9; ++i) CHECK(map_r(perfect, gts, 0.1 * i, 2) == doctest::Approx(1.0));
    CHECK(map_r_vol(perfect, gts, 2) == doctest::Approx(1.0));
  }

  SUBCASE("single-category dataset equals that category's AP") {
    const std::vector<EvalInstance> one_gt = {inst(0, 1, 1.0, block(0, 10))};
    const std::vector<EvalInstance> preds = {inst(0, 1, 0.9, block(0, 7))};
    const auto matches = match_instances(preds, one_gt, 0.5, 1);
    CHECK(map_r(preds, one_gt, 0.5, 1) == doctest::Approx(average_precision(matches[0])));
  }

  SUBCASE("map_r is monotone non-increasing in the IoU threshold") {
    const std::vector<EvalInstance> preds = {inst(0, 1, 0.9, block(0, 7)),
                                             inst(0, 2, 0.8, block(20, 6)),
                                             inst(1, 1, 0.7, block(0, 9))};
    double prev = 1.1;
    for (int i = 1; i <= 9; ++i) {
      const double v = map_r(preds, gts, 0.1 * i, 2);
      CHECK(v <= prev + 1e-12);
      prev = v;
    }
  }

  SUBCASE("strictly increasing confidence rescaling changes nothing") {
    std::vector<EvalInstance> preds = {inst(0, 1, 0.9, block(0, 7)),
                                       inst(0, 1, 0.5, block(2, 9)),
                                       inst(1, 1, 0.2, block(0, 9))};
    const double base = map_r(preds, gts, 0.5, 2);
    for (auto& p : preds) p.confidence = std::tanh(3.0 * p.confidence) + 2.0;
    CHECK(map_r(preds, gts, 0.5, 2) == doctest::Approx(base).epsilon(1e-12));
  }

  SUBCASE("empty ground truth is an error") {
    CHECK_THROWS_AS(map_r(perfect, {}, 0.5, 2), std::invalid_argument);
  }
}

TEST_CASE("two-category fixture equals a brute-force matcher oracle") {
  // Brute force: evaluate the greedy protocol by explicit enumeration of the
  // ranked prediction list, reimplemented inline.
  const std::vector<EvalInstance> gts = {inst(0, 1, 1.0, block(0, 10)),
                                         inst(0, 1, 1.0, block(12, 10)),
                                         inst(0, 2, 1.0, block(30, 8))};
  const std::vector<EvalInstance> preds = {
      inst(0, 1, 0.95, block(0, 9)),   // hits gt0
      inst(0, 1, 0.90, block(1, 10)),  // overlaps gt0 (consumed) more than gt1
      inst(0, 1, 0.85, block(12, 8)),  // hits gt1
      inst(0, 2, 0.80, block(33, 8)),  // partial hit on gt2
  };
  const auto matches = match_instances(preds, gts, 0.5, 2);

  // category 1 by hand: pred0 TP (IoU 0.9); pred1 best unmatched is gt1 with
  // IoU |12..21 & 1..10|=0 -> FP; pred2 TP (IoU 8/10).
  CHECK(matches[0].entries[0].true_positive);
  CHECK(!matches[0].entries[1].true_positive);
  CHECK(matches[0].entries[2].true_positive);
  // category 2: intersection 5, union 11 -> IoU < 0.5 -> FP
  CHECK(!matches[1].entries[0].true_positive);

  // AP category 1: precisions at recalls 0.5 -> 1.0, 1.0 -> 2/3
  CHECK(average_precision(matches[0]) == doctest::Approx(0.5 + 0.5 * 2.0 / 3.0));
  CHECK(average_precision(matches[1]) == 0.0);
  CHECK(map_r(preds, gts, 0.5, 2) == doctest::Approx(0.5 * (0.5 + 0.5 * 2.0 / 3.0)));
}

TEST_CASE("metrics table formatting aligns names") {
  const std::string table =
      format_metrics_table({{"pixel_acc", 0.975}, {"mean_iou", 0.8125}});
  CHECK(table.find("pixel_acc") != std::string::npos);
  CHECK(table.find("0.9750") != std::string::npos);
  CHECK(table.find("0.8125") != std::string::npos);
}
