#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <map>

#include "apgan/eval.hpp"

#include "oracles.hpp"

using namespace apgan;

namespace {

Dataset tiny_dataset(std::size_t n, std::size_t classes, std::size_t segments, std::size_t d_raw,
                     std::uint64_t seed) {
  SynthSpec spec;
  spec.n_classes = classes;
  spec.segments = segments;
  spec.d_raw = d_raw;
  spec.n_train = 1;
  spec.n_test = n;
  spec.onset_min = 1;
  spec.onset_max = segments;
  spec.seed = seed;
  return synthesize(spec).test_a;
}

// a bundle whose classify output is the softmax of a fixed bias vector,
// independent of the input
ModelBundle constant_score_bundle(const ModelDims& dims, const std::vector<double>& logits) {
  ModelBundle bundle(dims, Variant::scp);
  for (std::size_t c = 0; c < dims.n_classes; ++c) bundle.perc.out.b.value[c] = logits[c];
  return bundle;
}

}  // namespace

TEST_CASE("a perfect predictor scores 1.0 at every ratio", "[eval]") {
  const Dataset test = tiny_dataset(20, 4, 5, 3, 41);
  const auto report = evaluate_with(
      [&](const PartialView& v) {
        Prediction p;
        p.label = v.label;
        p.scores = Tensor({4});
        p.scores[v.label] = 1.0;
        return p;
      },
      test);

  REQUIRE(report.segments == 5);
  REQUIRE(report.ratios.front() == 0.2);
  REQUIRE(report.ratios.back() == 1.0);
  for (double acc : report.accuracy) REQUIRE(acc == 1.0);
  for (double acc : report.macro_accuracy) REQUIRE(acc == 1.0);
  for (std::size_t kk = 0; kk < 5; ++kk) {
    for (std::size_t t = 0; t < 4; ++t) {
      for (std::size_t p = 0; p < 4; ++p) {
        if (t == p) {
          REQUIRE(report.confusion[kk][t][p] == report.class_counts[t]);
        } else {
          REQUIRE(report.confusion[kk][t][p] == 0);
        }
      }
    }
  }
}

TEST_CASE("a uniform-random predictor lands near 1/C", "[eval][property]") {
  const std::size_t C = 8;
  const Dataset test = tiny_dataset(800, C, 3, 2, 43);
  Rng rng(45);
  const auto report = evaluate_with(
      [&](const PartialView&) {
        Prediction p;
        p.label = static_cast<std::size_t>(rng.uniform_int(0, C - 1));
        p.scores = Tensor({C});
        p.scores[p.label] = 1.0;
        return p;
      },
      test);

  // 3-sigma binomial band around 1/8 with 800 views per ratio
  const double p0 = 1.0 / static_cast<double>(C);
  const double band = 3.0 * std::sqrt(p0 * (1.0 - p0) / 800.0);
  for (double acc : report.accuracy) {
    REQUIRE(acc >= p0 - band);
    REQUIRE(acc <= p0 + band);
  }
}

TEST_CASE("a hand-built fixture matches the hand-counted matrix", "[eval]") {
  // two sequences, K=2 -> four views; predictions fixed by (id, progress)
  Dataset test;
  test.n_classes = 2;
  test.segments = 2;
  test.d_raw = 1;
  FeatureSequence s0;
  s0.id = 0;
  s0.label = 0;
  s0.segments = Tensor({2, 1});
  FeatureSequence s1;
  s1.id = 1;
  s1.label = 1;
  s1.segments = Tensor({2, 1});
  test.sequences = {s0, s1};

  const std::map<std::pair<std::uint64_t, std::size_t>, std::size_t> table = {
      {{0, 1}, 1},  // wrong
      {{0, 2}, 0},  // right
      {{1, 1}, 1},  // right
      {{1, 2}, 1},  // right
  };
  const auto report = evaluate_with(
      [&](const PartialView& v) {
        Prediction p;
        p.label = table.at({v.source_id, v.progress});
        p.scores = Tensor({2});
        p.scores[p.label] = 1.0;
        return p;
      },
      test);

  REQUIRE(report.accuracy[0] == 0.5);
  REQUIRE(report.accuracy[1] == 1.0);
  REQUIRE(report.per_class[0][0] == 0.0);
  REQUIRE(report.per_class[1][0] == 1.0);
  REQUIRE(report.confusion[0][0][1] == 1);
  REQUIRE(report.confusion[0][1][1] == 1);
  REQUIRE(report.confusion[1][0][0] == 1);
  REQUIRE(report.confusion[1][1][1] == 1);
}

TEST_CASE("overall accuracy is the count-weighted mean of per-class accuracy", "[eval][property]") {
  const Dataset test = tiny_dataset(60, 5, 4, 2, 47);
  Rng rng(49);
  const auto report = evaluate_with(
      [&](const PartialView&) {
        Prediction p;
        p.label = static_cast<std::size_t>(rng.uniform_int(0, 4));
        p.scores = Tensor({5});
        p.scores[p.label] = 1.0;
        return p;
      },
      test);

  for (std::size_t kk = 0; kk < report.segments; ++kk) {
    double weighted = 0.0;
    for (std::size_t c = 0; c < 5; ++c) {
      weighted += report.per_class[c][kk] * static_cast<double>(report.class_counts[c]) /
                  static_cast<double>(report.n_sequences);
    }
    REQUIRE(std::abs(report.accuracy[kk] - weighted) < 1e-12);

    // confusion rows sum to the per-class counts
    for (std::size_t c = 0; c < 5; ++c) {
      std::size_t row = 0;
      for (std::size_t p = 0; p < 5; ++p) row += report.confusion[kk][c][p];
      REQUIRE(row == report.class_counts[c]);
    }
  }
}

TEST_CASE("evaluate is invariant to test-set ordering", "[eval]") {
  Dataset test = tiny_dataset(30, 4, 4, 3, 51);
  ModelBundle bundle(ModelDims{.d_raw = 3, .d_enc = 4, .d_feat = 4, .d_hidden = 4, .width1 = 5,
                               .width2 = 4, .n_classes = 4, .segments = 4},
                     Variant::full);
  bundle.init(53);

  const auto report_a = evaluate(bundle, test);
  std::reverse(test.sequences.begin(), test.sequences.end());
  const auto report_b = evaluate(bundle, test);
  for (std::size_t kk = 0; kk < 4; ++kk) {
    REQUIRE(report_a.accuracy[kk] == report_b.accuracy[kk]);
    REQUIRE(report_a.macro_accuracy[kk] == report_b.macro_accuracy[kk]);
    REQUIRE(report_a.confusion[kk] == report_b.confusion[kk]);
  }
}

TEST_CASE("evaluate validates model-dataset compatibility", "[eval]") {
  const Dataset test = tiny_dataset(4, 4, 4, 3, 55);
  ModelBundle bundle(ModelDims{.d_raw = 5, .d_enc = 4, .d_feat = 4, .d_hidden = 4, .width1 = 5,
                               .width2 = 4, .n_classes = 4, .segments = 4},
                     Variant::full);
  bundle.init(57);
  REQUIRE_THROWS_AS(evaluate(bundle, test), EvalError);

  Dataset empty;
  empty.n_classes = 4;
  empty.segments = 4;
  empty.d_raw = 5;
  REQUIRE_THROWS_AS(evaluate(bundle, empty), EvalError);
}

TEST_CASE("threshold table on a perfect report is 100 everywhere", "[eval]") {
  EvaluationReport report;
  report.n_classes = 3;
  report.segments = 10;
  report.per_class.assign(3, std::vector<double>(10, 1.0));
  const ThresholdTable table = threshold_table(report);
  for (std::size_t t = 0; t < 3; ++t) {
    for (std::size_t r = 0; r < 3; ++r) REQUIRE(table.percent[t][r] == 100.0);
  }
}

TEST_CASE("threshold table counts classes against each bar", "[eval]") {
  // half the classes at 0.85, half at 0.5 -> 50 / 50 / 0
  EvaluationReport report;
  report.n_classes = 4;
  report.segments = 10;
  report.per_class.assign(4, std::vector<double>(10, 0.85));
  report.per_class[2].assign(10, 0.5);
  report.per_class[3].assign(10, 0.5);
  const ThresholdTable table = threshold_table(report);
  for (std::size_t r = 0; r < 3; ++r) {
    REQUIRE(table.percent[0][r] == 50.0);  // tau 0.6
    REQUIRE(table.percent[1][r] == 50.0);  // tau 0.8
    REQUIRE(table.percent[2][r] == 0.0);   // tau 0.9
  }
}

TEST_CASE("threshold fractions never increase with the bar", "[eval][property]") {
  Rng rng(59);
  for (int rep = 0; rep < 20; ++rep) {
    EvaluationReport report;
    report.n_classes = 6;
    report.segments = 10;
    report.per_class.assign(6, std::vector<double>(10));
    for (auto& row : report.per_class) {
      for (auto& v : row) v = rng.uniform(0.0, 1.0);
    }
    const ThresholdTable table = threshold_table(report);
    for (std::size_t r = 0; r < 3; ++r) {
      REQUIRE(table.percent[0][r] >= table.percent[1][r]);
      REQUIRE(table.percent[1][r] >= table.percent[2][r]);
    }
  }
}

TEST_CASE("ablation comparison reports deltas per ratio", "[eval]") {
  EvaluationReport a;
  a.n_classes = 4;
  a.segments = 10;
  a.n_sequences = 50;
  a.ratios.resize(10);
  a.accuracy.resize(10);
  for (std::size_t kk = 0; kk < 10; ++kk) {
    a.ratios[kk] = static_cast<double>(kk + 1) / 10.0;
    a.accuracy[kk] = 0.1 * static_cast<double>(kk + 1);
  }
  EvaluationReport b = a;
  for (auto& v : b.accuracy) v = std::min(1.0, v + 0.2);

  const auto rows = compare_ablations({{"scp", &a}, {"full", &b}});
  REQUIRE(rows.size() == 2);
  REQUIRE(rows[0].acc_r01 == Catch::Approx(0.1));
  REQUIRE(rows[0].acc_r03 == Catch::Approx(0.3));
  REQUIRE(rows[0].acc_r05 == Catch::Approx(0.5));
  REQUIRE(rows[0].mean == Catch::Approx(0.3));
  REQUIRE(rows[1].mean == Catch::Approx(0.5));

  const auto same = compare_ablations({{"x", &a}, {"y", &a}});
  REQUIRE(same[0].mean == same[1].mean);

  EvaluationReport mismatched = a;
  mismatched.n_sequences = 51;
  REQUIRE_THROWS_AS(compare_ablations({{"a", &a}, {"m", &mismatched}}), EvalError);

  const std::string csv = ablation_table_csv(rows);
  REQUIRE(csv.find("variant,acc_r0.1,acc_r0.3,acc_r0.5,mean") == 0);
  REQUIRE(csv.find("scp,") != std::string::npos);
}

TEST_CASE("fusing a model with itself reproduces its own report", "[eval]") {
  SynthSpec spec;
  spec.n_classes = 3;
  spec.segments = 4;
  spec.d_raw = 3;
  spec.n_train = 1;
  spec.n_test = 15;
  spec.seed = 61;
  spec.onset_min = 1;
  spec.onset_max = 4;
  const SynthOutput data = synthesize(spec);

  ModelBundle bundle(ModelDims{.d_raw = 3, .d_enc = 4, .d_feat = 4, .d_hidden = 4, .width1 = 5,
                               .width2 = 4, .n_classes = 3, .segments = 4},
                     Variant::full);
  bundle.init(63);

  const auto single = evaluate(bundle, data.test_a);
  const auto fused = evaluate_fused(bundle, bundle, data.test_a, data.test_a);
  for (std::size_t kk = 0; kk < 4; ++kk) {
    REQUIRE(single.accuracy[kk] == fused.accuracy[kk]);
    REQUIRE(single.confusion[kk] == fused.confusion[kk]);
  }
}

TEST_CASE("fusion with a uniform model cannot break the informative one", "[eval]") {
  const ModelDims dims{.d_raw = 3, .d_enc = 4, .d_feat = 4, .d_hidden = 4, .width1 = 5,
                       .width2 = 4, .n_classes = 3, .segments = 4};
  SynthSpec spec;
  spec.n_classes = 3;
  spec.segments = 4;
  spec.d_raw = 3;
  spec.n_train = 1;
  spec.n_test = 12;
  spec.seed = 65;
  const SynthOutput data = synthesize(spec);

  ModelBundle informative(dims, Variant::full);
  informative.init(67);
  ModelBundle uniform(dims, Variant::scp);  // zero weights -> uniform scores

  const auto single = evaluate(informative, data.test_a);
  const auto fused = evaluate_fused(informative, uniform, data.test_a, data.test_b);
  for (std::size_t kk = 0; kk < 4; ++kk) {
    // adding a constant 1/C to every score preserves the argmax
    REQUIRE(fused.accuracy[kk] == single.accuracy[kk]);
  }
}

TEST_CASE("fused labels on a two-view fixture match hand computation", "[eval]") {
  const ModelDims dims{.d_raw = 2, .d_enc = 3, .d_feat = 3, .d_hidden = 3, .width1 = 4,
                       .width2 = 3, .n_classes = 2, .segments = 1};
  Dataset test_a;
  test_a.n_classes = 2;
  test_a.segments = 1;
  test_a.d_raw = 2;
  FeatureSequence s;
  s.id = 0;
  s.label = 1;
  s.segments = Tensor({1, 2});
  test_a.sequences = {s};
  s.id = 1;
  s.label = 0;
  test_a.sequences.push_back(s);
  const Dataset test_b = test_a;

  // softmax([0, ln 3]) = [0.25, 0.75]; softmax([ln 9, 0]) = [0.9, 0.1]
  const ModelBundle bundle_a = constant_score_bundle(dims, {0.0, std::log(3.0)});
  const ModelBundle bundle_b = constant_score_bundle(dims, {std::log(9.0), 0.0});
  // fused scores = [1.15, 0.85] -> always class 0
  const auto report = evaluate_fused(bundle_a, bundle_b, test_a, test_b);
  REQUIRE(report.accuracy[0] == 0.5);
  REQUIRE(report.confusion[0][1][0] == 1);
  REQUIRE(report.confusion[0][0][0] == 1);
}

TEST_CASE("unpaired ids are rejected", "[eval]") {
  const ModelDims dims{.d_raw = 2, .d_enc = 3, .d_feat = 3, .d_hidden = 3, .width1 = 4,
                       .width2 = 3, .n_classes = 2, .segments = 1};
  Dataset test_a;
  test_a.n_classes = 2;
  test_a.segments = 1;
  test_a.d_raw = 2;
  FeatureSequence s;
  s.id = 0;
  s.label = 0;
  s.segments = Tensor({1, 2});
  test_a.sequences = {s};
  Dataset test_b = test_a;
  test_b.sequences[0].id = 7;

  const ModelBundle bundle = constant_score_bundle(dims, {0.0, 0.0});
  REQUIRE_THROWS_AS(evaluate_fused(bundle, bundle, test_a, test_b), EvalError);
}

TEST_CASE("report files round trip through the curve parser", "[eval]") {
  const Dataset test = tiny_dataset(10, 3, 5, 2, 69);
  Rng rng(71);
  const auto report = evaluate_with(
      [&](const PartialView& v) {
        Prediction p;
        p.label = rng.uniform() < 0.5 ? v.label : 0;
        p.scores = Tensor({3});
        p.scores[p.label] = 1.0;
        return p;
      },
      test);

  const std::string text = format_report_text(report);
  REQUIRE(text.find("[curve]") != std::string::npos);
  REQUIRE(text.find("[threshold_table]") != std::string::npos);
  REQUIRE(text.find("[top_classes]") != std::string::npos);

  const auto curve = parse_report_curve(text);
  REQUIRE(curve.size() == 5);
  for (std::size_t kk = 0; kk < 5; ++kk) {
    REQUIRE(curve[kk].first == report.ratios[kk]);
    REQUIRE(curve[kk].second == report.accuracy[kk]);
  }

  // the curve csv has exactly K data rows
  const std::string csv = format_curve_csv(report);
  std::size_t lines = 0;
  for (char c : csv) {
    if (c == '\n') ++lines;
  }
  REQUIRE(lines == 6);  // header + K

  const std::string confusion = format_confusion_csv(report);
  REQUIRE(confusion.find("# ratio") == 0);
}
