#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "apgan/data.hpp"
#include "apgan/io.hpp"
#include "apgan/model.hpp"

namespace apgan {

class EvalError : public std::runtime_error {
 public:
  explicit EvalError(const std::string& msg) : std::runtime_error(msg) {}
};

struct EvaluationReport {
  std::size_t n_classes = 0;
  std::size_t segments = 0;  // K
  std::size_t n_sequences = 0;
  std::vector<double> ratios;                       // K entries, k/K
  std::vector<double> accuracy;                     // per ratio, over views (primary)
  std::vector<double> macro_accuracy;               // per ratio, mean over classes
  std::vector<std::vector<double>> per_class;       // C x K per-class accuracy
  std::vector<std::size_t> class_counts;            // test sequences per class
  std::vector<std::vector<std::vector<std::size_t>>> confusion;  // K of C x C (row = truth)

  double accuracy_at_ratio(double r) const {
    const std::size_t k = ratio_to_progress(r, segments);
    return accuracy[k - 1];
  }

  static std::size_t ratio_to_progress(double r, std::size_t segments) {
    const long k = std::lround(r * static_cast<double>(segments));
    return static_cast<std::size_t>(std::clamp(k, 1l, static_cast<long>(segments)));
  }
};

using Predictor = std::function<Prediction(const PartialView&)>;

// Scores every prefix view of every test sequence. Aggregation is pure
// integer counting so the report does not depend on set ordering.
inline EvaluationReport evaluate_with(const Predictor& predictor, const Dataset& test) {
  if (test.sequences.empty()) throw EvalError("evaluate: empty test set");
  const std::size_t C = test.n_classes;
  const std::size_t K = test.segments;

  std::vector<std::size_t> correct(K, 0);
  std::vector<std::vector<std::size_t>> class_correct(C, std::vector<std::size_t>(K, 0));
  std::vector<std::size_t> class_counts(C, 0);
  std::vector<std::vector<std::vector<std::size_t>>> confusion(
      K, std::vector<std::vector<std::size_t>>(C, std::vector<std::size_t>(C, 0)));

  for (const FeatureSequence& seq : test.sequences) {
    if (seq.label >= C) throw EvalError("evaluate: label out of range");
    class_counts[seq.label] += 1;
    for (std::size_t prog = 1; prog <= K; ++prog) {
      const PartialView view = make_view(seq, prog, K);
      const Prediction pred = predictor(view);
      confusion[prog - 1][seq.label][pred.label] += 1;
      if (pred.label == seq.label) {
        correct[prog - 1] += 1;
        class_correct[seq.label][prog - 1] += 1;
      }
    }
  }

  EvaluationReport report;
  report.n_classes = C;
  report.segments = K;
  report.n_sequences = test.sequences.size();
  report.class_counts = class_counts;
  report.confusion = std::move(confusion);
  report.ratios.resize(K);
  report.accuracy.resize(K);
  report.macro_accuracy.resize(K);
  report.per_class.assign(C, std::vector<double>(K, 0.0));

  const double n = static_cast<double>(test.sequences.size());
  for (std::size_t kk = 0; kk < K; ++kk) {
    report.ratios[kk] = static_cast<double>(kk + 1) / static_cast<double>(K);
    report.accuracy[kk] = static_cast<double>(correct[kk]) / n;
    double macro = 0.0;
    std::size_t populated = 0;
    for (std::size_t c = 0; c < C; ++c) {
      if (class_counts[c] == 0) continue;
      report.per_class[c][kk] =
          static_cast<double>(class_correct[c][kk]) / static_cast<double>(class_counts[c]);
      macro += report.per_class[c][kk];
      populated += 1;
    }
    report.macro_accuracy[kk] = populated ? macro / static_cast<double>(populated) : 0.0;
  }
  return report;
}

inline EvaluationReport evaluate(const ModelBundle& bundle, const Dataset& test) {
  if (test.d_raw != bundle.dims.d_raw || test.segments != bundle.dims.segments ||
      test.n_classes != bundle.dims.n_classes) {
    throw EvalError("evaluate: dataset (C=" + std::to_string(test.n_classes) + ",K=" +
                    std::to_string(test.segments) + ",d=" + std::to_string(test.d_raw) +
                    ") does not match model (C=" + std::to_string(bundle.dims.n_classes) + ",K=" +
                    std::to_string(bundle.dims.segments) + ",d=" + std::to_string(bundle.dims.d_raw) +
                    ")");
  }
  return evaluate_with([&bundle](const PartialView& v) { return predict(v, bundle); }, test);
}

// Two-stream late fusion: per view, sum the softmax scores of the two
// modality models. Sets must pair by sequence id.
inline EvaluationReport evaluate_fused(const ModelBundle& bundle_a, const ModelBundle& bundle_b,
                                       const Dataset& test_a, const Dataset& test_b) {
  if (test_a.sequences.size() != test_b.sequences.size()) {
    throw EvalError("evaluate_fused: test sets differ in size");
  }
  std::map<std::uint64_t, const FeatureSequence*> by_id;
  for (const FeatureSequence& seq : test_b.sequences) by_id[seq.id] = &seq;

  const std::size_t K = test_a.segments;
  auto fused_predictor = [&](const PartialView& view_a) {
    auto it = by_id.find(view_a.source_id);
    if (it == by_id.end()) {
      throw EvalError("evaluate_fused: unpaired id " + std::to_string(view_a.source_id));
    }
    const PartialView view_b = make_view(*it->second, view_a.progress, K);
    if (view_b.label != view_a.label) {
      throw EvalError("evaluate_fused: paired sequences disagree on label for id " +
                      std::to_string(view_a.source_id));
    }
    const Prediction pa = predict(view_a, bundle_a);
    const Prediction pb = predict(view_b, bundle_b);
    return fuse_scores(pa.scores, pb.scores);
  };
  return evaluate_with(fused_predictor, test_a);
}

// ---------------------------------------------------------------------------
// Threshold table: fraction of classes (as %) reaching each accuracy bar at
// observation ratios 0.1 / 0.5 / 1.0.
// ---------------------------------------------------------------------------

struct ThresholdTable {
  static constexpr double kRatios[3] = {0.1, 0.5, 1.0};
  static constexpr double kTaus[3] = {0.6, 0.8, 0.9};
  double percent[3][3] = {};  // [tau][ratio]
};

inline ThresholdTable threshold_table(const EvaluationReport& report) {
  ThresholdTable table;
  for (std::size_t ri = 0; ri < 3; ++ri) {
    const std::size_t kk =
        EvaluationReport::ratio_to_progress(ThresholdTable::kRatios[ri], report.segments) - 1;
    for (std::size_t ti = 0; ti < 3; ++ti) {
      std::size_t hit = 0;
      for (std::size_t c = 0; c < report.n_classes; ++c) {
        if (report.per_class[c][kk] >= ThresholdTable::kTaus[ti]) hit += 1;
      }
      table.percent[ti][ri] =
          100.0 * static_cast<double>(hit) / static_cast<double>(report.n_classes);
    }
  }
  return table;
}

// ---------------------------------------------------------------------------
// Ablation comparison: accuracy at r in {0.1, 0.3, 0.5} and their mean.
// ---------------------------------------------------------------------------

struct AblationRow {
  std::string name;
  double acc_r01 = 0.0;
  double acc_r03 = 0.0;
  double acc_r05 = 0.0;
  double mean = 0.0;
};

inline std::vector<AblationRow> compare_ablations(
    const std::vector<std::pair<std::string, const EvaluationReport*>>& reports) {
  if (reports.empty()) throw EvalError("compare_ablations: no reports");
  const EvaluationReport* first = reports.front().second;
  std::vector<AblationRow> rows;
  for (const auto& [name, report] : reports) {
    if (report->n_classes != first->n_classes || report->segments != first->segments ||
        report->n_sequences != first->n_sequences) {
      throw EvalError("compare_ablations: report '" + name + "' evaluated on a different setup");
    }
    AblationRow row;
    row.name = name;
    row.acc_r01 = report->accuracy_at_ratio(0.1);
    row.acc_r03 = report->accuracy_at_ratio(0.3);
    row.acc_r05 = report->accuracy_at_ratio(0.5);
    row.mean = (row.acc_r01 + row.acc_r03 + row.acc_r05) / 3.0;
    rows.push_back(row);
  }
  return rows;
}

inline std::string ablation_table_csv(const std::vector<AblationRow>& rows) {
  std::string out = "variant,acc_r0.1,acc_r0.3,acc_r0.5,mean\n";
  char buf[160];
  for (const AblationRow& r : rows) {
    std::snprintf(buf, sizeof(buf), "%s,%.4f,%.4f,%.4f,%.4f\n", r.name.c_str(), r.acc_r01,
                  r.acc_r03, r.acc_r05, r.mean);
    out += buf;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Report files
// ---------------------------------------------------------------------------

inline std::string format_curve_csv(const EvaluationReport& report) {
  std::string out = "ratio,accuracy\n";
  char buf[96];
  for (std::size_t kk = 0; kk < report.segments; ++kk) {
    std::snprintf(buf, sizeof(buf), "%.17g,%.17g\n", report.ratios[kk], report.accuracy[kk]);
    out += buf;
  }
  return out;
}

inline std::vector<std::pair<std::size_t, double>> top_classes(const EvaluationReport& report,
                                                               std::size_t kk, std::size_t n) {
  std::vector<std::pair<std::size_t, double>> ranked;
  for (std::size_t c = 0; c < report.n_classes; ++c) ranked.emplace_back(c, report.per_class[c][kk]);
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  ranked.resize(std::min(n, ranked.size()));
  return ranked;
}

inline std::string format_report_text(const EvaluationReport& report) {
  char buf[256];
  std::string out = "apgan evaluation report\n";
  out += "classes," + std::to_string(report.n_classes) + "\n";
  out += "segments," + std::to_string(report.segments) + "\n";
  out += "sequences," + std::to_string(report.n_sequences) + "\n";

  out += "[curve]\nratio,accuracy,macro_accuracy\n";
  for (std::size_t kk = 0; kk < report.segments; ++kk) {
    std::snprintf(buf, sizeof(buf), "%.17g,%.17g,%.17g\n", report.ratios[kk], report.accuracy[kk],
                  report.macro_accuracy[kk]);
    out += buf;
  }

  const ThresholdTable table = threshold_table(report);
  out += "[threshold_table]\ntau,r=0.1,r=0.5,r=1.0\n";
  for (std::size_t ti = 0; ti < 3; ++ti) {
    std::snprintf(buf, sizeof(buf), "%.2f,%.2f,%.2f,%.2f\n", ThresholdTable::kTaus[ti],
                  table.percent[ti][0], table.percent[ti][1], table.percent[ti][2]);
    out += buf;
  }

  out += "[top_classes]\nratio,rank,class,accuracy\n";
  for (std::size_t kk = 0; kk < report.segments; ++kk) {
    const auto ranked = top_classes(report, kk, 5);
    for (std::size_t i = 0; i < ranked.size(); ++i) {
      std::snprintf(buf, sizeof(buf), "%.17g,%zu,%zu,%.17g\n", report.ratios[kk], i + 1,
                    ranked[i].first, ranked[i].second);
      out += buf;
    }
  }

  out += "[per_class_accuracy]\n";
  for (std::size_t c = 0; c < report.n_classes; ++c) {
    out += std::to_string(c);
    for (std::size_t kk = 0; kk < report.segments; ++kk) {
      std::snprintf(buf, sizeof(buf), ",%.17g", report.per_class[c][kk]);
      out += buf;
    }
    out += "\n";
  }
  out += "[end]\n";
  return out;
}

inline std::string format_confusion_csv(const EvaluationReport& report) {
  std::string out;
  char buf[32];
  for (std::size_t kk = 0; kk < report.segments; ++kk) {
    std::snprintf(buf, sizeof(buf), "# ratio %.17g\n", report.ratios[kk]);
    out += buf;
    for (std::size_t t = 0; t < report.n_classes; ++t) {
      for (std::size_t p = 0; p < report.n_classes; ++p) {
        if (p) out += ",";
        out += std::to_string(report.confusion[kk][t][p]);
      }
      out += "\n";
    }
    out += "\n";
  }
  return out;
}

// Pulls the (ratio, accuracy) pairs back out of a saved report; the `curve`
// subcommand re-emits the plot file from this.
inline std::vector<std::pair<double, double>> parse_report_curve(const std::string& report_text) {
  std::vector<std::pair<double, double>> curve;
  std::size_t pos = report_text.find("[curve]");
  if (pos == std::string::npos) throw EvalError("report has no [curve] section");
  pos = report_text.find('\n', pos);            // end of [curve]
  pos = report_text.find('\n', pos + 1);        // skip column header
  while (pos != std::string::npos) {
    const std::size_t start = pos + 1;
    const std::size_t end = report_text.find('\n', start);
    if (end == std::string::npos) break;
    const std::string line = report_text.substr(start, end - start);
    if (line.empty() || line[0] == '[') break;
    double ratio = 0.0, acc = 0.0;
    if (std::sscanf(line.c_str(), "%lg,%lg", &ratio, &acc) != 2) {
      throw EvalError("malformed curve line: " + line);
    }
    curve.emplace_back(ratio, acc);
    pos = end;
  }
  if (curve.empty()) throw EvalError("report [curve] section is empty");
  return curve;
}

inline std::string format_curve_csv(const std::vector<std::pair<double, double>>& curve) {
  std::string out = "ratio,accuracy\n";
  char buf[96];
  for (const auto& [ratio, acc] : curve) {
    std::snprintf(buf, sizeof(buf), "%.17g,%.17g\n", ratio, acc);
    out += buf;
  }
  return out;
}

}  // namespace apgan
