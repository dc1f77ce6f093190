#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "apgan/checkpoint.hpp"
#include "apgan/data.hpp"
#include "apgan/eval.hpp"
#include "apgan/gradcheck_battery.hpp"
#include "apgan/model.hpp"
#include "apgan/train.hpp"

namespace fs = std::filesystem;
using namespace apgan;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitRuntime = 2;
constexpr int kExitNumerical = 3;

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

// Resolved-configuration echo, one sorted key=value per line.
class EchoBuilder {
 public:
  void add(const std::string& key, const std::string& value) { kv_[key] = value; }
  void add(const std::string& key, double value) { kv_[key] = fmt_double(value); }
  void add(const std::string& key, std::size_t value) { kv_[key] = std::to_string(value); }
  void add(const std::string& key, bool value) { kv_[key] = value ? "true" : "false"; }

  std::string str() const {
    std::string out;
    for (const auto& [k, v] : kv_) out += k + "=" + v + "\n";
    return out;
  }

 private:
  std::map<std::string, std::string> kv_;
};

void write_text(const fs::path& path, const std::string& text) {
  detail::write_file(path.string(), text);
}

std::string default_report_dir() {
  const char* env = std::getenv("APGAN_REPORT_DIR");
  return env != nullptr && *env != '\0' ? env : ".";
}

// ---------------------------------------------------------------------------
// gen-data
// ---------------------------------------------------------------------------

struct GenDataArgs {
  std::string out;
  SynthSpec spec;
  bool text_export = false;
};

int run_gen_data(const GenDataArgs& args) {
  fs::create_directories(args.out);
  const SynthOutput data = synthesize(args.spec);

  const fs::path out(args.out);
  save_dataset((out / "train_a.ds").string(), data.train_a);
  save_dataset((out / "train_b.ds").string(), data.train_b);
  save_dataset((out / "test_a.ds").string(), data.test_a);
  save_dataset((out / "test_b.ds").string(), data.test_b);
  if (args.text_export) {
    export_dataset_text((out / "train_a.csv").string(), data.train_a);
    export_dataset_text((out / "train_b.csv").string(), data.train_b);
    export_dataset_text((out / "test_a.csv").string(), data.test_a);
    export_dataset_text((out / "test_b.csv").string(), data.test_b);
  }

  EchoBuilder echo;
  echo.add("command", std::string("gen-data"));
  echo.add("c", args.spec.n_classes);
  echo.add("k", args.spec.segments);
  echo.add("d_raw", args.spec.d_raw);
  echo.add("n_train", args.spec.n_train);
  echo.add("n_test", args.spec.n_test);
  echo.add("alpha", args.spec.ambiguity);
  echo.add("sigma", args.spec.noise);
  echo.add("onset_min", args.spec.onset_min);
  echo.add("onset_max", args.spec.onset_max);
  echo.add("seed", args.spec.seed);
  echo.add("text_export", args.text_export);
  echo.add("path.out", args.out);
  write_text(out / "gen_data_config.txt", echo.str());

  std::cout << "wrote " << args.spec.n_train << " train and " << args.spec.n_test
            << " test sequences per modality to " << args.out << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

struct TrainArgs {
  std::string data;
  std::string out;
  std::string variant = "full";
  std::string adv_form = "nonsat";
  ModelDims dims;  // d_raw/C/K overwritten from the dataset
  TrainConfig cfg;
  bool stage1_only = false;
  bool skip_stage1 = false;
};

EchoBuilder train_echo(const TrainArgs& args, const ModelDims& dims) {
  EchoBuilder echo;
  echo.add("command", std::string("train"));
  echo.add("variant", args.variant);
  echo.add("seed", args.cfg.seed);
  echo.add("batch", args.cfg.batch);
  echo.add("dims.d_raw", dims.d_raw);
  echo.add("dims.d_enc", dims.d_enc);
  echo.add("dims.d_feat", dims.d_feat);
  echo.add("dims.d_hidden", dims.d_hidden);
  echo.add("dims.width1", dims.width1);
  echo.add("dims.width2", dims.width2);
  echo.add("dims.classes", dims.n_classes);
  echo.add("dims.segments", dims.segments);
  echo.add("stage1.lr", args.cfg.stage1.lr);
  echo.add("stage1.momentum", args.cfg.stage1.momentum);
  echo.add("stage1.weight_decay", args.cfg.stage1.weight_decay);
  echo.add("stage1.lr_decay", args.cfg.stage1.lr_decay);
  echo.add("stage1.decay_interval", args.cfg.stage1.decay_interval);
  echo.add("stage1.iterations", args.cfg.stage1.iterations);
  echo.add("stage1.enabled", !args.skip_stage1);
  echo.add("stage2.lr", args.cfg.stage2.lr);
  echo.add("stage2.weight_decay", args.cfg.stage2.weight_decay);
  echo.add("stage2.lambda", args.cfg.stage2.lambda);
  echo.add("stage2.d_steps_per_g_step", args.cfg.stage2.d_steps_per_g_step);
  echo.add("stage2.iterations", args.cfg.stage2.iterations);
  echo.add("stage2.adv_form", args.adv_form);
  echo.add("stage2.freeze_encoder", args.cfg.stage2.freeze_encoder);
  echo.add("stage2.freeze_perceptual", args.cfg.stage2.freeze_perceptual);
  echo.add("stage2.freeze_generator", args.cfg.stage2.freeze_generator);
  echo.add("stage2.include_full_views", args.cfg.stage2.include_full_views);
  echo.add("stage2.enabled", !args.stage1_only);
  return echo;
}

// Training-set accuracy of the supervised path (full videos through the
// pooled feature and the perceptual head).
double full_video_accuracy(const ModelBundle& bundle, const Dataset& ds) {
  std::size_t correct = 0;
  for (const FeatureSequence& seq : ds.sequences) {
    const Tensor z = full_video_feature(seq, bundle.gen, bundle.dims.segments);
    Tensor row({1, z.size()}, z.values());
    const Tensor probs = classify(row, bundle.perc);
    Tensor scores({probs.cols()});
    for (std::size_t j = 0; j < probs.cols(); ++j) scores[j] = probs.at(0, j);
    if (argmax_lowest_tie(scores) == seq.label) correct += 1;
  }
  return static_cast<double>(correct) / static_cast<double>(ds.sequences.size());
}

int run_train(TrainArgs& args) {
  const Dataset train = load_dataset(args.data);

  ModelDims dims = args.dims;
  dims.d_raw = train.d_raw;
  dims.n_classes = train.n_classes;
  dims.segments = train.segments;

  const Variant variant = variant_from_name(args.variant);
  if (args.adv_form == "nonsat") {
    args.cfg.stage2.adv_form = AdversarialForm::non_saturating;
  } else if (args.adv_form == "sat") {
    args.cfg.stage2.adv_form = AdversarialForm::saturating;
  } else {
    throw CLI::ValidationError("--adv-form must be 'nonsat' or 'sat'");
  }
  args.cfg.validate();
  if (args.stage1_only && args.skip_stage1) {
    throw CLI::ValidationError("--stage1-only and --skip-stage1 are mutually exclusive");
  }

  fs::create_directories(args.out);
  const fs::path out(args.out);
  const std::string echo_text = train_echo(args, dims).str();

  ModelBundle bundle(dims, variant);
  bundle.init(args.cfg.seed);

  TrainLog log;
  if (!args.skip_stage1) {
    TrainLog stage1 = stage1_pretrain(bundle, train, args.cfg);
    std::cout << "stage 1 done: " << stage1.records.size() << " iterations, final loss "
              << stage1.records.back().loss_cls << ", train accuracy "
              << full_video_accuracy(bundle, train) << " (" << stage1.wall_seconds << "s)\n";
    log.extend(stage1);
  }
  save_checkpoint((out / "checkpoint_stage1.ckpt").string(), bundle, echo_text);

  if (!args.stage1_only) {
    TrainLog stage2 = stage2_adversarial(bundle, train, args.cfg);
    const TrainRecord& last = stage2.records.back();
    std::cout << "stage 2 done: " << stage2.records.size() << " cycles, loss_D " << last.loss_d
              << ", D(real) " << last.d_real_mean << ", D(fake) " << last.d_fake_mean << " ("
              << stage2.wall_seconds << "s)\n";
    log.extend(stage2);
  }

  save_checkpoint((out / "checkpoint.ckpt").string(), bundle, echo_text);
  log.save((out / "trainlog.csv").string());

  EchoBuilder file_echo = train_echo(args, dims);
  file_echo.add("path.data", args.data);
  file_echo.add("path.out", args.out);
  write_text(out / "train_config.txt", file_echo.str());
  return kExitOk;
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

struct EvalArgs {
  std::string checkpoint;
  std::string data;
  std::string out;
  std::string fuse_checkpoint;
  std::string data_b;
};

int run_eval(const EvalArgs& args) {
  const LoadedCheckpoint loaded = load_checkpoint(args.checkpoint);
  const Dataset test = load_dataset(args.data);

  EvaluationReport report;
  if (!args.fuse_checkpoint.empty()) {
    if (args.data_b.empty()) {
      throw CLI::ValidationError("--fuse needs --data-b with the second modality's test set");
    }
    const LoadedCheckpoint loaded_b = load_checkpoint(args.fuse_checkpoint);
    const Dataset test_b = load_dataset(args.data_b);
    report = evaluate_fused(loaded.bundle, loaded_b.bundle, test, test_b);
  } else {
    report = evaluate(loaded.bundle, test);
  }

  const fs::path out(args.out);
  fs::create_directories(out);
  write_text(out / "report.txt", format_report_text(report));
  write_text(out / "curve.csv", format_curve_csv(report));
  write_text(out / "confusion.csv", format_confusion_csv(report));

  EchoBuilder echo;
  echo.add("command", std::string("eval"));
  echo.add("fused", !args.fuse_checkpoint.empty());
  echo.add("path.checkpoint", args.checkpoint);
  echo.add("path.data", args.data);
  if (!args.fuse_checkpoint.empty()) {
    echo.add("path.checkpoint_b", args.fuse_checkpoint);
    echo.add("path.data_b", args.data_b);
  }
  echo.add("path.out", args.out);
  write_text(out / "eval_config.txt", echo.str());

  std::cout << "accuracy by observation ratio:";
  for (std::size_t kk = 0; kk < report.segments; ++kk) {
    std::printf(" %.3f", report.accuracy[kk]);
  }
  std::cout << "\nreport written to " << (out / "report.txt").string() << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------
// gradcheck
// ---------------------------------------------------------------------------

struct GradcheckArgs {
  double rel_tol = 1e-4;
  double step = 1e-5;
  std::uint64_t seed = 42;
  std::size_t unroll = 10;
  bool inject_fault = false;
};

int run_gradcheck(const GradcheckArgs& args) {
  BatteryOptions opt;
  opt.check.rel_tol = args.rel_tol;
  opt.check.step = args.step;
  opt.check.fault_scale = args.inject_fault ? 1.01 : 1.0;
  opt.seed = args.seed;
  opt.unroll = args.unroll;

  const GradCheckReport report = run_gradcheck_battery(opt);
  std::cout << format_gradcheck_report(report);
  return report.passed() ? kExitOk : kExitNumerical;
}

// ---------------------------------------------------------------------------
// curve
// ---------------------------------------------------------------------------

struct CurveArgs {
  std::string report;
  std::string out;
};

int run_curve(const CurveArgs& args) {
  const std::string text = detail::read_file(args.report);
  const auto curve = parse_report_curve(text);
  write_text(args.out, format_curve_csv(curve));
  std::cout << "wrote " << curve.size() << " curve rows to " << args.out << "\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"early action prediction with adversarial feature enhancement"};
  app.require_subcommand(1);

  GenDataArgs gen_args;
  CLI::App* gen = app.add_subcommand("gen-data", "synthesize train/test feature sequences");
  gen->add_option("--out", gen_args.out, "output directory")->required();
  gen->add_option("--c", gen_args.spec.n_classes, "class count")->capture_default_str();
  gen->add_option("--k", gen_args.spec.segments, "segments per sequence")->capture_default_str();
  gen->add_option("--d-raw", gen_args.spec.d_raw, "raw segment dimension")->capture_default_str();
  gen->add_option("--n-train", gen_args.spec.n_train, "training sequences")->capture_default_str();
  gen->add_option("--n-test", gen_args.spec.n_test, "test sequences")->capture_default_str();
  gen->add_option("--alpha", gen_args.spec.ambiguity, "prefix ambiguity in [0,1]")->capture_default_str();
  gen->add_option("--sigma", gen_args.spec.noise, "observation noise")->capture_default_str();
  gen->add_option("--onset-min", gen_args.spec.onset_min, "earliest onset segment, 1-based (0 = auto from K)")->capture_default_str();
  gen->add_option("--onset-max", gen_args.spec.onset_max, "latest onset segment (0 = auto from K)")->capture_default_str();
  gen->add_option("--seed", gen_args.spec.seed, "synthesis seed")->capture_default_str();
  gen->add_flag("--text-export", gen_args.text_export, "also write human-readable csv dumps");

  TrainArgs train_args;
  CLI::App* train = app.add_subcommand("train", "two-stage training on a dataset");
  train->add_option("--data", train_args.data, "training dataset file")->required();
  train->add_option("--out", train_args.out, "output directory")->required();
  train->add_option("--variant", train_args.variant, "scp|lstm|lstm-scp|full")->capture_default_str();
  train->add_option("--seed", train_args.cfg.seed, "seed for init and batching")->capture_default_str();
  train->add_option("--batch", train_args.cfg.batch, "batch size")->capture_default_str();
  train->add_option("--d-enc", train_args.dims.d_enc, "encoder hidden width")->capture_default_str();
  train->add_option("--d-feat", train_args.dims.d_feat, "segment feature dimension")->capture_default_str();
  train->add_option("--d-hidden", train_args.dims.d_hidden, "LSTM hidden size")->capture_default_str();
  train->add_option("--h1", train_args.dims.width1, "first head hidden width")->capture_default_str();
  train->add_option("--h2", train_args.dims.width2, "second head hidden width")->capture_default_str();
  train->add_option("--stage1-lr", train_args.cfg.stage1.lr, "stage-1 SGD learning rate")->capture_default_str();
  train->add_option("--momentum", train_args.cfg.stage1.momentum, "stage-1 SGD momentum")->capture_default_str();
  train->add_option("--weight-decay", train_args.cfg.stage1.weight_decay,
                    "L2 weight decay, both stages")->capture_default_str();
  train->add_option("--lr-decay", train_args.cfg.stage1.lr_decay, "stage-1 lr decay factor")->capture_default_str();
  train->add_option("--decay-interval", train_args.cfg.stage1.decay_interval,
                    "stage-1 iterations between lr decays")->capture_default_str();
  train->add_option("--stage1-iters", train_args.cfg.stage1.iterations, "stage-1 iterations")->capture_default_str();
  train->add_option("--stage2-lr", train_args.cfg.stage2.lr, "stage-2 Adam learning rate")->capture_default_str();
  train->add_option("--lambda", train_args.cfg.stage2.lambda,
                    "classification weight in the generator objective")->capture_default_str();
  train->add_option("--d-steps", train_args.cfg.stage2.d_steps_per_g_step,
                    "discriminator steps per generator step")->capture_default_str();
  train->add_option("--stage2-iters", train_args.cfg.stage2.iterations, "stage-2 cycles")->capture_default_str();
  train->add_option("--adv-form", train_args.adv_form, "generator loss form: nonsat|sat")->capture_default_str();
  train->add_flag("--freeze-encoder,!--no-freeze-encoder", train_args.cfg.stage2.freeze_encoder,
                  "keep the encoder fixed during stage 2 (default on)");
  train->add_flag("--freeze-perceptual", train_args.cfg.stage2.freeze_perceptual,
                  "do not update the perceptual head in stage 2");
  train->add_flag("--freeze-generator", train_args.cfg.stage2.freeze_generator,
                  "discriminator-only stage 2");
  train->add_flag("--include-full-views,!--no-include-full-views",
                  train_args.cfg.stage2.include_full_views,
                  "feed k=K views to the generator as fakes (default on)");
  train->add_flag("--stage1-only", train_args.stage1_only, "skip adversarial training");
  train->add_flag("--skip-stage1", train_args.skip_stage1,
                  "adversarial training from random init (no convergence promise)");

  EvalArgs eval_args;
  eval_args.out = default_report_dir();
  CLI::App* eval_cmd = app.add_subcommand("eval", "accuracy-vs-observation-ratio evaluation");
  eval_cmd->add_option("--checkpoint", eval_args.checkpoint, "trained checkpoint")->required();
  eval_cmd->add_option("--data", eval_args.data, "test dataset file")->required();
  eval_cmd->add_option("--out", eval_args.out, "report directory (or $APGAN_REPORT_DIR)")->capture_default_str();
  eval_cmd->add_option("--fuse", eval_args.fuse_checkpoint, "second checkpoint for score fusion");
  eval_cmd->add_option("--data-b", eval_args.data_b, "second modality's test set for --fuse");

  GradcheckArgs grad_args;
  CLI::App* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient verification");
  gradcheck->add_option("--rel-tol", grad_args.rel_tol, "max relative error")->capture_default_str();
  gradcheck->add_option("--step", grad_args.step, "finite-difference half step")->capture_default_str();
  gradcheck->add_option("--seed", grad_args.seed, "input sampling seed")->capture_default_str();
  gradcheck->add_option("--unroll", grad_args.unroll, "LSTM steps in generator checks")->capture_default_str();
  gradcheck->add_flag("--inject-fault", grad_args.inject_fault,
                      "corrupt analytic gradients by 1% (negative control, must fail)");

  CurveArgs curve_args;
  CLI::App* curve = app.add_subcommand("curve", "re-emit the curve csv from a saved report");
  curve->add_option("--report", curve_args.report, "report.txt produced by eval")->required();
  curve->add_option("--out", curve_args.out, "output csv path")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << "\n\n" << app.help() << "\n";
    return kExitUsage;
  }

  try {
    if (gen->parsed()) return run_gen_data(gen_args);
    if (train->parsed()) return run_train(train_args);
    if (eval_cmd->parsed()) return run_eval(eval_args);
    if (gradcheck->parsed()) return run_gradcheck(grad_args);
    if (curve->parsed()) return run_curve(curve_args);
  } catch (const CLI::ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const TrainingDiverged& e) {
    std::cerr << "numerical abort: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitUsage;
}
