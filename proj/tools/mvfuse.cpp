// Command-line driver: dataset generation, training, evaluation, ablations,
// micro-benchmarks, and frame rendering, all on the synthetic scene corpus.
//
// Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "mvfuse/ablate.hpp"
#include "mvfuse/bench.hpp"
#include "mvfuse/checkpoint.hpp"
#include "mvfuse/config.hpp"
#include "mvfuse/dataset.hpp"
#include "mvfuse/evaluate.hpp"
#include "mvfuse/model.hpp"
#include "mvfuse/render.hpp"
#include "mvfuse/train.hpp"

namespace fs = std::filesystem;

namespace {

struct CommonOpts {
  std::string config_path;
  std::uint64_t seed = 0;
  bool seed_set = false;
};

mvf::RunConfig resolve_config(const CommonOpts& opts) {
  mvf::RunConfig cfg;
  if (!opts.config_path.empty()) {
    cfg = mvf::load_run_config(opts.config_path);
  } else {
    cfg.finalize();
  }
  if (opts.seed_set) cfg.seed = opts.seed;
  return cfg;
}

void add_common(CLI::App* cmd, CommonOpts& opts) {
  cmd->add_option("--config", opts.config_path, "JSON config overlaying the built-in defaults")
      ->check(CLI::ExistingFile);
  cmd->add_option("--seed", opts.seed, "override the config seed")
      ->each([&opts](const std::string&) { opts.seed_set = true; });
}

std::string split_manifest(const std::string& data_root, const std::string& split) {
  return (fs::path(data_root) / split / "manifest.jsonl").string();
}

std::vector<mvf::LabeledFrame> load_split(const std::string& data_root, const std::string& split) {
  const std::string manifest = split_manifest(data_root, split);
  MVF_CHECK(fs::exists(manifest), mvf::Errc::empty_input,
            "no frames found: missing " + manifest);
  mvf::Dataset ds(manifest);
  std::vector<mvf::LabeledFrame> frames;
  frames.reserve(ds.size());
  for (std::size_t i = 0; i < ds.size(); ++i) frames.push_back(ds.load(i));
  return frames;
}

// Offset separating the eval split's scene seeds from the train split's.
constexpr std::uint64_t kEvalSeedOffset = 1000003;

int cmd_gen_data(const CommonOpts& opts, const std::string& out_dir) {
  const mvf::RunConfig cfg = resolve_config(opts);
  const std::string train_dir = (fs::path(out_dir) / "train").string();
  const std::string eval_dir = (fs::path(out_dir) / "eval").string();
  mvf::generate_dataset(train_dir, cfg.train_frames, cfg.seed, cfg.scene);
  std::cout << "wrote " << cfg.train_frames << " train frames to " << train_dir << "\n";
  mvf::generate_dataset(eval_dir, cfg.eval_frames, cfg.seed + kEvalSeedOffset, cfg.scene);
  std::cout << "wrote " << cfg.eval_frames << " eval frames to " << eval_dir << "\n";
  return 0;
}

void print_metrics(const mvf::EvalResult& result, const mvf::EvalConfig& cfg) {
  mvf::write_metrics_table(std::cout, result, cfg);
}

int cmd_train(const CommonOpts& opts, const std::string& data_root, const std::string& out_dir) {
  const mvf::RunConfig cfg = resolve_config(opts);
  const std::vector<mvf::LabeledFrame> frames = load_split(data_root, "train");

  fs::create_directories(out_dir);
  std::ofstream log((fs::path(out_dir) / "train_log.csv").string());

  mvf::Rng rng(cfg.seed);
  mvf::Model<float> model(cfg.model, rng);
  std::cout << "training on " << frames.size() << " frames, " << cfg.train.total_epochs()
            << " epochs, " << model.param_count() << " parameters\n";

  const mvf::TrainResult result = mvf::train_model(model, frames, cfg.train, out_dir, &log);
  std::cout << "epoch 0 loss " << result.epochs.front().total << ", final loss "
            << result.epochs.back().total << "\n";
  std::cout << "checkpoint: " << result.final_checkpoint << "\n";

  if (fs::exists(split_manifest(data_root, "eval"))) {
    const std::vector<mvf::LabeledFrame> eval_frames = load_split(data_root, "eval");
    const mvf::EvalResult metrics = mvf::evaluate_model(model, eval_frames, cfg.eval);
    print_metrics(metrics, cfg.eval);
    std::ofstream csv((fs::path(out_dir) / "metrics.csv").string());
    mvf::write_metrics_csv(csv, metrics, cfg.eval);
  }
  return 0;
}

int cmd_eval(const CommonOpts& opts, const std::string& data_root, const std::string& checkpoint,
             const std::string& out_csv, bool with_baseline) {
  const mvf::RunConfig cfg = resolve_config(opts);
  const std::vector<mvf::LabeledFrame> frames = load_split(data_root, "eval");

  mvf::Rng rng(cfg.seed);
  mvf::Model<float> model(cfg.model, rng);
  mvf::load_checkpoint<float>(checkpoint, model);

  const mvf::EvalResult metrics = mvf::evaluate_model(model, frames, cfg.eval);
  print_metrics(metrics, cfg.eval);
  if (with_baseline) {
    std::cout << "\nconstant-velocity baseline (ground-truth boxes):\n";
    print_metrics(mvf::evaluate_cv_baseline(frames, cfg.eval), cfg.eval);
  }
  if (!out_csv.empty()) {
    std::ofstream csv(out_csv);
    mvf::write_metrics_csv(csv, metrics, cfg.eval);
  }
  return 0;
}

int cmd_ablate(const CommonOpts& opts, const std::string& data_root, const std::string& out_dir) {
  const mvf::RunConfig cfg = resolve_config(opts);
  const std::vector<mvf::LabeledFrame> train_frames = load_split(data_root, "train");
  const std::vector<mvf::LabeledFrame> eval_frames = load_split(data_root, "eval");

  const mvf::AblationReport report =
      mvf::run_ablation(cfg, train_frames, eval_frames, &std::cout);
  std::cout << "\n";
  mvf::write_ablation_tables(std::cout, report);

  fs::create_directories(out_dir);
  std::ofstream txt((fs::path(out_dir) / "ablation.txt").string());
  mvf::write_ablation_tables(txt, report);
  std::ofstream csv((fs::path(out_dir) / "ablation.csv").string());
  mvf::write_ablation_csv(csv, report);
  return 0;
}

int cmd_bench(const std::vector<std::size_t>& points, int runs, const std::string& out_csv) {
  const std::vector<mvf::BenchRow> rows = mvf::run_benchmarks(points, runs);
  std::printf("%-18s %10s %12s %6s\n", "kernel", "points", "median_ms", "runs");
  for (const mvf::BenchRow& row : rows)
    std::printf("%-18s %10zu %12.3f %6d\n", row.kernel.c_str(), row.points, row.median_ms,
                row.runs);
  if (!out_csv.empty()) {
    std::ofstream csv(out_csv);
    mvf::write_bench_csv(csv, rows);
  }
  return 0;
}

int cmd_render(const CommonOpts& opts, const std::string& data_root, const std::string& split,
               int frame_index, const std::string& out_path, const std::string& checkpoint,
               const std::string& rv_path) {
  const mvf::RunConfig cfg = resolve_config(opts);
  const std::vector<mvf::LabeledFrame> frames = load_split(data_root, split);
  MVF_CHECK_ARG(frame_index >= 0 && static_cast<std::size_t>(frame_index) < frames.size(),
                "frame index out of range");
  const mvf::LabeledFrame& frame = frames[static_cast<std::size_t>(frame_index)];

  std::vector<mvf::Detection> detections;
  if (!checkpoint.empty()) {
    mvf::Rng rng(cfg.seed);
    mvf::Model<float> model(cfg.model, rng);
    mvf::load_checkpoint<float>(checkpoint, model);
    mvf::NoGrad guard;
    detections = model.predict(frame, mvf::nn::RunCtx<float>{});
  }
  mvf::render_frame(frame, detections, out_path);
  std::cout << "wrote " << out_path << " (" << detections.size() << " detections)\n";

  if (!rv_path.empty()) {
    const mvf::Sweep& ref = frame.reference();
    const mvf::Tensor feats = mvf::per_point_features<double>(ref, ref.pose);
    const mvf::RVImage image = mvf::rasterize_rv(ref, ref.pose, cfg.scene.rv, feats);
    mvf::render_rv_depth(image, rv_path);
    std::cout << "wrote " << rv_path << "\n";
  }
  return 0;
}

int exit_code_for(mvf::Errc code) {
  switch (code) {
    case mvf::Errc::numeric_failure: return 3;
    case mvf::Errc::invalid_argument: return 1;
    default: return 2;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"LiDAR detection and motion forecasting on synthetic scenes"};
  app.require_subcommand(1);

  CommonOpts gen_opts;
  std::string gen_out;
  CLI::App* gen = app.add_subcommand("gen-data", "generate train/eval frame datasets");
  add_common(gen, gen_opts);
  gen->add_option("--out", gen_out, "output directory (creates train/ and eval/)")->required();

  CommonOpts train_opts;
  std::string train_data, train_out;
  CLI::App* train = app.add_subcommand("train", "train a model on a generated dataset");
  add_common(train, train_opts);
  train->add_option("--data", train_data, "dataset root from gen-data")->required();
  train->add_option("--out", train_out, "output directory for checkpoints and logs")->required();

  CommonOpts eval_opts;
  std::string eval_data, eval_ckpt, eval_csv;
  bool eval_baseline = false;
  CLI::App* evalc = app.add_subcommand("eval", "evaluate a checkpoint on the eval split");
  add_common(evalc, eval_opts);
  evalc->add_option("--data", eval_data, "dataset root from gen-data")->required();
  evalc->add_option("--checkpoint", eval_ckpt, "model checkpoint")->required();
  evalc->add_option("--out", eval_csv, "also write the metrics table as CSV");
  evalc->add_flag("--baseline", eval_baseline, "also print the constant-velocity baseline");

  CommonOpts ablate_opts;
  std::string ablate_data, ablate_out;
  CLI::App* ablate = app.add_subcommand("ablate", "budget-matched view/strategy ablations");
  add_common(ablate, ablate_opts);
  ablate->add_option("--data", ablate_data, "dataset root from gen-data")->required();
  ablate->add_option("--out", ablate_out, "output directory for tables")->required();

  std::vector<std::size_t> bench_points = {0, 30000, 70000, 130000};
  int bench_runs = 21;
  std::string bench_csv;
  CLI::App* bench = app.add_subcommand("bench", "projection and network micro-benchmarks");
  bench->add_option("--points", bench_points, "point counts to sweep")->delimiter(',');
  bench->add_option("--runs", bench_runs, "timed repetitions per row (median reported)");
  bench->add_option("--out", bench_csv, "also write rows as CSV");

  CommonOpts render_opts;
  std::string render_data, render_split = "eval", render_out, render_ckpt, render_rv;
  int render_frame_idx = 0;
  CLI::App* render = app.add_subcommand("render", "render a frame to a PPM image");
  add_common(render, render_opts);
  render->add_option("--data", render_data, "dataset root from gen-data")->required();
  render->add_option("--split", render_split, "train or eval (default eval)")
      ->check(CLI::IsMember({"train", "eval"}));
  render->add_option("--frame", render_frame_idx, "frame index within the split");
  render->add_option("--out", render_out, "output PPM path")->required();
  render->add_option("--checkpoint", render_ckpt, "overlay detections from this checkpoint");
  render->add_option("--rv", render_rv, "also write the range-view depth panel here");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }

  try {
    if (gen->parsed()) return cmd_gen_data(gen_opts, gen_out);
    if (train->parsed()) return cmd_train(train_opts, train_data, train_out);
    if (evalc->parsed())
      return cmd_eval(eval_opts, eval_data, eval_ckpt, eval_csv, eval_baseline);
    if (ablate->parsed()) return cmd_ablate(ablate_opts, ablate_data, ablate_out);
    if (bench->parsed()) return cmd_bench(bench_points, bench_runs, bench_csv);
    if (render->parsed())
      return cmd_render(render_opts, render_data, render_split, render_frame_idx, render_out,
                        render_ckpt, render_rv);
  } catch (const mvf::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code_for(e.code());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
