#include "suppress/cli.hpp"

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>

#include <CLI11.hpp>
#include <json.hpp>

#include "suppress/evaluation.hpp"
#include "suppress/ingest.hpp"
#include "suppress/log.hpp"
#include "suppress/net.hpp"
#include "suppress/synthgen.hpp"
#include "suppress/tuner.hpp"
#include "suppress/weighting.hpp"

namespace suppress {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

// invalid flag combinations / values detected after CLI11 parsing -> exit 2
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::vector<double> parse_grid(const std::string& text, const char* flag) {
  if (text.empty()) return default_grid();
  std::vector<double> out;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const std::size_t comma = std::min(text.find(',', pos), text.size());
    const std::string token = text.substr(pos, comma - pos);
    std::size_t used = 0;
    double value = 0.0;
    try {
      value = std::stod(token, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (token.empty() || used != token.size())
      throw UsageError(std::string(flag) + ": bad grid element '" + token +
                       "' in '" + text + "'");
    if (value < 0.0 || value > 1.0)
      throw UsageError(std::string(flag) + ": grid value " + token +
                       " outside [0, 1]");
    out.push_back(value);
    pos = comma + 1;
  }
  return out;
}

struct GlobalOpts {
  std::uint64_t seed = 0;
  int threads = 1;
  std::string output_dir = ".";
  std::string log_level = "warn";
};

LogLevel level_from_name(const std::string& name) {
  if (name == "debug") return LogLevel::debug;
  if (name == "info") return LogLevel::info;
  if (name == "warn") return LogLevel::warn;
  if (name == "error") return LogLevel::error;
  if (name == "off") return LogLevel::off;
  throw UsageError("unknown log level '" + name + "'");
}

void apply_log_level(const GlobalOpts& g) {
  // the environment variable wins over the flag
  if (!std::getenv("SUPPRESS_DETECT_LOG"))
    set_log_level(level_from_name(g.log_level));
}

fs::path out_path(const GlobalOpts& g, const std::string& explicit_path,
                  const char* fallback_name) {
  if (!explicit_path.empty()) return explicit_path;
  return fs::path(g.output_dir) / fallback_name;
}

struct GenOpts {
  std::string out;
  int scenes = 20;
  std::string split = "train";
  std::string lighting = "mixed";
  SceneConfig scene;
};

int run_gen(const GlobalOpts& g, const GenOpts& o) {
  SceneConfig cfg = o.scene;
  cfg.seed = g.seed;
  if (o.lighting != "mixed") cfg.lighting = lighting_from_string(o.lighting);
  Split split;
  try {
    split = split_from_string(o.split);
  } catch (const std::exception& e) {
    throw UsageError(e.what());
  }
  const std::vector<SyntheticScene> scenes =
      generate(cfg, o.scenes, g.threads);
  const fs::path manifest = export_scenes(scenes, o.out, split);
  log_info("gen-synthetic: wrote " + std::to_string(scenes.size()) +
           " scenes under " + o.out);
  std::cout << manifest.string() << "\n";
  return 0;
}

struct TrainOpts {
  std::string manifest;
  std::string model_out;
  std::string loss_out;
  double label_iou = 0.5;
  int clusters = 3;
  TrainConfig train;
};

int run_train(const GlobalOpts& g, const TrainOpts& o) {
  {
    json m;
    try {
      m = json::parse(read_file(o.manifest));
    } catch (const json::parse_error& e) {
      throw ParseError(std::string("manifest: invalid JSON: ") + e.what());
    }
    if (!m.contains("detections_file") || m["detections_file"].is_null())
      throw UsageError(
          "manifest lacks detections_file; training needs candidate boxes");
  }
  const Dataset ds = load_manifest(o.manifest);
  const std::map<std::string, Image> images = load_images(ds, g.threads);
  WeightingConfig wcfg;
  wcfg.n_clusters = o.clusters;
  const std::vector<TrainingExample> examples =
      make_training_examples(ds, images, wcfg, o.label_iou, g.threads);

  TrainConfig cfg = o.train;
  cfg.seed = g.seed;
  const TrainResult result = train(examples, cfg);

  const fs::path model_path = out_path(g, o.model_out, "model.json");
  save_model(result.model, model_path);
  const fs::path loss_path = out_path(g, o.loss_out, "loss.csv");
  std::string csv = "epoch,mean_loss\n";
  char line[64];
  for (std::size_t e = 0; e < result.epoch_loss.size(); ++e) {
    std::snprintf(line, sizeof(line), "%zu,%.9f\n", e + 1,
                  result.epoch_loss[e]);
    csv += line;
  }
  write_file(loss_path, csv);
  log_info("train: " + std::to_string(examples.size()) + " examples, " +
           std::to_string(cfg.epochs) + " epochs, final loss " +
           std::to_string(result.epoch_loss.back()));
  std::cout << model_path.string() << "\n";
  return 0;
}

struct FilterOpts {
  std::string model;
  std::string manifest;
  std::string out;
  double th1 = 0.5;
  double th2 = 0.5;
  int clusters = 3;
};

std::string scored_to_json(std::span<const ScoredDetection> scored,
                           const ThresholdConfig& cfg) {
  json root = json::array();
  for (const ScoredDetection& s : scored) {
    if (!(s.detection.score >= cfg.th1 && s.suppressor_score >= cfg.th2))
      continue;
    root.push_back({{"image_id", s.detection.image_id},
                    {"bbox",
                     {s.detection.box.x, s.detection.box.y, s.detection.box.w,
                      s.detection.box.h}},
                    {"score", s.detection.score},
                    {"suppressor_score", s.suppressor_score}});
  }
  return root.dump(2);
}

int run_filter(const GlobalOpts& g, const FilterOpts& o) {
  const ConvNet<float> model = load_model(o.model);
  const Dataset ds = load_manifest(o.manifest);
  const std::map<std::string, Image> images = load_images(ds, g.threads);
  WeightingConfig wcfg;
  wcfg.n_clusters = o.clusters;
  const std::vector<ScoredDetection> scored =
      score(model, ds.detections, images, wcfg, g.threads);
  const ThresholdConfig cfg{o.th1, o.th2};
  const fs::path path = out_path(g, o.out, "filtered.json");
  write_file(path, scored_to_json(scored, cfg));
  const std::size_t kept = apply_thresholds(scored, cfg).size();
  log_info("filter: kept " + std::to_string(kept) + " of " +
           std::to_string(scored.size()) + " detections");
  std::cout << path.string() << "\n";
  return 0;
}

struct EvalOpts {
  std::string manifest;
  std::string detections;
  std::string report_out;
  std::string group_by;
  double iou = 0.5;
};

int run_evaluate(const GlobalOpts& g, const EvalOpts& o) {
  const Dataset ds = load_manifest(o.manifest);
  const std::vector<Detection> dets = parse_detections(read_file(o.detections));
  std::vector<MetricsReport> reports;
  if (o.group_by.empty()) {
    MetricsReport rep = evaluate_detections(ds, dets, o.iou);
    rep.stratum = "total";
    reports.push_back(std::move(rep));
  } else {
    reports = evaluate_stratified(ds, dets, o.iou, o.group_by);
  }
  std::cout << report_table(reports);
  const fs::path path = out_path(g, o.report_out, "report.json");
  write_file(path, report_json(reports));
  return 0;
}

struct TuneOpts {
  std::string manifest;
  std::string model;
  std::string th1_grid;
  std::string th2_grid;
  std::string out_json;
  std::string out_csv;
  double iou = 0.5;
  int clusters = 3;
};

int run_tune(const GlobalOpts& g, const TuneOpts& o) {
  const std::vector<double> th1 = parse_grid(o.th1_grid, "--th1-grid");
  const std::vector<double> th2 = parse_grid(o.th2_grid, "--th2-grid");
  const ConvNet<float> model = load_model(o.model);
  const Dataset ds = load_manifest(o.manifest);
  const std::map<std::string, Image> images = load_images(ds, g.threads);
  WeightingConfig wcfg;
  wcfg.n_clusters = o.clusters;
  const std::vector<ScoredDetection> scored =
      score(model, ds.detections, images, wcfg, g.threads);
  const SweepResult result = sweep(scored, ds, th1, th2, o.iou, g.threads);

  write_file(out_path(g, o.out_json, "sweep.json"), sweep_json(result));
  write_file(out_path(g, o.out_csv, "sweep.csv"), sweep_csv(result));
  for (const char* label : {"C1", "C2"}) {
    const SweepPoint& pt =
        result.points[label[1] == '1' ? result.c1 : result.c2];
    std::printf("%s: th1=%.2f th2=%.2f precision=%.3f recall=%.3f f1=%.3f\n",
                label, pt.cfg.th1, pt.cfg.th2, pt.report.precision,
                pt.report.recall, pt.report.f1);
  }
  return 0;
}

}  // namespace

int run_cli(std::vector<std::string> args) {
  CLI::App app{"False-positive suppression pipeline for fruit detection"};
  app.require_subcommand(1);

  GlobalOpts g;
  app.add_option("--seed", g.seed, "Master seed for every random draw");
  app.add_option("--threads", g.threads, "Worker thread count")
      ->check(CLI::Range(1, 256));
  app.add_option("--output-dir", g.output_dir,
                 "Directory for default artifact paths");
  app.add_option("--log-level", g.log_level,
                 "debug|info|warn|error|off (SUPPRESS_DETECT_LOG overrides)");

  int exit_code = 0;

  GenOpts gen;
  CLI::App* cgen = app.add_subcommand(
      "gen-synthetic", "Generate a deterministic synthetic orchard dataset");
  cgen->fallthrough();
  cgen->add_option("--out", gen.out, "Output dataset directory")->required();
  cgen->add_option("--scenes", gen.scenes, "Number of scenes");
  cgen->add_option("--split", gen.split, "Manifest split: train|val|test");
  cgen->add_option("--width", gen.scene.image_w, "Image width");
  cgen->add_option("--height", gen.scene.image_h, "Image height");
  cgen->add_option("--apples-min", gen.scene.n_apples_min, "Min apples/scene");
  cgen->add_option("--apples-max", gen.scene.n_apples_max, "Max apples/scene");
  cgen->add_option("--radius-min", gen.scene.radius_min, "Min apple radius");
  cgen->add_option("--radius-max", gen.scene.radius_max, "Max apple radius");
  cgen->add_option("--occlusion-min", gen.scene.occlusion_min,
                   "Min occluded fraction per apple");
  cgen->add_option("--occlusion-max", gen.scene.occlusion_max,
                   "Max occluded fraction per apple");
  cgen->add_option("--lighting", gen.lighting,
                   "overcast|direct|back|mixed (mixed draws per scene)");
  cgen->add_option("--fp-rate", gen.scene.fp_rate,
                   "Expected spurious proposals per scene");
  cgen->add_option("--noise", gen.scene.localization_noise,
                   "Proposal jitter stddev, pixels");
  cgen->callback([&] { exit_code = run_gen(g, gen); });

  TrainOpts tr;
  CLI::App* ctrain =
      app.add_subcommand("train", "Train the suppression classifier");
  ctrain->fallthrough();
  ctrain->add_option("--manifest", tr.manifest, "Dataset manifest")
      ->required();
  ctrain->add_option("--model-out", tr.model_out,
                     "Model path (default <output-dir>/model.json)");
  ctrain->add_option("--loss-out", tr.loss_out,
                     "Loss CSV path (default <output-dir>/loss.csv)");
  ctrain->add_option("--epochs", tr.train.epochs, "Training epochs")
      ->check(CLI::Range(1, 100000));
  ctrain->add_option("--batch-size", tr.train.batch_size, "Batch size")
      ->check(CLI::Range(1, 100000));
  ctrain->add_option("--lr", tr.train.learning_rate, "Learning rate");
  ctrain->add_option("--momentum", tr.train.momentum, "Momentum");
  ctrain->add_option("--weight-decay", tr.train.weight_decay,
                     "L2 decay on weights");
  ctrain->add_option("--label-iou", tr.label_iou,
                     "Min IoU against truth for a positive label");
  ctrain->add_option("--clusters", tr.clusters, "K-means cluster count")
      ->check(CLI::Range(1, 16));
  ctrain->callback([&] { exit_code = run_train(g, tr); });

  FilterOpts fi;
  CLI::App* cfilter = app.add_subcommand(
      "filter", "Re-score detections and drop suppressed ones");
  cfilter->fallthrough();
  cfilter->add_option("--model", fi.model, "Trained model file")->required();
  cfilter->add_option("--manifest", fi.manifest, "Dataset manifest")
      ->required();
  cfilter->add_option("--out", fi.out,
                      "Output detections (default <output-dir>/filtered.json)");
  cfilter->add_option("--th1", fi.th1, "Upstream score threshold")
      ->check(CLI::Range(0.0, 1.0));
  cfilter->add_option("--th2", fi.th2, "Suppressor score threshold")
      ->check(CLI::Range(0.0, 1.0));
  cfilter->add_option("--clusters", fi.clusters, "K-means cluster count")
      ->check(CLI::Range(1, 16));
  cfilter->callback([&] { exit_code = run_filter(g, fi); });

  EvalOpts ev;
  CLI::App* ceval = app.add_subcommand(
      "evaluate", "Match detections to ground truth and report P/R/F1");
  ceval->fallthrough();
  ceval->add_option("--manifest", ev.manifest, "Dataset manifest")->required();
  ceval->add_option("--detections", ev.detections, "Detections JSON")
      ->required();
  ceval->add_option("--iou", ev.iou, "Match IoU threshold");
  ceval->add_option("--group-by", ev.group_by,
                    "Stratify by this tag key (e.g. variety, lighting)");
  ceval->add_option("--report-out", ev.report_out,
                    "Report path (default <output-dir>/report.json)");
  ceval->callback([&] { exit_code = run_evaluate(g, ev); });

  TuneOpts tu;
  CLI::App* ctune = app.add_subcommand(
      "tune", "Sweep th1/th2, compute the Pareto front and pick C1/C2");
  ctune->fallthrough();
  ctune->add_option("--manifest", tu.manifest, "Dataset manifest")->required();
  ctune->add_option("--model", tu.model, "Trained model file")->required();
  ctune->add_option("--th1-grid", tu.th1_grid,
                    "Comma list of th1 values (default 0.50..0.95)");
  ctune->add_option("--th2-grid", tu.th2_grid,
                    "Comma list of th2 values (default 0.50..0.95)");
  ctune->add_option("--iou", tu.iou, "Match IoU threshold");
  ctune->add_option("--out-json", tu.out_json,
                    "Sweep JSON path (default <output-dir>/sweep.json)");
  ctune->add_option("--out-csv", tu.out_csv,
                    "Sweep CSV path (default <output-dir>/sweep.csv)");
  ctune->add_option("--clusters", tu.clusters, "K-means cluster count")
      ->check(CLI::Range(1, 16));
  ctune->callback([&] { exit_code = run_tune(g, tu); });

  app.parse_complete_callback([&] { apply_log_level(g); });

  std::reverse(args.begin(), args.end());
  try {
    app.parse(args);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return exit_code;
}

int run_cli(int argc, const char* const* argv) {
  return run_cli(std::vector<std::string>(argv + 1, argv + argc));
}

}  // namespace suppress
