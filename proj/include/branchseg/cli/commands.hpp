#pragma once

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <nlohmann/json.hpp>
#include <ostream>
#include <string>
#include <vector>

#include "branchseg/data/dataset.hpp"
#include "branchseg/data/pipeline.hpp"
#include "branchseg/metrics/difficulty.hpp"
#include "branchseg/metrics/evaluate.hpp"
#include "branchseg/models/serialize.hpp"
#include "branchseg/report/report.hpp"
#include "branchseg/synth/orchard.hpp"
#include "branchseg/train/trainer.hpp"

/// The five subcommands behind the `branchseg` binary, callable in-process.
/// Each command resolves its options, runs, writes its artifacts plus a
/// `config.json` holding the resolved flags (reloadable via `--config`), and
/// returns the run directory. Errors surface as exceptions; the binary maps
/// them to exit codes (1 usage, 2 data, 3 divergence).
namespace branchseg::cli {

struct GenerateOptions {
  std::string out;
  int n_train = 471;
  int n_val = 50;
  std::string preset = "tiny";
  uint64_t seed = 0;
  double occlusion_target = 0.4;
};

struct TrainOptions {
  std::string data;
  std::string model = "unet";
  std::string loss;  // empty = model default (hybrid for p2p-gan, wdl otherwise)
  int epochs = 140;
  int batch = 8;
  uint64_t seed = 0;
  std::string preset = "tiny";
  std::string out;
};

struct EvalOptions {
  std::string data;
  std::vector<std::string> weights;
  double threshold = 0.5;
  double tolerance_px = 2.0;
  std::string out;
};

struct RankOptions {
  std::string data;
  std::string index = "occlusion";
  int k = 10;
  std::vector<std::string> weights;
  std::string out;
};

struct ReportOptions {
  std::vector<std::string> runs;
  std::string out;
};

namespace detail {

namespace fs = std::filesystem;

/// `--out` wins; otherwise a timestamped directory under $BRANCHSEG_OUT_ROOT
/// (default ./runs).
inline fs::path resolve_run_dir(const std::string& out_flag, const std::string& subcommand) {
  if (!out_flag.empty()) {
    fs::path p(out_flag);
    fs::create_directories(p);
    return p;
  }
  const char* env = std::getenv("BRANCHSEG_OUT_ROOT");
  const fs::path root = env && *env ? fs::path(env) : fs::path("runs");
  std::time_t now = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&now, &tm);
  char stamp[32];
  std::strftime(stamp, sizeof(stamp), "%Y%m%d-%H%M%S", &tm);
  fs::path dir = root / (subcommand + "-" + stamp);
  for (int i = 2; fs::exists(dir); ++i)
    dir = root / (subcommand + "-" + stamp + "-" + std::to_string(i));
  fs::create_directories(dir);
  return dir;
}

inline void write_config(const fs::path& dir, const nlohmann::json& config) {
  std::ofstream os(dir / "config.json", std::ios::binary);
  if (!os) throw std::runtime_error("cannot open " + (dir / "config.json").string());
  os << config.dump(2) << "\n";
}

inline int preset_image_size(const std::string& preset) {
  if (preset == "tiny") return 64;
  if (preset == "paper") return 256;
  throw std::invalid_argument("unknown preset '" + preset + "' (expected tiny or paper)");
}

inline ModelSpec preset_spec(const std::string& preset, ModelKind kind) {
  if (preset == "tiny") return tiny_spec(kind);
  if (preset == "paper") return full_spec(kind);
  throw std::invalid_argument("unknown preset '" + preset + "' (expected tiny or paper)");
}

inline fs::path manifest_file(const std::string& data) {
  fs::path p(data);
  if (fs::is_directory(p)) p /= "manifest.json";
  return p;
}

inline std::vector<DataSample> load_split(const Manifest& manifest, const fs::path& manifest_dir,
                                          Split split) {
  std::vector<DataSample> out;
  for (const auto& entry : manifest.samples)
    if (entry.split == split) out.push_back(load_sample(manifest_dir, entry));
  return out;
}

inline DataSample preprocess_to(const DataSample& sample, int out_size) {
  const int crop = std::min(sample.height(), sample.width());
  return preprocess(sample, crop, out_size);
}

inline std::vector<EvalSample> to_eval_samples(const std::vector<DataSample>& raw, int out_size) {
  std::vector<EvalSample> out;
  out.reserve(raw.size());
  for (const auto& s : raw) {
    DataSample pp = preprocess_to(s, out_size);
    out.push_back({pp.id, assemble_input(pp), pp.branch, pp.occluded});
  }
  return out;
}

inline std::vector<DifficultyScore> difficulty_scores(const std::vector<DataSample>& raw) {
  std::vector<DifficultyScore> scores;
  scores.reserve(raw.size());
  for (const auto& s : raw) {
    DifficultyScore d;
    d.sample_id = s.id;
    d.occlusion_index = s.occluder.numel() ? occlusion_difficulty(s.occluder, s.branch) : 0.0;
    d.depth_index = depth_difficulty(s.depth_m, s.branch);
    scores.push_back(std::move(d));
  }
  std::sort(scores.begin(), scores.end(),
            [](const DifficultyScore& a, const DifficultyScore& b) {
              return a.sample_id < b.sample_id;
            });
  return scores;
}

/// Inverse-frequency dice weights from the dataset-wide class balance.
inline ClassWeights dataset_class_weights(const ManifestStats& stats) {
  const double f = std::clamp(stats.branch_fraction, 1e-3, 1.0 - 1e-3);
  return {1.0 - f, f};
}

inline std::string fixed4(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.4f", v);
  return buf;
}

inline std::string fixed4(const std::optional<double>& v) {
  return v ? fixed4(*v) : std::string("-");
}

/// File stem as the model's display name, de-duplicated with -2, -3, ...
inline std::vector<std::string> model_names(const std::vector<std::string>& paths) {
  std::vector<std::string> names;
  for (const auto& p : paths) {
    std::string stem = fs::path(p).stem().string();
    std::string name = stem;
    for (int i = 2; std::find(names.begin(), names.end(), name) != names.end(); ++i)
      name = stem + "-" + std::to_string(i);
    names.push_back(name);
  }
  return names;
}

struct EvalOutcome {
  std::string name;
  MetricsReport report;
  double mean_inference_ms = 0.0;
};

/// Loads one weight file and evaluates it on the (cached) preprocessed split.
inline EvalOutcome evaluate_weights(const std::string& path, const std::string& name,
                                    const std::vector<DataSample>& raw,
                                    std::map<int, std::vector<EvalSample>>& cache,
                                    double threshold, double tolerance_px) {
  Model<float> model = load_model<float>(path);
  const int size = model.spec.input_size;
  auto it = cache.find(size);
  if (it == cache.end()) it = cache.emplace(size, to_eval_samples(raw, size)).first;

  auto predict = model_predictor(model);
  double total_s = 0.0;
  int64_t calls = 0;
  auto timed = [&](const Tensor<float>& input) {
    const auto t0 = std::chrono::steady_clock::now();
    Tensor<float> out = predict(input);
    total_s += std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    ++calls;
    return out;
  };
  EvalOutcome outcome;
  outcome.name = name;
  outcome.report = evaluate(timed, it->second, threshold, tolerance_px);
  outcome.mean_inference_ms = calls ? total_s * 1e3 / double(calls) : 0.0;
  return outcome;
}

}  // namespace detail

inline std::filesystem::path cmd_generate(const GenerateOptions& opt, std::ostream& log) {
  const auto dir = detail::resolve_run_dir(opt.out, "generate");
  SceneParams params;
  params.image_size = detail::preset_image_size(opt.preset);
  params.occlusion_target = opt.occlusion_target;
  params.seed = opt.seed;

  const Manifest manifest = generate_dataset(params, opt.n_train, opt.n_val, dir);
  detail::write_config(dir, {{"n-train", opt.n_train},
                             {"n-val", opt.n_val},
                             {"preset", opt.preset},
                             {"seed", opt.seed},
                             {"occlusion-target", opt.occlusion_target}});

  double odi = 0.0, ddi = 0.0;
  for (const auto& entry : manifest.samples) {
    const DataSample s = load_sample(dir, entry);
    odi += s.occluder.numel() ? occlusion_difficulty(s.occluder, s.branch) : 0.0;
    ddi += depth_difficulty(s.depth_m, s.branch);
  }
  const double n = double(manifest.samples.size());
  log << "generated " << opt.n_train << " train + " << opt.n_val << " val samples under "
      << dir.string() << "\n";
  log << "branch fraction " << detail::fixed4(manifest.stats.branch_fraction)
      << "  occluded fraction " << detail::fixed4(manifest.stats.occluded_fraction) << "\n";
  log << "mean ODI " << detail::fixed4(odi / n) << "  mean DDI " << detail::fixed4(ddi / n)
      << "\n";
  return dir;
}

inline std::filesystem::path cmd_train(const TrainOptions& opt, std::ostream& log) {
  // model/loss pairing first, before any data is touched
  ModelKind kind;
  if (opt.model == "p2p-gen" || opt.model == "p2p-gan") kind = ModelKind::pix2pix_generator;
  else if (opt.model == "unet") kind = ModelKind::unet;
  else if (opt.model == "deeplab") kind = ModelKind::deeplab;
  else throw std::invalid_argument("unknown model '" + opt.model + "'");
  const bool adversarial = opt.model == "p2p-gan";
  const std::string loss = opt.loss.empty() ? (adversarial ? "hybrid" : "wdl") : opt.loss;
  if (loss != "wdl" && loss != "l1" && loss != "hybrid")
    throw std::invalid_argument("unknown loss '" + loss + "'");
  if (adversarial && loss != "hybrid")
    throw std::invalid_argument("--model p2p-gan requires --loss hybrid");
  if (!adversarial && loss == "hybrid")
    throw std::invalid_argument("--loss hybrid requires --model p2p-gan");

  const auto manifest_path = detail::manifest_file(opt.data);
  const Manifest manifest = load_manifest(manifest_path);
  const auto raw = detail::load_split(manifest, manifest_path.parent_path(), Split::train);
  if (raw.empty()) throw DataError("train: the dataset has no train-split samples");

  const ModelSpec spec = detail::preset_spec(opt.preset, kind);
  std::vector<Tensor<float>> inputs, targets;
  inputs.reserve(raw.size());
  for (const auto& s : raw) {
    const DataSample pp = detail::preprocess_to(s, spec.input_size);
    inputs.push_back(assemble_input(pp));
    targets.push_back(assemble_target(pp));
  }

  TrainConfig config;
  config.epochs = opt.epochs;
  config.batch_size = opt.batch;
  config.seed = opt.seed;
  config.loss.kind = loss == "hybrid" ? LossKind::hybrid_cgan
                     : loss == "wdl"  ? LossKind::wdl
                                      : LossKind::l1;
  config.loss.class_weights = detail::dataset_class_weights(manifest.stats);

  const auto dir = detail::resolve_run_dir(opt.out, "train");
  auto model = build_model<float>(spec, opt.seed);
  log << "training " << opt.model << " (" << model.parameter_count() << " parameters, loss "
      << loss << ") on " << raw.size() << " samples for " << opt.epochs << " epochs\n";

  TrainResult result;
  if (adversarial) {
    auto disc = build_model<float>(detail::preset_spec(opt.preset,
                                                       ModelKind::patchgan_discriminator),
                                   Rng::derive(opt.seed, 1).next_u64());
    result = train_hybrid(model, disc, inputs, targets, config);
    save_weights(disc, (dir / (opt.model + "-d.weights")).string());
  } else {
    result = train_supervised(model, inputs, targets, config);
  }
  save_weights(model, (dir / (opt.model + ".weights")).string());
  result.curve.write_csv((dir / "loss.csv").string());
  detail::write_config(dir, {{"data", opt.data},
                             {"model", opt.model},
                             {"loss", loss},
                             {"epochs", opt.epochs},
                             {"batch", opt.batch},
                             {"seed", opt.seed},
                             {"preset", opt.preset}});

  for (const auto& row : result.curve.rows)
    if (row.epoch == opt.epochs)
      log << "final " << row.name << " " << detail::fixed4(row.value) << "\n";
  log << "wrote " << opt.model << ".weights and loss.csv under " << dir.string() << "\n";
  return dir;
}

inline std::filesystem::path cmd_eval(const EvalOptions& opt, std::ostream& log) {
  if (opt.weights.empty()) throw std::invalid_argument("eval: at least one --weights is required");
  const auto manifest_path = detail::manifest_file(opt.data);
  const Manifest manifest = load_manifest(manifest_path);
  const auto raw = detail::load_split(manifest, manifest_path.parent_path(), Split::val);
  if (raw.empty()) throw DataError("eval: the dataset has no val-split samples");

  const auto names = detail::model_names(opt.weights);
  std::map<int, std::vector<EvalSample>> cache;
  std::vector<detail::EvalOutcome> outcomes;
  for (size_t i = 0; i < opt.weights.size(); ++i)
    outcomes.push_back(detail::evaluate_weights(opt.weights[i], names[i], raw, cache,
                                                opt.threshold, opt.tolerance_px));

  const auto dir = detail::resolve_run_dir(opt.out, "eval");
  nlohmann::json models = nlohmann::json::array();
  for (const auto& o : outcomes)
    models.push_back({{"name", o.name}, {"metrics", to_json(o.report)}});
  nlohmann::json payload{{"schema_version", kArtifactSchemaVersion},
                         {"type", "eval"},
                         {"threshold", opt.threshold},
                         {"tolerance_px", opt.tolerance_px},
                         {"models", std::move(models)}};
  {
    std::ofstream os(dir / "eval.json", std::ios::binary);
    if (!os) throw std::runtime_error("cannot open " + (dir / "eval.json").string());
    os << payload.dump(2) << "\n";
  }
  {
    // wall-clock sidecar; deliberately kept out of eval.json so reruns of the
    // same config produce identical primary artifacts
    std::ofstream os(dir / "timing.txt");
    if (!os) throw std::runtime_error("cannot open " + (dir / "timing.txt").string());
    os << "model mean_ms_per_image\n";
    char buf[64];
    for (const auto& o : outcomes) {
      std::snprintf(buf, sizeof(buf), "%.3f", o.mean_inference_ms);
      os << o.name << " " << buf << "\n";
    }
  }
  detail::write_config(dir, {{"data", opt.data},
                             {"weights", opt.weights},
                             {"threshold", opt.threshold},
                             {"tolerance-px", opt.tolerance_px}});

  // side-by-side table, one row per metric
  log << "evaluated " << outcomes.size() << " model(s) on " << raw.size() << " val samples\n";
  char line[512];
  std::snprintf(line, sizeof(line), "%-24s", "metric");
  log << line;
  for (const auto& o : outcomes) {
    std::snprintf(line, sizeof(line), " %14s", o.name.c_str());
    log << line;
  }
  log << "\n";
  const auto row = [&](const std::string& label, auto&& pick) {
    std::snprintf(line, sizeof(line), "%-24s", label.c_str());
    log << line;
    for (const auto& o : outcomes) {
      std::snprintf(line, sizeof(line), " %14s", detail::fixed4(pick(o.report.aggregate)).c_str());
      log << line;
    }
    log << "\n";
  };
  row("binary accuracy", [](const MetricValues& v) { return v.binary_accuracy; });
  row("mean IoU", [](const MetricValues& v) { return v.mean_iou; });
  row("boundary F1", [](const MetricValues& v) { return v.boundary_f1; });
  row("branch recall", [](const MetricValues& v) { return v.recall_branch; });
  row("non-branch recall", [](const MetricValues& v) { return v.recall_nonbranch; });
  row("occluded branch recall", [](const MetricValues& v) { return v.recall_occluded; });
  std::snprintf(line, sizeof(line), "%-24s", "mean inference [ms]");
  log << line;
  for (const auto& o : outcomes) {
    std::snprintf(line, sizeof(line), " %14.3f", o.mean_inference_ms);
    log << line;
  }
  log << "\nwrote eval.json and timing.txt under " << dir.string() << "\n";
  return dir;
}

inline std::filesystem::path cmd_rank(const RankOptions& opt, std::ostream& log) {
  if (opt.weights.empty()) throw std::invalid_argument("rank: at least one --weights is required");
  const DifficultyKind kind = difficulty_kind_from_string(opt.index);
  const auto manifest_path = detail::manifest_file(opt.data);
  const Manifest manifest = load_manifest(manifest_path);
  const auto raw = detail::load_split(manifest, manifest_path.parent_path(), Split::val);
  if (raw.empty()) throw DataError("rank: the dataset has no val-split samples");

  // difficulty is a property of the data, so scores come from the raw planes
  const auto scores = detail::difficulty_scores(raw);

  const auto names = detail::model_names(opt.weights);
  std::vector<std::unique_ptr<Model<float>>> models;
  for (const auto& path : opt.weights)
    models.push_back(std::make_unique<Model<float>>(load_model<float>(path)));
  const int size = models.front()->spec.input_size;
  for (const auto& m : models)
    if (m->spec.input_size != size)
      throw std::invalid_argument("rank: all models must share one input size");

  const auto samples = detail::to_eval_samples(raw, size);
  std::vector<NamedPredictor> predictors;
  for (size_t i = 0; i < models.size(); ++i)
    predictors.emplace_back(names[i], model_predictor(*models[i]));
  const WorstKReport report = worst_k_report(predictors, samples, scores, kind, opt.k);

  const auto dir = detail::resolve_run_dir(opt.out, "rank");
  nlohmann::json payload = to_json(report);
  payload["schema_version"] = kArtifactSchemaVersion;
  payload["type"] = "rank";
  {
    std::ofstream os(dir / "rank.json", std::ios::binary);
    if (!os) throw std::runtime_error("cannot open " + (dir / "rank.json").string());
    os << payload.dump(2) << "\n";
  }
  {
    std::ofstream os(dir / "scores.csv", std::ios::binary);
    if (!os) throw std::runtime_error("cannot open " + (dir / "scores.csv").string());
    write_scores_csv(os, scores);
  }
  detail::write_config(dir, {{"data", opt.data},
                             {"index", opt.index},
                             {"k", opt.k},
                             {"weights", opt.weights}});

  log << "worst-" << opt.k << " by " << opt.index << " difficulty:";
  for (size_t i = 0; i < report.sample_ids.size(); ++i)
    log << (i ? ", " : " ") << report.sample_ids[i];
  log << "\n";
  char line[512];
  for (const auto& r : report.rows) {
    std::snprintf(line, sizeof(line), "%-14s mean IoU %s  branch recall %s  occluded recall %s",
                  r.model_name.c_str(), detail::fixed4(r.mean_iou).c_str(),
                  detail::fixed4(r.branch_recall).c_str(),
                  detail::fixed4(r.occluded_recall).c_str());
    log << line << "\n";
  }
  log << "wrote rank.json and scores.csv under " << dir.string() << "\n";
  return dir;
}

inline std::filesystem::path cmd_report(const ReportOptions& opt, std::ostream& log) {
  if (opt.runs.empty()) throw std::invalid_argument("report: at least one --runs is required");
  std::vector<RunArtifact> artifacts;
  for (const auto& path : opt.runs) artifacts.push_back(load_run_artifact(path));

  const RenderedReport rendered = build_report(artifacts);
  const auto dir = detail::resolve_run_dir(opt.out, "report");
  write_report(rendered, dir);
  detail::write_config(dir, {{"runs", opt.runs}});
  log << "wrote report.md and " << rendered.charts.size() << " chart(s) under " << dir.string()
      << "\n";
  return dir;
}

}  // namespace branchseg::cli
