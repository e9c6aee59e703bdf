// branchseg: generate / train / eval / rank / report for occluded-branch
// segmentation. Exit codes: 0 success, 1 usage, 2 data error, 3 divergence.
#include <CLI11.hpp>
#include <iostream>
#include <memory>
#include <nlohmann/json.hpp>
#include <string>
#include <vector>

#include "branchseg/cli/commands.hpp"

namespace {

/// Flat-JSON config files for CLI11: an object whose keys are long flag
/// names, e.g. {"epochs": 60, "weights": ["a.bin", "b.bin"]}. This is the
/// same shape every run writes to its config.json, so a run is reproducible
/// via `--config <run>/config.json`.
class ConfigJson : public CLI::Config {
 public:
  std::string to_config(const CLI::App* app, bool default_also, bool, std::string) const override {
    nlohmann::json j = nlohmann::json::object();
    for (const CLI::Option* opt : app->get_options({})) {
      if (opt->get_lnames().empty() || !opt->get_configurable()) continue;
      const std::string name = opt->get_lnames()[0];
      if (!opt->results().empty()) {
        if (opt->results().size() == 1) j[name] = opt->results()[0];
        else j[name] = opt->results();
      } else if (default_also) {
        j[name] = opt->get_default_str();
      }
    }
    return j.dump(2) + "\n";
  }

  std::vector<CLI::ConfigItem> from_config(std::istream& input) const override {
    nlohmann::json j;
    try {
      input >> j;
    } catch (const nlohmann::json::exception& e) {
      throw CLI::FileError(std::string("config file is not valid JSON: ") + e.what());
    }
    if (!j.is_object()) throw CLI::FileError("config file must hold one JSON object");
    std::vector<CLI::ConfigItem> items;
    for (auto it = j.begin(); it != j.end(); ++it) {
      items.emplace_back();
      CLI::ConfigItem& item = items.back();
      item.name = it.key();
      const nlohmann::json& v = it.value();
      auto scalar = [](const nlohmann::json& e) -> std::string {
        if (e.is_string()) return e.get<std::string>();
        if (e.is_boolean()) return e.get<bool>() ? "true" : "false";
        if (e.is_number_unsigned()) return std::to_string(e.get<uint64_t>());
        if (e.is_number_integer()) return std::to_string(e.get<int64_t>());
        if (e.is_number_float()) {
          char buf[32];
          std::snprintf(buf, sizeof(buf), "%.17g", e.get<double>());
          return buf;
        }
        throw CLI::FileError("config values must be scalars or arrays of scalars");
      };
      if (v.is_array())
        for (const auto& e : v) item.inputs.push_back(scalar(e));
      else
        item.inputs.push_back(scalar(v));
    }
    return items;
  }
};

void add_config(CLI::App* sub) {
  sub->config_formatter(std::make_shared<ConfigJson>());
  sub->set_config("--config", "", "JSON file of flag values (flags given on the line win)");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"desk-scale occluded-branch segmentation toolkit"};
  app.require_subcommand(1);

  branchseg::cli::GenerateOptions gen_opt;
  CLI::App* gen = app.add_subcommand("generate", "render a synthetic RGBD orchard dataset");
  gen->add_option("--out", gen_opt.out, "output directory (default: timestamped run dir)");
  gen->add_option("--n-train", gen_opt.n_train, "train split size")->check(CLI::PositiveNumber);
  gen->add_option("--n-val", gen_opt.n_val, "val split size")->check(CLI::PositiveNumber);
  gen->add_option("--preset", gen_opt.preset, "image scale: tiny (64) or paper (256)")
      ->check(CLI::IsMember({"tiny", "paper"}));
  gen->add_option("--seed", gen_opt.seed, "base seed; per-sample seeds derive from it");
  gen->add_option("--occlusion-target", gen_opt.occlusion_target,
                  "mean occlusion difficulty to calibrate leaves against")
      ->check(CLI::Range(0.0, 1.0));
  add_config(gen);

  branchseg::cli::TrainOptions train_opt;
  CLI::App* train = app.add_subcommand("train", "train one model on a dataset's train split");
  train->add_option("--data", train_opt.data, "dataset directory or manifest.json")->required();
  train->add_option("--model", train_opt.model, "p2p-gen, p2p-gan, unet, or deeplab")
      ->check(CLI::IsMember({"p2p-gen", "p2p-gan", "unet", "deeplab"}));
  train->add_option("--loss", train_opt.loss,
                    "wdl, l1, or hybrid (default: hybrid for p2p-gan, wdl otherwise)")
      ->check(CLI::IsMember({"wdl", "l1", "hybrid"}));
  train->add_option("--epochs", train_opt.epochs, "training epochs")->check(CLI::PositiveNumber);
  train->add_option("--batch", train_opt.batch, "batch size")->check(CLI::PositiveNumber);
  train->add_option("--seed", train_opt.seed, "init/shuffle/dropout seed");
  train->add_option("--preset", train_opt.preset, "model scale: tiny or paper")
      ->check(CLI::IsMember({"tiny", "paper"}));
  train->add_option("--out", train_opt.out, "run directory (default: timestamped)");
  add_config(train);

  branchseg::cli::EvalOptions eval_opt;
  CLI::App* eval = app.add_subcommand("eval", "evaluate trained models on the val split");
  eval->add_option("--data", eval_opt.data, "dataset directory or manifest.json")->required();
  eval->add_option("--weights", eval_opt.weights, "one or more weight files")->required();
  eval->add_option("--threshold", eval_opt.threshold, "probability cut for the positive class")
      ->check(CLI::Range(0.0, 1.0));
  eval->add_option("--tolerance-px", eval_opt.tolerance_px, "boundary match distance in pixels")
      ->check(CLI::NonNegativeNumber);
  eval->add_option("--out", eval_opt.out, "run directory (default: timestamped)");
  add_config(eval);

  branchseg::cli::RankOptions rank_opt;
  CLI::App* rank = app.add_subcommand(
      "rank", "rank val samples by difficulty and evaluate models on the worst k");
  rank->add_option("--data", rank_opt.data, "dataset directory or manifest.json")->required();
  rank->add_option("--index", rank_opt.index, "difficulty index: occlusion or depth")
      ->check(CLI::IsMember({"occlusion", "depth"}));
  rank->add_option("--k", rank_opt.k, "subset size")->check(CLI::NonNegativeNumber);
  rank->add_option("--weights", rank_opt.weights, "one or more weight files")->required();
  rank->add_option("--out", rank_opt.out, "run directory (default: timestamped)");
  add_config(rank);

  branchseg::cli::ReportOptions report_opt;
  CLI::App* report = app.add_subcommand("report", "merge eval/rank runs into a markdown report");
  report->add_option("--runs", report_opt.runs, "eval/rank JSON files or run directories")
      ->required();
  report->add_option("--out", report_opt.out, "report directory (default: timestamped)");
  add_config(report);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (gen->parsed()) branchseg::cli::cmd_generate(gen_opt, std::cout);
    else if (train->parsed()) branchseg::cli::cmd_train(train_opt, std::cout);
    else if (eval->parsed()) branchseg::cli::cmd_eval(eval_opt, std::cout);
    else if (rank->parsed()) branchseg::cli::cmd_rank(rank_opt, std::cout);
    else if (report->parsed()) branchseg::cli::cmd_report(report_opt, std::cout);
    return 0;
  } catch (const branchseg::DivergenceError& e) {
    std::cerr << "error (divergence): " << e.what() << "\n";
    return 3;
  } catch (const branchseg::DataError& e) {
    std::cerr << "error (data): " << e.what() << "\n";
    return 2;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error (usage): " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}
