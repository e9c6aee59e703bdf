#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <nlohmann/json.hpp>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "branchseg/core/errors.hpp"
#include "branchseg/data/png_io.hpp"
#include "branchseg/metrics/difficulty.hpp"
#include "branchseg/metrics/evaluate.hpp"
#include "branchseg/report/charts.hpp"

namespace branchseg {

/// Version stamp shared by every JSON artifact the command set emits; the
/// report builder refuses payloads from a different schema generation.
constexpr int kArtifactSchemaVersion = 1;

struct EvalRun {
  double threshold = 0.5;
  double tolerance_px = 2.0;
  std::vector<std::pair<std::string, MetricValues>> models;  // name -> aggregate
};

struct RankRun {
  DifficultyKind kind = DifficultyKind::occlusion;
  int k = 0;
  std::vector<std::string> sample_ids;
  std::vector<WorstKEntry> rows;
};

using RunArtifact = std::variant<EvalRun, RankRun>;

inline RunArtifact parse_run_artifact(const nlohmann::json& j) {
  if (!j.contains("schema_version") || !j["schema_version"].is_number_integer() ||
      j["schema_version"].get<int>() != kArtifactSchemaVersion)
    throw DataError("run artifact: schema version mismatch (expected " +
                    std::to_string(kArtifactSchemaVersion) + ")");
  try {
    const std::string type = j.at("type").get<std::string>();
    if (type == "eval") {
      EvalRun run;
      run.threshold = j.at("threshold").get<double>();
      run.tolerance_px = j.at("tolerance_px").get<double>();
      for (const auto& m : j.at("models"))
        run.models.emplace_back(m.at("name").get<std::string>(),
                                metrics_report_from_json(m.at("metrics")).aggregate);
      return run;
    }
    if (type == "rank") {
      RankRun run;
      run.kind = difficulty_kind_from_string(j.at("index").get<std::string>());
      run.k = j.at("k").get<int>();
      run.sample_ids = j.at("sample_ids").get<std::vector<std::string>>();
      for (const auto& m : j.at("models")) {
        WorstKEntry row;
        row.model_name = m.at("model").get<std::string>();
        row.mean_iou = m.at("mean_iou").get<double>();
        if (m.contains("branch_recall")) row.branch_recall = m["branch_recall"].get<double>();
        if (m.contains("occluded_recall"))
          row.occluded_recall = m["occluded_recall"].get<double>();
        run.rows.push_back(std::move(row));
      }
      return run;
    }
    throw DataError("run artifact: unknown type '" + type + "'");
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("run artifact: ") + e.what());
  }
}

/// Accepts either an artifact JSON file or a run directory containing
/// eval.json or rank.json.
inline RunArtifact load_run_artifact(const std::string& path) {
  namespace fs = std::filesystem;
  fs::path p(path);
  if (fs::is_directory(p)) {
    if (fs::exists(p / "eval.json")) p /= "eval.json";
    else if (fs::exists(p / "rank.json")) p /= "rank.json";
    else throw DataError("run artifact: no eval.json or rank.json under " + path);
  }
  std::ifstream is(p);
  if (!is) throw DataError("run artifact: cannot open " + p.string());
  nlohmann::json j;
  try {
    is >> j;
  } catch (const nlohmann::json::exception& e) {
    throw DataError("run artifact: " + p.string() + " is not valid JSON: " + e.what());
  }
  return parse_run_artifact(j);
}

struct RenderedReport {
  std::string markdown;
  std::vector<std::pair<std::string, Tensor<uint8_t>>> charts;  // filename -> pixels
};

namespace detail {

inline std::string fmt_metric(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.4f", v);
  return buf;
}

inline std::string fmt_metric(const std::optional<double>& v) {
  return v ? fmt_metric(*v) : std::string("-");
}

inline std::string fmt_px(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%g", v);
  return buf;
}

/// mean IoU / branch recall / occluded recall bars, one group per model.
/// A series is included only when every model provides the value.
inline BarChartSpec headline_chart(
    const std::string& title,
    const std::vector<std::pair<std::string, MetricValues>>& models) {
  BarChartSpec spec;
  spec.title = title;
  ChartSeries miou{"mean iou", {}}, rb{"branch recall", {}}, ro{"occluded recall", {}};
  bool all_rb = true, all_ro = true;
  for (const auto& [name, v] : models) {
    spec.groups.push_back(name);
    miou.values.push_back(v.mean_iou);
    all_rb = all_rb && v.recall_branch.has_value();
    all_ro = all_ro && v.recall_occluded.has_value();
    rb.values.push_back(v.recall_branch.value_or(0.0));
    ro.values.push_back(v.recall_occluded.value_or(0.0));
  }
  spec.series.push_back(std::move(miou));
  if (all_rb) spec.series.push_back(std::move(rb));
  if (all_ro) spec.series.push_back(std::move(ro));
  return spec;
}

}  // namespace detail

/// Merges run artifacts into one markdown document plus the bar charts it
/// references. Eval runs share a single table whose columns are sorted by
/// model name; each rank run keeps its own section with rows sorted by model
/// name. The result is a pure function of the inputs.
inline RenderedReport build_report(const std::vector<RunArtifact>& runs) {
  if (runs.empty()) throw std::invalid_argument("report: no runs given");
  RenderedReport out;
  std::string& md = out.markdown;
  md += "# Branch segmentation report\n";

  // merged validation table
  std::map<std::string, MetricValues> merged;
  std::vector<std::pair<double, double>> configs;
  for (const auto& run : runs) {
    const auto* ev = std::get_if<EvalRun>(&run);
    if (!ev) continue;
    for (const auto& [name, values] : ev->models)
      if (!merged.emplace(name, values).second)
        throw std::invalid_argument("report: duplicate model name '" + name +
                                    "' across eval runs");
    if (std::find(configs.begin(), configs.end(),
                  std::make_pair(ev->threshold, ev->tolerance_px)) == configs.end())
      configs.emplace_back(ev->threshold, ev->tolerance_px);
  }
  if (!merged.empty()) {
    md += "\n## Validation metrics\n\n";
    for (const auto& [th, tol] : configs)
      md += "Threshold " + detail::fmt_px(th) + ", boundary tolerance " + detail::fmt_px(tol) +
            " px.\n";
    md += "\n| Metric |";
    for (const auto& [name, v] : merged) md += " " + name + " |";
    md += "\n| --- |";
    for (size_t i = 0; i < merged.size(); ++i) md += " ---: |";
    md += "\n";
    const auto row = [&](const std::string& label, auto&& pick) {
      md += "| " + label + " |";
      for (const auto& [name, v] : merged) md += " " + detail::fmt_metric(pick(v)) + " |";
      md += "\n";
    };
    row("Binary accuracy", [](const MetricValues& v) { return v.binary_accuracy; });
    row("Mean IoU", [](const MetricValues& v) { return v.mean_iou; });
    row("Boundary F1", [](const MetricValues& v) { return v.boundary_f1; });
    row("Branch recall", [](const MetricValues& v) { return v.recall_branch; });
    row("Non-branch recall", [](const MetricValues& v) { return v.recall_nonbranch; });
    row("Occluded branch recall", [](const MetricValues& v) { return v.recall_occluded; });

    std::vector<std::pair<std::string, MetricValues>> models(merged.begin(), merged.end());
    out.charts.emplace_back("eval_metrics.png",
                            render_bar_chart(detail::headline_chart("validation metrics", models)));
    md += "\n![validation metrics](eval_metrics.png)\n";
  }

  // one section per rank run
  std::map<std::string, int> chart_ordinal;
  for (const auto& run : runs) {
    const auto* rk = std::get_if<RankRun>(&run);
    if (!rk) continue;
    const std::string index_name = to_string(rk->kind);
    md += "\n## Worst-" + std::to_string(rk->k) + " by " + index_name + " difficulty\n\n";
    md += "Samples:";
    for (size_t i = 0; i < rk->sample_ids.size(); ++i)
      md += (i ? ", " : " ") + rk->sample_ids[i];
    md += "\n\n| Model | Mean IoU | Branch recall | Occluded branch recall |\n";
    md += "| --- | ---: | ---: | ---: |\n";
    std::vector<WorstKEntry> rows = rk->rows;
    std::sort(rows.begin(), rows.end(),
              [](const WorstKEntry& a, const WorstKEntry& b) { return a.model_name < b.model_name; });
    std::vector<std::pair<std::string, MetricValues>> models;
    for (const auto& r : rows) {
      md += "| " + r.model_name + " | " + detail::fmt_metric(r.mean_iou) + " | " +
            detail::fmt_metric(r.branch_recall) + " | " + detail::fmt_metric(r.occluded_recall) +
            " |\n";
      MetricValues v;
      v.mean_iou = r.mean_iou;
      v.recall_branch = r.branch_recall;
      v.recall_occluded = r.occluded_recall;
      models.emplace_back(r.model_name, v);
    }
    const int ordinal = ++chart_ordinal[index_name];
    const std::string file = "rank_" + index_name +
                             (ordinal > 1 ? "_" + std::to_string(ordinal) : "") + ".png";
    out.charts.emplace_back(
        file, render_bar_chart(detail::headline_chart(
                  "worst-" + std::to_string(rk->k) + " by " + index_name, models)));
    md += "\n![worst-k " + index_name + "](" + file + ")\n";
  }
  return out;
}

/// Writes report.md and its charts under `dir`. Regenerating from identical
/// artifacts reproduces every byte.
inline void write_report(const RenderedReport& report, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::ofstream os(dir / "report.md", std::ios::binary);
  if (!os) throw std::runtime_error("cannot open " + (dir / "report.md").string());
  os << report.markdown;
  os.close();
  for (const auto& [name, pixels] : report.charts)
    write_png_rgb8((dir / name).string(), pixels);
}

}  // namespace branchseg
