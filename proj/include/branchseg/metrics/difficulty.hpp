#pragma once

// Per-sample difficulty indices and worst-k subset analysis.
//
// Two indices quantify why a sample is hard:
//   * occlusion index: fraction of labelled branch pixels hidden by an
//     occluder (leaves, foreground clutter),
//   * depth index: fraction of labelled branch pixels with no usable depth
//     reading (sensor dropout or beyond the working range).
// Ranking samples by either index selects the hardest subset, and
// worst_k_report re-runs the evaluation engine on that subset for a set of
// competing models.

#include <algorithm>
#include <cstdio>
#include <functional>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "branchseg/core/tensor.hpp"
#include "branchseg/metrics/evaluate.hpp"
#include "branchseg/metrics/metrics.hpp"

#include <nlohmann/json.hpp>

namespace branchseg {

struct DifficultyScore {
  std::string sample_id;
  double occlusion_index = 0.0;  // in [0, 1]
  double depth_index = 0.0;      // in [0, 1]
};

enum class DifficultyKind { occlusion, depth };

inline const char* to_string(DifficultyKind kind) {
  return kind == DifficultyKind::occlusion ? "occlusion" : "depth";
}

inline DifficultyKind difficulty_kind_from_string(const std::string& name) {
  if (name == "occlusion") return DifficultyKind::occlusion;
  if (name == "depth") return DifficultyKind::depth;
  throw std::invalid_argument("unknown difficulty kind: " + name);
}

namespace detail {

inline void check_label(const Mask& label, const char* op) {
  int64_t count = 0;
  for (int64_t i = 0; i < label.numel(); ++i) count += label[i] ? 1 : 0;
  if (count == 0) {
    throw std::invalid_argument(std::string(op) + ": label mask is empty");
  }
}

}  // namespace detail

// Fraction of label pixels covered by the occluder mask.
inline double occlusion_difficulty(const Mask& occluder, const Mask& label) {
  if (occluder.shape() != label.shape()) {
    throw std::invalid_argument("occlusion_difficulty: shape mismatch");
  }
  detail::check_label(label, "occlusion_difficulty");
  int64_t covered = 0;
  int64_t total = 0;
  for (int64_t i = 0; i < label.numel(); ++i) {
    if (!label[i]) continue;
    ++total;
    if (occluder[i]) ++covered;
  }
  return static_cast<double>(covered) / static_cast<double>(total);
}

// Fraction of label pixels without a usable depth reading.  A reading is
// usable when 0 < d <= max_depth_m; zero encodes sensor dropout.
template <typename T>
double depth_difficulty(const Tensor<T>& depth, const Mask& label,
                        double max_depth_m = 4.0) {
  if (depth.shape() != label.shape()) {
    throw std::invalid_argument("depth_difficulty: shape mismatch");
  }
  if (!(max_depth_m > 0.0)) {
    throw std::invalid_argument("depth_difficulty: max depth must be positive");
  }
  detail::check_label(label, "depth_difficulty");
  int64_t detected = 0;
  int64_t total = 0;
  for (int64_t i = 0; i < label.numel(); ++i) {
    if (!label[i]) continue;
    ++total;
    const double d = static_cast<double>(depth[i]);
    if (d > 0.0 && d <= max_depth_m) ++detected;
  }
  return 1.0 - static_cast<double>(detected) / static_cast<double>(total);
}

// Sample ids ordered by descending index value; ties broken by ascending id
// so reports are reproducible.
inline std::vector<std::string> rank_worst_k(std::vector<DifficultyScore> scores,
                                             DifficultyKind kind, int k) {
  if (k < 0 || static_cast<size_t>(k) > scores.size()) {
    throw std::invalid_argument("rank_worst_k: k out of range");
  }
  std::sort(scores.begin(), scores.end(),
            [kind](const DifficultyScore& a, const DifficultyScore& b) {
              const double va =
                  kind == DifficultyKind::occlusion ? a.occlusion_index : a.depth_index;
              const double vb =
                  kind == DifficultyKind::occlusion ? b.occlusion_index : b.depth_index;
              if (va != vb) return va > vb;
              return a.sample_id < b.sample_id;
            });
  std::vector<std::string> ids;
  ids.reserve(static_cast<size_t>(k));
  for (int i = 0; i < k; ++i) ids.push_back(scores[static_cast<size_t>(i)].sample_id);
  return ids;
}

inline void write_scores_csv(std::ostream& out,
                             const std::vector<DifficultyScore>& scores) {
  out << "sample_id,occlusion_index,depth_index\n";
  char buf[64];
  for (const auto& s : scores) {
    std::snprintf(buf, sizeof(buf), "%.9g,%.9g", s.occlusion_index, s.depth_index);
    out << s.sample_id << ',' << buf << '\n';
  }
}

// One row of the worst-k comparison: a model's scores on the hard subset.
struct WorstKEntry {
  std::string model_name;
  std::optional<double> branch_recall;
  std::optional<double> occluded_recall;
  double mean_iou = 0.0;
};

struct WorstKReport {
  DifficultyKind kind = DifficultyKind::occlusion;
  int k = 0;
  std::vector<std::string> sample_ids;  // the hard subset, ranking order
  std::vector<WorstKEntry> rows;        // one per model
};

using NamedPredictor =
  std::pair<std::string, std::function<Tensor<float>(const Tensor<float>&)>>;

// Evaluates each model on the k hardest samples under the chosen index.
inline WorstKReport worst_k_report(const std::vector<NamedPredictor>& models,
                                   const std::vector<EvalSample>& dataset,
                                   const std::vector<DifficultyScore>& scores,
                                   DifficultyKind kind, int k, double threshold = 0.5,
                                   double tolerance_px = 2.0) {
  if (models.empty()) {
    throw std::invalid_argument("worst_k_report: no models given");
  }
  if (scores.size() != dataset.size()) {
    throw std::invalid_argument(
      "worst_k_report: scores and dataset must cover the same samples");
  }
  WorstKReport report;
  report.kind = kind;
  report.k = k;
  report.sample_ids = rank_worst_k(scores, kind, k);

  std::vector<EvalSample> subset;
  subset.reserve(report.sample_ids.size());
  for (const auto& id : report.sample_ids) {
    auto it = std::find_if(dataset.begin(), dataset.end(),
                [&](const EvalSample& s) { return s.id == id; });
    if (it == dataset.end()) {
      throw std::invalid_argument("worst_k_report: score id not in dataset: " + id);
    }
    subset.push_back(*it);
  }
  if (subset.empty()) {
    throw std::invalid_argument("worst_k_report: k must be at least 1");
  }

  for (const auto& [name, predict] : models) {
    MetricsReport mr = evaluate(predict, subset, threshold, tolerance_px);
    WorstKEntry row;
    row.model_name = name;
    row.branch_recall = mr.aggregate.recall_branch;
    row.occluded_recall = mr.aggregate.recall_occluded;
    row.mean_iou = mr.aggregate.mean_iou;
    report.rows.push_back(std::move(row));
  }
  return report;
}

inline nlohmann::json to_json(const WorstKReport& report) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& row : report.rows) {
    nlohmann::json j{{"model", row.model_name}, {"mean_iou", row.mean_iou}};
    if (row.branch_recall) j["branch_recall"] = *row.branch_recall;
    if (row.occluded_recall) j["occluded_recall"] = *row.occluded_recall;
    rows.push_back(std::move(j));
  }
  return nlohmann::json{{"index", to_string(report.kind)},
             {"k", report.k},
             {"sample_ids", report.sample_ids},
             {"models", std::move(rows)}};
}

}  // namespace branchseg
