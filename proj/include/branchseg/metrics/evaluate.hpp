#pragma once

#include <algorithm>
#include <nlohmann/json.hpp>
#include <string>
#include <vector>

#include "branchseg/metrics/metrics.hpp"
#include "branchseg/models/model.hpp"

namespace branchseg {

struct EvalSample {
  std::string id;
  Tensor<float> input;  // [C,H,W]
  Mask gt;              // [H,W]
  Mask occluded;        // [H,W], empty when unknown
};

struct MetricValues {
  double binary_accuracy = 0, iou_branch = 0, iou_nonbranch = 0, mean_iou = 0, boundary_f1 = 0;
  std::optional<double> recall_branch, recall_nonbranch, recall_occluded;
};

struct SampleMetrics {
  std::string id;
  MetricValues values;
};

struct MetricsReport {
  std::vector<SampleMetrics> per_sample;  // sorted by id
  MetricValues aggregate;
  double threshold = 0.5;
  double tolerance_px = 2.0;
};

inline MetricValues compute_sample_metrics(const Mask& pred, const Mask& gt, const Mask& occluded,
                                           double tolerance_px) {
  MetricValues v;
  const auto counts = confusion_counts(pred, gt);
  v.binary_accuracy = binary_accuracy(counts);
  const auto pair = iou_pair(pred, gt);
  v.iou_branch = pair.branch;
  v.iou_nonbranch = pair.non_branch;
  v.mean_iou = pair.mean();
  v.boundary_f1 = boundary_f1(pred, gt, tolerance_px);
  v.recall_branch = class_recall(pred, gt);
  v.recall_nonbranch = class_recall(invert(pred), invert(gt));
  if (occluded.numel()) v.recall_occluded = class_recall(pred, occluded);
  return v;
}

namespace detail {

inline void accumulate(std::optional<double>& mean_acc, int& n,
                       const std::optional<double>& value) {
  if (!value) return;
  if (!mean_acc) mean_acc = 0.0;
  *mean_acc += *value;
  ++n;
}

}  // namespace detail

/// Binarizes predictions at the threshold (ties count as positive), computes
/// all metrics per sample, and aggregates by unweighted mean. Samples are
/// ordered by id so the aggregation is permutation-invariant.
template <typename Predict>
MetricsReport evaluate(Predict&& predict, const std::vector<EvalSample>& samples,
                       double threshold = 0.5, double tolerance_px = 2.0) {
  if (samples.empty()) throw std::invalid_argument("evaluate: empty dataset");
  check_shape(threshold > 0.0 && threshold < 1.0, "evaluate: threshold must be in (0,1)");

  MetricsReport report;
  report.threshold = threshold;
  report.tolerance_px = tolerance_px;

  std::vector<size_t> order(samples.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(),
            [&](size_t a, size_t b) { return samples[a].id < samples[b].id; });

  for (size_t idx : order) {
    const auto& s = samples[idx];
    Tensor<float> prob = predict(s.input);
    check_shape(prob.ndim() == 2 && prob.dim(0) == s.gt.dim(0) && prob.dim(1) == s.gt.dim(1),
                "evaluate: prediction must be an [H,W] plane matching the mask");
    Mask pred(prob.shape());
    for (int64_t i = 0; i < prob.numel(); ++i) {
      if (prob[i] < 0.0f || prob[i] > 1.0f)
        throw std::invalid_argument("evaluate: probability outside [0,1]");
      pred[i] = prob[i] >= float(threshold) ? 1 : 0;
    }
    report.per_sample.push_back({s.id, compute_sample_metrics(pred, s.gt, s.occluded, tolerance_px)});
  }

  auto& agg = report.aggregate;
  int nb = 0, nn = 0, no = 0;
  for (const auto& sm : report.per_sample) {
    agg.binary_accuracy += sm.values.binary_accuracy;
    agg.iou_branch += sm.values.iou_branch;
    agg.iou_nonbranch += sm.values.iou_nonbranch;
    agg.mean_iou += sm.values.mean_iou;
    agg.boundary_f1 += sm.values.boundary_f1;
    detail::accumulate(agg.recall_branch, nb, sm.values.recall_branch);
    detail::accumulate(agg.recall_nonbranch, nn, sm.values.recall_nonbranch);
    detail::accumulate(agg.recall_occluded, no, sm.values.recall_occluded);
  }
  const double n = double(report.per_sample.size());
  agg.binary_accuracy /= n;
  agg.iou_branch /= n;
  agg.iou_nonbranch /= n;
  agg.mean_iou /= n;
  agg.boundary_f1 /= n;
  if (agg.recall_branch) *agg.recall_branch /= nb;
  if (agg.recall_nonbranch) *agg.recall_nonbranch /= nn;
  if (agg.recall_occluded) *agg.recall_occluded /= no;
  return report;
}

/// Wraps an infer-mode model as a per-sample predictor.
template <typename T>
auto model_predictor(Model<T>& model) {
  return [&model](const Tensor<float>& input) {
    check_shape(input.ndim() == 3, "predictor: input must be [C,H,W]");
    Shape batched = input.shape();
    batched.insert(batched.begin(), 1);
    Tensor<T> x(batched);
    for (int64_t i = 0; i < input.numel(); ++i) x[i] = T(input[i]);
    model.training = false;
    Tape<T> tape;
    auto out = model.forward(tape, make_var(std::move(x)));
    check_shape(out->value.dim(1) == 1, "predictor: model must emit a single channel");
    Tensor<float> plane({out->value.dim(2), out->value.dim(3)});
    for (int64_t i = 0; i < plane.numel(); ++i) plane[i] = float(out->value[i]);
    return plane;
  };
}

namespace detail {

inline void values_to_json(nlohmann::json& j, const MetricValues& v) {
  j["binary_accuracy"] = v.binary_accuracy;
  j["iou_branch"] = v.iou_branch;
  j["iou_nonbranch"] = v.iou_nonbranch;
  j["mean_iou"] = v.mean_iou;
  j["boundary_f1"] = v.boundary_f1;
  if (v.recall_branch) j["recall_branch"] = *v.recall_branch;
  if (v.recall_nonbranch) j["recall_nonbranch"] = *v.recall_nonbranch;
  if (v.recall_occluded) j["recall_occluded"] = *v.recall_occluded;
}

inline MetricValues values_from_json(const nlohmann::json& j) {
  MetricValues v;
  v.binary_accuracy = j.at("binary_accuracy").get<double>();
  v.iou_branch = j.at("iou_branch").get<double>();
  v.iou_nonbranch = j.at("iou_nonbranch").get<double>();
  v.mean_iou = j.at("mean_iou").get<double>();
  v.boundary_f1 = j.at("boundary_f1").get<double>();
  if (j.contains("recall_branch")) v.recall_branch = j["recall_branch"].get<double>();
  if (j.contains("recall_nonbranch")) v.recall_nonbranch = j["recall_nonbranch"].get<double>();
  if (j.contains("recall_occluded")) v.recall_occluded = j["recall_occluded"].get<double>();
  return v;
}

}  // namespace detail

inline nlohmann::json to_json(const MetricsReport& r) {
  nlohmann::json per = nlohmann::json::array();
  for (const auto& sm : r.per_sample) {
    nlohmann::json j{{"id", sm.id}};
    detail::values_to_json(j, sm.values);
    per.push_back(std::move(j));
  }
  nlohmann::json agg;
  detail::values_to_json(agg, r.aggregate);
  return {{"per_sample", per},
          {"aggregate", agg},
          {"config", {{"threshold", r.threshold}, {"tolerance_px", r.tolerance_px}}}};
}

inline MetricsReport metrics_report_from_json(const nlohmann::json& j) {
  MetricsReport r;
  for (const auto& e : j.at("per_sample"))
    r.per_sample.push_back({e.at("id").get<std::string>(), detail::values_from_json(e)});
  r.aggregate = detail::values_from_json(j.at("aggregate"));
  r.threshold = j.at("config").at("threshold").get<double>();
  r.tolerance_px = j.at("config").at("tolerance_px").get<double>();
  return r;
}

}  // namespace branchseg
