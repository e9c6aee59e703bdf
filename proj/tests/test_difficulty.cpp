#include <catch2/catch_amalgamated.hpp>

#include <sstream>
#include <string>
#include <vector>

#include "branchseg/core/rng.hpp"
#include "branchseg/metrics/difficulty.hpp"

using namespace branchseg;

namespace {

Mask block(int h, int w, int y0, int y1, int x0, int x1) {
  Mask m({h, w});
  for (int y = y0; y < y1; ++y)
    for (int x = x0; x < x1; ++x) m.at(y, x) = 1;
  return m;
}

// A sample whose first input channel carries the visible evidence: the label
// with occluded pixels erased. An echo predictor can only recover what the
// occluder left behind, which is exactly how occlusion hurts a real model.
EvalSample visible_evidence_sample(std::string id, const Mask& label, const Mask& occluder) {
  Tensor<float> input({1, label.dim(0), label.dim(1)});
  for (int64_t i = 0; i < label.numel(); ++i)
    input[i] = (label[i] && !occluder[i]) ? 1.0f : 0.0f;
  Mask occluded_branch(label.shape());
  for (int64_t i = 0; i < label.numel(); ++i) occluded_branch[i] = label[i] && occluder[i];
  return {std::move(id), std::move(input), label, std::move(occluded_branch)};
}

Tensor<float> echo_predict(const Tensor<float>& input) {
  Tensor<float> plane({input.dim(1), input.dim(2)});
  for (int64_t i = 0; i < plane.numel(); ++i) plane[i] = input[i];
  return plane;
}

}  // namespace

TEST_CASE("occlusion index is the covered fraction of the label") {
  const Mask label = block(6, 6, 1, 5, 1, 2);  // 4-pixel vertical bar
  REQUIRE(occlusion_difficulty(label, label) == 1.0);  // occluder covers it all
  REQUIRE(occlusion_difficulty(block(6, 6, 0, 1, 3, 6), label) == 0.0);

  // 20-pixel label, occluder overlaps exactly 5 of them.
  const Mask wide = block(6, 6, 1, 5, 1, 6);
  const Mask occluder = block(6, 6, 1, 2, 1, 6);  // top row of the label
  REQUIRE(occlusion_difficulty(occluder, wide) == Catch::Approx(0.25));
}

TEST_CASE("occlusion index ignores occluder pixels outside the label") {
  Rng rng(17);
  const Mask label = block(8, 8, 2, 6, 2, 6);
  Mask occluder = block(8, 8, 2, 4, 2, 6);
  const double base = occlusion_difficulty(occluder, label);

  Mask noisy = occluder;
  for (int64_t i = 0; i < noisy.numel(); ++i)
    if (!label[i] && rng.uniform() < 0.5) noisy[i] = 1;  // arbitrary extra cover
  REQUIRE(occlusion_difficulty(noisy, label) == base);
}

TEST_CASE("difficulty indices reject empty labels and shape mismatches") {
  const Mask empty({4, 4});
  const Mask some = block(4, 4, 0, 2, 0, 2);
  REQUIRE_THROWS_AS(occlusion_difficulty(some, empty), std::invalid_argument);
  REQUIRE_THROWS_AS(occlusion_difficulty(Mask({2, 2}), some), std::invalid_argument);

  Tensor<float> depth({4, 4});
  REQUIRE_THROWS_AS(depth_difficulty(depth, empty), std::invalid_argument);
  REQUIRE_THROWS_AS(depth_difficulty(Tensor<float>({2, 2}), some), std::invalid_argument);
  REQUIRE_THROWS_AS(depth_difficulty(depth, some, 0.0), std::invalid_argument);
}

TEST_CASE("depth index counts label pixels without a usable reading") {
  const Mask label = block(4, 4, 1, 3, 0, 4);  // 8 pixels
  Tensor<float> depth({4, 4});
  for (int64_t i = 0; i < depth.numel(); ++i) depth[i] = 2.0f;
  REQUIRE(depth_difficulty(depth, label) == 0.0);

  Tensor<float> dropout({4, 4});  // all zeros: total sensor failure
  REQUIRE(depth_difficulty(dropout, label) == 1.0);

  // Half the label loses its reading; values beyond the range count as lost
  // just like zeros do.
  Tensor<float> half({4, 4});
  for (int64_t i = 0; i < half.numel(); ++i) half[i] = 2.0f;
  for (int x = 0; x < 4; ++x) half.at(1, x) = (x % 2 == 0) ? 0.0f : 9.5f;
  REQUIRE(depth_difficulty(half, label) == Catch::Approx(0.5));
  REQUIRE(depth_difficulty(half, label, 10.0) == Catch::Approx(0.25));
}

TEST_CASE("depth index only responds to pixels inside the label") {
  Rng rng(23);
  const Mask label = block(8, 8, 2, 6, 2, 6);
  Tensor<float> depth({8, 8});
  for (int64_t i = 0; i < depth.numel(); ++i) depth[i] = 1.5f + float(rng.uniform());
  const double base = depth_difficulty(depth, label);
  for (int64_t i = 0; i < depth.numel(); ++i)
    if (!label[i]) depth[i] = rng.uniform() < 0.5 ? 0.0f : 50.0f;
  REQUIRE(depth_difficulty(depth, label) == base);
}

TEST_CASE("depth index grows monotonically as readings on the label are zeroed") {
  const Mask label = block(5, 5, 0, 5, 1, 4);
  Tensor<float> depth({5, 5});
  for (int64_t i = 0; i < depth.numel(); ++i) depth[i] = 3.0f;
  double prev = depth_difficulty(depth, label);
  REQUIRE(prev == 0.0);
  for (int64_t i = 0; i < depth.numel(); ++i) {
    if (!label[i]) continue;
    depth[i] = 0.0f;
    const double cur = depth_difficulty(depth, label);
    REQUIRE(cur >= prev);
    prev = cur;
  }
  REQUIRE(prev == 1.0);
}

TEST_CASE("worst-k ranking sorts by index with id tie-breaks") {
  const std::vector<DifficultyScore> scores{
      {"img-3", 0.2, 0.9},
      {"img-1", 0.8, 0.1},
      {"img-4", 0.5, 0.5},
      {"img-2", 0.8, 0.5},
  };
  const auto by_occ = rank_worst_k(scores, DifficultyKind::occlusion, 4);
  REQUIRE(by_occ == std::vector<std::string>{"img-1", "img-2", "img-4", "img-3"});
  const auto by_depth = rank_worst_k(scores, DifficultyKind::depth, 2);
  REQUIRE(by_depth == std::vector<std::string>{"img-3", "img-2"});
  REQUIRE(rank_worst_k(scores, DifficultyKind::occlusion, 0).empty());
  REQUIRE_THROWS_AS(rank_worst_k(scores, DifficultyKind::occlusion, 5), std::invalid_argument);

  // Stability across shuffled input order.
  std::vector<DifficultyScore> shuffled{scores[2], scores[0], scores[3], scores[1]};
  REQUIRE(rank_worst_k(shuffled, DifficultyKind::occlusion, 4) == by_occ);
}

TEST_CASE("difficulty kind names round-trip") {
  REQUIRE(difficulty_kind_from_string(to_string(DifficultyKind::occlusion)) ==
          DifficultyKind::occlusion);
  REQUIRE(difficulty_kind_from_string(to_string(DifficultyKind::depth)) == DifficultyKind::depth);
  REQUIRE_THROWS_AS(difficulty_kind_from_string("hardness"), std::invalid_argument);
}

TEST_CASE("scores serialize to a stable CSV") {
  std::ostringstream out;
  write_scores_csv(out, {{"a", 0.25, 1.0}, {"b", 0.0, 0.125}});
  REQUIRE(out.str() ==
          "sample_id,occlusion_index,depth_index\n"
          "a,0.25,1\n"
          "b,0,0.125\n");
}

TEST_CASE("worst-k report gives an oracle model perfect scores on any subset") {
  Rng rng(41);
  std::vector<EvalSample> dataset;
  std::vector<DifficultyScore> scores;
  for (int i = 0; i < 6; ++i) {
    Mask label = block(10, 10, 1, 9, 2, 4 + (i % 3));
    Tensor<float> input({1, 10, 10});
    for (int64_t p = 0; p < label.numel(); ++p) input[p] = label[p] ? 1.0f : 0.0f;
    Mask occluded(label.shape());
    occluded.at(1, 2) = 1;  // one known-occluded branch pixel
    const std::string id = "s" + std::to_string(i);
    dataset.push_back({id, std::move(input), label, std::move(occluded)});
    scores.push_back({id, rng.uniform(), rng.uniform()});
  }
  // The echo predictor reads the label straight out of the input channel, so
  // it is exact no matter which samples the ranking selects.
  const auto report = worst_k_report({{"echo", echo_predict}}, dataset, scores,
                                     DifficultyKind::occlusion, 3);
  REQUIRE(report.sample_ids.size() == 3);
  REQUIRE(report.rows.size() == 1);
  REQUIRE(report.rows[0].model_name == "echo");
  REQUIRE(report.rows[0].branch_recall == 1.0);
  REQUIRE(report.rows[0].occluded_recall == 1.0);
  REQUIRE(report.rows[0].mean_iou == 1.0);
}

TEST_CASE("worst-k report on the full set matches a direct evaluation") {
  Rng rng(43);
  std::vector<EvalSample> dataset;
  std::vector<DifficultyScore> scores;
  for (int i = 0; i < 4; ++i) {
    Mask label = block(9, 9, 1, 8, 1, 3 + i % 2);
    Mask occluder = block(9, 9, 1, 3 + i, 0, 9);
    dataset.push_back(visible_evidence_sample("v" + std::to_string(i), label, occluder));
    scores.push_back({"v" + std::to_string(i), occlusion_difficulty(occluder, label),
                      0.0});
  }
  const auto report = worst_k_report({{"echo", echo_predict}}, dataset, scores,
                                     DifficultyKind::occlusion, int(dataset.size()));
  const MetricsReport direct = evaluate(echo_predict, dataset);
  REQUIRE(report.rows[0].mean_iou == Catch::Approx(direct.aggregate.mean_iou));
  REQUIRE(report.rows[0].branch_recall.has_value());
  REQUIRE(*report.rows[0].branch_recall == Catch::Approx(*direct.aggregate.recall_branch));
  REQUIRE(*report.rows[0].occluded_recall == Catch::Approx(*direct.aggregate.recall_occluded));
}

TEST_CASE("heavily occluded subsets score no better than the full set") {
  // Occlusion provably removes evidence here: the input is the label minus
  // the occluder, so a pixel under the occluder cannot be recovered.
  std::vector<EvalSample> dataset;
  std::vector<DifficultyScore> scores;
  const int n = 8;
  for (int i = 0; i < n; ++i) {
    const Mask label = block(12, 12, 1, 11, 4, 7);
    // Occluder covers the top i rows of the image, hence a growing share of
    // the label; every sample keeps at least one visible branch pixel.
    const Mask occluder = block(12, 12, 0, 1 + i, 0, 12);
    const std::string id = "occ" + std::to_string(i);
    dataset.push_back(visible_evidence_sample(id, label, occluder));
    scores.push_back({id, occlusion_difficulty(occluder, label), 0.0});
  }
  const auto worst = worst_k_report({{"echo", echo_predict}}, dataset, scores,
                                    DifficultyKind::occlusion, 3);
  const MetricsReport full = evaluate(echo_predict, dataset);
  REQUIRE(*worst.rows[0].branch_recall <= *full.aggregate.recall_branch);
  REQUIRE(worst.rows[0].mean_iou <= full.aggregate.mean_iou);
  REQUIRE(*worst.rows[0].occluded_recall <= *full.aggregate.recall_occluded);
  // The hard subset is strictly worse on recall for this construction.
  REQUIRE(*worst.rows[0].branch_recall < *full.aggregate.recall_branch);
}

TEST_CASE("worst-k report validates its inputs and serializes to JSON") {
  Mask label = block(6, 6, 1, 5, 2, 4);
  Tensor<float> input({1, 6, 6});
  for (int64_t p = 0; p < label.numel(); ++p) input[p] = label[p] ? 1.0f : 0.0f;
  std::vector<EvalSample> dataset{{"only", input, label, {}}};
  std::vector<DifficultyScore> scores{{"only", 0.5, 0.5}};

  REQUIRE_THROWS_AS(worst_k_report({}, dataset, scores, DifficultyKind::depth, 1),
                    std::invalid_argument);
  REQUIRE_THROWS_AS(worst_k_report({{"echo", echo_predict}}, dataset, {},
                                   DifficultyKind::depth, 0),
                    std::invalid_argument);

  const auto report =
      worst_k_report({{"echo", echo_predict}}, dataset, scores, DifficultyKind::depth, 1);
  const nlohmann::json j = to_json(report);
  REQUIRE(j.at("index") == "depth");
  REQUIRE(j.at("k") == 1);
  REQUIRE(j.at("sample_ids").size() == 1);
  REQUIRE(j.at("models").size() == 1);
  REQUIRE(j.at("models")[0].at("model") == "echo");
  REQUIRE(j.at("models")[0].at("mean_iou") == 1.0);
  REQUIRE(!j.at("models")[0].contains("occluded_recall"));  // no occlusion mask given
}
