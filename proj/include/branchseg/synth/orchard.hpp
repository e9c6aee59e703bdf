#pragma once

// Procedural trellis-orchard scene generator.
//
// Each scene is a 2D-open-V trained tree: a V-shaped trunk rising from the
// bottom center, quadratic branch curves with linearly tapering thickness
// leaving the trunk arms, and elliptical leaves drawn over the branches.
// The generator knows the exact geometry, so it emits oracle masks no human
// annotator could produce: the full branch skeleton including hidden parts,
// the occluder (all leaves), and their exact intersection.
//
// Occlusion difficulty is calibrated per scene: a target index is drawn
// around `occlusion_target`, and leaves are added near branch pixels until
// the measured index reaches it or the leaf budget runs out. Depth mimics a
// stereo camera at 1.8-2.2 m: leaves sit in front of branches, readings
// disappear on branches thinner than the dropout threshold and on a random
// speckle fraction, and everything is quantized to millimeters.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "branchseg/core/rng.hpp"
#include "branchseg/core/tensor.hpp"
#include "branchseg/data/dataset.hpp"
#include "branchseg/metrics/difficulty.hpp"

namespace branchseg {

struct ValueRange {
  double lo = 0.0, hi = 0.0;

  double sample(Rng& rng) const { return rng.uniform(lo, hi); }
  bool positive_nondegenerate() const { return lo > 0.0 && hi > lo; }
};

struct CountRange {
  int lo = 0, hi = 0;

  int sample(Rng& rng) const { return rng.uniform_int(lo, hi); }
  bool valid() const { return lo >= 0 && hi >= lo; }
};

struct SceneParams {
  int image_size = 64;
  ValueRange trunk_angle_deg{14.0, 28.0};      // V half-angle from vertical
  CountRange branch_count{5, 9};               // lateral branches per tree
  ValueRange branch_thickness_px{1.0, 2.2};    // at the branch base
  CountRange leaf_count{30, 70};               // leaf budget per scene
  ValueRange leaf_size_px{3.0, 6.5};           // semi-major axis
  double occlusion_target = 0.4;               // desired mean occlusion index
  double depth_dropout_thickness_px = 1.2;     // thinner branches lose depth
  ValueRange camera_distance_m{1.8, 2.2};
  double branch_fraction_target = 0.059;       // class imbalance to aim for
  double depth_speckle_fraction = 0.01;        // random extra depth misses
  uint64_t seed = 0;                           // base seed for dataset runs

  void validate() const {
    if (image_size < 16) throw std::invalid_argument("scene: image_size must be >= 16");
    for (const ValueRange* r :
         {&trunk_angle_deg, &branch_thickness_px, &leaf_size_px, &camera_distance_m})
      if (!r->positive_nondegenerate())
        throw std::invalid_argument("scene: value ranges must be positive and non-degenerate");
    if (!branch_count.valid() || !leaf_count.valid())
      throw std::invalid_argument("scene: count ranges must be non-negative");
    if (occlusion_target < 0.0 || occlusion_target > 1.0)
      throw std::invalid_argument("scene: occlusion_target must be in [0,1]");
    if (branch_fraction_target <= 0.0 || branch_fraction_target >= 0.5)
      throw std::invalid_argument("scene: branch_fraction_target must be in (0,0.5)");
    if (depth_speckle_fraction < 0.0 || depth_speckle_fraction >= 1.0)
      throw std::invalid_argument("scene: speckle fraction must be in [0,1)");
    if (depth_dropout_thickness_px < 0.0)
      throw std::invalid_argument("scene: dropout thickness must be >= 0");
  }
};

namespace detail {

// Widths are tracked per pixel so depth dropout can test "local thickness".
struct SceneCanvas {
  int size;
  Mask branch;
  Tensor<float> thickness;  // widest stroke covering each branch pixel
  Mask occluder;

  explicit SceneCanvas(int s) : size(s), branch({s, s}), thickness({s, s}), occluder({s, s}) {}

  void stamp_branch(double cy, double cx, double radius) {
    const int r = int(std::ceil(radius));
    for (int y = int(cy) - r; y <= int(cy) + r; ++y)
      for (int x = int(cx) - r; x <= int(cx) + r; ++x) {
        if (y < 0 || y >= size || x < 0 || x >= size) continue;
        const double dy = y - cy, dx = x - cx;
        if (dy * dy + dx * dx > radius * radius) continue;
        branch.at(y, x) = 1;
        thickness.at(y, x) = std::max(thickness.at(y, x), float(2.0 * radius));
      }
  }

  // Track of discs along a quadratic curve; thickness tapers linearly.
  void draw_curve(double y0, double x0, double vy, double vx, double ay, double ax, double length,
                  double base_thickness, double tip_thickness) {
    const int steps = std::max(8, int(length * 2.0));
    for (int i = 0; i <= steps; ++i) {
      const double t = double(i) / steps;
      const double s = t * length;
      const double y = y0 + vy * s + ay * s * s;
      const double x = x0 + vx * s + ax * s * s;
      const double th = base_thickness + (tip_thickness - base_thickness) * t;
      stamp_branch(y, x, std::max(0.5, th * 0.5));
    }
  }

  void stamp_leaf(double cy, double cx, double a, double b, double angle) {
    const double ca = std::cos(angle), sa = std::sin(angle);
    const int r = int(std::ceil(std::max(a, b)));
    for (int y = int(cy) - r; y <= int(cy) + r; ++y)
      for (int x = int(cx) - r; x <= int(cx) + r; ++x) {
        if (y < 0 || y >= size || x < 0 || x >= size) continue;
        const double dy = y - cy, dx = x - cx;
        const double u = dx * ca + dy * sa, v = -dx * sa + dy * ca;
        if ((u * u) / (a * a) + (v * v) / (b * b) <= 1.0) occluder.at(y, x) = 1;
      }
  }

  double branch_fraction() const {
    int64_t count = 0;
    for (int64_t i = 0; i < branch.numel(); ++i) count += branch[i];
    return double(count) / double(branch.numel());
  }
};

struct TrunkArm {
  double base_y, base_x;  // bottom anchor
  double dir_y, dir_x;    // unit direction up the arm
  double length;
};

// Sprouts one lateral branch from a random spot on a trunk arm. Returns the
// drawn length so callers can budget total branch area.
inline void sprout_lateral(SceneCanvas& canvas, const SceneParams& p, Rng& rng,
                           const std::vector<TrunkArm>& arms, double length, double thickness) {
  const TrunkArm& arm = arms[size_t(rng.uniform_int(0, int(arms.size()) - 1))];
  const double t = rng.uniform(0.15, 0.85);
  const double y0 = arm.base_y + arm.dir_y * arm.length * t;
  const double x0 = arm.base_x + arm.dir_x * arm.length * t;
  // Lateral direction: away from the trunk, biased upward.
  const double out_sign = arm.dir_x >= 0 ? 1.0 : -1.0;
  double vy = -rng.uniform(0.2, 1.0);
  double vx = out_sign * rng.uniform(0.4, 1.0) * (rng.bernoulli(0.25) ? -1.0 : 1.0);
  const double norm = std::hypot(vy, vx);
  vy /= norm;
  vx /= norm;
  const double curve = rng.uniform(-1.0, 1.0) * 0.01;  // gentle quadratic bend
  canvas.draw_curve(y0, x0, vy, vx, curve * -vx, curve * vy, length, thickness,
                    thickness * 0.35);
}

inline void draw_tree(SceneCanvas& canvas, const SceneParams& p, Rng& rng,
                      std::vector<TrunkArm>& arms) {
  const double s = canvas.size;
  const double angle = p.trunk_angle_deg.sample(rng) * std::acos(-1.0) / 180.0;
  const double trunk_len = s * rng.uniform(0.80, 0.95);
  const double trunk_th = std::max(1.0, p.branch_thickness_px.lo * 1.25);

  for (const double side : {-1.0, 1.0}) {
    TrunkArm arm;
    arm.base_y = s - 1.0;
    arm.base_x = s / 2.0 + side * rng.uniform(0.0, s * 0.03);
    arm.dir_y = -std::cos(angle);
    arm.dir_x = side * std::sin(angle);
    arm.length = trunk_len;
    canvas.draw_curve(arm.base_y, arm.base_x, arm.dir_y, arm.dir_x, 0.0, 0.0, arm.length,
                      trunk_th, trunk_th * 0.6);
    arms.push_back(arm);
  }

  // The requested laterals share the pixel budget that separates the trunk's
  // footprint from the class-balance target, so the branch fraction lands
  // near the target for any image size.
  const int requested = p.branch_count.sample(rng);
  const double total_px = double(canvas.branch.numel());
  for (int i = 0; i < requested; ++i) {
    const double deficit = p.branch_fraction_target - canvas.branch_fraction();
    const double budget_px = std::max(0.0, deficit * total_px) / (requested - i);
    const double th = p.branch_thickness_px.sample(rng);
    const double width_eff = std::max(1.0, th) + 0.6;  // disc track + raster blur
    const double length =
        std::min(s * 0.5, std::max(s * 0.1, budget_px / width_eff)) * rng.uniform(0.85, 1.15);
    sprout_lateral(canvas, p, rng, arms, length, th);
  }
  // Fine trim with short shoots until the fraction is just under the target.
  int extra = 0;
  const int extra_cap = 40 * std::max(1, (canvas.size + 63) / 64);
  while (canvas.branch_fraction() < p.branch_fraction_target - 0.005 && extra < extra_cap) {
    sprout_lateral(canvas, p, rng, arms, s * rng.uniform(0.08, 0.16), p.branch_thickness_px.lo);
    ++extra;
  }
}

inline std::vector<int64_t> collect_indices(const Mask& m) {
  std::vector<int64_t> idx;
  for (int64_t i = 0; i < m.numel(); ++i)
    if (m[i]) idx.push_back(i);
  return idx;
}

}  // namespace detail

/// Deterministically renders one scene. The same (params, seed) pair yields a
/// bitwise identical sample.
inline DataSample generate_scene(const SceneParams& params, uint64_t seed) {
  params.validate();
  Rng rng = Rng::derive(seed, 0x0c0ffee);
  const int s = params.image_size;

  detail::SceneCanvas canvas(s);
  std::vector<detail::TrunkArm> arms;
  detail::draw_tree(canvas, params, rng, arms);

  // --- occlusion calibration -------------------------------------------
  // Target drawn in [0, 2*occlusion_target] so a dataset spreads its ODI
  // instead of clustering at the mean; one scene in ten stays leafless so
  // genuinely easy samples exist at the bottom of the range.
  const bool clear_scene = rng.bernoulli(0.1);
  const double target =
      clear_scene ? 0.0 : std::min(0.95, params.occlusion_target * 2.0 * rng.uniform());
  const int budget = params.leaf_count.sample(rng);
  const auto branch_idx = detail::collect_indices(canvas.branch);
  int leaves = 0;
  auto measured_odi = [&]() {
    int64_t covered = 0;
    for (const int64_t i : branch_idx) covered += canvas.occluder[i];
    return branch_idx.empty() ? 0.0 : double(covered) / double(branch_idx.size());
  };
  struct Leaf {
    double y, x, a, b, angle;
  };
  std::vector<Leaf> placed_leaves;
  while (!branch_idx.empty() && leaves < budget && measured_odi() < target) {
    // Center the leaf near a random branch pixel with jitter, so most leaves
    // occlude while some land clear of the tree.
    const int64_t anchor = branch_idx[size_t(rng.uniform_int(0, int(branch_idx.size()) - 1))];
    const double a = params.leaf_size_px.sample(rng);
    const double b = a * rng.uniform(0.45, 0.8);
    Leaf leaf{double(anchor / s) + rng.normal() * a * 0.6,
              double(anchor % s) + rng.normal() * a * 0.6, a, b,
              rng.uniform(0.0, std::acos(-1.0))};
    canvas.stamp_leaf(leaf.y, leaf.x, leaf.a, leaf.b, leaf.angle);
    placed_leaves.push_back(leaf);
    ++leaves;
  }
  // A dry budget is an accepted shortfall, not an error: the scene simply
  // comes out easier than requested.

  // --- masks (straight from geometry) ----------------------------------
  DataSample sample;
  sample.branch = canvas.branch;
  sample.occluder = canvas.occluder;
  sample.occluded = Mask({s, s});
  for (int64_t i = 0; i < sample.branch.numel(); ++i)
    sample.occluded[i] = sample.branch[i] && sample.occluder[i] ? 1 : 0;

  // --- depth ------------------------------------------------------------
  const double cam = params.camera_distance_m.sample(rng);
  const int horizon = int(s * 0.45);
  Tensor<float> depth({s, s});
  for (int y = 0; y < s; ++y)
    for (int x = 0; x < s; ++x) {
      if (y < horizon) {
        depth.at(y, x) = 0.0f;  // sky: no stereo return
      } else {
        // Ground falls away toward the horizon.
        const double t = double(y - horizon) / std::max(1, s - horizon);
        depth.at(y, x) = float(std::min(10.0, cam + 4.0 * (1.0 - t) + 0.5));
      }
    }
  const double branch_depth = cam + 0.05;
  const double leaf_depth = std::max(0.5, cam - 0.25);
  for (int64_t i = 0; i < depth.numel(); ++i) {
    if (canvas.branch[i]) depth[i] = float(branch_depth);
    if (canvas.occluder[i]) depth[i] = float(leaf_depth);
  }
  // Thin visible branches drop out exactly as a stereo camera loses them.
  for (int64_t i = 0; i < depth.numel(); ++i) {
    if (canvas.branch[i] && !canvas.occluder[i] &&
        canvas.thickness[i] < float(params.depth_dropout_thickness_px))
      depth[i] = 0.0f;
  }
  for (int64_t i = 0; i < depth.numel(); ++i)
    if (rng.bernoulli(params.depth_speckle_fraction)) depth[i] = 0.0f;
  // Millimeter quantization, and the sensor's minimum range [0.5m, 10m].
  for (int64_t i = 0; i < depth.numel(); ++i) {
    double v = double(depth[i]);
    if (v != 0.0) v = std::min(10.0, std::max(0.5, v));
    depth[i] = float(std::round(v * 1000.0) / 1000.0);
  }
  sample.depth_m = std::move(depth);

  // --- rgb ---------------------------------------------------------------
  Tensor<uint8_t> rgb({3, s, s});
  auto put = [&](int y, int x, double r, double g, double b) {
    auto clamp255 = [](double v) { return uint8_t(std::min(255.0, std::max(0.0, v))); };
    rgb.at(0, y, x) = clamp255(r);
    rgb.at(1, y, x) = clamp255(g);
    rgb.at(2, y, x) = clamp255(b);
  };
  for (int y = 0; y < s; ++y)
    for (int x = 0; x < s; ++x) {
      const double n = rng.uniform(-10.0, 10.0);
      if (y < horizon) {
        const double t = double(y) / std::max(1, horizon);
        put(y, x, 150 + 30 * t + n, 190 + 20 * t + n, 235 + n);  // sky
      } else {
        const double t = double(y - horizon) / std::max(1, s - horizon);
        put(y, x, 110 + 40 * t + n, 85 + 25 * t + n, 60 + 15 * t + n);  // soil
      }
    }
  for (int y = 0; y < s; ++y)
    for (int x = 0; x < s; ++x) {
      if (!canvas.branch.at(y, x)) continue;
      const double shade = 20.0 * (canvas.thickness.at(y, x) / (params.branch_thickness_px.hi * 2));
      const double n = rng.uniform(-8.0, 8.0);
      put(y, x, 96 + shade + n, 64 + shade * 0.7 + n, 40 + n);  // bark
    }
  for (const auto& leaf : placed_leaves) {
    const double tint = rng.uniform(-18.0, 18.0);
    const int r = int(std::ceil(leaf.a)) + 1;
    const double ca = std::cos(leaf.angle), sa = std::sin(leaf.angle);
    for (int y = int(leaf.y) - r; y <= int(leaf.y) + r; ++y)
      for (int x = int(leaf.x) - r; x <= int(leaf.x) + r; ++x) {
        if (y < 0 || y >= s || x < 0 || x >= s) continue;
        const double dy = y - leaf.y, dx = x - leaf.x;
        const double u = dx * ca + dy * sa, v = -dx * sa + dy * ca;
        if ((u * u) / (leaf.a * leaf.a) + (v * v) / (leaf.b * leaf.b) > 1.0) continue;
        const double n = rng.uniform(-6.0, 6.0);
        put(y, x, 58 + tint * 0.4 + n, 128 + tint + n, 52 + tint * 0.3 + n);  // foliage
      }
  }
  sample.rgb = std::move(rgb);
  return sample;
}

/// Writes n_train + n_val scenes plus a manifest. Per-sample seeds derive
/// from params.seed and the sample index, so any sample can be regenerated
/// in isolation.
inline Manifest generate_dataset(const SceneParams& params, int n_train, int n_val,
                                 const std::filesystem::path& root) {
  if (n_train < 1 || n_val < 1)
    throw std::invalid_argument("generate_dataset: both splits need at least one sample");
  params.validate();
  std::error_code ec;
  std::filesystem::create_directories(root, ec);
  if (ec) throw DataError("cannot create dataset directory " + root.string());

  Manifest manifest;
  char idbuf[32];
  const int total = n_train + n_val;
  for (int i = 0; i < total; ++i) {
    const Split split = i < n_train ? Split::train : Split::val;
    const int ordinal = split == Split::train ? i : i - n_train;
    std::snprintf(idbuf, sizeof(idbuf), "%s-%04d", to_string(split), ordinal);
    DataSample sample = generate_scene(params, Rng::derive(params.seed, uint64_t(i)).next_u64());
    sample.id = idbuf;
    manifest.samples.push_back(save_sample(root, sample, split));
  }
  manifest.stats = compute_stats(root, manifest.samples);
  save_manifest(root / "manifest.json", manifest);
  return manifest;
}

}  // namespace branchseg
