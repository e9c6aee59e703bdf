#pragma once

// Naive reference implementations of the segmentation metrics, used only by
// tests. Boundary matching is done with all-pairs distances (no distance
// transform); set sizes are counted directly from the masks rather than from
// a confusion matrix, so the formula paths differ from the library's.

#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <vector>

#include "branchseg/core/tensor.hpp"

namespace oracle {

using branchseg::Mask;

inline double accuracy_ref(const Mask& pred, const Mask& gt) {
  int64_t match = 0;
  for (int64_t i = 0; i < gt.numel(); ++i)
    if ((pred[i] != 0) == (gt[i] != 0)) ++match;
  return double(match) / double(gt.numel());
}

// |A ∩ B| / |A ∪ B| counted straight off the masks.
inline double iou_ref(const Mask& pred, const Mask& gt) {
  int64_t inter = 0, uni = 0;
  for (int64_t i = 0; i < gt.numel(); ++i) {
    const bool p = pred[i] != 0, g = gt[i] != 0;
    if (p && g) ++inter;
    if (p || g) ++uni;
  }
  if (uni == 0) return 1.0;
  return double(inter) / double(uni);
}

inline std::optional<double> recall_ref(const Mask& pred, const Mask& cls) {
  int64_t hit = 0, total = 0;
  for (int64_t i = 0; i < cls.numel(); ++i) {
    if (!cls[i]) continue;
    ++total;
    if (pred[i]) ++hit;
  }
  if (total == 0) return std::nullopt;
  return double(hit) / double(total);
}

struct Pixel {
  int y, x;
};

// Foreground pixels with at least one 4-neighbor outside the mask; pixels on
// the image border count as boundary (outside the image is background).
inline std::vector<Pixel> boundary_pixels_ref(const Mask& m) {
  const int H = m.dim(0), W = m.dim(1);
  std::vector<Pixel> out;
  auto bg = [&](int y, int x) {
    return y < 0 || y >= H || x < 0 || x >= W || m.at(y, x) == 0;
  };
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      if (!m.at(y, x)) continue;
      if (bg(y - 1, x) || bg(y + 1, x) || bg(y, x - 1) || bg(y, x + 1))
        out.push_back({y, x});
    }
  return out;
}

// All-pairs nearest-neighbor matching between the two boundary sets.
inline double boundary_f1_ref(const Mask& pred, const Mask& gt, double tol) {
  const auto bp = boundary_pixels_ref(pred);
  const auto bg = boundary_pixels_ref(gt);
  if (bp.empty() && bg.empty()) return 1.0;
  if (bp.empty() || bg.empty()) return 0.0;
  const double tol2 = tol * tol;
  auto matched_count = [tol2](const std::vector<Pixel>& from, const std::vector<Pixel>& to) {
    int64_t matched = 0;
    for (const auto& a : from) {
      double best = std::numeric_limits<double>::infinity();
      for (const auto& b : to) {
        const double dy = a.y - b.y, dx = a.x - b.x;
        best = std::min(best, dy * dy + dx * dx);
      }
      if (best <= tol2) ++matched;
    }
    return matched;
  };
  const double precision = double(matched_count(bp, bg)) / double(bp.size());
  const double recall = double(matched_count(bg, bp)) / double(bg.size());
  if (precision + recall == 0.0) return 0.0;
  return 2.0 * precision * recall / (precision + recall);
}

}  // namespace oracle
