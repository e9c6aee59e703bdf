#pragma once

#include <cstdint>
#include <limits>
#include <optional>
#include <stdexcept>
#include <vector>

#include "branchseg/core/tensor.hpp"

namespace branchseg {

struct ConfusionCounts {
  int64_t tp = 0, tn = 0, fp = 0, fn = 0;
  int64_t total() const { return tp + tn + fp + fn; }
};

/// Pixel counts over the region (whole image when region is null).
inline ConfusionCounts confusion_counts(const Mask& pred, const Mask& gt,
                                        const Mask* region = nullptr) {
  if (!pred.same_shape(gt)) throw std::invalid_argument("confusion_counts: shape mismatch");
  if (region && !region->same_shape(gt))
    throw std::invalid_argument("confusion_counts: region shape mismatch");
  ConfusionCounts c;
  for (int64_t i = 0; i < pred.numel(); ++i) {
    if (region && !(*region)[i]) continue;
    const bool p = pred[i] != 0, g = gt[i] != 0;
    if (p && g)
      ++c.tp;
    else if (!p && !g)
      ++c.tn;
    else if (p)
      ++c.fp;
    else
      ++c.fn;
  }
  return c;
}

inline double binary_accuracy(const ConfusionCounts& c) {
  if (c.total() == 0) throw std::invalid_argument("binary_accuracy: empty region");
  return double(c.tp + c.tn) / double(c.total());
}

/// Jaccard index with the empty-class rule: when the class is absent from
/// both masks the overlap is vacuously perfect.
inline double iou(const ConfusionCounts& c) {
  const int64_t denom = c.tp + c.fp + c.fn;
  if (denom == 0) return 1.0;
  return double(c.tp) / double(denom);
}

inline Mask invert(const Mask& m) {
  Mask out(m.shape());
  for (int64_t i = 0; i < m.numel(); ++i) out[i] = m[i] ? 0 : 1;
  return out;
}

struct IoUPair {
  double branch = 0, non_branch = 0;
  double mean() const { return 0.5 * (branch + non_branch); }
};

inline IoUPair iou_pair(const Mask& pred, const Mask& gt) {
  IoUPair p;
  p.branch = iou(confusion_counts(pred, gt));
  p.non_branch = iou(confusion_counts(invert(pred), invert(gt)));
  return p;
}

inline double mean_iou(const Mask& pred, const Mask& gt) { return iou_pair(pred, gt).mean(); }

/// Class pixels adjacent (4-connectivity) to background; pixels touching the
/// image border count as adjacent to background.
inline Mask extract_boundary(const Mask& m) {
  check_shape(m.ndim() == 2, "extract_boundary: mask must be [H,W]");
  const int H = m.dim(0), W = m.dim(1);
  Mask out({H, W});
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      if (!m.at(y, x)) continue;
      const bool bg = y == 0 || !m.at(y - 1, x) || y == H - 1 || !m.at(y + 1, x) || x == 0 ||
                      !m.at(y, x - 1) || x == W - 1 || !m.at(y, x + 1);
      out.at(y, x) = bg ? 1 : 0;
    }
  return out;
}

namespace detail {

/// 1-d squared-distance transform (lower envelope of parabolas).
inline void edt_1d(const std::vector<double>& f, std::vector<double>& d) {
  const int n = int(f.size());
  static constexpr double kInf = std::numeric_limits<double>::infinity();
  std::vector<int> v(n);
  std::vector<double> z(n + 1);
  int k = 0;
  v[0] = 0;
  z[0] = -kInf;
  z[1] = kInf;
  for (int q = 1; q < n; ++q) {
    double s = ((f[q] + double(q) * q) - (f[v[k]] + double(v[k]) * v[k])) / (2.0 * (q - v[k]));
    while (s <= z[k]) {
      --k;
      s = ((f[q] + double(q) * q) - (f[v[k]] + double(v[k]) * v[k])) / (2.0 * (q - v[k]));
    }
    ++k;
    v[k] = q;
    z[k] = s;
    z[k + 1] = kInf;
  }
  k = 0;
  d.resize(n);
  for (int q = 0; q < n; ++q) {
    while (z[k + 1] < q) ++k;
    d[q] = double(q - v[k]) * (q - v[k]) + f[v[k]];
  }
}

/// Exact squared Euclidean distance to the nearest set pixel (inf if none).
/// "No site" is carried through the transform as a large finite sentinel:
/// infinities would produce NaN parabola intersections in edt_1d, and the
/// sentinel stays exactly representable (1e15 + q^2 < 2^53 for any image
/// dimension in range), so reachable distances remain exact integers.
inline std::vector<double> edt_squared(const Mask& sites) {
  const int H = sites.dim(0), W = sites.dim(1);
  static constexpr double kFar = 1e15;
  std::vector<double> g(size_t(H) * W);
  for (int64_t i = 0; i < sites.numel(); ++i) g[size_t(i)] = sites[i] ? 0.0 : kFar;

  std::vector<double> col(H), out_col;
  for (int x = 0; x < W; ++x) {
    for (int y = 0; y < H; ++y) col[size_t(y)] = g[size_t(y) * W + x];
    edt_1d(col, out_col);
    for (int y = 0; y < H; ++y) g[size_t(y) * W + x] = out_col[size_t(y)];
  }
  std::vector<double> row(W), out_row;
  for (int y = 0; y < H; ++y) {
    for (int x = 0; x < W; ++x) row[size_t(x)] = g[size_t(y) * W + x];
    edt_1d(row, out_row);
    for (int x = 0; x < W; ++x) g[size_t(y) * W + x] = out_row[size_t(x)];
  }
  for (auto& d : g)
    if (d >= kFar) d = std::numeric_limits<double>::infinity();
  return g;
}

}  // namespace detail

/// Boundary F-score: precision/recall of boundary pixels matched within the
/// Euclidean tolerance. Both boundaries empty scores 1, exactly one empty 0.
inline double boundary_f1(const Mask& pred, const Mask& gt, double tolerance_px = 2.0) {
  if (!pred.same_shape(gt)) throw std::invalid_argument("boundary_f1: shape mismatch");
  check_shape(tolerance_px >= 0, "boundary_f1: tolerance must be >= 0");
  const Mask pb = extract_boundary(pred);
  const Mask gb = extract_boundary(gt);
  const int64_t np = mask_count(pb), ng = mask_count(gb);
  if (np == 0 && ng == 0) return 1.0;
  if (np == 0 || ng == 0) return 0.0;

  const double tol2 = tolerance_px * tolerance_px;
  const auto dist2_gt = detail::edt_squared(gb);
  const auto dist2_pred = detail::edt_squared(pb);
  int64_t matched_pred = 0, matched_gt = 0;
  for (int64_t i = 0; i < pb.numel(); ++i) {
    if (pb[i] && dist2_gt[size_t(i)] <= tol2) ++matched_pred;
    if (gb[i] && dist2_pred[size_t(i)] <= tol2) ++matched_gt;
  }
  const double precision = double(matched_pred) / double(np);
  const double recall = double(matched_gt) / double(ng);
  if (precision + recall == 0.0) return 0.0;
  return 2.0 * precision * recall / (precision + recall);
}

/// Fraction of class pixels predicted positive; absent when the class has no
/// pixels (an undefined recall must not read as 0).
inline std::optional<double> class_recall(const Mask& pred_positive, const Mask& class_mask) {
  if (!pred_positive.same_shape(class_mask))
    throw std::invalid_argument("class_recall: shape mismatch");
  const int64_t total = mask_count(class_mask);
  if (total == 0) return std::nullopt;
  int64_t hit = 0;
  for (int64_t i = 0; i < class_mask.numel(); ++i)
    if (class_mask[i] && pred_positive[i]) ++hit;
  return double(hit) / double(total);
}

}  // namespace branchseg
