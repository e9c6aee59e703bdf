#pragma once

// Geometric preprocessing and network input assembly.
//
// Samples go through center-crop -> resize (bilinear for image planes,
// nearest-neighbor for masks so labels stay binary), then assemble into
// 4-channel float inputs: RGB scaled to [0,1] and depth scaled by a fixed
// 4 m working range, with missing readings staying at exactly 0 so the
// network can treat "no reading" as its own signal.

#include <algorithm>
#include <cstdint>
#include <string>
#include <vector>

#include "branchseg/autodiff/ops.hpp"  // detail::bilinear_tap
#include "branchseg/core/errors.hpp"
#include "branchseg/core/rng.hpp"
#include "branchseg/core/tensor.hpp"
#include "branchseg/data/dataset.hpp"

namespace branchseg {

namespace detail {

template <typename T>
Tensor<T> center_crop_plane(const Tensor<T>& plane, int crop) {
  const int H = plane.dim(plane.ndim() - 2), W = plane.dim(plane.ndim() - 1);
  if (crop > H || crop > W)
    throw std::invalid_argument("preprocess: crop larger than image");
  const int y0 = (H - crop) / 2, x0 = (W - crop) / 2;
  const int C = plane.ndim() == 3 ? plane.dim(0) : 1;
  Shape out_shape = plane.ndim() == 3 ? Shape{C, crop, crop} : Shape{crop, crop};
  Tensor<T> out(out_shape);
  for (int c = 0; c < C; ++c)
    for (int y = 0; y < crop; ++y)
      for (int x = 0; x < crop; ++x) {
        const T v = plane.ndim() == 3 ? plane.at(c, y0 + y, x0 + x) : plane.at(y0 + y, x0 + x);
        if (plane.ndim() == 3)
          out.at(c, y, x) = v;
        else
          out.at(y, x) = v;
      }
  return out;
}

// Bilinear, align-corners-false; exact identity when sizes match.
template <typename T>
Tensor<float> resize_bilinear_plane(const Tensor<T>& plane, int out_size) {
  const int H = plane.dim(0), W = plane.dim(1);
  const double sy = double(H) / out_size, sx = double(W) / out_size;
  Tensor<float> out({out_size, out_size});
  for (int y = 0; y < out_size; ++y) {
    const auto ty = bilinear_tap(y, H, sy);
    for (int x = 0; x < out_size; ++x) {
      const auto tx = bilinear_tap(x, W, sx);
      const int y1 = H > 1 ? ty.lo + 1 : ty.lo;
      const int x1 = W > 1 ? tx.lo + 1 : tx.lo;
      const double v00 = double(plane.at(ty.lo, tx.lo)), v01 = double(plane.at(ty.lo, x1));
      const double v10 = double(plane.at(y1, tx.lo)), v11 = double(plane.at(y1, x1));
      const double top = v00 + (v01 - v00) * tx.frac;
      const double bot = v10 + (v11 - v10) * tx.frac;
      out.at(y, x) = float(top + (bot - top) * ty.frac);
    }
  }
  return out;
}

inline Mask resize_nearest_mask(const Mask& m, int out_size) {
  const int H = m.dim(0), W = m.dim(1);
  const double sy = double(H) / out_size, sx = double(W) / out_size;
  Mask out({out_size, out_size});
  for (int y = 0; y < out_size; ++y) {
    int src_y = int((y + 0.5) * sy);
    if (src_y >= H) src_y = H - 1;
    for (int x = 0; x < out_size; ++x) {
      int src_x = int((x + 0.5) * sx);
      if (src_x >= W) src_x = W - 1;
      out.at(y, x) = m.at(src_y, src_x) ? 1 : 0;  // re-binarize defensively
    }
  }
  return out;
}

}  // namespace detail

/// Center-crops to crop_size, then resizes to out_size: bilinear for RGB and
/// depth, nearest-neighbor for every mask. Because all masks of a sample
/// sample the same source pixel, subset relations between them survive.
inline DataSample preprocess(const DataSample& sample, int crop_size, int out_size) {
  if (crop_size < 1 || out_size < 1)
    throw std::invalid_argument("preprocess: sizes must be positive");
  DataSample out;
  out.id = sample.id;

  const Tensor<uint8_t> rgb_crop = detail::center_crop_plane(sample.rgb, crop_size);
  Tensor<uint8_t> rgb({3, out_size, out_size});
  for (int c = 0; c < 3; ++c) {
    Tensor<uint8_t> chan({crop_size, crop_size});
    for (int y = 0; y < crop_size; ++y)
      for (int x = 0; x < crop_size; ++x) chan.at(y, x) = rgb_crop.at(c, y, x);
    const Tensor<float> resized = detail::resize_bilinear_plane(chan, out_size);
    for (int64_t i = 0; i < resized.numel(); ++i) {
      float v = resized[i] + 0.5f;
      if (v < 0.0f) v = 0.0f;
      if (v > 255.0f) v = 255.0f;
      rgb[c * int64_t(out_size) * out_size + i] = uint8_t(v);
    }
  }
  out.rgb = std::move(rgb);
  out.depth_m =
      detail::resize_bilinear_plane(detail::center_crop_plane(sample.depth_m, crop_size), out_size);
  out.branch =
      detail::resize_nearest_mask(detail::center_crop_plane(sample.branch, crop_size), out_size);
  out.occluded =
      detail::resize_nearest_mask(detail::center_crop_plane(sample.occluded, crop_size), out_size);
  if (sample.occluder.numel())
    out.occluder =
        detail::resize_nearest_mask(detail::center_crop_plane(sample.occluder, crop_size), out_size);
  return out;
}

constexpr double kDepthRangeM = 4.0;  // depth channel normalization divisor

/// [4,H,W] float input: RGB / 255 then depth / 4 m clipped to [0,1].
inline Tensor<float> assemble_input(const DataSample& sample) {
  detail::check_plane_sizes(sample);
  const int H = sample.height(), W = sample.width();
  Tensor<float> input({4, H, W});
  for (int64_t i = 0; i < int64_t(3) * H * W; ++i) input[i] = float(sample.rgb[i]) / 255.0f;
  const int64_t depth_base = int64_t(3) * H * W;
  for (int64_t i = 0; i < sample.depth_m.numel(); ++i) {
    double v = double(sample.depth_m[i]) / kDepthRangeM;
    if (v > 1.0) v = 1.0;
    input[depth_base + i] = float(v);  // misses stay exactly 0
  }
  return input;
}

/// [1,H,W] float target in {0,1}.
inline Tensor<float> assemble_target(const DataSample& sample) {
  Tensor<float> target({1, sample.height(), sample.width()});
  for (int64_t i = 0; i < sample.branch.numel(); ++i) target[i] = sample.branch[i] ? 1.0f : 0.0f;
  return target;
}

struct Batch {
  Tensor<float> inputs;   // [N,4,H,W]
  Tensor<float> targets;  // [N,1,H,W]
  std::vector<std::string> ids;
};

inline Batch assemble_batch(const std::vector<DataSample>& samples) {
  if (samples.empty()) throw std::invalid_argument("assemble_batch: no samples");
  const int H = samples[0].height(), W = samples[0].width();
  for (const auto& s : samples)
    if (s.height() != H || s.width() != W)
      throw DataError("assemble_batch: mixed sample sizes (preprocess to a common size first)");
  const int N = int(samples.size());
  Batch batch;
  batch.inputs = Tensor<float>({N, 4, H, W});
  batch.targets = Tensor<float>({N, 1, H, W});
  for (int n = 0; n < N; ++n) {
    const Tensor<float> in = assemble_input(samples[size_t(n)]);
    const Tensor<float> tg = assemble_target(samples[size_t(n)]);
    for (int64_t i = 0; i < in.numel(); ++i) batch.inputs[int64_t(n) * in.numel() + i] = in[i];
    for (int64_t i = 0; i < tg.numel(); ++i) batch.targets[int64_t(n) * tg.numel() + i] = tg[i];
    batch.ids.push_back(samples[size_t(n)].id);
  }
  return batch;
}

/// Deterministic epoch iteration: a fresh Fisher-Yates shuffle per epoch,
/// batches of batch_size with the final partial batch kept.
inline std::vector<std::vector<std::string>> epoch_batches(std::vector<std::string> ids,
                                                           int batch_size, uint64_t shuffle_seed,
                                                           int epoch) {
  if (ids.empty()) throw std::invalid_argument("epoch_batches: empty split");
  if (batch_size < 1) throw std::invalid_argument("epoch_batches: batch size must be positive");
  Rng rng = Rng::derive(shuffle_seed, uint64_t(epoch));
  shuffle(ids, rng);
  std::vector<std::vector<std::string>> batches;
  for (size_t b = 0; b < ids.size(); b += size_t(batch_size)) {
    const size_t e = std::min(ids.size(), b + size_t(batch_size));
    batches.emplace_back(ids.begin() + int64_t(b), ids.begin() + int64_t(e));
  }
  return batches;
}

}  // namespace branchseg
