#pragma once

// On-disk dataset model: one PNG per plane under
//   <root>/{rgb,depth,branch,occluded,occluder}/<id>.png
// plus a versioned manifest.json listing every sample, its split and the
// dataset-wide class statistics. All manifest paths are relative to the
// manifest's own directory so a dataset directory can be moved wholesale.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "branchseg/core/errors.hpp"
#include "branchseg/core/tensor.hpp"
#include "branchseg/data/png_io.hpp"

namespace branchseg {

/// A fully loaded sample: image planes plus oracle masks. The occluder mask
/// may be empty for datasets that only annotate the occluded branch class.
struct DataSample {
  std::string id;
  Tensor<uint8_t> rgb;    // [3,H,W]
  Tensor<float> depth_m;  // [H,W] meters, 0 = no reading
  Mask branch;            // [H,W]
  Mask occluded;          // [H,W] branch pixels hidden by an occluder
  Mask occluder;          // [H,W] all occluding foreground, may be empty

  int height() const { return branch.dim(0); }
  int width() const { return branch.dim(1); }
};

enum class Split { train, val };

inline const char* to_string(Split s) { return s == Split::train ? "train" : "val"; }

inline Split split_from_string(const std::string& name) {
  if (name == "train") return Split::train;
  if (name == "val") return Split::val;
  throw DataError("unknown split: " + name);
}

struct ManifestEntry {
  std::string id;
  Split split = Split::train;
  std::string rgb, depth, branch, occluded, occluder;  // relative paths; occluder optional
};

struct ManifestStats {
  double branch_fraction = 0.0;    // branch pixels / all pixels
  double occluded_fraction = 0.0;  // occluded-branch pixels / all pixels
};

struct Manifest {
  int version = 1;
  std::vector<ManifestEntry> samples;
  ManifestStats stats;

  std::vector<std::string> ids(Split split) const {
    std::vector<std::string> out;
    for (const auto& e : samples)
      if (e.split == split) out.push_back(e.id);
    return out;
  }
  const ManifestEntry& entry(const std::string& id) const {
    for (const auto& e : samples)
      if (e.id == id) return e;
    throw DataError("manifest has no sample with id " + id);
  }
};

namespace detail {

inline void check_plane_sizes(const DataSample& s) {
  const bool ok = s.rgb.ndim() == 3 && s.rgb.dim(0) == 3 && s.depth_m.ndim() == 2 &&
                  s.branch.ndim() == 2 && s.occluded.ndim() == 2 &&
                  s.rgb.dim(1) == s.branch.dim(0) && s.rgb.dim(2) == s.branch.dim(1) &&
                  s.depth_m.shape() == s.branch.shape() && s.occluded.same_shape(s.branch) &&
                  (!s.occluder.numel() || s.occluder.same_shape(s.branch));
  if (!ok) throw DataError("sample " + s.id + ": plane sizes disagree");
}

}  // namespace detail

/// Millimeter-quantized float depth plane -> 16-bit storage values.
inline Tensor<uint16_t> depth_to_millimeters(const Tensor<float>& depth_m) {
  Tensor<uint16_t> mm(depth_m.shape());
  for (int64_t i = 0; i < depth_m.numel(); ++i) {
    const double v = double(depth_m[i]) * 1000.0;
    if (v < 0.0 || v > 65535.0) throw DataError("depth out of 16-bit millimeter range");
    mm[i] = uint16_t(v + 0.5);
  }
  return mm;
}

inline Tensor<float> depth_from_millimeters(const Tensor<uint16_t>& mm) {
  Tensor<float> d(mm.shape());
  for (int64_t i = 0; i < mm.numel(); ++i) d[i] = float(mm[i]) / 1000.0f;
  return d;
}

/// Writes all planes of a sample under the standard layout and returns the
/// manifest entry with paths relative to `root`.
inline ManifestEntry save_sample(const std::filesystem::path& root, const DataSample& sample,
                                 Split split) {
  detail::check_plane_sizes(sample);
  namespace fs = std::filesystem;
  ManifestEntry e;
  e.id = sample.id;
  e.split = split;
  auto plane_path = [&](const char* plane) {
    fs::create_directories(root / plane);
    return std::pair<std::string, fs::path>(std::string(plane) + "/" + sample.id + ".png",
                                            root / plane / (sample.id + ".png"));
  };
  auto [rgb_rel, rgb_abs] = plane_path("rgb");
  write_png_rgb8(rgb_abs.string(), sample.rgb);
  e.rgb = rgb_rel;
  auto [depth_rel, depth_abs] = plane_path("depth");
  write_png_depth16(depth_abs.string(), depth_to_millimeters(sample.depth_m));
  e.depth = depth_rel;
  auto [branch_rel, branch_abs] = plane_path("branch");
  write_png_mask(branch_abs.string(), sample.branch);
  e.branch = branch_rel;
  auto [occ_rel, occ_abs] = plane_path("occluded");
  write_png_mask(occ_abs.string(), sample.occluded);
  e.occluded = occ_rel;
  if (sample.occluder.numel()) {
    auto [occr_rel, occr_abs] = plane_path("occluder");
    write_png_mask(occr_abs.string(), sample.occluder);
    e.occluder = occr_rel;
  }
  return e;
}

inline DataSample load_sample(const std::filesystem::path& manifest_dir,
                              const ManifestEntry& entry) {
  DataSample s;
  s.id = entry.id;
  s.rgb = read_png_rgb8((manifest_dir / entry.rgb).string());
  s.depth_m = depth_from_millimeters(read_png_depth16((manifest_dir / entry.depth).string()));
  s.branch = read_png_mask((manifest_dir / entry.branch).string());
  s.occluded = read_png_mask((manifest_dir / entry.occluded).string());
  if (!entry.occluder.empty())
    s.occluder = read_png_mask((manifest_dir / entry.occluder).string());
  detail::check_plane_sizes(s);
  return s;
}

/// Recomputes dataset statistics by reading every branch/occluded mask.
inline ManifestStats compute_stats(const std::filesystem::path& manifest_dir,
                                   const std::vector<ManifestEntry>& entries) {
  int64_t total = 0, branch = 0, occluded = 0;
  for (const auto& e : entries) {
    const Mask b = read_png_mask((manifest_dir / e.branch).string());
    const Mask o = read_png_mask((manifest_dir / e.occluded).string());
    total += b.numel();
    for (int64_t i = 0; i < b.numel(); ++i) {
      branch += b[i];
      occluded += o[i];
    }
  }
  ManifestStats stats;
  if (total > 0) {
    stats.branch_fraction = double(branch) / double(total);
    stats.occluded_fraction = double(occluded) / double(total);
  }
  return stats;
}

inline nlohmann::json to_json(const Manifest& m) {
  nlohmann::json samples = nlohmann::json::array();
  for (const auto& e : m.samples) {
    nlohmann::json j{{"id", e.id},       {"split", to_string(e.split)}, {"rgb", e.rgb},
                     {"depth", e.depth}, {"branch", e.branch},          {"occluded", e.occluded}};
    if (!e.occluder.empty()) j["occluder"] = e.occluder;
    samples.push_back(std::move(j));
  }
  return nlohmann::json{{"version", m.version},
                        {"samples", std::move(samples)},
                        {"stats",
                         {{"branch_fraction", m.stats.branch_fraction},
                          {"occluded_fraction", m.stats.occluded_fraction}}}};
}

inline void save_manifest(const std::filesystem::path& path, const Manifest& m) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write manifest: " + path.string());
  out << to_json(m).dump(2) << "\n";
}

/// Parses and validates a manifest: unique ids, known version, and every
/// referenced plane file present on disk.
inline Manifest load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open manifest: " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw DataError("malformed manifest " + path.string() + ": " + e.what());
  }
  Manifest m;
  try {
    m.version = j.at("version").get<int>();
    if (m.version != 1) throw DataError("unsupported manifest version");
    for (const auto& js : j.at("samples")) {
      ManifestEntry e;
      e.id = js.at("id").get<std::string>();
      e.split = split_from_string(js.at("split").get<std::string>());
      e.rgb = js.at("rgb").get<std::string>();
      e.depth = js.at("depth").get<std::string>();
      e.branch = js.at("branch").get<std::string>();
      e.occluded = js.at("occluded").get<std::string>();
      if (js.contains("occluder")) e.occluder = js.at("occluder").get<std::string>();
      m.samples.push_back(std::move(e));
    }
    const auto& stats = j.at("stats");
    m.stats.branch_fraction = stats.at("branch_fraction").get<double>();
    m.stats.occluded_fraction = stats.at("occluded_fraction").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw DataError("manifest " + path.string() + " missing fields: " + e.what());
  }

  std::set<std::string> seen;
  const auto dir = path.parent_path();
  for (const auto& e : m.samples) {
    if (!seen.insert(e.id).second) throw DataError("duplicate sample id: " + e.id);
    for (const std::string* rel : {&e.rgb, &e.depth, &e.branch, &e.occluded, &e.occluder}) {
      if (rel->empty()) continue;  // occluder plane is optional
      if (!std::filesystem::exists(dir / *rel))
        throw DataError("manifest references missing file: " + (dir / *rel).string());
    }
  }
  return m;
}

}  // namespace branchseg
