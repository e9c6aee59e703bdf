#pragma once

#include <nlohmann/json.hpp>
#include <stdexcept>
#include <string>
#include <vector>

#include "branchseg/core/shape.hpp"

namespace branchseg {

enum class ModelKind { pix2pix_generator, patchgan_discriminator, unet, deeplab };

inline std::string to_string(ModelKind k) {
  switch (k) {
    case ModelKind::pix2pix_generator: return "pix2pix_generator";
    case ModelKind::patchgan_discriminator: return "patchgan_discriminator";
    case ModelKind::unet: return "unet";
    case ModelKind::deeplab: return "deeplab";
  }
  throw std::invalid_argument("unknown model kind");
}

inline ModelKind model_kind_from(const std::string& s) {
  if (s == "pix2pix_generator") return ModelKind::pix2pix_generator;
  if (s == "patchgan_discriminator") return ModelKind::patchgan_discriminator;
  if (s == "unet") return ModelKind::unet;
  if (s == "deeplab") return ModelKind::deeplab;
  throw std::invalid_argument("unknown model kind: " + s);
}

struct ModelSpec {
  ModelKind kind = ModelKind::unet;
  int input_channels = 4;  // RGBD
  int base_width = 16;
  int input_size = 64;  // square, power of two

  // kind-specific
  int generator_blocks = 6;                        // pix2pix encoder/decoder depth
  std::vector<int> stage_depths = {2, 2, 2, 2};    // residual encoder stages
  std::vector<int> dilation_rates = {1, 6, 12, 18};  // deeplab ASPP, at 256 input

  void validate() const {
    check_shape(input_channels > 0, "input_channels must be positive");
    check_shape(base_width > 0, "base_width must be positive");
    check_shape(input_size > 0 && (input_size & (input_size - 1)) == 0,
                "input_size must be a positive power of two");
    if (kind == ModelKind::pix2pix_generator) {
      check_shape(generator_blocks >= 1, "generator needs at least one block");
      check_shape(input_size >> generator_blocks >= 1,
                  "input_size too small for the requested block count");
    }
    if (kind == ModelKind::unet || kind == ModelKind::deeplab) {
      check_shape(stage_depths.size() == 4, "encoder expects 4 stage depths");
      for (int d : stage_depths) check_shape(d >= 1, "stage depth must be >= 1");
    }
    if (kind == ModelKind::deeplab) {
      check_shape(!dilation_rates.empty(), "deeplab needs dilation rates");
      for (size_t i = 0; i < dilation_rates.size(); ++i) {
        check_shape(dilation_rates[i] > 0, "dilation rates must be positive");
        for (size_t j = i + 1; j < dilation_rates.size(); ++j)
          check_shape(dilation_rates[i] != dilation_rates[j], "dilation rates must be distinct");
      }
      check_shape(input_size >= 16, "deeplab needs input_size >= 16");
    }
  }
};

inline nlohmann::json to_json(const ModelSpec& s) {
  nlohmann::json arch;
  switch (s.kind) {
    case ModelKind::pix2pix_generator: arch["generator_blocks"] = s.generator_blocks; break;
    case ModelKind::patchgan_discriminator: break;
    case ModelKind::unet: arch["stage_depths"] = s.stage_depths; break;
    case ModelKind::deeplab:
      arch["stage_depths"] = s.stage_depths;
      arch["dilation_rates"] = s.dilation_rates;
      break;
  }
  return {{"kind", to_string(s.kind)},
          {"input_channels", s.input_channels},
          {"base_width", s.base_width},
          {"input_size", s.input_size},
          {"arch_params", arch}};
}

inline ModelSpec model_spec_from_json(const nlohmann::json& j) {
  ModelSpec s;
  s.kind = model_kind_from(j.at("kind").get<std::string>());
  s.input_channels = j.at("input_channels").get<int>();
  s.base_width = j.at("base_width").get<int>();
  s.input_size = j.at("input_size").get<int>();
  const auto& arch = j.at("arch_params");
  if (arch.contains("generator_blocks")) s.generator_blocks = arch["generator_blocks"].get<int>();
  if (arch.contains("stage_depths")) s.stage_depths = arch["stage_depths"].get<std::vector<int>>();
  if (arch.contains("dilation_rates"))
    s.dilation_rates = arch["dilation_rates"].get<std::vector<int>>();
  s.validate();
  return s;
}

/// Desk-scale preset: 64x64 inputs, narrow widths, shallow generator.
inline ModelSpec tiny_spec(ModelKind kind) {
  ModelSpec s;
  s.kind = kind;
  s.input_channels = kind == ModelKind::patchgan_discriminator ? 5 : 4;
  s.base_width = 16;
  s.input_size = 64;
  s.generator_blocks = 6;
  return s;
}

/// Full-scale preset: 256x256 inputs, 8-block generator.
inline ModelSpec full_spec(ModelKind kind) {
  ModelSpec s;
  s.kind = kind;
  s.input_channels = kind == ModelKind::patchgan_discriminator ? 5 : 4;
  s.base_width = 64;
  s.input_size = 256;
  s.generator_blocks = 8;
  return s;
}

}  // namespace branchseg
