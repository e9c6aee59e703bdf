#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <nlohmann/json.hpp>
#include <stdexcept>
#include <string>

#include "branchseg/models/model.hpp"

namespace branchseg {

/// Weight file: an 8-byte little-endian header length, a JSON header holding
/// the model spec plus a "tensors" array of {name, shape} entries in
/// serialization order, then the tensors as raw 32-bit little-endian floats.
/// Parameters come first, then the persistent buffers (running stats), so a
/// load reproduces forward output bitwise.
namespace detail {

inline void write_u64_le(std::ostream& os, uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = (unsigned char)((v >> (8 * i)) & 0xff);
  os.write(reinterpret_cast<const char*>(b), 8);
}

inline uint64_t read_u64_le(std::istream& is) {
  unsigned char b[8];
  is.read(reinterpret_cast<char*>(b), 8);
  if (!is) throw std::runtime_error("weight file truncated in header length");
  uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= uint64_t(b[i]) << (8 * i);
  return v;
}

template <typename T>
void write_f32(std::ostream& os, const Tensor<T>& t) {
  for (int64_t i = 0; i < t.numel(); ++i) {
    float f = float(t[i]);
    static_assert(sizeof(float) == 4);
    os.write(reinterpret_cast<const char*>(&f), 4);
  }
}

template <typename T>
void read_f32(std::istream& is, Tensor<T>& t) {
  for (int64_t i = 0; i < t.numel(); ++i) {
    float f;
    is.read(reinterpret_cast<char*>(&f), 4);
    if (!is) throw std::runtime_error("weight file truncated in payload");
    t[i] = T(f);
  }
}

}  // namespace detail

template <typename T>
void save_weights(const Model<T>& model, const std::string& path) {
  nlohmann::json tensors = nlohmann::json::array();
  auto entry = [](const std::string& name, const Shape& shape) {
    return nlohmann::json{{"name", name}, {"shape", shape}};
  };
  for (auto& [name, v] : model.registry.params) tensors.push_back(entry(name, v->value.shape()));
  for (auto& [name, b] : model.registry.buffers) tensors.push_back(entry(name, b->shape()));
  nlohmann::json header{{"spec", to_json(model.spec)}, {"tensors", std::move(tensors)}};

  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open " + path + " for writing");
  const std::string hs = header.dump();
  detail::write_u64_le(os, hs.size());
  os.write(hs.data(), std::streamsize(hs.size()));
  for (auto& [name, v] : model.registry.params) detail::write_f32(os, v->value);
  for (auto& [name, b] : model.registry.buffers) detail::write_f32(os, *b);
  if (!os) throw std::runtime_error("write failed for " + path);
}

namespace detail {

inline nlohmann::json read_weight_header(std::istream& is, const std::string& path) {
  const uint64_t hlen = read_u64_le(is);
  std::string hs(hlen, '\0');
  is.read(hs.data(), std::streamsize(hlen));
  if (!is) throw std::runtime_error("weight file truncated in header: " + path);
  try {
    return nlohmann::json::parse(hs);
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("weight file header is not valid JSON: " + path);
  }
}

template <typename T>
void read_tensor_payload(std::istream& is, const nlohmann::json& tensors, Model<T>& model) {
  const size_t expected = model.registry.params.size() + model.registry.buffers.size();
  if (tensors.size() != expected)
    throw std::runtime_error("weight file lists " + std::to_string(tensors.size()) +
                             " tensors, model has " + std::to_string(expected));
  size_t idx = 0;
  auto check_and_read = [&](const std::string& name, Tensor<T>& dst) {
    const auto& e = tensors.at(idx++);
    if (e.at("name").get<std::string>() != name)
      throw std::runtime_error("weight mismatch: expected " + name + ", file has " +
                               e.at("name").get<std::string>());
    if (e.at("shape").get<Shape>() != dst.shape())
      throw std::runtime_error("shape mismatch for " + name);
    read_f32(is, dst);
  };
  for (auto& [name, v] : model.registry.params) check_and_read(name, v->value);
  for (auto& [name, b] : model.registry.buffers) check_and_read(name, *b);
}

}  // namespace detail

/// Loads weights into an already-built model; names and shapes must match the
/// registry exactly (same spec, same serialization order).
template <typename T>
void load_weights(Model<T>& model, const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path);
  const nlohmann::json header = detail::read_weight_header(is, path);
  detail::read_tensor_payload(is, header.at("tensors"), model);
}

/// Rebuilds the model from the spec embedded in the file, then loads its
/// weights, so a weight file alone fully determines the network.
template <typename T>
Model<T> load_model(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path);
  const nlohmann::json header = detail::read_weight_header(is, path);
  Model<T> model = build_model<T>(model_spec_from_json(header.at("spec")), 0);
  detail::read_tensor_payload(is, header.at("tensors"), model);
  return model;
}

}  // namespace branchseg
