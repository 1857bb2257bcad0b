#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "oucr/common.hpp"
#include "oucr/model.hpp"
#include "oucr/tensor.hpp"

// Checkpoint format: a JSON index {name -> {shape, offset, count}} plus one
// little-endian raw blob. Round trips are bit-exact for the stored dtype.

namespace oucr {

template <class S>
constexpr const char* dtype_tag();
template <>
constexpr const char* dtype_tag<float>() {
  return "float32";
}
template <>
constexpr const char* dtype_tag<double>() {
  return "float64";
}

template <class S>
void checkpoint_save(const std::map<std::string, Tensor<S>>& tensors, const nlohmann::json& meta,
                     const std::string& json_path, const std::string& blob_path) {
  nlohmann::json index;
  index["version"] = 1;
  index["dtype"] = dtype_tag<S>();
  index["meta"] = meta;
  nlohmann::json entries = nlohmann::json::array();
  std::string blob;
  std::int64_t offset = 0;
  for (const auto& [name, t] : tensors) {
    nlohmann::json e;
    e["name"] = name;
    e["shape"] = t.shape();
    e["offset"] = offset;
    e["count"] = t.numel();
    entries.push_back(e);
    for (S v : t.data()) {
      if constexpr (sizeof(S) == 4)
        le::put_f32(blob, float(v));
      else
        le::put_f64(blob, double(v));
    }
    offset += t.numel() * std::int64_t(sizeof(S));
  }
  index["entries"] = entries;
  write_file_bytes(json_path, index.dump(2) + "\n");
  write_file_bytes(blob_path, blob);
}

template <class S>
struct Checkpoint {
  std::map<std::string, Tensor<S>> tensors;
  nlohmann::json meta;
};

template <class S>
Checkpoint<S> checkpoint_read(const std::string& json_path, const std::string& blob_path) {
  nlohmann::json index;
  try {
    index = nlohmann::json::parse(read_file_bytes(json_path));
  } catch (const nlohmann::json::exception& e) {
    throw DataError("checkpoint index " + json_path + ": " + e.what());
  }
  Checkpoint<S> ck;
  const std::string blob = read_file_bytes(blob_path);
  try {
    if (index.at("version").get<int>() != 1)
      throw DataError("checkpoint " + json_path + ": unsupported version");
    const std::string dtype = index.at("dtype").get<std::string>();
    if (dtype != dtype_tag<S>())
      throw DataError("checkpoint " + json_path + ": dtype " + dtype +
                      " does not match requested " + dtype_tag<S>());
    ck.meta = index.value("meta", nlohmann::json::object());
    std::int64_t expected_offset = 0;
    for (const auto& e : index.at("entries")) {
      const std::string name = e.at("name").get<std::string>();
      const Shape shape = e.at("shape").get<Shape>();
      const std::int64_t offset = e.at("offset").get<std::int64_t>();
      const std::int64_t count = e.at("count").get<std::int64_t>();
      if (count != shape_numel(shape) || offset != expected_offset)
        throw DataError("checkpoint " + json_path + ": inconsistent entry '" + name + "'");
      expected_offset += count * std::int64_t(sizeof(S));
      if (offset + count * std::int64_t(sizeof(S)) > std::int64_t(blob.size()))
        throw DataError("checkpoint blob " + blob_path + ": truncated, expected at least " +
                        std::to_string(offset + count * std::int64_t(sizeof(S))) +
                        " bytes, found " + std::to_string(blob.size()));
      std::vector<S> values(static_cast<std::size_t>(count));
      const unsigned char* p =
          reinterpret_cast<const unsigned char*>(blob.data()) + offset;
      for (std::int64_t i = 0; i < count; ++i) {
        if constexpr (sizeof(S) == 4)
          values[std::size_t(i)] = S(le::get_f32(p + 4 * i));
        else
          values[std::size_t(i)] = S(le::get_f64(p + 8 * i));
      }
      ck.tensors.emplace(name, Tensor<S>::from_data(shape, std::move(values)));
    }
    if (expected_offset != std::int64_t(blob.size()))
      throw DataError("checkpoint blob " + blob_path + ": expected " +
                      std::to_string(expected_offset) + " bytes, found " +
                      std::to_string(blob.size()));
  } catch (const nlohmann::json::exception& e) {
    throw DataError("checkpoint index " + json_path + ": " + e.what());
  }
  return ck;
}

/// Strict load into an existing parameter set: names and shapes must match
/// exactly. Values are copied into the live tensors so every view sees them.
template <class S>
nlohmann::json checkpoint_load_into(ParamSet<S>& params, const std::string& json_path,
                                    const std::string& blob_path) {
  Checkpoint<S> ck = checkpoint_read<S>(json_path, blob_path);
  for (auto& [name, t] : params.entries) {
    auto it = ck.tensors.find(name);
    if (it == ck.tensors.end())
      throw DataError("checkpoint " + json_path + ": missing parameter '" + name + "'");
    if (!shape_eq(it->second.shape(), t.shape()))
      throw DataError("checkpoint " + json_path + ": parameter '" + name + "' has shape " +
                      shape_str(it->second.shape()) + ", model expects " + shape_str(t.shape()));
    t.data() = it->second.data();
  }
  for (const auto& [name, t] : ck.tensors)
    if (!params.entries.count(name))
      throw DataError("checkpoint " + json_path + ": unexpected parameter '" + name + "'");
  return ck.meta;
}

}  // namespace oucr
