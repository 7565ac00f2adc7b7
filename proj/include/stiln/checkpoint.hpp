#pragma once

// Parameter checkpoints: <stem>.bin holds every tensor as little-endian f32,
// back to back in model order; <stem>.json maps name -> {offset, shape} with
// offsets in bytes. Batch-norm running statistics are stored alongside the
// trainable parameters.

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "stiln/io.hpp"
#include "stiln/model.hpp"

namespace stiln {

struct CheckpointPaths {
  std::filesystem::path index;
  std::filesystem::path data;
};

inline CheckpointPaths checkpoint_paths(const std::filesystem::path& stem) {
  return {std::filesystem::path(stem.string() + ".json"), std::filesystem::path(stem.string() + ".bin")};
}

template <typename T>
std::vector<NamedTensor<T>> checkpoint_entries(const Stiln<T>& model) {
  std::vector<NamedTensor<T>> all = model.parameters();
  for (auto& b : model.buffers()) all.push_back(b);
  return all;
}

template <typename T>
void save_checkpoint(const std::filesystem::path& stem, const Stiln<T>& model) {
  const auto paths = checkpoint_paths(stem);
  ordered_json index;
  index["format"] = "f32le";
  ordered_json entries = ordered_json::array();
  std::vector<char> body;
  for (const auto& e : checkpoint_entries(model)) {
    ordered_json item;
    item["name"] = e.name;
    item["offset"] = body.size();
    item["shape"] = e.tensor.shape();
    entries.push_back(item);
    for (T v : e.tensor.data()) detail::put_f32le(body, static_cast<float>(v));
  }
  index["bytes"] = body.size();
  index["tensors"] = entries;
  detail::write_file(paths.data, {}, body);
  write_json(paths.index, index);
}

// Loads into a model built from a matching config. Every entry of the index must
// be consumed exactly once and every model tensor must be present.
template <typename T>
void load_checkpoint(const std::filesystem::path& stem, Stiln<T>& model) {
  const auto paths = checkpoint_paths(stem);
  const json index = read_json(paths.index);
  const std::string data = detail::read_file(paths.data);
  const std::string what = "checkpoint " + stem.string();
  if (!index.contains("tensors") || !index["tensors"].is_array()) throw IoError(what + ": bad index");
  std::map<std::string, json> by_name;
  for (const auto& item : index["tensors"]) {
    const auto name = detail::header_field<std::string>(item, "name", what);
    if (!by_name.emplace(name, item).second) throw IoError(what + ": duplicate entry " + name);
  }
  auto entries = checkpoint_entries(model);
  if (entries.size() != by_name.size()) {
    throw IoError(what + ": index lists " + std::to_string(by_name.size()) + " tensors, model has " +
                  std::to_string(entries.size()));
  }
  for (auto& e : entries) {
    const auto it = by_name.find(e.name);
    if (it == by_name.end()) throw IoError(what + ": missing tensor " + e.name);
    const auto shape = detail::header_field<Shape>(it->second, "shape", what);
    if (shape != e.tensor.shape()) {
      throw InvalidShape(what + ": " + e.name + " has shape " + shape_str(shape) + ", model expects " +
                         shape_str(e.tensor.shape()));
    }
    const auto offset = detail::header_field<std::size_t>(it->second, "offset", what);
    const auto count = static_cast<std::size_t>(e.tensor.numel());
    if (offset % 4 != 0 || offset + 4 * count > data.size()) throw IoError(what + ": bad offset for " + e.name);
    const auto values = detail::decode_f32le(data.data() + offset, count);
    std::copy(values.begin(), values.end(), e.tensor.data().begin());
  }
}

}  // namespace stiln
