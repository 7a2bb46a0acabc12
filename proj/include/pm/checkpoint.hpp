#pragma once

#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "pm/module.hpp"

namespace pm {

// Archive layout: 8-byte magic, little-endian u64 manifest length, a JSON
// manifest (metadata plus array names/shapes/offsets), then the raw payload
// of all arrays as little-endian float32 in row-major order.
struct Checkpoint {
  nlohmann::json meta;  // config snapshot, step counter, anything run-scoped
  std::vector<std::pair<std::string, Tensor<float>>> arrays;

  const Tensor<float>* find(const std::string& name) const;
  void put(const std::string& name, Tensor<float> t);
};

void save_checkpoint(const std::string& path, const Checkpoint& ck);
Checkpoint load_checkpoint(const std::string& path);

// Stash every parameter under prefix+name, converted to float32 storage.
template <typename T>
void pack_params(Checkpoint& ck, const ParamSet<T>& ps, const std::string& prefix = "");

// Restore into already-registered parameters; any missing array or shape
// mismatch throws with the offending name.
template <typename T>
void unpack_params(const Checkpoint& ck, ParamSet<T>& ps, const std::string& prefix = "");

}  // namespace pm
