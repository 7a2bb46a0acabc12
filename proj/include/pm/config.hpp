#pragma once

#include <string>

#include <json.hpp>

#include "pm/data.hpp"
#include "pm/evaluation.hpp"
#include "pm/networks.hpp"
#include "pm/training.hpp"

namespace pm {

struct DataConfig {
  long scenes = 8;
  long frames_per_scene = 40;
  long height = 64;
  long width = 128;
  bool with_depth = true;
  std::string root;  // existing dataset directory; empty generates scenes
  long crop_w = 0, crop_h = 0;  // disk-loading center crop, 0 keeps full frames
  long out_w = 0, out_h = 0;    // disk-loading resize, 0 keeps the crop size
};

struct AppConfig {
  uint64_t seed = 1;
  std::string device = "cpu";
  DataConfig data;
  NetworkConfig model;
  TrainConfig train;
  EvalConfig eval;
  CorruptionParams corruption;
};

// Partial JSON trees are fine: absent keys keep defaults, unknown keys throw
// naming the offending dotted path.
AppConfig config_from_json(const nlohmann::json& j);
AppConfig load_config_file(const std::string& path);
nlohmann::json to_json(const AppConfig& cfg);

// "section.key=value"; value syntax is JSON for everything but strings
void apply_override(AppConfig& cfg, const std::string& assignment);

nlohmann::json network_to_json(const NetworkConfig& cfg);
NetworkConfig network_from_json(const nlohmann::json& j);

}  // namespace pm
