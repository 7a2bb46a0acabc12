#include "pm/config.hpp"

#include <fstream>
#include <functional>
#include <stdexcept>
#include <variant>
#include <vector>

namespace pm {

namespace {

using FieldRef = std::variant<long*, uint64_t*, double*, bool*, std::string*, std::vector<long>*,
                              std::vector<double>*>;

std::vector<std::pair<std::string, FieldRef>> bindings(AppConfig& c) {
  return {
      {"seed", &c.seed},
      {"device", &c.device},
      {"data.scenes", &c.data.scenes},
      {"data.frames_per_scene", &c.data.frames_per_scene},
      {"data.height", &c.data.height},
      {"data.width", &c.data.width},
      {"data.with_depth", &c.data.with_depth},
      {"data.root", &c.data.root},
      {"data.crop_w", &c.data.crop_w},
      {"data.crop_h", &c.data.crop_h},
      {"data.out_w", &c.data.out_w},
      {"data.out_h", &c.data.out_h},
      {"model.widths", &c.model.encoder.stage_widths},
      {"model.scales", &c.model.scales},
      {"model.num_prompts", &c.model.num_prompts},
      {"model.heads", &c.model.attention.heads},
      {"model.qkv_bias", &c.model.attention.qkv_bias},
      {"model.gdfn_expansion", &c.model.attention.gdfn_expansion},
      {"model.min_depth", &c.model.range.min_depth},
      {"model.max_depth", &c.model.range.max_depth},
      {"model.use_gcpa", &c.model.use_gcpa},
      {"model.use_cgpb", &c.model.use_cgpb},
      {"train.epochs", &c.train.epochs},
      {"train.steps_per_epoch", &c.train.steps_per_epoch},
      {"train.batch_size", &c.train.batch_size},
      {"train.lr_initial", &c.train.lr_initial},
      {"train.lr_final", &c.train.lr_final},
      {"train.lr_drop_epoch", &c.train.lr_drop_epoch},
      {"train.w_photometric", &c.train.weights.lambda_p},
      {"train.w_self_distill", &c.train.weights.lambda_sd},
      {"train.w_smooth", &c.train.weights.lambda_smooth},
      {"train.use_sd_loss", &c.train.use_sd_loss},
      {"train.grad_clip", &c.train.grad_clip},
      {"train.checkpoint_every", &c.train.checkpoint_every},
      {"eval.caps", &c.eval.caps},
      {"eval.min_depth", &c.eval.min_depth},
      {"eval.median_scale", &c.eval.median_scale},
      {"corruption.night.gamma", &c.corruption.night.gamma},
      {"corruption.night.brightness", &c.corruption.night.brightness},
      {"corruption.night.bloom_spots", &c.corruption.night.bloom_spots},
      {"corruption.night.bloom_sigma_lo", &c.corruption.night.bloom_sigma_lo},
      {"corruption.night.bloom_sigma_hi", &c.corruption.night.bloom_sigma_hi},
      {"corruption.night.bloom_gain_lo", &c.corruption.night.bloom_gain_lo},
      {"corruption.night.bloom_gain_hi", &c.corruption.night.bloom_gain_hi},
      {"corruption.night.noise_sigma", &c.corruption.night.noise_sigma},
      {"corruption.rain.blend", &c.corruption.rain.blend},
      {"corruption.rain.band", &c.corruption.rain.band},
      {"corruption.rain.contrast", &c.corruption.rain.contrast},
      {"corruption.rain.desaturate", &c.corruption.rain.desaturate},
  };
}

[[noreturn]] void type_error(const std::string& key, const char* want) {
  throw std::invalid_argument("config key " + key + ": expected " + want);
}

void assign(const std::string& key, FieldRef ref, const nlohmann::json& v) {
  std::visit(
      [&](auto* p) {
        using P = std::remove_pointer_t<decltype(p)>;
        if constexpr (std::is_same_v<P, long>) {
          if (!v.is_number_integer() && !v.is_number_unsigned()) type_error(key, "an integer");
          *p = v.get<long>();
        } else if constexpr (std::is_same_v<P, uint64_t>) {
          if (!(v.is_number_unsigned() || (v.is_number_integer() && v.get<long long>() >= 0)))
            type_error(key, "a nonnegative integer");
          *p = v.get<uint64_t>();
        } else if constexpr (std::is_same_v<P, double>) {
          if (!v.is_number()) type_error(key, "a number");
          *p = v.get<double>();
        } else if constexpr (std::is_same_v<P, bool>) {
          if (!v.is_boolean()) type_error(key, "a boolean");
          *p = v.get<bool>();
        } else if constexpr (std::is_same_v<P, std::string>) {
          if (!v.is_string()) type_error(key, "a string");
          *p = v.get<std::string>();
        } else if constexpr (std::is_same_v<P, std::vector<long>>) {
          if (!v.is_array()) type_error(key, "an integer array");
          for (const auto& e : v)
            if (!e.is_number_integer() && !e.is_number_unsigned())
              type_error(key, "an integer array");
          *p = v.get<std::vector<long>>();
        } else {
          if (!v.is_array()) type_error(key, "a number array");
          for (const auto& e : v)
            if (!e.is_number()) type_error(key, "a number array");
          *p = v.get<std::vector<double>>();
        }
      },
      ref);
}

nlohmann::json read_back(FieldRef ref) {
  return std::visit([](auto* p) { return nlohmann::json(*p); }, ref);
}

void flatten(const nlohmann::json& j, const std::string& prefix,
             std::vector<std::pair<std::string, nlohmann::json>>& out) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    std::string key = prefix.empty() ? it.key() : prefix + "." + it.key();
    if (it.value().is_object())
      flatten(it.value(), key, out);
    else
      out.emplace_back(key, it.value());
  }
}

void apply_flat(AppConfig& cfg, const std::string& key, const nlohmann::json& value) {
  for (auto& [name, ref] : bindings(cfg)) {
    if (name == key) {
      assign(key, ref, value);
      return;
    }
  }
  throw std::invalid_argument("unknown config key: " + key);
}

}  // namespace

AppConfig config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw std::invalid_argument("config root must be a JSON object");
  AppConfig cfg;
  std::vector<std::pair<std::string, nlohmann::json>> flat;
  flatten(j, "", flat);
  for (const auto& [key, value] : flat) apply_flat(cfg, key, value);
  return cfg;
}

AppConfig load_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot open config file: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument("config file " + path + ": " + e.what());
  }
  return config_from_json(j);
}

nlohmann::json to_json(const AppConfig& cfg) {
  nlohmann::json out = nlohmann::json::object();
  for (auto& [name, ref] : bindings(const_cast<AppConfig&>(cfg))) {
    std::string pointer = "/" + name;
    for (auto& ch : pointer)
      if (ch == '.') ch = '/';
    out[nlohmann::json::json_pointer(pointer)] = read_back(ref);
  }
  return out;
}

void apply_override(AppConfig& cfg, const std::string& assignment) {
  auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0)
    throw std::invalid_argument("override must look like section.key=value: " + assignment);
  std::string key = assignment.substr(0, eq);
  std::string raw = assignment.substr(eq + 1);

  nlohmann::json value = nlohmann::json::parse(raw, nullptr, false);
  if (value.is_discarded()) value = raw;  // bare strings stay strings
  try {
    apply_flat(cfg, key, value);
  } catch (const std::invalid_argument&) {
    // a quoted-string target may have been handed a parseable literal
    if (!value.is_string()) {
      apply_flat(cfg, key, nlohmann::json(raw));
      return;
    }
    throw;
  }
}

nlohmann::json network_to_json(const NetworkConfig& cfg) {
  AppConfig tmp;
  tmp.model = cfg;
  return to_json(tmp)["model"];
}

NetworkConfig network_from_json(const nlohmann::json& j) {
  return config_from_json(nlohmann::json{{"model", j}}).model;
}

}  // namespace pm
