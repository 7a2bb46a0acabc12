#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "pm/config.hpp"

using namespace pm;

TEST_CASE("defaults survive a json round trip") {
  AppConfig def;
  nlohmann::json j = to_json(def);
  AppConfig back = config_from_json(j);
  CHECK(to_json(back) == j);
  CHECK(back.train.epochs == 20);
  CHECK(back.train.lr_initial == 1e-4);
  CHECK(back.train.weights.lambda_sd == 4.0);
  CHECK(back.model.encoder.stage_widths == std::vector<long>{16, 32, 64, 128, 256});
  CHECK(back.model.num_prompts == 5);
  CHECK(back.corruption.night.gamma == 2.2);
  CHECK(back.eval.caps == std::vector<double>{40, 60, 80});
}

TEST_CASE("partial trees override only what they mention") {
  nlohmann::json j = {{"seed", 9},
                      {"train", {{"epochs", 3}, {"use_sd_loss", false}}},
                      {"model", {{"widths", {8, 16, 32}}, {"use_gcpa", false}}}};
  AppConfig cfg = config_from_json(j);
  CHECK(cfg.seed == 9);
  CHECK(cfg.train.epochs == 3);
  CHECK(cfg.train.use_sd_loss == false);
  CHECK(cfg.model.encoder.stage_widths == std::vector<long>{8, 16, 32});
  CHECK(cfg.model.use_gcpa == false);
  CHECK(cfg.train.batch_size == 6);  // untouched default
  CHECK(cfg.data.height == 64);
}

TEST_CASE("unknown keys are rejected by name") {
  nlohmann::json typo = {{"train", {{"epoch", 3}}}};
  CHECK_THROWS_WITH_AS(config_from_json(typo),
                       doctest::Contains("unknown config key: train.epoch"), std::invalid_argument);
  nlohmann::json bogus = {{"bogus", 1}};
  CHECK_THROWS_WITH_AS(config_from_json(bogus), doctest::Contains("bogus"), std::invalid_argument);
  CHECK_THROWS_AS(config_from_json(nlohmann::json::array()), std::invalid_argument);
}

TEST_CASE("type mismatches name the key and the expected type") {
  nlohmann::json text_epochs = {{"train", {{"epochs", "lots"}}}};
  CHECK_THROWS_WITH_AS(config_from_json(text_epochs), doctest::Contains("train.epochs"),
                       std::invalid_argument);
  nlohmann::json negative_seed = {{"seed", -4}};
  CHECK_THROWS_WITH_AS(config_from_json(negative_seed), doctest::Contains("nonnegative"),
                       std::invalid_argument);
  nlohmann::json mixed_widths = {{"model", {{"widths", {1, "a"}}}}};
  CHECK_THROWS_AS(config_from_json(mixed_widths), std::invalid_argument);
  nlohmann::json bool_epochs = {{"train", {{"epochs", true}}}};
  CHECK_THROWS_AS(config_from_json(bool_epochs), std::invalid_argument);
  nlohmann::json numeric_device = {{"device", 3}};
  CHECK_THROWS_AS(config_from_json(numeric_device), std::invalid_argument);
}

TEST_CASE("dotted overrides parse values as json literals") {
  AppConfig cfg;
  apply_override(cfg, "train.lr_initial=0.002");
  CHECK(cfg.train.lr_initial == 0.002);
  apply_override(cfg, "model.widths=[8,16,32]");
  CHECK(cfg.model.encoder.stage_widths == std::vector<long>{8, 16, 32});
  apply_override(cfg, "train.use_sd_loss=false");
  CHECK(cfg.train.use_sd_loss == false);
  apply_override(cfg, "device=accelerator");
  CHECK(cfg.device == "accelerator");
  apply_override(cfg, "data.root=/tmp/somewhere");
  CHECK(cfg.data.root == "/tmp/somewhere");
  apply_override(cfg, "eval.caps=[40]");
  CHECK(cfg.eval.caps == std::vector<double>{40});
  apply_override(cfg, "seed=42");
  CHECK(cfg.seed == 42);

  CHECK_THROWS_WITH_AS(apply_override(cfg, "no_equals_here"), doctest::Contains("key=value"),
                       std::invalid_argument);
  CHECK_THROWS_WITH_AS(apply_override(cfg, "bogus.key=1"), doctest::Contains("bogus.key"),
                       std::invalid_argument);
  CHECK_THROWS_AS(apply_override(cfg, "train.epochs=maybe"), std::invalid_argument);
}

TEST_CASE("config files load with named failures") {
  namespace fs = std::filesystem;
  fs::path dir = fs::temp_directory_path() / "pm_config_test";
  fs::remove_all(dir);
  fs::create_directories(dir);

  AppConfig cfg;
  cfg.train.epochs = 7;
  cfg.data.width = 96;
  fs::path good = dir / "good.json";
  std::ofstream(good) << to_json(cfg).dump(2);
  AppConfig loaded = load_config_file(good.string());
  CHECK(loaded.train.epochs == 7);
  CHECK(loaded.data.width == 96);
  CHECK(to_json(loaded) == to_json(cfg));

  CHECK_THROWS_WITH_AS(load_config_file((dir / "missing.json").string()),
                       doctest::Contains("missing.json"), std::invalid_argument);
  fs::path bad = dir / "bad.json";
  std::ofstream(bad) << "{ not json";
  CHECK_THROWS_WITH_AS(load_config_file(bad.string()), doctest::Contains("bad.json"),
                       std::invalid_argument);
  fs::remove_all(dir);
}

TEST_CASE("network config json carries every architectural choice") {
  NetworkConfig nc;
  nc.encoder.stage_widths = {4, 6, 8};
  nc.scales = 2;
  nc.num_prompts = 3;
  nc.attention.heads = 2;
  nc.attention.qkv_bias = false;
  nc.attention.gdfn_expansion = 1.5;
  nc.range.min_depth = 0.2;
  nc.range.max_depth = 50.0;
  nc.use_gcpa = false;
  nc.use_cgpb = false;

  NetworkConfig back = network_from_json(network_to_json(nc));
  CHECK(back.encoder.stage_widths == nc.encoder.stage_widths);
  CHECK(back.scales == nc.scales);
  CHECK(back.num_prompts == nc.num_prompts);
  CHECK(back.attention.heads == nc.attention.heads);
  CHECK(back.attention.qkv_bias == nc.attention.qkv_bias);
  CHECK(back.attention.gdfn_expansion == nc.attention.gdfn_expansion);
  CHECK(back.range.min_depth == nc.range.min_depth);
  CHECK(back.range.max_depth == nc.range.max_depth);
  CHECK(back.use_gcpa == nc.use_gcpa);
  CHECK(back.use_cgpb == nc.use_cgpb);

  nlohmann::json unknown_field = {{"stages", 5}};
  CHECK_THROWS_WITH_AS(network_from_json(unknown_field), doctest::Contains("model.stages"),
                       std::invalid_argument);
}
