#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "pm/config.hpp"
#include "pm/data.hpp"
#include "pm/evaluation.hpp"
#include "pm/gradcheck.hpp"
#include "pm/image_io.hpp"
#include "pm/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct CommonArgs {
  std::string config_path, out_dir, device;
  std::vector<std::string> sets;
  long long seed = -1;  // negative means not given
};

void add_common(CLI::App* sub, CommonArgs& c, bool out_required) {
  sub->add_option("--config", c.config_path, "JSON config file");
  auto* out = sub->add_option("--out", c.out_dir, "output directory");
  if (out_required) out->required();
  sub->add_option("--set", c.sets, "config override section.key=value, repeatable");
  sub->add_option("--seed", c.seed, "top-level seed")->check(CLI::NonNegativeNumber);
  sub->add_option("--device", c.device, "compute device")
      ->check(CLI::IsMember({"cpu", "accelerator"}));
}

pm::AppConfig resolve(const CommonArgs& c) {
  pm::AppConfig cfg = c.config_path.empty() ? pm::AppConfig{} : pm::load_config_file(c.config_path);
  for (const auto& s : c.sets) pm::apply_override(cfg, s);
  if (c.seed >= 0) cfg.seed = static_cast<uint64_t>(c.seed);
  if (!c.device.empty()) cfg.device = c.device;
  if (cfg.device != "cpu" && cfg.device != "accelerator")
    throw std::invalid_argument("config key device: must be cpu or accelerator");
  if (cfg.device == "accelerator")
    throw std::invalid_argument("config key device: no accelerator backend in this build");
  cfg.train.seed = cfg.seed;
  cfg.eval.seed = cfg.seed;
  return cfg;
}

void write_snapshot(const std::string& out_dir, const pm::AppConfig& cfg) {
  fs::create_directories(out_dir);
  std::ofstream f(fs::path(out_dir) / "config.json");
  if (!f) throw std::runtime_error("cannot write config snapshot in " + out_dir);
  f << pm::to_json(cfg).dump(2) << "\n";
}

void require_file(const std::string& path, const char* what) {
  if (!fs::exists(path))
    throw std::invalid_argument(std::string(what) + " not found: " + path);
}

uint64_t data_fingerprint(const pm::AppConfig& cfg) {
  const std::string key = "scenes=" + std::to_string(cfg.data.scenes) +
                          ";frames=" + std::to_string(cfg.data.frames_per_scene) +
                          ";h=" + std::to_string(cfg.data.height) +
                          ";w=" + std::to_string(cfg.data.width) +
                          ";seed=" + std::to_string(cfg.seed);
  uint64_t h = 1469598103934665603ull;
  for (unsigned char ch : key) {
    h ^= ch;
    h *= 1099511628211ull;
  }
  return h;
}

// data.root if set, else PROMPTMONO_CACHE-backed generated frames, else a
// purely in-memory corpus
std::unique_ptr<pm::TripletSource> open_dataset(const pm::AppConfig& cfg) {
  if (!cfg.data.root.empty()) {
    require_file(cfg.data.root + "/manifest.json", "dataset manifest");
    pm::DatasetLayout layout;
    layout.crop_w = cfg.data.crop_w;
    layout.crop_h = cfg.data.crop_h;
    layout.out_w = cfg.data.out_w;
    layout.out_h = cfg.data.out_h;
    return pm::load_disk_dataset(cfg.data.root, layout);
  }
  const std::string cache = pm::cache_root();
  if (!cache.empty()) {
    char hex[24];
    std::snprintf(hex, sizeof(hex), "%016llx",
                  static_cast<unsigned long long>(data_fingerprint(cfg)));
    const fs::path dir = fs::path(cache) / (std::string("pm-") + hex);
    if (!fs::exists(dir / "manifest.json")) {
      pm::SyntheticCorpus corpus(cfg.seed, cfg.data.scenes, cfg.data.frames_per_scene,
                                 cfg.data.height, cfg.data.width);
      pm::write_dataset(dir.string(), corpus, true);
    }
    return pm::load_disk_dataset(dir.string());
  }
  return std::make_unique<pm::SyntheticCorpus>(cfg.seed, cfg.data.scenes,
                                               cfg.data.frames_per_scene, cfg.data.height,
                                               cfg.data.width);
}

int run_gen_data(const pm::AppConfig& cfg, const std::string& out) {
  pm::SyntheticCorpus corpus(cfg.seed, cfg.data.scenes, cfg.data.frames_per_scene,
                             cfg.data.height, cfg.data.width);
  pm::write_dataset(out, corpus, cfg.data.with_depth);
  write_snapshot(out, cfg);
  std::printf("wrote %ld samples (%ld scenes x %ld frames, %ldx%ld) to %s\n", corpus.size(),
              cfg.data.scenes, cfg.data.frames_per_scene, cfg.data.height, cfg.data.width,
              out.c_str());
  return 0;
}

int run_train(const pm::AppConfig& cfg, const std::string& out, const std::string& resume) {
  if (!resume.empty()) require_file(resume, "resume checkpoint");
  write_snapshot(out, cfg);
  auto data = open_dataset(cfg);
  json extra{{"config", pm::to_json(cfg)}};
  pm::TrainResult res = pm::train(cfg.train, cfg.model, *data, out, cfg.corruption, resume, extra);
  std::printf("trained %ld steps, final loss %.6f\ncheckpoint: %s\nmetric log: %s\n",
              res.steps_run, res.final_total, res.checkpoint_path.c_str(), res.log_path.c_str());
  return 0;
}

std::vector<pm::MetricRecord> eval_checkpoint(const pm::AppConfig& cfg, const std::string& ckpath,
                                              const pm::TripletSource& data) {
  pm::Checkpoint ck = pm::load_checkpoint(ckpath);
  pm::LoadedModel model = pm::depth_network_from_checkpoint(ck);
  const pm::SampleTriplet probe = data.triplet(0);
  if (probe.easy_target.dim(1) != model.input_h || probe.easy_target.dim(2) != model.input_w)
    throw std::invalid_argument(
        "dataset frames are " + std::to_string(probe.easy_target.dim(1)) + "x" +
        std::to_string(probe.easy_target.dim(2)) + " but the checkpoint was trained at " +
        std::to_string(model.input_h) + "x" + std::to_string(model.input_w));
  return pm::evaluate_dataset(*model.net, data, cfg.eval, cfg.corruption);
}

int run_eval(const pm::AppConfig& cfg, const std::string& out, const std::string& ckpath) {
  require_file(ckpath, "checkpoint");
  write_snapshot(out, cfg);
  auto data = open_dataset(cfg);
  const auto rows = eval_checkpoint(cfg, ckpath, *data);
  {
    std::ofstream f(fs::path(out) / "metrics.json");
    f << pm::metrics_to_json(rows).dump(2) << "\n";
  }
  const std::string table = pm::metrics_to_text(rows);
  std::ofstream(fs::path(out) / "metrics.txt") << table;
  std::printf("%s", table.c_str());
  return 0;
}

int run_infer(const pm::AppConfig& cfg, const std::string& out, const std::string& ckpath,
              const std::string& image_path) {
  require_file(ckpath, "checkpoint");
  require_file(image_path, "input image");
  write_snapshot(out, cfg);
  pm::Checkpoint ck = pm::load_checkpoint(ckpath);
  pm::LoadedModel model = pm::depth_network_from_checkpoint(ck);
  const pm::Tensor<float> img = pm::read_rgb_png(image_path);
  const long H = img.dim(1), W = img.dim(2);
  const bool fit = H == model.input_h && W == model.input_w;
  pm::Tensor<float> depth =
      pm::infer(*model.net, fit ? img : pm::resize_bilinear(img, model.input_h, model.input_w));
  if (!fit) depth = pm::resize_bilinear(depth, H, W);
  const std::string stem = fs::path(image_path).stem().string();
  const std::string png = (fs::path(out) / (stem + "_depth.png")).string();
  const std::string bin = (fs::path(out) / (stem + "_depth.bin")).string();
  pm::write_depth_png16(png, depth);
  pm::write_float_bin(bin, depth);
  std::printf("depth for %ldx%ld image: %s (millimeter png), %s (float32)\n", W, H, png.c_str(),
              bin.c_str());
  return 0;
}

int run_gradcheck(const pm::AppConfig& cfg, const std::string& out) {
  const auto results = pm::run_gradient_suite(cfg.seed);
  const std::string table = pm::gradient_suite_table(results);
  std::printf("%s", table.c_str());
  if (!out.empty()) {
    write_snapshot(out, cfg);
    std::ofstream(fs::path(out) / "gradcheck.txt") << table;
  }
  const bool ok = std::all_of(results.begin(), results.end(),
                              [](const pm::GradCheckResult& r) { return r.passed; });
  if (!ok) std::fprintf(stderr, "gradient check failed\n");
  return ok ? 0 : 2;
}

double absrel_at(const std::vector<pm::MetricRecord>& rows, const std::string& domain,
                 double cap) {
  for (const auto& r : rows)
    if (r.domain == domain && r.max_depth == cap) return r.abs_rel;
  throw std::runtime_error("evaluation produced no " + domain + " row");
}

int run_ablate(const pm::AppConfig& cfg, const std::string& out) {
  struct Variant {
    const char* label;
    const char* dir;
    bool gcpa, sd;
  };
  const Variant grid[4] = {{"baseline", "baseline", false, false},
                           {"w/ self-distillation", "self_distill", false, true},
                           {"w/ prompt attention", "prompt_attention", true, false},
                           {"full", "full", true, true}};
  write_snapshot(out, cfg);
  auto data = open_dataset(cfg);
  const double cap = *std::max_element(cfg.eval.caps.begin(), cfg.eval.caps.end());

  json summary = json::array();
  std::string table;
  char line[160];
  std::snprintf(line, sizeof(line), "%-22s %-6s %-6s %12s %12s %12s\n", "variant", "gcpa", "sd",
                "night", "vs baseline", "all");
  table += line;
  double base_night = 0;
  for (const auto& v : grid) {
    pm::AppConfig run_cfg = cfg;
    run_cfg.model.use_gcpa = v.gcpa;
    run_cfg.train.use_sd_loss = v.sd;
    const std::string run_dir = (fs::path(out) / v.dir).string();
    write_snapshot(run_dir, run_cfg);
    pm::TrainResult res =
        pm::train(run_cfg.train, run_cfg.model, *data, run_dir, run_cfg.corruption);
    const auto rows = eval_checkpoint(run_cfg, res.checkpoint_path, *data);
    std::ofstream(fs::path(run_dir) / "metrics.json") << pm::metrics_to_json(rows).dump(2) << "\n";
    const double night = absrel_at(rows, "night", cap);
    const double all = absrel_at(rows, "all", cap);
    if (v.gcpa == false && v.sd == false) base_night = night;
    const double change = base_night > 0 ? 100.0 * (night - base_night) / base_night : 0.0;
    std::snprintf(line, sizeof(line), "%-22s %-6s %-6s %12.4f %+11.1f%% %12.4f\n", v.label,
                  v.gcpa ? "yes" : "no", v.sd ? "yes" : "no", night, change, all);
    table += line;
    summary.push_back({{"variant", v.label},
                       {"use_gcpa", v.gcpa},
                       {"use_sd_loss", v.sd},
                       {"night_abs_rel", night},
                       {"all_abs_rel", all},
                       {"change_vs_baseline_pct", change},
                       {"max_depth", cap},
                       {"final_loss", res.final_total},
                       {"checkpoint", res.checkpoint_path}});
  }
  std::ofstream(fs::path(out) / "ablate.json") << summary.dump(2) << "\n";
  std::ofstream(fs::path(out) / "ablate.txt") << table;
  std::printf("night-domain absRel, gt capped at %.0f m:\n%s", cap, table.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"self-supervised monocular depth with prompt-based adaptation"};
  app.require_subcommand(1);

  CommonArgs gen_c, train_c, eval_c, infer_c, grad_c, abl_c;
  std::string resume, checkpoint, image;

  auto* gen = app.add_subcommand("gen-data", "render a synthetic dataset to disk");
  add_common(gen, gen_c, true);
  auto* tr = app.add_subcommand("train", "run the siamese training loop");
  add_common(tr, train_c, true);
  tr->add_option("--resume", resume, "checkpoint to continue from");
  auto* ev = app.add_subcommand("eval", "depth metrics per domain and cap");
  add_common(ev, eval_c, true);
  ev->add_option("--checkpoint", checkpoint, "trained model")->required();
  auto* in = app.add_subcommand("infer", "single-image depth prediction");
  add_common(in, infer_c, true);
  in->add_option("--checkpoint", checkpoint, "trained model")->required();
  in->add_option("--image", image, "input RGB png")->required();
  auto* gc = app.add_subcommand("gradcheck", "finite-difference gradient audit");
  add_common(gc, grad_c, false);
  auto* ab = app.add_subcommand("ablate", "train and compare the 4-variant grid");
  add_common(ab, abl_c, true);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }

  try {
    if (gen->parsed()) return run_gen_data(resolve(gen_c), gen_c.out_dir);
    if (tr->parsed()) return run_train(resolve(train_c), train_c.out_dir, resume);
    if (ev->parsed()) return run_eval(resolve(eval_c), eval_c.out_dir, checkpoint);
    if (in->parsed()) return run_infer(resolve(infer_c), infer_c.out_dir, checkpoint, image);
    if (gc->parsed()) return run_gradcheck(resolve(grad_c), grad_c.out_dir);
    if (ab->parsed()) return run_ablate(resolve(abl_c), abl_c.out_dir);
  } catch (const std::invalid_argument& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 0;
}
