// Drives the command-line binary as a subprocess: artifact layout, the
// resolved-config snapshot, exit-code mapping, and dataset cache reuse.
#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <doctest.h>
#include <json.hpp>

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    std::string tmpl = (fs::temp_directory_path() / "pmcli-XXXXXX").string();
    path = mkdtemp(tmpl.data());
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path, ec);
  }
  std::string str(const std::string& rel = "") const { return (path / rel).string(); }
};

struct RunResult {
  int rc = -1;
  std::string out;
};

RunResult run(const std::string& args) {
  static int n = 0;
  const std::string capture = (fs::temp_directory_path() / ("pmcli-log-" + std::to_string(n++))).string();
  const std::string cmd = std::string(PM_CLI_BIN) + " " + args + " > " + capture + " 2>&1";
  const int status = std::system(cmd.c_str());
  RunResult r;
  r.rc = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  std::ifstream f(capture);
  std::stringstream ss;
  ss << f.rdbuf();
  r.out = ss.str();
  fs::remove(capture);
  return r;
}

const std::string kTinyModel =
    " --set model.widths=[4,6,8] --set model.scales=2 --set model.num_prompts=2"
    " --set model.heads=2";
const std::string kTinyData =
    " --set data.scenes=2 --set data.frames_per_scene=6 --set data.height=32"
    " --set data.width=64";
const std::string kTinyTrain =
    " --set train.epochs=1 --set train.steps_per_epoch=2 --set train.batch_size=3";

}  // namespace

TEST_CASE("gen-data writes the dataset layout and a faithful config snapshot") {
  TempDir tmp;
  auto r = run("gen-data --out " + tmp.str("ds") + " --seed 77" + kTinyData);
  CHECK(r.rc == 0);
  CHECK(fs::exists(tmp.path / "ds" / "manifest.json"));
  CHECK(fs::exists(tmp.path / "ds" / "config.json"));
  long frames = 0;
  for ([[maybe_unused]] auto& e : fs::directory_iterator(tmp.path / "ds" / "frames")) ++frames;
  CHECK(frames == 12);
  CHECK(fs::exists(tmp.path / "ds" / "depth"));

  json snap;
  std::ifstream(tmp.path / "ds" / "config.json") >> snap;
  CHECK(snap["seed"] == 77);
  CHECK(snap["data"]["scenes"] == 2);
  CHECK(snap["data"]["height"] == 32);
  CHECK(snap["train"]["epochs"] == 20);  // untouched defaults survive
}

TEST_CASE("train, eval, and infer round trip through the documented artifacts") {
  TempDir tmp;
  REQUIRE(run("gen-data --out " + tmp.str("ds") + " --seed 77" + kTinyData).rc == 0);

  auto tr = run("train --out " + tmp.str("run") + " --seed 9 --set data.root=" + tmp.str("ds") +
                kTinyModel + kTinyTrain);
  CHECK(tr.rc == 0);
  CHECK(fs::exists(tmp.path / "run" / "checkpoint_final.pmck"));
  CHECK(fs::exists(tmp.path / "run" / "metrics.jsonl"));
  json snap;
  std::ifstream(tmp.path / "run" / "config.json") >> snap;
  CHECK(snap["seed"] == 9);
  CHECK(snap["model"]["widths"] == json::array({4, 6, 8}));

  auto ev = run("eval --out " + tmp.str("ev") + " --checkpoint " +
                tmp.str("run/checkpoint_final.pmck") + " --set data.root=" + tmp.str("ds") +
                " --set eval.caps=[40]");
  CHECK(ev.rc == 0);
  CHECK(ev.out.find("absRel") != std::string::npos);
  json metrics;
  std::ifstream(tmp.path / "ev" / "metrics.json") >> metrics;
  CHECK(metrics.size() == 4);  // day, night, rain, all at one cap
  CHECK(fs::exists(tmp.path / "ev" / "metrics.txt"));

  // a frame from a differently sized corpus checks the resize path: the
  // outputs must match the input image, not the model resolution
  REQUIRE(run("gen-data --out " + tmp.str("ds2") + " --seed 78" + kTinyData +
              " --set data.height=48 --set data.width=96 --set data.scenes=1"
              " --set data.frames_per_scene=3 --set data.with_depth=false")
              .rc == 0);
  std::string frame;
  for (auto& e : fs::directory_iterator(tmp.path / "ds2" / "frames")) {
    frame = e.path().string();
    break;
  }
  auto inf = run("infer --out " + tmp.str("inf") + " --checkpoint " +
                 tmp.str("run/checkpoint_final.pmck") + " --image " + frame);
  CHECK(inf.rc == 0);
  const std::string stem = fs::path(frame).stem().string();
  CHECK(fs::exists(tmp.path / "inf" / (stem + "_depth.png")));
  CHECK(fs::file_size(tmp.path / "inf" / (stem + "_depth.bin")) == 48 * 96 * 4);
}

TEST_CASE("validation failures exit 1 and name the problem") {
  TempDir tmp;
  auto bad_key = run("train --out " + tmp.str("x") + " --set train.epoch=1");
  CHECK(bad_key.rc == 1);
  CHECK(bad_key.out.find("train.epoch") != std::string::npos);

  auto bad_file = run("train --out " + tmp.str("x") + " --config " + tmp.str("nope.json"));
  CHECK(bad_file.rc == 1);
  CHECK(bad_file.out.find("nope.json") != std::string::npos);

  auto accel = run("train --out " + tmp.str("x") + " --device accelerator");
  CHECK(accel.rc == 1);
  CHECK(accel.out.find("device") != std::string::npos);

  auto bad_device = run("train --out " + tmp.str("x") + " --device gpu");
  CHECK(bad_device.rc == 1);

  auto no_ck = run("eval --out " + tmp.str("x") + " --checkpoint " + tmp.str("nope.pmck"));
  CHECK(no_ck.rc == 1);
  CHECK(no_ck.out.find("nope.pmck") != std::string::npos);

  CHECK(run("").rc == 1);
  CHECK(run("bogus-subcommand").rc == 1);
  CHECK(run("--help").rc == 0);

  auto bad_value = run("train --out " + tmp.str("x") + " --set train.epochs=six");
  CHECK(bad_value.rc == 1);
  CHECK(bad_value.out.find("train.epochs") != std::string::npos);
}

TEST_CASE("gradcheck prints one row per op and exits 0") {
  TempDir tmp;
  auto r = run("gradcheck --seed 4 --out " + tmp.str("gc"));
  CHECK(r.rc == 0);
  for (const char* op : {"bilinear_sample", "synthesize_view", "ssim", "photometric_error",
                         "smoothness_loss", "cgpb", "cross_prompting_attention", "gdfn",
                         "gcpa_forward", "full_decode"})
    CHECK(r.out.find(op) != std::string::npos);
  CHECK(r.out.find("FAIL") == std::string::npos);
  CHECK(fs::exists(tmp.path / "gc" / "gradcheck.txt"));
  CHECK(fs::exists(tmp.path / "gc" / "config.json"));
}

TEST_CASE("unset data root trains from the generated-data cache and reuses it") {
  TempDir tmp;
  setenv("PROMPTMONO_CACHE", tmp.str("cache").c_str(), 1);
  const std::string args = " --seed 12" + kTinyData + kTinyModel + kTinyTrain;
  auto first = run("train --out " + tmp.str("r1") + args);
  unsetenv("PROMPTMONO_CACHE");
  CHECK(first.rc == 0);

  long datasets = 0;
  fs::path ds_dir;
  for (auto& e : fs::directory_iterator(tmp.path / "cache")) {
    ds_dir = e.path();
    ++datasets;
  }
  REQUIRE(datasets == 1);
  const auto stamp = fs::last_write_time(ds_dir / "manifest.json");

  setenv("PROMPTMONO_CACHE", tmp.str("cache").c_str(), 1);
  auto second = run("train --out " + tmp.str("r2") + args);
  unsetenv("PROMPTMONO_CACHE");
  CHECK(second.rc == 0);
  CHECK(fs::last_write_time(ds_dir / "manifest.json") == stamp);

  datasets = 0;
  for ([[maybe_unused]] auto& e : fs::directory_iterator(tmp.path / "cache")) ++datasets;
  CHECK(datasets == 1);
}
