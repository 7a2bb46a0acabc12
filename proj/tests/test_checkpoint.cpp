#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>

#include "pm/checkpoint.hpp"
#include "testutil.hpp"

using namespace pm;
using pmtest::random_tensor;

namespace {

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

ParamSet<double> sample_params() {
  ParamSet<double> ps;
  ps.add("net.a.w", random_tensor<double>({3, 2, 3, 3}, 11));
  ps.add("net.a.b", random_tensor<double>({3}, 13));
  ps.add("net.deep.block.gamma", random_tensor<double>({1, 7}, 17));
  return ps;
}

}  // namespace

TEST_CASE("checkpoint round trip preserves names, shapes, meta, and float32 values") {
  const std::string path = temp_path("pm_ck_roundtrip.bin");
  ParamSet<double> src = sample_params();

  Checkpoint ck;
  ck.meta["step"] = 1234;
  ck.meta["config"]["lr"] = 1e-4;
  ck.meta["config"]["widths"] = {4, 6, 8};
  pack_params(ck, src);
  ck.put("opt.m.net.a.w", random_tensor<float>({3, 2, 3, 3}, 19));
  save_checkpoint(path, ck);

  Checkpoint back = load_checkpoint(path);
  CHECK(back.meta.at("step").get<long>() == 1234);
  CHECK(back.meta.at("config").at("lr").get<double>() == 1e-4);
  REQUIRE(back.arrays.size() == 4);
  CHECK(back.arrays[0].first == "net.a.w");
  CHECK(back.arrays[3].first == "opt.m.net.a.w");

  ParamSet<double> dst = sample_params();
  for (auto& [name, v] : dst.items())
    for (long i = 0; i < v.size(); ++i) v.value()[i] = 0;
  unpack_params(back, dst);
  for (const auto& [name, v] : src.items()) {
    const auto& restored = dst.at(name).value();
    for (long i = 0; i < v.size(); ++i) {
      // storage is float32: restored equals the narrowed original exactly
      CHECK(restored[i] == static_cast<double>(static_cast<float>(v.value()[i])));
    }
  }

  const Tensor<float>* m = back.find("opt.m.net.a.w");
  REQUIRE(m != nullptr);
  CHECK(m->shape() == Shape({3, 2, 3, 3}));
  CHECK(back.find("opt.v.net.a.w") == nullptr);
  std::remove(path.c_str());
}

TEST_CASE("unpack fails loudly on missing names and shape mismatches") {
  Checkpoint ck;
  ck.put("net.a.w", random_tensor<float>({3, 2, 3, 3}, 23));

  ParamSet<double> missing;
  missing.add("net.other", Tensor<double>::zeros({2}));
  CHECK_THROWS_WITH_AS(unpack_params(ck, missing), doctest::Contains("net.other"),
                       std::runtime_error);

  ParamSet<double> mismatched;
  mismatched.add("net.a.w", Tensor<double>::zeros({3, 2, 5, 5}));
  CHECK_THROWS_WITH_AS(unpack_params(ck, mismatched), doctest::Contains("shape mismatch"),
                       std::runtime_error);
}

TEST_CASE("duplicate array names are rejected at insertion") {
  Checkpoint ck;
  ck.put("x", Tensor<float>::zeros({2}));
  CHECK_THROWS(ck.put("x", Tensor<float>::zeros({2})));
}

TEST_CASE("corrupted files are rejected with descriptive errors") {
  const std::string good = temp_path("pm_ck_good.bin");
  Checkpoint ck;
  ck.put("w", random_tensor<float>({4, 4}, 29));
  save_checkpoint(good, ck);

  SUBCASE("bad magic") {
    const std::string path = temp_path("pm_ck_magic.bin");
    std::ofstream(path, std::ios::binary) << "definitely not a checkpoint";
    CHECK_THROWS_WITH_AS(load_checkpoint(path), doctest::Contains("not a checkpoint"),
                         std::runtime_error);
    std::remove(path.c_str());
  }
  SUBCASE("truncated payload") {
    std::ifstream in(good, std::ios::binary);
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    const std::string path = temp_path("pm_ck_trunc.bin");
    std::ofstream(path, std::ios::binary) << bytes.substr(0, bytes.size() - 9);
    CHECK_THROWS_WITH_AS(load_checkpoint(path), doctest::Contains("truncated"),
                         std::runtime_error);
    std::remove(path.c_str());
  }
  SUBCASE("missing file") { CHECK_THROWS(load_checkpoint(temp_path("pm_ck_nonexistent.bin"))); }
  std::remove(good.c_str());
}
