#include <doctest.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "pm/data.hpp"
#include "pm/geometry.hpp"
#include "testutil.hpp"

using namespace pm;
using ad::VarD;
using pmtest::max_abs_diff;
using pmtest::random_tensor;

namespace fs = std::filesystem;

namespace {

// (3,H,W) float -> (1,3,H,W) double graph leaf
VarD to_var(const Tensor<float>& img) {
  Tensor<double> t({1, img.dim(0), img.dim(1), img.dim(2)});
  for (long i = 0; i < img.size(); ++i) t[i] = img[i];
  return VarD::leaf(std::move(t));
}

SceneSpec smooth_plane_scene() {
  SceneSpec spec;
  spec.intrinsics = {57.6, 57.6, 31.5, 15.5, 64, 32};
  Primitive plane;
  plane.p0 = {-8, -8, 5};
  plane.e0 = {16, 0, 0};
  plane.e1 = {0, 16, 0};
  plane.texture = {{0.55, 0.5, 0.45}, {0.45, 0.5, 0.55}, 2.0, 2.0, 0.0, 0.0};
  spec.primitives.push_back(plane);
  spec.trajectory.push_back(RigidPose::identity());
  spec.trajectory.push_back(RigidPose{{0, 0, 0}, {0.05, 0.02, 0}});
  return spec;
}

std::string temp_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / name;
  fs::remove_all(p);
  return p.string();
}

// forward-difference equality map: true where the pixel equals its right/down neighbor
bool equal_right(const Tensor<float>& t, long c, long y, long x) {
  return t.at(c, y, x) == t.at(c, y, x + 1);
}
bool equal_down(const Tensor<float>& t, long c, long y, long x) {
  return t.at(c, y, x) == t.at(c, y + 1, x);
}

}  // namespace

TEST_CASE("domain tags round-trip through strings") {
  for (DomainTag tag : {DomainTag::day, DomainTag::night, DomainTag::rain})
    CHECK(domain_from_string(to_string(tag)) == tag);
  CHECK_THROWS(domain_from_string("dusk"));
}

TEST_CASE("fronto-parallel plane renders constant exact depth") {
  const SceneSpec spec = smooth_plane_scene();
  const RenderedFrame f = render_scene(spec, 0);
  CHECK(f.image.shape() == Shape({3, 32, 64}));
  CHECK(f.depth.shape() == Shape({1, 32, 64}));
  for (long i = 0; i < f.depth.size(); ++i) CHECK(f.depth[i] == 5.0f);
  for (long i = 0; i < f.image.size(); ++i) {
    CHECK(f.image[i] >= 0.0f);
    CHECK(f.image[i] <= 1.0f);
  }
}

TEST_CASE("z-buffer keeps the nearer of two overlapping boxes") {
  SceneSpec spec;
  spec.intrinsics = {57.6, 57.6, 31.5, 15.5, 64, 32};
  Primitive near_box;
  near_box.kind = Primitive::Kind::box;
  near_box.bmin = {-1, -1, 4};
  near_box.bmax = {1, 1, 6};
  Primitive far_box;
  far_box.kind = Primitive::Kind::box;
  far_box.bmin = {-2, -2, 6};
  far_box.bmax = {2, 2, 8};
  Primitive backdrop;
  backdrop.p0 = {-30, -30, 20};
  backdrop.e0 = {60, 0, 0};
  backdrop.e1 = {0, 60, 0};
  spec.primitives = {near_box, far_box, backdrop};
  spec.trajectory.push_back(RigidPose::identity());

  const RenderedFrame f = render_scene(spec, 0);
  CHECK(f.depth.at(0, 16, 32) == 4.0f);  // both boxes straddle this ray; nearer wins
  CHECK(f.depth.at(0, 16, 48) == 6.0f);  // only the far box covers this one
  for (long i = 0; i < f.depth.size(); ++i) CHECK(f.depth[i] > 0.0f);
}

TEST_CASE("renderer validates inputs") {
  SceneSpec spec = smooth_plane_scene();
  CHECK_THROWS(render_scene(spec, 2));
  CHECK_THROWS(render_scene(spec, -1));
  spec.primitives.clear();
  CHECK_THROWS(render_scene(spec, 0));
}

TEST_CASE("warping the neighbor render with true depth and pose reproduces the view") {
  const SceneSpec spec = smooth_plane_scene();
  const RenderedFrame target = render_scene(spec, 0);
  const RenderedFrame source = render_scene(spec, 1);

  Tensor<double> depth({1, 1, 32, 64});
  for (long i = 0; i < depth.size(); ++i) depth[i] = target.depth[i];
  const RigidPose pose = relative_pose(spec, 0, 1);
  auto warp = geo::synthesize_view(to_var(source.image), VarD::leaf(std::move(depth)), pose,
                                   spec.intrinsics);

  double worst = 0;
  long covered = 0;
  for (long c = 0; c < 3; ++c)
    for (long y = 0; y < 32; ++y)
      for (long x = 0; x < 64; ++x) {
        if (!warp.valid[y * 64 + x]) continue;
        ++covered;
        worst = std::max(worst, std::abs(warp.image.value().at(0, c, y, x) -
                                         double(target.image.at(c, y, x))));
      }
  CHECK(covered > 3 * 32 * 64 / 2);
  CHECK(worst < 1e-3);
}

TEST_CASE("generated scenes cover every pixel and repeat deterministically") {
  const SceneSpec spec = make_scene_spec(3, 12, 32, 64);
  REQUIRE(spec.trajectory.size() == 12);
  spec.intrinsics.validate();

  for (long f : {0L, 6L, 11L}) {
    const RenderedFrame r = render_scene(spec, f);
    for (long i = 0; i < r.depth.size(); ++i) {
      CHECK(r.depth[i] > 0.0f);
      CHECK(std::isfinite(r.depth[i]));
    }
    for (long i = 0; i < r.image.size(); ++i) {
      CHECK(r.image[i] >= 0.0f);
      CHECK(r.image[i] <= 1.0f);
    }
  }

  const RenderedFrame a = render_scene(spec, 4);
  const RenderedFrame b = render_scene(spec, 4);
  CHECK(max_abs_diff(a.image, b.image) == 0.0f);
  CHECK(max_abs_diff(a.depth, b.depth) == 0.0f);

  const SceneSpec other = make_scene_spec(4, 12, 32, 64);
  CHECK(max_abs_diff(a.image, render_scene(other, 4).image) > 0.0f);
}

TEST_CASE("consecutive generated frames overlap on most of the image") {
  const SceneSpec spec = make_scene_spec(17, 8, 32, 64);
  for (long t = 1; t < 4; ++t) {
    const RenderedFrame here = render_scene(spec, t);
    const RenderedFrame prev = render_scene(spec, t - 1);
    Tensor<double> depth({1, 1, 32, 64});
    for (long i = 0; i < depth.size(); ++i) depth[i] = here.depth[i];
    auto warp = geo::synthesize_view(to_var(prev.image), VarD::leaf(std::move(depth)),
                                     relative_pose(spec, t, t - 1), spec.intrinsics);
    long valid = 0;
    for (long i = 0; i < 32 * 64; ++i) valid += warp.valid[i] ? 1 : 0;
    CHECK(double(valid) / (32 * 64) >= 0.6);
  }
}

TEST_CASE("day corruption is the identity") {
  const Tensor<float> img = random_tensor<float>({3, 8, 10}, 41, 0.0f, 1.0f);
  CHECK(max_abs_diff(corrupt(img, DomainTag::day, 999), img) == 0.0f);
}

TEST_CASE("noise-free night corruption is the documented pointwise curve") {
  CorruptionParams params;
  params.night.bloom_spots = 0;
  params.night.noise_sigma = 0;
  const Tensor<float> img({3, 4, 4}, 0.8f);
  const Tensor<float> out = corrupt(img, DomainTag::night, 7, params);
  const double expect = 0.35 * std::pow(0.8, 2.2);
  for (long i = 0; i < out.size(); ++i) {
    CHECK(std::abs(out[i] - expect) < 1e-6);
    CHECK(out[i] == doctest::Approx(0.2145).epsilon(0.002));
  }
}

TEST_CASE("night corruption is reproducible per seed and varies across seeds") {
  const Tensor<float> img = random_tensor<float>({3, 12, 16}, 43, 0.0f, 1.0f);
  const Tensor<float> a = corrupt(img, DomainTag::night, 5);
  const Tensor<float> b = corrupt(img, DomainTag::night, 5);
  const Tensor<float> c = corrupt(img, DomainTag::night, 6);
  CHECK(max_abs_diff(a, b) == 0.0f);
  CHECK(max_abs_diff(a, c) > 0.0f);
}

TEST_CASE("rain corruption matches its formula everywhere") {
  RainParams p;
  const long h = 12, w = 10;
  const Tensor<float> img = random_tensor<float>({3, h, w}, 47, 0.0f, 1.0f);
  const Tensor<float> out = corrupt(img, DomainTag::rain, 3);

  const long band_start = h - static_cast<long>(std::floor(p.band * h));
  Tensor<float> expect({3, h, w});
  for (long c = 0; c < 3; ++c)
    for (long y = 0; y < h; ++y)
      for (long x = 0; x < w; ++x) {
        double v = img.at(c, y, x);
        if (y >= band_start) v = (1 - p.blend) * v + p.blend * img.at(c, h - 1 - y, x);
        expect.at(c, y, x) = static_cast<float>((v - 0.5) * p.contrast + 0.5);
      }
  for (long y = 0; y < h; ++y)
    for (long x = 0; x < w; ++x) {
      const float mean =
          (expect.at(0, y, x) + expect.at(1, y, x) + expect.at(2, y, x)) / 3.0f;
      for (long c = 0; c < 3; ++c) {
        const double v = (1 - p.desaturate) * expect.at(c, y, x) + p.desaturate * mean;
        CHECK(std::abs(out.at(c, y, x) - std::clamp(v, 0.0, 1.0)) < 1e-6);
      }
    }
}

TEST_CASE("unknown tags are rejected") {
  const Tensor<float> img({3, 2, 2}, 0.5f);
  CHECK_THROWS(corrupt(img, static_cast<DomainTag>(7), 1));
  CHECK_THROWS(corrupt(Tensor<float>({1, 2, 2}, 0.5f), DomainTag::night, 1));
}

TEST_CASE("noise-free corruptions never create edges outside their masks") {
  // blocky test card: constant regions with one vertical and one horizontal edge
  const long h = 12, w = 12;
  Tensor<float> img({3, h, w});
  for (long c = 0; c < 3; ++c)
    for (long y = 0; y < h; ++y)
      for (long x = 0; x < w; ++x)
        img.at(c, y, x) = (x < 6 ? 0.2f : 0.7f) + (y < 4 ? 0.0f : 0.1f);

  CorruptionParams params;
  params.night.bloom_spots = 0;
  params.night.noise_sigma = 0;
  const Tensor<float> night = corrupt(img, DomainTag::night, 11, params);
  for (long c = 0; c < 3; ++c)
    for (long y = 0; y < h; ++y)
      for (long x = 0; x < w; ++x) {
        if (x + 1 < w && equal_right(img, c, y, x)) CHECK(equal_right(night, c, y, x));
        if (y + 1 < h && equal_down(img, c, y, x)) CHECK(equal_down(night, c, y, x));
      }

  const Tensor<float> rain = corrupt(img, DomainTag::rain, 11, params);
  const long band_start = h - h / 3;
  for (long c = 0; c < 3; ++c)
    for (long y = 0; y + 1 < band_start; ++y)  // pairs fully above the reflection band
      for (long x = 0; x < w; ++x) {
        if (x + 1 < w && equal_right(img, c, y, x)) CHECK(equal_right(rain, c, y, x));
        if (equal_down(img, c, y, x)) CHECK(equal_down(rain, c, y, x));
      }
}

TEST_CASE("batches balance domains and corrupt only the challenging slots") {
  const SyntheticCorpus corpus(5, 1, 14, 24, 48);
  REQUIRE(corpus.size() == 12);

  auto batch = make_batch(corpus, 6, 99);
  REQUIRE(batch.size() == 6);
  long counts[3] = {0, 0, 0};
  for (const auto& s : batch) counts[static_cast<int>(s.tag)]++;
  CHECK(counts[0] == 2);
  CHECK(counts[1] == 2);
  CHECK(counts[2] == 2);

  for (const auto& s : batch) {
    CHECK(s.easy_target.shape() == Shape({3, 24, 48}));
    REQUIRE(s.gt_depth.size() == 24 * 48);
    for (long i = 0; i < s.gt_depth.size(); ++i) CHECK(s.gt_depth[i] > 0.0f);
    if (s.tag == DomainTag::day) {
      CHECK(!s.transformed);
      CHECK(max_abs_diff(s.hard_target, s.easy_target) == 0.0f);
    } else {
      CHECK(s.transformed);
      CHECK(max_abs_diff(s.hard_target, s.easy_target) > 0.0f);
    }
  }

  auto again = make_batch(corpus, 6, 99);
  for (size_t i = 0; i < batch.size(); ++i) {
    CHECK(batch[i].tag == again[i].tag);
    CHECK(max_abs_diff(batch[i].hard_target, again[i].hard_target) == 0.0f);
    CHECK(max_abs_diff(batch[i].easy_prev, again[i].easy_prev) == 0.0f);
  }
  auto shuffled = make_batch(corpus, 6, 100);
  double diff = 0;
  for (size_t i = 0; i < batch.size(); ++i)
    diff += max_abs_diff(batch[i].easy_target, shuffled[i].easy_target);
  CHECK(diff > 0.0);

  CHECK_THROWS(make_batch(corpus, 4, 1));
  CHECK_THROWS(make_batch(corpus, 0, 1));
}

TEST_CASE("triplet poses agree with the scene trajectory") {
  const SyntheticCorpus corpus(8, 1, 6, 16, 32);
  const SampleTriplet t = corpus.triplet(0);  // center frame 1
  const RigidPose expect_prev = relative_pose(corpus.scene(0), 1, 0);
  for (int i = 0; i < 3; ++i) {
    CHECK(t.to_prev.axis_angle[i] == doctest::Approx(expect_prev.axis_angle[i]).epsilon(1e-12));
    CHECK(t.to_prev.translation[i] ==
          doctest::Approx(expect_prev.translation[i]).epsilon(1e-12));
  }
}

TEST_CASE("dataset survives a disk round trip") {
  const std::string root = temp_dir("pm_data_roundtrip");
  const SyntheticCorpus corpus(9, 1, 10, 16, 32);
  write_dataset(root, corpus, true);

  auto disk = load_disk_dataset(root);
  REQUIRE(disk->size() == 8);  // 10 frames, endpoints lack a neighbor
  for (long i = 0; i < disk->size(); ++i) CHECK(disk->tag(i) == corpus.tag(i));

  const SampleTriplet mem = corpus.triplet(3);
  const SampleTriplet loaded = disk->triplet(3);
  CHECK(loaded.easy_target.shape() == mem.easy_target.shape());
  CHECK(max_abs_diff(loaded.easy_target, mem.easy_target) <= 0.002);  // 8-bit quantization
  CHECK(max_abs_diff(loaded.easy_prev, mem.easy_prev) <= 0.002);
  CHECK(max_abs_diff(loaded.gt_depth, mem.gt_depth) == 0.0f);  // raw float payload
  for (int i = 0; i < 3; ++i) {
    CHECK(loaded.to_prev.translation[i] ==
          doctest::Approx(mem.to_prev.translation[i]).epsilon(1e-9));
    CHECK(loaded.to_next.axis_angle[i] ==
          doctest::Approx(mem.to_next.axis_angle[i]).epsilon(1e-9));
  }
  fs::remove_all(root);
}

TEST_CASE("center crop and resize rescale the intrinsics") {
  const std::string root = temp_dir("pm_data_layout");
  const SyntheticCorpus corpus(10, 1, 4, 16, 32);
  write_dataset(root, corpus, true);

  DatasetLayout layout;
  layout.crop_w = 24;
  layout.crop_h = 12;
  layout.out_w = 16;
  layout.out_h = 8;
  auto disk = load_disk_dataset(root, layout);
  const SampleTriplet t = disk->triplet(0);
  CHECK(t.easy_target.shape() == Shape({3, 8, 16}));
  CHECK(t.gt_depth.shape() == Shape({1, 8, 16}));

  const CameraIntrinsics& base = corpus.scene(0).intrinsics;
  CHECK(t.intrinsics.width == 16);
  CHECK(t.intrinsics.height == 8);
  CHECK(t.intrinsics.fx == doctest::Approx(base.fx * 16.0 / 24.0).epsilon(1e-12));
  CHECK(t.intrinsics.fy == doctest::Approx(base.fy * 8.0 / 12.0).epsilon(1e-12));
  CHECK(t.intrinsics.cx ==
        doctest::Approx(((base.cx - 4.0) + 0.5) * (16.0 / 24.0) - 0.5).epsilon(1e-12));
  fs::remove_all(root);
}

TEST_CASE("dataset loader fails loudly on broken inputs") {
  SUBCASE("missing manifest") {
    const std::string root = temp_dir("pm_data_nomanifest");
    fs::create_directories(root);
    CHECK_THROWS_WITH_AS(load_disk_dataset(root), doctest::Contains("manifest"),
                         std::runtime_error);
    fs::remove_all(root);
  }
  SUBCASE("corrupt manifest") {
    const std::string root = temp_dir("pm_data_badmanifest");
    fs::create_directories(root);
    std::ofstream(fs::path(root) / "manifest.json") << "this is { not json";
    CHECK_THROWS_WITH_AS(load_disk_dataset(root), doctest::Contains("manifest"),
                         std::runtime_error);
    fs::remove_all(root);
  }
  SUBCASE("missing frame file") {
    const std::string root = temp_dir("pm_data_missingframe");
    const SyntheticCorpus corpus(11, 1, 4, 16, 32);
    write_dataset(root, corpus, false);
    fs::remove(fs::path(root) / "frames" / "s00_f0002.png");
    CHECK_THROWS_WITH_AS(load_disk_dataset(root), doctest::Contains("s00_f0002"),
                         std::runtime_error);
    fs::remove_all(root);
  }
}

TEST_CASE("cache root follows the environment variable") {
  ::setenv("PROMPTMONO_CACHE", "/tmp/pm_cache_probe", 1);
  CHECK(cache_root() == "/tmp/pm_cache_probe");
  ::unsetenv("PROMPTMONO_CACHE");
  CHECK(cache_root().empty());
}
