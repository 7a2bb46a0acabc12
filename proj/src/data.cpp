#include "pm/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <mutex>
#include <stdexcept>

#include <json.hpp>

#include "pm/core/rng.hpp"
#include "pm/image_io.hpp"

namespace fs = std::filesystem;

namespace pm {

const char* to_string(DomainTag tag) {
  switch (tag) {
    case DomainTag::day: return "day";
    case DomainTag::night: return "night";
    case DomainTag::rain: return "rain";
  }
  throw std::invalid_argument("unknown domain tag");
}

DomainTag domain_from_string(const std::string& s) {
  if (s == "day") return DomainTag::day;
  if (s == "night") return DomainTag::night;
  if (s == "rain") return DomainTag::rain;
  throw std::invalid_argument("unknown domain tag: " + s);
}

namespace {

double dot(const Vec3& a, const Vec3& b) { return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]; }
Vec3 cross(const Vec3& a, const Vec3& b) {
  return {a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]};
}
Vec3 sub(const Vec3& a, const Vec3& b) { return {a[0] - b[0], a[1] - b[1], a[2] - b[2]}; }
Vec3 normalize(const Vec3& a) {
  const double n = std::sqrt(dot(a, a));
  return {a[0] / n, a[1] / n, a[2] / n};
}

struct Hit {
  double t = std::numeric_limits<double>::infinity();
  const Primitive* prim = nullptr;
  Vec3 normal{};
  double s = 0, u = 0;  // texture coordinates in [0,1]
};

void intersect_plane(const Primitive& p, const Vec3& o, const Vec3& d, Hit& best) {
  const Vec3 n = cross(p.e0, p.e1);
  const double denom = dot(d, n);
  if (std::abs(denom) < 1e-12) return;
  const double t = dot(sub(p.p0, o), n) / denom;
  if (t < 1e-4 || t >= best.t) return;
  const Vec3 q = sub({o[0] + t * d[0], o[1] + t * d[1], o[2] + t * d[2]}, p.p0);
  const double s = dot(q, p.e0) / dot(p.e0, p.e0);
  const double u = dot(q, p.e1) / dot(p.e1, p.e1);
  if (s < 0 || s > 1 || u < 0 || u > 1) return;
  best = {t, &p, normalize(n), s, u};
}

void intersect_box(const Primitive& p, const Vec3& o, const Vec3& d, Hit& best) {
  double t_enter = -std::numeric_limits<double>::infinity();
  double t_exit = std::numeric_limits<double>::infinity();
  int axis = -1;
  double sign = 0;
  for (int k = 0; k < 3; ++k) {
    if (std::abs(d[k]) < 1e-12) {
      if (o[k] < p.bmin[k] || o[k] > p.bmax[k]) return;
      continue;
    }
    double t0 = (p.bmin[k] - o[k]) / d[k];
    double t1 = (p.bmax[k] - o[k]) / d[k];
    double face = -1;  // entering through the min face
    if (t0 > t1) {
      std::swap(t0, t1);
      face = 1;
    }
    if (t0 > t_enter) {
      t_enter = t0;
      axis = k;
      sign = face;
    }
    t_exit = std::min(t_exit, t1);
    if (t_enter > t_exit) return;
  }
  if (axis < 0 || t_enter < 1e-4 || t_enter >= best.t) return;
  Vec3 n{0, 0, 0};
  n[axis] = sign;
  const int sa = (axis + 1) % 3, ta = (axis + 2) % 3;
  const Vec3 hit{o[0] + t_enter * d[0], o[1] + t_enter * d[1], o[2] + t_enter * d[2]};
  const double s = (hit[sa] - p.bmin[sa]) / std::max(p.bmax[sa] - p.bmin[sa], 1e-12);
  const double u = (hit[ta] - p.bmin[ta]) / std::max(p.bmax[ta] - p.bmin[ta], 1e-12);
  best = {t_enter, &p, n, std::clamp(s, 0.0, 1.0), std::clamp(u, 0.0, 1.0)};
}

Vec3 albedo(const TextureParams& tex, double s, double u) {
  constexpr double tau = 6.283185307179586;
  double w = 0.5 + 0.5 * std::sin(tau * tex.freq_s * s) * std::sin(tau * tex.freq_t * u);
  if (tex.checker > 0) {
    const double cell =
        ((static_cast<long>(std::floor(s * tex.checker)) +
          static_cast<long>(std::floor(u * tex.checker))) & 1) ? 1.0 : 0.0;
    w = (1.0 - tex.checker_mix) * w + tex.checker_mix * cell;
  }
  return {tex.color_b[0] + (tex.color_a[0] - tex.color_b[0]) * w,
          tex.color_b[1] + (tex.color_a[1] - tex.color_b[1]) * w,
          tex.color_b[2] + (tex.color_a[2] - tex.color_b[2]) * w};
}

}  // namespace

RenderedFrame render_scene(const SceneSpec& spec, long frame) {
  if (spec.primitives.empty()) throw std::invalid_argument("render_scene: empty primitive list");
  if (frame < 0 || frame >= static_cast<long>(spec.trajectory.size()))
    throw std::out_of_range("render_scene: frame index out of range");
  spec.intrinsics.validate();
  const long h = spec.intrinsics.height, w = spec.intrinsics.width;

  const Mat4 m = spec.trajectory[frame].to_matrix();
  const Vec3 o{m(0, 3), m(1, 3), m(2, 3)};
  const Vec3 light = normalize(spec.light_dir);

  RenderedFrame out{Tensor<float>({3, h, w}), Tensor<float>({1, h, w})};
  for (long v = 0; v < h; ++v) {
    for (long u = 0; u < w; ++u) {
      const Vec3 dc{(u - spec.intrinsics.cx) / spec.intrinsics.fx,
                    (v - spec.intrinsics.cy) / spec.intrinsics.fy, 1.0};
      const Vec3 d{m(0, 0) * dc[0] + m(0, 1) * dc[1] + m(0, 2) * dc[2],
                   m(1, 0) * dc[0] + m(1, 1) * dc[1] + m(1, 2) * dc[2],
                   m(2, 0) * dc[0] + m(2, 1) * dc[1] + m(2, 2) * dc[2]};
      Hit hit;
      for (const auto& p : spec.primitives) {
        if (p.kind == Primitive::Kind::plane)
          intersect_plane(p, o, d, hit);
        else
          intersect_box(p, o, d, hit);
      }
      if (!hit.prim) {
        out.depth.at(0, v, u) = 0.0f;  // uncovered; generated scenes never get here
        continue;
      }
      Vec3 n = hit.normal;
      if (dot(n, d) > 0) n = {-n[0], -n[1], -n[2]};
      const double lambert =
          spec.ambient + (1.0 - spec.ambient) * std::max(0.0, -dot(n, light));
      const Vec3 al = albedo(hit.prim->texture, hit.s, hit.u);
      for (int c = 0; c < 3; ++c)
        out.image.at(c, v, u) = static_cast<float>(std::clamp(al[c] * lambert, 0.0, 1.0));
      // the ray direction has unit camera z, so the parameter is camera depth
      out.depth.at(0, v, u) = static_cast<float>(hit.t);
    }
  }
  return out;
}

RigidPose relative_pose(const SceneSpec& spec, long target, long source) {
  const long n = static_cast<long>(spec.trajectory.size());
  if (target < 0 || target >= n || source < 0 || source >= n)
    throw std::out_of_range("relative_pose: frame index out of range");
  return RigidPose::compose(spec.trajectory[source].inverse(), spec.trajectory[target]);
}

SceneSpec make_scene_spec(uint64_t seed, long frames, long height, long width) {
  if (frames < 3) throw std::invalid_argument("make_scene_spec: need at least 3 frames");
  Rng rng(seed, "scene");
  SceneSpec spec;
  spec.seed = seed;
  spec.intrinsics = {0.9 * width, 0.9 * width, width / 2.0 - 0.5, height / 2.0 - 0.5,
                     width, height};

  auto rand_color = [&](double lo, double hi) -> Vec3 {
    return {rng.uniform(lo, hi), rng.uniform(lo, hi), rng.uniform(lo, hi)};
  };

  // enclosure: ground, two side walls, far wall — every ray terminates
  const double wall_x = rng.uniform(8.0, 14.0);
  Primitive ground;
  ground.p0 = {-40, 1.5, -6};
  ground.e0 = {80, 0, 0};
  ground.e1 = {0, 0, 70};
  ground.texture = {rand_color(0.45, 0.7), rand_color(0.2, 0.4), 3.0, 18.0, 0.0, 0.0};
  spec.primitives.push_back(ground);

  for (double side : {-1.0, 1.0}) {
    Primitive wall;
    wall.p0 = {side * wall_x, -25, -6};
    wall.e0 = {0, 0, 70};
    wall.e1 = {0, 28, 0};
    wall.texture = {rand_color(0.4, 0.8), rand_color(0.2, 0.5), rng.uniform(4, 9),
                    2.0, 8.0, 0.35};
    spec.primitives.push_back(wall);
  }
  Primitive back;
  back.p0 = {-45, -25, 60};
  back.e0 = {90, 0, 0};
  back.e1 = {0, 28, 0};
  back.texture = {rand_color(0.5, 0.75), rand_color(0.3, 0.5), 2.0, 1.0, 0.0, 0.0};
  spec.primitives.push_back(back);

  const long boxes = rng.integer(3, 7);
  for (long i = 0; i < boxes; ++i) {
    const double bx = (rng.integer(0, 1) ? 1.0 : -1.0) * rng.uniform(1.2, 6.0);
    const double bz = rng.uniform(5.0, 45.0);
    const double sx = rng.uniform(0.6, 2.6), sy = rng.uniform(0.6, 2.6),
                 sz = rng.uniform(0.6, 2.6);
    Primitive box;
    box.kind = Primitive::Kind::box;
    box.bmin = {bx - sx / 2, 1.5 - sy, bz - sz / 2};
    box.bmax = {bx + sx / 2, 1.5, bz + sz / 2};
    box.texture = {rand_color(0.3, 0.9), rand_color(0.15, 0.6), rng.uniform(1, 4),
                   rng.uniform(1, 4), rng.uniform(0, 1) < 0.5 ? 4.0 : 0.0, 0.4};
    spec.primitives.push_back(box);
  }

  const double step = rng.uniform(0.18, 0.28);
  const double yaw_amp = rng.uniform(0.01, 0.05);
  const double yaw_freq = rng.uniform(0.25, 0.6);
  const double phase = rng.uniform(0, 6.28);
  Vec3 pos{0, 0, 0};
  for (long f = 0; f < frames; ++f) {
    const double yaw = yaw_amp * std::sin(yaw_freq * f + phase);
    RigidPose pose;
    pose.axis_angle = {0, yaw, 0};
    pose.translation = {pos[0], pos[1], pos[2]};
    spec.trajectory.push_back(pose);
    pos[0] += std::sin(yaw) * step;
    pos[2] += std::cos(yaw) * step;
  }
  return spec;
}

namespace {

Tensor<float> corrupt_night(const Tensor<float>& x, uint64_t seed, const NightParams& p) {
  const long h = x.dim(1), w = x.dim(2);
  Tensor<float> out(x.shape());
  for (long i = 0; i < x.size(); ++i)
    out[i] = static_cast<float>(p.brightness * std::pow(static_cast<double>(x[i]), p.gamma));

  Rng rng(seed, "night");
  const double tint[3] = {1.0, 0.9, 0.7};
  for (long k = 0; k < p.bloom_spots; ++k) {
    const double cx = rng.uniform(0, w - 1), cy = rng.uniform(0, h - 1);
    const double sigma = rng.uniform(p.bloom_sigma_lo, p.bloom_sigma_hi);
    const double gain = rng.uniform(p.bloom_gain_lo, p.bloom_gain_hi);
    for (long y = 0; y < h; ++y)
      for (long z = 0; z < w; ++z) {
        const double r2 = (z - cx) * (z - cx) + (y - cy) * (y - cy);
        const double g = gain * std::exp(-r2 / (2 * sigma * sigma));
        if (g < 1e-6) continue;
        for (long c = 0; c < 3; ++c)
          out.at(c, y, z) += static_cast<float>(g * tint[c]);
      }
  }
  if (p.noise_sigma > 0)
    for (long i = 0; i < out.size(); ++i)
      out[i] += static_cast<float>(rng.normal(0, p.noise_sigma));
  for (long i = 0; i < out.size(); ++i) out[i] = std::clamp(out[i], 0.0f, 1.0f);
  return out;
}

Tensor<float> corrupt_rain(const Tensor<float>& x, const RainParams& p) {
  const long h = x.dim(1), w = x.dim(2);
  Tensor<float> out = x;
  const long band_start = h - static_cast<long>(std::floor(p.band * h));
  for (long c = 0; c < 3; ++c)
    for (long y = band_start; y < h; ++y) {
      const long ry = h - 1 - y;  // water-style reflection of the upper rows
      for (long z = 0; z < w; ++z)
        out.at(c, y, z) = static_cast<float>((1 - p.blend) * x.at(c, y, z) +
                                             p.blend * x.at(c, ry, z));
    }
  for (long i = 0; i < out.size(); ++i)
    out[i] = static_cast<float>((out[i] - 0.5) * p.contrast + 0.5);
  const long hw = h * w;
  for (long i = 0; i < hw; ++i) {
    const float mean = (out[i] + out[hw + i] + out[2 * hw + i]) / 3.0f;
    for (long c = 0; c < 3; ++c)
      out[c * hw + i] = static_cast<float>((1 - p.desaturate) * out[c * hw + i] +
                                           p.desaturate * mean);
  }
  for (long i = 0; i < out.size(); ++i) out[i] = std::clamp(out[i], 0.0f, 1.0f);
  return out;
}

}  // namespace

Tensor<float> corrupt(const Tensor<float>& image, DomainTag tag, uint64_t seed,
                      const CorruptionParams& params) {
  if (image.shape().size() != 3 || image.dim(0) != 3)
    throw std::invalid_argument("corrupt: want (3,H,W)");
  switch (tag) {
    case DomainTag::day: return image;
    case DomainTag::night: return corrupt_night(image, seed, params.night);
    case DomainTag::rain: return corrupt_rain(image, params.rain);
  }
  throw std::invalid_argument("corrupt: unknown domain tag");
}

SyntheticCorpus::SyntheticCorpus(uint64_t seed, long scenes, long frames_per_scene, long height,
                                 long width)
    : frames_(frames_per_scene) {
  if (scenes < 1) throw std::invalid_argument("corpus: need at least one scene");
  constexpr DomainTag kTags[3] = {DomainTag::day, DomainTag::night, DomainTag::rain};
  for (long s = 0; s < scenes; ++s)
    scenes_.push_back(make_scene_spec(derive_seed(seed, "scene." + std::to_string(s)),
                                      frames_per_scene, height, width));
  long next = 0;
  for (long s = 0; s < scenes; ++s)
    for (long f = 1; f + 1 < frames_per_scene; ++f)
      centers_.push_back({s, f, kTags[next++ % 3]});
}

long SyntheticCorpus::size() const { return static_cast<long>(centers_.size()); }

DomainTag SyntheticCorpus::tag(long i) const { return centers_.at(static_cast<size_t>(i)).tag; }

RenderedFrame SyntheticCorpus::frame(long scene, long index) const {
  static std::mutex mu;
  const long key = scene * frames_ + index;
  std::lock_guard<std::mutex> lock(mu);
  for (const auto& [k, f] : cache_)
    if (k == key) return f;
  RenderedFrame f = render_scene(scenes_.at(static_cast<size_t>(scene)), index);
  if (cache_.size() >= 768) cache_.clear();
  cache_.emplace_back(key, f);
  return f;
}

SampleTriplet SyntheticCorpus::triplet(long i) const {
  const Center& c = centers_.at(static_cast<size_t>(i));
  const SceneSpec& spec = scenes_[static_cast<size_t>(c.scene)];
  RenderedFrame prev = frame(c.scene, c.index - 1);
  RenderedFrame here = frame(c.scene, c.index);
  RenderedFrame next = frame(c.scene, c.index + 1);

  SampleTriplet t;
  t.easy_prev = std::move(prev.image);
  t.easy_target = here.image;
  t.easy_next = std::move(next.image);
  t.hard_target = here.image;
  t.intrinsics = spec.intrinsics;
  t.tag = c.tag;
  t.gt_depth = std::move(here.depth);
  t.to_prev = relative_pose(spec, c.index, c.index - 1);
  t.to_next = relative_pose(spec, c.index, c.index + 1);
  return t;
}

std::vector<SampleTriplet> make_batch(const TripletSource& src, long batch_size, uint64_t seed,
                                      const CorruptionParams& params) {
  constexpr DomainTag kTags[3] = {DomainTag::day, DomainTag::night, DomainTag::rain};
  if (batch_size <= 0 || batch_size % 3 != 0)
    throw std::invalid_argument("make_batch: batch size must be a positive multiple of 3");
  std::vector<long> by_tag[3];
  for (long i = 0; i < src.size(); ++i)
    by_tag[static_cast<int>(src.tag(i))].push_back(i);
  for (int k = 0; k < 3; ++k)
    if (by_tag[k].empty())
      throw std::invalid_argument(std::string("make_batch: dataset has no ") +
                                  to_string(kTags[k]) + " samples");

  Rng rng(seed, "batch");
  std::vector<SampleTriplet> batch;
  for (long b = 0; b < batch_size; ++b) {
    const int k = static_cast<int>(b % 3);
    const auto& pool = by_tag[k];
    const long pick = pool[static_cast<size_t>(rng.integer(0, static_cast<long>(pool.size()) - 1))];
    SampleTriplet t = src.triplet(pick);
    t.tag = kTags[k];
    if (kTags[k] != DomainTag::day) {
      t.hard_target = corrupt(t.easy_target, kTags[k],
                              derive_seed(seed, "corrupt." + std::to_string(b) + "." +
                                                    std::to_string(pick)),
                              params);
      t.transformed = true;
    } else {
      t.hard_target = t.easy_target;
      t.transformed = false;
    }
    batch.push_back(std::move(t));
  }
  return batch;
}

namespace {

std::string frame_id(long scene, long index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "s%02ld_f%04ld", scene, index);
  return buf;
}

nlohmann::json intrinsics_to_json(const CameraIntrinsics& K) {
  return {{"fx", K.fx}, {"fy", K.fy}, {"cx", K.cx}, {"cy", K.cy},
          {"width", K.width}, {"height", K.height}};
}

CameraIntrinsics intrinsics_from_json(const nlohmann::json& j) {
  CameraIntrinsics K;
  K.fx = j.at("fx").get<double>();
  K.fy = j.at("fy").get<double>();
  K.cx = j.at("cx").get<double>();
  K.cy = j.at("cy").get<double>();
  K.width = j.at("width").get<long>();
  K.height = j.at("height").get<long>();
  K.validate();
  return K;
}

Tensor<float> center_crop(const Tensor<float>& chw, long ch, long cw) {
  const long C = chw.dim(0), H = chw.dim(1), W = chw.dim(2);
  if (ch > H || cw > W) throw std::invalid_argument("crop larger than the source image");
  const long oy = (H - ch) / 2, ox = (W - cw) / 2;
  Tensor<float> out({C, ch, cw});
  for (long c = 0; c < C; ++c)
    for (long y = 0; y < ch; ++y)
      for (long x = 0; x < cw; ++x) out.at(c, y, x) = chw.at(c, y + oy, x + ox);
  return out;
}

}  // namespace

Tensor<float> resize_bilinear(const Tensor<float>& chw, long oh, long ow) {
  if (chw.shape().size() != 3) throw std::invalid_argument("resize expects a (C,H,W) tensor");
  if (oh < 1 || ow < 1) throw std::invalid_argument("resize target must be at least 1x1");
  const long C = chw.dim(0), H = chw.dim(1), W = chw.dim(2);
  Tensor<float> out({C, oh, ow});
  for (long y = 0; y < oh; ++y) {
    const double fy = std::clamp((y + 0.5) * H / oh - 0.5, 0.0, H - 1.0);
    const long y0 = static_cast<long>(fy), y1 = std::min(y0 + 1, H - 1);
    const double wy = fy - y0;
    for (long x = 0; x < ow; ++x) {
      const double fx = std::clamp((x + 0.5) * W / ow - 0.5, 0.0, W - 1.0);
      const long x0 = static_cast<long>(fx), x1 = std::min(x0 + 1, W - 1);
      const double wx = fx - x0;
      for (long c = 0; c < C; ++c) {
        const double top = (1 - wx) * chw.at(c, y0, x0) + wx * chw.at(c, y0, x1);
        const double bot = (1 - wx) * chw.at(c, y1, x0) + wx * chw.at(c, y1, x1);
        out.at(c, y, x) = static_cast<float>((1 - wy) * top + wy * bot);
      }
    }
  }
  return out;
}

// depth keeps exact values: nearest sample, no blending across boundaries
Tensor<float> resize_nearest(const Tensor<float>& chw, long oh, long ow) {
  if (chw.shape().size() != 3) throw std::invalid_argument("resize expects a (C,H,W) tensor");
  if (oh < 1 || ow < 1) throw std::invalid_argument("resize target must be at least 1x1");
  const long C = chw.dim(0), H = chw.dim(1), W = chw.dim(2);
  Tensor<float> out({C, oh, ow});
  for (long y = 0; y < oh; ++y) {
    const long sy = std::clamp(static_cast<long>(std::lround((y + 0.5) * H / double(oh) - 0.5)),
                               0L, H - 1);
    for (long x = 0; x < ow; ++x) {
      const long sx = std::clamp(static_cast<long>(std::lround((x + 0.5) * W / double(ow) - 0.5)),
                                 0L, W - 1);
      for (long c = 0; c < C; ++c) out.at(c, y, x) = chw.at(c, sy, sx);
    }
  }
  return out;
}

namespace {

struct DiskFrame {
  std::string id;
  long sequence = 0, index = 0;
  DomainTag tag = DomainTag::day;
  RigidPose pose;  // camera-to-world
  bool has_pose = false;
};

class DiskDataset : public TripletSource {
 public:
  DiskDataset(const std::string& root, const DatasetLayout& layout) : root_(root), layout_(layout) {
    const fs::path manifest = fs::path(root) / "manifest.json";
    std::ifstream in(manifest);
    if (!in) throw std::runtime_error("dataset " + root + ": missing manifest.json");
    nlohmann::json j;
    try {
      in >> j;
    } catch (const std::exception& e) {
      throw std::runtime_error("dataset " + root + ": manifest parse error: " + e.what());
    }
    try {
      base_K_ = intrinsics_from_json(j.at("intrinsics"));
      has_depth_ = j.value("depth", false);
      for (const auto& f : j.at("frames")) {
        DiskFrame df;
        df.id = f.at("id").get<std::string>();
        df.sequence = f.at("sequence").get<long>();
        df.index = f.at("index").get<long>();
        df.tag = domain_from_string(f.at("tag").get<std::string>());
        if (f.contains("pose")) {
          const auto v = f.at("pose").get<std::vector<double>>();
          if (v.size() != 6)
            throw std::runtime_error("frame " + df.id + ": pose needs 6 numbers");
          df.pose = RigidPose{{v[0], v[1], v[2]}, {v[3], v[4], v[5]}};
          df.has_pose = true;
        }
        frames_.push_back(std::move(df));
      }
    } catch (const nlohmann::json::exception& e) {
      throw std::runtime_error("dataset " + root + ": malformed manifest: " + e.what());
    }
    if (frames_.empty()) throw std::runtime_error("dataset " + root + ": manifest lists no frames");

    for (size_t i = 0; i < frames_.size(); ++i) {
      if (!fs::exists(frame_path(frames_[i])))
        throw std::runtime_error("dataset " + root + ": missing frame file for " + frames_[i].id);
      if (has_depth_ && !fs::exists(depth_path(frames_[i])))
        throw std::runtime_error("dataset " + root + ": missing depth file for " + frames_[i].id);
      lookup_[frames_[i].sequence * 1000000 + frames_[i].index] = static_cast<long>(i);
    }
    for (size_t i = 0; i < frames_.size(); ++i) {
      const auto& f = frames_[i];
      if (lookup_.count(f.sequence * 1000000 + f.index - 1) &&
          lookup_.count(f.sequence * 1000000 + f.index + 1))
        centers_.push_back(static_cast<long>(i));
    }

    // manifest intrinsics must describe the stored images
    const Tensor<float> probe = read_rgb_png(frame_path(frames_[0]).string());
    if (probe.dim(1) != base_K_.height || probe.dim(2) != base_K_.width)
      throw std::runtime_error("dataset " + root + ": intrinsics/image size mismatch");

    K_ = base_K_;
    if (layout_.crop_w > 0 && layout_.crop_h > 0) {
      K_.cx -= (base_K_.width - layout_.crop_w) / 2.0;
      K_.cy -= (base_K_.height - layout_.crop_h) / 2.0;
      K_.width = layout_.crop_w;
      K_.height = layout_.crop_h;
    }
    if (layout_.out_w > 0 && layout_.out_h > 0) {
      const double sx = static_cast<double>(layout_.out_w) / K_.width;
      const double sy = static_cast<double>(layout_.out_h) / K_.height;
      K_.fx *= sx;
      K_.fy *= sy;
      K_.cx = (K_.cx + 0.5) * sx - 0.5;
      K_.cy = (K_.cy + 0.5) * sy - 0.5;
      K_.width = layout_.out_w;
      K_.height = layout_.out_h;
    }
    K_.validate();
  }

  long size() const override { return static_cast<long>(centers_.size()); }
  DomainTag tag(long i) const override {
    return frames_[static_cast<size_t>(centers_.at(static_cast<size_t>(i)))].tag;
  }

  SampleTriplet triplet(long i) const override {
    const DiskFrame& f = frames_[static_cast<size_t>(centers_.at(static_cast<size_t>(i)))];
    const DiskFrame& fp = frame_at(f.sequence, f.index - 1);
    const DiskFrame& fn = frame_at(f.sequence, f.index + 1);

    SampleTriplet t;
    t.easy_prev = load_image(fp);
    t.easy_target = load_image(f);
    t.easy_next = load_image(fn);
    t.hard_target = t.easy_target;
    t.intrinsics = K_;
    t.tag = f.tag;
    if (has_depth_) t.gt_depth = load_depth(f);
    if (f.has_pose && fp.has_pose && fn.has_pose) {
      t.to_prev = RigidPose::compose(fp.pose.inverse(), f.pose);
      t.to_next = RigidPose::compose(fn.pose.inverse(), f.pose);
    }
    return t;
  }

 private:
  fs::path frame_path(const DiskFrame& f) const {
    return fs::path(root_) / "frames" / (f.id + ".png");
  }
  fs::path depth_path(const DiskFrame& f) const {
    return fs::path(root_) / "depth" / (f.id + ".bin");
  }
  const DiskFrame& frame_at(long seq, long index) const {
    return frames_[static_cast<size_t>(lookup_.at(seq * 1000000 + index))];
  }

  Tensor<float> shape_to_layout(Tensor<float> t, bool is_depth) const {
    if (layout_.crop_w > 0 && layout_.crop_h > 0)
      t = center_crop(t, layout_.crop_h, layout_.crop_w);
    if (layout_.out_w > 0 && layout_.out_h > 0)
      t = is_depth ? resize_nearest(t, layout_.out_h, layout_.out_w)
                   : resize_bilinear(t, layout_.out_h, layout_.out_w);
    return t;
  }

  Tensor<float> load_image(const DiskFrame& f) const {
    Tensor<float> img = read_rgb_png(frame_path(f).string());
    if (img.dim(1) != base_K_.height || img.dim(2) != base_K_.width)
      throw std::runtime_error("frame " + f.id + ": unexpected image size");
    return shape_to_layout(std::move(img), false);
  }

  Tensor<float> load_depth(const DiskFrame& f) const {
    Tensor<float> d =
        read_float_bin(depth_path(f).string(), {1, base_K_.height, base_K_.width});
    return shape_to_layout(std::move(d), true);
  }

  std::string root_;
  DatasetLayout layout_;
  CameraIntrinsics base_K_, K_;
  bool has_depth_ = false;
  std::vector<DiskFrame> frames_;
  std::map<long, long> lookup_;
  std::vector<long> centers_;
};

}  // namespace

void write_dataset(const std::string& root, const SyntheticCorpus& corpus, bool with_depth) {
  fs::create_directories(fs::path(root) / "frames");
  if (with_depth) fs::create_directories(fs::path(root) / "depth");

  nlohmann::json manifest;
  manifest["intrinsics"] = intrinsics_to_json(corpus.scene(0).intrinsics);
  manifest["depth"] = with_depth;
  manifest["pose_convention"] = "camera_to_world";
  auto& frames = manifest["frames"] = nlohmann::json::array();

  // per-frame tag: centers carry their round-robin tag, endpoints default day
  const long per_scene = std::max(corpus.frames_per_scene() - 2, 1L);
  std::map<std::pair<long, long>, DomainTag> center_tag;
  for (long i = 0; i < corpus.size(); ++i)
    center_tag[{i / per_scene, i % per_scene + 1}] = corpus.tag(i);

  for (long s = 0; s < corpus.scene_count(); ++s) {
    const SceneSpec& spec = corpus.scene(s);
    for (long f = 0; f < corpus.frames_per_scene(); ++f) {
      const std::string id = frame_id(s, f);
      RenderedFrame rf = corpus.frame(s, f);
      write_rgb_png((fs::path(root) / "frames" / (id + ".png")).string(), rf.image);
      if (with_depth)
        write_float_bin((fs::path(root) / "depth" / (id + ".bin")).string(), rf.depth);
      const auto it = center_tag.find({s, f});
      const DomainTag tag = it == center_tag.end() ? DomainTag::day : it->second;
      const RigidPose& pose = spec.trajectory[static_cast<size_t>(f)];
      frames.push_back({{"id", id},
                        {"sequence", s},
                        {"index", f},
                        {"tag", to_string(tag)},
                        {"pose",
                         {pose.axis_angle[0], pose.axis_angle[1], pose.axis_angle[2],
                          pose.translation[0], pose.translation[1], pose.translation[2]}}});
    }
  }

  std::ofstream out(fs::path(root) / "manifest.json");
  if (!out) throw std::runtime_error("dataset " + root + ": cannot write manifest");
  out << manifest.dump(1);
  out.flush();
  if (!out) throw std::runtime_error("dataset " + root + ": manifest write failed");
}

std::unique_ptr<TripletSource> load_disk_dataset(const std::string& root,
                                                 const DatasetLayout& layout) {
  return std::make_unique<DiskDataset>(root, layout);
}

std::string cache_root() {
  const char* v = std::getenv("PROMPTMONO_CACHE");
  return v ? std::string(v) : std::string();
}

}  // namespace pm
