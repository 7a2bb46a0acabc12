#pragma once

#include <array>
#include <memory>
#include <string>
#include <vector>

#include "pm/core/tensor.hpp"
#include "pm/geometry.hpp"

namespace pm {

enum class DomainTag { day, night, rain };
const char* to_string(DomainTag tag);
DomainTag domain_from_string(const std::string& s);

using Vec3 = std::array<double, 3>;

struct TextureParams {
  Vec3 color_a{0.6, 0.6, 0.6};
  Vec3 color_b{0.3, 0.3, 0.3};
  double freq_s = 1.0;      // sinusoid cycles across the primitive
  double freq_t = 1.0;
  double checker = 0.0;     // checker cells across the primitive, 0 = smooth only
  double checker_mix = 0.5;
};

// Finite rectangle (p0 + s*e0 + t*e1, s,t in [0,1]) or an axis-aligned box.
struct Primitive {
  enum class Kind { plane, box } kind = Kind::plane;
  Vec3 p0{}, e0{}, e1{};  // plane definition (e0 and e1 orthogonal)
  Vec3 bmin{}, bmax{};    // box corners
  TextureParams texture;
};

// Camera convention: x right, y down, z forward; trajectory poses map
// camera coordinates to world coordinates; the world frame is frame 0.
struct SceneSpec {
  uint64_t seed = 0;
  CameraIntrinsics intrinsics;
  std::vector<Primitive> primitives;
  std::vector<RigidPose> trajectory;
  Vec3 light_dir{0.3, -0.8, 0.5};
  double ambient = 0.35;
};

// Driving-like random scene: enclosing ground/walls so every ray hits
// geometry, a handful of textured boxes, forward motion with gentle yaw.
SceneSpec make_scene_spec(uint64_t seed, long frames, long height, long width);

struct RenderedFrame {
  Tensor<float> image;  // (3,H,W) in [0,1]
  Tensor<float> depth;  // (1,H,W) camera-frame z in meters, exact
};

RenderedFrame render_scene(const SceneSpec& spec, long frame);

// relative pose mapping frame `target`'s camera coordinates into `source`'s
RigidPose relative_pose(const SceneSpec& spec, long target, long source);

struct NightParams {
  double gamma = 2.2;
  double brightness = 0.35;
  long bloom_spots = 3;
  double bloom_sigma_lo = 2.0, bloom_sigma_hi = 6.0;
  double bloom_gain_lo = 0.15, bloom_gain_hi = 0.4;
  double noise_sigma = 0.02;
};

struct RainParams {
  double blend = 0.35;       // reflection weight in the lower band
  double band = 1.0 / 3.0;   // fraction of rows reflected, from the bottom
  double contrast = 0.8;     // scaling around mid-gray
  double desaturate = 0.3;   // pull toward the channel mean
};

struct CorruptionParams {
  NightParams night;
  RainParams rain;
};

// Photometric-only domain shift; day returns the input untouched.
Tensor<float> corrupt(const Tensor<float>& image, DomainTag tag, uint64_t seed,
                      const CorruptionParams& params = {});

struct SampleTriplet {
  Tensor<float> easy_prev, easy_target, easy_next;  // (3,H,W)
  Tensor<float> hard_target;                        // (3,H,W), pixel-aligned
  CameraIntrinsics intrinsics;
  DomainTag tag = DomainTag::day;
  bool transformed = false;  // hard differs from easy
  Tensor<float> gt_depth;    // (1,H,W) target depth, empty when unavailable
  RigidPose to_prev, to_next;  // ground-truth relative poses when known
};

class TripletSource {
 public:
  virtual ~TripletSource() = default;
  virtual long size() const = 0;
  virtual DomainTag tag(long i) const = 0;
  virtual SampleTriplet triplet(long i) const = 0;
};

// Equal per-domain counts; hard targets of night/rain slots are corrupted,
// day slots pass the easy image through unchanged.
std::vector<SampleTriplet> make_batch(const TripletSource& src, long batch_size, uint64_t seed,
                                      const CorruptionParams& params = {});

class SyntheticCorpus : public TripletSource {
 public:
  SyntheticCorpus(uint64_t seed, long scenes, long frames_per_scene, long height, long width);

  long size() const override;
  DomainTag tag(long i) const override;
  SampleTriplet triplet(long i) const override;

  long scene_count() const { return static_cast<long>(scenes_.size()); }
  const SceneSpec& scene(long i) const { return scenes_[i]; }
  long frames_per_scene() const { return frames_; }
  RenderedFrame frame(long scene, long index) const;

 private:
  std::vector<SceneSpec> scenes_;
  long frames_ = 0;
  struct Center {
    long scene, index;
    DomainTag tag;
  };
  std::vector<Center> centers_;
  mutable std::vector<std::pair<long, RenderedFrame>> cache_;  // key: scene*frames+index
};

// root/manifest.json, root/frames/{id}.png, root/depth/{id}.bin
void write_dataset(const std::string& root, const SyntheticCorpus& corpus, bool with_depth);

struct DatasetLayout {
  long crop_w = 0, crop_h = 0;  // center crop, 0 = keep full frame
  long out_w = 0, out_h = 0;    // resize after crop, 0 = keep crop size
};

std::unique_ptr<TripletSource> load_disk_dataset(const std::string& root,
                                                 const DatasetLayout& layout = {});

// generated-data reuse root from PROMPTMONO_CACHE, empty when unset
std::string cache_root();

// (C,H,W) -> (C,oh,ow); bilinear blends values, nearest keeps them exact
Tensor<float> resize_bilinear(const Tensor<float>& chw, long oh, long ow);
Tensor<float> resize_nearest(const Tensor<float>& chw, long oh, long ow);

}  // namespace pm
