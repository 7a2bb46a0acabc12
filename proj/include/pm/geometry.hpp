#pragma once

#include <array>

#include "pm/core/ops.hpp"
#include "pm/core/tensor.hpp"

namespace pm {

inline constexpr double kZEps = 1e-3;  // behind-camera projection guard, meters

struct CameraIntrinsics {
  double fx = 0, fy = 0, cx = 0, cy = 0;
  long width = 0, height = 0;

  // Pyramid level s scales everything by 2^-s.
  CameraIntrinsics scaled(int level) const;
  void validate() const;
};

struct Mat4 {
  std::array<double, 16> m{};
  double& operator()(int r, int c) { return m[r * 4 + c]; }
  double operator()(int r, int c) const { return m[r * 4 + c]; }
  static Mat4 identity();
  Mat4 operator*(const Mat4& o) const;
};

struct RigidPose {
  std::array<double, 3> axis_angle{0, 0, 0};
  std::array<double, 3> translation{0, 0, 0};

  static RigidPose identity() { return {}; }
  Mat4 to_matrix() const;
  RigidPose inverse() const;
  static RigidPose compose(const RigidPose& a, const RigidPose& b);  // matrix(a)*matrix(b)
  static RigidPose from_matrix(const Mat4& m);
};

Mat4 pose_to_matrix(const RigidPose& pose);

namespace geo {

// Unit-depth camera rays per pixel, shape (3, H*W): ((u-cx)/fx, (v-cy)/fy, 1).
template <typename T>
Tensor<T> camera_rays(const CameraIntrinsics& K);

// depth (B,1,H,W) -> camera-frame points (B,3,H*W)
template <typename T>
ad::Var<T> backproject(const ad::Var<T>& depth, const CameraIntrinsics& K);

template <typename T>
struct Projection {
  ad::Var<T> grid;        // (B,2,H,W) pixel coords
  Tensor<uint8_t> valid;  // (B,1,H,W): z > z_eps and inside the frame
};

// points (B,3,H*W) -> pixel grid at the given output size
template <typename T>
Projection<T> project(const ad::Var<T>& points, const CameraIntrinsics& K, long h, long w);

// axis-angle (B,3) -> rotation matrices (B,3,3), differentiable
template <typename T>
ad::Var<T> rodrigues(const ad::Var<T>& axis_angle);

template <typename T>
struct Warp {
  ad::Var<T> image;       // source resampled into the target view
  ad::Var<T> grid;        // reprojection grid
  Tensor<uint8_t> valid;  // projection validity
};

// warped = source sampled at project(transform(backproject(depth))).
// Differentiable in source, depth, axis_angle and translation.
template <typename T>
Warp<T> synthesize_view(const ad::Var<T>& source, const ad::Var<T>& depth,
                        const ad::Var<T>& axis_angle, const ad::Var<T>& translation,
                        const CameraIntrinsics& K);

template <typename T>
Warp<T> synthesize_view(const ad::Var<T>& source, const ad::Var<T>& depth,
                        const RigidPose& pose, const CameraIntrinsics& K);

}  // namespace geo
}  // namespace pm
