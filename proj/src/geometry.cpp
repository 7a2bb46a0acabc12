#include "pm/geometry.hpp"

#include <cmath>
#include <stdexcept>

namespace pm {

CameraIntrinsics CameraIntrinsics::scaled(int level) const {
  const double s = std::ldexp(1.0, -level);
  return {fx * s, fy * s, cx * s, cy * s, static_cast<long>(width * s),
          static_cast<long>(height * s)};
}

void CameraIntrinsics::validate() const {
  if (!(fx > 0) || !(fy > 0)) throw std::invalid_argument("intrinsics: focal lengths must be > 0");
  if (!(cx > 0 && cx < width) || !(cy > 0 && cy < height))
    throw std::invalid_argument("intrinsics: principal point outside image");
}

Mat4 Mat4::identity() {
  Mat4 r;
  for (int i = 0; i < 4; ++i) r(i, i) = 1;
  return r;
}

Mat4 Mat4::operator*(const Mat4& o) const {
  Mat4 r;
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) {
      double acc = 0;
      for (int k = 0; k < 4; ++k) acc += (*this)(i, k) * o(k, j);
      r(i, j) = acc;
    }
  return r;
}

namespace {

std::array<double, 9> rotation_from_axis_angle(const std::array<double, 3>& aa) {
  const double theta = std::sqrt(aa[0] * aa[0] + aa[1] * aa[1] + aa[2] * aa[2]);
  std::array<double, 9> r{1, 0, 0, 0, 1, 0, 0, 0, 1};
  if (theta < 1e-12) {
    // first-order term keeps tiny rotations exact enough for composition
    r[1] = -aa[2];
    r[2] = aa[1];
    r[3] = aa[2];
    r[5] = -aa[0];
    r[6] = -aa[1];
    r[7] = aa[0];
    return r;
  }
  const double x = aa[0] / theta, y = aa[1] / theta, z = aa[2] / theta;
  const double c = std::cos(theta), s = std::sin(theta), C = 1 - c;
  r = {x * x * C + c,     x * y * C - z * s, x * z * C + y * s,
       y * x * C + z * s, y * y * C + c,     y * z * C - x * s,
       z * x * C - y * s, z * y * C + x * s, z * z * C + c};
  return r;
}

std::array<double, 3> axis_angle_from_rotation(const std::array<double, 9>& r) {
  const double tr = r[0] + r[4] + r[8];
  double cos_t = (tr - 1.0) / 2.0;
  cos_t = std::max(-1.0, std::min(1.0, cos_t));
  const double theta = std::acos(cos_t);
  const std::array<double, 3> skew = {r[7] - r[5], r[2] - r[6], r[3] - r[1]};
  if (theta < 1e-7) return {skew[0] / 2, skew[1] / 2, skew[2] / 2};
  if (theta > M_PI - 1e-5) {
    // near pi the skew part vanishes; recover the axis from the diagonal
    std::array<double, 3> ax = {std::sqrt(std::max(0.0, (r[0] + 1) / 2)),
                                std::sqrt(std::max(0.0, (r[4] + 1) / 2)),
                                std::sqrt(std::max(0.0, (r[8] + 1) / 2))};
    int k = 0;
    if (ax[1] > ax[k]) k = 1;
    if (ax[2] > ax[k]) k = 2;
    if (k == 0) {
      ax[1] = r[1] / (2 * ax[0]);
      ax[2] = r[2] / (2 * ax[0]);
    } else if (k == 1) {
      ax[0] = r[1] / (2 * ax[1]);
      ax[2] = r[5] / (2 * ax[1]);
    } else {
      ax[0] = r[2] / (2 * ax[2]);
      ax[1] = r[5] / (2 * ax[2]);
    }
    const double n = std::sqrt(ax[0] * ax[0] + ax[1] * ax[1] + ax[2] * ax[2]);
    return {theta * ax[0] / n, theta * ax[1] / n, theta * ax[2] / n};
  }
  const double k = theta / (2 * std::sin(theta));
  return {k * skew[0], k * skew[1], k * skew[2]};
}

void check_finite(const std::array<double, 3>& v, const char* what) {
  for (double x : v)
    if (!std::isfinite(x)) throw std::invalid_argument(std::string(what) + " must be finite");
}

}  // namespace

Mat4 RigidPose::to_matrix() const {
  check_finite(axis_angle, "pose axis_angle");
  check_finite(translation, "pose translation");
  const auto r = rotation_from_axis_angle(axis_angle);
  Mat4 m = Mat4::identity();
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) m(i, j) = r[i * 3 + j];
  for (int i = 0; i < 3; ++i) m(i, 3) = translation[i];
  return m;
}

RigidPose RigidPose::inverse() const {
  const auto r = rotation_from_axis_angle(axis_angle);
  // R^T t
  std::array<double, 3> t{};
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) t[i] += r[j * 3 + i] * translation[j];
  return {{-axis_angle[0], -axis_angle[1], -axis_angle[2]}, {-t[0], -t[1], -t[2]}};
}

RigidPose RigidPose::compose(const RigidPose& a, const RigidPose& b) {
  return from_matrix(a.to_matrix() * b.to_matrix());
}

RigidPose RigidPose::from_matrix(const Mat4& m) {
  std::array<double, 9> r;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) r[i * 3 + j] = m(i, j);
  RigidPose p;
  p.axis_angle = axis_angle_from_rotation(r);
  p.translation = {m(0, 3), m(1, 3), m(2, 3)};
  return p;
}

Mat4 pose_to_matrix(const RigidPose& pose) { return pose.to_matrix(); }

namespace geo {

using ad::Var;

template <typename T>
Tensor<T> camera_rays(const CameraIntrinsics& K) {
  const long h = K.height, w = K.width;
  Tensor<T> rays({3, h * w});
  for (long y = 0; y < h; ++y)
    for (long x = 0; x < w; ++x) {
      const long p = y * w + x;
      rays.data()[p] = static_cast<T>((x - K.cx) / K.fx);
      rays.data()[h * w + p] = static_cast<T>((y - K.cy) / K.fy);
      rays.data()[2 * h * w + p] = T(1);
    }
  return rays;
}

template <typename T>
Var<T> backproject(const Var<T>& depth, const CameraIntrinsics& K) {
  const Shape& s = depth.shape();
  if (s.size() != 4 || s[1] != 1 || s[2] != K.height || s[3] != K.width)
    throw std::invalid_argument("backproject: depth must be (B,1," + std::to_string(K.height) +
                                "," + std::to_string(K.width) + "), got " + shape_str(s));
  const long b = s[0], hw = s[2] * s[3];
  auto rays = ad::repeat_leading(ad::constant(camera_rays<T>(K)), b);  // (B,3,HW)
  return ad::mul_mid(rays, ad::reshape(depth, {b, hw}), 1);
}

template <typename T>
Projection<T> project(const Var<T>& points, const CameraIntrinsics& K, long h, long w) {
  const Shape& s = points.shape();
  if (s.size() != 3 || s[1] != 3) throw std::invalid_argument("project: points must be (B,3,HW)");
  const long b = s[0], hw = s[2];
  if (hw != h * w) throw std::invalid_argument("project: grid size mismatch");
  auto x = ad::slice(points, 1, 0, 1);
  auto y = ad::slice(points, 1, 1, 1);
  auto z = ad::slice(points, 1, 2, 1);
  auto zc = ad::clamp_min(z, static_cast<T>(kZEps));
  auto u = ad::add_scalar(ad::mul_scalar(ad::div(x, zc), static_cast<T>(K.fx)),
                          static_cast<T>(K.cx));
  auto v = ad::add_scalar(ad::mul_scalar(ad::div(y, zc), static_cast<T>(K.fy)),
                          static_cast<T>(K.cy));
  auto grid = ad::reshape(ad::concat<T>({u, v}, 1), {b, 2, h, w});

  // in-frame bounds come from the intrinsics, not the output grid layout;
  // border slack absorbs round-off so an identity warp stays fully valid
  const T tol = static_cast<T>(1e-6);
  const T umax = static_cast<T>(K.width - 1) + tol;
  const T vmax = static_cast<T>(K.height - 1) + tol;
  Tensor<uint8_t> valid({b, 1, h, w});
  const T* zp = z.value().data();
  const T* gp = grid.value().data();
  for (long bi = 0; bi < b; ++bi)
    for (long p = 0; p < hw; ++p) {
      const T uu = gp[bi * 2 * hw + p];
      const T vv = gp[(bi * 2 + 1) * hw + p];
      const bool ok = zp[bi * hw + p] > static_cast<T>(kZEps) && uu >= -tol && uu <= umax &&
                      vv >= -tol && vv <= vmax;
      valid.data()[bi * hw + p] = ok ? 1 : 0;
    }
  return {std::move(grid), std::move(valid)};
}

template <typename T>
Var<T> rodrigues(const Var<T>& axis_angle) {
  const Shape& s = axis_angle.shape();
  if (s.size() != 2 || s[1] != 3) throw std::invalid_argument("rodrigues: want (B,3)");
  auto rx = ad::slice(axis_angle, 1, 0, 1);
  auto ry = ad::slice(axis_angle, 1, 1, 1);
  auto rz = ad::slice(axis_angle, 1, 2, 1);
  // guarded so the composite stays smooth through theta -> 0
  auto theta = ad::sqrt_v(ad::add_scalar(
      ad::add(ad::add(ad::square(rx), ad::square(ry)), ad::square(rz)), T(1e-14)));
  auto inv = ad::reciprocal(ad::add_scalar(theta, T(1e-7)));
  auto x = ad::mul(rx, inv);
  auto y = ad::mul(ry, inv);
  auto z = ad::mul(rz, inv);
  auto c = ad::cos_v(theta);
  auto sn = ad::sin_v(theta);
  auto C = ad::sub(ad::constant(Tensor<T>(c.shape(), T(1))), c);

  auto xs = ad::mul(x, sn);
  auto ys = ad::mul(y, sn);
  auto zs = ad::mul(z, sn);
  auto xC = ad::mul(x, C);
  auto yC = ad::mul(y, C);
  auto zC = ad::mul(z, C);

  auto r00 = ad::add(ad::mul(x, xC), c);
  auto r01 = ad::sub(ad::mul(x, yC), zs);
  auto r02 = ad::add(ad::mul(x, zC), ys);
  auto r10 = ad::add(ad::mul(y, xC), zs);
  auto r11 = ad::add(ad::mul(y, yC), c);
  auto r12 = ad::sub(ad::mul(y, zC), xs);
  auto r20 = ad::sub(ad::mul(z, xC), ys);
  auto r21 = ad::add(ad::mul(z, yC), xs);
  auto r22 = ad::add(ad::mul(z, zC), c);

  auto rows = ad::concat<T>({r00, r01, r02, r10, r11, r12, r20, r21, r22}, 1);  // (B,9)
  return ad::reshape(rows, {s[0], 3, 3});
}

template <typename T>
Warp<T> synthesize_view(const Var<T>& source, const Var<T>& depth, const Var<T>& axis_angle,
                        const Var<T>& translation, const CameraIntrinsics& K) {
  const Shape& ss = source.shape();
  const Shape& ds = depth.shape();
  if (ss.size() != 4 || ds.size() != 4 || ss[0] != ds[0] || ss[2] != ds[2] || ss[3] != ds[3])
    throw std::invalid_argument("synthesize_view: source/depth shape mismatch");
  const long b = ss[0], h = ss[2], w = ss[3];
  auto pts = backproject(depth, K);                                      // (B,3,HW)
  auto R = rodrigues(axis_angle);                                        // (B,3,3)
  auto Rt = ad::concat<T>({R, ad::reshape(translation, {b, 3, 1})}, 2);  // (B,3,4)
  auto ones = ad::constant(Tensor<T>({b, 1, h * w}, T(1)));
  auto cam2 = ad::bmm(Rt, ad::concat<T>({pts, ones}, 1));                // (B,3,HW)
  auto proj = project(cam2, K, h, w);
  auto warped = ad::bilinear_sample(source, proj.grid);
  return {std::move(warped), std::move(proj.grid), std::move(proj.valid)};
}

template <typename T>
Warp<T> synthesize_view(const Var<T>& source, const Var<T>& depth, const RigidPose& pose,
                        const CameraIntrinsics& K) {
  const long b = source.shape()[0];
  Tensor<T> aa({b, 3});
  Tensor<T> tr({b, 3});
  for (long i = 0; i < b; ++i)
    for (long j = 0; j < 3; ++j) {
      aa.data()[i * 3 + j] = static_cast<T>(pose.axis_angle[j]);
      tr.data()[i * 3 + j] = static_cast<T>(pose.translation[j]);
    }
  return synthesize_view(source, depth, ad::constant(std::move(aa)), ad::constant(std::move(tr)),
                         K);
}

#define PM_INSTANTIATE_GEO(T)                                                                  \
  template Tensor<T> camera_rays<T>(const CameraIntrinsics&);                                  \
  template ad::Var<T> backproject<T>(const ad::Var<T>&, const CameraIntrinsics&);              \
  template Projection<T> project<T>(const ad::Var<T>&, const CameraIntrinsics&, long, long);   \
  template ad::Var<T> rodrigues<T>(const ad::Var<T>&);                                         \
  template Warp<T> synthesize_view<T>(const ad::Var<T>&, const ad::Var<T>&, const ad::Var<T>&, \
                                      const ad::Var<T>&, const CameraIntrinsics&);             \
  template Warp<T> synthesize_view<T>(const ad::Var<T>&, const ad::Var<T>&, const RigidPose&,  \
                                      const CameraIntrinsics&);

PM_INSTANTIATE_GEO(float)
PM_INSTANTIATE_GEO(double)
#undef PM_INSTANTIATE_GEO

}  // namespace geo
}  // namespace pm
