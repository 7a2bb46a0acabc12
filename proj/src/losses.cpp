#include "pm/losses.hpp"

#include <cmath>
#include <stdexcept>

namespace pm::loss {

using ad::Var;

namespace {

// Box mean over a window, border handled by reflection.
template <typename T>
Var<T> box_mean(const Var<T>& x, long window) {
  const long c = x.shape()[1];
  const long p = (window - 1) / 2;
  auto w = ad::constant(Tensor<T>({c, window, window}, T(1) / static_cast<T>(window * window)));
  auto b = ad::constant(Tensor<T>::zeros({c}));
  return ad::dwconv2d(ad::pad_reflect(x, p), w, b, 0);
}

}  // namespace

template <typename T>
Var<T> ssim(const Var<T>& a, const Var<T>& b, const PhotometricConfig& cfg) {
  if (a.shape() != b.shape())
    throw std::invalid_argument("ssim: shape mismatch " + shape_str(a.shape()) + " vs " +
                                shape_str(b.shape()));
  if (cfg.ssim_window % 2 != 1) throw std::invalid_argument("ssim: window must be odd");
  const T c1 = static_cast<T>(cfg.c1), c2 = static_cast<T>(cfg.c2);
  auto mu_a = box_mean(a, cfg.ssim_window);
  auto mu_b = box_mean(b, cfg.ssim_window);
  auto var_a = ad::sub(box_mean(ad::mul(a, a), cfg.ssim_window), ad::mul(mu_a, mu_a));
  auto var_b = ad::sub(box_mean(ad::mul(b, b), cfg.ssim_window), ad::mul(mu_b, mu_b));
  auto cov = ad::sub(box_mean(ad::mul(a, b), cfg.ssim_window), ad::mul(mu_a, mu_b));
  auto num = ad::mul(ad::add_scalar(ad::mul_scalar(ad::mul(mu_a, mu_b), T(2)), c1),
                     ad::add_scalar(ad::mul_scalar(cov, T(2)), c2));
  auto den = ad::mul(ad::add_scalar(ad::add(ad::mul(mu_a, mu_a), ad::mul(mu_b, mu_b)), c1),
                     ad::add_scalar(ad::add(var_a, var_b), c2));
  return ad::channel_mean(ad::div(num, den));
}

template <typename T>
Var<T> photometric_error(const Var<T>& a, const Var<T>& b, const PhotometricConfig& cfg) {
  if (a.shape() != b.shape())
    throw std::invalid_argument("photometric_error: shape mismatch");
  const T alpha = static_cast<T>(cfg.alpha);
  auto ssim_term = ad::mul_scalar(ad::add_scalar(ad::neg(ssim(a, b, cfg)), T(1)), alpha / 2);
  auto l1_term = ad::mul_scalar(ad::channel_mean(ad::abs_v(ad::sub(a, b))), T(1) - alpha);
  return ad::add(ssim_term, l1_term);
}

template <typename T>
Var<T> min_reprojection_loss(const Var<T>& target, const std::vector<Reconstruction<T>>& recons,
                             const PhotometricConfig& cfg) {
  if (recons.empty()) throw std::invalid_argument("min_reprojection_loss: no reconstructions");
  Var<T> min_pe;
  for (const auto& rec : recons) {
    auto pe = photometric_error(target, rec.image, cfg);
    min_pe = min_pe.defined() ? ad::minimum(min_pe, pe) : pe;
  }
  // average over pixels any reconstruction reaches
  Tensor<T> mask(min_pe.shape(), T(0));
  long covered = 0;
  for (long i = 0; i < mask.size(); ++i) {
    bool any = false;
    for (const auto& rec : recons) any = any || rec.valid[i] != 0;
    if (any) {
      mask[i] = T(1);
      ++covered;
    }
  }
  if (covered == 0) covered = 1;
  return ad::mul_scalar(ad::sum_all(ad::mul(min_pe, ad::constant(std::move(mask)))),
                        T(1) / static_cast<T>(covered));
}

template <typename T>
Var<T> self_distillation_loss(const Var<T>& depth_hard, const Var<T>& depth_easy) {
  if (depth_hard.shape() != depth_easy.shape())
    throw std::invalid_argument("self_distillation_loss: shape mismatch");
  if (depth_easy.requires_grad())
    throw std::invalid_argument(
        "self_distillation_loss: easy depth must be detached (stop-gradient contract)");
  for (const Var<T>* d : {&depth_hard, &depth_easy})
    for (long i = 0; i < d->size(); ++i)
      if (!(d->value()[i] > T(0)))
        throw std::invalid_argument("self_distillation_loss: depths must be positive");
  return ad::mean_all(ad::square(ad::sub(ad::reciprocal(depth_hard), ad::reciprocal(depth_easy))));
}

template <typename T>
Var<T> smoothness_loss(const Var<T>& disparity, const Var<T>& image) {
  const Shape& ds = disparity.shape();
  const Shape& is = image.shape();
  if (ds.size() != 4 || is.size() != 4 || ds[0] != is[0] || ds[2] != is[2] || ds[3] != is[3])
    throw std::invalid_argument("smoothness_loss: disparity/image shape mismatch");
  auto mean_d = ad::mean_all(disparity);
  if (!(mean_d.item() > T(0)))
    throw std::invalid_argument("smoothness_loss: disparity mean must be positive");
  auto d_star = ad::div(disparity, mean_d);
  auto ex = ad::exp_v(ad::neg(ad::channel_mean(ad::abs_v(ad::forward_diff_x(image)))));
  auto ey = ad::exp_v(ad::neg(ad::channel_mean(ad::abs_v(ad::forward_diff_y(image)))));
  auto tx = ad::mean_all(ad::mul(ad::abs_v(ad::forward_diff_x(d_star)), ex));
  auto ty = ad::mean_all(ad::mul(ad::abs_v(ad::forward_diff_y(d_star)), ey));
  return ad::add(tx, ty);
}

template <typename T>
Var<T> total_loss(const std::vector<ScaleLosses<T>>& per_scale, const LossWeights& w) {
  if (per_scale.empty()) throw std::invalid_argument("total_loss: no scales");
  Var<T> acc;
  for (const auto& s : per_scale) {
    auto term = ad::add(
        ad::add(ad::mul_scalar(s.photometric, static_cast<T>(w.lambda_p)),
                ad::mul_scalar(s.self_distillation, static_cast<T>(w.lambda_sd))),
        ad::mul_scalar(s.smoothness, static_cast<T>(w.lambda_smooth)));
    acc = acc.defined() ? ad::add(acc, term) : term;
  }
  return ad::mul_scalar(acc, T(1) / static_cast<T>(per_scale.size()));
}

#define PM_INSTANTIATE_LOSS(T)                                                              \
  template ad::Var<T> ssim<T>(const ad::Var<T>&, const ad::Var<T>&, const PhotometricConfig&); \
  template ad::Var<T> photometric_error<T>(const ad::Var<T>&, const ad::Var<T>&,           \
                                           const PhotometricConfig&);                      \
  template ad::Var<T> min_reprojection_loss<T>(const ad::Var<T>&,                          \
                                               const std::vector<Reconstruction<T>>&,      \
                                               const PhotometricConfig&);                   \
  template ad::Var<T> self_distillation_loss<T>(const ad::Var<T>&, const ad::Var<T>&);     \
  template ad::Var<T> smoothness_loss<T>(const ad::Var<T>&, const ad::Var<T>&);            \
  template ad::Var<T> total_loss<T>(const std::vector<ScaleLosses<T>>&, const LossWeights&);

PM_INSTANTIATE_LOSS(float)
PM_INSTANTIATE_LOSS(double)
#undef PM_INSTANTIATE_LOSS

}  // namespace pm::loss
