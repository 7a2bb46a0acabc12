#include <doctest.h>

#include <cmath>
#include <vector>

#include "pm/losses.hpp"
#include "testutil.hpp"

using namespace pm;
using ad::VarD;
using pmtest::fd_max_rel_err;
using pmtest::random_tensor;

namespace {

long reflect(long i, long n) {
  if (i < 0) return -i;
  if (i >= n) return 2 * n - 2 - i;
  return i;
}

// Literal-loop SSIM, written against the definition rather than the conv stack.
Tensor<double> ssim_oracle(const Tensor<double>& a, const Tensor<double>& b,
                           const PhotometricConfig& cfg) {
  const long B = a.dim(0), C = a.dim(1), H = a.dim(2), W = a.dim(3);
  const long r = (cfg.ssim_window - 1) / 2;
  Tensor<double> out({B, 1, H, W});
  for (long n = 0; n < B; ++n)
    for (long y = 0; y < H; ++y)
      for (long x = 0; x < W; ++x) {
        double acc = 0;
        for (long c = 0; c < C; ++c) {
          double sa = 0, sb = 0, saa = 0, sbb = 0, sab = 0;
          for (long dy = -r; dy <= r; ++dy)
            for (long dx = -r; dx <= r; ++dx) {
              const double va = a.at(n, c, reflect(y + dy, H), reflect(x + dx, W));
              const double vb = b.at(n, c, reflect(y + dy, H), reflect(x + dx, W));
              sa += va;
              sb += vb;
              saa += va * va;
              sbb += vb * vb;
              sab += va * vb;
            }
          const double m = static_cast<double>(cfg.ssim_window * cfg.ssim_window);
          const double mu_a = sa / m, mu_b = sb / m;
          const double var_a = saa / m - mu_a * mu_a;
          const double var_b = sbb / m - mu_b * mu_b;
          const double cov = sab / m - mu_a * mu_b;
          acc += ((2 * mu_a * mu_b + cfg.c1) * (2 * cov + cfg.c2)) /
                 ((mu_a * mu_a + mu_b * mu_b + cfg.c1) * (var_a + var_b + cfg.c2));
        }
        out.at(n, 0, y, x) = acc / static_cast<double>(C);
      }
  return out;
}

}  // namespace

TEST_CASE("ssim identities") {
  auto img = random_tensor<double>({1, 3, 6, 6}, 401, 0.0, 1.0);
  auto s_self = loss::ssim(VarD::leaf(img), VarD::leaf(img));
  for (long i = 0; i < s_self.size(); ++i) CHECK(s_self.value()[i] == doctest::Approx(1.0).epsilon(1e-12));

  PhotometricConfig cfg;
  auto zeros = VarD::leaf(Tensor<double>({1, 1, 4, 4}, 0.0));
  auto ones = VarD::leaf(Tensor<double>({1, 1, 4, 4}, 1.0));
  const double want = cfg.c1 / (1.0 + cfg.c1);
  auto s01 = loss::ssim(zeros, ones);
  for (long i = 0; i < s01.size(); ++i) CHECK(s01.value()[i] == doctest::Approx(want).epsilon(1e-12));

  auto a = random_tensor<double>({1, 3, 5, 5}, 402, 0.0, 1.0);
  auto b = random_tensor<double>({1, 3, 5, 5}, 403, 0.0, 1.0);
  auto sab = loss::ssim(VarD::leaf(a), VarD::leaf(b));
  auto sba = loss::ssim(VarD::leaf(b), VarD::leaf(a));
  CHECK(pmtest::max_abs_diff(sab.value(), sba.value()) < 1e-12);
}

TEST_CASE("ssim matches a literal window oracle") {
  PhotometricConfig cfg;
  auto a = random_tensor<double>({2, 3, 6, 7}, 404, 0.0, 1.0);
  auto b = random_tensor<double>({2, 3, 6, 7}, 405, 0.0, 1.0);
  auto got = loss::ssim(VarD::leaf(a), VarD::leaf(b), cfg);
  auto want = ssim_oracle(a, b, cfg);
  CHECK(pmtest::max_abs_diff(got.value(), want) < 1e-10);
}

TEST_CASE("photometric error identities") {
  auto img = random_tensor<double>({1, 3, 5, 5}, 406, 0.0, 1.0);
  auto pe_self = loss::photometric_error(VarD::leaf(img), VarD::leaf(img));
  for (long i = 0; i < pe_self.size(); ++i) CHECK(std::abs(pe_self.value()[i]) < 1e-12);

  PhotometricConfig cfg;
  auto zeros = VarD::leaf(Tensor<double>({1, 1, 4, 4}, 0.0));
  auto ones = VarD::leaf(Tensor<double>({1, 1, 4, 4}, 1.0));
  const double want =
      cfg.alpha / 2 * (1.0 - cfg.c1 / (1.0 + cfg.c1)) + (1.0 - cfg.alpha) * 1.0;
  CHECK(want == doctest::Approx(0.57496).epsilon(1e-4));
  auto pe01 = loss::photometric_error(zeros, ones, cfg);
  for (long i = 0; i < pe01.size(); ++i)
    CHECK(pe01.value()[i] == doctest::Approx(want).epsilon(1e-12));

  // alpha = 0 reduces to a channel-averaged L1
  PhotometricConfig l1_cfg;
  l1_cfg.alpha = 0.0;
  auto a = random_tensor<double>({1, 3, 4, 4}, 407, 0.0, 1.0);
  auto b = random_tensor<double>({1, 3, 4, 4}, 408, 0.0, 1.0);
  auto pe = loss::photometric_error(VarD::leaf(a), VarD::leaf(b), l1_cfg);
  for (long y = 0; y < 4; ++y)
    for (long x = 0; x < 4; ++x) {
      double l1 = 0;
      for (long c = 0; c < 3; ++c) l1 += std::abs(a.at(0, c, y, x) - b.at(0, c, y, x));
      CHECK(pe.value().at(0, 0, y, x) == doctest::Approx(l1 / 3).epsilon(1e-12));
    }
}

TEST_CASE("min reprojection picks the per-pixel minimum over valid coverage") {
  auto target = random_tensor<double>({1, 3, 4, 4}, 409, 0.0, 1.0);
  auto far = random_tensor<double>({1, 3, 4, 4}, 410, 0.0, 1.0);

  // an exact reconstruction drives the loss to zero even next to a bad one
  Tensor<uint8_t> all({1, 1, 4, 4}, uint8_t(1));
  std::vector<loss::Reconstruction<double>> recons{{VarD::leaf(target), all},
                                                   {VarD::leaf(far), all}};
  CHECK(std::abs(loss::min_reprojection_loss(VarD::leaf(target), recons).item()) < 1e-12);

  // random masks against a literal re-computation
  auto r1 = random_tensor<double>({1, 3, 4, 4}, 411, 0.0, 1.0);
  auto r2 = random_tensor<double>({1, 3, 4, 4}, 412, 0.0, 1.0);
  pm::Rng rng(413);
  Tensor<uint8_t> m1({1, 1, 4, 4}), m2({1, 1, 4, 4});
  for (long i = 0; i < m1.size(); ++i) {
    m1[i] = rng.uniform() < 0.7 ? 1 : 0;
    m2[i] = rng.uniform() < 0.7 ? 1 : 0;
  }
  std::vector<loss::Reconstruction<double>> masked{{VarD::leaf(r1), m1}, {VarD::leaf(r2), m2}};
  auto got = loss::min_reprojection_loss(VarD::leaf(target), masked);

  auto pe1 = loss::photometric_error(VarD::leaf(target), VarD::leaf(r1));
  auto pe2 = loss::photometric_error(VarD::leaf(target), VarD::leaf(r2));
  double sum = 0;
  long covered = 0;
  for (long i = 0; i < pe1.size(); ++i)
    if (m1[i] || m2[i]) {
      sum += std::min(pe1.value()[i], pe2.value()[i]);
      ++covered;
    }
  CHECK(got.item() == doctest::Approx(sum / covered).epsilon(1e-10));

  // the min never exceeds either single-reconstruction loss
  std::vector<loss::Reconstruction<double>> only1{{VarD::leaf(r1), all}};
  std::vector<loss::Reconstruction<double>> only2{{VarD::leaf(r2), all}};
  std::vector<loss::Reconstruction<double>> both{{VarD::leaf(r1), all}, {VarD::leaf(r2), all}};
  auto lb = loss::min_reprojection_loss(VarD::leaf(target), both).item();
  CHECK(lb <= loss::min_reprojection_loss(VarD::leaf(target), only1).item() + 1e-12);
  CHECK(lb <= loss::min_reprojection_loss(VarD::leaf(target), only2).item() + 1e-12);
}

TEST_CASE("self distillation compares inverse depths") {
  auto hard = VarD::leaf(Tensor<double>({1, 1, 2, 2}, 1.0), true);
  auto easy = VarD::leaf(Tensor<double>({1, 1, 2, 2}, 2.0));
  // (1/1 - 1/2)^2 = 0.25 at every pixel
  auto l = loss::self_distillation_loss(hard, easy);
  CHECK(l.item() == doctest::Approx(0.25).epsilon(1e-12));

  l.backward();
  CHECK(hard.has_grad());
  CHECK_FALSE(easy.has_grad());

  auto same = VarD::leaf(Tensor<double>({1, 1, 2, 2}, 3.0));
  CHECK(std::abs(loss::self_distillation_loss(VarD::leaf(Tensor<double>({1, 1, 2, 2}, 3.0)), same)
                     .item()) < 1e-12);

  // the easy branch must arrive detached
  auto live_easy = VarD::leaf(Tensor<double>({1, 1, 2, 2}, 2.0), true);
  CHECK_THROWS_AS(loss::self_distillation_loss(hard, live_easy), std::invalid_argument);
  auto bad = VarD::leaf(Tensor<double>({1, 1, 2, 2}, 0.0));
  CHECK_THROWS_AS(loss::self_distillation_loss(hard, bad), std::invalid_argument);
}

TEST_CASE("smoothness loss identities") {
  auto flat = VarD::leaf(Tensor<double>({1, 1, 6, 8}, 0.4));
  auto img = VarD::leaf(random_tensor<double>({1, 3, 6, 8}, 414, 0.0, 1.0));
  CHECK(std::abs(loss::smoothness_loss(flat, img).item()) < 1e-12);

  // mean normalisation makes the loss invariant to rescaling the disparity
  auto d = random_tensor<double>({1, 1, 6, 8}, 415, 0.2, 1.0);
  auto d4 = d;
  for (long i = 0; i < d4.size(); ++i) d4[i] *= 4.0;
  auto l1 = loss::smoothness_loss(VarD::leaf(d), img).item();
  auto l4 = loss::smoothness_loss(VarD::leaf(d4), img).item();
  CHECK(l1 == doctest::Approx(l4).epsilon(1e-12));

  // horizontal ramp over a constant image: |dx d*| = slope / mean everywhere
  const long H = 6, W = 8;
  Tensor<double> ramp({1, 1, H, W});
  for (long y = 0; y < H; ++y)
    for (long x = 0; x < W; ++x) ramp.at(0, 0, y, x) = 1.0 + 0.1 * x;
  auto grey = VarD::leaf(Tensor<double>({1, 3, H, W}, 0.5));
  const double mean_d = 1.0 + 0.1 * (W - 1) / 2.0;
  CHECK(loss::smoothness_loss(VarD::leaf(ramp), grey).item() ==
        doctest::Approx(0.1 / mean_d).epsilon(1e-9));

  // a strong image edge suppresses the disparity gradient penalty
  Tensor<double> edge_img({1, 3, H, W}, 0.0);
  for (long c = 0; c < 3; ++c)
    for (long y = 0; y < H; ++y)
      for (long x = W / 2; x < W; ++x) edge_img.at(0, c, y, x) = 1.0;
  Tensor<double> step({1, 1, H, W}, 1.0);
  for (long y = 0; y < H; ++y)
    for (long x = W / 2; x < W; ++x) step.at(0, 0, y, x) = 2.0;
  auto with_edge = loss::smoothness_loss(VarD::leaf(step), VarD::leaf(edge_img)).item();
  auto without = loss::smoothness_loss(VarD::leaf(step), grey).item();
  CHECK(with_edge < without);

  CHECK_THROWS_AS(loss::smoothness_loss(VarD::leaf(Tensor<double>({1, 1, 4, 4}, 0.0)), img),
                  std::invalid_argument);
}

TEST_CASE("total loss averages weighted per-scale terms") {
  LossWeights w;
  auto scalar = [](double v) { return VarD::leaf(Tensor<double>({1}, v)); };
  std::vector<loss::ScaleLosses<double>> one{{scalar(0.3), scalar(0.02), scalar(5.0)}};
  CHECK(loss::total_loss(one, w).item() ==
        doctest::Approx(1.0 * 0.3 + 4.0 * 0.02 + 0.001 * 5.0).epsilon(1e-12));

  std::vector<loss::ScaleLosses<double>> four;
  double want = 0;
  for (int s = 0; s < 4; ++s) {
    const double p = 0.1 * (s + 1), sd = 0.01 * s, sm = 0.2 + 0.05 * s;
    four.push_back({scalar(p), scalar(sd), scalar(sm)});
    want += 1.0 * p + 4.0 * sd + 0.001 * sm;
  }
  want /= 4;
  CHECK(loss::total_loss(four, w).item() == doctest::Approx(want).epsilon(1e-12));

  LossWeights custom{0.5, 2.0, 0.1};
  CHECK(loss::total_loss(one, custom).item() ==
        doctest::Approx(0.5 * 0.3 + 2.0 * 0.02 + 0.1 * 5.0).epsilon(1e-12));
}

TEST_CASE("loss gradients match finite differences") {
  auto a = VarD::leaf(random_tensor<double>({1, 2, 5, 5}, 416, 0.1, 0.9), true);
  auto b = VarD::leaf(random_tensor<double>({1, 2, 5, 5}, 417, 0.1, 0.9), true);

  SUBCASE("ssim") {
    auto f = [&] { return ad::mean_all(loss::ssim(a, b)); };
    CHECK(fd_max_rel_err(f, {a, b}, 1e-5) < 1e-4);
  }
  SUBCASE("photometric") {
    auto f = [&] { return ad::mean_all(loss::photometric_error(a, b)); };
    CHECK(fd_max_rel_err(f, {a, b}, 1e-5) < 1e-4);
  }
  SUBCASE("min reprojection") {
    auto r2 = VarD::leaf(random_tensor<double>({1, 2, 5, 5}, 418, 0.1, 0.9), true);
    pm::Rng rng(419);
    Tensor<uint8_t> m1({1, 1, 5, 5}), m2({1, 1, 5, 5});
    for (long i = 0; i < m1.size(); ++i) {
      m1[i] = rng.uniform() < 0.8 ? 1 : 0;
      m2[i] = rng.uniform() < 0.8 ? 1 : 0;
    }
    auto f = [&] {
      std::vector<loss::Reconstruction<double>> recons{{b, m1}, {r2, m2}};
      return loss::min_reprojection_loss(a, recons);
    };
    CHECK(fd_max_rel_err(f, {a, b, r2}, 1e-5) < 1e-4);
  }
  SUBCASE("self distillation") {
    auto hard = VarD::leaf(random_tensor<double>({1, 1, 4, 4}, 420, 0.5, 3.0), true);
    auto easy = VarD::leaf(random_tensor<double>({1, 1, 4, 4}, 421, 0.5, 3.0));
    auto f = [&] { return loss::self_distillation_loss(hard, easy); };
    CHECK(fd_max_rel_err(f, {hard}, 1e-5) < 1e-4);
  }
  SUBCASE("smoothness") {
    auto disp = VarD::leaf(random_tensor<double>({1, 1, 5, 5}, 422, 0.2, 1.0), true);
    auto img = VarD::leaf(random_tensor<double>({1, 3, 5, 5}, 423, 0.0, 1.0), true);
    auto f = [&] { return loss::smoothness_loss(disp, img); };
    CHECK(fd_max_rel_err(f, {disp, img}, 1e-5) < 1e-4);
  }
}
