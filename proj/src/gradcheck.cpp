#include "pm/gradcheck.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>

#include "pm/core/ops.hpp"
#include "pm/core/rng.hpp"
#include "pm/gcpa.hpp"
#include "pm/geometry.hpp"
#include "pm/losses.hpp"
#include "pm/networks.hpp"

namespace pm {

namespace {

using ad::VarD;

// Fourth-order central stencil; the denominator floor keeps coordinates with
// mathematically zero gradients from dividing by noise.
double fd_worst(const std::function<VarD()>& loss, std::vector<VarD> params, double h = 1e-5) {
  for (auto& p : params) p.zero_grad();
  loss().backward();
  std::vector<Tensor<double>> grads;
  for (auto& p : params) {
    grads.push_back(p.has_grad() ? p.grad() : Tensor<double>::zeros(p.shape()));
    p.zero_grad();
  }
  double worst = 0;
  for (size_t k = 0; k < params.size(); ++k) {
    double* v = params[k].value().data();
    for (long i = 0; i < params[k].size(); ++i) {
      const double save = v[i];
      const double at[4] = {save + h, save - h, save + 2 * h, save - 2 * h};
      double f[4];
      for (int s = 0; s < 4; ++s) {
        v[i] = at[s];
        f[s] = loss().item();
      }
      v[i] = save;
      const double fd = (-f[2] + 8 * f[0] - 8 * f[1] + f[3]) / (12 * h);
      const double denom = std::max(std::abs(grads[k][i]) + std::abs(fd), 1e-5);
      worst = std::max(worst, std::abs(grads[k][i] - fd) / denom);
    }
  }
  return worst;
}

Tensor<double> uniform(const Shape& shape, uint64_t seed, double lo, double hi) {
  return Rng(seed).uniform_tensor<double>(shape, lo, hi);
}

// grid coordinates at least a quarter pixel away from the bilinear lattice,
// so differencing never crosses a kink
Tensor<double> safe_grid(long b, long hg, long wg, long src_h, long src_w, uint64_t seed) {
  Rng rng(seed);
  Tensor<double> g({b, 2, hg, wg});
  const long n = hg * wg;
  for (long bi = 0; bi < b; ++bi)
    for (long i = 0; i < n; ++i) {
      g.data()[bi * 2 * n + i] =
          double(rng.integer(0, src_w - 2)) + 0.25 + 0.5 * rng.uniform(0.0, 1.0);
      g.data()[(bi * 2 + 1) * n + i] =
          double(rng.integer(0, src_h - 2)) + 0.25 + 0.5 * rng.uniform(0.0, 1.0);
    }
  return g;
}

CameraIntrinsics small_K(long w, long h) {
  return CameraIntrinsics{0.9 * double(w), 0.9 * double(w), (w - 1) / 2.0, (h - 1) / 2.0, w, h};
}

struct GcpaRig {
  long B = 2, C = 4, Np = 2, H = 4, W = 4;
  AttentionConfig cfg{2, true, 2.0};
  ParamSet<double> ps;
  Gcpa<double> mod;
  VarD feat, bank;

  explicit GcpaRig(uint64_t seed)
      : mod(C, Np, cfg, ps, "g.", seed),
        feat(VarD::leaf(uniform({B, C, H, W}, seed + 1, -1.0, 1.0), true)),
        bank(VarD::leaf(uniform({C, Np, H, W}, seed + 2, -0.5, 0.5), true)) {}

  VarD prompts() const { return ad::repeat_leading(bank, B); }

  std::vector<VarD> pick(const std::function<bool(const std::string&)>& want) {
    std::vector<VarD> out{feat, bank};
    for (auto& [name, v] : ps.items())
      if (want(name)) out.push_back(v);
    return out;
  }
};

}  // namespace

std::vector<GradCheckResult> run_gradient_suite(uint64_t seed, double tolerance) {
  std::vector<GradCheckResult> results;
  auto record = [&](const char* op, const std::function<VarD()>& loss, std::vector<VarD> params) {
    GradCheckResult r;
    r.op = op;
    r.tolerance = tolerance;
    auto t0 = std::chrono::steady_clock::now();
    r.max_rel_err = fd_worst(loss, std::move(params));
    r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    r.passed = r.max_rel_err < tolerance;
    results.push_back(r);
  };

  {
    auto src = VarD::leaf(uniform({1, 2, 6, 7}, seed + 10, 0.0, 1.0), true);
    auto grid = VarD::leaf(safe_grid(1, 4, 5, 6, 7, seed + 11), true);
    record(
        "bilinear_sample",
        [&] { return ad::mean_all(ad::square(ad::bilinear_sample(src, grid))); }, {src, grid});
  }
  {
    auto K = small_K(8, 8);
    auto src = VarD::leaf(uniform({1, 3, 8, 8}, seed + 20, 0.0, 1.0), true);
    auto depth = VarD::leaf(uniform({1, 1, 8, 8}, seed + 21, 2.9, 3.1), true);
    auto aa = VarD::leaf(Tensor<double>({1, 3}, {0.012, -0.008, 0.01}), true);
    auto tr = VarD::leaf(Tensor<double>({1, 3}, {0.03, -0.04, 0.9}), true);
    record(
        "synthesize_view",
        [&] { return ad::mean_all(ad::square(geo::synthesize_view(src, depth, aa, tr, K).image)); },
        {src, depth, aa, tr});
  }
  auto a = VarD::leaf(uniform({1, 2, 5, 5}, seed + 30, 0.1, 0.9), true);
  auto b = VarD::leaf(uniform({1, 2, 5, 5}, seed + 31, 0.1, 0.9), true);
  record(
      "ssim", [&] { return ad::mean_all(loss::ssim(a, b)); }, {a, b});
  record(
      "photometric_error", [&] { return ad::mean_all(loss::photometric_error(a, b)); }, {a, b});
  {
    auto disp = VarD::leaf(uniform({1, 1, 5, 5}, seed + 40, 0.2, 1.0), true);
    auto img = VarD::leaf(uniform({1, 3, 5, 5}, seed + 41, 0.0, 1.0), true);
    record(
        "smoothness_loss", [&] { return loss::smoothness_loss(disp, img); }, {disp, img});
  }
  {
    GcpaRig rig(seed + 50);
    record(
        "cgpb",
        [&] {
          auto out = rig.mod.cgpb(rig.prompts(), rig.feat);
          return ad::mean_all(ad::mul(out, ad::sin_v(out)));
        },
        rig.pick([](const std::string& n) { return n.find(".cgpb.") != std::string::npos; }));
  }
  {
    GcpaRig rig(seed + 60);
    record(
        "cross_prompting_attention",
        [&] {
          auto [q, k, v] = rig.mod.project_qkv(rig.feat, rig.prompts());
          auto out = rig.mod.cross_prompting_attention(q, k, v, rig.feat);
          return ad::mean_all(ad::mul(out, ad::sin_v(out)));
        },
        rig.pick([](const std::string& n) {
          return n.find(".cgpb.") == std::string::npos && n.find(".gdfn.") == std::string::npos;
        }));
  }
  {
    GcpaRig rig(seed + 70);
    record(
        "gdfn",
        [&] {
          auto out = rig.mod.gdfn(rig.feat);
          return ad::mean_all(ad::mul(out, ad::sin_v(out)));
        },
        rig.pick([](const std::string& n) { return n.find(".gdfn.") != std::string::npos; }));
  }
  {
    GcpaRig rig(seed + 80);
    record(
        "gcpa_forward",
        [&] {
          auto out = rig.mod.forward(rig.feat, rig.bank);
          return ad::mean_all(ad::mul(out, ad::sin_v(out)));
        },
        rig.pick([](const std::string&) { return true; }));
  }
  {
    NetworkConfig cfg;
    cfg.encoder.stage_widths = {2, 3, 4};
    cfg.scales = 2;
    cfg.num_prompts = 2;
    cfg.attention.heads = 2;
    DepthNetwork<double> net(cfg, 16, 16, seed + 90);
    auto img = VarD::leaf(uniform({1, 3, 16, 16}, seed + 91, 0.0, 1.0), true);
    std::vector<VarD> params{img};
    for (auto& [name, v] : net.params().items()) params.push_back(v);
    record(
        "full_decode",
        [&] {
          auto preds = net.forward(img);
          VarD total;
          for (auto& p : preds) {
            auto term = ad::mean_all(ad::mul(p, ad::sin_v(p)));
            total = total.defined() ? ad::add(total, term) : term;
          }
          return total;
        },
        std::move(params));
  }
  return results;
}

std::string gradient_suite_table(const std::vector<GradCheckResult>& results) {
  std::string out;
  char line[160];
  std::snprintf(line, sizeof(line), "%-26s %12s %10s %8s %6s\n", "op", "max_rel_err", "tolerance",
                "time_s", "status");
  out += line;
  for (const auto& r : results) {
    std::snprintf(line, sizeof(line), "%-26s %12.3e %10.1e %8.2f %6s\n", r.op.c_str(),
                  r.max_rel_err, r.tolerance, r.seconds, r.passed ? "PASS" : "FAIL");
    out += line;
  }
  return out;
}

}  // namespace pm
