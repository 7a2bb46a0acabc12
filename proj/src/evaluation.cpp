#include "pm/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <stdexcept>
#include <vector>

#include "pm/core/rng.hpp"

namespace pm {

namespace {

double median(std::vector<double> v) {
  const size_t n = v.size();
  auto mid = v.begin() + static_cast<long>(n / 2);
  std::nth_element(v.begin(), mid, v.end());
  if (n % 2 == 1) return *mid;
  const double hi = *mid;
  const double lo = *std::max_element(v.begin(), mid);
  return 0.5 * (lo + hi);
}

}  // namespace

MetricRecord compute_metrics(const Tensor<float>& pred, const Tensor<float>& gt,
                             const MetricOptions& opt) {
  if (pred.shape() != gt.shape())
    throw std::invalid_argument("compute_metrics: pred " + shape_str(pred.shape()) + " vs gt " +
                                shape_str(gt.shape()));
  if (!(opt.min_depth > 0) || !(opt.max_depth > opt.min_depth))
    throw std::invalid_argument("compute_metrics: need 0 < min_depth < max_depth");

  const float* p = pred.data();
  const float* g = gt.data();
  std::vector<double> pv, gv;
  pv.reserve(static_cast<size_t>(pred.size()));
  gv.reserve(static_cast<size_t>(pred.size()));
  for (long i = 0; i < pred.size(); ++i) {
    const double d = g[i];
    if (d > 0 && d <= opt.max_depth) {
      pv.push_back(p[i]);
      gv.push_back(d);
    }
  }
  if (pv.empty()) throw std::runtime_error("compute_metrics: no pixels with valid ground truth");

  double scale = 1.0;
  if (opt.median_scale) scale = median(gv) / median(pv);

  MetricRecord r;
  r.n_pixels = static_cast<long>(pv.size());
  r.n_images = 1;
  r.max_depth = opt.max_depth;
  r.median_scaled = opt.median_scale;
  const double thr1 = 1.25, thr2 = 1.25 * 1.25, thr3 = 1.25 * 1.25 * 1.25;
  for (size_t i = 0; i < pv.size(); ++i) {
    const double d = std::clamp(pv[i] * scale, opt.min_depth, opt.max_depth);
    const double t = gv[i];
    const double diff = d - t;
    r.abs_rel += std::abs(diff) / t;
    r.sq_rel += diff * diff / t;
    r.rmse += diff * diff;
    const double dl = std::log(d) - std::log(t);
    r.rmse_log += dl * dl;
    const double ratio = std::max(d / t, t / d);
    r.delta1 += ratio < thr1 ? 1.0 : 0.0;
    r.delta2 += ratio < thr2 ? 1.0 : 0.0;
    r.delta3 += ratio < thr3 ? 1.0 : 0.0;
  }
  const double n = static_cast<double>(pv.size());
  r.abs_rel /= n;
  r.sq_rel /= n;
  r.rmse = std::sqrt(r.rmse / n);
  r.rmse_log = std::sqrt(r.rmse_log / n);
  r.delta1 /= n;
  r.delta2 /= n;
  r.delta3 /= n;
  return r;
}

namespace {

struct Accumulator {
  MetricRecord sum;
  void add(const MetricRecord& r) {
    sum.abs_rel += r.abs_rel;
    sum.sq_rel += r.sq_rel;
    sum.rmse += r.rmse;
    sum.rmse_log += r.rmse_log;
    sum.delta1 += r.delta1;
    sum.delta2 += r.delta2;
    sum.delta3 += r.delta3;
    sum.n_pixels += r.n_pixels;
    sum.n_images += 1;
  }
  MetricRecord mean(const std::string& domain, double cap, bool scaled) const {
    MetricRecord r = sum;
    const double n = static_cast<double>(sum.n_images);
    r.abs_rel /= n;
    r.sq_rel /= n;
    r.rmse /= n;
    r.rmse_log /= n;
    r.delta1 /= n;
    r.delta2 /= n;
    r.delta3 /= n;
    r.domain = domain;
    r.max_depth = cap;
    r.median_scaled = scaled;
    return r;
  }
};

}  // namespace

std::vector<MetricRecord> evaluate_dataset(DepthNetwork<float>& net, const TripletSource& src,
                                           const EvalConfig& cfg,
                                           const CorruptionParams& corruption) {
  if (src.size() <= 0) throw std::invalid_argument("evaluate_dataset: empty dataset");
  if (cfg.caps.empty()) throw std::invalid_argument("evaluate_dataset: no depth caps");

  std::vector<Tensor<float>> depths, gts;
  std::vector<DomainTag> tags;
  depths.reserve(static_cast<size_t>(src.size()));
  {
    ad::NoGradGuard guard;
    for (long i = 0; i < src.size(); ++i) {
      SampleTriplet t = src.triplet(i);
      if (t.gt_depth.size() == 0)
        throw std::runtime_error("evaluate_dataset: sample " + std::to_string(i) +
                                 " has no ground-truth depth");
      Tensor<float> input = t.tag == DomainTag::day
                                ? t.easy_target
                                : corrupt(t.easy_target, t.tag,
                                          derive_seed(cfg.seed, "eval." + std::to_string(i)),
                                          corruption);
      const Shape& s = input.shape();
      auto image = ad::Var<float>::leaf(input.reshaped({1, s[0], s[1], s[2]}));
      auto sig = net.forward(image)[0];
      auto depth = disparity_to_depth(sig, net.config().range);
      depths.push_back(depth.value().reshaped(t.gt_depth.shape()));
      gts.push_back(std::move(t.gt_depth));
      tags.push_back(t.tag);
    }
  }

  std::vector<MetricRecord> rows;
  for (double cap : cfg.caps) {
    MetricOptions opt{cfg.min_depth, cap, cfg.median_scale};
    std::map<std::string, Accumulator> groups;
    Accumulator all;
    for (size_t i = 0; i < depths.size(); ++i) {
      MetricRecord r = compute_metrics(depths[i], gts[i], opt);
      groups[to_string(tags[i])].add(r);
      all.add(r);
    }
    for (DomainTag tag : {DomainTag::day, DomainTag::night, DomainTag::rain}) {
      auto it = groups.find(to_string(tag));
      if (it != groups.end())
        rows.push_back(it->second.mean(to_string(tag), cap, cfg.median_scale));
    }
    rows.push_back(all.mean("all", cap, cfg.median_scale));
  }
  return rows;
}

nlohmann::json metrics_to_json(const std::vector<MetricRecord>& rows) {
  nlohmann::json out = nlohmann::json::array();
  for (const MetricRecord& r : rows) {
    out.push_back({{"domain", r.domain},
                   {"max_depth", r.max_depth},
                   {"median_scaled", r.median_scaled},
                   {"abs_rel", r.abs_rel},
                   {"sq_rel", r.sq_rel},
                   {"rmse", r.rmse},
                   {"rmse_log", r.rmse_log},
                   {"delta1", r.delta1},
                   {"delta2", r.delta2},
                   {"delta3", r.delta3},
                   {"n_pixels", r.n_pixels},
                   {"n_images", r.n_images}});
  }
  return out;
}

std::string metrics_to_text(const std::vector<MetricRecord>& rows) {
  std::string out;
  char line[256];
  bool scaled = !rows.empty() && rows.front().median_scaled;
  std::snprintf(line, sizeof(line), "%-6s %6s %8s %8s %8s %8s %8s %8s %8s %8s\n", "domain", "cap",
                "absRel", "sqRel", "RMSE", "RMSElog", "d<1.25", "d<1.25^2", "d<1.25^3", "images");
  out += line;
  for (const MetricRecord& r : rows) {
    std::snprintf(line, sizeof(line), "%-6s %6.1f %8.4f %8.4f %8.4f %8.4f %8.4f %8.4f %8.4f %8ld\n",
                  r.domain.c_str(), r.max_depth, r.abs_rel, r.sq_rel, r.rmse, r.rmse_log, r.delta1,
                  r.delta2, r.delta3, r.n_images);
    out += line;
  }
  out += scaled ? "predictions median-scaled to ground truth per image\n"
                : "raw predictions, no median scaling\n";
  return out;
}

}  // namespace pm
