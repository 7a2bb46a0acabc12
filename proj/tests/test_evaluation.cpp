#include <algorithm>
#include <cmath>
#include <filesystem>
#include <vector>

#include "doctest.h"
#include "pm/evaluation.hpp"
#include "testutil.hpp"

using namespace pm;

namespace {

// independent scalar recomputation, sort-based median
struct OracleResult {
  double abs_rel, sq_rel, rmse, rmse_log, d1, d2, d3;
  long n;
};

double sort_median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const size_t n = v.size();
  if (n % 2 == 1) return v[n / 2];
  return 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

OracleResult oracle(const Tensor<float>& pred, const Tensor<float>& gt, double min_d, double max_d,
                    bool scale_by_median) {
  std::vector<double> pv, gv;
  for (long i = 0; i < gt.size(); ++i)
    if (gt[i] > 0 && double(gt[i]) <= max_d) {
      pv.push_back(pred[i]);
      gv.push_back(gt[i]);
    }
  double s = scale_by_median ? sort_median(gv) / sort_median(pv) : 1.0;
  OracleResult r{0, 0, 0, 0, 0, 0, 0, long(pv.size())};
  for (size_t i = 0; i < pv.size(); ++i) {
    double d = std::min(std::max(pv[i] * s, min_d), max_d);
    double t = gv[i];
    r.abs_rel += std::abs(d - t) / t;
    r.sq_rel += (d - t) * (d - t) / t;
    r.rmse += (d - t) * (d - t);
    r.rmse_log += std::pow(std::log(d) - std::log(t), 2);
    double q = std::max(d / t, t / d);
    if (q < 1.25) r.d1 += 1;
    if (q < 1.25 * 1.25) r.d2 += 1;
    if (q < 1.25 * 1.25 * 1.25) r.d3 += 1;
  }
  double n = double(pv.size());
  r.abs_rel /= n;
  r.sq_rel /= n;
  r.rmse = std::sqrt(r.rmse / n);
  r.rmse_log = std::sqrt(r.rmse_log / n);
  r.d1 /= n;
  r.d2 /= n;
  r.d3 /= n;
  return r;
}

std::string fresh_dir(const char* name) {
  auto dir = std::filesystem::temp_directory_path() / name;
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir.string();
}

}  // namespace

TEST_CASE("perfect prediction scores zero error and full accuracy") {
  Tensor<float> gt = pmtest::random_tensor<float>({1, 8, 8}, 31, 0.5f, 50.0f);
  MetricRecord r = compute_metrics(gt, gt, {0.1, 80.0, false});
  CHECK(r.abs_rel == 0.0);
  CHECK(r.sq_rel == 0.0);
  CHECK(r.rmse == 0.0);
  CHECK(r.rmse_log == 0.0);
  CHECK(r.delta1 == 1.0);
  CHECK(r.delta2 == 1.0);
  CHECK(r.delta3 == 1.0);
  CHECK(r.n_pixels == 64);
}

TEST_CASE("uniform over-prediction lands at the closed-form ratios") {
  Tensor<float> gt = pmtest::random_tensor<float>({6, 7}, 32, 2.0f, 20.0f);
  Tensor<float> pred(gt.shape());
  for (long i = 0; i < gt.size(); ++i) pred.data()[i] = 1.2f * gt[i];
  MetricRecord r = compute_metrics(pred, gt, {0.1, 80.0, false});
  CHECK(r.abs_rel == doctest::Approx(0.2).epsilon(1e-6));
  CHECK(r.delta1 == 1.0);  // 1.2 < 1.25

  for (long i = 0; i < gt.size(); ++i) pred.data()[i] = 1.3f * gt[i];
  r = compute_metrics(pred, gt, {0.1, 80.0, false});
  CHECK(r.delta1 == 0.0);
  CHECK(r.delta2 == 1.0);  // 1.3 < 1.5625
  CHECK(r.delta3 == 1.0);
}

TEST_CASE("matches an independent scalar recomputation on random inputs") {
  for (int trial = 0; trial < 1000; ++trial) {
    Rng rng(900 + trial);
    long h = rng.integer(2, 6), w = rng.integer(2, 8);
    Tensor<float> gt({1, h, w}), pred({1, h, w});
    for (long i = 0; i < gt.size(); ++i) {
      double roll = rng.uniform(0.0, 1.0);
      if (roll < 0.15)
        gt.data()[i] = 0.0f;  // missing ground truth
      else if (roll < 0.3)
        gt.data()[i] = float(rng.uniform(61.0, 120.0));  // beyond the cap
      else
        gt.data()[i] = float(rng.uniform(0.5, 59.0));
      pred.data()[i] = float(rng.uniform(0.02, 90.0));  // exercises both clamps
    }
    bool any_valid = false;
    for (long i = 0; i < gt.size(); ++i)
      if (gt[i] > 0 && gt[i] <= 60.0f) any_valid = true;
    if (!any_valid) gt.data()[0] = 10.0f;
    bool med = trial % 2 == 0;

    MetricRecord r = compute_metrics(pred, gt, {0.1, 60.0, med});
    OracleResult o = oracle(pred, gt, 0.1, 60.0, med);
    CHECK(r.n_pixels == o.n);
    CHECK(std::abs(r.abs_rel - o.abs_rel) < 1e-9);
    CHECK(std::abs(r.sq_rel - o.sq_rel) < 1e-9);
    CHECK(std::abs(r.rmse - o.rmse) < 1e-9);
    CHECK(std::abs(r.rmse_log - o.rmse_log) < 1e-9);
    CHECK(std::abs(r.delta1 - o.d1) < 1e-9);
    CHECK(std::abs(r.delta2 - o.d2) < 1e-9);
    CHECK(std::abs(r.delta3 - o.d3) < 1e-9);
    CHECK(r.delta1 <= r.delta2);
    CHECK(r.delta2 <= r.delta3);
  }
}

TEST_CASE("median scaling cancels a global prediction rescale") {
  Tensor<float> gt = pmtest::random_tensor<float>({5, 9}, 41, 1.0f, 40.0f);
  Tensor<float> pred = pmtest::random_tensor<float>({5, 9}, 42, 1.0f, 40.0f);
  Tensor<float> pred4(pred.shape());
  for (long i = 0; i < pred.size(); ++i) pred4.data()[i] = 4.0f * pred[i];

  MetricRecord a = compute_metrics(pred, gt, {0.1, 80.0, true});
  MetricRecord b = compute_metrics(pred4, gt, {0.1, 80.0, true});
  CHECK(a.abs_rel == b.abs_rel);  // power-of-two rescale is exact
  CHECK(a.rmse == b.rmse);
  CHECK(a.rmse_log == b.rmse_log);
  CHECK(a.delta1 == b.delta1);

  MetricRecord c = compute_metrics(pred4, gt, {0.1, 80.0, false});
  CHECK(c.abs_rel != a.abs_rel);
}

TEST_CASE("swapping prediction and ground truth preserves the symmetric terms") {
  Tensor<float> a = pmtest::random_tensor<float>({4, 11}, 51, 1.0f, 30.0f);
  Tensor<float> b = pmtest::random_tensor<float>({4, 11}, 52, 1.0f, 30.0f);
  MetricRecord ab = compute_metrics(a, b, {0.1, 80.0, false});
  MetricRecord ba = compute_metrics(b, a, {0.1, 80.0, false});
  CHECK(ab.rmse == doctest::Approx(ba.rmse).epsilon(1e-12));
  CHECK(ab.rmse_log == doctest::Approx(ba.rmse_log).epsilon(1e-12));
  CHECK(ab.delta1 == ba.delta1);
  CHECK(ab.delta2 == ba.delta2);
  CHECK(ab.delta3 == ba.delta3);
}

TEST_CASE("out-of-range predictions are clamped into the depth interval") {
  Tensor<float> gt({2, 2}, {5.0f, 5.0f, 5.0f, 5.0f});
  Tensor<float> tiny({2, 2}, {0.001f, 0.001f, 0.001f, 0.001f});
  Tensor<float> floor_pred({2, 2}, {0.1f, 0.1f, 0.1f, 0.1f});
  MetricRecord a = compute_metrics(tiny, gt, {0.1, 80.0, false});
  MetricRecord b = compute_metrics(floor_pred, gt, {0.1, 80.0, false});
  // the clamp floor is the double 0.1, the reference tensor holds float 0.1f
  CHECK(a.abs_rel == doctest::Approx(b.abs_rel).epsilon(1e-7));
  CHECK(a.rmse_log == doctest::Approx(b.rmse_log).epsilon(1e-7));

  Tensor<float> huge({2, 2}, {500.0f, 500.0f, 500.0f, 500.0f});
  Tensor<float> cap_pred({2, 2}, {80.0f, 80.0f, 80.0f, 80.0f});
  MetricRecord c = compute_metrics(huge, gt, {0.1, 80.0, false});
  MetricRecord d = compute_metrics(cap_pred, gt, {0.1, 80.0, false});
  CHECK(c.abs_rel == d.abs_rel);
}

TEST_CASE("tighter depth caps keep strictly fewer pixels") {
  Rng rng(61);
  Tensor<float> gt({1, 10, 10});
  for (long i = 0; i < gt.size(); ++i) gt.data()[i] = float(rng.uniform(30.0, 70.0));
  Tensor<float> pred = gt;
  MetricRecord r40 = compute_metrics(pred, gt, {0.1, 40.0, false});
  MetricRecord r60 = compute_metrics(pred, gt, {0.1, 60.0, false});
  MetricRecord r80 = compute_metrics(pred, gt, {0.1, 80.0, false});
  CHECK(r40.n_pixels < r60.n_pixels);
  CHECK(r60.n_pixels < r80.n_pixels);
  CHECK(r80.n_pixels == 100);
}

TEST_CASE("invalid inputs are rejected") {
  Tensor<float> gt({2, 2}, 0.0f);
  Tensor<float> pred({2, 2}, 1.0f);
  CHECK_THROWS_WITH_AS(compute_metrics(pred, gt, {0.1, 80.0, false}),
                       doctest::Contains("no pixels"), std::runtime_error);
  Tensor<float> beyond({2, 2}, 90.0f);
  CHECK_THROWS(compute_metrics(pred, beyond, {0.1, 80.0, false}));
  CHECK_THROWS_AS(compute_metrics(pred, Tensor<float>({3, 2}, 1.0f), {}), std::invalid_argument);
  Tensor<float> ok({2, 2}, 5.0f);
  CHECK_THROWS_AS(compute_metrics(ok, ok, {0.0, 80.0, false}), std::invalid_argument);
  CHECK_THROWS_AS(compute_metrics(ok, ok, {5.0, 2.0, false}), std::invalid_argument);
}

namespace {

NetworkConfig tiny_net_config() {
  NetworkConfig cfg;
  cfg.encoder.stage_widths = {4, 6, 8};
  cfg.scales = 2;
  cfg.num_prompts = 2;
  cfg.attention.heads = 2;
  return cfg;
}

}  // namespace

TEST_CASE("dataset evaluation groups per domain and stays reproducible") {
  SyntheticCorpus corpus(512, 2, 6, 24, 32);
  DepthNetwork<float> net(tiny_net_config(), 24, 32, 99);
  EvalConfig cfg;
  cfg.caps = {60.0};
  cfg.seed = 7;

  auto rows = evaluate_dataset(net, corpus, cfg);
  REQUIRE(rows.size() == 4);  // day, night, rain, all
  CHECK(rows[0].domain == "day");
  CHECK(rows[1].domain == "night");
  CHECK(rows[2].domain == "rain");
  CHECK(rows[3].domain == "all");
  CHECK(rows[3].n_images == corpus.size());
  long grouped = 0;
  for (int i = 0; i < 3; ++i) grouped += rows[i].n_images;
  CHECK(grouped == corpus.size());
  for (const auto& r : rows) {
    CHECK(r.delta1 <= r.delta2);
    CHECK(r.delta2 <= r.delta3);
    CHECK(std::isfinite(r.abs_rel));
    CHECK(r.max_depth == 60.0);
    CHECK(r.n_pixels > 0);
  }

  auto again = evaluate_dataset(net, corpus, cfg);
  for (size_t i = 0; i < rows.size(); ++i) {
    CHECK(rows[i].abs_rel == again[i].abs_rel);
    CHECK(rows[i].rmse == again[i].rmse);
  }

  auto js = metrics_to_json(rows);
  REQUIRE(js.is_array());
  CHECK(js.size() == 4);
  CHECK(js[1]["domain"] == "night");
  CHECK(js[1]["abs_rel"].get<double>() == rows[1].abs_rel);

  std::string table = metrics_to_text(rows);
  CHECK(table.find("night") != std::string::npos);
  CHECK(table.find("absRel") != std::string::npos);
  CHECK(table.find("median-scaled") != std::string::npos);
}

TEST_CASE("multiple caps emit one block per cap") {
  SyntheticCorpus corpus(513, 1, 5, 24, 32);
  DepthNetwork<float> net(tiny_net_config(), 24, 32, 100);
  EvalConfig cfg;
  cfg.caps = {40.0, 60.0, 80.0};
  auto rows = evaluate_dataset(net, corpus, cfg);
  CHECK(rows.size() == 12);
  CHECK(rows[3].max_depth == 40.0);
  CHECK(rows[7].max_depth == 60.0);
  CHECK(rows[11].max_depth == 80.0);
  CHECK(rows[3].domain == "all");

  EvalConfig empty = cfg;
  empty.caps.clear();
  CHECK_THROWS_AS(evaluate_dataset(net, corpus, empty), std::invalid_argument);
}

TEST_CASE("evaluation refuses datasets without ground-truth depth") {
  std::string root = fresh_dir("pm_eval_nogt");
  SyntheticCorpus corpus(514, 1, 4, 24, 32);
  write_dataset(root, corpus, false);
  auto src = load_disk_dataset(root);
  DepthNetwork<float> net(tiny_net_config(), 24, 32, 101);
  EvalConfig cfg;
  CHECK_THROWS_WITH_AS(evaluate_dataset(net, *src, cfg), doctest::Contains("ground-truth"),
                       std::runtime_error);
  std::filesystem::remove_all(root);
}
