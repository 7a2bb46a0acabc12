#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "pm/data.hpp"
#include "pm/networks.hpp"

namespace pm {

struct MetricRecord {
  double abs_rel = 0, sq_rel = 0, rmse = 0, rmse_log = 0;
  double delta1 = 0, delta2 = 0, delta3 = 0;
  long n_pixels = 0;
  long n_images = 0;
  std::string domain;  // day / night / rain / all
  double max_depth = 0;
  bool median_scaled = false;
};

struct MetricOptions {
  double min_depth = 0.1;   // prediction clamp floor
  double max_depth = 80.0;  // ground-truth validity cap and clamp ceiling
  bool median_scale = true;
};

// Errors and threshold accuracies over pixels with gt in (0, max_depth].
MetricRecord compute_metrics(const Tensor<float>& pred, const Tensor<float>& gt,
                             const MetricOptions& opt = {});

struct EvalConfig {
  std::vector<double> caps{40, 60, 80};
  double min_depth = 0.1;
  bool median_scale = true;
  uint64_t seed = 0;  // corruption stream for challenging-domain inputs
};

// Predicts depth from each sample's hard target and aggregates per domain
// (uniform average over images) plus an "all" row, one block per cap.
std::vector<MetricRecord> evaluate_dataset(DepthNetwork<float>& net, const TripletSource& src,
                                           const EvalConfig& cfg,
                                           const CorruptionParams& corruption = {});

nlohmann::json metrics_to_json(const std::vector<MetricRecord>& rows);
std::string metrics_to_text(const std::vector<MetricRecord>& rows);

}  // namespace pm
