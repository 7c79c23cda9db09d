#pragma once

#include <string>
#include <utility>
#include <vector>

#include "tamba/model.hpp"

namespace tamba {

// Trajectory metrics evaluate the refined locations. When a set holds more
// modes than K, the top K by mixing weight are selected first (descending,
// ties to the lower index); asking for more modes than exist is an error.

// Min over selected modes of the mean per-step L2 distance, in meters.
double min_ade(const PredictionSet& ps, const Tensor& gt, int K);
// As min_ade restricted to the final step.
double min_fde(const PredictionSet& ps, const Tensor& gt, int K);
// minFDE + (1 - pi_hat)^2 where pi_hat is the mixing weight of the mode
// achieving the min final error.
double b_min_fde(const PredictionSet& ps, const Tensor& gt, int K);
// Fraction of targets whose best final-step error among the selected modes
// exceeds 2 meters, strictly.
double miss_rate(const std::vector<PredictionSet>& preds,
                 const std::vector<Tensor>& gts, int K);

// Total trainable element count, in millions.
double count_params(const ParamStore& store);

// Shape of one scenario for the analytic cost model.
struct SizeSpec {
  int n_agents = 2;   // dynamic agents entering the temporal stack
  int n_scene = 3;    // pooled map polylines
  int pts = 4;        // points per polyline
  int n_ped = 0;      // pedestrians feeding the traffic stream
  int n_light = 0;    // traffic lights feeding the traffic stream
  int L = 20;         // observed steps
  int t_prime = 30;   // decoded steps
};

// Forward cost of one prediction at the shared conventions, mirroring the
// instrumented operations exactly: embedding, the three encoder stacks and
// their cross-attentions, memory fusion, recursive decoding, scoring, and
// refinement.
FlopCount pipeline_flops(const ModelConfig& cfg, const SizeSpec& size);
double estimate_flops(const ModelConfig& cfg, const SizeSpec& size);  // GigaOps

struct KMetrics {
  double min_ade = 0, min_fde = 0, b_min_fde = 0, miss_rate = 0;
};

struct MetricReport {
  std::vector<std::pair<int, KMetrics>> per_k;  // e.g. K=6 then K=1
  double params_m = 0;
  double flops_g = 0;
  int n_targets = 0;
};

// Batch means of the per-target metrics at each requested K.
MetricReport compute_metrics(const std::vector<PredictionSet>& preds,
                             const std::vector<Tensor>& gts,
                             const std::vector<int>& ks);

// {"K6":{"minADE":..,"minFDE":..,"b_minFDE":..,"MR":..},"K1":{...},
//  "params_M":..,"flops_G":..,"n_targets":..}
std::string metric_report_json(const MetricReport& r);

}  // namespace tamba
