#pragma once

#include <string>
#include <vector>

#include "tamba/decoder.hpp"

namespace tamba {

enum class WinnerCriterion { min_ade, min_fde };

const char* to_string(WinnerCriterion c);
WinnerCriterion winner_criterion_from_string(const std::string& name);

struct LossConfig {
  double lambda = 1.0;  // classification weight
  WinnerCriterion winner = WinnerCriterion::min_ade;

  friend bool operator==(const LossConfig&, const LossConfig&) = default;
};

// Index of the best mode against ground truth; ties break to the lowest
// index. Selection reads values only, so no gradient flows through it.
int64_t winner_takes_all(const std::vector<Tensor>& modes, const Tensor& gt,
                         WinnerCriterion crit = WinnerCriterion::min_ade);

// Mean squared error over the winner trajectory, averaged over steps and
// coordinates: sum((p - gt)^2) / (2 T').
Tensor proposal_loss(const Tensor& proposal, const Tensor& gt);

// Independent per-coordinate Laplace negative log-likelihood,
// sum_t sum_c [log(2 b) + |gt - mu| / b], averaged over steps.
Tensor laplace_nll(const Tensor& gt, const Tensor& mu, const Tensor& b);

// Mixture NLL -log sum_k pi_k exp(-E_k) with location and scale stopped, so
// only the mixing path is trained. Evaluated in log-space.
Tensor classification_loss(const Tensor& pi, const Tensor& gt,
                           const std::vector<Tensor>& mu,
                           const std::vector<Tensor>& b);

struct LossReport {
  Tensor proposal, refine, cls, total;  // scalars, graph attached
  int64_t winner = 0;
};

// All loss terms for one target; predictions and gt share the target frame.
LossReport target_loss(const PredictionSet& pred, const Tensor& gt,
                       const LossConfig& cfg);

struct BatchLoss {
  Tensor proposal, refine, cls, total;  // means over targets
  std::vector<int64_t> winners;
};

BatchLoss batch_loss(const std::vector<LossReport>& reports, double lambda);

}  // namespace tamba
