#include "tamba/objective.hpp"

#include <algorithm>
#include <cmath>

namespace tamba {

const char* to_string(WinnerCriterion c) {
  switch (c) {
    case WinnerCriterion::min_ade: return "min_ade";
    case WinnerCriterion::min_fde: return "min_fde";
  }
  throw ConfigError("unknown winner criterion");
}

WinnerCriterion winner_criterion_from_string(const std::string& name) {
  if (name == "min_ade") return WinnerCriterion::min_ade;
  if (name == "min_fde") return WinnerCriterion::min_fde;
  throw ConfigError("unknown winner criterion '" + name +
                    "' (expected min_ade or min_fde)");
}

namespace {

void check_traj(const Tensor& t, const Tensor& gt, const char* what) {
  if (t.ndim() != 2 || t.dim(1) != 2)
    throw DimensionError(std::string(what) + " must be (T', 2), got " +
                         shape_str(t.shape()));
  if (t.shape() != gt.shape())
    throw DimensionError(std::string(what) + " shape " + shape_str(t.shape()) +
                         " does not match ground truth " + shape_str(gt.shape()));
}

double mode_criterion(const Tensor& mode, const Tensor& gt, WinnerCriterion crit) {
  const int64_t T = gt.rows();
  auto dist = [&](int64_t t) {
    double dx = mode.at({t, 0}) - gt.at({t, 0});
    double dy = mode.at({t, 1}) - gt.at({t, 1});
    return std::hypot(dx, dy);
  };
  if (crit == WinnerCriterion::min_fde) return dist(T - 1);
  double acc = 0.0;
  for (int64_t t = 0; t < T; ++t) acc += dist(t);
  return acc / static_cast<double>(T);
}

}  // namespace

int64_t winner_takes_all(const std::vector<Tensor>& modes, const Tensor& gt,
                         WinnerCriterion crit) {
  if (modes.empty()) throw DimensionError("winner selection over zero modes");
  if (gt.ndim() != 2 || gt.dim(1) != 2)
    throw DimensionError("ground truth must be (T', 2)");
  int64_t best = 0;
  double best_val = 0.0;
  for (size_t k = 0; k < modes.size(); ++k) {
    check_traj(modes[k], gt, "mode");
    double v = mode_criterion(modes[k], gt, crit);
    if (k == 0 || v < best_val) {
      best_val = v;
      best = static_cast<int64_t>(k);
    }
  }
  return best;
}

Tensor proposal_loss(const Tensor& proposal, const Tensor& gt) {
  check_traj(proposal, gt, "proposal");
  Tensor diff = sub(proposal, gt);
  return scale(sum(mul(diff, diff)), 1.0 / static_cast<double>(2 * gt.rows()));
}

Tensor laplace_nll(const Tensor& gt, const Tensor& mu, const Tensor& b) {
  check_traj(mu, gt, "location");
  check_traj(b, gt, "scale");
  for (double v : b.data())
    if (!(v > 0.0)) throw NumericError("Laplace scale must be strictly positive");
  Tensor term = add(log(scale(b, 2.0)), mul(abs(sub(gt, mu)), reciprocal(b)));
  return scale(sum(term), 1.0 / static_cast<double>(gt.rows()));
}

Tensor classification_loss(const Tensor& pi, const Tensor& gt,
                           const std::vector<Tensor>& mu,
                           const std::vector<Tensor>& b) {
  const int64_t K = static_cast<int64_t>(mu.size());
  if (K == 0 || b.size() != mu.size())
    throw DimensionError("mixture with inconsistent mode count");
  if (pi.size() != K)
    throw DimensionError("pi has " + std::to_string(pi.size()) + " entries for " +
                         std::to_string(K) + " modes");

  Tensor pi_col = reshape(pi, {K, 1});
  std::vector<Tensor> logits;
  logits.reserve(K);
  for (int64_t k = 0; k < K; ++k) {
    Tensor e_k = laplace_nll(gt, stop_gradient(mu[k]), stop_gradient(b[k]));
    Tensor log_pi = reshape(log(slice_rows(pi_col, k, 1)), {});
    logits.push_back(sub(log_pi, e_k));
  }

  double shift = logits[0].item();
  for (const Tensor& l : logits) shift = std::max(shift, l.item());
  Tensor acc = exp(add_const(logits[0], -shift));
  for (int64_t k = 1; k < K; ++k)
    acc = add(acc, exp(add_const(logits[k], -shift)));
  return neg(add_const(log(acc), shift));
}

LossReport target_loss(const PredictionSet& pred, const Tensor& gt,
                       const LossConfig& cfg) {
  if (cfg.lambda < 0.0) throw ConfigError("classification weight must be >= 0");
  LossReport r;
  r.winner = winner_takes_all(pred.mu, gt, cfg.winner);
  r.proposal = proposal_loss(pred.proposals[r.winner], gt);
  r.refine = laplace_nll(gt, pred.mu[r.winner], pred.b[r.winner]);
  r.cls = classification_loss(pred.pi, gt, pred.mu, pred.b);
  r.total = add(add(r.proposal, r.refine), scale(r.cls, cfg.lambda));
  return r;
}

BatchLoss batch_loss(const std::vector<LossReport>& reports, double lambda) {
  if (reports.empty()) throw ConfigError("loss over an empty batch");
  if (lambda < 0.0) throw ConfigError("classification weight must be >= 0");
  const double inv = 1.0 / static_cast<double>(reports.size());
  BatchLoss out;
  Tensor p = reports[0].proposal, r = reports[0].refine, c = reports[0].cls;
  out.winners.push_back(reports[0].winner);
  for (size_t i = 1; i < reports.size(); ++i) {
    p = add(p, reports[i].proposal);
    r = add(r, reports[i].refine);
    c = add(c, reports[i].cls);
    out.winners.push_back(reports[i].winner);
  }
  out.proposal = scale(p, inv);
  out.refine = scale(r, inv);
  out.cls = scale(c, inv);
  out.total = add(add(out.proposal, out.refine), scale(out.cls, lambda));
  return out;
}

}  // namespace tamba
