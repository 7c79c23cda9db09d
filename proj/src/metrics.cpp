#include "tamba/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "json.hpp"

namespace tamba {

namespace {

std::vector<int64_t> top_k_by_weight(const PredictionSet& ps, int K) {
  const int64_t have = static_cast<int64_t>(ps.mu.size());
  if (K < 1 || K > have)
    throw ConfigError("metric asks for top " + std::to_string(K) + " of " +
                      std::to_string(have) + " modes");
  std::vector<int64_t> idx(static_cast<size_t>(have));
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](int64_t a, int64_t b) {
    return ps.pi.data()[a] > ps.pi.data()[b];
  });
  idx.resize(static_cast<size_t>(K));
  return idx;
}

void check_gt(const PredictionSet& ps, const Tensor& gt) {
  if (gt.ndim() != 2 || gt.dim(1) != 2 || gt.rows() != ps.mu[0].rows())
    throw DimensionError("ground truth shape " + shape_str(gt.shape()) +
                         " does not match predictions over " +
                         std::to_string(ps.mu[0].rows()) + " steps");
}

double ade_of(const Tensor& mode, const Tensor& gt) {
  double acc = 0.0;
  for (int64_t t = 0; t < gt.rows(); ++t) {
    double dx = mode.at({t, 0}) - gt.at({t, 0});
    double dy = mode.at({t, 1}) - gt.at({t, 1});
    acc += std::hypot(dx, dy);
  }
  return acc / static_cast<double>(gt.rows());
}

double fde_of(const Tensor& mode, const Tensor& gt) {
  const int64_t t = gt.rows() - 1;
  double dx = mode.at({t, 0}) - gt.at({t, 0});
  double dy = mode.at({t, 1}) - gt.at({t, 1});
  return std::hypot(dx, dy);
}

int64_t argmin_fde(const PredictionSet& ps, const Tensor& gt,
                   const std::vector<int64_t>& selected) {
  int64_t best = selected[0];
  double best_v = fde_of(ps.mu[best], gt);
  for (size_t i = 1; i < selected.size(); ++i) {
    double v = fde_of(ps.mu[selected[i]], gt);
    if (v < best_v) {
      best_v = v;
      best = selected[i];
    }
  }
  return best;
}

// Cost of one explicit cross-attention: project queries and keys, score,
// project values, mix.
FlopCount cross_flops(uint64_t n_q, uint64_t n_k, uint64_t d) {
  FlopCount f;
  f.linear += flopmeter::matmul(n_q, d, d);
  f.linear += flopmeter::matmul(n_k, d, d);
  f.linear += flopmeter::matmul(n_q, d, n_k);
  f.linear += flopmeter::matmul(n_k, d, d);
  f.linear += flopmeter::matmul(n_q, n_k, d);
  return f;
}

}  // namespace

double min_ade(const PredictionSet& ps, const Tensor& gt, int K) {
  auto selected = top_k_by_weight(ps, K);
  check_gt(ps, gt);
  double best = ade_of(ps.mu[selected[0]], gt);
  for (size_t i = 1; i < selected.size(); ++i)
    best = std::min(best, ade_of(ps.mu[selected[i]], gt));
  return best;
}

double min_fde(const PredictionSet& ps, const Tensor& gt, int K) {
  auto selected = top_k_by_weight(ps, K);
  check_gt(ps, gt);
  return fde_of(ps.mu[argmin_fde(ps, gt, selected)], gt);
}

double b_min_fde(const PredictionSet& ps, const Tensor& gt, int K) {
  auto selected = top_k_by_weight(ps, K);
  check_gt(ps, gt);
  int64_t best = argmin_fde(ps, gt, selected);
  double pi_hat = ps.pi.data()[best];
  return fde_of(ps.mu[best], gt) + (1.0 - pi_hat) * (1.0 - pi_hat);
}

double miss_rate(const std::vector<PredictionSet>& preds,
                 const std::vector<Tensor>& gts, int K) {
  if (preds.empty() || preds.size() != gts.size())
    throw ConfigError("miss rate needs a non-empty batch of matched pairs");
  int64_t misses = 0;
  for (size_t i = 0; i < preds.size(); ++i)
    if (min_fde(preds[i], gts[i], K) > 2.0) ++misses;
  return static_cast<double>(misses) / static_cast<double>(preds.size());
}

double count_params(const ParamStore& store) {
  uint64_t n = 0;
  for (const auto& [name, t] : store.items()) n += static_cast<uint64_t>(t.size());
  return static_cast<double>(n) / 1e6;
}

FlopCount pipeline_flops(const ModelConfig& cfg, const SizeSpec& size) {
  if (size.n_agents < 1 || size.n_scene < 1 || size.pts < 1 || size.L < 1 ||
      size.t_prime < 1 || size.n_ped < 0 || size.n_light < 0)
    throw ConfigError("cost model needs at least one agent, one polyline, and "
                      "positive horizons");

  const BlockConfig block = model_block_config(cfg);
  const uint64_t d = static_cast<uint64_t>(cfg.d);
  const uint64_t L = static_cast<uint64_t>(size.L);
  const uint64_t Tp = static_cast<uint64_t>(size.t_prime);
  const uint64_t K = static_cast<uint64_t>(cfg.K);
  const uint64_t h = static_cast<uint64_t>(cfg.scorer_hidden);
  const uint64_t n_a = static_cast<uint64_t>(size.n_agents);
  const uint64_t n_s = static_cast<uint64_t>(size.n_scene);
  const uint64_t pts = static_cast<uint64_t>(size.pts);
  const uint64_t n_tc = static_cast<uint64_t>(size.n_ped + size.n_light);
  const uint64_t dyn_raw = static_cast<uint64_t>(raw_dim(Category::vehicle));
  const uint64_t map_raw = static_cast<uint64_t>(raw_dim(Category::lane));
  const uint64_t depth = static_cast<uint64_t>(cfg.depth);

  FlopCount f;

  // token embedding: two-layer projections per element, a pooling matmul per
  // polyline, and joint fusion per traffic element
  const uint64_t seq_elems = n_a + n_tc;
  f.linear += seq_elems * (flopmeter::affine(L, dyn_raw, d) + flopmeter::affine(L, d, d));
  f.linear += n_s * (flopmeter::affine(pts, map_raw, d) + flopmeter::affine(pts, d, d) +
                     flopmeter::matmul(1, pts, d));
  if (cfg.joint) f.linear += n_tc * flopmeter::affine(L, 2 * d, d);

  // encoder stacks
  f += n_a * (depth * block_flops(cfg.kind, block, static_cast<int64_t>(L)));
  f += n_s * (depth * block_flops(cfg.kind, block, 1));
  f += n_tc * (depth * block_flops(cfg.kind, block, static_cast<int64_t>(L)));

  // cross-attentions over summaries and memory fusion
  f += cross_flops(n_a, n_s, d);
  if (n_tc > 0) f += cross_flops(n_a, n_tc, d);
  f.linear += flopmeter::affine(n_a, 3 * d, d);

  // recursive decoding over the shared context
  const uint64_t ctx = n_a + n_a * L;
  for (uint64_t r = 0; r < Tp; ++r) {
    f += cross_flops(K, ctx + K, d);
    f += block_step_flops(BlockKind::tamba, block, static_cast<int64_t>(K));
    f.linear += flopmeter::affine(K, d, 2);
  }

  // scoring: waypoint embedding and cross per mode, gated recurrence per step
  f += K * (FlopCount{flopmeter::affine(Tp, 2, d), 0} + cross_flops(Tp, ctx, d));
  f.linear += Tp * (3 * flopmeter::affine(K, d, h) + 3 * flopmeter::matmul(K, h, h));
  f.linear += flopmeter::affine(K, h, 1);

  // refinement: embed, cross, full block, two-channel head per mode
  f += K * (FlopCount{flopmeter::affine(Tp, 2, d), 0} + cross_flops(Tp, ctx, d) +
            block_flops(BlockKind::tamba, block, static_cast<int64_t>(Tp)));
  f.linear += K * flopmeter::affine(Tp, d, 4);

  return f;
}

double estimate_flops(const ModelConfig& cfg, const SizeSpec& size) {
  return static_cast<double>(pipeline_flops(cfg, size).total()) / 1e9;
}

MetricReport compute_metrics(const std::vector<PredictionSet>& preds,
                             const std::vector<Tensor>& gts,
                             const std::vector<int>& ks) {
  if (preds.empty() || preds.size() != gts.size())
    throw ConfigError("metric evaluation needs a non-empty batch of matched pairs");
  MetricReport r;
  r.n_targets = static_cast<int>(preds.size());
  for (int K : ks) {
    KMetrics m;
    for (size_t i = 0; i < preds.size(); ++i) {
      m.min_ade += min_ade(preds[i], gts[i], K);
      m.min_fde += min_fde(preds[i], gts[i], K);
      m.b_min_fde += b_min_fde(preds[i], gts[i], K);
    }
    m.min_ade /= r.n_targets;
    m.min_fde /= r.n_targets;
    m.b_min_fde /= r.n_targets;
    m.miss_rate = miss_rate(preds, gts, K);
    r.per_k.emplace_back(K, m);
  }
  return r;
}

std::string metric_report_json(const MetricReport& r) {
  nlohmann::ordered_json j;
  for (const auto& [K, m] : r.per_k) {
    nlohmann::ordered_json e;
    e["minADE"] = m.min_ade;
    e["minFDE"] = m.min_fde;
    e["b_minFDE"] = m.b_min_fde;
    e["MR"] = m.miss_rate;
    j["K" + std::to_string(K)] = e;
  }
  j["params_M"] = r.params_m;
  j["flops_G"] = r.flops_g;
  j["n_targets"] = r.n_targets;
  return j.dump(1);
}

}  // namespace tamba
