#include "tamba/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

namespace tamba {

namespace {

struct StopFreezeGuard {
  ~StopFreezeGuard() { stop_freeze::clear(); }
};

}  // namespace

GradCheckReport grad_check(const std::function<Tensor()>& forward,
                           const std::vector<std::pair<std::string, Tensor>>& wrt,
                           const GradCheckOptions& opts) {
  // Determinism probe: the same inputs must produce the same bits, or finite
  // differences are meaningless.
  const double v1 = forward().item();
  const double v2 = forward().item();
  if (std::memcmp(&v1, &v2, sizeof(double)) != 0)
    throw OracleError("grad_check: forward() is not deterministic");

  for (const auto& [name, t] : wrt) {
    Tensor handle = t;  // shares the node
    handle.zero_grad();
  }
  // Values crossing stop_gradient are constants of the differentiated
  // function; capture them here and pin them during probe evaluations.
  StopFreezeGuard guard;
  stop_freeze::record();
  Tensor loss = forward();
  loss.backward();
  std::vector<std::vector<double>> analytic;
  analytic.reserve(wrt.size());
  for (const auto& [name, t] : wrt) analytic.push_back(t.grad_or_zeros());

  // Finite-difference evaluations run without graph recording.
  std::vector<bool> saved_rg;
  for (const auto& [name, t] : wrt) {
    Tensor handle = t;
    saved_rg.push_back(handle.requires_grad());
    handle.set_requires_grad(false);
  }

  GradCheckReport report;
  Rng probe_rng(opts.probe_seed);
  const double h = opts.step;
  for (size_t i = 0; i < wrt.size(); ++i) {
    Tensor t = wrt[i].second;
    GradCheckEntry entry;
    entry.name = wrt[i].first;
    const int64_t n = t.size();
    std::vector<int64_t> idx;
    if (opts.max_probes_per_input > 0 && n > opts.max_probes_per_input) {
      // deterministic distinct subsample
      std::vector<int64_t> all(static_cast<size_t>(n));
      for (int64_t k = 0; k < n; ++k) all[static_cast<size_t>(k)] = k;
      for (int64_t k = 0; k < opts.max_probes_per_input; ++k) {
        int64_t j = probe_rng.uniform_int(k, n - 1);
        std::swap(all[static_cast<size_t>(k)], all[static_cast<size_t>(j)]);
        idx.push_back(all[static_cast<size_t>(k)]);
      }
    } else {
      for (int64_t k = 0; k < n; ++k) idx.push_back(k);
    }
    auto raw = t.raw();
    for (int64_t k : idx) {
      const double saved = raw[static_cast<size_t>(k)];
      raw[static_cast<size_t>(k)] = saved + h;
      stop_freeze::replay();
      const double fp = forward().item();
      raw[static_cast<size_t>(k)] = saved - h;
      stop_freeze::replay();
      const double fm = forward().item();
      raw[static_cast<size_t>(k)] = saved;
      const double numeric = (fp - fm) / (2.0 * h);
      const double a = analytic[i][static_cast<size_t>(k)];
      const double rel =
          std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1.0});
      entry.max_rel_err = std::max(entry.max_rel_err, rel);
      ++entry.probed;
    }
    report.worst = std::max(report.worst, entry.max_rel_err);
    report.inputs.push_back(std::move(entry));
  }

  for (size_t i = 0; i < wrt.size(); ++i) {
    Tensor handle = wrt[i].second;
    handle.set_requires_grad(saved_rg[i]);
  }
  report.pass = report.worst < opts.tol;
  return report;
}

}  // namespace tamba
