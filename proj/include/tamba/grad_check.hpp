#pragma once

#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "tamba/tensor.hpp"

namespace tamba {

struct GradCheckOptions {
  double step = 1e-5;
  double tol = 1e-4;
  // 0 checks every element; otherwise a deterministic subsample per tensor.
  int64_t max_probes_per_input = 0;
  uint64_t probe_seed = 1234567;
};

struct GradCheckEntry {
  std::string name;
  double max_rel_err = 0.0;
  int64_t probed = 0;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> inputs;
  double worst = 0.0;
  bool pass = true;
};

// Central-difference check of reverse-mode gradients. `forward` must rebuild
// the computation from the current contents of the `wrt` tensors and return a
// scalar; it is evaluated twice up front and must reproduce the same bits,
// otherwise the oracle itself is broken and an OracleError is thrown.
// Relative error uses max(|analytic|, |numeric|, 1) as the denominator so the
// threshold acts as an absolute bound for tiny gradients.
GradCheckReport grad_check(const std::function<Tensor()>& forward,
                           const std::vector<std::pair<std::string, Tensor>>& wrt,
                           const GradCheckOptions& opts = {});

}  // namespace tamba
