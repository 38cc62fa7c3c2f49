#pragma once

#include <cstdint>
#include <string>

namespace ruleforge {

struct GradCheckReport {
  double max_rel_error = 0.0;
  double median_rel_error = 0.0;
  int checked = 0;
  bool operators_ok = false;

  bool pass(double max_tol = 1e-2, double median_tol = 1e-3) const {
    return operators_ok && checked > 0 && max_rel_error < max_tol &&
           median_rel_error < median_tol;
  }
};

// Central finite differences (eps = 1e-3) of the full training loss on a
// tiny model (N=6, M=16, T=4, d=32) in double precision, over `samples`
// randomly chosen parameter entries, plus a condensed per-operator check at
// rel-tol 1e-4. Parameter entries whose perturbation would cross a gate
// threshold are redrawn (the flip-set selection is a stop-gradient
// decision).
GradCheckReport run_gradient_checks(std::uint64_t seed, int samples = 100,
                                    std::string* log = nullptr);

}  // namespace ruleforge
