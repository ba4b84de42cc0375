#pragma once

#include <functional>
#include <string>
#include <vector>

#include "scenedec/tensor.hpp"

namespace scenedec::ad {

struct AdamState {
  std::vector<double> m, v;
  long t = 0;
};

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// One bias-corrected Adam update, consuming param's accumulated gradient.
// The gradient buffer is left untouched (callers zero it between steps).
void adam_step(Tensor& param, AdamState& state, double lr, const std::string& name,
               const AdamConfig& cfg = {});

struct GradCheckReport {
  double max_rel_err = 0.0;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
};

// Central finite differences against reverse-mode gradients of a scalar
// function. f must rebuild its graph on every call and be deterministic.
// Relative error per coordinate: |analytic - cd| / max(1e-8, |cd|).
GradCheckReport grad_check(const std::function<Tensor(const Tensor&)>& f,
                           const Tensor& x0, double eps = 1e-3);

}  // namespace scenedec::ad
