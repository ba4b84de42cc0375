#include "scenedec/optim.hpp"

#include <cmath>

namespace scenedec::ad {

void adam_step(Tensor& param, AdamState& state, double lr, const std::string& name,
               const AdamConfig& cfg) {
  check(param.has_grad(), "adam_step: parameter '" + name + "' has no gradient");
  const auto& g = param.grad();
  auto& p = param.mutable_values();
  if (state.m.empty()) {
    state.m.assign(p.size(), 0.0);
    state.v.assign(p.size(), 0.0);
  }
  check(state.m.size() == p.size(),
        "adam_step: state size mismatch for parameter '" + name + "'");
  for (std::size_t i = 0; i < g.size(); ++i)
    check(std::isfinite(g[i]),
          "adam_step: non-finite gradient in parameter '" + name + "' at index " +
              std::to_string(i));
  state.t += 1;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.t));
  for (std::size_t i = 0; i < p.size(); ++i) {
    state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g[i];
    state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
    const double mhat = state.m[i] / bc1;
    const double vhat = state.v[i] / bc2;
    p[i] -= lr * mhat / (std::sqrt(vhat) + cfg.eps);
  }
}

GradCheckReport grad_check(const std::function<Tensor(const Tensor&)>& f,
                           const Tensor& x0, double eps) {
  Tensor x = x0.detached_copy(true);
  Tensor y = f(x);
  check(y.size() == 1, "grad_check: f must return a scalar");
  backward(y);
  check(x.has_grad(), "grad_check: no gradient reached the input");
  const std::vector<double> analytic = x.grad();

  GradCheckReport rep;
  for (std::size_t i = 0; i < x0.size(); ++i) {
    Tensor xp = x0.detached_copy(false);
    Tensor xm = x0.detached_copy(false);
    xp.mutable_values()[i] += eps;
    xm.mutable_values()[i] -= eps;
    const double fp = f(xp).item();
    const double fm = f(xm).item();
    const double cd = (fp - fm) / (2.0 * eps);
    const double rel =
        std::abs(analytic[i] - cd) / std::max(1e-8, std::abs(cd));
    if (rel > rep.max_rel_err) {
      rep.max_rel_err = rel;
      rep.worst_index = i;
      rep.analytic = analytic[i];
      rep.numeric = cd;
    }
  }
  return rep;
}

}  // namespace scenedec::ad
