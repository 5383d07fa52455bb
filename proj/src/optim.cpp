#include "mtnet/optim.hpp"

#include <cmath>

#include "mtnet/errors.hpp"

namespace mtnet::train {

OptimizerState OptimizerState::for_params(const ad::ParamStore& params) {
  OptimizerState s;
  for (ad::ParamId i = 0; i < params.size(); ++i) {
    s.m.emplace_back(params[i].size(), Real{0});
    s.v.emplace_back(params[i].size(), Real{0});
  }
  return s;
}

void adam_step(ad::ParamStore& params, const ad::GradBuffers& grads, OptimizerState& state,
               double lr, const AdamOptions& o) {
  if (grads.size() != params.size() || state.m.size() != params.size())
    throw ShapeError("adam_step: gradient or state count differs from the parameter count");
  for (ad::ParamId i = 0; i < params.size(); ++i)
    for (Real g : grads[i])
      if (!std::isfinite(g))
        throw NumericError("non-finite gradient in parameter '" + params.name(i) + "'");

  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(o.beta1, t);
  const double c2 = 1.0 - std::pow(o.beta2, t);
  for (ad::ParamId i = 0; i < params.size(); ++i) {
    auto theta = params[i].data();
    const auto g = grads[i];
    auto& m = state.m[i];
    auto& v = state.v[i];
    for (std::size_t k = 0; k < theta.size(); ++k) {
      const double gk = static_cast<double>(g[k]) + o.weight_decay * static_cast<double>(theta[k]);
      m[k] = static_cast<Real>(o.beta1 * m[k] + (1.0 - o.beta1) * gk);
      v[k] = static_cast<Real>(o.beta2 * v[k] + (1.0 - o.beta2) * gk * gk);
      const double mhat = m[k] / c1;
      const double vhat = v[k] / c2;
      theta[k] = static_cast<Real>(theta[k] - lr * mhat / (std::sqrt(vhat) + o.eps));
    }
  }
}

double lr_at(std::size_t epoch, double lr0, std::size_t step, double gamma) {
  if (step == 0) return lr0;
  return lr0 * std::pow(gamma, static_cast<double>(epoch / step));
}

double global_norm(const ad::GradBuffers& grads) {
  double s = 0;
  for (std::size_t i = 0; i < grads.size(); ++i)
    for (Real g : grads[static_cast<ad::ParamId>(i)]) s += static_cast<double>(g) * g;
  return std::sqrt(s);
}

double clip_global_norm(ad::GradBuffers& grads, double max_norm) {
  const double n = global_norm(grads);
  if (n > max_norm && n > 0) {
    const auto f = static_cast<Real>(max_norm / n);
    for (std::size_t i = 0; i < grads.size(); ++i)
      for (Real& g : grads[static_cast<ad::ParamId>(i)]) g *= f;
  }
  return n;
}

}  // namespace mtnet::train
