#include "dsgq/optim.hpp"

#include <cmath>

namespace dsgq {

namespace {

void check(std::span<double> param, std::span<const double> grad,
           OptimizerState& state) {
  if (param.size() != grad.size())
    throw Error("optimizer: parameter and gradient sizes differ");
  for (double g : grad)
    if (!std::isfinite(g)) throw Error("optimizer: non-finite gradient");
  if (state.m.empty()) {
    state.m.assign(param.size(), 0.0);
    state.v.assign(param.size(), 0.0);
  }
  if (state.m.size() != param.size())
    throw Error("optimizer: state size does not match parameter");
}

}  // namespace

void sgd_step(std::span<double> param, std::span<const double> grad,
              OptimizerState& state, const OptimizerHyper& hyper) {
  check(param, grad, state);
  ++state.step;
  for (std::size_t i = 0; i < param.size(); ++i) {
    const double g = grad[i] + hyper.weight_decay * param[i];
    state.m[i] = hyper.beta1 * state.m[i] + g;
    param[i] -= hyper.lr * state.m[i];
  }
}

void adam_step(std::span<double> param, std::span<const double> grad,
               OptimizerState& state, const OptimizerHyper& hyper) {
  check(param, grad, state);
  ++state.step;
  const double c1 = 1.0 - std::pow(hyper.beta1, double(state.step));
  const double c2 = 1.0 - std::pow(hyper.beta2, double(state.step));
  for (std::size_t i = 0; i < param.size(); ++i) {
    const double g = grad[i] + hyper.weight_decay * param[i];
    state.m[i] = hyper.beta1 * state.m[i] + (1.0 - hyper.beta1) * g;
    state.v[i] = hyper.beta2 * state.v[i] + (1.0 - hyper.beta2) * g * g;
    const double mhat = state.m[i] / c1;
    const double vhat = state.v[i] / c2;
    param[i] -= hyper.lr * mhat / (std::sqrt(vhat) + hyper.eps_opt);
  }
}

void Optimizer::step(std::span<Tensor* const> params,
                     std::span<const Tensor* const> grads) {
  if (params.size() != grads.size())
    throw Error("optimizer: parameter and gradient lists differ in length");
  if (states_.empty()) states_.resize(params.size());
  if (states_.size() != params.size())
    throw Error("optimizer: parameter list changed between steps");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i]->shape() != grads[i]->shape())
      throw Error("optimizer: gradient shape mismatch");
    if (kind_ == OptimizerKind::Adam)
      adam_step(params[i]->span(), grads[i]->span(), states_[i], hyper_);
    else
      sgd_step(params[i]->span(), grads[i]->span(), states_[i], hyper_);
  }
}

}  // namespace dsgq
