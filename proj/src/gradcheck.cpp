#include "dsgq/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace dsgq {

double relative_error(double analytic, double numeric) {
  const double denom =
      std::max({std::abs(analytic), std::abs(numeric), 1e-12});
  return std::abs(analytic - numeric) / denom;
}

namespace {

double entry_error(double analytic, double numeric, double abs_tol) {
  if (std::abs(analytic) < abs_tol && std::abs(numeric) < abs_tol) return 0.0;
  return relative_error(analytic, numeric);
}

}  // namespace

double grad_check(const Network& net, const Tensor& batch, const NetLossFn& loss,
                  const GradCheckOptions& options) {
  const LossEval base = loss(net, batch);
  double worst = 0.0;
  if (options.params) {
    Network probe = net;
    auto params = probe.parameters();
    auto analytic = base.grads.parameters();
    if (params.size() != analytic.size())
      throw Error("grad_check: gradient list does not match parameters");
    for (std::size_t t = 0; t < params.size(); ++t) {
      for (std::size_t i = 0; i < params[t]->size(); ++i) {
        const double saved = (*params[t])[i];
        (*params[t])[i] = saved + options.h;
        const double up = loss(probe, batch).value;
        (*params[t])[i] = saved - options.h;
        const double down = loss(probe, batch).value;
        (*params[t])[i] = saved;
        const double numeric = (up - down) / (2.0 * options.h);
        worst = std::max(worst, entry_error((*analytic[t])[i], numeric, options.abs_tol));
      }
    }
  }
  if (options.input) {
    Tensor x = batch;
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double saved = x[i];
      x[i] = saved + options.h;
      const double up = loss(net, x).value;
      x[i] = saved - options.h;
      const double down = loss(net, x).value;
      x[i] = saved;
      const double numeric = (up - down) / (2.0 * options.h);
      worst = std::max(worst, entry_error(base.grads.input[i], numeric, options.abs_tol));
    }
  }
  return worst;
}

double grad_check(const Tensor& x, const TensorLossFn& loss, double h,
                  double abs_tol) {
  const auto [value, analytic] = loss(x);
  if (analytic.shape() != x.shape())
    throw Error("grad_check: gradient shape does not match input");
  Tensor probe = x;
  double worst = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double saved = probe[i];
    probe[i] = saved + h;
    const double up = loss(probe).first;
    probe[i] = saved - h;
    const double down = loss(probe).first;
    probe[i] = saved;
    worst = std::max(worst, entry_error(analytic[i], (up - down) / (2.0 * h), abs_tol));
  }
  return worst;
}

}  // namespace dsgq
