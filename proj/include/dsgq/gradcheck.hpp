#pragma once

#include <functional>

#include "dsgq/net.hpp"

namespace dsgq {

/// Value and analytic gradients of a scalar loss of (network, batch).
struct LossEval {
  double value = 0.0;
  Gradients grads;
};

using NetLossFn = std::function<LossEval(const Network&, const Tensor&)>;

struct GradCheckOptions {
  double h = 1e-5;
  bool params = true;
  bool input = false;
  // Entries where both |analytic| and |numeric| are below abs_tol count as
  // exact (gradients that vanish analytically, e.g. a bias feeding a
  // train-mode BN). 0 disables the skip.
  double abs_tol = 0.0;
};

/// |analytic - numeric| / max(|analytic|, |numeric|, 1e-12), maximized over
/// every parameter element (and input element when requested), with central
/// differences of step h.
double grad_check(const Network& net, const Tensor& batch, const NetLossFn& loss,
                  const GradCheckOptions& options = {});

/// Same check for a scalar function of one tensor.
using TensorLossFn = std::function<std::pair<double, Tensor>(const Tensor&)>;
double grad_check(const Tensor& x, const TensorLossFn& loss, double h = 1e-5,
                  double abs_tol = 0.0);

double relative_error(double analytic, double numeric);

}  // namespace dsgq
