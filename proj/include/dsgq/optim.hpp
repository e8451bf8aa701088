#pragma once

#include <span>
#include <vector>

#include "dsgq/tensor.hpp"

namespace dsgq {

struct OptimizerHyper {
  double lr = 1e-3;
  double beta1 = 0.9;  // Adam first moment; SGD momentum
  double beta2 = 0.999;
  double eps_opt = 1e-8;
  double weight_decay = 0.0;
};

enum class OptimizerKind { Sgd, Adam };

/// Per-tensor optimizer state.
struct OptimizerState {
  std::vector<double> m;  // Adam first moment / SGD velocity
  std::vector<double> v;  // Adam second moment
  long step = 0;
};

/// Plain SGD with heavy-ball momentum (beta1) and L2 weight decay.
void sgd_step(std::span<double> param, std::span<const double> grad,
              OptimizerState& state, const OptimizerHyper& hyper);

/// Bias-corrected Adam with L2 weight decay folded into the gradient.
void adam_step(std::span<double> param, std::span<const double> grad,
               OptimizerState& state, const OptimizerHyper& hyper);

/// Holds state for a fixed list of parameter tensors.
class Optimizer {
 public:
  Optimizer(OptimizerKind kind, OptimizerHyper hyper)
      : kind_(kind), hyper_(hyper) {}

  static Optimizer sgd(double lr, double momentum = 0.9,
                       double weight_decay = 1e-4) {
    OptimizerHyper h;
    h.lr = lr;
    h.beta1 = momentum;
    h.weight_decay = weight_decay;
    return Optimizer(OptimizerKind::Sgd, h);
  }
  static Optimizer adam(double lr, double beta1 = 0.9, double beta2 = 0.999) {
    OptimizerHyper h;
    h.lr = lr;
    h.beta1 = beta1;
    h.beta2 = beta2;
    return Optimizer(OptimizerKind::Adam, h);
  }

  /// params[i] is updated with grads[i]. The list must keep the same shapes
  /// across calls.
  void step(std::span<Tensor* const> params, std::span<const Tensor* const> grads);

  OptimizerHyper& hyper() { return hyper_; }
  const OptimizerHyper& hyper() const { return hyper_; }

 private:
  OptimizerKind kind_;
  OptimizerHyper hyper_;
  std::vector<OptimizerState> states_;
};

}  // namespace dsgq
