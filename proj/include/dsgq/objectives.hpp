#pragma once

#include <span>
#include <vector>

#include "dsgq/tensor.hpp"

namespace dsgq {

struct LossValue {
  double value = 0.0;
  Tensor grad;  // d value / d logits
};

/// Row-wise softmax of a [B, C] tensor with temperature.
Tensor softmax(const Tensor& logits, double temperature = 1.0);

/// Mean softmax cross-entropy over the batch.
LossValue cross_entropy(const Tensor& logits, std::span<const int> labels);

/// Mean KL(softmax(teacher / tau) || softmax(student / tau)); gradient is
/// w.r.t. the student logits.
LossValue distillation_kl(const Tensor& teacher_logits,
                          const Tensor& student_logits, double temperature);

std::vector<int> argmax_rows(const Tensor& logits);
double accuracy(const Tensor& logits, std::span<const int> labels);

}  // namespace dsgq
