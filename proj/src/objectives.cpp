#include "dsgq/objectives.hpp"

#include <algorithm>
#include <cmath>

namespace dsgq {

Tensor softmax(const Tensor& logits, double temperature) {
  if (logits.rank() != 2) throw Error("softmax expects [B, C] logits");
  const std::size_t nb = logits.dim(0), nc = logits.dim(1);
  Tensor p(logits.shape());
  for (std::size_t n = 0; n < nb; ++n) {
    double mx = logits.at(n, 0) / temperature;
    for (std::size_t c = 1; c < nc; ++c) mx = std::max(mx, logits.at(n, c) / temperature);
    double z = 0.0;
    for (std::size_t c = 0; c < nc; ++c) {
      p.at(n, c) = std::exp(logits.at(n, c) / temperature - mx);
      z += p.at(n, c);
    }
    for (std::size_t c = 0; c < nc; ++c) p.at(n, c) /= z;
  }
  return p;
}

LossValue cross_entropy(const Tensor& logits, std::span<const int> labels) {
  if (logits.rank() != 2 || labels.size() != logits.dim(0))
    throw Error("cross_entropy: labels do not match logits");
  const std::size_t nb = logits.dim(0), nc = logits.dim(1);
  LossValue out{0.0, softmax(logits)};
  for (std::size_t n = 0; n < nb; ++n) {
    const int y = labels[n];
    if (y < 0 || std::size_t(y) >= nc) throw Error("cross_entropy: label out of range");
    out.value -= std::log(std::max(out.grad.at(n, y), 1e-300));
    out.grad.at(n, y) -= 1.0;
  }
  out.value /= double(nb);
  for (double& g : out.grad.data()) g /= double(nb);
  return out;
}

LossValue distillation_kl(const Tensor& teacher_logits,
                          const Tensor& student_logits, double temperature) {
  if (teacher_logits.shape() != student_logits.shape())
    throw Error("distillation_kl: logits shapes differ");
  const Tensor pt = softmax(teacher_logits, temperature);
  const Tensor ps = softmax(student_logits, temperature);
  const std::size_t nb = pt.dim(0);
  LossValue out{0.0, Tensor(pt.shape())};
  for (std::size_t i = 0; i < pt.size(); ++i) {
    if (pt[i] > 0.0)
      out.value += pt[i] * (std::log(pt[i]) - std::log(std::max(ps[i], 1e-300)));
    out.grad[i] = (ps[i] - pt[i]) / (temperature * double(nb));
  }
  out.value /= double(nb);
  return out;
}

std::vector<int> argmax_rows(const Tensor& logits) {
  std::vector<int> out(logits.dim(0));
  for (std::size_t n = 0; n < logits.dim(0); ++n) {
    const auto r = logits.row(n);
    out[n] = int(std::max_element(r.begin(), r.end()) - r.begin());
  }
  return out;
}

double accuracy(const Tensor& logits, std::span<const int> labels) {
  const auto pred = argmax_rows(logits);
  if (pred.size() != labels.size()) throw Error("accuracy: size mismatch");
  std::size_t hit = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) hit += pred[i] == labels[i];
  return double(hit) / double(pred.size());
}

}  // namespace dsgq
