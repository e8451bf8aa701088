#include "dsgq/qnet.hpp"

#include "dsgq/objectives.hpp"

namespace dsgq {

using quant::QuantParams;

void QuantizedNetwork::validate() const {
  base.validate();
  const std::size_t L = base.layers.size();
  if (weight_qparams.size() != L || act_qparams.size() != L)
    throw Error("quantized network: quantizer lists do not match layer count");
  for (std::size_t k = 0; k < L; ++k) {
    const bool weighted = base.layers[k].has_weights();
    if (weighted != weight_qparams[k].has_value() ||
        weighted != act_qparams[k].has_value())
      throw Error("quantized network: layer " + std::to_string(k) +
                  " has inconsistent quantizers");
    if (weighted) {
      quant::validate(*weight_qparams[k]);
      quant::validate(*act_qparams[k]);
      if (weight_qparams[k]->bits != w_bits || act_qparams[k]->bits != a_bits)
        throw Error("quantized network: bit-width mismatch at layer " +
                    std::to_string(k));
    }
  }
}

std::vector<std::size_t> quant_sites(const Network& net) {
  std::vector<std::size_t> out;
  for (std::size_t k = 0; k < net.layers.size(); ++k)
    if (net.layers[k].has_weights()) out.push_back(k);
  return out;
}

std::vector<std::optional<QuantParams>> weight_qparams_minmax(const Network& net,
                                                              int bits) {
  std::vector<std::optional<QuantParams>> out(net.layers.size());
  for (std::size_t k : quant_sites(net))
    out[k] = quant::calibrate_minmax(net.layers[k].weight, bits);
  return out;
}

std::vector<std::optional<QuantParams>> calibrate_activations(
    const Network& net, std::span<const Tensor> batches, int bits,
    const quant::CalibrationOptions& options) {
  if (batches.empty()) throw Error("calibrate_activations: no calibration batches");
  const auto sites = quant_sites(net);
  std::vector<std::vector<Tensor>> seen(net.layers.size());
  for (const Tensor& b : batches) {
    if (b.empty() || b.dim(0) == 0) throw Error("calibrate_activations: empty batch");
    ForwardResult f = forward(net, b, Mode::Eval);
    for (std::size_t k : sites) seen[k].push_back(std::move(f.cache.raw_inputs[k]));
  }
  std::vector<std::optional<QuantParams>> out(net.layers.size());
  for (std::size_t k : sites) out[k] = quant::calibrate(seen[k], bits, options);
  return out;
}

QuantizedNetwork quantize_network(const Network& net, std::span<const Tensor> batches,
                                  int w_bits, int a_bits,
                                  const quant::CalibrationOptions& options) {
  QuantizedNetwork q;
  q.base = net;
  q.w_bits = w_bits;
  q.a_bits = a_bits;
  q.weight_qparams = weight_qparams_minmax(net, w_bits);
  q.act_qparams = calibrate_activations(net, batches, a_bits, options);
  q.validate();
  return q;
}

ForwardResult quantized_forward(const QuantizedNetwork& q, const Tensor& batch,
                                Mode mode) {
  const QuantHooks h = q.hooks();
  return forward(q.base, batch, mode, &h);
}

namespace {

template <class Fn>
double chunked_accuracy(const Tensor& x, std::span<const int> labels, Fn logits_of) {
  if (x.dim(0) != labels.size()) throw Error("accuracy: label count mismatch");
  if (labels.empty()) throw Error("accuracy: empty dataset");
  constexpr std::size_t chunk = 256;
  std::size_t correct = 0;
  for (std::size_t b = 0; b < labels.size(); b += chunk) {
    const std::size_t e = std::min(labels.size(), b + chunk);
    const auto pred = argmax_rows(logits_of(x.slice_rows(b, e)));
    for (std::size_t i = b; i < e; ++i) correct += pred[i - b] == labels[i];
  }
  return double(correct) / double(labels.size());
}

}  // namespace

double quantized_accuracy(const QuantizedNetwork& q, const Tensor& x,
                          std::span<const int> labels) {
  const QuantHooks h = q.hooks();
  return chunked_accuracy(x, labels, [&](const Tensor& b) {
    return forward(q.base, b, Mode::Eval, &h).logits;
  });
}

double network_accuracy(const Network& net, const Tensor& x,
                        std::span<const int> labels) {
  return chunked_accuracy(x, labels, [&](const Tensor& b) {
    return forward(net, b, Mode::Eval).logits;
  });
}

}  // namespace dsgq
