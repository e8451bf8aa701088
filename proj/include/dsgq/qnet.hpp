#pragma once

#include <optional>
#include <span>
#include <vector>

#include "dsgq/net.hpp"
#include "dsgq/quant.hpp"

namespace dsgq {

/// A network plus one quantizer per weight tensor and one per activation
/// site. Activation sites are the inputs of dense/conv layers (the tensor
/// each such layer consumes, i.e. post-activation). BN stays in floating
/// point and biases are not quantized.
struct QuantizedNetwork {
  Network base;
  int w_bits = 8;
  int a_bits = 8;
  std::vector<std::optional<quant::QuantParams>> weight_qparams;  // per layer
  std::vector<std::optional<quant::QuantParams>> act_qparams;     // per layer

  QuantHooks hooks() const { return {weight_qparams, act_qparams}; }

  /// Every weighted layer carries both quantizers and nothing else does.
  void validate() const;
};

/// Layer indices that own a weight tensor (and hence an activation site).
std::vector<std::size_t> quant_sites(const Network& net);

/// Min-max quantizer of every weight tensor.
std::vector<std::optional<quant::QuantParams>> weight_qparams_minmax(
    const Network& net, int bits);

/// Activation quantizers from full-precision eval forwards over `batches`.
std::vector<std::optional<quant::QuantParams>> calibrate_activations(
    const Network& net, std::span<const Tensor> batches, int bits,
    const quant::CalibrationOptions& options);

/// Weight min-max plus activation calibration; parameters are copied, never
/// modified.
QuantizedNetwork quantize_network(const Network& net, std::span<const Tensor> batches,
                                  int w_bits, int a_bits,
                                  const quant::CalibrationOptions& options);

ForwardResult quantized_forward(const QuantizedNetwork& q, const Tensor& batch,
                                Mode mode = Mode::Eval);

/// Top-1 accuracy of the quantized net (eval mode), evaluated in chunks.
double quantized_accuracy(const QuantizedNetwork& q, const Tensor& x,
                          std::span<const int> labels);

/// Top-1 accuracy of a full-precision network in eval mode.
double network_accuracy(const Network& net, const Tensor& x,
                        std::span<const int> labels);

}  // namespace dsgq
