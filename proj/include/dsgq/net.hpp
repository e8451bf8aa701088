#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dsgq/quant.hpp"
#include "dsgq/tensor.hpp"

namespace dsgq {

enum class LayerKind { Dense, Conv2d, BatchNorm, Relu, GlobalAvgPool };

const char* to_string(LayerKind kind);
LayerKind layer_kind_from_string(const std::string& s);

/// One layer of a feed-forward stack. Fields unused by a kind stay empty.
///
///  dense      weight [out, in], bias [out]; input [B, in]
///  conv2d     weight [out, in, k, k], bias [out]; 3x3-style odd k, stride 1,
///             same padding; input [B, in, H, W]
///  batchnorm  gamma, beta, running_mean, running_var [C]; input [B, C] or
///             [B, C, H, W]
///  relu, globalavgpool  no parameters
struct Layer {
  LayerKind kind = LayerKind::Relu;
  Tensor weight, bias;
  Tensor gamma, beta, running_mean, running_var;
  double eps = 1e-5;
  double momentum = 0.1;

  static Layer dense(std::size_t in, std::size_t out);
  static Layer conv2d(std::size_t in, std::size_t out, std::size_t kernel = 3);
  static Layer batchnorm(std::size_t channels, double eps = 1e-5,
                         double momentum = 0.1);
  static Layer relu() { return Layer{}; }
  static Layer global_avg_pool() {
    Layer l;
    l.kind = LayerKind::GlobalAvgPool;
    return l;
  }

  bool has_weights() const {
    return kind == LayerKind::Dense || kind == LayerKind::Conv2d;
  }
  bool trainable() const { return has_weights() || kind == LayerKind::BatchNorm; }

  /// Trainable tensors in canonical order (weight, bias) or (gamma, beta).
  std::vector<Tensor*> parameters();
  std::vector<const Tensor*> parameters() const;

  /// Throws Error when kind-specific invariants fail.
  void validate() const;
};

struct Network {
  Shape input_shape;  // per sample, without the batch dimension
  std::vector<Layer> layers;

  std::vector<std::size_t> bn_indices() const;
  std::size_t bn_count() const { return bn_indices().size(); }

  /// Validates every layer and the shape chain; returns the per-sample
  /// output shape.
  Shape validate() const;

  std::vector<Tensor*> parameters();
  std::vector<const Tensor*> parameters() const;
  std::size_t parameter_count() const;
};

/// Checksum over all parameters and BN running statistics.
std::uint64_t checksum(const Network& net);

/// He-style initialization for weights, zero bias, identity BN.
void initialize(Network& net, Rng& rng);

/// Builds dense(in->h0)+BN+ReLU+...+dense(h_last->classes), initialized.
Network make_mlp(std::size_t in, const std::vector<std::size_t>& hidden,
                 std::size_t classes, Rng& rng);

enum class Mode {
  Train,    // BN normalizes with batch statistics
  Eval,     // BN normalizes with running statistics
  Collect,  // as Train; forward_collect also folds stats into running stats
};

/// Per-channel statistics of one BN layer's input.
struct ChannelStats {
  Tensor mean;  // [C]
  Tensor std;   // [C], population (uncorrected) standard deviation
};

/// Per-channel mean and population std over all rows (and spatial positions)
/// of `input` ([B, C] or [B, C, H, W]). `rows` restricts to a subset.
ChannelStats channel_stats(const Tensor& input,
                           std::span<const std::size_t> rows = {});

/// Gradient w.r.t. `input` of a scalar whose gradients w.r.t. the channel
/// statistics are (dmean, dstd). Rows outside `rows` get zero.
Tensor channel_stats_backward(const Tensor& input, const ChannelStats& stats,
                              const Tensor& dmean, const Tensor& dstd,
                              std::span<const std::size_t> rows = {});

struct ActivationTrace {
  std::vector<ChannelStats> bn;  // one entry per BN layer, network order
  Tensor logits;
};

/// Optional fake quantization inside the forward pass. Both vectors are
/// indexed by layer; `act[k]` quantizes the input of layer k.
struct QuantHooks {
  std::vector<std::optional<quant::QuantParams>> weight;
  std::vector<std::optional<quant::QuantParams>> act;
};

struct ForwardCache {
  Mode mode = Mode::Eval;
  std::vector<Tensor> raw_inputs;  // input of layer k before act quant
  std::vector<Tensor> inputs;      // input of layer k as consumed
  std::vector<Tensor> act_masks;   // STE masks for quantized inputs
  std::vector<Tensor> weights;     // weights as used (fake-quantized or not)
  std::vector<Tensor> weight_masks;
  std::vector<Tensor> xhat;     // BN normalized input
  std::vector<Tensor> inv_std;  // BN per-channel 1/sqrt(var + eps)
  std::vector<ChannelStats> batch_stats;  // BN per-channel batch stats
};

struct ForwardResult {
  Tensor logits;
  ActivationTrace trace;
  ForwardCache cache;

  /// Input tensor of the i-th BN layer (pre-normalization activations).
  const Tensor& bn_input(const Network& net, std::size_t i) const;
};

ForwardResult forward(const Network& net, const Tensor& batch, Mode mode,
                      const QuantHooks* hooks = nullptr);

/// Collect-mode forward that folds the batch statistics into each BN layer:
/// running <- (1 - momentum) * running + momentum * batch.
ForwardResult forward_collect(Network& net, const Tensor& batch);

struct LayerGrads {
  std::vector<Tensor> params;  // aligned with Layer::parameters()
};

struct Gradients {
  Tensor input;
  std::vector<LayerGrads> layers;

  /// Flattened in Network::parameters() order.
  std::vector<const Tensor*> parameters() const;
};

/// Reverse-mode pass for a cached forward. `input_grads[k]`, when non-empty,
/// is an extra gradient w.r.t. the (pre-quantization) input of layer k, e.g.
/// from a loss on BN input statistics or on intermediate features. Its size
/// is either 0 or net.layers.size().
Gradients backward(const Network& net, const ForwardResult& fwd,
                   const Tensor& grad_logits,
                   std::span<const Tensor> input_grads = {});

}  // namespace dsgq
