#pragma once

#include <span>
#include <vector>

#include "dsgq/net.hpp"

namespace dsgq {

/// Conditional generator: concat(z, onehot(y)) -> [dense+BN+ReLU] x blocks
/// -> dense head -> bound * tanh. Always run with batch statistics.
struct GeneratorNet {
  Network body;
  std::size_t latent_dim = 0;
  std::size_t classes = 0;
  Shape output_shape;  // per sample
  double bound = 3.0;

  std::size_t block_count() const;
  /// Index of the layer consuming block b's ReLU output.
  std::size_t feature_layer(std::size_t block) const;
};

GeneratorNet make_generator(std::size_t latent_dim, std::size_t classes,
                            const std::vector<std::size_t>& hidden, Shape output_shape,
                            Rng& rng);

struct GeneratorPass {
  ForwardResult fwd;
  Tensor output;  // [B, output_shape...], within [-bound, bound]

  /// Block b's feature ([B, width]).
  const Tensor& feature(const GeneratorNet& g, std::size_t block) const;
};

/// z: [B, latent_dim]; labels in [0, classes).
GeneratorPass generator_forward(const GeneratorNet& g, const Tensor& z,
                                std::span<const int> labels);

/// Parameter gradients given d loss / d output and, optionally, one gradient
/// per block feature (empty entries are skipped).
Gradients generator_backward(const GeneratorNet& g, const GeneratorPass& pass,
                             const Tensor& grad_output,
                             std::span<const Tensor> feature_grads = {});

}  // namespace dsgq
