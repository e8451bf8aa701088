#include "dsgq/generator.hpp"

#include <cmath>

namespace dsgq {

std::size_t GeneratorNet::block_count() const { return body.bn_count(); }

std::size_t GeneratorNet::feature_layer(std::size_t block) const {
  // Blocks are dense, BN, ReLU triples; the next block (or head) starts at 3(b+1).
  if (block >= block_count()) throw Error("generator: block index out of range");
  return 3 * (block + 1);
}

GeneratorNet make_generator(std::size_t latent_dim, std::size_t classes,
                            const std::vector<std::size_t>& hidden, Shape output_shape,
                            Rng& rng) {
  if (hidden.empty()) throw Error("generator: need at least one block");
  if (latent_dim == 0 || classes < 2) throw Error("generator: bad latent/classes");
  GeneratorNet g;
  g.latent_dim = latent_dim;
  g.classes = classes;
  g.output_shape = std::move(output_shape);
  g.body.input_shape = {latent_dim + classes};
  std::size_t prev = latent_dim + classes;
  for (std::size_t h : hidden) {
    g.body.layers.push_back(Layer::dense(prev, h));
    g.body.layers.push_back(Layer::batchnorm(h));
    g.body.layers.push_back(Layer::relu());
    prev = h;
  }
  g.body.layers.push_back(Layer::dense(prev, shape_size(g.output_shape)));
  initialize(g.body, rng);
  g.body.validate();
  return g;
}

const Tensor& GeneratorPass::feature(const GeneratorNet& g, std::size_t block) const {
  return fwd.cache.raw_inputs.at(g.feature_layer(block));
}

GeneratorPass generator_forward(const GeneratorNet& g, const Tensor& z,
                                std::span<const int> labels) {
  if (z.rank() != 2 || z.dim(1) != g.latent_dim)
    throw Error("generator: latent batch must be [B, " + std::to_string(g.latent_dim) + "]");
  const std::size_t B = z.dim(0);
  if (labels.size() != B) throw Error("generator: label count mismatch");
  Tensor in = Tensor::matrix(B, g.latent_dim + g.classes);
  for (std::size_t n = 0; n < B; ++n) {
    if (labels[n] < 0 || std::size_t(labels[n]) >= g.classes)
      throw Error("generator: label out of range");
    for (std::size_t j = 0; j < g.latent_dim; ++j) in.at(n, j) = z.at(n, j);
    in.at(n, g.latent_dim + std::size_t(labels[n])) = 1.0;
  }
  GeneratorPass p;
  p.fwd = forward(g.body, in, Mode::Train);
  Shape shape{B};
  shape.insert(shape.end(), g.output_shape.begin(), g.output_shape.end());
  p.output = Tensor(std::move(shape));
  for (std::size_t i = 0; i < p.output.size(); ++i)
    p.output[i] = g.bound * std::tanh(p.fwd.logits[i]);
  p.output.require_finite("generator output");
  for (double v : p.output.data())
    if (std::abs(v) > g.bound) throw Error("generator: output outside bounds");
  return p;
}

Gradients generator_backward(const GeneratorNet& g, const GeneratorPass& pass,
                             const Tensor& grad_output,
                             std::span<const Tensor> feature_grads) {
  if (grad_output.size() != pass.output.size())
    throw Error("generator: output gradient shape mismatch");
  Tensor glogits(pass.fwd.logits.shape());
  for (std::size_t i = 0; i < glogits.size(); ++i) {
    const double t = pass.output[i] / g.bound;
    glogits[i] = grad_output[i] * g.bound * (1.0 - t * t);
  }
  std::vector<Tensor> inject;
  if (!feature_grads.empty()) {
    if (feature_grads.size() != g.block_count())
      throw Error("generator: need one feature gradient per block");
    inject.resize(g.body.layers.size());
    for (std::size_t b = 0; b < feature_grads.size(); ++b)
      inject[g.feature_layer(b)] = feature_grads[b];
  }
  return backward(g.body, pass.fwd, glogits, inject);
}

}  // namespace dsgq
