#include "dsgq/net.hpp"

#include <cmath>

namespace dsgq {

const char* to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::Dense: return "dense";
    case LayerKind::Conv2d: return "conv2d";
    case LayerKind::BatchNorm: return "batchnorm";
    case LayerKind::Relu: return "relu";
    case LayerKind::GlobalAvgPool: return "globalavgpool";
  }
  return "?";
}

LayerKind layer_kind_from_string(const std::string& s) {
  if (s == "dense") return LayerKind::Dense;
  if (s == "conv2d") return LayerKind::Conv2d;
  if (s == "batchnorm") return LayerKind::BatchNorm;
  if (s == "relu") return LayerKind::Relu;
  if (s == "globalavgpool") return LayerKind::GlobalAvgPool;
  throw Error("unknown layer kind '" + s + "'");
}

Layer Layer::dense(std::size_t in, std::size_t out) {
  Layer l;
  l.kind = LayerKind::Dense;
  l.weight = Tensor({out, in});
  l.bias = Tensor({out});
  return l;
}

Layer Layer::conv2d(std::size_t in, std::size_t out, std::size_t kernel) {
  Layer l;
  l.kind = LayerKind::Conv2d;
  l.weight = Tensor({out, in, kernel, kernel});
  l.bias = Tensor({out});
  return l;
}

Layer Layer::batchnorm(std::size_t channels, double eps, double momentum) {
  Layer l;
  l.kind = LayerKind::BatchNorm;
  l.gamma = Tensor({channels}, 1.0);
  l.beta = Tensor({channels}, 0.0);
  l.running_mean = Tensor({channels}, 0.0);
  l.running_var = Tensor({channels}, 1.0);
  l.eps = eps;
  l.momentum = momentum;
  return l;
}

std::vector<Tensor*> Layer::parameters() {
  if (has_weights()) return {&weight, &bias};
  if (kind == LayerKind::BatchNorm) return {&gamma, &beta};
  return {};
}

std::vector<const Tensor*> Layer::parameters() const {
  if (has_weights()) return {&weight, &bias};
  if (kind == LayerKind::BatchNorm) return {&gamma, &beta};
  return {};
}

void Layer::validate() const {
  switch (kind) {
    case LayerKind::Dense:
      if (weight.rank() != 2 || bias.rank() != 1 || bias.dim(0) != weight.dim(0))
        throw Error("dense layer: weight must be [out, in] and bias [out]");
      break;
    case LayerKind::Conv2d:
      if (weight.rank() != 4 || weight.dim(2) != weight.dim(3))
        throw Error("conv2d layer: kernel must be square [out, in, k, k]");
      if (weight.dim(2) % 2 == 0)
        throw Error("conv2d layer: kernel side must be odd");
      if (bias.rank() != 1 || bias.dim(0) != weight.dim(0))
        throw Error("conv2d layer: bias must be [out]");
      break;
    case LayerKind::BatchNorm: {
      const std::size_t c = gamma.size();
      if (c == 0 || beta.size() != c || running_mean.size() != c ||
          running_var.size() != c)
        throw Error("batchnorm layer: parameter sizes disagree");
      for (double v : running_var.data())
        if (!(v >= 0.0)) throw Error("batchnorm layer: running_var must be >= 0");
      if (!(eps > 0.0)) throw Error("batchnorm layer: eps must be > 0");
      if (!(momentum >= 0.0 && momentum <= 1.0))
        throw Error("batchnorm layer: momentum must be in [0, 1]");
      break;
    }
    case LayerKind::Relu:
    case LayerKind::GlobalAvgPool:
      break;
  }
  for (const Tensor* p : parameters()) p->require_finite("layer parameters");
}

std::vector<std::size_t> Network::bn_indices() const {
  std::vector<std::size_t> idx;
  for (std::size_t k = 0; k < layers.size(); ++k)
    if (layers[k].kind == LayerKind::BatchNorm) idx.push_back(k);
  return idx;
}

Shape Network::validate() const {
  if (input_shape.empty()) throw Error("network input shape is empty");
  Shape cur = input_shape;
  for (std::size_t k = 0; k < layers.size(); ++k) {
    const Layer& l = layers[k];
    const std::string where = "layer " + std::to_string(k) + " (" +
                              to_string(l.kind) + "): ";
    try {
      l.validate();
    } catch (const Error& e) {
      throw Error(where + e.what());
    }
    switch (l.kind) {
      case LayerKind::Dense:
        if (cur.size() != 1 || cur[0] != l.weight.dim(1))
          throw Error(where + "expects input [" +
                      std::to_string(l.weight.dim(1)) + "], got " +
                      shape_str(cur));
        cur = {l.weight.dim(0)};
        break;
      case LayerKind::Conv2d:
        if (cur.size() != 3 || cur[0] != l.weight.dim(1))
          throw Error(where + "channel/rank mismatch with input " +
                      shape_str(cur));
        cur[0] = l.weight.dim(0);
        break;
      case LayerKind::BatchNorm:
        if ((cur.size() != 1 && cur.size() != 3) || cur[0] != l.gamma.size())
          throw Error(where + "channel mismatch with input " + shape_str(cur));
        break;
      case LayerKind::Relu:
        break;
      case LayerKind::GlobalAvgPool:
        if (cur.size() != 3) throw Error(where + "expects [C, H, W] input");
        cur = {cur[0]};
        break;
    }
  }
  return cur;
}

std::vector<Tensor*> Network::parameters() {
  std::vector<Tensor*> out;
  for (auto& l : layers)
    for (Tensor* p : l.parameters()) out.push_back(p);
  return out;
}

std::vector<const Tensor*> Network::parameters() const {
  std::vector<const Tensor*> out;
  for (const auto& l : layers)
    for (const Tensor* p : l.parameters()) out.push_back(p);
  return out;
}

std::size_t Network::parameter_count() const {
  std::size_t n = 0;
  for (const Tensor* p : parameters()) n += p->size();
  return n;
}

std::uint64_t checksum(const Network& net) {
  std::uint64_t h = 0;
  auto fold = [&h](const Tensor& t) {
    if (!t.empty()) h = h * 31 + checksum(t);
  };
  for (const auto& l : net.layers) {
    for (const Tensor* p : l.parameters()) fold(*p);
    fold(l.running_mean);
    fold(l.running_var);
  }
  return h;
}

void initialize(Network& net, Rng& rng) {
  for (auto& l : net.layers) {
    if (!l.has_weights()) continue;
    const double fan_in = double(l.weight.size() / l.weight.dim(0));
    const double stddev = std::sqrt(2.0 / fan_in);
    for (double& w : l.weight.data()) w = stddev * rng.normal();
    for (double& b : l.bias.data()) b = 0.0;
  }
}

Network make_mlp(std::size_t in, const std::vector<std::size_t>& hidden,
                 std::size_t classes, Rng& rng) {
  Network net;
  net.input_shape = {in};
  std::size_t prev = in;
  for (std::size_t h : hidden) {
    net.layers.push_back(Layer::dense(prev, h));
    net.layers.push_back(Layer::batchnorm(h));
    net.layers.push_back(Layer::relu());
    prev = h;
  }
  net.layers.push_back(Layer::dense(prev, classes));
  initialize(net, rng);
  net.validate();
  return net;
}

namespace {

struct ChannelLayout {
  std::size_t batch, channels, spatial;
};

ChannelLayout layout_of(const Tensor& t) {
  if (t.rank() == 2) return {t.dim(0), t.dim(1), 1};
  if (t.rank() == 4) return {t.dim(0), t.dim(1), t.dim(2) * t.dim(3)};
  throw Error("channel statistics need a [B, C] or [B, C, H, W] tensor, got " +
              shape_str(t.shape()));
}

std::vector<std::size_t> all_rows(std::size_t n) {
  std::vector<std::size_t> r(n);
  for (std::size_t i = 0; i < n; ++i) r[i] = i;
  return r;
}

}  // namespace

ChannelStats channel_stats(const Tensor& input,
                           std::span<const std::size_t> rows) {
  const auto [batch, channels, spatial] = layout_of(input);
  std::vector<std::size_t> owned;
  if (rows.empty()) {
    owned = all_rows(batch);
    rows = owned;
  }
  const double count = double(rows.size() * spatial);
  ChannelStats s{Tensor({channels}), Tensor({channels})};
  for (std::size_t c = 0; c < channels; ++c) {
    double sum = 0.0;
    for (std::size_t b : rows)
      for (std::size_t p = 0; p < spatial; ++p)
        sum += input[(b * channels + c) * spatial + p];
    const double mean = sum / count;
    double sq = 0.0;
    for (std::size_t b : rows)
      for (std::size_t p = 0; p < spatial; ++p) {
        const double d = input[(b * channels + c) * spatial + p] - mean;
        sq += d * d;
      }
    s.mean[c] = mean;
    s.std[c] = std::sqrt(sq / count);
  }
  return s;
}

Tensor channel_stats_backward(const Tensor& input, const ChannelStats& stats,
                              const Tensor& dmean, const Tensor& dstd,
                              std::span<const std::size_t> rows) {
  const auto [batch, channels, spatial] = layout_of(input);
  if (dmean.size() != channels || dstd.size() != channels)
    throw Error("channel_stats_backward: gradient size mismatch");
  std::vector<std::size_t> owned;
  if (rows.empty()) {
    owned = all_rows(batch);
    rows = owned;
  }
  const double count = double(rows.size() * spatial);
  Tensor grad(input.shape());
  for (std::size_t c = 0; c < channels; ++c) {
    const double gm = dmean[c] / count;
    // d std / d x = (x - mean) / (count * std); zero-variance channels get 0.
    const double gs = stats.std[c] > 0.0 ? dstd[c] / (count * stats.std[c]) : 0.0;
    for (std::size_t b : rows)
      for (std::size_t p = 0; p < spatial; ++p) {
        const std::size_t i = (b * channels + c) * spatial + p;
        grad[i] += gm + gs * (input[i] - stats.mean[c]);
      }
  }
  return grad;
}

const Tensor& ForwardResult::bn_input(const Network& net, std::size_t i) const {
  const auto idx = net.bn_indices();
  if (i >= idx.size()) throw Error("bn_input: BN layer index out of range");
  return cache.raw_inputs[idx[i]];
}

namespace {

Tensor dense_forward(const Tensor& x, const Tensor& w, const Tensor& b) {
  const std::size_t batch = x.dim(0), in = w.dim(1), out = w.dim(0);
  Tensor y({batch, out});
  for (std::size_t n = 0; n < batch; ++n) {
    const double* xr = x.data().data() + n * in;
    for (std::size_t o = 0; o < out; ++o) {
      const double* wr = w.data().data() + o * in;
      double acc = b[o];
      for (std::size_t i = 0; i < in; ++i) acc += wr[i] * xr[i];
      y[n * out + o] = acc;
    }
  }
  return y;
}

Tensor conv_forward(const Tensor& x, const Tensor& w, const Tensor& b) {
  const std::size_t batch = x.dim(0), cin = x.dim(1), h = x.dim(2),
                    wd = x.dim(3), cout = w.dim(0), k = w.dim(2);
  const long pad = long(k / 2);
  Tensor y({batch, cout, h, wd});
  for (std::size_t n = 0; n < batch; ++n)
    for (std::size_t o = 0; o < cout; ++o)
      for (std::size_t r = 0; r < h; ++r)
        for (std::size_t c = 0; c < wd; ++c) {
          double acc = b[o];
          for (std::size_t i = 0; i < cin; ++i)
            for (std::size_t kr = 0; kr < k; ++kr) {
              const long rr = long(r) + long(kr) - pad;
              if (rr < 0 || rr >= long(h)) continue;
              for (std::size_t kc = 0; kc < k; ++kc) {
                const long cc = long(c) + long(kc) - pad;
                if (cc < 0 || cc >= long(wd)) continue;
                acc += w[((o * cin + i) * k + kr) * k + kc] *
                       x[((n * cin + i) * h + rr) * wd + cc];
              }
            }
          y[((n * cout + o) * h + r) * wd + c] = acc;
        }
  return y;
}

}  // namespace

ForwardResult forward(const Network& net, const Tensor& batch, Mode mode,
                      const QuantHooks* hooks) {
  Shape expect = net.input_shape;
  expect.insert(expect.begin(), batch.rank() ? batch.dim(0) : 0);
  if (batch.shape() != expect)
    throw Error("forward: batch shape " + shape_str(batch.shape()) +
                " does not match network input " + shape_str(net.input_shape));
  batch.require_finite("forward input");

  const std::size_t L = net.layers.size();
  if (hooks && ((!hooks->weight.empty() && hooks->weight.size() != L) ||
                (!hooks->act.empty() && hooks->act.size() != L)))
    throw Error("forward: quantization hooks do not match layer count");

  ForwardResult res;
  ForwardCache& cache = res.cache;
  cache.mode = mode;
  cache.raw_inputs.resize(L);
  cache.inputs.resize(L);
  cache.act_masks.resize(L);
  cache.weights.resize(L);
  cache.weight_masks.resize(L);
  cache.xhat.resize(L);
  cache.inv_std.resize(L);
  cache.batch_stats.resize(L);

  Tensor x = batch;
  for (std::size_t k = 0; k < L; ++k) {
    const Layer& l = net.layers[k];
    cache.raw_inputs[k] = x;
    if (hooks && !hooks->act.empty() && hooks->act[k]) {
      auto fq = quant::fake_quant_forward_backward(x, *hooks->act[k]);
      x = std::move(fq.output);
      cache.act_masks[k] = std::move(fq.grad_mask);
    }
    cache.inputs[k] = x;

    switch (l.kind) {
      case LayerKind::Dense:
      case LayerKind::Conv2d: {
        const Tensor* w = &l.weight;
        if (hooks && !hooks->weight.empty() && hooks->weight[k]) {
          auto fq = quant::fake_quant_forward_backward(l.weight, *hooks->weight[k]);
          cache.weights[k] = std::move(fq.output);
          cache.weight_masks[k] = std::move(fq.grad_mask);
          w = &cache.weights[k];
        }
        x = l.kind == LayerKind::Dense ? dense_forward(x, *w, l.bias)
                                       : conv_forward(x, *w, l.bias);
        break;
      }
      case LayerKind::BatchNorm: {
        ChannelStats stats = channel_stats(x);
        const auto [nb, channels, spatial] = layout_of(x);
        Tensor inv_std({channels});
        Tensor shift({channels});
        for (std::size_t c = 0; c < channels; ++c) {
          const bool batch_norm = mode != Mode::Eval;
          const double m = batch_norm ? stats.mean[c] : l.running_mean[c];
          const double v = batch_norm ? stats.std[c] * stats.std[c]
                                      : l.running_var[c];
          inv_std[c] = 1.0 / std::sqrt(v + l.eps);
          shift[c] = m;
        }
        Tensor xhat(x.shape());
        Tensor y(x.shape());
        for (std::size_t n = 0; n < nb; ++n)
          for (std::size_t c = 0; c < channels; ++c)
            for (std::size_t p = 0; p < spatial; ++p) {
              const std::size_t i = (n * channels + c) * spatial + p;
              xhat[i] = (x[i] - shift[c]) * inv_std[c];
              y[i] = l.gamma[c] * xhat[i] + l.beta[c];
            }
        res.trace.bn.push_back(stats);
        cache.batch_stats[k] = std::move(stats);
        cache.xhat[k] = std::move(xhat);
        cache.inv_std[k] = std::move(inv_std);
        x = std::move(y);
        break;
      }
      case LayerKind::Relu:
        for (double& v : x.data()) v = v > 0.0 ? v : 0.0;
        break;
      case LayerKind::GlobalAvgPool: {
        const auto [nb, channels, spatial] = layout_of(x);
        Tensor y({nb, channels});
        for (std::size_t n = 0; n < nb; ++n)
          for (std::size_t c = 0; c < channels; ++c) {
            double acc = 0.0;
            for (std::size_t p = 0; p < spatial; ++p)
              acc += x[(n * channels + c) * spatial + p];
            y[n * channels + c] = acc / double(spatial);
          }
        x = std::move(y);
        break;
      }
    }
    x.require_finite("activation of layer " + std::to_string(k));
  }
  res.logits = x;
  res.trace.logits = std::move(x);
  return res;
}

ForwardResult forward_collect(Network& net, const Tensor& batch) {
  ForwardResult res = forward(net, batch, Mode::Collect);
  for (std::size_t k = 0; k < net.layers.size(); ++k) {
    Layer& l = net.layers[k];
    if (l.kind != LayerKind::BatchNorm) continue;
    const ChannelStats& s = res.cache.batch_stats[k];
    const double m = l.momentum;
    for (std::size_t c = 0; c < l.gamma.size(); ++c) {
      l.running_mean[c] = (1.0 - m) * l.running_mean[c] + m * s.mean[c];
      l.running_var[c] =
          (1.0 - m) * l.running_var[c] + m * (s.std[c] * s.std[c]);
    }
  }
  return res;
}

std::vector<const Tensor*> Gradients::parameters() const {
  std::vector<const Tensor*> out;
  for (const auto& l : layers)
    for (const auto& p : l.params) out.push_back(&p);
  return out;
}

Gradients backward(const Network& net, const ForwardResult& fwd,
                   const Tensor& grad_logits,
                   std::span<const Tensor> input_grads) {
  const ForwardCache& cache = fwd.cache;
  const std::size_t L = net.layers.size();
  if (cache.inputs.size() != L)
    throw Error("backward: no matching forward cache");
  if (grad_logits.shape() != fwd.logits.shape())
    throw Error("backward: upstream gradient shape " +
                shape_str(grad_logits.shape()) + " != logits shape " +
                shape_str(fwd.logits.shape()));
  if (!input_grads.empty() && input_grads.size() != L)
    throw Error("backward: input_grads must have one entry per layer");
  grad_logits.require_finite("upstream gradient");

  Gradients grads;
  grads.layers.resize(L);
  Tensor g = grad_logits;
  for (std::size_t k = L; k-- > 0;) {
    const Layer& l = net.layers[k];
    const Tensor& x = cache.inputs[k];
    Tensor dx(x.shape());
    switch (l.kind) {
      case LayerKind::Dense: {
        const Tensor& w = cache.weights[k].empty() ? l.weight : cache.weights[k];
        const std::size_t nb = x.dim(0), in = w.dim(1), out = w.dim(0);
        Tensor dw(w.shape()), db(l.bias.shape());
        for (std::size_t n = 0; n < nb; ++n)
          for (std::size_t o = 0; o < out; ++o) {
            const double go = g[n * out + o];
            if (go == 0.0) continue;
            db[o] += go;
            for (std::size_t i = 0; i < in; ++i) {
              dw[o * in + i] += go * x[n * in + i];
              dx[n * in + i] += go * w[o * in + i];
            }
          }
        if (!cache.weight_masks[k].empty())
          for (std::size_t i = 0; i < dw.size(); ++i)
            dw[i] *= cache.weight_masks[k][i];
        grads.layers[k].params = {std::move(dw), std::move(db)};
        break;
      }
      case LayerKind::Conv2d: {
        const Tensor& w = cache.weights[k].empty() ? l.weight : cache.weights[k];
        const std::size_t nb = x.dim(0), cin = x.dim(1), h = x.dim(2),
                          wd = x.dim(3), cout = w.dim(0), ks = w.dim(2);
        const long pad = long(ks / 2);
        Tensor dw(w.shape()), db(l.bias.shape());
        for (std::size_t n = 0; n < nb; ++n)
          for (std::size_t o = 0; o < cout; ++o)
            for (std::size_t r = 0; r < h; ++r)
              for (std::size_t c = 0; c < wd; ++c) {
                const double go = g[((n * cout + o) * h + r) * wd + c];
                db[o] += go;
                for (std::size_t i = 0; i < cin; ++i)
                  for (std::size_t kr = 0; kr < ks; ++kr) {
                    const long rr = long(r) + long(kr) - pad;
                    if (rr < 0 || rr >= long(h)) continue;
                    for (std::size_t kc = 0; kc < ks; ++kc) {
                      const long cc = long(c) + long(kc) - pad;
                      if (cc < 0 || cc >= long(wd)) continue;
                      const std::size_t wi = ((o * cin + i) * ks + kr) * ks + kc;
                      const std::size_t xi = ((n * cin + i) * h + rr) * wd + cc;
                      dw[wi] += go * x[xi];
                      dx[xi] += go * w[wi];
                    }
                  }
              }
        if (!cache.weight_masks[k].empty())
          for (std::size_t i = 0; i < dw.size(); ++i)
            dw[i] *= cache.weight_masks[k][i];
        grads.layers[k].params = {std::move(dw), std::move(db)};
        break;
      }
      case LayerKind::BatchNorm: {
        const Tensor& xhat = cache.xhat[k];
        const Tensor& inv_std = cache.inv_std[k];
        const auto [nb, channels, spatial] = layout_of(x);
        const double count = double(nb * spatial);
        Tensor dgamma({channels}), dbeta({channels});
        for (std::size_t c = 0; c < channels; ++c) {
          double sum_g = 0.0, sum_gx = 0.0;
          for (std::size_t n = 0; n < nb; ++n)
            for (std::size_t p = 0; p < spatial; ++p) {
              const std::size_t i = (n * channels + c) * spatial + p;
              sum_g += g[i];
              sum_gx += g[i] * xhat[i];
            }
          dgamma[c] = sum_gx;
          dbeta[c] = sum_g;
          const double gam = l.gamma[c];
          for (std::size_t n = 0; n < nb; ++n)
            for (std::size_t p = 0; p < spatial; ++p) {
              const std::size_t i = (n * channels + c) * spatial + p;
              if (cache.mode == Mode::Eval) {
                dx[i] = g[i] * gam * inv_std[c];
              } else {
                dx[i] = gam * inv_std[c] *
                        (g[i] - sum_g / count - xhat[i] * sum_gx / count);
              }
            }
        }
        grads.layers[k].params = {std::move(dgamma), std::move(dbeta)};
        break;
      }
      case LayerKind::Relu:
        for (std::size_t i = 0; i < x.size(); ++i)
          dx[i] = x[i] > 0.0 ? g[i] : 0.0;
        break;
      case LayerKind::GlobalAvgPool: {
        const auto [nb, channels, spatial] = layout_of(x);
        for (std::size_t n = 0; n < nb; ++n)
          for (std::size_t c = 0; c < channels; ++c)
            for (std::size_t p = 0; p < spatial; ++p)
              dx[(n * channels + c) * spatial + p] =
                  g[n * channels + c] / double(spatial);
        break;
      }
    }
    if (!cache.act_masks[k].empty())
      for (std::size_t i = 0; i < dx.size(); ++i) dx[i] *= cache.act_masks[k][i];
    if (!input_grads.empty() && !input_grads[k].empty()) {
      if (input_grads[k].shape() != dx.shape())
        throw Error("backward: injected gradient shape mismatch at layer " +
                    std::to_string(k));
      for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += input_grads[k][i];
    }
    dx.require_finite("gradient at layer " + std::to_string(k));
    g = std::move(dx);
  }
  grads.input = std::move(g);
  return grads;
}

}  // namespace dsgq
