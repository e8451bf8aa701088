#include "dsgq/dsg_losses.hpp"

#include <algorithm>
#include <cmath>

namespace dsgq::dsg {

namespace {

double sign(double x) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); }

void require_aligned(const ActivationTrace& trace, const Network& net) {
  if (trace.bn.size() != net.bn_count())
    throw Error("trace has " + std::to_string(trace.bn.size()) +
                " BN entries but the network has " +
                std::to_string(net.bn_count()) + " BN layers");
}

}  // namespace

ChannelStats bn_targets(const Network& net, std::size_t i) {
  const auto idx = net.bn_indices();
  if (i >= idx.size()) throw Error("bn_targets: BN layer index out of range");
  const Layer& l = net.layers[idx[i]];
  ChannelStats t{l.running_mean, Tensor(l.running_var.shape())};
  for (std::size_t c = 0; c < t.std.size(); ++c)
    t.std[c] = std::sqrt(l.running_var[c]);
  return t;
}

StatLoss bn_stats_loss(const ActivationTrace& trace, const Network& net) {
  require_aligned(trace, net);
  StatLoss out;
  for (std::size_t i = 0; i < trace.bn.size(); ++i) {
    const ChannelStats target = bn_targets(net, i);
    const ChannelStats& s = trace.bn[i];
    if (s.mean.size() != target.mean.size())
      throw Error("bn_stats_loss: channel count mismatch at BN layer " +
                  std::to_string(i));
    StatGrad g{Tensor(s.mean.shape()), Tensor(s.std.shape())};
    double l = 0.0;
    for (std::size_t c = 0; c < s.mean.size(); ++c) {
      const double dm = s.mean[c] - target.mean[c];
      const double ds = s.std[c] - target.std[c];
      l += dm * dm + ds * ds;
      g.dmean[c] = 2.0 * dm;
      g.dstd[c] = 2.0 * ds;
    }
    out.per_layer.push_back(l);
    out.total += l;
    out.grads.push_back(std::move(g));
  }
  return out;
}

RelaxationConstants relaxation_from_trace(const ActivationTrace& trace,
                                          const Network& net, double epsilon) {
  if (!(epsilon > 0.0 && epsilon <= 1.0))
    throw Error("epsilon must be in (0, 1]");
  require_aligned(trace, net);
  if (trace.bn.empty()) throw Error("relaxation needs at least one BN layer");
  RelaxationConstants rc;
  rc.epsilon = epsilon;
  for (std::size_t i = 0; i < trace.bn.size(); ++i) {
    const ChannelStats target = bn_targets(net, i);
    std::vector<double> dm, ds;
    for (std::size_t c = 0; c < target.mean.size(); ++c) {
      dm.push_back(std::abs(trace.bn[i].mean[c] - target.mean[c]));
      ds.push_back(std::abs(trace.bn[i].std[c] - target.std[c]));
    }
    std::sort(dm.begin(), dm.end());
    std::sort(ds.begin(), ds.end());
    rc.delta.push_back(quant::percentile_nearest_rank(dm, epsilon));
    rc.gamma.push_back(quant::percentile_nearest_rank(ds, epsilon));
  }
  return rc;
}

RelaxationConstants compute_relaxation(const Network& net, double epsilon,
                                       std::size_t n_probe, Rng& rng) {
  if (net.bn_count() == 0) throw Error("relaxation needs at least one BN layer");
  if (n_probe < 2) throw Error("relaxation probe needs at least 2 samples");
  Shape shape = net.input_shape;
  shape.insert(shape.begin(), n_probe);
  const Tensor probe = rng.normal_tensor(shape);
  const ForwardResult fwd = forward(net, probe, Mode::Eval);
  return relaxation_from_trace(fwd.trace, net, epsilon);
}

double sda_layer(const ChannelStats& stats, const ChannelStats& target,
                 double delta, double gamma, StatGrad* grad) {
  const std::size_t channels = target.mean.size();
  if (stats.mean.size() != channels || stats.std.size() != channels)
    throw Error("sda: channel count mismatch");
  if (grad) *grad = StatGrad{Tensor({channels}), Tensor({channels})};
  double l = 0.0;
  for (std::size_t c = 0; c < channels; ++c) {
    const double dm = stats.mean[c] - target.mean[c];
    const double ds = stats.std[c] - target.std[c];
    const double hm = std::abs(dm) - delta;
    const double hs = std::abs(ds) - gamma;
    if (hm > 0.0) {
      l += hm * hm;
      if (grad) grad->dmean[c] = 2.0 * hm * sign(dm);
    }
    if (hs > 0.0) {
      l += hs * hs;
      if (grad) grad->dstd[c] = 2.0 * hs * sign(ds);
    }
  }
  return l;
}

StatLoss sda_loss(const ActivationTrace& trace, const Network& net,
                  const RelaxationConstants& rc) {
  require_aligned(trace, net);
  if (rc.delta.size() != trace.bn.size() || rc.gamma.size() != trace.bn.size())
    throw Error("sda_loss: relaxation constants do not match BN layers");
  StatLoss out;
  for (std::size_t i = 0; i < trace.bn.size(); ++i) {
    StatGrad g;
    const double l =
        sda_layer(trace.bn[i], bn_targets(net, i), rc.delta[i], rc.gamma[i], &g);
    out.per_layer.push_back(l);
    out.total += l;
    out.grads.push_back(std::move(g));
  }
  return out;
}

std::vector<Tensor> stat_input_grads(const Network& net, const ForwardResult& fwd,
                                     const std::vector<StatGrad>& grads) {
  const auto idx = net.bn_indices();
  if (grads.size() != idx.size())
    throw Error("stat_input_grads: one gradient per BN layer required");
  std::vector<Tensor> out(net.layers.size());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    const Tensor& input = fwd.cache.raw_inputs[idx[i]];
    out[idx[i]] = channel_stats_backward(input, fwd.trace.bn[i], grads[i].dmean,
                                         grads[i].dstd);
  }
  return out;
}

LseAssignment lse_assign(std::size_t batch_size, std::size_t n_bn_layers) {
  if (batch_size == 0 || n_bn_layers == 0)
    throw Error("lse_assign: batch size and layer count must be positive");
  LseAssignment lse;
  lse.matrix = Tensor::matrix(batch_size, n_bn_layers, 1.0 / double(n_bn_layers));
  lse.assignment.resize(batch_size);
  for (std::size_t j = 0; j < batch_size; ++j) {
    lse.assignment[j] = j % n_bn_layers;
    lse.matrix.at(j, lse.assignment[j]) = 2.0 / double(n_bn_layers);
  }
  return lse;
}

double lse_sda_combine(const Tensor& per_sample_losses, const LseAssignment& lse) {
  if (per_sample_losses.rank() != 2 ||
      per_sample_losses.shape() != lse.matrix.shape())
    throw Error("lse_sda_combine: losses must be [B, N] matching the assignment");
  double total = 0.0;
  for (std::size_t j = 0; j < lse.batch(); ++j) {
    double row = 0.0;
    for (std::size_t i = 0; i < lse.layers(); ++i)
      row += lse.matrix.at(j, i) * per_sample_losses.at(j, i);
    total += row;
  }
  return total;
}

LseLoss lse_loss(const Network& net, const ForwardResult& fwd,
                 const LseAssignment& lse, const RelaxationConstants* rc) {
  const auto idx = net.bn_indices();
  const std::size_t n_layers = idx.size();
  if (n_layers == 0) throw Error("lse_loss: network has no BN layers");
  if (lse.layers() != n_layers)
    throw Error("lse_loss: assignment does not match BN layer count");
  if (rc && (rc->delta.size() != n_layers || rc->gamma.size() != n_layers))
    throw Error("lse_loss: relaxation constants do not match BN layers");
  const std::size_t batch = fwd.logits.dim(0);
  if (lse.batch() != batch) throw Error("lse_loss: assignment batch mismatch");

  std::vector<std::vector<std::size_t>> groups(n_layers);
  for (std::size_t j = 0; j < batch; ++j) groups[lse.assignment[j]].push_back(j);

  LseLoss out;
  out.per_sample = Tensor::matrix(batch, n_layers);
  out.input_grads.resize(net.layers.size());
  for (std::size_t i = 0; i < n_layers; ++i) {
    const Tensor& input = fwd.cache.raw_inputs[idx[i]];
    const ChannelStats target = bn_targets(net, i);
    Tensor grad_in(input.shape());
    for (std::size_t g = 0; g < n_layers; ++g) {
      const auto& rows = groups[g];
      if (rows.empty()) continue;
      const ChannelStats stats = channel_stats(input, rows);
      StatGrad sg;
      const double l = sda_layer(stats, target, rc ? rc->delta[i] : 0.0,
                                 rc ? rc->gamma[i] : 0.0, &sg);
      const double weight = lse.matrix.at(rows.front(), i);
      for (std::size_t j : rows) out.per_sample.at(j, i) = l;
      const double scale = weight * double(rows.size());
      for (double& v : sg.dmean.data()) v *= scale;
      for (double& v : sg.dstd.data()) v *= scale;
      const Tensor gi = channel_stats_backward(input, stats, sg.dmean, sg.dstd, rows);
      for (std::size_t e = 0; e < gi.size(); ++e) grad_in[e] += gi[e];
    }
    out.input_grads[idx[i]] = std::move(grad_in);
  }
  out.total = lse_sda_combine(out.per_sample, lse);
  return out;
}

Tensor build_kernel(const Tensor& features) {
  if (features.rank() != 2) throw Error("build_kernel: features must be [B, D]");
  const std::size_t b = features.dim(0), d = features.dim(1);
  std::vector<double> inv(b);
  for (std::size_t j = 0; j < b; ++j) {
    double n2 = 0.0;
    for (std::size_t c = 0; c < d; ++c) n2 += features.at(j, c) * features.at(j, c);
    if (!(n2 > 0.0))
      throw Error("build_kernel: feature row " + std::to_string(j) + " has zero norm");
    inv[j] = 1.0 / std::sqrt(n2);
  }
  Tensor k = Tensor::matrix(b, b);
  for (std::size_t i = 0; i < b; ++i) {
    k.at(i, i) = 1.0;
    for (std::size_t j = i + 1; j < b; ++j) {
      double acc = 0.0;
      for (std::size_t c = 0; c < d; ++c) acc += features.at(i, c) * features.at(j, c);
      k.at(i, j) = k.at(j, i) = acc * inv[i] * inv[j];
    }
  }
  return k;
}

Tensor build_kernel_backward(const Tensor& features, const Tensor& dk) {
  const std::size_t b = features.dim(0), d = features.dim(1);
  if (dk.shape() != Shape{b, b}) throw Error("build_kernel_backward: shape mismatch");
  Tensor phi = features;
  std::vector<double> nrm(b);
  for (std::size_t j = 0; j < b; ++j) {
    double n2 = 0.0;
    for (std::size_t c = 0; c < d; ++c) n2 += phi.at(j, c) * phi.at(j, c);
    nrm[j] = std::sqrt(n2);
    for (std::size_t c = 0; c < d; ++c) phi.at(j, c) /= nrm[j];
  }
  Tensor grad = Tensor::matrix(b, d);
  for (std::size_t j = 0; j < b; ++j) {
    std::vector<double> dphi(d, 0.0);
    for (std::size_t i = 0; i < b; ++i) {
      const double w = dk.at(j, i) + dk.at(i, j);
      if (w == 0.0) continue;
      for (std::size_t c = 0; c < d; ++c) dphi[c] += w * phi.at(i, c);
    }
    double radial = 0.0;
    for (std::size_t c = 0; c < d; ++c) radial += phi.at(j, c) * dphi[c];
    for (std::size_t c = 0; c < d; ++c)
      grad.at(j, c) = (dphi[c] - radial * phi.at(j, c)) / nrm[j];
  }
  return grad;
}

std::vector<double> minmax_normalize(const std::vector<double>& v) {
  std::vector<double> out(v.size(), 0.0);
  if (v.empty()) return out;
  const auto [lo, hi] = std::minmax_element(v.begin(), v.end());
  const double range = *hi - *lo;
  if (range < 1e-12) return out;
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = (v[i] - *lo) / range;
  return out;
}

NoiseSet make_noise(Tensor vectors) {
  if (vectors.rank() != 2) throw Error("noise vectors must be [B, D]");
  NoiseSet noise;
  noise.vectors = std::move(vectors);
  noise.eig = eig_sym(build_kernel(noise.vectors));
  noise.normalized_values = minmax_normalize(noise.eig.values);
  noise.checksum = dsgq::checksum(noise.vectors);
  return noise;
}

NoiseSet make_noise(std::size_t batch, std::size_t dim, Rng& rng) {
  return make_noise(rng.uniform_tensor({batch, dim}));
}

SciResult sci_loss(const Tensor& features, const NoiseSet& noise, SciWeights weights) {
  if (features.shape() != noise.vectors.shape())
    throw Error("sci_loss: features " + shape_str(features.shape()) +
                " do not match noise " + shape_str(noise.vectors.shape()));
  const std::size_t n = features.dim(0);
  const EigenDecomposition eig = eig_sym(build_kernel(features));
  const EigenDecomposition& ref = noise.eig;
  const std::vector<double>& lf = eig.values;
  const std::vector<double>& lr = ref.values;
  const std::vector<double> w =
      weights == SciWeights::Noise ? noise.normalized_values : minmax_normalize(lf);

  std::vector<double> cosines(n);
  for (std::size_t i = 0; i < n; ++i) {
    double c = 0.0;
    for (std::size_t r = 0; r < n; ++r) c += eig.vector(i, r) * ref.vector(i, r);
    cosines[i] = c;
  }

  SciResult out;
  for (std::size_t i = 0; i < n; ++i)
    out.inner += std::abs(lf[i] - lr[i]) - w[i] * cosines[i];
  out.value = std::max(out.inner, 0.0);
  out.grad = Tensor(features.shape());
  if (out.inner <= 0.0) return out;

  // d inner / d lambda_f.
  std::vector<double> glam(n);
  for (std::size_t i = 0; i < n; ++i) glam[i] = sign(lf[i] - lr[i]);
  if (weights == SciWeights::Features) {
    const double hi = lf.front(), lo = lf.back(), range = hi - lo;
    if (range >= 1e-12) {
      double sum_c = 0.0, sum_cl = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        sum_c += cosines[j];
        sum_cl += cosines[j] * (lf[j] - lo);
      }
      for (std::size_t i = 0; i < n; ++i) glam[i] -= cosines[i] / range;
      glam.front() += sum_cl / (range * range);
      glam.back() += sum_c / range - sum_cl / (range * range);
    }
  }

  // Coefficients of d inner / dK in the eigenbasis: G = V C V^T.
  Tensor coef = Tensor::matrix(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    coef.at(i, i) = glam[i];
    if (w[i] == 0.0) continue;
    for (std::size_t k = 0; k < n; ++k) {
      if (k == i) continue;
      double proj = 0.0;
      for (std::size_t r = 0; r < n; ++r) proj += ref.vector(i, r) * eig.vector(k, r);
      double gap = lf[i] - lf[k];
      if (std::abs(gap) < kEigenGapFloor) gap = gap >= 0.0 ? kEigenGapFloor : -kEigenGapFloor;
      coef.at(k, i) -= w[i] * proj / gap;
    }
  }
  Tensor tmp = Tensor::matrix(n, n);  // V C
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t i = 0; i < n; ++i) {
      double acc = 0.0;
      for (std::size_t k = 0; k < n; ++k) acc += eig.vectors.at(r, k) * coef.at(k, i);
      tmp.at(r, i) = acc;
    }
  Tensor dk = Tensor::matrix(n, n);  // V C V^T
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t s = 0; s < n; ++s) {
      double acc = 0.0;
      for (std::size_t i = 0; i < n; ++i) acc += tmp.at(r, i) * eig.vectors.at(s, i);
      dk.at(r, s) = acc;
    }
  out.grad = build_kernel_backward(features, dk);
  return out;
}

}  // namespace dsgq::dsg
