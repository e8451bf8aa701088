#include "dsgq/metrics.hpp"

#include <algorithm>
#include <boost/math/special_functions/erf.hpp>
#include <cmath>
#include <numbers>

#include "dsgq/dsg_losses.hpp"

namespace dsgq::metrics {

double normal_quantile(double p) {
  if (!(p > 0.0 && p < 1.0)) throw Error("normal_quantile: p must lie in (0, 1)");
  return std::numbers::sqrt2 * boost::math::erf_inv(2.0 * p - 1.0);
}

double wasserstein_1d(std::span<const double> samples, double mu, double sigma,
                      std::size_t n_quantiles) {
  if (samples.size() < 2) throw Error("wasserstein_1d: need at least 2 samples");
  if (!(sigma > 0.0) || !std::isfinite(sigma))
    throw Error("wasserstein_1d: sigma must be positive and finite");
  if (n_quantiles == 0) throw Error("wasserstein_1d: n_quantiles must be positive");
  std::vector<double> sorted(samples.begin(), samples.end());
  std::sort(sorted.begin(), sorted.end());
  const double n = double(sorted.size());
  double acc = 0.0;
  for (std::size_t k = 0; k < n_quantiles; ++k) {
    const double p = (double(k) + 0.5) / double(n_quantiles);
    const auto rank = std::size_t(std::ceil(p * n - 1e-9));
    const double emp = sorted[std::clamp<std::size_t>(rank, 1, sorted.size()) - 1];
    acc += std::abs(emp - (mu + sigma * normal_quantile(p)));
  }
  return acc / double(n_quantiles);
}

double stat_variance(const Tensor& s) {
  if (s.rank() != 2 || s.dim(0) < 2) throw Error("stat_variance: need a [B, M] matrix with B >= 2");
  const std::size_t B = s.rows(), M = s.cols();
  if (M == 0) throw Error("stat_variance: no statistics");
  double total = 0.0;
  for (std::size_t m = 0; m < M; ++m) {
    double mean = 0.0;
    for (std::size_t b = 0; b < B; ++b) mean += s.at(b, m);
    mean /= double(B);
    double var = 0.0;
    for (std::size_t b = 0; b < B; ++b) var += (s.at(b, m) - mean) * (s.at(b, m) - mean);
    total += var / double(B);
  }
  return total / double(M);
}

namespace {

void mean_std(std::span<const double> v, double& mean, double& sd) {
  mean = 0.0;
  for (double x : v) mean += x;
  mean /= double(v.size());
  double var = 0.0;
  for (double x : v) var += (x - mean) * (x - mean);
  sd = std::sqrt(var / double(v.size()));
}

}  // namespace

Tensor per_sample_stats(const Network& net, const Tensor& batch) {
  const ForwardResult f = forward(net, batch, Mode::Eval);
  const std::size_t B = batch.dim(0);
  std::vector<std::vector<double>> rows(B);
  for (std::size_t i = 0; i < net.bn_count(); ++i) {
    const Tensor& in = f.bn_input(net, i);
    const std::size_t per = in.size() / B;
    const std::size_t C = in.dim(1);
    const std::size_t spatial = per / C;
    for (std::size_t b = 0; b < B; ++b) {
      std::span<const double> sample(in.data().data() + b * per, per);
      double m = 0.0, s = 0.0;
      if (in.rank() == 2) {
        mean_std(sample, m, s);
        rows[b].push_back(m);
        rows[b].push_back(s);
      } else {
        for (std::size_t c = 0; c < C; ++c) {
          mean_std(sample.subspan(c * spatial, spatial), m, s);
          rows[b].push_back(m);
          rows[b].push_back(s);
        }
      }
    }
  }
  const std::size_t M = rows.front().size();
  Tensor out = Tensor::matrix(B, M);
  for (std::size_t b = 0; b < B; ++b)
    std::copy(rows[b].begin(), rows[b].end(), out.row(b).begin());
  return out;
}

Tensor pca_project(const Tensor& features, std::size_t components) {
  if (features.rank() < 2) throw Error("pca_project: features must be [B, D]");
  const Tensor x0 = features.reshaped({features.dim(0), features.size() / features.dim(0)});
  const std::size_t B = x0.rows(), D = x0.cols();
  if (B < 3 || D < 2) throw Error("pca_project: need B >= 3 and D >= 2");
  if (components == 0 || components > D) throw Error("pca_project: bad component count");
  Tensor x = x0;
  for (std::size_t d = 0; d < D; ++d) {
    double mean = 0.0;
    for (std::size_t b = 0; b < B; ++b) mean += x.at(b, d);
    mean /= double(B);
    for (std::size_t b = 0; b < B; ++b) x.at(b, d) -= mean;
  }
  Tensor cov = Tensor::matrix(D, D);
  for (std::size_t i = 0; i < D; ++i)
    for (std::size_t j = i; j < D; ++j) {
      double acc = 0.0;
      for (std::size_t b = 0; b < B; ++b) acc += x.at(b, i) * x.at(b, j);
      cov.at(i, j) = cov.at(j, i) = acc / double(B);
    }
  double trace = 0.0;
  for (std::size_t i = 0; i < D; ++i) trace += cov.at(i, i);
  if (!(trace > 1e-300)) throw Error("pca_project: data has zero variance");

  std::vector<std::vector<double>> dirs;
  auto orthogonalize = [&](std::vector<double>& v) {
    for (const auto& u : dirs) {
      double dot = 0.0;
      for (std::size_t i = 0; i < D; ++i) dot += v[i] * u[i];
      for (std::size_t i = 0; i < D; ++i) v[i] -= dot * u[i];
    }
    double n = 0.0;
    for (double a : v) n += a * a;
    n = std::sqrt(n);
    if (n > 0.0)
      for (double& a : v) a /= n;
    return n;
  };
  for (std::size_t c = 0; c < components; ++c) {
    std::vector<double> v(D);
    for (std::size_t i = 0; i < D; ++i) v[i] = 1.0 + double(i) / double(D);
    orthogonalize(v);
    for (int it = 0; it < 10000; ++it) {
      std::vector<double> w(D, 0.0);
      for (std::size_t i = 0; i < D; ++i)
        for (std::size_t j = 0; j < D; ++j) w[i] += cov.at(i, j) * v[j];
      // Tiny residual spectrum: keep the current orthogonal direction.
      if (orthogonalize(w) <= 1e-14 * trace) break;
      double diff = 0.0;
      for (std::size_t i = 0; i < D; ++i) diff = std::max(diff, std::abs(w[i] - v[i]));
      v = std::move(w);
      if (diff < 1e-10) break;
    }
    std::size_t arg = 0;
    for (std::size_t i = 1; i < D; ++i)
      if (std::abs(v[i]) > std::abs(v[arg])) arg = i;
    if (v[arg] < 0)
      for (double& a : v) a = -a;
    double lambda = 0.0;
    for (std::size_t i = 0; i < D; ++i)
      for (std::size_t j = 0; j < D; ++j) lambda += v[i] * cov.at(i, j) * v[j];
    for (std::size_t i = 0; i < D; ++i)
      for (std::size_t j = 0; j < D; ++j) cov.at(i, j) -= lambda * v[i] * v[j];
    dirs.push_back(std::move(v));
  }
  Tensor out = Tensor::matrix(B, components);
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t c = 0; c < components; ++c) {
      double acc = 0.0;
      for (std::size_t d = 0; d < D; ++d) acc += x.at(b, d) * dirs[c][d];
      out.at(b, c) = acc;
    }
  return out;
}

std::size_t density_index(const Tensor& coords, double radius_fraction) {
  if (coords.rank() != 2 || coords.dim(0) == 0) throw Error("density_index: coords must be [B, k]");
  if (!(radius_fraction > 0.0 && radius_fraction <= 1.0))
    throw Error("density_index: radius_fraction must lie in (0, 1]");
  const std::size_t B = coords.rows();
  auto dist = [&](std::size_t a, std::size_t b) {
    double acc = 0.0;
    for (std::size_t c = 0; c < coords.cols(); ++c)
      acc += (coords.at(a, c) - coords.at(b, c)) * (coords.at(a, c) - coords.at(b, c));
    return std::sqrt(acc);
  };
  double spread = 0.0;
  for (std::size_t a = 0; a < B; ++a)
    for (std::size_t b = a + 1; b < B; ++b) spread = std::max(spread, dist(a, b));
  const double radius = radius_fraction * spread;
  std::size_t best = 0;
  for (std::size_t a = 0; a < B; ++a) {
    std::size_t count = 0;
    for (std::size_t b = 0; b < B; ++b) count += dist(a, b) <= radius;
    best = std::max(best, count);
  }
  return best;
}

double similarity_index_s(const Tensor& features) {
  if (features.rank() < 2) throw Error("similarity_index_s: features must be [B, D]");
  const Tensor k = dsg::build_kernel(
      features.reshaped({features.dim(0), features.size() / features.dim(0)}));
  double s = 0.0;
  for (double v : k.data()) s += v;
  return s;
}

double entropy_allocation(std::span<const double> p) {
  if (p.empty()) throw Error("entropy_allocation: empty allocation");
  double sum = 0.0, h = 0.0;
  for (double v : p) {
    if (!(v >= 0.0) || !std::isfinite(v))
      throw Error("entropy_allocation: probabilities must be finite and non-negative");
    sum += v;
    if (v > 0.0) h -= v * std::log(v);
  }
  if (std::abs(sum - 1.0) > 1e-9) throw Error("entropy_allocation: probabilities must sum to 1");
  return h;
}

Theorem1Result verify_theorem1(std::size_t k, double step) {
  if (k < 2) throw Error("verify_theorem1: need K >= 2");
  if (!(step > 0.0 && step <= 1.0)) throw Error("verify_theorem1: step must lie in (0, 1]");
  const double m_real = 1.0 / step;
  const auto M = std::size_t(std::llround(m_real));
  if (std::abs(m_real - double(M)) > 1e-9) throw Error("verify_theorem1: 1/step must be an integer");

  Theorem1Result r;
  r.k = k;
  r.step = step;
  const std::vector<double> uniform(k, 1.0 / double(k));
  r.uniform_entropy = entropy_allocation(uniform);
  r.max_entropy = -1.0;
  bool dominated = true;
  std::vector<std::size_t> parts(k, 0);
  std::vector<double> p(k);
  // Enumerate compositions of M into k non-negative parts.
  auto visit = [&](auto&& self, std::size_t idx, std::size_t left) -> void {
    if (idx + 1 == k) {
      parts[idx] = left;
      for (std::size_t j = 0; j < k; ++j) p[j] = double(parts[j]) / double(M);
      const double h = entropy_allocation(p);
      ++r.grid_points;
      if (h > r.uniform_entropy + 1e-12) dominated = false;
      if (h > r.max_entropy) {
        r.max_entropy = h;
        r.argmax = p;
      }
      return;
    }
    for (std::size_t v = 0; v <= left; ++v) {
      parts[idx] = v;
      self(self, idx + 1, left - v);
    }
  };
  visit(visit, 0, M);
  bool near = true;
  for (double v : r.argmax) near = near && std::abs(v - 1.0 / double(k)) <= step + 1e-12;
  r.verified = dominated && near;
  return r;
}

DiversityReport diversity_report(const Network& net, const Tensor& samples,
                                 const DiversityOptions& options) {
  DiversityReport r;
  const ForwardResult f = forward(net, samples, Mode::Eval);
  double total = 0.0;
  for (std::size_t i = 0; i < net.bn_count(); ++i) {
    const Tensor& in = f.bn_input(net, i);
    const ChannelStats target = dsg::bn_targets(net, i);
    const std::size_t B = in.dim(0), C = in.dim(1), spatial = in.size() / (B * C);
    for (std::size_t c = 0; c < C; ++c) {
      std::vector<double> vals;
      vals.reserve(B * spatial);
      for (std::size_t b = 0; b < B; ++b)
        for (std::size_t s = 0; s < spatial; ++s) vals.push_back(in[(b * C + c) * spatial + s]);
      const double w = wasserstein_1d(vals, target.mean[c],
                                      std::max(target.std[c], 1e-12), options.n_quantiles);
      r.wasserstein_per_channel.push_back(w);
      total += w;
    }
  }
  if (!r.wasserstein_per_channel.empty())
    r.wasserstein_mean = total / double(r.wasserstein_per_channel.size());
  r.stat_variance = stat_variance(per_sample_stats(net, samples));
  r.pca_coords = pca_project(samples, 2);
  r.density_index = density_index(r.pca_coords, options.radius_fraction);
  r.similarity_index_s = similarity_index_s(samples);
  return r;
}

}  // namespace dsgq::metrics
