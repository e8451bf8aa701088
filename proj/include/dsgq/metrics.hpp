#pragma once

#include <span>
#include <vector>

#include "dsgq/net.hpp"

namespace dsgq::metrics {

/// W1 between the empirical distribution of `samples` and N(mu, sigma^2):
/// mean |empirical quantile - Gaussian quantile| over probabilities
/// (k + 0.5) / n_quantiles, k = 0..n_quantiles-1.
double wasserstein_1d(std::span<const double> samples, double mu, double sigma,
                      std::size_t n_quantiles = 1024);

/// Standard normal quantile.
double normal_quantile(double p);

/// Mean over columns of the population variance across rows ([B, M], B >= 2).
double stat_variance(const Tensor& per_sample_stats);

/// Per-sample statistics of every BN input under an eval forward. For a
/// [B, C] input each sample contributes (mean, std) over its C channels; for
/// [B, C, H, W] it contributes (mean, std) over H x W for each channel.
Tensor per_sample_stats(const Network& net, const Tensor& batch);

/// Top-k principal-component projections of centered rows, by power
/// iteration with deflation from a fixed start vector.
Tensor pca_project(const Tensor& features, std::size_t components = 2);

/// Largest number of points (inclusive) within radius_fraction times the
/// largest pairwise distance of any point.
std::size_t density_index(const Tensor& coords, double radius_fraction = 0.1);

/// Sum of all entries of the normalized Gram kernel of the rows.
double similarity_index_s(const Tensor& features);

/// -sum p ln p with 0 ln 0 = 0. p must be a probability vector (1e-9).
double entropy_allocation(std::span<const double> p);

struct Theorem1Result {
  bool verified = false;
  std::size_t k = 0;
  double step = 0.0;
  std::size_t grid_points = 0;
  std::vector<double> argmax;  // best grid allocation
  double max_entropy = 0.0;
  double uniform_entropy = 0.0;
};

/// Enumerates the simplex grid with spacing `step` (1/step must be an
/// integer) and checks that no allocation beats the uniform one and that the
/// best grid point lies within one step of uniform in every coordinate.
Theorem1Result verify_theorem1(std::size_t k, double step = 0.05);

struct DiversityOptions {
  std::size_t n_quantiles = 1024;
  double radius_fraction = 0.1;
};

struct DiversityReport {
  std::vector<double> wasserstein_per_channel;  // BN layers in order, channels within
  double wasserstein_mean = 0.0;
  double stat_variance = 0.0;
  std::size_t density_index = 0;
  double similarity_index_s = 0.0;
  Tensor pca_coords;  // [B, 2]
};

/// Diagnostics of a sample batch against the network's BN statistics.
DiversityReport diversity_report(const Network& net, const Tensor& samples,
                                 const DiversityOptions& options = {});

}  // namespace dsgq::metrics
