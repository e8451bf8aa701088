#pragma once

#include <vector>

#include "dsgq/eigen.hpp"
#include "dsgq/net.hpp"

namespace dsgq::dsg {

/// Gradients of a statistics loss w.r.t. one BN layer's input statistics.
struct StatGrad {
  Tensor dmean;  // [C]
  Tensor dstd;   // [C]
};

/// A loss over per-BN-layer statistics: one term per layer plus gradients.
struct StatLoss {
  std::vector<double> per_layer;
  double total = 0.0;
  std::vector<StatGrad> grads;
};

/// Target statistics of BN layer i: running mean and sqrt(running var).
ChannelStats bn_targets(const Network& net, std::size_t i);

/// sum_i |mean_i - mu_i|^2 + |std_i - sigma_i|^2 over BN layers.
StatLoss bn_stats_loss(const ActivationTrace& trace, const Network& net);

/// Per-layer margins (delta_i for means, gamma_i for stds) and the
/// percentile that produced them.
struct RelaxationConstants {
  std::vector<double> delta;
  std::vector<double> gamma;
  double epsilon = 0.9;
};

/// Margins from a trace: epsilon nearest-rank percentile, across channels,
/// of |mean - mu| and |std - sigma| at each BN layer.
RelaxationConstants relaxation_from_trace(const ActivationTrace& trace,
                                          const Network& net, double epsilon);

/// Forwards n_probe standard-Gaussian inputs (eval mode) and takes margins
/// with relaxation_from_trace.
RelaxationConstants compute_relaxation(const Network& net, double epsilon,
                                       std::size_t n_probe, Rng& rng);

/// Hinge-relaxed statistics loss for one layer. Fills `grad` when given.
double sda_layer(const ChannelStats& stats, const ChannelStats& target,
                 double delta, double gamma, StatGrad* grad);

/// sum over layers of |max(|mean - mu| - delta, 0)|^2 +
/// |max(|std - sigma| - gamma, 0)|^2.
StatLoss sda_loss(const ActivationTrace& trace, const Network& net,
                  const RelaxationConstants& rc);

/// Turns per-layer statistics gradients into per-layer input gradients
/// suitable for backward(): entry k is non-empty for BN layers only.
std::vector<Tensor> stat_input_grads(const Network& net, const ForwardResult& fwd,
                                     const std::vector<StatGrad>& grads);

/// Enhancement matrix of the layerwise sample weighting. Row j is
/// (1/N)(1 + one_hot(assignment[j])).
struct LseAssignment {
  Tensor matrix;                       // [B, N]
  std::vector<std::size_t> assignment;  // enhanced layer per sample
  std::size_t batch() const { return assignment.size(); }
  std::size_t layers() const { return matrix.cols(); }
};

/// Sample j enhances layer j mod N.
LseAssignment lse_assign(std::size_t batch_size, std::size_t n_bn_layers);

/// sum_j sum_i X[j, i] * losses[j, i], i.e. (X l)^T 1 row by row.
double lse_sda_combine(const Tensor& per_sample_losses, const LseAssignment& lse);

/// Per-sample, per-layer statistics losses combined by the enhancement
/// matrix. Samples that enhance the same layer form a group, and a sample's
/// statistics at layer i are those of its group (over rows and spatial
/// positions). `rc == nullptr` gives plain squared BN matching.
struct LseLoss {
  Tensor per_sample;  // [B, N]
  double total = 0.0;
  std::vector<Tensor> input_grads;  // per layer, for backward()
};
LseLoss lse_loss(const Network& net, const ForwardResult& fwd,
                 const LseAssignment& lse, const RelaxationConstants* rc);

/// Rows l2-normalized to phi; K = phi phi^T ([B, B]). Zero rows are an error.
Tensor build_kernel(const Tensor& features);

/// Gradient w.r.t. features of a scalar with gradient dk w.r.t. the kernel.
Tensor build_kernel_backward(const Tensor& features, const Tensor& dk);

/// Fixed uniform [0, 1) reference vectors and their kernel spectrum.
struct NoiseSet {
  Tensor vectors;  // [B, D]
  EigenDecomposition eig;
  std::vector<double> normalized_values;  // min-max normalized eig.values
  std::uint64_t checksum = 0;
};

NoiseSet make_noise(std::size_t batch, std::size_t dim, Rng& rng);
NoiseSet make_noise(Tensor vectors);

/// Min-max normalization; all zeros when the range is below 1e-12.
std::vector<double> minmax_normalize(const std::vector<double>& v);

/// Which spectrum weights the eigenvector-alignment term.
enum class SciWeights { Noise, Features };

struct SciResult {
  double value = 0.0;  // max(inner, 0)
  double inner = 0.0;
  Tensor grad;  // d value / d features
};

/// Eigen-matching correlation loss between the feature kernel and the noise
/// kernel; eigenpairs matched by descending rank.
SciResult sci_loss(const Tensor& features, const NoiseSet& noise,
                   SciWeights weights = SciWeights::Noise);

/// Smallest eigen-gap used in eigenvector derivatives.
inline constexpr double kEigenGapFloor = 1e-8;

}  // namespace dsgq::dsg
