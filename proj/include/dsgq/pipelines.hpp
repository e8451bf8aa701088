#pragma once

#include <optional>
#include <string>
#include <vector>

#include "dsgq/data.hpp"
#include "dsgq/dsg_losses.hpp"
#include "dsgq/generator.hpp"
#include "dsgq/metrics.hpp"
#include "dsgq/qnet.hpp"

namespace dsgq {

/// Loss configurations of the ablation: plain BN matching and each DSG
/// technique alone or all together.
enum class Variant { Bn, Sda, Lse, Sci, Dsg };

const char* to_string(Variant v);
Variant variant_from_string(const std::string& s);
inline constexpr Variant kAllVariants[] = {Variant::Bn, Variant::Sda, Variant::Lse,
                                           Variant::Sci, Variant::Dsg};

struct LossFlags {
  bool sda = false;
  bool lse = false;
  bool sci = false;
};
LossFlags flags_for(Variant v);

struct RunConfig {
  int w_bits = 4;
  int a_bits = 4;
  double epsilon = 0.9;
  std::size_t n_probe = 1024;
  std::uint64_t seed = 0;
  Variant variant = Variant::Dsg;
  quant::CalibrationOptions calibration;

  // PTQ sample optimization.
  std::size_t iterations = 500;
  std::size_t batch_size = 32;
  std::size_t num_samples = 256;
  double sample_lr = 0.1;
  double sci_weight = 1.0;

  // QAT.
  std::size_t qat_epochs = 10;
  std::size_t qat_iters = 50;
  std::size_t latent_dim = 16;
  std::vector<std::size_t> generator_hidden{64, 64};
  double generator_lr = 1e-3;
  std::string student_optimizer = "adam";  // "adam" or "sgd"
  double student_lr = 1e-4;
  double kd_beta = 1.0;
  double kd_temperature = 1.0;

  LossFlags flags() const { return flags_for(variant); }
  void validate() const;
};

/// One logged optimization step. PTQ uses `chunk` for the synthetic batch
/// index; QAT uses it for the epoch. Unused terms stay 0.
struct LossRecord {
  std::size_t chunk = 0;
  std::size_t step = 0;
  double stat = 0.0;
  double sci = 0.0;
  double ce = 0.0;
  double kd = 0.0;
  double total = 0.0;
};

struct TrainHyper {
  std::size_t epochs = 30;
  std::size_t batch_size = 64;
  double lr = 0.05;
  std::uint64_t seed = 0;
};

struct TrainResult {
  Network net;
  double train_accuracy = 0.0;
  double test_accuracy = 0.0;
  std::vector<double> epoch_loss;
};

/// Minibatch SGD with momentum on cross-entropy; BN running statistics are
/// folded in from every training batch.
TrainResult train_fp(Network net, const DatasetSplit& data, const TrainHyper& hyper);

/// The toy classifier dense(in->32)+BN+ReLU+dense(32->32)+BN+ReLU+dense(32->C).
Network make_toy_net(std::size_t in, std::size_t classes, std::uint64_t seed);

struct SynthBatch {
  Tensor samples;
  std::optional<std::vector<int>> labels;  // QAT only
  dsg::LseAssignment lse;
  dsg::NoiseSet noise;
  std::size_t iterations = 0;
};

struct PtqGeneration {
  std::vector<SynthBatch> batches;
  Tensor samples;  // all batches stacked
  dsg::RelaxationConstants rc;
  std::vector<LossRecord> trajectory;
};

/// Combined statistics loss (plain, SDA, LSE-weighted) and its per-layer
/// input gradients for one forward of the frozen network.
struct StatTerm {
  double value = 0.0;
  std::vector<Tensor> input_grads;
};
StatTerm statistics_term(const Network& net, const ForwardResult& fwd, LossFlags flags,
                         const dsg::RelaxationConstants& rc, const dsg::LseAssignment& lse);

/// Optimizes num_samples Gaussian inputs in batches of batch_size against
/// the frozen network. The relaxation constants are computed once up front.
PtqGeneration dsg_ptq_generate(const Network& net, const RunConfig& cfg);

/// Weight min-max plus activation calibration on the given samples, one
/// calibration batch per synthetic batch.
QuantizedNetwork calibrate_quantized(const Network& net, const std::vector<Tensor>& batches,
                                     const RunConfig& cfg);
QuantizedNetwork calibrate_quantized(const Network& net, const PtqGeneration& gen,
                                     const RunConfig& cfg);

struct QatResult {
  GeneratorNet generator;
  QuantizedNetwork student;
  double initial_accuracy = 0.0;  // student before any update
  double accuracy = 0.0;
  std::vector<LossRecord> generator_trajectory;
  std::vector<LossRecord> student_trajectory;
  Tensor last_samples;
};

/// Alternating generator / quantized-student training against the frozen
/// teacher. Accuracies are measured on `test`.
QatResult dsg_qat_train(const Network& teacher, const Dataset& test, const RunConfig& cfg);

struct VariantResult {
  Variant variant = Variant::Dsg;
  std::uint64_t seed = 0;
  double fp_accuracy = 0.0;
  double ptq_accuracy = 0.0;
  double qat_accuracy = 0.0;
  metrics::DiversityReport diversity;  // of the PTQ samples
};

struct AblationRow {
  Variant variant = Variant::Dsg;
  double ptq_mean = 0.0, ptq_std = 0.0;
  double qat_mean = 0.0, qat_std = 0.0;
};

struct AblationResult {
  std::vector<VariantResult> runs;  // seed-major, variant-minor
  std::vector<AblationRow> table;
};

struct AblationOptions {
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
  std::vector<Variant> variants{std::begin(kAllVariants), std::end(kAllVariants)};
  bool run_ptq = true;
  bool run_qat = true;
  BlobSpec data;
  TrainHyper train;
  metrics::DiversityOptions diversity;
};

/// For each seed: trains a teacher on seed-specific blobs, then runs every
/// variant through PTQ and QAT with that seed.
AblationResult ablation_run(const RunConfig& base, const AblationOptions& options);

}  // namespace dsgq
