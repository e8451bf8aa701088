#pragma once

#include <fstream>
#include <json.hpp>
#include <string>
#include <vector>

#include "dsgq/pipelines.hpp"

namespace dsgq::io {

using nlohmann::json;

inline constexpr int kModelFormatVersion = 1;

json model_to_json(const Network& net);
/// Errors name the offending field path, e.g. "layers[1].running_var[3]".
Network model_from_json(const json& j);

void save_model(const std::string& path, const Network& net);
/// Parse errors name the byte offset of the failure.
Network load_model(const std::string& path);

json qparams_to_json(const quant::QuantParams& qp);
json quantized_to_json(const QuantizedNetwork& q);

/// Every knob of every command. Loading fills in all defaults, so a
/// loaded-then-saved config is fully explicit.
struct ExperimentConfig {
  RunConfig run;
  DatasetSpec dataset;
  TrainHyper train;
  metrics::DiversityOptions diversity;
  bool dump_pca = true;
  std::vector<std::uint64_t> ablation_seeds{0, 1, 2, 3, 4};
  bool ablation_ptq = true;
  bool ablation_qat = true;
  std::size_t theorem_k = 3;
  double theorem_step = 0.05;

  /// Keeps the run, dataset and training seeds in step.
  void set_seed(std::uint64_t seed);
  void validate() const;
};

json config_to_json(const ExperimentConfig& cfg);
/// Unknown keys and type mismatches throw ConfigError with the field path.
ExperimentConfig config_from_json(const json& j);
ExperimentConfig load_config(const std::string& path);

json diversity_to_json(const metrics::DiversityReport& d);
json trajectory_summary(const std::vector<LossRecord>& t);

void write_json(const std::string& path, const json& j);
json read_json(const std::string& path);

void write_trajectory_csv(const std::string& path, const std::vector<LossRecord>& t);
/// One row per sample: the flattened values, no label column.
void write_matrix_csv(const std::string& path, const Tensor& m);
/// Reads a headerless numeric CSV into [rows, cols].
Tensor read_matrix_csv(const std::string& path);

enum class LogLevel { Info, Debug };

/// Reads DSGQ_LOG ("info" or "debug"; unset means info).
LogLevel log_level_from_env();

/// Mirrors every stdout line into a log file.
class RunLog {
 public:
  RunLog(const std::string& path, LogLevel level);
  void info(const std::string& line);
  void debug(const std::string& line);

 private:
  std::ofstream file_;
  LogLevel level_;
};

}  // namespace dsgq::io
