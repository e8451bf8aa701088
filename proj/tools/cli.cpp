#include "cli.hpp"

#include <CLI11.hpp>
#include <chrono>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>

#include "dsgq/io.hpp"

namespace dsgq::cli {

namespace fs = std::filesystem;
using io::json;

namespace {

struct Flags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<int> w_bits, a_bits;
  std::optional<double> epsilon;
  std::optional<std::size_t> iters;
  std::optional<std::string> mode;
  std::string out = "out";
  std::string model;
  std::string samples;
  std::optional<std::size_t> k;
  std::optional<double> step;
  std::vector<std::uint64_t> seeds;
};

io::ExperimentConfig resolve_config(const Flags& f) {
  io::ExperimentConfig c = f.config.empty() ? io::config_from_json(json::object())
                                            : io::load_config(f.config);
  if (f.seed) c.set_seed(*f.seed);
  if (f.w_bits) c.run.w_bits = *f.w_bits;
  if (f.a_bits) c.run.a_bits = *f.a_bits;
  if (f.epsilon) c.run.epsilon = *f.epsilon;
  if (f.iters) c.run.iterations = *f.iters;
  if (f.mode) {
    try {
      c.run.variant = variant_from_string(*f.mode);
    } catch (const Error& e) {
      throw ConfigError(std::string("--mode: ") + e.what());
    }
  }
  if (f.k) c.theorem_k = *f.k;
  if (f.step) c.theorem_step = *f.step;
  if (!f.seeds.empty()) c.ablation_seeds = f.seeds;
  c.validate();
  return c;
}

/// Shared state of one command: output directory, log, report and timings.
class Run {
 public:
  Run(std::string command, const io::ExperimentConfig& cfg, const std::string& out)
      : command_(std::move(command)), cfg_(cfg), out_(out) {
    fs::create_directories(out_);
    log_.emplace((out_ / "run.log").string(), io::log_level_from_env());
    report_["command"] = command_;
    report_["seed"] = cfg.run.seed;
    report_["config"] = io::config_to_json(cfg);
  }

  const io::ExperimentConfig& cfg() const { return cfg_; }
  json& report() { return report_; }
  io::RunLog& log() { return *log_; }

  std::string path(const std::string& name) {
    artifacts_.push_back(name);
    return (out_ / name).string();
  }

  template <class Fn>
  auto timed(const std::string& what, Fn&& fn) {
    const auto t0 = std::chrono::steady_clock::now();
    auto result = fn();
    const double s =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    timings_[what] = s;
    log_->debug(what + " took " + std::to_string(s) + " s");
    return result;
  }

  void finish() {
    io::write_json(path("timings.json"), json(timings_));
    std::sort(artifacts_.begin(), artifacts_.end());
    artifacts_.push_back("report.json");
    report_["artifacts"] = artifacts_;
    io::write_json((out_ / "report.json").string(), report_);
    log_->info("wrote " + (out_ / "report.json").string());
  }

 private:
  std::string command_;
  io::ExperimentConfig cfg_;
  fs::path out_;
  std::optional<io::RunLog> log_;
  json report_;
  std::vector<std::string> artifacts_;
  std::map<std::string, double> timings_;
};

std::string pct(double a) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f%%", 100.0 * a);
  return buf;
}

/// Loads --model, or trains a teacher on the configured dataset.
Network obtain_teacher(Run& run, const Flags& f, const DatasetSplit& data) {
  if (!f.model.empty()) {
    Network net = io::load_model(f.model);
    if (shape_size(net.validate()) != data.train.classes ||
        shape_size(net.input_shape) != data.train.x.size() / data.train.size())
      throw ConfigError("--model does not match the configured dataset");
    run.report()["model"] = "loaded";
    return net;
  }
  const auto& c = run.cfg();
  TrainResult fp = run.timed("train_fp", [&] {
    return train_fp(make_toy_net(data.train.x.cols(), data.train.classes, c.run.seed), data,
                    c.train);
  });
  io::save_model(run.path("model.json"), fp.net);
  run.report()["model"] = "trained";
  run.log().info("trained teacher: test accuracy " + pct(fp.test_accuracy));
  return std::move(fp.net);
}

json rc_to_json(const dsg::RelaxationConstants& rc) {
  return json{{"delta", rc.delta}, {"gamma", rc.gamma}, {"epsilon", rc.epsilon}};
}

void add_diversity(Run& run, const Network& net, const Tensor& samples, const std::string& key) {
  const auto d = metrics::diversity_report(net, samples, run.cfg().diversity);
  run.report()[key] = io::diversity_to_json(d);
  if (run.cfg().dump_pca) io::write_matrix_csv(run.path(key + "_pca.csv"), d.pca_coords);
  run.log().info(key + ": s = " + std::to_string(d.similarity_index_s) +
                 ", stat variance = " + std::to_string(d.stat_variance) +
                 ", mean W1 = " + std::to_string(d.wasserstein_mean) +
                 ", density index = " + std::to_string(d.density_index));
}

void cmd_train_fp(Run& run, const Flags& f) {
  const DatasetSplit data = load_dataset(run.cfg().dataset);
  if (!f.model.empty()) throw ConfigError("train-fp does not take --model");
  const auto& c = run.cfg();
  TrainResult fp = run.timed("train_fp", [&] {
    return train_fp(make_toy_net(data.train.x.cols(), data.train.classes, c.run.seed), data,
                    c.train);
  });
  io::save_model(run.path("model.json"), fp.net);
  {
    std::ofstream out(run.path("train_loss.csv"));
    out << "epoch,loss\n";
    for (std::size_t e = 0; e < fp.epoch_loss.size(); ++e)
      out << e << ',' << json(fp.epoch_loss[e]).dump() << '\n';
  }
  run.report()["fp_train_accuracy"] = fp.train_accuracy;
  run.report()["fp_test_accuracy"] = fp.test_accuracy;
  run.log().info("train accuracy " + pct(fp.train_accuracy) + ", test accuracy " +
                 pct(fp.test_accuracy));
}

void cmd_gen_data(Run& run, const Flags& f) {
  const DatasetSplit data = load_dataset(run.cfg().dataset);
  const Network net = obtain_teacher(run, f, data);
  const PtqGeneration gen =
      run.timed("generate", [&] { return dsg_ptq_generate(net, run.cfg().run); });
  io::write_matrix_csv(run.path("samples.csv"), gen.samples);
  io::write_trajectory_csv(run.path("trajectory.csv"), gen.trajectory);
  json noise = json::array();
  for (const auto& b : gen.batches) noise.push_back(std::to_string(b.noise.checksum));
  run.report()["relaxation"] = rc_to_json(gen.rc);
  run.report()["noise_checksums"] = noise;
  run.report()["trajectory"] = io::trajectory_summary(gen.trajectory);
  run.report()["num_samples"] = gen.samples.dim(0);
  add_diversity(run, net, gen.samples, "diversity");
}

void cmd_calibrate(Run& run, const Flags& f) {
  const auto& c = run.cfg();
  const DatasetSplit data = load_dataset(c.dataset);
  const Network net = obtain_teacher(run, f, data);
  std::vector<Tensor> batches;
  Tensor samples;
  if (!f.samples.empty()) {
    samples = io::read_matrix_csv(f.samples);
    if (samples.cols() != shape_size(net.input_shape))
      throw ConfigError("--samples width does not match the model input");
    for (std::size_t b = 0; b < samples.rows(); b += c.run.batch_size)
      batches.push_back(samples.slice_rows(b, std::min(samples.rows(), b + c.run.batch_size)));
    run.report()["calibration_data"] = "file";
  } else {
    const PtqGeneration gen = run.timed("generate", [&] { return dsg_ptq_generate(net, c.run); });
    for (const auto& b : gen.batches) batches.push_back(b.samples);
    samples = gen.samples;
    io::write_trajectory_csv(run.path("trajectory.csv"), gen.trajectory);
    run.report()["calibration_data"] = "generated";
    run.report()["relaxation"] = rc_to_json(gen.rc);
    run.report()["trajectory"] = io::trajectory_summary(gen.trajectory);
  }
  const QuantizedNetwork q =
      run.timed("calibrate", [&] { return calibrate_quantized(net, batches, c.run); });
  const double fp_acc = network_accuracy(net, data.test.x, data.test.y);
  const double q_acc = quantized_accuracy(q, data.test.x, data.test.y);
  run.report()["fp_accuracy"] = fp_acc;
  run.report()["quantized_accuracy"] = q_acc;
  run.report()["quantizers"] = io::quantized_to_json(q);
  run.log().info("W" + std::to_string(c.run.w_bits) + "A" + std::to_string(c.run.a_bits) +
                 " PTQ accuracy " + pct(q_acc) + " (full precision " + pct(fp_acc) + ")");
  add_diversity(run, net, samples, "diversity");
}

void cmd_qat(Run& run, const Flags& f) {
  const auto& c = run.cfg();
  const DatasetSplit data = load_dataset(c.dataset);
  const Network net = obtain_teacher(run, f, data);
  const QatResult r = run.timed("qat", [&] { return dsg_qat_train(net, data.test, c.run); });
  io::save_model(run.path("generator.json"), r.generator.body);
  io::save_model(run.path("student.json"), r.student.base);
  io::write_trajectory_csv(run.path("generator_trajectory.csv"), r.generator_trajectory);
  io::write_trajectory_csv(run.path("student_trajectory.csv"), r.student_trajectory);
  const double fp_acc = network_accuracy(net, data.test.x, data.test.y);
  run.report()["fp_accuracy"] = fp_acc;
  run.report()["initial_quantized_accuracy"] = r.initial_accuracy;
  run.report()["quantized_accuracy"] = r.accuracy;
  run.report()["quantizers"] = io::quantized_to_json(r.student);
  run.report()["generator_trajectory"] = io::trajectory_summary(r.generator_trajectory);
  run.report()["student_trajectory"] = io::trajectory_summary(r.student_trajectory);
  run.log().info("W" + std::to_string(c.run.w_bits) + "A" + std::to_string(c.run.a_bits) +
                 " QAT accuracy " + pct(r.accuracy) + " (start " + pct(r.initial_accuracy) +
                 ", full precision " + pct(fp_acc) + ")");
  if (!r.last_samples.empty()) add_diversity(run, net, r.last_samples, "diversity");
}

void cmd_ablate(Run& run, const Flags& f) {
  const auto& c = run.cfg();
  if (!f.model.empty()) throw ConfigError("ablate trains one teacher per seed; drop --model");
  if (c.dataset.kind != DatasetSpec::Kind::Blobs)
    throw ConfigError("ablate needs a blob dataset (one per seed)");
  AblationOptions opt;
  opt.seeds = c.ablation_seeds;
  opt.run_ptq = c.ablation_ptq;
  opt.run_qat = c.ablation_qat;
  opt.data = c.dataset.blobs;
  opt.train = c.train;
  opt.diversity = c.diversity;
  const AblationResult res = run.timed("ablate", [&] { return ablation_run(c.run, opt); });
  json runs = json::array();
  for (const auto& r : res.runs) {
    json o{{"variant", to_string(r.variant)}, {"seed", r.seed}, {"fp_accuracy", r.fp_accuracy}};
    if (opt.run_ptq) {
      o["ptq_accuracy"] = r.ptq_accuracy;
      o["diversity"] = io::diversity_to_json(r.diversity);
    }
    if (opt.run_qat) o["qat_accuracy"] = r.qat_accuracy;
    runs.push_back(std::move(o));
  }
  json table = json::array();
  for (const auto& row : res.table) {
    json o{{"variant", to_string(row.variant)}};
    if (opt.run_ptq) o["ptq"] = {{"mean", row.ptq_mean}, {"std", row.ptq_std}};
    if (opt.run_qat) o["qat"] = {{"mean", row.qat_mean}, {"std", row.qat_std}};
    table.push_back(std::move(o));
    char line[160];
    std::snprintf(line, sizeof line, "%-4s  PTQ %6.2f +- %5.2f   QAT %6.2f +- %5.2f",
                  to_string(row.variant), 100 * row.ptq_mean, 100 * row.ptq_std,
                  100 * row.qat_mean, 100 * row.qat_std);
    run.log().info(line);
  }
  run.report()["runs"] = runs;
  run.report()["table"] = table;
}

void cmd_metrics(Run& run, const Flags& f) {
  const DatasetSplit data = load_dataset(run.cfg().dataset);
  const Network net = obtain_teacher(run, f, data);
  Tensor samples;
  if (f.samples.empty()) {
    samples = data.train.x;
    run.report()["source"] = "dataset";
  } else {
    samples = io::read_matrix_csv(f.samples);
    if (samples.cols() != shape_size(net.input_shape))
      throw ConfigError("--samples width does not match the model input");
    run.report()["source"] = "file";
  }
  add_diversity(run, net, samples, "diversity");
}

void cmd_verify_theorem(Run& run, const Flags&) {
  const auto& c = run.cfg();
  const auto r = metrics::verify_theorem1(c.theorem_k, c.theorem_step);
  run.report()["theorem1_verified"] = r.verified;
  run.report()["k"] = r.k;
  run.report()["step"] = r.step;
  run.report()["grid_points"] = r.grid_points;
  run.report()["argmax"] = r.argmax;
  run.report()["max_entropy"] = r.max_entropy;
  run.report()["uniform_entropy"] = r.uniform_entropy;
  run.log().info("K = " + std::to_string(r.k) + ": " + std::to_string(r.grid_points) +
                 " grid points, uniform allocation " +
                 (r.verified ? "maximizes entropy" : "is NOT the maximizer"));
  if (!r.verified) throw Error("Theorem 1 check failed");
}

}  // namespace

int cli_main(int argc, const char* const* argv) {
  CLI::App app{"Data-free quantization workbench"};
  app.require_subcommand(1);
  Flags f;
  using Handler = void (*)(Run&, const Flags&);
  const std::vector<std::tuple<std::string, std::string, Handler>> commands{
      {"train-fp", "train a full-precision teacher", cmd_train_fp},
      {"gen-data", "synthesize PTQ calibration samples", cmd_gen_data},
      {"calibrate", "post-training quantization on synthetic samples", cmd_calibrate},
      {"qat", "generator-driven quantization-aware training", cmd_qat},
      {"ablate", "loss ablation over seeds for PTQ and QAT", cmd_ablate},
      {"metrics", "diversity diagnostics of a sample set", cmd_metrics},
      {"verify-theorem", "brute-force entropy check on the simplex grid", cmd_verify_theorem},
  };
  std::string chosen;
  Handler handler = nullptr;
  for (const auto& [name, desc, fn] : commands) {
    CLI::App* sub = app.add_subcommand(name, desc);
    sub->add_option("--config", f.config, "experiment config JSON");
    sub->add_option("--seed", f.seed, "run seed");
    sub->add_option("--w-bits", f.w_bits, "weight bit-width");
    sub->add_option("--a-bits", f.a_bits, "activation bit-width");
    sub->add_option("--epsilon", f.epsilon, "relaxation percentile");
    sub->add_option("--iters", f.iters, "PTQ sample-optimization iterations");
    sub->add_option("--mode", f.mode, "loss variant: bn, sda, lse, sci or dsg");
    sub->add_option("--out", f.out, "output directory")->capture_default_str();
    sub->add_option("--model", f.model, "teacher model JSON (default: train one)");
    sub->add_option("--samples", f.samples, "headerless CSV of samples");
    sub->add_option("--k", f.k, "number of sub-regions for verify-theorem");
    sub->add_option("--step", f.step, "simplex grid step for verify-theorem");
    sub->add_option("--seeds", f.seeds, "seed list for ablate")->delimiter(',');
    sub->callback([&chosen, &handler, name = name, fn = fn] {
      chosen = name;
      handler = fn;
    });
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }
  try {
    const io::ExperimentConfig cfg = resolve_config(f);
    Run run(chosen, cfg, f.out);
    handler(run, f);
    run.finish();
    return 0;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
}

}  // namespace dsgq::cli
