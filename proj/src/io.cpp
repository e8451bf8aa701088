#include "dsgq/io.hpp"

#include <charconv>
#include <cmath>
#include <cstdlib>
#include <iostream>
#include <set>
#include <sstream>

namespace dsgq::io {

namespace {

std::string idx(const std::string& path, std::size_t i) {
  return path + "[" + std::to_string(i) + "]";
}
std::string field(const std::string& path, const std::string& key) {
  return path.empty() ? key : path + "." + key;
}

const json& require(const json& j, const std::string& key, const std::string& path) {
  if (!j.is_object()) throw Error(path + ": expected an object");
  auto it = j.find(key);
  if (it == j.end()) throw Error(field(path, key) + ": missing");
  return *it;
}

std::size_t as_size(const json& j, const std::string& path) {
  if (!j.is_number_unsigned() && !(j.is_number_integer() && j.get<long long>() >= 0))
    throw Error(path + ": expected a non-negative integer");
  return j.get<std::size_t>();
}

Tensor as_tensor(const json& j, Shape shape, const std::string& path) {
  if (!j.is_array()) throw Error(path + ": expected an array");
  if (j.size() != shape_size(shape))
    throw Error(path + ": expected " + std::to_string(shape_size(shape)) + " values, got " +
                std::to_string(j.size()));
  std::vector<double> v(j.size());
  for (std::size_t i = 0; i < j.size(); ++i) {
    if (!j[i].is_number()) throw Error(idx(path, i) + ": expected a number");
    v[i] = j[i].get<double>();
    if (!std::isfinite(v[i])) throw Error(idx(path, i) + ": not finite");
  }
  return Tensor(std::move(shape), std::move(v));
}

json as_json(const Tensor& t) { return json(t.data()); }

}  // namespace

json model_to_json(const Network& net) {
  json layers = json::array();
  for (const Layer& l : net.layers) {
    json o;
    o["kind"] = to_string(l.kind);
    switch (l.kind) {
      case LayerKind::Dense:
        o["in"] = l.weight.dim(1);
        o["out"] = l.weight.dim(0);
        o["weight"] = as_json(l.weight);
        o["bias"] = as_json(l.bias);
        break;
      case LayerKind::Conv2d:
        o["in"] = l.weight.dim(1);
        o["out"] = l.weight.dim(0);
        o["kernel"] = l.weight.dim(2);
        o["weight"] = as_json(l.weight);
        o["bias"] = as_json(l.bias);
        break;
      case LayerKind::BatchNorm:
        o["channels"] = l.gamma.size();
        o["eps"] = l.eps;
        o["momentum"] = l.momentum;
        o["gamma"] = as_json(l.gamma);
        o["beta"] = as_json(l.beta);
        o["running_mean"] = as_json(l.running_mean);
        o["running_var"] = as_json(l.running_var);
        break;
      default:
        break;
    }
    layers.push_back(std::move(o));
  }
  return json{{"format_version", kModelFormatVersion},
              {"input_shape", net.input_shape},
              {"layers", std::move(layers)}};
}

Network model_from_json(const json& j) {
  const json& ver = require(j, "format_version", "");
  if (!ver.is_number_integer() || ver.get<long long>() != kModelFormatVersion)
    throw Error("format_version: unsupported version " + ver.dump() + " (expected " +
                std::to_string(kModelFormatVersion) + ")");
  Network net;
  const json& shape = require(j, "input_shape", "");
  if (!shape.is_array() || shape.empty()) throw Error("input_shape: expected a non-empty array");
  for (std::size_t i = 0; i < shape.size(); ++i) {
    const std::size_t d = as_size(shape[i], idx("input_shape", i));
    if (d == 0) throw Error(idx("input_shape", i) + ": must be positive");
    net.input_shape.push_back(d);
  }
  const json& layers = require(j, "layers", "");
  if (!layers.is_array()) throw Error("layers: expected an array");
  for (std::size_t k = 0; k < layers.size(); ++k) {
    const std::string p = idx("layers", k);
    const json& o = layers[k];
    const json& kind_j = require(o, "kind", p);
    if (!kind_j.is_string()) throw Error(p + ".kind: expected a string");
    LayerKind kind;
    try {
      kind = layer_kind_from_string(kind_j.get<std::string>());
    } catch (const Error& e) {
      throw Error(p + ".kind: " + e.what());
    }
    Layer l;
    switch (kind) {
      case LayerKind::Dense: {
        const std::size_t in = as_size(require(o, "in", p), p + ".in");
        const std::size_t out = as_size(require(o, "out", p), p + ".out");
        l = Layer::dense(in, out);
        l.weight = as_tensor(require(o, "weight", p), {out, in}, p + ".weight");
        l.bias = as_tensor(require(o, "bias", p), {out}, p + ".bias");
        break;
      }
      case LayerKind::Conv2d: {
        const std::size_t in = as_size(require(o, "in", p), p + ".in");
        const std::size_t out = as_size(require(o, "out", p), p + ".out");
        const std::size_t ks = as_size(require(o, "kernel", p), p + ".kernel");
        if (ks % 2 == 0) throw Error(p + ".kernel: must be odd");
        l = Layer::conv2d(in, out, ks);
        l.weight = as_tensor(require(o, "weight", p), {out, in, ks, ks}, p + ".weight");
        l.bias = as_tensor(require(o, "bias", p), {out}, p + ".bias");
        break;
      }
      case LayerKind::BatchNorm: {
        const std::size_t c = as_size(require(o, "channels", p), p + ".channels");
        l = Layer::batchnorm(c);
        const json& eps = require(o, "eps", p);
        if (!eps.is_number() || !(eps.get<double>() > 0.0)) throw Error(p + ".eps: must be positive");
        l.eps = eps.get<double>();
        const json& mom = require(o, "momentum", p);
        if (!mom.is_number()) throw Error(p + ".momentum: expected a number");
        l.momentum = mom.get<double>();
        l.gamma = as_tensor(require(o, "gamma", p), {c}, p + ".gamma");
        l.beta = as_tensor(require(o, "beta", p), {c}, p + ".beta");
        l.running_mean = as_tensor(require(o, "running_mean", p), {c}, p + ".running_mean");
        l.running_var = as_tensor(require(o, "running_var", p), {c}, p + ".running_var");
        for (std::size_t i = 0; i < c; ++i)
          if (l.running_var[i] < 0.0)
            throw Error(idx(p + ".running_var", i) + ": must be non-negative");
        break;
      }
      case LayerKind::Relu:
        l = Layer::relu();
        break;
      case LayerKind::GlobalAvgPool:
        l = Layer::global_avg_pool();
        break;
    }
    net.layers.push_back(std::move(l));
  }
  try {
    net.validate();
  } catch (const Error& e) {
    throw Error(std::string("layers: ") + e.what());
  }
  return net;
}

void write_json(const std::string& path, const json& j) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write '" + path + "'");
  out << j.dump(2) << '\n';
  if (!out) throw Error("write failed for '" + path + "'");
}

json read_json(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  try {
    return json::parse(ss.str());
  } catch (const json::parse_error& e) {
    throw Error(path + ": parse error at offset " + std::to_string(e.byte) + ": " + e.what());
  }
}

void save_model(const std::string& path, const Network& net) {
  write_json(path, model_to_json(net));
}

Network load_model(const std::string& path) {
  const json j = read_json(path);
  try {
    return model_from_json(j);
  } catch (const Error& e) {
    throw Error(path + ": " + e.what());
  }
}

json qparams_to_json(const quant::QuantParams& qp) {
  return json{{"bits", qp.bits},
              {"clip_min", qp.clip_min},
              {"clip_max", qp.clip_max},
              {"scale", qp.scale},
              {"zero_point", qp.zero_point}};
}

json quantized_to_json(const QuantizedNetwork& q) {
  json sites = json::array();
  for (std::size_t k : quant_sites(q.base))
    sites.push_back(json{{"layer", k},
                         {"weight", qparams_to_json(*q.weight_qparams[k])},
                         {"activation", qparams_to_json(*q.act_qparams[k])}});
  return json{{"w_bits", q.w_bits}, {"a_bits", q.a_bits}, {"sites", std::move(sites)}};
}

// ---------------------------------------------------------------- config

void ExperimentConfig::set_seed(std::uint64_t seed) {
  run.seed = seed;
  dataset.blobs.seed = seed;
  train.seed = seed;
}

void ExperimentConfig::validate() const {
  run.validate();
  auto fail = [](const std::string& m) { throw ConfigError("config: " + m); };
  if (dataset.kind == DatasetSpec::Kind::Blobs) {
    const BlobSpec& b = dataset.blobs;
    if (b.classes < 2) fail("dataset.classes must be at least 2");
    if (b.dim == 0 || b.per_class == 0 || b.test_per_class == 0)
      fail("dataset dim and per-class counts must be positive");
    if (!(b.spread > 0.0) || !(b.center_scale > 0.0))
      fail("dataset spread and center_scale must be positive");
  } else if (dataset.csv_train.empty()) {
    fail("dataset.train must name a CSV file");
  }
  if (train.batch_size < 2) fail("train.batch_size must be at least 2");
  if (!(train.lr >= 0.0)) fail("train.lr must be non-negative");
  if (diversity.n_quantiles == 0) fail("metrics.n_quantiles must be positive");
  if (!(diversity.radius_fraction > 0.0 && diversity.radius_fraction <= 1.0))
    fail("metrics.radius_fraction must lie in (0, 1]");
  if (ablation_seeds.empty()) fail("ablation.seeds must not be empty");
  if (theorem_k < 2) fail("theorem.k must be at least 2");
  if (!(theorem_step > 0.0 && theorem_step <= 1.0)) fail("theorem.step must lie in (0, 1]");
}

json config_to_json(const ExperimentConfig& c) {
  const RunConfig& r = c.run;
  json dataset;
  if (c.dataset.kind == DatasetSpec::Kind::Blobs) {
    const BlobSpec& b = c.dataset.blobs;
    dataset = {{"kind", "blobs"},          {"classes", b.classes},
               {"dim", b.dim},             {"per_class", b.per_class},
               {"test_per_class", b.test_per_class}, {"spread", b.spread},
               {"center_scale", b.center_scale}};
  } else {
    dataset = {{"kind", "csv"}, {"train", c.dataset.csv_train}, {"test", c.dataset.csv_test}};
  }
  return json{
      {"seed", r.seed},
      {"w_bits", r.w_bits},
      {"a_bits", r.a_bits},
      {"epsilon", r.epsilon},
      {"n_probe", r.n_probe},
      {"mode", to_string(r.variant)},
      {"calibration",
       {{"method", quant::to_string(r.calibration.method)},
        {"percentile", r.calibration.percentile},
        {"ema_momentum", r.calibration.ema_momentum},
        {"mse_candidates", r.calibration.mse_candidates},
        {"symmetric", r.calibration.symmetric}}},
      {"ptq",
       {{"iterations", r.iterations},
        {"batch_size", r.batch_size},
        {"num_samples", r.num_samples},
        {"sample_lr", r.sample_lr},
        {"sci_weight", r.sci_weight}}},
      {"qat",
       {{"epochs", r.qat_epochs},
        {"iters_per_epoch", r.qat_iters},
        {"latent_dim", r.latent_dim},
        {"generator_hidden", r.generator_hidden},
        {"generator_lr", r.generator_lr},
        {"student_optimizer", r.student_optimizer},
        {"student_lr", r.student_lr},
        {"kd_beta", r.kd_beta},
        {"kd_temperature", r.kd_temperature}}},
      {"dataset", dataset},
      {"train",
       {{"epochs", c.train.epochs}, {"batch_size", c.train.batch_size}, {"lr", c.train.lr}}},
      {"metrics",
       {{"n_quantiles", c.diversity.n_quantiles},
        {"radius_fraction", c.diversity.radius_fraction},
        {"dump_pca", c.dump_pca}}},
      {"ablation", {{"seeds", c.ablation_seeds}, {"ptq", c.ablation_ptq}, {"qat", c.ablation_qat}}},
      {"theorem", {{"k", c.theorem_k}, {"step", c.theorem_step}}},
  };
}

namespace {

/// Reads an object against the key set of its defaults, rejecting unknown
/// keys and type mismatches.
class Reader {
 public:
  Reader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(where() + "expected an object");
  }

  template <class T>
  void get(const std::string& key, T& out) {
    seen_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) return;
    const std::string p = field(path_, key);
    try {
      if constexpr (std::is_same_v<T, bool>) {
        if (!it->is_boolean()) throw ConfigError(p + ": expected true or false");
      } else if constexpr (std::is_integral_v<T>) {
        if (!it->is_number_integer()) throw ConfigError(p + ": expected an integer");
        if constexpr (std::is_unsigned_v<T>)
          if (it->get<long long>() < 0) throw ConfigError(p + ": must be non-negative");
      } else if constexpr (std::is_floating_point_v<T>) {
        if (!it->is_number()) throw ConfigError(p + ": expected a number");
      } else if constexpr (std::is_same_v<T, std::string>) {
        if (!it->is_string()) throw ConfigError(p + ": expected a string");
      }
      out = it->get<T>();
    } catch (const json::exception&) {
      throw ConfigError(p + ": wrong type");
    }
  }

  template <class T>
  void get_list(const std::string& key, std::vector<T>& out) {
    seen_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) return;
    const std::string p = field(path_, key);
    if (!it->is_array()) throw ConfigError(p + ": expected an array");
    std::vector<T> v;
    for (std::size_t i = 0; i < it->size(); ++i) {
      const json& e = (*it)[i];
      if (!e.is_number_integer() || e.get<long long>() < 0)
        throw ConfigError(idx(p, i) + ": expected a non-negative integer");
      v.push_back(e.get<T>());
    }
    out = std::move(v);
  }

  /// Nested object, or an empty object when absent.
  json sub(const std::string& key) {
    seen_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? json::object() : *it;
  }

  std::string sub_path(const std::string& key) const { return field(path_, key); }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!seen_.count(it.key()))
        throw ConfigError(field(path_, it.key()) + ": unknown key");
  }

 private:
  std::string where() const { return path_.empty() ? "config: " : path_ + ": "; }
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

}  // namespace

ExperimentConfig config_from_json(const json& j) {
  ExperimentConfig c;
  RunConfig& r = c.run;
  Reader top(j, "");
  std::uint64_t seed = 0;
  top.get("seed", seed);
  top.get("w_bits", r.w_bits);
  top.get("a_bits", r.a_bits);
  top.get("epsilon", r.epsilon);
  top.get("n_probe", r.n_probe);
  std::string mode = to_string(r.variant);
  top.get("mode", mode);
  try {
    r.variant = variant_from_string(mode);
  } catch (const Error& e) {
    throw ConfigError(std::string("mode: ") + e.what());
  }
  {
    const json sub = top.sub("calibration");
    Reader cal(sub, "calibration");
    std::string method = quant::to_string(r.calibration.method);
    cal.get("method", method);
    try {
      r.calibration.method = quant::calibration_from_string(method);
    } catch (const Error& e) {
      throw ConfigError(std::string("calibration.method: ") + e.what());
    }
    cal.get("percentile", r.calibration.percentile);
    cal.get("ema_momentum", r.calibration.ema_momentum);
    cal.get("mse_candidates", r.calibration.mse_candidates);
    cal.get("symmetric", r.calibration.symmetric);
    cal.finish();
  }
  {
    const json sub = top.sub("ptq");
    Reader p(sub, "ptq");
    p.get("iterations", r.iterations);
    p.get("batch_size", r.batch_size);
    p.get("num_samples", r.num_samples);
    p.get("sample_lr", r.sample_lr);
    p.get("sci_weight", r.sci_weight);
    p.finish();
  }
  {
    const json sub = top.sub("qat");
    Reader q(sub, "qat");
    q.get("epochs", r.qat_epochs);
    q.get("iters_per_epoch", r.qat_iters);
    q.get("latent_dim", r.latent_dim);
    q.get_list("generator_hidden", r.generator_hidden);
    q.get("generator_lr", r.generator_lr);
    q.get("student_optimizer", r.student_optimizer);
    q.get("student_lr", r.student_lr);
    q.get("kd_beta", r.kd_beta);
    q.get("kd_temperature", r.kd_temperature);
    q.finish();
  }
  {
    const json sub = top.sub("dataset");
    Reader d(sub, "dataset");
    std::string kind = "blobs";
    d.get("kind", kind);
    if (kind == "blobs") {
      BlobSpec& b = c.dataset.blobs;
      d.get("classes", b.classes);
      d.get("dim", b.dim);
      d.get("per_class", b.per_class);
      d.get("test_per_class", b.test_per_class);
      d.get("spread", b.spread);
      d.get("center_scale", b.center_scale);
    } else if (kind == "csv") {
      c.dataset.kind = DatasetSpec::Kind::Csv;
      d.get("train", c.dataset.csv_train);
      d.get("test", c.dataset.csv_test);
    } else {
      throw ConfigError("dataset.kind: expected 'blobs' or 'csv'");
    }
    d.finish();
  }
  {
    const json sub = top.sub("train");
    Reader t(sub, "train");
    t.get("epochs", c.train.epochs);
    t.get("batch_size", c.train.batch_size);
    t.get("lr", c.train.lr);
    t.finish();
  }
  {
    const json sub = top.sub("metrics");
    Reader m(sub, "metrics");
    m.get("n_quantiles", c.diversity.n_quantiles);
    m.get("radius_fraction", c.diversity.radius_fraction);
    m.get("dump_pca", c.dump_pca);
    m.finish();
  }
  {
    const json sub = top.sub("ablation");
    Reader a(sub, "ablation");
    a.get_list("seeds", c.ablation_seeds);
    a.get("ptq", c.ablation_ptq);
    a.get("qat", c.ablation_qat);
    a.finish();
  }
  {
    const json sub = top.sub("theorem");
    Reader t(sub, "theorem");
    t.get("k", c.theorem_k);
    t.get("step", c.theorem_step);
    t.finish();
  }
  top.finish();
  c.set_seed(seed);
  c.validate();
  return c;
}

ExperimentConfig load_config(const std::string& path) {
  json j;
  try {
    j = read_json(path);
  } catch (const Error& e) {
    throw ConfigError(e.what());
  }
  try {
    return config_from_json(j);
  } catch (const ConfigError& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

// ---------------------------------------------------------------- reports

json diversity_to_json(const metrics::DiversityReport& d) {
  return json{{"wasserstein_per_channel", d.wasserstein_per_channel},
              {"wasserstein_mean", d.wasserstein_mean},
              {"stat_variance", d.stat_variance},
              {"density_index", d.density_index},
              {"similarity_index_s", d.similarity_index_s}};
}

json trajectory_summary(const std::vector<LossRecord>& t) {
  if (t.empty()) return json::object();
  return json{{"records", t.size()}, {"first_total", t.front().total}, {"last_total", t.back().total}};
}

namespace {

std::string fmt(double v) {
  char buf[32];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

}  // namespace

void write_trajectory_csv(const std::string& path, const std::vector<LossRecord>& t) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write '" + path + "'");
  out << "chunk,step,stat,sci,ce,kd,total\n";
  for (const auto& r : t)
    out << r.chunk << ',' << r.step << ',' << fmt(r.stat) << ',' << fmt(r.sci) << ','
        << fmt(r.ce) << ',' << fmt(r.kd) << ',' << fmt(r.total) << '\n';
}

void write_matrix_csv(const std::string& path, const Tensor& m) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write '" + path + "'");
  const Tensor flat = m.reshaped({m.dim(0), m.size() / m.dim(0)});
  for (std::size_t i = 0; i < flat.rows(); ++i) {
    for (std::size_t c = 0; c < flat.cols(); ++c) out << (c ? "," : "") << fmt(flat.at(i, c));
    out << '\n';
  }
}

Tensor read_matrix_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open '" + path + "'");
  std::vector<double> vals;
  std::size_t cols = 0, rows = 0, line_no = 0;
  std::string line;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    std::size_t n = 0;
    while (std::getline(ss, cell, ',')) {
      double v = 0.0;
      const auto [end, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
      if (cell.empty() || ec != std::errc() || end != cell.data() + cell.size() || !std::isfinite(v))
        throw Error(path + ": row " + std::to_string(line_no) + ", column " +
                    std::to_string(n + 1) + ": not a finite number: '" + cell + "'");
      vals.push_back(v);
      ++n;
    }
    if (cols == 0) cols = n;
    if (n != cols)
      throw Error(path + ": row " + std::to_string(line_no) + ": expected " +
                  std::to_string(cols) + " columns, got " + std::to_string(n));
    ++rows;
  }
  if (rows == 0) throw Error(path + ": no rows");
  return Tensor({rows, cols}, std::move(vals));
}

LogLevel log_level_from_env() {
  const char* v = std::getenv("DSGQ_LOG");
  if (!v || std::string(v).empty() || std::string(v) == "info") return LogLevel::Info;
  if (std::string(v) == "debug") return LogLevel::Debug;
  throw ConfigError("DSGQ_LOG must be 'info' or 'debug'");
}

RunLog::RunLog(const std::string& path, LogLevel level) : file_(path), level_(level) {
  if (!file_) throw Error("cannot write log '" + path + "'");
}

void RunLog::info(const std::string& line) {
  std::cout << line << '\n';
  file_ << line << '\n';
  file_.flush();
}

void RunLog::debug(const std::string& line) {
  if (level_ == LogLevel::Debug) info(line);
}

}  // namespace dsgq::io
