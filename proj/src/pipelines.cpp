#include "dsgq/pipelines.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "dsgq/objectives.hpp"
#include "dsgq/optim.hpp"

namespace dsgq {

const char* to_string(Variant v) {
  switch (v) {
    case Variant::Bn: return "bn";
    case Variant::Sda: return "sda";
    case Variant::Lse: return "lse";
    case Variant::Sci: return "sci";
    case Variant::Dsg: return "dsg";
  }
  return "?";
}

Variant variant_from_string(const std::string& s) {
  for (Variant v : kAllVariants)
    if (s == to_string(v)) return v;
  throw Error("unknown mode '" + s + "' (expected bn, sda, lse, sci or dsg)");
}

LossFlags flags_for(Variant v) {
  switch (v) {
    case Variant::Bn: return {};
    case Variant::Sda: return {true, false, false};
    case Variant::Lse: return {false, true, false};
    case Variant::Sci: return {false, false, true};
    case Variant::Dsg: return {true, true, true};
  }
  return {};
}

void RunConfig::validate() const {
  auto fail = [](const std::string& m) { throw ConfigError("config: " + m); };
  if (w_bits < 2 || w_bits > 8) fail("w_bits must lie in [2, 8]");
  if (a_bits < 2 || a_bits > 8) fail("a_bits must lie in [2, 8]");
  if (!(epsilon > 0.0 && epsilon <= 1.0)) fail("epsilon must lie in (0, 1]");
  if (n_probe < 2) fail("n_probe must be at least 2");
  if (batch_size < 2) fail("batch_size must be at least 2");
  if (num_samples == 0 || num_samples % batch_size != 0)
    fail("num_samples must be a positive multiple of batch_size");
  if (!(sample_lr > 0.0) || !(generator_lr > 0.0) || !(student_lr >= 0.0))
    fail("learning rates must be positive");
  if (!(sci_weight >= 0.0)) fail("sci_weight must be non-negative");
  if (latent_dim == 0) fail("latent_dim must be positive");
  if (generator_hidden.empty()) fail("generator_hidden needs at least one block");
  for (std::size_t h : generator_hidden)
    if (h == 0) fail("generator_hidden widths must be positive");
  if (student_optimizer != "adam" && student_optimizer != "sgd")
    fail("student_optimizer must be 'adam' or 'sgd'");
  if (!(kd_beta >= 0.0)) fail("kd_beta must be non-negative");
  if (!(kd_temperature > 0.0)) fail("kd_temperature must be positive");
  const auto& c = calibration;
  if (!(c.percentile > 0.0 && c.percentile <= 1.0)) fail("percentile must lie in (0, 1]");
  if (!(c.ema_momentum > 0.0 && c.ema_momentum < 1.0)) fail("ema_momentum must lie in (0, 1)");
  if (c.mse_candidates < 2) fail("mse_candidates must be at least 2");
}

Network make_toy_net(std::size_t in, std::size_t classes, std::uint64_t seed) {
  Rng rng(seed, Stream::Init);
  return make_mlp(in, {32, 32}, classes, rng);
}

namespace {

Tensor gather_rows(const Tensor& x, std::span<const std::size_t> idx) {
  const std::size_t per = x.size() / x.dim(0);
  Shape s = x.shape();
  s[0] = idx.size();
  Tensor out(std::move(s));
  for (std::size_t i = 0; i < idx.size(); ++i)
    std::copy_n(x.data().begin() + std::ptrdiff_t(idx[i] * per), per,
                out.data().begin() + std::ptrdiff_t(i * per));
  return out;
}

void add_scaled(Tensor& dst, const Tensor& src, double a) {
  if (dst.size() != src.size()) throw Error("gradient size mismatch");
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += a * src[i];
}

void require_finite_loss(double v, const char* what) {
  if (!std::isfinite(v)) throw Error(std::string(what) + ": loss became non-finite");
}

Tensor flat(const Tensor& x) { return x.reshaped({x.dim(0), x.size() / x.dim(0)}); }

Shape batch_shape(std::size_t b, const Shape& per) {
  Shape s{b};
  s.insert(s.end(), per.begin(), per.end());
  return s;
}

void require_bn(const Network& net, const char* what) {
  net.validate();
  if (net.bn_count() == 0) throw Error(std::string(what) + ": network has no BN layers");
}

}  // namespace

TrainResult train_fp(Network net, const DatasetSplit& data, const TrainHyper& hyper) {
  const Shape out = net.validate();
  if (shape_size(out) != data.train.classes)
    throw Error("train_fp: network outputs do not match the class count");
  if (data.train.size() < 2) throw Error("train_fp: need at least 2 training samples");
  if (hyper.batch_size < 2) throw Error("train_fp: batch_size must be at least 2");
  Optimizer opt = Optimizer::sgd(hyper.lr);
  Rng shuffle(hyper.seed, Stream::Shuffle);
  std::vector<std::size_t> order(data.train.size());
  TrainResult r;
  for (std::size_t e = 0; e < hyper.epochs; ++e) {
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), shuffle.engine());
    double loss = 0.0;
    std::size_t batches = 0;
    for (std::size_t b = 0; b + 2 <= order.size(); b += hyper.batch_size) {
      const std::size_t end = std::min(order.size(), b + hyper.batch_size);
      if (end - b < 2) break;
      std::span<const std::size_t> idx(order.data() + b, end - b);
      std::vector<int> y;
      for (std::size_t i : idx) y.push_back(data.train.y[i]);
      const ForwardResult f = forward_collect(net, gather_rows(data.train.x, idx));
      const LossValue ce = cross_entropy(f.logits, y);
      require_finite_loss(ce.value, "train_fp");
      const Gradients g = backward(net, f, ce.grad);
      opt.step(net.parameters(), g.parameters());
      loss += ce.value;
      ++batches;
    }
    r.epoch_loss.push_back(batches ? loss / double(batches) : 0.0);
  }
  r.train_accuracy = network_accuracy(net, data.train.x, data.train.y);
  r.test_accuracy = network_accuracy(net, data.test.x, data.test.y);
  r.net = std::move(net);
  return r;
}

StatTerm statistics_term(const Network& net, const ForwardResult& fwd, LossFlags flags,
                         const dsg::RelaxationConstants& rc, const dsg::LseAssignment& lse) {
  if (flags.lse) {
    dsg::LseLoss l = dsg::lse_loss(net, fwd, lse, flags.sda ? &rc : nullptr);
    return {l.total, std::move(l.input_grads)};
  }
  const dsg::StatLoss l =
      flags.sda ? dsg::sda_loss(fwd.trace, net, rc) : dsg::bn_stats_loss(fwd.trace, net);
  return {l.total, dsg::stat_input_grads(net, fwd, l.grads)};
}

PtqGeneration dsg_ptq_generate(const Network& net, const RunConfig& cfg) {
  cfg.validate();
  require_bn(net, "dsg_ptq_generate");
  const LossFlags flags = cfg.flags();
  const std::size_t B = cfg.batch_size, D = shape_size(net.input_shape);
  PtqGeneration out;
  Rng probe(cfg.seed, Stream::Probe);
  out.rc = dsg::compute_relaxation(net, cfg.epsilon, cfg.n_probe, probe);

  const std::size_t chunks = cfg.num_samples / B;
  for (std::size_t c = 0; c < chunks; ++c) {
    Rng synth(cfg.seed, Stream::Synth, c), noise_rng(cfg.seed, Stream::Noise, c);
    SynthBatch sb;
    sb.samples = synth.normal_tensor(batch_shape(B, net.input_shape));
    sb.noise = dsg::make_noise(B, D, noise_rng);
    sb.lse = dsg::lse_assign(B, net.bn_count());
    Optimizer opt = Optimizer::adam(cfg.sample_lr);
    Tensor& x = sb.samples;
    for (std::size_t t = 0;; ++t) {
      const ForwardResult f = forward(net, x, Mode::Eval);
      StatTerm st = statistics_term(net, f, flags, out.rc, sb.lse);
      dsg::SciResult sci;
      if (flags.sci) sci = dsg::sci_loss(flat(x), sb.noise);
      LossRecord rec{c, t, st.value, sci.value, 0.0, 0.0, st.value + cfg.sci_weight * sci.value};
      require_finite_loss(rec.total, "dsg_ptq_generate");
      out.trajectory.push_back(rec);
      if (t == cfg.iterations) break;
      Tensor g = backward(net, f, Tensor(f.logits.shape()), st.input_grads).input;
      if (flags.sci) add_scaled(g, sci.grad, cfg.sci_weight);
      opt.step(std::vector<Tensor*>{&x}, std::vector<const Tensor*>{&g});
      x.require_finite("synthetic samples");
    }
    sb.iterations = cfg.iterations;
    out.batches.push_back(std::move(sb));
  }
  std::vector<Tensor> parts;
  for (const auto& b : out.batches) parts.push_back(b.samples);
  out.samples = concat_rows(parts);
  return out;
}

QuantizedNetwork calibrate_quantized(const Network& net, const std::vector<Tensor>& batches,
                                     const RunConfig& cfg) {
  return quantize_network(net, batches, cfg.w_bits, cfg.a_bits, cfg.calibration);
}

QuantizedNetwork calibrate_quantized(const Network& net, const PtqGeneration& gen,
                                     const RunConfig& cfg) {
  std::vector<Tensor> batches;
  for (const auto& b : gen.batches) batches.push_back(b.samples);
  return calibrate_quantized(net, batches, cfg);
}

namespace {

struct Draw {
  Tensor z;
  std::vector<int> y;
};

Draw draw_latent(const RunConfig& cfg, std::size_t classes, std::uint64_t substream) {
  Rng labels(cfg.seed, Stream::Labels, substream);
  Rng latent(cfg.seed, Stream::Synth, substream);
  Draw d;
  d.z = latent.normal_tensor({cfg.batch_size, cfg.latent_dim});
  for (std::size_t i = 0; i < cfg.batch_size; ++i) d.y.push_back(int(labels.index(classes)));
  return d;
}

// Substreams: training draws count up from 0; calibration draws live above.
constexpr std::uint64_t kCalibrationStream = 1ull << 40;

std::vector<std::optional<quant::QuantParams>> calibrate_from_generator(
    const Network& teacher, const GeneratorNet& gen, const RunConfig& cfg,
    std::size_t epoch) {
  std::vector<Tensor> batches;
  const std::size_t chunks = cfg.num_samples / cfg.batch_size;
  for (std::size_t c = 0; c < chunks; ++c) {
    const Draw d = draw_latent(cfg, gen.classes, kCalibrationStream + epoch * chunks + c);
    batches.push_back(generator_forward(gen, d.z, d.y).output);
  }
  return calibrate_activations(teacher, batches, cfg.a_bits, cfg.calibration);
}

}  // namespace

QatResult dsg_qat_train(const Network& teacher, const Dataset& test, const RunConfig& cfg) {
  cfg.validate();
  require_bn(teacher, "dsg_qat_train");
  const LossFlags flags = cfg.flags();
  const std::size_t classes = shape_size(teacher.validate());
  const std::size_t N = teacher.bn_count(), B = cfg.batch_size;

  Rng probe(cfg.seed, Stream::Probe);
  const dsg::RelaxationConstants rc =
      dsg::compute_relaxation(teacher, cfg.epsilon, cfg.n_probe, probe);
  const dsg::LseAssignment lse = dsg::lse_assign(B, N);

  Rng init(cfg.seed, Stream::Init, 1);
  QatResult r;
  r.generator = make_generator(cfg.latent_dim, classes, cfg.generator_hidden,
                               teacher.input_shape, init);
  GeneratorNet& gen = r.generator;
  const std::size_t blocks = gen.block_count();
  std::vector<dsg::NoiseSet> noise;
  for (std::size_t b = 0; b < blocks; ++b) {
    Rng nr(cfg.seed, Stream::Noise, b);
    noise.push_back(dsg::make_noise(B, cfg.generator_hidden[b], nr));
  }

  QuantizedNetwork& student = r.student;
  student.base = teacher;
  student.w_bits = cfg.w_bits;
  student.a_bits = cfg.a_bits;
  student.weight_qparams = weight_qparams_minmax(student.base, cfg.w_bits);
  student.act_qparams = calibrate_from_generator(teacher, gen, cfg, 0);
  student.validate();
  r.initial_accuracy = quantized_accuracy(student, test.x, test.y);

  Optimizer gen_opt = Optimizer::adam(cfg.generator_lr);
  Optimizer stu_opt = cfg.student_optimizer == "sgd" ? Optimizer::sgd(cfg.student_lr)
                                                      : Optimizer::adam(cfg.student_lr);
  for (std::size_t e = 0; e < cfg.qat_epochs; ++e) {
    if (e > 0) student.act_qparams = calibrate_from_generator(teacher, gen, cfg, e);
    for (std::size_t t = 0; t < cfg.qat_iters; ++t) {
      const Draw d = draw_latent(cfg, classes, e * cfg.qat_iters + t);
      const GeneratorPass pass = generator_forward(gen, d.z, d.y);
      const Tensor& x = pass.output;

      // Generator step against the frozen teacher.
      const ForwardResult tf = forward(teacher, x, Mode::Eval);
      StatTerm st = statistics_term(teacher, tf, flags, rc, lse);
      const LossValue ce = cross_entropy(tf.logits, d.y);
      std::vector<Tensor> fgrads;
      double sci = 0.0;
      if (flags.sci) {
        for (std::size_t b = 0; b < blocks; ++b) {
          dsg::SciResult s = dsg::sci_loss(pass.feature(gen, b), noise[b]);
          sci += s.value / double(blocks);
          for (double& v : s.grad.data()) v *= cfg.sci_weight / double(blocks);
          fgrads.push_back(std::move(s.grad));
        }
      }
      LossRecord g{e, t, st.value, sci, ce.value, 0.0, 0.0};
      g.total = st.value + cfg.sci_weight * sci + ce.value;
      require_finite_loss(g.total, "dsg_qat_train (generator)");
      r.generator_trajectory.push_back(g);
      const Tensor gx = backward(teacher, tf, ce.grad, st.input_grads).input;
      const Gradients gg = generator_backward(gen, pass, gx, fgrads);
      gen_opt.step(gen.body.parameters(), gg.parameters());

      // Student step on the same samples.
      student.weight_qparams = weight_qparams_minmax(student.base, cfg.w_bits);
      const ForwardResult sf = quantized_forward(student, x, Mode::Eval);
      const LossValue sce = cross_entropy(sf.logits, d.y);
      const LossValue kd = distillation_kl(tf.logits, sf.logits, cfg.kd_temperature);
      Tensor gl = sce.grad;
      add_scaled(gl, kd.grad, cfg.kd_beta);
      LossRecord s{e, t, 0.0, 0.0, sce.value, kd.value, sce.value + cfg.kd_beta * kd.value};
      require_finite_loss(s.total, "dsg_qat_train (student)");
      r.student_trajectory.push_back(s);
      const Gradients sg = backward(student.base, sf, gl);
      stu_opt.step(student.base.parameters(), sg.parameters());
      if (e + 1 == cfg.qat_epochs && t + 1 == cfg.qat_iters) r.last_samples = x;
    }
  }
  student.weight_qparams = weight_qparams_minmax(student.base, cfg.w_bits);
  student.validate();
  r.accuracy = quantized_accuracy(student, test.x, test.y);
  return r;
}

namespace {

void mean_std(const std::vector<double>& v, double& mean, double& sd) {
  mean = sd = 0.0;
  if (v.empty()) return;
  mean = std::accumulate(v.begin(), v.end(), 0.0) / double(v.size());
  if (v.size() < 2) return;
  for (double x : v) sd += (x - mean) * (x - mean);
  sd = std::sqrt(sd / double(v.size() - 1));
}

}  // namespace

AblationResult ablation_run(const RunConfig& base, const AblationOptions& options) {
  base.validate();
  if (options.seeds.empty()) throw Error("ablation: need at least one seed");
  AblationResult res;
  for (std::uint64_t seed : options.seeds) {
    BlobSpec spec = options.data;
    spec.seed = seed;
    const DatasetSplit data = make_blobs(spec);
    TrainHyper th = options.train;
    th.seed = seed;
    const TrainResult fp = train_fp(make_toy_net(spec.dim, spec.classes, seed), data, th);
    for (Variant v : options.variants) {
      RunConfig cfg = base;
      cfg.seed = seed;
      cfg.variant = v;
      VariantResult vr;
      vr.variant = v;
      vr.seed = seed;
      vr.fp_accuracy = fp.test_accuracy;
      if (options.run_ptq) {
        const PtqGeneration gen = dsg_ptq_generate(fp.net, cfg);
        const QuantizedNetwork q = calibrate_quantized(fp.net, gen, cfg);
        vr.ptq_accuracy = quantized_accuracy(q, data.test.x, data.test.y);
        vr.diversity = metrics::diversity_report(fp.net, gen.samples, options.diversity);
      }
      if (options.run_qat) vr.qat_accuracy = dsg_qat_train(fp.net, data.test, cfg).accuracy;
      res.runs.push_back(std::move(vr));
    }
  }
  for (Variant v : options.variants) {
    std::vector<double> p, q;
    for (const auto& r : res.runs)
      if (r.variant == v) {
        p.push_back(r.ptq_accuracy);
        q.push_back(r.qat_accuracy);
      }
    AblationRow row;
    row.variant = v;
    mean_std(p, row.ptq_mean, row.ptq_std);
    mean_std(q, row.qat_mean, row.qat_std);
    res.table.push_back(row);
  }
  return res;
}

}  // namespace dsgq
