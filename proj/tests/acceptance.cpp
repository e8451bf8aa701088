// Acceptance checks: one PASS/FAIL line per criterion, non-zero exit on any failure.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include "cli.hpp"
#include "dsgq/dsg_losses.hpp"
#include "dsgq/gradcheck.hpp"
#include "dsgq/metrics.hpp"
#include "dsgq/pipelines.hpp"
#include "dsgq/quant.hpp"

using namespace dsgq;
using namespace dsgq::dsg;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double a) {
  char buf[128];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

void randomize_bn(Network& net, Rng& rng) {
  for (auto& l : net.layers) {
    if (l.kind != LayerKind::BatchNorm) continue;
    for (std::size_t c = 0; c < l.gamma.size(); ++c) {
      l.gamma[c] = 0.5 + rng.uniform();
      l.beta[c] = rng.normal() * 0.3;
      l.running_mean[c] = rng.normal() * 0.5;
      l.running_var[c] = 0.5 + rng.uniform();
    }
  }
}

// Statistics loss of one eval-mode forward as a function of the network input.
using StatFn = std::function<std::pair<double, std::vector<Tensor>>(const Network&,
                                                                    const ForwardResult&)>;

NetLossFn through_input(StatFn f) {
  return [f = std::move(f)](const Network& n, const Tensor& x) {
    const ForwardResult fwd = forward(n, x, Mode::Eval);
    auto [value, grads] = f(n, fwd);
    LossEval e;
    e.value = value;
    e.grads = backward(n, fwd, Tensor(fwd.logits.shape()), grads);
    return e;
  };
}

Outcome criterion1() {
  Rng rng(101, Stream::Init);
  GradCheckOptions opt;
  opt.params = false;
  opt.input = true;
  opt.abs_tol = 1e-9;
  double worst_bn = 0, worst_sda = 0, worst_lse = 0, worst_sci = 0;
  const int configs = 24;
  for (int c = 0; c < configs; ++c) {
    const std::size_t in = 3 + rng.index(4);
    std::vector<std::size_t> hidden;
    for (std::size_t i = 0, n = 1 + rng.index(3); i < n; ++i) hidden.push_back(3 + rng.index(5));
    Network net = make_mlp(in, hidden, 2 + rng.index(3), rng);
    randomize_bn(net, rng);
    const std::size_t batch = 4 + rng.index(6);
    const Tensor x = rng.normal_tensor({batch, in});
    RelaxationConstants rc;
    for (std::size_t i = 0; i < hidden.size(); ++i) {
      rc.delta.push_back(0.05 * rng.uniform());
      rc.gamma.push_back(0.05 * rng.uniform());
    }
    const LseAssignment lse = lse_assign(batch, hidden.size());
    worst_bn = std::max(worst_bn, grad_check(net, x, through_input([](const Network& n, const ForwardResult& f) {
      const auto l = bn_stats_loss(f.trace, n);
      return std::make_pair(l.total, stat_input_grads(n, f, l.grads));
    }), opt));
    worst_sda = std::max(worst_sda, grad_check(net, x, through_input([&rc](const Network& n, const ForwardResult& f) {
      const auto l = sda_loss(f.trace, n, rc);
      return std::make_pair(l.total, stat_input_grads(n, f, l.grads));
    }), opt));
    worst_lse = std::max(worst_lse, grad_check(net, x, through_input([&](const Network& n, const ForwardResult& f) {
      const auto l = lse_loss(n, f, lse, &rc);
      return std::make_pair(l.total, l.input_grads);
    }), opt));

    // SCI directly on a feature matrix; redraw until the hinge is active.
    Rng noise_rng(102, Stream::Noise, std::uint64_t(c));
    const std::size_t b = 2 + rng.index(7), d = b + rng.index(8);
    const NoiseSet noise = make_noise(b, d, noise_rng);
    Tensor f = rng.normal_tensor({b, d});
    while (sci_loss(f, noise).inner <= 0.0) f = rng.normal_tensor({b, d});
    worst_sci = std::max(worst_sci, grad_check(f, [&](const Tensor& t) {
      const SciResult r = sci_loss(t, noise);
      return std::make_pair(r.value, r.grad);
    }, 1e-6));
  }
  const double worst = std::max({worst_bn, worst_sda, worst_lse, worst_sci});
  std::ostringstream os;
  os << configs << " configs, max rel err BN " << fmt("%.2e", worst_bn) << ", SDA "
     << fmt("%.2e", worst_sda) << ", LSE " << fmt("%.2e", worst_lse) << ", SCI "
     << fmt("%.2e", worst_sci);
  return {worst < 1e-4, os.str()};
}

ActivationTrace random_trace(const std::vector<std::size_t>& channels, Rng& rng) {
  ActivationTrace t;
  for (std::size_t c : channels) {
    ChannelStats s{rng.normal_tensor({c}), Tensor({c})};
    for (double& v : s.std.data()) v = 0.2 + rng.uniform();
    t.bn.push_back(std::move(s));
  }
  return t;
}

Outcome criterion2() {
  Rng rng(201, Stream::Init);
  const std::vector<std::size_t> ch{4, 6, 3};
  Network net = make_mlp(4, ch, 2, rng);
  randomize_bn(net, rng);
  double worst = 0.0;
  bool covered_zero = true;
  for (int t = 0; t < 100; ++t) {
    const ActivationTrace tr = random_trace(ch, rng);
    const RelaxationConstants zero{{0, 0, 0}, {0, 0, 0}, 0.9};
    double sum = 0.0;
    for (double v : sda_loss(tr, net, zero).per_layer) sum += v;
    worst = std::max(worst, std::abs(sum - bn_stats_loss(tr, net).total));
    // epsilon = 1 margins cover every channel deviation.
    const RelaxationConstants full = relaxation_from_trace(tr, net, 1.0);
    covered_zero = covered_zero && sda_loss(tr, net, full).total == 0.0;
  }
  return {worst < 1e-12 && covered_zero,
          "100 traces, max |sum SDA - L_BN| " + fmt("%.2e", worst) +
              (covered_zero ? ", covering margins give exactly 0" : ", covering margins nonzero")};
}

Outcome criterion3() {
  bool ok = true;
  std::size_t rows = 0;
  for (std::size_t n = 1; n <= 8; ++n) {
    for (std::size_t b = 1; b <= 4 * n; ++b) {
      const LseAssignment a = lse_assign(b, n);
      for (std::size_t j = 0; j < b; ++j, ++rows) {
        double sum = 0.0;
        int doubled = 0;
        for (std::size_t i = 0; i < n; ++i) {
          const double v = a.matrix.at(j, i);
          sum += v;
          if (v == 2.0 / double(n)) ++doubled;
          else if (v != 1.0 / double(n)) ok = false;
        }
        ok = ok && doubled == 1 && std::abs(sum - double(n + 1) / double(n)) < 1e-14;
      }
    }
  }
  return {ok, "N = 1..8, B = 1..4N, " + std::to_string(rows) + " rows checked"};
}

std::array<double, 3> cubic_eigenvalues(const Tensor& a) {
  const double p1 = a.at(0, 1) * a.at(0, 1) + a.at(0, 2) * a.at(0, 2) + a.at(1, 2) * a.at(1, 2);
  const double q = (a.at(0, 0) + a.at(1, 1) + a.at(2, 2)) / 3.0;
  const double p2 = (a.at(0, 0) - q) * (a.at(0, 0) - q) + (a.at(1, 1) - q) * (a.at(1, 1) - q) +
                    (a.at(2, 2) - q) * (a.at(2, 2) - q) + 2.0 * p1;
  const double p = std::sqrt(p2 / 6.0);
  double b[3][3];
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) b[i][j] = (a.at(i, j) - (i == j ? q : 0.0)) / p;
  const double det = b[0][0] * (b[1][1] * b[2][2] - b[1][2] * b[2][1]) -
                     b[0][1] * (b[1][0] * b[2][2] - b[1][2] * b[2][0]) +
                     b[0][2] * (b[1][0] * b[2][1] - b[1][1] * b[2][0]);
  const double phi = std::acos(std::clamp(det / 2.0, -1.0, 1.0)) / 3.0;
  const double e1 = q + 2.0 * p * std::cos(phi);
  const double e3 = q + 2.0 * p * std::cos(phi + 2.0 * std::numbers::pi / 3.0);
  return {e1, 3.0 * q - e1 - e3, e3};
}

Outcome criterion4() {
  Rng rng(401, Stream::Init);
  double worst_rec = 0.0, worst_orth = 0.0, worst_cubic = 0.0;
  for (int t = 0; t < 1000; ++t) {
    const std::size_t n = 1 + std::size_t(t) % 16;
    Tensor k = Tensor::matrix(n, n);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i; j < n; ++j) k.at(i, j) = k.at(j, i) = rng.normal();
    const EigenDecomposition e = eig_sym(k);
    const Tensor r = e.reconstruct();
    double diff = 0.0;
    for (std::size_t i = 0; i < k.size(); ++i) diff += (r[i] - k[i]) * (r[i] - k[i]);
    worst_rec = std::max(worst_rec, std::sqrt(diff) / norm(k));
    for (std::size_t a = 0; a < n; ++a)
      for (std::size_t b = 0; b < n; ++b) {
        double dot = 0.0;
        for (std::size_t i = 0; i < n; ++i) dot += e.vector(a, i) * e.vector(b, i);
        worst_orth = std::max(worst_orth, std::abs(dot - (a == b ? 1.0 : 0.0)));
      }
    if (n == 3) {
      const auto c = cubic_eigenvalues(k);
      for (std::size_t i = 0; i < 3; ++i)
        worst_cubic = std::max(worst_cubic, std::abs(c[i] - e.values[i]));
    }
  }
  return {worst_rec < 1e-8 && worst_orth < 1e-10 && worst_cubic < 1e-9,
          "1000 matrices n = 1..16, reconstruction " + fmt("%.2e", worst_rec) +
              " of |K|_F, orthonormality " + fmt("%.2e", worst_orth) + ", 3x3 cubic " +
              fmt("%.2e", worst_cubic)};
}

Outcome criterion5() {
  bool ok = true;
  std::ostringstream os;
  for (std::size_t b : {2, 4, 8}) {
    const std::size_t d = 16;
    Rng rng(501, Stream::Noise, b);
    const NoiseSet noise = make_noise(b, d, rng);
    const double self = sci_loss(noise.vectors, noise).value;
    Rng frng(502, Stream::Data, b);
    const Tensor row = frng.uniform_tensor({d});
    Tensor collapsed = Tensor::matrix(b, d), orthogonal = Tensor::matrix(b, d);
    for (std::size_t i = 0; i < b; ++i) {
      for (std::size_t j = 0; j < d; ++j) collapsed.at(i, j) = row[j] + 0.1;
      orthogonal.at(i, i) = 1.0;
    }
    const double c = sci_loss(collapsed, noise).value;
    const double o = sci_loss(orthogonal, noise).value;
    ok = ok && self == 0.0 && c > o;
    os << "B=" << b << ": self " << fmt("%.3g", self) << ", collapsed " << fmt("%.4f", c)
       << ", orthogonal " << fmt("%.4f", o) << "; ";
  }
  return {ok, os.str()};
}

Outcome criterion6() {
  Rng rng(601, Stream::Data);
  bool ok = true;
  std::size_t levels = 0;
  for (int bits : {2, 4, 8}) {
    for (int r = 0; r < 20; ++r) {
      const double lo = -3.0 * rng.uniform() - (r % 4 == 0 ? 0.0 : 0.01);
      const double hi = 0.1 + 3.0 * rng.uniform();
      const quant::QuantParams qp = quant::make_qparams(r % 4 == 0 ? 0.0 : lo, hi, bits);
      int prev_level = -1;
      for (int q = 0; q <= qp.levels(); ++q, ++levels) {
        const double x = quant::dequantize_level(q, qp);
        ok = ok && quant::quantize_level(x, qp) == q;
        ok = ok && quant::quantize_dequantize(x, qp) == x;
        // Midpoints towards the next level: monotone and within half a step.
        for (double f : {0.0, 0.25, 0.49, 0.51, 0.75}) {
          const double y = x + f * qp.scale;
          if (y > qp.clip_max) continue;
          const int l = quant::quantize_level(y, qp);
          ok = ok && l >= prev_level;
          prev_level = l;
          ok = ok && std::abs(quant::quantize_dequantize(y, qp) - y) <= qp.scale / 2.0 * (1 + 1e-12);
          const double z = quant::quantize_dequantize(y, qp);
          ok = ok && quant::quantize_dequantize(z, qp) == z;
        }
      }
      ok = ok && quant::quantize_level(qp.clip_min - 5.0, qp) == 0 &&
           quant::quantize_level(qp.clip_max + 5.0, qp) == qp.levels();
    }
  }
  bool pct_ok = true, mse_ok = true;
  for (int t = 0; t < 100; ++t) {
    const int bits = (t % 3 == 0) ? 2 : (t % 3 == 1 ? 4 : 8);
    Tensor s = rng.normal_tensor({200 + std::size_t(t)});
    if (t % 2) for (double& v : s.data()) v = v * v * v;  // heavy tails
    pct_ok = pct_ok && quant::calibrate_percentile(s.span(), bits, 1.0) ==
                           quant::calibrate_minmax(s.span(), bits);
    const double mm = quant::quantization_mse(s.span(), quant::calibrate_minmax(s.span(), bits));
    const double ms = quant::quantization_mse(s.span(), quant::calibrate_mse(s.span(), bits, 100));
    mse_ok = mse_ok && ms <= mm;
  }
  return {ok && pct_ok && mse_ok,
          std::to_string(levels) + " levels over 60 grids; percentile(1) == min-max " +
              (pct_ok ? "yes" : "no") + "; MSE <= min-max on 100 batches " +
              (mse_ok ? "yes" : "no")};
}

Outcome criterion7() {
  bool ok = true;
  std::ostringstream os;
  for (std::size_t k : {2, 3, 4}) {
    const auto r = metrics::verify_theorem1(k, 0.05);
    ok = ok && r.verified;
    os << "K=" << k << " " << (r.verified ? "ok" : "FAILED") << " (" << r.grid_points
       << " points); ";
  }
  return {ok, os.str()};
}

RunConfig w4a4() { return RunConfig{}; }  // defaults are W4A4

Outcome criterion8() {
  RunConfig cfg;
  cfg.w_bits = 8;
  cfg.a_bits = 8;
  AblationOptions opt;
  opt.variants = {Variant::Dsg};
  const AblationResult r = ablation_run(cfg, opt);
  double fp = 0, ptq = 0, qat = 0;
  for (const auto& v : r.runs) {
    fp += v.fp_accuracy;
    ptq += v.ptq_accuracy;
    qat += v.qat_accuracy;
  }
  const double n = double(r.runs.size());
  fp = 100 * fp / n, ptq = 100 * ptq / n, qat = 100 * qat / n;
  return {fp - ptq <= 1.0 && fp - qat <= 1.0,
          "5 seeds, FP " + fmt("%.2f", fp) + "%, PTQ " + fmt("%.2f", ptq) + "%, QAT " +
              fmt("%.2f", qat) + "%"};
}

const AblationRow& row_of(const AblationResult& r, Variant v) {
  for (const auto& row : r.table)
    if (row.variant == v) return row;
  throw Error("missing ablation row");
}

Outcome criterion9(const AblationResult& r) {
  const AblationRow& bn = row_of(r, Variant::Bn);
  const AblationRow& dsg = row_of(r, Variant::Dsg);
  bool ok = dsg.ptq_mean >= bn.ptq_mean && dsg.qat_mean >= bn.qat_mean;
  std::ostringstream os;
  os << "PTQ/QAT mean %:";
  for (Variant v : kAllVariants) {
    const AblationRow& row = row_of(r, v);
    if (v == Variant::Sda || v == Variant::Lse || v == Variant::Sci)
      ok = ok && row.ptq_mean >= bn.ptq_mean - 0.005 && row.qat_mean >= bn.qat_mean - 0.005;
    os << " " << to_string(v) << " " << fmt("%.2f", 100 * row.ptq_mean) << "/"
       << fmt("%.2f", 100 * row.qat_mean);
  }
  return {ok, os.str()};
}

Outcome criterion10(const AblationResult& r) {
  double var_bn = 0, var_dsg = 0, w_bn = 0, w_dsg = 0, s_bn = 0, s_dsg = 0;
  for (const auto& v : r.runs) {
    if (v.variant == Variant::Bn) {
      var_bn += v.diversity.stat_variance;
      w_bn += v.diversity.wasserstein_mean;
      s_bn += v.diversity.similarity_index_s;
    } else if (v.variant == Variant::Dsg) {
      var_dsg += v.diversity.stat_variance;
      w_dsg += v.diversity.wasserstein_mean;
      s_dsg += v.diversity.similarity_index_s;
    }
  }
  // Sums over the same seed set order the same way as means.
  const bool ok = var_dsg > var_bn && w_dsg > w_bn && s_dsg < s_bn;
  const double n = double(r.runs.size()) / double(r.table.size());
  return {ok, "stat variance " + fmt("%.4f", var_dsg / n) + " vs " + fmt("%.4f", var_bn / n) +
                  ", W1 " + fmt("%.4f", w_dsg / n) + " vs " + fmt("%.4f", w_bn / n) + ", s " +
                  fmt("%.1f", s_dsg / n) + " vs " + fmt("%.1f", s_bn / n) + " (dsg vs bn)"};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

int run_cli(std::vector<std::string> args) {
  args.insert(args.begin(), "dsgq");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  return cli::cli_main(int(argv.size()), argv.data());
}

Outcome criterion11() {
  const fs::path root = fs::temp_directory_path() / "dsgq_acceptance_cli";
  fs::remove_all(root);
  fs::create_directories(root);
  {
    std::ofstream cfg(root / "cfg.json");
    cfg << R"({"seed": 5, "ptq": {"iterations": 40, "num_samples": 64}, )"
        << R"("qat": {"epochs": 2, "iters_per_epoch": 10}, "ablation": {"seeds": [5]}})";
  }
  const std::vector<std::vector<std::string>> commands{
      {"gen-data", "--mode", "dsg"}, {"calibrate", "--mode", "sda"}, {"qat", "--mode", "sci"}};
  bool ok = true;
  std::ostringstream os;
  for (const auto& cmd : commands) {
    std::string reports[2];
    for (int rep = 0; rep < 2; ++rep) {
      const fs::path out = root / (cmd[0] + std::to_string(rep));
      std::vector<std::string> args = cmd;
      args.insert(args.end(), {"--config", (root / "cfg.json").string(), "--out", out.string()});
      ok = ok && run_cli(args) == 0;
      reports[rep] = slurp(out / "report.json");
    }
    const bool same = !reports[0].empty() && reports[0] == reports[1];
    ok = ok && same;
    os << cmd[0] << (same ? " identical" : " DIFFERS") << "; ";
  }
  return {ok, os.str()};
}

}  // namespace

int main() {
  int failures = 0;
  auto report = [&](int id, const char* name, const std::function<Outcome()>& fn) {
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (!o.pass) ++failures;
    std::printf("%s criterion %d (%s): %s [%.1f s]\n", o.pass ? "PASS" : "FAIL", id, name,
                o.detail.c_str(), secs);
    std::fflush(stdout);
  };
  report(1, "gradient correctness", criterion1);
  report(2, "SDA reduction", criterion2);
  report(3, "LSE structure", criterion3);
  report(4, "eigensolver", criterion4);
  report(5, "SCI sanity", criterion5);
  report(6, "quantizer", criterion6);
  report(7, "entropy theorem", criterion7);
  report(8, "W8A8 near-lossless", criterion8);

  AblationResult ablation;
  const auto start = std::chrono::steady_clock::now();
  try {
    ablation = ablation_run(w4a4(), AblationOptions{});
  } catch (const std::exception& e) {
    std::printf("W4A4 ablation failed: %s\n", e.what());
  }
  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  std::printf("(W4A4 ablation over 5 seeds took %.1f s)\n", secs);
  report(9, "W4A4 directional gain", [&] { return criterion9(ablation); });
  report(10, "diversity direction", [&] { return criterion10(ablation); });
  report(11, "CLI determinism", criterion11);

  std::printf("%d of 11 criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
