#include "dsgq/quant.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace dsgq::quant {

QuantParams make_qparams(double lo, double hi, int bits) {
  if (bits < 2 || bits > 8)
    throw Error("bit-width must be in [2, 8], got " + std::to_string(bits));
  if (!std::isfinite(lo) || !std::isfinite(hi))
    throw Error("non-finite clip range");
  if (lo > hi) std::swap(lo, hi);
  if (lo == hi) hi = lo + 1e-8;
  QuantParams qp;
  qp.bits = bits;
  qp.clip_min = lo;
  qp.clip_max = hi;
  qp.scale = (hi - lo) / qp.levels();
  const double zp = std::nearbyint(-lo / qp.scale);
  qp.zero_point = static_cast<int>(std::clamp(zp, 0.0, double(qp.levels())));
  return qp;
}

void validate(const QuantParams& qp) {
  if (qp.bits < 2 || qp.bits > 8) throw Error("bits outside [2, 8]");
  if (!(qp.clip_min < qp.clip_max)) throw Error("clip_min must be < clip_max");
  if (!(qp.scale > 0.0)) throw Error("scale must be positive");
  const double expect = (qp.clip_max - qp.clip_min) / qp.levels();
  if (std::abs(qp.scale - expect) > 1e-12 * std::abs(expect))
    throw Error("scale inconsistent with clip range");
  if (qp.zero_point < 0 || qp.zero_point > qp.levels())
    throw Error("zero_point outside level range");
}

int quantize_level(double x, const QuantParams& qp) {
  const double c = std::clamp(x, qp.clip_min, qp.clip_max);
  // Default FP environment rounds to nearest, ties to even.
  const double q = std::nearbyint((c - qp.clip_min) / qp.scale);
  return static_cast<int>(std::clamp(q, 0.0, double(qp.levels())));
}

double dequantize_level(int level, const QuantParams& qp) {
  if (level >= qp.levels()) return qp.clip_max;
  return qp.clip_min + level * qp.scale;
}

double quantize_dequantize(double x, const QuantParams& qp) {
  return dequantize_level(quantize_level(x, qp), qp);
}

Tensor quantize_dequantize(const Tensor& x, const QuantParams& qp) {
  Tensor out = x;
  for (double& v : out.data()) v = quantize_dequantize(v, qp);
  return out;
}

double ste_grad(double x, const QuantParams& qp) {
  return (x >= qp.clip_min && x <= qp.clip_max) ? 1.0 : 0.0;
}

FakeQuantResult fake_quant_forward_backward(const Tensor& x,
                                            const QuantParams& qp) {
  FakeQuantResult r{x, Tensor(x.shape())};
  for (std::size_t i = 0; i < x.size(); ++i) {
    r.output[i] = quantize_dequantize(x[i], qp);
    r.grad_mask[i] = ste_grad(x[i], qp);
  }
  return r;
}

double quantization_mse(std::span<const double> x, const QuantParams& qp) {
  if (x.empty()) throw Error("quantization_mse: empty input");
  double acc = 0.0;
  for (double v : x) {
    const double d = quantize_dequantize(v, qp) - v;
    acc += d * d;
  }
  return acc / double(x.size());
}

double percentile_nearest_rank(std::span<const double> sorted, double q) {
  if (sorted.empty()) throw Error("percentile of empty sample");
  const double n = double(sorted.size());
  // The small offset keeps q * n values like 0.99 * 100 on their intended rank.
  auto k = static_cast<long long>(std::ceil(q * n - 1e-9));
  k = std::clamp<long long>(k, 1, static_cast<long long>(sorted.size()));
  return sorted[static_cast<std::size_t>(k - 1)];
}

namespace {

std::pair<double, double> min_max(std::span<const double> samples) {
  if (samples.empty()) throw Error("calibration on empty input");
  const auto [lo, hi] = std::minmax_element(samples.begin(), samples.end());
  return {*lo, *hi};
}

}  // namespace

QuantParams calibrate_minmax(std::span<const double> samples, int bits) {
  const auto [lo, hi] = min_max(samples);
  return make_qparams(lo, hi, bits);
}

QuantParams calibrate_percentile(std::span<const double> samples, int bits,
                                 double p) {
  if (samples.empty()) throw Error("calibration on empty input");
  if (!(p > 0.0 && p <= 1.0)) throw Error("percentile p must be in (0, 1]");
  if (p == 1.0) return calibrate_minmax(samples, bits);
  std::vector<double> sorted(samples.begin(), samples.end());
  std::sort(sorted.begin(), sorted.end());
  const double tail = (1.0 - p) / 2.0;
  return make_qparams(percentile_nearest_rank(sorted, tail),
                      percentile_nearest_rank(sorted, 1.0 - tail), bits);
}

QuantParams calibrate_ema(std::span<const Tensor> batches, int bits,
                          double momentum) {
  if (batches.empty()) throw Error("EMA calibration needs at least one batch");
  if (!(momentum > 0.0 && momentum < 1.0))
    throw Error("EMA momentum must be in (0, 1)");
  auto [lo, hi] = min_max(batches[0].span());
  for (std::size_t b = 1; b < batches.size(); ++b) {
    const auto [blo, bhi] = min_max(batches[b].span());
    lo = momentum * lo + (1.0 - momentum) * blo;
    hi = momentum * hi + (1.0 - momentum) * bhi;
  }
  return make_qparams(lo, hi, bits);
}

QuantParams calibrate_mse(std::span<const double> samples, int bits,
                          int n_candidates, bool symmetric) {
  if (n_candidates < 2) throw Error("MSE calibration needs >= 2 candidates");
  auto [lo, hi] = min_max(samples);
  if (symmetric) {
    const double m = std::max(std::abs(lo), std::abs(hi));
    lo = -m;
    hi = m;
  }
  const double anchor = std::clamp(0.0, lo, hi);
  QuantParams best = make_qparams(lo, hi, bits);
  double best_mse = quantization_mse(samples, best);
  for (int k = 1; k < n_candidates; ++k) {
    const double f = 1.0 - double(k) / n_candidates;
    const double clo = anchor - f * (anchor - lo);
    const double chi = anchor + f * (hi - anchor);
    if (!(clo < chi)) continue;
    const QuantParams qp = make_qparams(clo, chi, bits);
    const double mse = quantization_mse(samples, qp);
    if (mse < best_mse) {
      best_mse = mse;
      best = qp;
    }
  }
  return best;
}

QuantParams calibrate(std::span<const Tensor> batches, int bits,
                      const CalibrationOptions& options) {
  if (batches.empty()) throw Error("calibration on empty input");
  if (options.method == Calibration::Ema)
    return calibrate_ema(batches, bits, options.ema_momentum);
  std::vector<double> all;
  for (const auto& b : batches)
    all.insert(all.end(), b.data().begin(), b.data().end());
  switch (options.method) {
    case Calibration::MinMax:
      return calibrate_minmax(all, bits);
    case Calibration::Percentile:
      return calibrate_percentile(all, bits, options.percentile);
    case Calibration::Mse:
      return calibrate_mse(all, bits, options.mse_candidates,
                           options.symmetric);
    case Calibration::Ema:
      break;
  }
  throw Error("unknown calibration method");
}

const char* to_string(Calibration c) {
  switch (c) {
    case Calibration::MinMax: return "minmax";
    case Calibration::Percentile: return "percentile";
    case Calibration::Ema: return "ema";
    case Calibration::Mse: return "mse";
  }
  return "?";
}

Calibration calibration_from_string(const std::string& s) {
  if (s == "minmax") return Calibration::MinMax;
  if (s == "percentile") return Calibration::Percentile;
  if (s == "ema") return Calibration::Ema;
  if (s == "mse") return Calibration::Mse;
  throw Error("unknown calibration method '" + s + "'");
}

}  // namespace dsgq::quant
