#pragma once

#include <span>
#include <vector>

#include "dsgq/tensor.hpp"

namespace dsgq::quant {

/// Per-tensor uniform affine quantizer. The grid is anchored at clip_min:
/// level q in [0, 2^bits - 1] dequantizes to clip_min + q * scale, and the
/// top level dequantizes to clip_max exactly.
struct QuantParams {
  int bits = 8;
  double clip_min = 0.0;
  double clip_max = 1.0;
  double scale = 1.0 / 255.0;
  int zero_point = 0;

  int levels() const { return (1 << bits) - 1; }

  friend bool operator==(const QuantParams&, const QuantParams&) = default;
};

/// Builds a valid QuantParams for [lo, hi]. Equal bounds are widened by 1e-8.
QuantParams make_qparams(double lo, double hi, int bits);

/// Throws Error unless the invariants of QuantParams hold.
void validate(const QuantParams& qp);

/// Integer level of x (after clipping), round-half-to-even.
int quantize_level(double x, const QuantParams& qp);
double dequantize_level(int level, const QuantParams& qp);

double quantize_dequantize(double x, const QuantParams& qp);
Tensor quantize_dequantize(const Tensor& x, const QuantParams& qp);

/// Straight-through gradient: 1 where clip_min <= x <= clip_max, else 0.
double ste_grad(double x, const QuantParams& qp);

struct FakeQuantResult {
  Tensor output;
  Tensor grad_mask;  // elementwise STE multiplier
};
FakeQuantResult fake_quant_forward_backward(const Tensor& x,
                                            const QuantParams& qp);

/// Mean squared error between x and its fake-quantized version.
double quantization_mse(std::span<const double> x, const QuantParams& qp);

/// Nearest-rank percentile: the ceil(q * n)-th order statistic (1-based),
/// clamped to [1, n]. q = 1 returns the maximum.
double percentile_nearest_rank(std::span<const double> sorted, double q);

QuantParams calibrate_minmax(std::span<const double> samples, int bits);
inline QuantParams calibrate_minmax(const Tensor& samples, int bits) {
  return calibrate_minmax(samples.span(), bits);
}

/// Clips at the (1-p)/2 and 1-(1-p)/2 nearest-rank percentiles.
QuantParams calibrate_percentile(std::span<const double> samples, int bits,
                                 double p);

/// Running extremes m <- momentum * m + (1 - momentum) * batch_extreme,
/// initialized from the first batch.
QuantParams calibrate_ema(std::span<const Tensor> batches, int bits,
                          double momentum);

/// Grid search over shrink factors 1 - k / n_candidates (k = 0..n-1) of the
/// min-max range, shrinking toward zero (or toward the nearest range end when
/// zero is outside). Keeps the larger range on ties.
QuantParams calibrate_mse(std::span<const double> samples, int bits,
                          int n_candidates, bool symmetric = false);

enum class Calibration { MinMax, Percentile, Ema, Mse };

struct CalibrationOptions {
  Calibration method = Calibration::MinMax;
  double percentile = 0.9999;
  double ema_momentum = 0.9;
  int mse_candidates = 100;
  bool symmetric = false;
};

/// Dispatches on options.method. `batches` are consumed in order; methods
/// other than EMA see their concatenation.
QuantParams calibrate(std::span<const Tensor> batches, int bits,
                      const CalibrationOptions& options);

const char* to_string(Calibration c);
Calibration calibration_from_string(const std::string& s);

}  // namespace dsgq::quant
