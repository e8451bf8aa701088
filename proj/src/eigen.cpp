#include "dsgq/eigen.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace dsgq::dsg {

Tensor EigenDecomposition::reconstruct() const {
  const std::size_t n = size();
  Tensor out = Tensor::matrix(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (std::size_t k = 0; k < n; ++k)
        acc += vectors.at(i, k) * values[k] * vectors.at(j, k);
      out.at(i, j) = acc;
    }
  return out;
}

void fix_signs(EigenDecomposition& eig) {
  const std::size_t n = eig.size();
  for (std::size_t col = 0; col < n; ++col) {
    std::size_t best = 0;
    for (std::size_t r = 1; r < n; ++r)
      if (std::abs(eig.vectors.at(r, col)) > std::abs(eig.vectors.at(best, col)))
        best = r;
    if (eig.vectors.at(best, col) < 0.0)
      for (std::size_t r = 0; r < n; ++r) eig.vectors.at(r, col) = -eig.vectors.at(r, col);
  }
}

EigenDecomposition eig_sym(const Tensor& k) {
  if (k.rank() != 2 || k.dim(0) != k.dim(1))
    throw Error("eig_sym: matrix must be square");
  k.require_finite("eig_sym input");
  const std::size_t n = k.dim(0);
  const double fro = norm(k);
  double asym = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      const double d = k.at(i, j) - k.at(j, i);
      asym += 2.0 * d * d;
    }
  if (std::sqrt(asym) > 1e-12 * std::max(1.0, fro))
    throw Error("eig_sym: matrix is not symmetric");

  Tensor a = k;
  Tensor v = Tensor::matrix(n, n);
  for (std::size_t i = 0; i < n; ++i) v.at(i, i) = 1.0;

  auto off_norm = [&] {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j) s += 2.0 * a.at(i, j) * a.at(i, j);
    return std::sqrt(s);
  };

  const double tol = 1e-14 * std::max(fro, 1e-300);
  bool converged = off_norm() <= tol;
  for (int sweep = 0; sweep < 100 && !converged; ++sweep) {
    for (std::size_t p = 0; p + 1 < n; ++p)
      for (std::size_t q = p + 1; q < n; ++q) {
        const double apq = a.at(p, q);
        if (apq == 0.0) continue;
        if (std::abs(apq) < 1e-18 * (std::abs(a.at(p, p)) + std::abs(a.at(q, q)))) {
          a.at(p, q) = a.at(q, p) = 0.0;
          continue;
        }
        const double theta = (a.at(q, q) - a.at(p, p)) / (2.0 * apq);
        double t = 1.0 / (std::abs(theta) + std::hypot(theta, 1.0));
        if (theta < 0.0) t = -t;
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        a.at(p, p) -= t * apq;
        a.at(q, q) += t * apq;
        a.at(p, q) = a.at(q, p) = 0.0;
        for (std::size_t r = 0; r < n; ++r) {
          if (r != p && r != q) {
            const double arp = a.at(r, p), arq = a.at(r, q);
            a.at(r, p) = a.at(p, r) = c * arp - s * arq;
            a.at(r, q) = a.at(q, r) = s * arp + c * arq;
          }
          const double vrp = v.at(r, p), vrq = v.at(r, q);
          v.at(r, p) = c * vrp - s * vrq;
          v.at(r, q) = s * vrp + c * vrq;
        }
      }
    converged = off_norm() <= tol;
  }
  if (!converged) throw Error("eig_sym: Jacobi did not converge in 100 sweeps");

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) {
    return a.at(x, x) > a.at(y, y);
  });
  EigenDecomposition eig;
  eig.values.resize(n);
  eig.vectors = Tensor::matrix(n, n);
  for (std::size_t col = 0; col < n; ++col) {
    eig.values[col] = a.at(order[col], order[col]);
    for (std::size_t r = 0; r < n; ++r) eig.vectors.at(r, col) = v.at(r, order[col]);
  }
  fix_signs(eig);
  return eig;
}

}  // namespace dsgq::dsg
