#pragma once

#include <vector>

#include "dsgq/tensor.hpp"

namespace dsgq::dsg {

/// Spectral decomposition of a real symmetric matrix.
///
/// `values` are sorted in descending order; column i of `vectors` is the
/// unit eigenvector for values[i], with its largest-magnitude component
/// positive (first such component on ties).
struct EigenDecomposition {
  std::vector<double> values;
  Tensor vectors;  // [n, n], eigenvectors in columns

  std::size_t size() const { return values.size(); }
  double vector(std::size_t col, std::size_t row) const {
    return vectors.at(row, col);
  }
  /// V diag(values) V^T.
  Tensor reconstruct() const;
};

/// Cyclic Jacobi with a fixed row-major (p < q) sweep order. Throws Error on
/// asymmetric input or if 100 sweeps do not converge.
EigenDecomposition eig_sym(const Tensor& k);

/// Flips each eigenvector so its largest-magnitude component is positive.
void fix_signs(EigenDecomposition& eig);

}  // namespace dsgq::dsg
