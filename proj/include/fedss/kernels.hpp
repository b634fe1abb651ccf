#pragma once

// Data-parallel kernels. Each *_omp routine has a *_serial twin with the same
// arithmetic per output element, so results agree bitwise; tests compare them and
// bench/ times them against each other.

#include <cstddef>
#include <span>

#include "fedss/numerics.hpp"

namespace fedss::kernels {

int max_threads() noexcept;

DenseMatrix matmul_serial(const DenseMatrix& a, const DenseMatrix& b);
DenseMatrix matmul_omp(const DenseMatrix& a, const DenseMatrix& b);

// Gram matrix G(i, j) = <row_i, row_j> of an N x d row matrix.
DenseMatrix gram_serial(const DenseMatrix& rows);
DenseMatrix gram_omp(const DenseMatrix& rows);

// out += w * in
void axpy_serial(double w, std::span<const double> in, std::span<double> out);
void axpy_omp(double w, std::span<const double> in, std::span<double> out);

}  // namespace fedss::kernels
