#include "fedss/kernels.hpp"

#include <cstdint>

#include "fedss/errors.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace fedss::kernels {

int max_threads() noexcept {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

namespace {

inline void matmul_row(const DenseMatrix& a, const DenseMatrix& b, DenseMatrix& c, std::size_t i) {
  auto out = c.row(i);
  for (std::size_t k = 0; k < a.cols(); ++k) {
    const double aik = a(i, k);
    const auto brow = b.row(k);
    for (std::size_t j = 0; j < b.cols(); ++j) out[j] += aik * brow[j];
  }
}

inline void gram_row(const DenseMatrix& x, DenseMatrix& g, std::size_t i) {
  const auto ri = x.row(i);
  for (std::size_t j = 0; j < x.rows(); ++j) {
    const auto rj = x.row(j);
    double s = 0.0;
    for (std::size_t k = 0; k < x.cols(); ++k) s += ri[k] * rj[k];
    g(i, j) = s;
  }
}

}  // namespace

DenseMatrix matmul_serial(const DenseMatrix& a, const DenseMatrix& b) {
  require(a.cols() == b.rows(), "matmul: a.cols != b.rows");
  DenseMatrix c(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) matmul_row(a, b, c, i);
  return c;
}

DenseMatrix matmul_omp(const DenseMatrix& a, const DenseMatrix& b) {
  require(a.cols() == b.rows(), "matmul: a.cols != b.rows");
  DenseMatrix c(a.rows(), b.cols());
  const auto rows = static_cast<std::int64_t>(a.rows());
#pragma omp parallel for schedule(static)
  for (std::int64_t i = 0; i < rows; ++i) matmul_row(a, b, c, static_cast<std::size_t>(i));
  return c;
}

DenseMatrix gram_serial(const DenseMatrix& rows) {
  DenseMatrix g(rows.rows(), rows.rows());
  for (std::size_t i = 0; i < rows.rows(); ++i) gram_row(rows, g, i);
  return g;
}

DenseMatrix gram_omp(const DenseMatrix& rows) {
  DenseMatrix g(rows.rows(), rows.rows());
  const auto n = static_cast<std::int64_t>(rows.rows());
#pragma omp parallel for schedule(dynamic, 8)
  for (std::int64_t i = 0; i < n; ++i) gram_row(rows, g, static_cast<std::size_t>(i));
  return g;
}

void axpy_serial(double w, std::span<const double> in, std::span<double> out) {
  require(in.size() == out.size(), "axpy: length mismatch");
  for (std::size_t i = 0; i < in.size(); ++i) out[i] += w * in[i];
}

void axpy_omp(double w, std::span<const double> in, std::span<double> out) {
  require(in.size() == out.size(), "axpy: length mismatch");
  const auto n = static_cast<std::int64_t>(in.size());
#pragma omp parallel for simd schedule(static)
  for (std::int64_t i = 0; i < n; ++i) out[i] += w * in[i];
}

}  // namespace fedss::kernels
