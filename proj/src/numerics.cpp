#include "fedss/numerics.hpp"

#include <algorithm>
#include <cmath>

#include "fedss/errors.hpp"

namespace fedss {

DenseMatrix::DenseMatrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  require(data_.size() == rows_ * cols_, "DenseMatrix: data length != rows*cols");
}

DenseMatrix::DenseMatrix(std::initializer_list<std::initializer_list<double>> rows) {
  rows_ = rows.size();
  cols_ = rows_ == 0 ? 0 : rows.begin()->size();
  data_.reserve(rows_ * cols_);
  for (const auto& r : rows) {
    require(r.size() == cols_, "DenseMatrix: ragged initializer");
    data_.insert(data_.end(), r.begin(), r.end());
  }
}

DenseMatrix DenseMatrix::identity(std::size_t n) {
  DenseMatrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

DenseVector DenseMatrix::column(std::size_t c) const {
  require(c < cols_, "column index out of range");
  DenseVector out(rows_);
  for (std::size_t r = 0; r < rows_; ++r) out[r] = (*this)(r, c);
  return out;
}

void DenseMatrix::set_column(std::size_t c, std::span<const double> v) {
  require(c < cols_ && v.size() == rows_, "set_column: shape mismatch");
  for (std::size_t r = 0; r < rows_; ++r) (*this)(r, c) = v[r];
}

bool all_finite(std::span<const double> v) noexcept {
  return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

DenseMatrix matmul(const DenseMatrix& a, const DenseMatrix& b) {
  require(a.cols() == b.rows(), "matmul: a.cols != b.rows");
  DenseMatrix c(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto out = c.row(i);
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = a(i, k);
      const auto brow = b.row(k);
      for (std::size_t j = 0; j < b.cols(); ++j) out[j] += aik * brow[j];
    }
  }
  if (!all_finite(c.span())) throw DegenerateInput("matmul: non-finite result");
  return c;
}

DenseMatrix transpose(const DenseMatrix& a) {
  DenseMatrix t(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) t(j, i) = a(i, j);
  return t;
}

double dot(std::span<const double> a, std::span<const double> b) {
  require(a.size() == b.size(), "dot: length mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double norm2(std::span<const double> v) { return std::sqrt(dot(v, v)); }

double log_sum_exp(std::span<const double> o) {
  require(!o.empty(), "log_sum_exp: empty input");
  const double mx = *std::max_element(o.begin(), o.end());
  double s = 0.0;
  for (double x : o) s += std::exp(x - mx);
  return mx + std::log(s);
}

DenseVector l2_normalize(std::span<const double> v) {
  const double nrm = norm2(v);
  if (!(nrm > kNormFloor)) throw DegenerateInput("l2_normalize: norm below floor");
  DenseVector u(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) u[i] = v[i] / nrm;
  return u;
}

DenseVector l2_normalize_backward(std::span<const double> v, std::span<const double> upstream) {
  require(v.size() == upstream.size(), "l2_normalize_backward: length mismatch");
  const double nrm = norm2(v);
  if (!(nrm > kNormFloor)) throw DegenerateInput("l2_normalize_backward: norm below floor");
  double ug = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) ug += v[i] * upstream[i];
  ug /= nrm;  // <u, g>
  DenseVector out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = (upstream[i] - (v[i] / nrm) * ug) / nrm;
  return out;
}

DenseVector relu_forward(std::span<const double> x) {
  DenseVector y(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] > 0.0 ? x[i] : 0.0;
  return y;
}

DenseVector relu_backward(std::span<const double> cached_input, std::span<const double> upstream) {
  require(cached_input.size() == upstream.size(), "relu_backward: length mismatch");
  DenseVector g(upstream.size());
  for (std::size_t i = 0; i < upstream.size(); ++i) g[i] = cached_input[i] > 0.0 ? upstream[i] : 0.0;
  return g;
}

DenseVector affine_forward(const DenseMatrix& weight, std::span<const double> bias,
                           std::span<const double> x) {
  require(weight.cols() == x.size(), "affine_forward: input length != weight cols");
  require(weight.rows() == bias.size(), "affine_forward: bias length != weight rows");
  DenseVector y(weight.rows());
  for (std::size_t r = 0; r < weight.rows(); ++r) {
    const auto w = weight.row(r);
    double s = bias[r];
    for (std::size_t c = 0; c < x.size(); ++c) s += w[c] * x[c];
    y[r] = s;
  }
  return y;
}

AffineGrad affine_backward(const DenseMatrix& weight, std::span<const double> cached_input,
                           std::span<const double> upstream) {
  AffineGrad g{DenseMatrix(weight.rows(), weight.cols()), DenseVector(weight.rows()), {}};
  g.input = affine_backward_accumulate(weight, cached_input, upstream, g.weight, g.bias);
  return g;
}

DenseVector affine_backward_accumulate(const DenseMatrix& weight,
                                       std::span<const double> cached_input,
                                       std::span<const double> upstream,
                                       DenseMatrix& grad_weight, DenseVector& grad_bias) {
  require(weight.cols() == cached_input.size() && weight.rows() == upstream.size(),
          "affine_backward: shape mismatch");
  require(grad_weight.rows() == weight.rows() && grad_weight.cols() == weight.cols() &&
              grad_bias.size() == weight.rows(),
          "affine_backward: gradient buffer shape mismatch");
  DenseVector gin(weight.cols());
  for (std::size_t r = 0; r < weight.rows(); ++r) {
    const double u = upstream[r];
    grad_bias[r] += u;
    if (u == 0.0) continue;
    auto gw = grad_weight.row(r);
    const auto w = weight.row(r);
    for (std::size_t c = 0; c < cached_input.size(); ++c) {
      gw[c] += u * cached_input[c];
      gin[c] += u * w[c];
    }
  }
  return gin;
}

std::vector<double> numeric_gradient(const std::function<double(std::span<const double>)>& f,
                                     std::span<const double> theta0, double h) {
  std::vector<double> theta(theta0.begin(), theta0.end());
  std::vector<double> g(theta.size());
  for (std::size_t i = 0; i < theta.size(); ++i) {
    const double orig = theta[i];
    theta[i] = orig + h;
    const double fp = f(theta);
    theta[i] = orig - h;
    const double fm = f(theta);
    theta[i] = orig;
    g[i] = (fp - fm) / (2.0 * h);
  }
  return g;
}

double gradient_check(const std::function<double(std::span<const double>)>& f,
                      std::span<const double> theta0, std::span<const double> analytic, double h) {
  require(theta0.size() == analytic.size(), "gradient_check: length mismatch");
  if (!std::isfinite(f(theta0))) throw ContractViolation("gradient_check: f(theta0) not finite");
  const auto numeric = numeric_gradient(f, theta0, h);
  double worst = 0.0;
  for (std::size_t i = 0; i < numeric.size(); ++i) {
    const double err = std::abs(analytic[i] - numeric[i]) / std::max(1.0, std::abs(analytic[i]));
    worst = std::max(worst, err);
  }
  return worst;
}

}  // namespace fedss
