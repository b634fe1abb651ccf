#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <span>
#include <vector>

namespace fedss {

inline constexpr double kNormFloor = 1e-12;

class DenseVector {
 public:
  DenseVector() = default;
  explicit DenseVector(std::size_t n, double fill = 0.0) : data_(n, fill) {}
  DenseVector(std::initializer_list<double> init) : data_(init) {}
  explicit DenseVector(std::vector<double> data) : data_(std::move(data)) {}

  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  std::span<double> span() noexcept { return data_; }
  std::span<const double> span() const noexcept { return data_; }
  const std::vector<double>& values() const noexcept { return data_; }
  std::vector<double>& values() noexcept { return data_; }

  auto begin() noexcept { return data_.begin(); }
  auto end() noexcept { return data_.end(); }
  auto begin() const noexcept { return data_.begin(); }
  auto end() const noexcept { return data_.end(); }

  bool operator==(const DenseVector&) const = default;

 private:
  std::vector<double> data_;
};

// Row-major rows x cols matrix of doubles.
class DenseMatrix {
 public:
  DenseMatrix() = default;
  DenseMatrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  DenseMatrix(std::size_t rows, std::size_t cols, std::vector<double> data);
  DenseMatrix(std::initializer_list<std::initializer_list<double>> rows);

  static DenseMatrix identity(std::size_t n);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  DenseVector column(std::size_t c) const;
  void set_column(std::size_t c, std::span<const double> v);

  std::span<double> span() noexcept { return data_; }
  std::span<const double> span() const noexcept { return data_; }
  const std::vector<double>& values() const noexcept { return data_; }

  bool operator==(const DenseMatrix&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

bool all_finite(std::span<const double> v) noexcept;

// Standard product; serial reference. Throws ContractViolation on shape mismatch.
DenseMatrix matmul(const DenseMatrix& a, const DenseMatrix& b);
DenseMatrix transpose(const DenseMatrix& a);

double dot(std::span<const double> a, std::span<const double> b);
double norm2(std::span<const double> v);

// max(o) + log(sum(exp(o - max(o)))).
double log_sum_exp(std::span<const double> o);

DenseVector l2_normalize(std::span<const double> v);
// Gradient wrt v of a loss whose gradient wrt u = v/|v| is `upstream`:
// (I - u u^T) upstream / |v|.
DenseVector l2_normalize_backward(std::span<const double> v, std::span<const double> upstream);

DenseVector relu_forward(std::span<const double> x);
// Passes upstream where the cached forward input was positive.
DenseVector relu_backward(std::span<const double> cached_input, std::span<const double> upstream);

// y = W x + b, W is out x in.
DenseVector affine_forward(const DenseMatrix& weight, std::span<const double> bias,
                           std::span<const double> x);

struct AffineGrad {
  DenseMatrix weight;
  DenseVector bias;
  DenseVector input;
};
AffineGrad affine_backward(const DenseMatrix& weight, std::span<const double> cached_input,
                           std::span<const double> upstream);

// Adds upstream outer cached_input into grad_weight and upstream into grad_bias;
// returns the input gradient. Used on the training hot path to avoid temporaries.
DenseVector affine_backward_accumulate(const DenseMatrix& weight,
                                       std::span<const double> cached_input,
                                       std::span<const double> upstream,
                                       DenseMatrix& grad_weight, DenseVector& grad_bias);

// Max over coordinates of |analytic - central difference| / max(1, |analytic|), h = 1e-5.
double gradient_check(const std::function<double(std::span<const double>)>& f,
                      std::span<const double> theta0, std::span<const double> analytic,
                      double h = 1e-5);

// Central-difference gradient of f at theta0.
std::vector<double> numeric_gradient(const std::function<double(std::span<const double>)>& f,
                                     std::span<const double> theta0, double h = 1e-5);

}  // namespace fedss
