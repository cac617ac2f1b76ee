#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "cfm/errors.hpp"

namespace cfm {

// Dense row-major tensor of 64-bit floats. All numeric state in this
// project (batches, parameters, gradients) lives in these.
struct Tensor {
  std::vector<int64_t> shape;
  std::vector<double> data;

  Tensor() = default;
  Tensor(std::vector<int64_t> shp, std::vector<double> dat)
      : shape(std::move(shp)), data(std::move(dat)) {}

  static Tensor zeros(std::vector<int64_t> shp);
  static Tensor full(std::vector<int64_t> shp, double v);
  static Tensor scalar(double v) { return Tensor({std::vector<int64_t>{}}, {v}); }
  static Tensor from_vector(std::vector<double> v) {
    int64_t n = static_cast<int64_t>(v.size());
    return Tensor({n}, std::move(v));
  }

  int64_t size() const { return static_cast<int64_t>(data.size()); }
  bool is_scalar() const { return data.size() == 1 && shape.empty(); }

  // 2-D view: all leading dims collapse into rows, last dim is cols.
  int64_t cols() const { return shape.empty() ? 1 : shape.back(); }
  int64_t rows() const { return shape.empty() ? 1 : size() / cols(); }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }
  bool all_finite() const {
    for (double v : data)
      if (!std::isfinite(v)) return false;
    return true;
  }

  double& operator[](int64_t i) { return data[static_cast<size_t>(i)]; }
  double operator[](int64_t i) const { return data[static_cast<size_t>(i)]; }
};

int64_t shape_size(const std::vector<int64_t>& shape);

// In-place and out-of-place helpers for optimizer/EMA style math.
void add_inplace(Tensor& a, const Tensor& b);
void axpy(double alpha, const Tensor& x, Tensor& y);  // y += alpha * x
void scale_inplace(Tensor& a, double c);
double dot(const Tensor& a, const Tensor& b);
double norm2(const Tensor& a);  // Euclidean norm

// Plain matmul kernels shared by forward ops and backward rules.
// a: [m,k] b: [k,n] -> [m,n]
Tensor matmul_nn(const Tensor& a, const Tensor& b);
// a: [m,k] b: [n,k] -> [m,n]  (b transposed)
Tensor matmul_nt(const Tensor& a, const Tensor& b);
// a: [k,m] b: [k,n] -> [m,n]  (a transposed)
Tensor matmul_tn(const Tensor& a, const Tensor& b);

void require_same_shape(const Tensor& a, const Tensor& b, const char* where);

}  // namespace cfm
