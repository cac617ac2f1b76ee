#include "cfm/tensor.hpp"

#include <string>

namespace cfm {

int64_t shape_size(const std::vector<int64_t>& shape) {
  int64_t n = 1;
  for (int64_t d : shape) n *= d;
  return n;
}

Tensor Tensor::zeros(std::vector<int64_t> shp) {
  int64_t n = shape_size(shp);
  return Tensor(std::move(shp), std::vector<double>(static_cast<size_t>(n), 0.0));
}

Tensor Tensor::full(std::vector<int64_t> shp, double v) {
  int64_t n = shape_size(shp);
  return Tensor(std::move(shp), std::vector<double>(static_cast<size_t>(n), v));
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* where) {
  if (!a.same_shape(b))
    throw ShapeMismatch(std::string(where) + ": operand shapes differ");
}

void add_inplace(Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add_inplace");
  for (size_t i = 0; i < a.data.size(); ++i) a.data[i] += b.data[i];
}

void axpy(double alpha, const Tensor& x, Tensor& y) {
  require_same_shape(x, y, "axpy");
  for (size_t i = 0; i < x.data.size(); ++i) y.data[i] += alpha * x.data[i];
}

void scale_inplace(Tensor& a, double c) {
  for (double& v : a.data) v *= c;
}

double dot(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "dot");
  double s = 0.0;
  for (size_t i = 0; i < a.data.size(); ++i) s += a.data[i] * b.data[i];
  return s;
}

double norm2(const Tensor& a) { return std::sqrt(dot(a, a)); }

Tensor matmul_nn(const Tensor& a, const Tensor& b) {
  int64_t m = a.rows(), k = a.cols(), k2 = b.rows(), n = b.cols();
  if (k != k2) throw ShapeMismatch("matmul_nn: inner dimensions differ");
  Tensor out = Tensor::zeros({m, n});
  for (int64_t i = 0; i < m; ++i) {
    const double* arow = a.data.data() + i * k;
    double* orow = out.data.data() + i * n;
    for (int64_t p = 0; p < k; ++p) {
      double av = arow[p];
      if (av == 0.0) continue;
      const double* brow = b.data.data() + p * n;
      for (int64_t j = 0; j < n; ++j) orow[j] += av * brow[j];
    }
  }
  return out;
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  int64_t m = a.rows(), k = a.cols(), n = b.rows(), k2 = b.cols();
  if (k != k2) throw ShapeMismatch("matmul_nt: inner dimensions differ");
  Tensor out = Tensor::zeros({m, n});
  for (int64_t i = 0; i < m; ++i) {
    const double* arow = a.data.data() + i * k;
    double* orow = out.data.data() + i * n;
    for (int64_t j = 0; j < n; ++j) {
      const double* brow = b.data.data() + j * k;
      double s = 0.0;
      for (int64_t p = 0; p < k; ++p) s += arow[p] * brow[p];
      orow[j] += s;
    }
  }
  return out;
}

Tensor matmul_tn(const Tensor& a, const Tensor& b) {
  int64_t k = a.rows(), m = a.cols(), k2 = b.rows(), n = b.cols();
  if (k != k2) throw ShapeMismatch("matmul_tn: inner dimensions differ");
  Tensor out = Tensor::zeros({m, n});
  for (int64_t p = 0; p < k; ++p) {
    const double* arow = a.data.data() + p * m;
    const double* brow = b.data.data() + p * n;
    for (int64_t i = 0; i < m; ++i) {
      double av = arow[i];
      if (av == 0.0) continue;
      double* orow = out.data.data() + i * n;
      for (int64_t j = 0; j < n; ++j) orow[j] += av * brow[j];
    }
  }
  return out;
}

}  // namespace cfm
