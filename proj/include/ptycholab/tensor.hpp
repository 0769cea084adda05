#pragma once

#include <complex>
#include <cstddef>
#include <stdexcept>
#include <vector>

namespace ptycholab {

using cdouble = std::complex<double>;

struct DimensionError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Dense row-major real tensor, 64-bit floats.
struct RealTensor {
  std::vector<std::size_t> shape;
  std::vector<double> data;

  RealTensor() = default;
  explicit RealTensor(std::vector<std::size_t> dims, double fill = 0.0);

  std::size_t size() const { return data.size(); }
  double &operator[](std::size_t i) { return data[i]; }
  double operator[](std::size_t i) const { return data[i]; }

  // 2-D accessors (valid when shape.size() == 2)
  std::size_t rows() const { return shape[0]; }
  std::size_t cols() const { return shape[1]; }
  double &at(std::size_t r, std::size_t c) { return data[r * cols() + c]; }
  double at(std::size_t r, std::size_t c) const { return data[r * cols() + c]; }

  bool same_shape(const RealTensor &o) const { return shape == o.shape; }
};

// 2-D complex field. Interleaved (re, im) storage via std::complex.
struct ComplexGrid {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<cdouble> data;

  ComplexGrid() = default;
  ComplexGrid(std::size_t h, std::size_t w, cdouble fill = {0.0, 0.0})
      : height(h), width(w), data(h * w, fill) {}

  std::size_t size() const { return data.size(); }
  cdouble &at(std::size_t r, std::size_t c) { return data[r * width + c]; }
  cdouble at(std::size_t r, std::size_t c) const { return data[r * width + c]; }
  bool same_shape(const ComplexGrid &o) const {
    return height == o.height && width == o.width;
  }
};

// Unitary 2-D FFT; dims must be powers of two.
ComplexGrid fft2(const ComplexGrid &g);
ComplexGrid ifft2(const ComplexGrid &g);

// Elementwise suite.
ComplexGrid add(const ComplexGrid &a, const ComplexGrid &b);
ComplexGrid sub(const ComplexGrid &a, const ComplexGrid &b);
ComplexGrid mul(const ComplexGrid &a, const ComplexGrid &b);
// conj(a) * b elementwise
ComplexGrid conj_mul(const ComplexGrid &a, const ComplexGrid &b);
// sqrt(re^2 + im^2 + eps^2) per pixel
RealTensor abs(const ComplexGrid &g, double eps = 0.0);
// g / abs(g, eps)
ComplexGrid phase_unit(const ComplexGrid &g, double eps);
ComplexGrid scale(const ComplexGrid &g, cdouble s);
// multiply complex grid by a real map, elementwise
ComplexGrid mul_real(const ComplexGrid &g, const RealTensor &m);
double max_abs2_reduce(const ComplexGrid &g);

double norm2(const ComplexGrid &g);   // sqrt(sum |g|^2)
cdouble inner(const ComplexGrid &a, const ComplexGrid &b);  // sum conj(a)*b
double norm2(const RealTensor &t);

bool is_pow2(std::size_t n);

}  // namespace ptycholab
