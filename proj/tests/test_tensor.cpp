#include "doctest.h"

#include "oracles.hpp"
#include "ptycholab/tensor.hpp"

using namespace ptycholab;

TEST_CASE("fft2 concentrates a constant grid in the DC bin") {
  double c = 2.5;
  ComplexGrid g(4, 4, {c, 0.0});
  ComplexGrid f = fft2(g);
  CHECK(f.at(0, 0).real() == doctest::Approx(4.0 * c).epsilon(1e-14));
  CHECK(f.at(0, 0).imag() == doctest::Approx(0.0).epsilon(1e-14));
  for (std::size_t i = 1; i < f.size(); ++i) CHECK(std::abs(f.data[i]) < 1e-13);
}

TEST_CASE("ifft2(fft2(g)) round trip") {
  ComplexGrid g = oracles::random_grid(16, 16, 1);
  ComplexGrid back = ifft2(fft2(g));
  double ref = 0.0;
  for (const auto &v : g.data) ref = std::max(ref, std::abs(v));
  CHECK(oracles::max_abs_diff(back, g) <= 1e-12 * ref);
}

TEST_CASE("Parseval on random grids") {
  for (std::uint64_t s = 0; s < 10; ++s) {
    ComplexGrid g = oracles::random_grid(32, 32, 100 + s);
    CHECK(std::abs(norm2(fft2(g)) - norm2(g)) <= 1e-10 * norm2(g));
  }
}

TEST_CASE("fft2 matches the direct DFT oracle on 8x8") {
  ComplexGrid g = oracles::random_grid(8, 8, 7);
  CHECK(oracles::max_abs_diff(fft2(g), oracles::dft2(g)) < 1e-10);
}

TEST_CASE("ifft2 of a delta is a constant 1/8 grid") {
  ComplexGrid g(8, 8);
  g.at(0, 0) = {1.0, 0.0};
  ComplexGrid out = ifft2(g);
  for (const auto &v : out.data) {
    CHECK(v.real() == doctest::Approx(0.125).epsilon(1e-13));
    CHECK(std::abs(v.imag()) < 1e-13);
  }
}

TEST_CASE("fft2 adjoint identity <fft2(a), b> = <a, ifft2(b)>") {
  ComplexGrid a = oracles::random_grid(16, 16, 21);
  ComplexGrid b = oracles::random_grid(16, 16, 22);
  cdouble lhs = inner(fft2(a), b);
  cdouble rhs = inner(a, ifft2(b));
  CHECK(std::abs(lhs - rhs) < 1e-12 * std::abs(lhs));
}

TEST_CASE("ifft2 of zeros is zeros") {
  ComplexGrid z(8, 8);
  for (const auto &v : ifft2(z).data) CHECK(v == cdouble(0.0, 0.0));
}

TEST_CASE("fft2 rejects non-power-of-two dims") {
  CHECK_THROWS_AS(fft2(ComplexGrid(6, 8)), DimensionError);
}

TEST_CASE("elementwise examples") {
  ComplexGrid g(1, 1, {3.0, 4.0});
  ComplexGrid u = phase_unit(g, 0.0);
  CHECK(u.at(0, 0).real() == doctest::Approx(0.6));
  CHECK(u.at(0, 0).imag() == doctest::Approx(0.8));

  ComplexGrid zero(1, 1, {0.0, 0.0});
  CHECK(abs(zero, 1e-8).data[0] == doctest::Approx(1e-8));

  ComplexGrid two(1, 2);
  two.at(0, 0) = {1.0, 0.0};
  two.at(0, 1) = {0.0, 2.0};
  CHECK(max_abs2_reduce(two) == doctest::Approx(4.0));
}

TEST_CASE("binary ops reject shape mismatch") {
  CHECK_THROWS_AS(add(ComplexGrid(2, 2), ComplexGrid(2, 4)), DimensionError);
  CHECK_THROWS_AS(mul(ComplexGrid(2, 2), ComplexGrid(4, 2)), DimensionError);
}

TEST_CASE("conj_mul matches manual conjugate product") {
  ComplexGrid a(1, 1, {1.0, 2.0}), b(1, 1, {3.0, -1.0});
  cdouble expect = std::conj(cdouble(1.0, 2.0)) * cdouble(3.0, -1.0);
  CHECK(conj_mul(a, b).at(0, 0) == expect);
}
