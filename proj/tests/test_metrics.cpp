#include "doctest.h"

#include <numbers>
#include <random>

#include "oracles.hpp"
#include "ptycholab/metrics.hpp"
#include "ptycholab/ptycho.hpp"

using namespace ptycholab;

TEST_CASE("align_phase recovers a known rotation") {
  ComplexGrid x = oracles::random_grid(8, 8, 1);
  for (double theta : {0.0, 0.3, -2.0, 3.0}) {
    ComplexGrid xhat = scale(x, std::polar(1.0, theta));
    CHECK(align_phase(xhat, x) == doctest::Approx(theta).epsilon(1e-12));
  }
}

TEST_CASE("align_phase beats a dense grid search") {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 5; ++trial) {
    ComplexGrid x = oracles::random_grid(8, 8, 10 + trial);
    ComplexGrid xhat = oracles::random_grid(8, 8, 20 + trial);
    double theta = align_phase(xhat, x);
    auto cost = [&](double t) {
      cdouble rot = std::polar(1.0, t);
      double e = 0.0;
      for (std::size_t i = 0; i < x.size(); ++i)
        e += std::norm(xhat.data[i] - rot * x.data[i]);
      return e;
    };
    double best = cost(theta);
    for (int k = 0; k < 10000; ++k) {
      double t = -std::numbers::pi + 2.0 * std::numbers::pi * k / 10000.0;
      CHECK(best <= cost(t) + 1e-12);
    }
  }
}

TEST_CASE("align_phase rejects a zero reference") {
  ComplexGrid x(4, 4);
  ComplexGrid xhat = oracles::random_grid(4, 4, 3);
  CHECK_THROWS_AS(align_phase(xhat, x), ContractError);
}

TEST_CASE("nrmse basics") {
  ComplexGrid x = oracles::random_grid(8, 8, 4);
  CHECK(nrmse(x, x) == doctest::Approx(0.0));
  CHECK(nrmse(ComplexGrid(8, 8), x) == doctest::Approx(1.0));
  for (int k = 0; k < 10; ++k) {
    double phi = -3.0 + 0.61 * k;
    CHECK(nrmse(scale(x, std::polar(1.0, phi)), x) < 1e-12);
  }
}

TEST_CASE("nrmse is invariant to global phase on the estimate") {
  ComplexGrid x = oracles::random_grid(8, 8, 5);
  ComplexGrid xhat = oracles::random_grid(8, 8, 6);
  double base = nrmse(xhat, x);
  for (double phi : {0.4, 1.9, -2.7})
    CHECK(nrmse(scale(xhat, std::polar(1.0, phi)), x) == doctest::Approx(base).epsilon(1e-12));
}

TEST_CASE("nrmse triangle bound") {
  ComplexGrid x = oracles::random_grid(8, 8, 7);
  ComplexGrid xhat = oracles::random_grid(8, 8, 8);
  CHECK(nrmse(xhat, x) <= (norm2(xhat) + norm2(x)) / norm2(x) + 1e-12);
}

TEST_CASE("masked nrmse ignores excluded pixels") {
  ComplexGrid x = oracles::random_grid(8, 8, 9);
  ComplexGrid xhat = x;
  xhat.at(0, 0) += cdouble(100.0, 0.0);  // corrupt one pixel
  RealTensor mask({8, 8}, 1.0);
  mask.at(0, 0) = 0.0;
  CHECK(nrmse(xhat, x) > 1.0);
  CHECK(nrmse(xhat, x, &mask) < 1e-12);
}

TEST_CASE("nrmse mask shape mismatch is rejected") {
  ComplexGrid x = oracles::random_grid(8, 8, 10);
  RealTensor mask({4, 4}, 1.0);
  CHECK_THROWS_AS(nrmse(x, x, &mask), DimensionError);
}

TEST_CASE("MethodStats mean and population stddev") {
  MethodStats s;
  s.label = "toy";
  s.nrmse_values = {0.1, 0.2, 0.3, 0.4};
  CHECK(s.mean() == doctest::Approx(0.25));
  CHECK(s.stddev() == doctest::Approx(std::sqrt(0.0125)));
  MethodStats empty;
  CHECK_THROWS_AS(empty.mean(), ContractError);
}

TEST_CASE("report formatting") {
  MethodStats s;
  s.label = "wf";
  s.nrmse_values = {0.1, 0.2};
  s.seconds_per_image = 1.5;
  std::string row = format_row(s);
  CHECK(row.find("0.150") != std::string::npos);
  CHECK(row.find("0.050") != std::string::npos);
  CHECK(row.find("(1.500)") != std::string::npos);

  std::string csv = report_csv({s});
  CHECK(csv.find("method,mean_nrmse,std_nrmse,seconds_per_image\n") == 0);
  CHECK(csv.find("wf,0.15") != std::string::npos);
  CHECK_THROWS_AS(report_csv({}), ContractError);
}
