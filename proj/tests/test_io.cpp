#include "doctest.h"

#include <filesystem>
#include <fstream>
#include <numbers>
#include <random>

#include "oracles.hpp"
#include "ptycholab/io.hpp"

using namespace ptycholab;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir() {
  fs::path d = fs::temp_directory_path() / "ptycholab_io_test";
  fs::create_directories(d);
  return d;
}

std::string slurp(const fs::path &p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST_CASE("real tensor round trip is bit exact") {
  fs::path p = temp_dir() / "real.ptyt";
  RealTensor t({3, 4, 5});
  std::mt19937_64 rng(1);
  std::normal_distribution<double> g;
  for (auto &v : t.data) v = g(rng);
  t.data[0] = 0.1;  // not exactly representable; must survive unchanged
  io::write_tensor(p, t);
  RealTensor back = io::read_real_tensor(p);
  REQUIRE(back.shape == t.shape);
  for (std::size_t i = 0; i < t.size(); ++i) CHECK(back.data[i] == t.data[i]);
}

TEST_CASE("complex grid round trip is bit exact") {
  fs::path p = temp_dir() / "complex.ptyt";
  ComplexGrid g = oracles::random_grid(6, 9, 2);
  io::write_tensor(p, g);
  ComplexGrid back = io::read_complex_grid(p);
  REQUIRE(back.height == g.height);
  REQUIRE(back.width == g.width);
  for (std::size_t i = 0; i < g.size(); ++i) CHECK(back.data[i] == g.data[i]);
}

TEST_CASE("rewriting identical content produces identical bytes") {
  fs::path a = temp_dir() / "a.ptyt";
  fs::path b = temp_dir() / "b.ptyt";
  ComplexGrid g = oracles::random_grid(4, 4, 3);
  io::write_tensor(a, g);
  io::write_tensor(b, g);
  CHECK(slurp(a) == slurp(b));
  CHECK(slurp(a).substr(0, 4) == "PTYT");
}

TEST_CASE("dtype confusion is rejected") {
  fs::path p = temp_dir() / "typed.ptyt";
  io::write_tensor(p, RealTensor({2, 2}, 1.0));
  CHECK_THROWS_AS(io::read_complex_grid(p), io::IoError);
  io::write_tensor(p, ComplexGrid(2, 2));
  CHECK_THROWS_AS(io::read_real_tensor(p), io::IoError);
}

TEST_CASE("corrupt headers are rejected") {
  fs::path p = temp_dir() / "bad.ptyt";
  io::write_text(p, "NOPE this is not a tensor");
  CHECK_THROWS_AS(io::read_real_tensor(p), io::IoError);
  CHECK_THROWS_AS(io::read_real_tensor(temp_dir() / "missing.ptyt"), io::IoError);
  // truncated payload
  ComplexGrid g = oracles::random_grid(4, 4, 4);
  io::write_tensor(p, g);
  std::string bytes = slurp(p);
  io::write_text(p, bytes.substr(0, bytes.size() - 8));
  CHECK_THROWS_AS(io::read_complex_grid(p), io::IoError);
}

TEST_CASE("pgm16 round trip within quantization") {
  fs::path p = temp_dir() / "map.pgm";
  RealTensor t({5, 7});
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(-2.0, 3.0);
  for (auto &v : t.data) v = u(rng);
  io::write_pgm16(p, t, -2.0, 3.0);
  RealTensor back = io::read_pgm16(p);
  REQUIRE(back.shape == t.shape);
  double step = 5.0 / 65535.0;
  for (std::size_t i = 0; i < t.size(); ++i)
    CHECK(std::abs(back.data[i] - t.data[i]) <= 0.5 * step + 1e-12);
}

TEST_CASE("pgm16 writes a P5 header with maxval 65535") {
  fs::path p = temp_dir() / "hdr.pgm";
  io::write_pgm16(p, RealTensor({2, 3}, 0.5), 0.0, 1.0);
  std::string bytes = slurp(p);
  CHECK(bytes.find("P5") == 0);
  CHECK(bytes.find("3 2") != std::string::npos);
  CHECK(bytes.find("65535") != std::string::npos);
  CHECK(fs::exists(p.string() + ".scale"));
}

TEST_CASE("export_image phase of a real positive field is mid gray") {
  fs::path stem = temp_dir() / "img";
  ComplexGrid g(4, 4, {1.0, 0.0});
  g.at(0, 0) = {2.0, 0.0};  // non-constant magnitude so min-max is defined
  io::export_image(stem, g);
  RealTensor phase = io::read_pgm16(fs::path(stem.string() + "_phase.pgm"));
  // phase 0 on the [-pi, pi] ramp sits at the midpoint
  for (double v : phase.data) CHECK(v == doctest::Approx(0.0).epsilon(1e-3));
  RealTensor mag = io::read_pgm16(fs::path(stem.string() + "_mag.pgm"));
  CHECK(mag.data[0] == doctest::Approx(2.0).epsilon(1e-3));
}

TEST_CASE("text round trip and fnv1a") {
  fs::path p = temp_dir() / "note.txt";
  std::string body = "line one\nline two\n";
  io::write_text(p, body);
  CHECK(io::read_text(p) == body);
  // published FNV-1a 64-bit test vectors
  CHECK(io::fnv1a("") == 0xcbf29ce484222325ULL);
  CHECK(io::fnv1a("a") == 0xaf63dc4c8601ec8cULL);
  CHECK(io::fnv1a("foobar") == 0x85944171f73967e8ULL);
}
