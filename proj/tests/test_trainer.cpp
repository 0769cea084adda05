#include "doctest.h"

#include <filesystem>
#include <numbers>
#include <random>

#include "oracles.hpp"
#include "ptycholab/io.hpp"
#include "ptycholab/trainer.hpp"

using namespace ptycholab;
namespace fs = std::filesystem;

namespace {

TrainConfig smoke_config() {
  TrainConfig cfg;
  cfg.train_count = 4;
  cfg.val_count = 2;
  cfg.image_side = 16;
  cfg.patch_side = 8;
  cfg.patterns = {{4, 4}};
  cfg.unroll_depth = 1;
  cfg.learning_rate = 2e-3;
  cfg.epochs = 50;
  cfg.seed = 9;
  cfg.vit.token_dim = 4;
  cfg.vit.depth = 1;
  cfg.vit.heads = 2;
  cfg.vit.mlp_ratio = 2;
  cfg.vit.pos_bands = 2;
  cfg.vit.patch_side = 8;
  return cfg;
}

fs::path temp_dir(const std::string &leaf) {
  fs::path d = fs::temp_directory_path() / "ptycholab_trainer_test" / leaf;
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

}  // namespace

TEST_CASE("gen_sample is deterministic and respects magnitude/phase ranges") {
  GroundTruthSample a = gen_sample(16, 5, 3);
  GroundTruthSample b = gen_sample(16, 5, 3);
  CHECK(oracles::max_abs_diff(a.image, b.image) == 0.0);
  CHECK(a.seed == 5);
  CHECK(a.index == 3);
  for (const auto &v : a.image.data) {
    double mag = std::abs(v);
    CHECK(mag >= 0.5 - 1e-12);
    CHECK(mag <= 1.0 + 1e-12);
    double ph = std::arg(v);
    CHECK(ph >= -std::numbers::pi / 2.0 - 1e-12);
    CHECK(ph <= std::numbers::pi / 2.0 + 1e-12);
  }
  // spans are realized (min-max normalization hits both ends)
  double lo = 2.0, hi = 0.0;
  for (const auto &v : a.image.data) {
    lo = std::min(lo, std::abs(v));
    hi = std::max(hi, std::abs(v));
  }
  CHECK(lo == doctest::Approx(0.5));
  CHECK(hi == doctest::Approx(1.0));
}

TEST_CASE("gen_sample varies with seed and index") {
  CHECK(oracles::max_abs_diff(gen_sample(16, 1, 0).image, gen_sample(16, 1, 1).image) > 1e-3);
  CHECK(oracles::max_abs_diff(gen_sample(16, 1, 0).image, gen_sample(16, 2, 0).image) > 1e-3);
}

TEST_CASE("gen_dataset enumerates gen_sample") {
  auto ds = gen_dataset(3, 16, 7);
  REQUIRE(ds.size() == 3);
  for (std::uint64_t i = 0; i < 3; ++i)
    CHECK(oracles::max_abs_diff(ds[i].image, gen_sample(16, 7, i).image) == 0.0);
  CHECK_THROWS_AS(gen_dataset(0, 16, 7), ContractError);
}

TEST_CASE("adam_step") {
  SUBCASE("zero gradient leaves parameters unchanged") {
    ParamSet p;
    p.add("w", RealTensor({3}, 1.5));
    AdamState st;
    std::map<std::string, RealTensor> g{{"w", RealTensor({3}, 0.0)}};
    adam_step(st, p, g, 0.1);
    for (double v : p.get("w").data) CHECK(v == 1.5);
  }
  SUBCASE("first step moves by ~lr in the gradient sign direction") {
    ParamSet p;
    p.add("w", RealTensor({1}, 2.0));
    AdamState st;
    std::map<std::string, RealTensor> g{{"w", RealTensor({1}, 0.3)}};
    adam_step(st, p, g, 0.01);
    // mhat = g, vhat = g^2 -> update = lr * g / (|g| + eps) ~ lr
    CHECK(p.get("w").data[0] == doctest::Approx(2.0 - 0.01).epsilon(1e-6));
  }
  SUBCASE("is deterministic across identical runs") {
    auto run = [] {
      ParamSet p;
      p.add("w", RealTensor({4}, 0.7));
      AdamState st;
      std::mt19937_64 rng(11);
      std::normal_distribution<double> gau;
      for (int k = 0; k < 5; ++k) {
        RealTensor g({4});
        for (auto &v : g.data) v = gau(rng);
        adam_step(st, p, {{"w", g}}, 0.05);
      }
      return p.get("w").data;
    };
    CHECK(run() == run());
  }
  SUBCASE("missing or misshapen gradients are rejected") {
    ParamSet p;
    p.add("w", RealTensor({2}, 0.0));
    AdamState st;
    CHECK_THROWS_AS(adam_step(st, p, {}, 0.1), ContractError);
    std::map<std::string, RealTensor> bad{{"w", RealTensor({3}, 0.0)}};
    CHECK_THROWS_AS(adam_step(st, p, bad, 0.1), DimensionError);
  }
}

TEST_CASE("TrainConfig validation") {
  TrainConfig cfg = smoke_config();
  cfg.patterns.clear();
  CHECK_THROWS_AS(cfg.validate(), ContractError);
  cfg = smoke_config();
  cfg.learning_rate = 0.0;
  CHECK_THROWS_AS(cfg.validate(), ContractError);
  cfg = smoke_config();
  cfg.patch_side = 6;
  CHECK_THROWS_AS(cfg.validate(), ContractError);
}

TEST_CASE("simulate_measurements wires pattern and noise settings through") {
  ComplexGrid truth = gen_sample(16, 3, 0).image;
  Probe probe = make_probe("A", 8, 3);
  Measured clean = simulate_measurements(truth, probe, {4, 4}, 8, std::nullopt, 0);
  CHECK(clean.data.count() == 4);
  CHECK_FALSE(clean.data.noise.poisson);
  Measured noisy = simulate_measurements(truth, probe, {4, 4}, 8, 1e5, 42);
  CHECK(noisy.data.noise.poisson);
  CHECK(noisy.data.noise.peak_rate == 1e5);
  CHECK(noisy.data.noise.seed == 42);
  // same seed reproduces, different seed does not
  Measured noisy2 = simulate_measurements(truth, probe, {4, 4}, 8, 1e5, 42);
  Measured noisy3 = simulate_measurements(truth, probe, {4, 4}, 8, 1e5, 43);
  CHECK(noisy.data.amplitudes[0].data == noisy2.data.amplitudes[0].data);
  CHECK(noisy.data.amplitudes[0].data != noisy3.data.amplitudes[0].data);
}

TEST_CASE("training overfits a tiny dataset") {
  TrainConfig cfg = smoke_config();
  TrainResult res = train(cfg);
  REQUIRE(res.log.size() == cfg.epochs);
  CHECK(res.log.back().train_loss < 0.5 * res.log.front().train_loss);
  std::string csv = res.log_csv();
  CHECK(csv.find("epoch,train_loss,val_nrmse,seconds") == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') ==
        static_cast<long>(cfg.epochs) + 1);
}

TEST_CASE("training is bit-reproducible for a fixed seed") {
  TrainConfig cfg = smoke_config();
  cfg.epochs = 2;
  TrainResult a = train(cfg);
  TrainResult b = train(cfg);
  REQUIRE(a.model.params.params.size() == b.model.params.params.size());
  for (std::size_t i = 0; i < a.model.params.params.size(); ++i)
    CHECK(a.model.params.params[i].second.data == b.model.params.params[i].second.data);
  CHECK(a.log.back().train_loss == b.log.back().train_loss);
}

TEST_CASE("checkpoint round trip") {
  TrainConfig cfg = smoke_config();
  cfg.epochs = 1;
  TrainResult res = train(cfg);
  fs::path dir = temp_dir("roundtrip");
  checkpoint_save(res.model, dir);
  PtychoDVModel loaded = checkpoint_load(dir);

  REQUIRE(loaded.params.params.size() == res.model.params.params.size());
  for (std::size_t i = 0; i < loaded.params.params.size(); ++i) {
    CHECK(loaded.params.params[i].first == res.model.params.params[i].first);
    CHECK(loaded.params.params[i].second.data == res.model.params.params[i].second.data);
  }
  CHECK(loaded.gamma == res.model.gamma);
  CHECK(loaded.unroll_depth == res.model.unroll_depth);

  // identical inference after the round trip
  ComplexGrid truth = gen_sample(cfg.image_side, 77, 0).image;
  Probe probe = make_probe("A", cfg.patch_side, 77);
  Measured meas = simulate_measurements(truth, probe, cfg.patterns[0], cfg.patch_side,
                                        std::nullopt, 0);
  InferenceResult ia = infer(res.model, meas.data, probe, meas.grid);
  InferenceResult ib = infer(loaded, meas.data, probe, meas.grid);
  CHECK(oracles::max_abs_diff(ia.image, ib.image) == 0.0);

  // re-saving produces byte-identical files
  fs::path dir2 = temp_dir("roundtrip2");
  checkpoint_save(loaded, dir2);
  for (const auto &entry : fs::directory_iterator(dir)) {
    std::string name = entry.path().filename().string();
    CHECK(io::read_text(entry.path()) == io::read_text(dir2 / name));
  }
}

TEST_CASE("checkpoint_load rejects tampered manifests") {
  TrainConfig cfg = smoke_config();
  PtychoDVModel model = PtychoDVModel::create(cfg.vit, cfg.unroll_depth, 1, 8);
  fs::path dir = temp_dir("tamper");
  checkpoint_save(model, dir);

  std::string manifest = io::read_text(dir / "manifest.json");
  SUBCASE("unknown format string") {
    std::string bad = manifest;
    bad.replace(bad.find("ptycholab-checkpoint-v1"), 23, "ptycholab-checkpoint-v9");
    io::write_text(dir / "manifest.json", bad);
    CHECK_THROWS_AS(checkpoint_load(dir), io::IoError);
  }
  SUBCASE("architecture mismatch") {
    std::string bad = manifest;
    auto pos = bad.find("\"depth\": 1");
    REQUIRE(pos != std::string::npos);
    bad.replace(pos, 10, "\"depth\": 2");
    io::write_text(dir / "manifest.json", bad);
    CHECK_THROWS_AS(checkpoint_load(dir), io::IoError);
  }
  SUBCASE("missing parameter file") {
    fs::remove(dir / "dec.l2.w.ptyt");
    CHECK_THROWS_AS(checkpoint_load(dir), io::IoError);
  }
}
