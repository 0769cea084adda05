#include "ptycholab/trainer.hpp"

#include <chrono>
#include <cmath>
#include <numbers>
#include <random>
#include <sstream>

#include "ptycholab/io.hpp"
#include "ptycholab/metrics.hpp"
#include "ptycholab/solvers.hpp"

#include "json.hpp"

namespace ptycholab {

void TrainConfig::validate() const {
  if (train_count < 1 || val_count < 1) throw ContractError("TrainConfig: empty dataset");
  if (learning_rate <= 0.0) throw ContractError("TrainConfig: learning rate must be > 0");
  if (patterns.empty()) throw ContractError("TrainConfig: no sampling patterns");
  if (!is_pow2(patch_side)) throw ContractError("TrainConfig: patch side must be a power of two");
  vit.validate();
}

namespace {

std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
  std::uint64_t z = a + 0x9e3779b97f4a7c15ULL * (b + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace

GroundTruthSample gen_sample(std::size_t image_side, std::uint64_t seed,
                             std::uint64_t index) {
  std::mt19937_64 rng(mix(seed, index));
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::size_t n = image_side;
  ComplexGrid field(n, n);
  for (auto &v : field.data) v = cdouble(gauss(rng), gauss(rng));
  // low-pass in the Fourier domain; cutoff ~ 1/8 of the band
  ComplexGrid spec = fft2(field);
  double fc = static_cast<double>(n) / 8.0;
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < n; ++c) {
      double fr = r <= n / 2 ? static_cast<double>(r) : static_cast<double>(r) - static_cast<double>(n);
      double fcn = c <= n / 2 ? static_cast<double>(c) : static_cast<double>(c) - static_cast<double>(n);
      double f2 = (fr * fr + fcn * fcn) / (fc * fc);
      spec.at(r, c) *= std::exp(-f2);
    }
  ComplexGrid smooth = ifft2(spec);
  double re_lo = smooth.data[0].real(), re_hi = re_lo;
  double im_lo = smooth.data[0].imag(), im_hi = im_lo;
  for (const auto &v : smooth.data) {
    re_lo = std::min(re_lo, v.real());
    re_hi = std::max(re_hi, v.real());
    im_lo = std::min(im_lo, v.imag());
    im_hi = std::max(im_hi, v.imag());
  }
  double re_span = re_hi > re_lo ? re_hi - re_lo : 1.0;
  double im_span = im_hi > im_lo ? im_hi - im_lo : 1.0;
  GroundTruthSample sample;
  sample.image = ComplexGrid(n, n);
  sample.seed = seed;
  sample.index = index;
  for (std::size_t j = 0; j < smooth.size(); ++j) {
    double u = (smooth.data[j].real() - re_lo) / re_span;
    double w = (smooth.data[j].imag() - im_lo) / im_span;
    double mag = 0.5 + 0.5 * u;
    double phase = -std::numbers::pi / 2.0 + std::numbers::pi * w;
    sample.image.data[j] = mag * cdouble(std::cos(phase), std::sin(phase));
  }
  return sample;
}

std::vector<GroundTruthSample> gen_dataset(std::size_t count, std::size_t image_side,
                                           std::uint64_t seed) {
  if (count < 1) throw ContractError("gen_dataset: count must be >= 1");
  std::vector<GroundTruthSample> out;
  out.reserve(count);
  for (std::uint64_t i = 0; i < count; ++i) out.push_back(gen_sample(image_side, seed, i));
  return out;
}

void adam_step(AdamState &state, ParamSet &params,
               const std::map<std::string, RealTensor> &grads, double lr) {
  state.step += 1;
  double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  for (auto &[name, p] : params.params) {
    auto it = grads.find(name);
    if (it == grads.end())
      throw ContractError("adam_step: missing gradient for " + name);
    const RealTensor &g = it->second;
    if (!g.same_shape(p)) throw DimensionError("adam_step: gradient shape for " + name);
    RealTensor &m = state.m.try_emplace(name, RealTensor(p.shape, 0.0)).first->second;
    RealTensor &v = state.v.try_emplace(name, RealTensor(p.shape, 0.0)).first->second;
    for (std::size_t i = 0; i < p.size(); ++i) {
      m.data[i] = state.beta1 * m.data[i] + (1.0 - state.beta1) * g.data[i];
      v.data[i] = state.beta2 * v.data[i] + (1.0 - state.beta2) * g.data[i] * g.data[i];
      double mhat = m.data[i] / bc1;
      double vhat = v.data[i] / bc2;
      p.data[i] -= lr * mhat / (std::sqrt(vhat) + state.eps);
    }
  }
}

Measured simulate_measurements(const ComplexGrid &truth, const Probe &probe,
                               const PatternSpec &pattern, std::size_t patch_side,
                               std::optional<double> peak_rate,
                               std::uint64_t noise_seed) {
  Measured out;
  out.grid = make_scan_grid(truth.height, patch_side, pattern.n_locations, pattern.spacing);
  auto amplitudes = forward_amplitudes(truth, probe, out.grid);
  out.data = peak_rate ? detect_poisson(amplitudes, out.grid, *peak_rate, noise_seed)
                       : detect_noise_free(amplitudes, out.grid);
  return out;
}

std::string TrainResult::log_csv() const {
  std::ostringstream os;
  os << "epoch,train_loss,val_nrmse,seconds\n";
  os.precision(12);
  for (const auto &e : log)
    os << e.epoch << "," << e.train_loss << "," << e.val_nrmse << "," << e.seconds << "\n";
  return os.str();
}

TrainResult train(const TrainConfig &cfg) {
  cfg.validate();
  Probe probe = make_probe(cfg.probe_kind, cfg.patch_side, mix(cfg.seed, 0xA11CE));
  ViTConfig vit = cfg.vit;
  vit.patch_side = cfg.patch_side;
  PtychoDVModel model =
      PtychoDVModel::create(vit, cfg.unroll_depth, mix(cfg.seed, 0x90DE1));
  model.eps = 1e-8;

  // gamma is pattern-dependent; precompute per pattern
  std::vector<ScanGrid> grids;
  std::vector<double> gammas;
  for (const auto &p : cfg.patterns) {
    grids.push_back(make_scan_grid(cfg.image_side, cfg.patch_side, p.n_locations, p.spacing));
    gammas.push_back(wf_step_size(probe, grids.back()));
  }

  AdamState adam;
  TrainResult result;
  auto start = std::chrono::steady_clock::now();
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    double loss_sum = 0.0;
    for (std::size_t s = 0; s < cfg.train_count; ++s) {
      GroundTruthSample sample = gen_sample(cfg.image_side, cfg.seed, s);
      std::size_t pi = s % cfg.patterns.size();
      std::uint64_t noise_seed = mix(cfg.seed, 0xD07 + s);
      Measured meas = simulate_measurements(sample.image, probe, cfg.patterns[pi],
                                            cfg.patch_side, cfg.peak_rate, noise_seed);
      model.gamma = gammas[pi];
      ad::Tape tape;
      BoundParams bound = BoundParams::bind(tape, model.params);
      ModelOutput out = model_forward(tape, bound, model, meas.data, probe, meas.grid);
      ad::Var loss = model_loss(tape, out, sample.image, meas.grid, cfg.lambda);
      double loss_val = loss.value().data[0];
      if (!std::isfinite(loss_val))
        throw ContractError("train: non-finite loss at sample index " +
                            std::to_string(s) + " (seed " + std::to_string(cfg.seed) + ")");
      loss_sum += loss_val;
      auto grads_by_id = tape.backward(loss);
      std::map<std::string, RealTensor> grads;
      for (const auto &[id, name] : bound.names_by_id)
        grads.emplace(name, grads_by_id.at(id));
      adam_step(adam, model.params, grads, cfg.learning_rate);
    }
    for (const auto &[name, p] : model.params.params)
      for (double v : p.data)
        if (!std::isfinite(v))
          throw ContractError("train: non-finite parameter " + name + " after epoch " +
                              std::to_string(epoch));

    // validation NRMSE on held-out seeds
    double nrmse_sum = 0.0;
    for (std::size_t s = 0; s < cfg.val_count; ++s) {
      GroundTruthSample sample = gen_sample(cfg.image_side, mix(cfg.seed, 0x7A1), s);
      std::size_t pi = s % cfg.patterns.size();
      Measured meas = simulate_measurements(sample.image, probe, cfg.patterns[pi],
                                            cfg.patch_side, cfg.peak_rate,
                                            mix(cfg.seed, 0x7A2 + s));
      model.gamma = gammas[pi];
      InferenceResult inf = infer(model, meas.data, probe, meas.grid);
      RealTensor mask = coverage_map(meas.grid);
      nrmse_sum += nrmse(inf.image, sample.image, &mask);
    }
    double seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    result.log.push_back({epoch, loss_sum / static_cast<double>(cfg.train_count),
                          nrmse_sum / static_cast<double>(cfg.val_count), seconds});
  }
  result.model = std::move(model);
  return result;
}

void checkpoint_save(const PtychoDVModel &model, const std::filesystem::path &dir) {
  std::filesystem::create_directories(dir);
  nlohmann::json manifest;
  manifest["format"] = "ptycholab-checkpoint-v1";
  manifest["vit"] = {{"token_dim", model.vit.token_dim},
                     {"depth", model.vit.depth},
                     {"heads", model.vit.heads},
                     {"mlp_ratio", model.vit.mlp_ratio},
                     {"pos_bands", model.vit.pos_bands},
                     {"patch_side", model.vit.patch_side}};
  manifest["unroll_depth"] = model.unroll_depth;
  manifest["gamma"] = model.gamma;
  manifest["eps"] = model.eps;
  manifest["cnn_width"] = model.cnn_width;
  manifest["per_iter_phi"] = model.per_iter_phi;
  nlohmann::json plist = nlohmann::json::array();
  for (const auto &[name, t] : model.params.params) {
    plist.push_back({{"name", name}, {"shape", t.shape}});
    io::write_tensor(dir / (name + ".ptyt"), t);
  }
  manifest["parameters"] = plist;
  io::write_text(dir / "manifest.json", manifest.dump(2) + "\n");
}

PtychoDVModel checkpoint_load(const std::filesystem::path &dir) {
  nlohmann::json manifest = nlohmann::json::parse(io::read_text(dir / "manifest.json"));
  if (manifest.value("format", "") != "ptycholab-checkpoint-v1")
    throw io::IoError("checkpoint_load: unknown manifest format");
  PtychoDVModel model;
  const auto &v = manifest.at("vit");
  model.vit.token_dim = v.at("token_dim");
  model.vit.depth = v.at("depth");
  model.vit.heads = v.at("heads");
  model.vit.mlp_ratio = v.at("mlp_ratio");
  model.vit.pos_bands = v.at("pos_bands");
  model.vit.patch_side = v.at("patch_side");
  model.unroll_depth = manifest.at("unroll_depth");
  model.gamma = manifest.at("gamma");
  model.eps = manifest.at("eps");
  model.cnn_width = manifest.at("cnn_width");
  model.per_iter_phi = manifest.at("per_iter_phi");
  PtychoDVModel reference = PtychoDVModel::create(model.vit, model.unroll_depth, 0,
                                                  model.cnn_width, model.per_iter_phi);
  for (const auto &entry : manifest.at("parameters")) {
    std::string name = entry.at("name");
    std::vector<std::size_t> shape = entry.at("shape").get<std::vector<std::size_t>>();
    RealTensor t = io::read_real_tensor(dir / (name + ".ptyt"));
    if (t.shape != shape) throw io::IoError("checkpoint_load: shape mismatch for " + name);
    if (!reference.params.has(name) || reference.params.get(name).shape != shape)
      throw io::IoError("checkpoint_load: parameter " + name +
                        " does not match the declared architecture");
    model.params.add(name, std::move(t));
  }
  if (model.params.params.size() != reference.params.params.size())
    throw io::IoError("checkpoint_load: parameter count mismatch");
  return model;
}

}  // namespace ptycholab
