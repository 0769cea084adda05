#include "ptycholab/net.hpp"

#include <cmath>
#include <memory>
#include <numbers>
#include <random>

#include "ptycholab/parallel.hpp"

namespace ptycholab {

using ad::Var;

void ViTConfig::validate() const {
  std::size_t d = 2 * token_dim;
  if (heads == 0 || d % heads != 0)
    throw ContractError("ViTConfig: token width must divide into heads");
  if (patch_side == 0) throw ContractError("ViTConfig: zero patch side");
}

RealTensor &ParamSet::get(const std::string &name) {
  for (auto &[n, t] : params)
    if (n == name) return t;
  throw ContractError("ParamSet: unknown parameter " + name);
}

const RealTensor &ParamSet::get(const std::string &name) const {
  for (const auto &[n, t] : params)
    if (n == name) return t;
  throw ContractError("ParamSet: unknown parameter " + name);
}

bool ParamSet::has(const std::string &name) const {
  for (const auto &[n, t] : params)
    if (n == name) return true;
  return false;
}

void ParamSet::add(const std::string &name, RealTensor t) {
  if (has(name)) throw ContractError("ParamSet: duplicate parameter " + name);
  params.emplace_back(name, std::move(t));
}

namespace {

RealTensor xavier(std::vector<std::size_t> shape, std::size_t fan_in,
                  std::size_t fan_out, std::mt19937_64 &rng) {
  double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-limit, limit);
  RealTensor t(std::move(shape));
  for (auto &v : t.data) v = dist(rng);
  return t;
}

void add_linear(ParamSet &p, const std::string &prefix, std::size_t in,
                std::size_t out, std::mt19937_64 &rng) {
  p.add(prefix + ".w", xavier({in, out}, in, out, rng));
  p.add(prefix + ".b", RealTensor({out}, 0.0));
}

std::string phi_prefix(const PtychoDVModel &model, std::size_t step) {
  return model.per_iter_phi ? "cnn" + std::to_string(step) : "cnn";
}

void add_cnn(ParamSet &p, const std::string &prefix, std::size_t width,
             std::mt19937_64 &rng) {
  std::size_t k = 3;
  p.add(prefix + ".conv1.w", xavier({width, 2, k, k}, 2 * k * k, width * k * k, rng));
  p.add(prefix + ".conv1.b", RealTensor({width}, 0.0));
  p.add(prefix + ".conv2.w",
        xavier({width, width, k, k}, width * k * k, width * k * k, rng));
  p.add(prefix + ".conv2.b", RealTensor({width}, 0.0));
  // final layer zeroed: the refiner starts as the identity
  p.add(prefix + ".conv3.w", RealTensor({2, width, k, k}, 0.0));
  p.add(prefix + ".conv3.b", RealTensor({2}, 0.0));
}

}  // namespace

PtychoDVModel PtychoDVModel::create(const ViTConfig &cfg, std::size_t unroll_depth,
                                    std::uint64_t seed, std::size_t cnn_width,
                                    bool per_iter_phi) {
  cfg.validate();
  PtychoDVModel model;
  model.vit = cfg;
  model.unroll_depth = unroll_depth;
  model.cnn_width = cnn_width;
  model.per_iter_phi = per_iter_phi;
  std::mt19937_64 rng(seed);
  std::size_t d = cfg.token_dim, D = 2 * d;
  std::size_t s2 = cfg.patch_side * cfg.patch_side;
  std::size_t pos_len = 4 * (cfg.pos_bands + 1);
  ParamSet &p = model.params;
  add_linear(p, "meas.l1", s2, d, rng);
  add_linear(p, "meas.l2", d, d, rng);
  add_linear(p, "coord.l1", pos_len, d, rng);
  add_linear(p, "coord.l2", d, d, rng);
  for (std::size_t b = 0; b < cfg.depth; ++b) {
    std::string pre = "block" + std::to_string(b);
    p.add(pre + ".ln1.g", RealTensor({D}, 1.0));
    p.add(pre + ".ln1.b", RealTensor({D}, 0.0));
    add_linear(p, pre + ".attn.q", D, D, rng);
    add_linear(p, pre + ".attn.k", D, D, rng);
    add_linear(p, pre + ".attn.v", D, D, rng);
    add_linear(p, pre + ".attn.o", D, D, rng);
    p.add(pre + ".ln2.g", RealTensor({D}, 1.0));
    p.add(pre + ".ln2.b", RealTensor({D}, 0.0));
    add_linear(p, pre + ".mlp.l1", D, cfg.mlp_ratio * D, rng);
    add_linear(p, pre + ".mlp.l2", cfg.mlp_ratio * D, D, rng);
  }
  add_linear(p, "dec.l1", D, D, rng);
  add_linear(p, "dec.l2", D, 2 * s2, rng);
  if (per_iter_phi) {
    for (std::size_t k = 0; k < unroll_depth; ++k)
      add_cnn(p, "cnn" + std::to_string(k), cnn_width, rng);
  } else {
    add_cnn(p, "cnn", cnn_width, rng);
  }
  return model;
}

RealTensor positional_encode(double row, double col, std::size_t bands) {
  if (row < 0.0 || row > 1.0 || col < 0.0 || col > 1.0)
    throw ContractError("positional_encode: coords outside [0,1]");
  RealTensor out({4 * (bands + 1)});
  std::size_t j = 0;
  for (std::size_t l = 0; l <= bands; ++l) {
    double f = std::pow(2.0, static_cast<double>(l)) * std::numbers::pi;
    out.data[j++] = std::sin(f * row);
    out.data[j++] = std::cos(f * row);
    out.data[j++] = std::sin(f * col);
    out.data[j++] = std::cos(f * col);
  }
  return out;
}

BoundParams BoundParams::bind(ad::Tape &tape, const ParamSet &params) {
  BoundParams bound;
  for (const auto &[name, tensor] : params.params) {
    Var v = tape.leaf(tensor, true);
    bound.vars.emplace(name, v);
    bound.names_by_id.emplace(v.id, name);
  }
  return bound;
}

namespace {

Var linear(const BoundParams &p, const std::string &prefix, Var x) {
  return ad::add_bias(ad::matmul(x, p[prefix + ".w"]), p[prefix + ".b"]);
}

Var mlp2(const BoundParams &p, const std::string &l1, const std::string &l2, Var x) {
  return linear(p, l2, ad::gelu(linear(p, l1, x)));
}

// Scaled dot product attention over all heads as one fused node. Saves the
// softmax matrices from the forward pass; the backward pass applies the usual
// chain gV = A^T gO, gS = A o (gA - rowsum(gA o A)), gQ = sc gS K, gK = sc gS^T Q.
Var attention_core(ad::Tape &tape, Var q, Var k, Var v, std::size_t heads) {
  std::size_t n = q.value().rows(), D = q.value().cols();
  std::size_t dh = D / heads;
  double sc = 1.0 / std::sqrt(static_cast<double>(dh));
  const double *Q = q.value().data.data();
  const double *K = k.value().data.data();
  const double *V = v.value().data.data();
  auto attn = std::make_shared<std::vector<RealTensor>>();
  attn->reserve(heads);
  RealTensor out({n, D}, 0.0);
  double *O = out.data.data();
  for (std::size_t h = 0; h < heads; ++h) {
    RealTensor A({n, n});
    double *Ad = A.data.data();
    for (std::size_t r = 0; r < n; ++r) {
      const double *qr = Q + r * D + h * dh;
      double *arow = Ad + r * n;
      double mx = -1e300;
      for (std::size_t c = 0; c < n; ++c) {
        const double *kc = K + c * D + h * dh;
        double s = 0.0;
        for (std::size_t j = 0; j < dh; ++j) s += qr[j] * kc[j];
        arow[c] = s * sc;
        mx = std::max(mx, arow[c]);
      }
      double z = 0.0;
      for (std::size_t c = 0; c < n; ++c) {
        arow[c] = std::exp(arow[c] - mx);
        z += arow[c];
      }
      for (std::size_t c = 0; c < n; ++c) arow[c] /= z;
      double *orow = O + r * D + h * dh;
      for (std::size_t c = 0; c < n; ++c) {
        double a = arow[c];
        const double *vc = V + c * D + h * dh;
        for (std::size_t j = 0; j < dh; ++j) orow[j] += a * vc[j];
      }
    }
    attn->push_back(std::move(A));
  }
  std::size_t iq = q.id, ik = k.id, iv = v.id;
  return tape.record(
      std::move(out),
      [iq, ik, iv, attn, n, D, dh, heads, sc](ad::Tape &t, const RealTensor &g) {
        const double *Q = t.node(iq).value.data.data();
        const double *K = t.node(ik).value.data.data();
        const double *V = t.node(iv).value.data.data();
        const double *G = g.data.data();
        double *gq = t.grad(iq).data.data();
        double *gk = t.grad(ik).data.data();
        double *gv = t.grad(iv).data.data();
        RealTensor gs({n, n});
        for (std::size_t h = 0; h < heads; ++h) {
          const double *Ad = (*attn)[h].data.data();
          double *S = gs.data.data();
          for (std::size_t r = 0; r < n; ++r) {
            const double *grow = G + r * D + h * dh;
            const double *arow = Ad + r * n;
            double *srow = S + r * n;
            // gA then gS in place, accumulating gV as we go
            double dot = 0.0;
            for (std::size_t c = 0; c < n; ++c) {
              const double *vc = V + c * D + h * dh;
              double ga = 0.0;
              for (std::size_t j = 0; j < dh; ++j) ga += grow[j] * vc[j];
              srow[c] = ga;
              dot += ga * arow[c];
            }
            for (std::size_t c = 0; c < n; ++c) {
              double gsv = arow[c] * (srow[c] - dot);
              srow[c] = gsv;
              double *gvc = gv + c * D + h * dh;
              for (std::size_t j = 0; j < dh; ++j) gvc[j] += arow[c] * grow[j];
            }
            // gQ[r] += sc * gS[r] K
            double *gqr = gq + r * D + h * dh;
            for (std::size_t c = 0; c < n; ++c) {
              double w = sc * srow[c];
              const double *kc = K + c * D + h * dh;
              double *gkc = gk + c * D + h * dh;
              const double *qr = Q + r * D + h * dh;
              for (std::size_t j = 0; j < dh; ++j) {
                gqr[j] += w * kc[j];
                gkc[j] += w * qr[j];
              }
            }
          }
        }
      });
}

Var attention(ad::Tape &tape, const BoundParams &p, const std::string &pre, Var x,
              std::size_t heads) {
  Var q = linear(p, pre + ".q", x);
  Var k = linear(p, pre + ".k", x);
  Var v = linear(p, pre + ".v", x);
  return linear(p, pre + ".o", attention_core(tape, q, k, v, heads));
}

Var block(ad::Tape &tape, const BoundParams &p, const std::string &pre, Var x,
          std::size_t heads) {
  Var a = attention(tape, p, pre + ".attn",
                    ad::layer_norm(x, p[pre + ".ln1.g"], p[pre + ".ln1.b"]), heads);
  x = ad::add(x, a);
  Var m = mlp2(p, pre + ".mlp.l1", pre + ".mlp.l2",
               ad::layer_norm(x, p[pre + ".ln2.g"], p[pre + ".ln2.b"]));
  return ad::add(x, m);
}

}  // namespace

std::vector<Var> vit_forward(ad::Tape &tape, const BoundParams &p,
                             const ViTConfig &cfg, const DiffractionSet &data) {
  std::size_t n = data.count();
  std::size_t s = cfg.patch_side;
  std::size_t s2 = s * s;
  if (n == 0) throw ContractError("vit_forward: empty diffraction set");
  if (data.amplitudes[0].rows() != s)
    throw DimensionError("vit_forward: model patch side != data patch side");
  RealTensor y({n, s2});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < s2; ++j) y.at(i, j) = data.amplitudes[i].data[j];
  RealTensor pos({n, 4 * (cfg.pos_bands + 1)});
  for (std::size_t i = 0; i < n; ++i) {
    RealTensor enc =
        positional_encode(data.coords[i].first, data.coords[i].second, cfg.pos_bands);
    for (std::size_t j = 0; j < enc.size(); ++j) pos.at(i, j) = enc.data[j];
  }
  Var meas = mlp2(p, "meas.l1", "meas.l2", tape.leaf(std::move(y)));
  Var coord = mlp2(p, "coord.l1", "coord.l2", tape.leaf(std::move(pos)));
  Var tokens = ad::concat_cols({meas, coord});
  for (std::size_t b = 0; b < cfg.depth; ++b)
    tokens = block(tape, p, "block" + std::to_string(b), tokens, cfg.heads);
  Var decoded = mlp2(p, "dec.l1", "dec.l2", tokens);  // (n, 2 s^2)
  std::vector<Var> patches;
  patches.reserve(n);
  for (std::size_t i = 0; i < n; ++i)
    patches.push_back(ad::reshape(ad::slice_rows(decoded, i, i + 1), {2, s, s}));
  return patches;
}

ad::Var stitch(ad::Tape &tape, const std::vector<Var> &patches, const ScanGrid &grid) {
  if (patches.size() != grid.count()) throw DimensionError("stitch: patch count mismatch");
  // fused overlay: one node instead of a scatter/add chain per patch
  std::size_t s = grid.patch_side;
  RealTensor count = coverage_map(grid);
  RealTensor inv(count.shape);
  for (std::size_t j = 0; j < count.size(); ++j)
    inv.data[j] = count.data[j] > 0.0 ? 1.0 / count.data[j] : 0.0;
  std::size_t hw = grid.image_height * grid.image_width;
  RealTensor out({2, grid.image_height, grid.image_width}, 0.0);
  for (std::size_t i = 0; i < patches.size(); ++i) {
    const RealTensor &p = patches[i].value();
    if (p.shape.size() != 3 || p.shape[0] != 2 || p.shape[1] != s || p.shape[2] != s)
      throw DimensionError("stitch: patch planes shape mismatch");
    auto [r0, c0] = grid.locations[i];
    for (std::size_t plane = 0; plane < 2; ++plane)
      for (std::size_t r = 0; r < s; ++r) {
        double *orow = out.data.data() + plane * hw + (r0 + r) * grid.image_width + c0;
        const double *prow = p.data.data() + plane * s * s + r * s;
        for (std::size_t c = 0; c < s; ++c) orow[c] += prow[c];
      }
  }
  for (std::size_t plane = 0; plane < 2; ++plane)
    for (std::size_t j = 0; j < hw; ++j) out.data[plane * hw + j] *= inv.data[j];
  std::vector<std::size_t> ids;
  ids.reserve(patches.size());
  for (const auto &p : patches) ids.push_back(p.id);
  ScanGrid sg = grid;
  return tape.record(
      std::move(out), [ids, sg, inv, hw, s](ad::Tape &t, const RealTensor &g) {
        for (std::size_t i = 0; i < ids.size(); ++i) {
          RealTensor &dst = t.grad(ids[i]);
          auto [r0, c0] = sg.locations[i];
          for (std::size_t plane = 0; plane < 2; ++plane)
            for (std::size_t r = 0; r < s; ++r) {
              double *drow = dst.data.data() + plane * s * s + r * s;
              const double *grow =
                  g.data.data() + plane * hw + (r0 + r) * sg.image_width + c0;
              const double *irow = inv.data.data() + (r0 + r) * sg.image_width + c0;
              for (std::size_t c = 0; c < s; ++c) drow[c] += grow[c] * irow[c];
            }
        }
      });
}

ComplexGrid stitch(const std::vector<ComplexGrid> &patches, const ScanGrid &grid) {
  if (patches.size() != grid.count()) throw DimensionError("stitch: patch count mismatch");
  ComplexGrid acc(grid.image_height, grid.image_width);
  for (std::size_t i = 0; i < patches.size(); ++i) {
    auto [r0, c0] = grid.locations[i];
    for (std::size_t r = 0; r < patches[i].height; ++r)
      for (std::size_t c = 0; c < patches[i].width; ++c)
        acc.at(r0 + r, c0 + c) += patches[i].at(r, c);
  }
  RealTensor count = coverage_map(grid);
  for (std::size_t j = 0; j < acc.size(); ++j)
    acc.data[j] = count.data[j] > 0.0 ? acc.data[j] / count.data[j] : cdouble(0.0, 0.0);
  return acc;
}

namespace {

// One fused tape node for x - gamma * wf_gradient(x). The map is self adjoint
// up to the per pixel Jacobian of r(m) = m - y * m / |m|_eps, which is
// J = (1 - y/a) I + (y/a^3) m m^T with a = |m|_eps, so the backward pass
// reuses the forward structure with the residual replaced by J applied to
// the propagated cotangent. Saves each m_i from the forward pass.
Var wf_data_step(ad::Tape &tape, Var x, const PtychoDVModel &model,
                 const DiffractionSet &data, const Probe &probe,
                 const ScanGrid &grid) {
  const std::size_t n = grid.count();
  const std::size_t s = grid.patch_side;
  ComplexGrid xg = ad::grid_of(x.value());
  auto ms = std::make_shared<std::vector<ComplexGrid>>(n);
  std::vector<ComplexGrid> contrib(n);
  double eps = model.eps, gamma = model.gamma;
#pragma omp parallel for schedule(static) if (par::enabled())
  for (long long ii = 0; ii < static_cast<long long>(n); ++ii) {
    std::size_t i = static_cast<std::size_t>(ii);
    ComplexGrid mi = fft2(mul(probe.grid, extract_patch(xg, grid, i)));
    ComplexGrid residual = sub(mi, mul_real(phase_unit(mi, eps), data.amplitudes[i]));
    contrib[i] = conj_mul(probe.grid, ifft2(residual));
    (*ms)[i] = std::move(mi);
  }
  ComplexGrid acc(grid.image_height, grid.image_width);
  for (std::size_t i = 0; i < n; ++i) {  // fixed accumulation order
    auto [r0, c0] = grid.locations[i];
    for (std::size_t r = 0; r < s; ++r)
      for (std::size_t c = 0; c < s; ++c)
        acc.at(r0 + r, c0 + c) += contrib[i].at(r, c);
  }
  RealTensor out = x.value();
  std::size_t hw = grid.image_height * grid.image_width;
  for (std::size_t j = 0; j < hw; ++j) {
    out.data[j] -= gamma * acc.data[j].real();
    out.data[hw + j] -= gamma * acc.data[j].imag();
  }
  std::size_t xid = x.id;
  ComplexGrid pg = probe.grid;
  ScanGrid sg = grid;
  const DiffractionSet *dp = &data;
  return tape.record(
      std::move(out),
      [xid, ms, pg, sg, dp, eps, gamma, n, s, hw](ad::Tape &t, const RealTensor &g) {
        ComplexGrid u = ad::grid_of(g);
        std::vector<ComplexGrid> parts(n);
#pragma omp parallel for schedule(static) if (par::enabled())
        for (long long ii = 0; ii < static_cast<long long>(n); ++ii) {
          std::size_t i = static_cast<std::size_t>(ii);
          ComplexGrid v = fft2(mul(pg, extract_patch(u, sg, i)));
          const ComplexGrid &m = (*ms)[i];
          const RealTensor &y = dp->amplitudes[i];
          for (std::size_t j = 0; j < v.size(); ++j) {
            double mr = m.data[j].real(), mi2 = m.data[j].imag();
            double a = std::sqrt(mr * mr + mi2 * mi2 + eps * eps);
            double c1 = 1.0 - y.data[j] / a;
            double c2 = y.data[j] / (a * a * a);
            double vr = v.data[j].real(), vi = v.data[j].imag();
            double dot = mr * vr + mi2 * vi;
            v.data[j] = cdouble(c1 * vr + c2 * mr * dot, c1 * vi + c2 * mi2 * dot);
          }
          parts[i] = conj_mul(pg, ifft2(v));
        }
        ComplexGrid acc2(sg.image_height, sg.image_width);
        for (std::size_t i = 0; i < n; ++i) {  // fixed accumulation order
          auto [r0, c0] = sg.locations[i];
          for (std::size_t r = 0; r < s; ++r)
            for (std::size_t c = 0; c < s; ++c)
              acc2.at(r0 + r, c0 + c) += parts[i].at(r, c);
        }
        RealTensor &dst = t.grad(xid);
        for (std::size_t j = 0; j < hw; ++j) {
          dst.data[j] += g.data[j] - gamma * acc2.data[j].real();
          dst.data[hw + j] += g.data[hw + j] - gamma * acc2.data[j].imag();
        }
      });
}

Var refiner(const BoundParams &p, const std::string &pre, Var x) {
  Var h = ad::relu(ad::conv2d(x, p[pre + ".conv1.w"], p[pre + ".conv1.b"]));
  h = ad::relu(ad::conv2d(h, p[pre + ".conv2.w"], p[pre + ".conv2.b"]));
  h = ad::conv2d(h, p[pre + ".conv3.w"], p[pre + ".conv3.b"]);
  return ad::add(x, h);
}

}  // namespace

ad::Var du_forward(ad::Tape &tape, const BoundParams &p, const PtychoDVModel &model,
                   Var x0, const DiffractionSet &data, const Probe &probe,
                   const ScanGrid &grid) {
  Var x = x0;
  for (std::size_t k = 0; k < model.unroll_depth; ++k) {
    x = wf_data_step(tape, x, model, data, probe, grid);
    x = refiner(p, phi_prefix(model, k), x);
  }
  return x;
}

ModelOutput model_forward(ad::Tape &tape, const BoundParams &p,
                          const PtychoDVModel &model, const DiffractionSet &data,
                          const Probe &probe, const ScanGrid &grid) {
  std::vector<Var> patches = vit_forward(tape, p, model.vit, data);
  Var x0 = stitch(tape, patches, grid);
  Var xk = du_forward(tape, p, model, x0, data, probe, grid);
  return {xk, std::move(patches)};
}

ad::Var model_loss(ad::Tape &tape, const ModelOutput &out, const ComplexGrid &truth,
                   const ScanGrid &grid, double lambda) {
  if (lambda < 0.0) throw ContractError("model_loss: lambda must be >= 0");
  Var image_loss =
      ad::sum_sq(ad::sub(out.image, tape.leaf(ad::planes_of(truth))));
  if (lambda == 0.0) return image_loss;
  Var patch_loss{nullptr, 0};
  bool first = true;
  for (std::size_t i = 0; i < out.patches.size(); ++i) {
    ComplexGrid xi = extract_patch(truth, grid, i);
    Var li = ad::sum_sq(ad::sub(out.patches[i], tape.leaf(ad::planes_of(xi))));
    patch_loss = first ? li : ad::add(patch_loss, li);
    first = false;
  }
  return ad::add(image_loss, ad::scale(patch_loss, lambda));
}

InferenceResult infer(const PtychoDVModel &model, const DiffractionSet &data,
                      const Probe &probe, const ScanGrid &grid) {
  ad::Tape tape;
  BoundParams p = BoundParams::bind(tape, model.params);
  ModelOutput out = model_forward(tape, p, model, data, probe, grid);
  InferenceResult res;
  res.image = ad::grid_of(out.image.value());
  res.vit_patches.reserve(out.patches.size());
  for (const auto &v : out.patches) res.vit_patches.push_back(ad::grid_of(v.value()));
  return res;
}

}  // namespace ptycholab
