#include "ptycholab/autodiff.hpp"

#include <cmath>
#include <numbers>

namespace ptycholab::ad {

const RealTensor &Var::value() const { return tape->node(id).value; }

Var Tape::leaf(RealTensor value, bool requires_grad) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  nodes_.push_back(std::move(n));
  return {this, nodes_.size() - 1};
}

Var Tape::record(RealTensor value, std::function<void(Tape &, const RealTensor &)> backward) {
  Node n;
  n.value = std::move(value);
  n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return {this, nodes_.size() - 1};
}

std::unordered_map<std::size_t, RealTensor> Tape::backward(Var loss) {
  if (loss.tape != this) throw GraphError("backward: loss from another tape");
  if (node(loss.id).value.size() != 1)
    throw ContractError("backward: loss must be scalar");
  for (auto &n : nodes_) n.grad = RealTensor(n.value.shape, 0.0);
  nodes_[loss.id].grad.data[0] = 1.0;
  for (std::size_t k = loss.id + 1; k-- > 0;) {
    Node &n = nodes_[k];
    if (n.backward) n.backward(*this, n.grad);
  }
  std::unordered_map<std::size_t, RealTensor> grads;
  for (std::size_t k = 0; k < nodes_.size(); ++k)
    if (nodes_[k].requires_grad) grads.emplace(k, nodes_[k].grad);
  return grads;
}

namespace {

void check_same_tape(Var a, Var b) {
  if (a.tape != b.tape) throw GraphError("primitive: operands on different tapes");
}

const RealTensor &val(Var v) { return v.tape->node(v.id).value; }

void accum(Tape &t, std::size_t id, const RealTensor &g) {
  RealTensor &dst = t.grad(id);
  for (std::size_t i = 0; i < dst.size(); ++i) dst.data[i] += g.data[i];
}

std::size_t numel(const std::vector<std::size_t> &shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

void require_2d(const RealTensor &t, const char *who) {
  if (t.shape.size() != 2) throw DimensionError(std::string(who) + ": expected 2-D");
}

void require_planes(const RealTensor &t, const char *who) {
  if (t.shape.size() != 3 || t.shape[0] != 2)
    throw DimensionError(std::string(who) + ": expected {2, h, w} planes");
}

}  // namespace

Var add(Var a, Var b) {
  check_same_tape(a, b);
  if (!val(a).same_shape(val(b))) throw DimensionError("add: shape mismatch");
  RealTensor out = val(a);
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] += val(b).data[i];
  auto ia = a.id, ib = b.id;
  return a.tape->record(std::move(out), [ia, ib](Tape &t, const RealTensor &g) {
    accum(t, ia, g);
    accum(t, ib, g);
  });
}

Var sub(Var a, Var b) {
  check_same_tape(a, b);
  if (!val(a).same_shape(val(b))) throw DimensionError("sub: shape mismatch");
  RealTensor out = val(a);
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] -= val(b).data[i];
  auto ia = a.id, ib = b.id;
  return a.tape->record(std::move(out), [ia, ib](Tape &t, const RealTensor &g) {
    accum(t, ia, g);
    RealTensor neg = g;
    for (auto &v : neg.data) v = -v;
    accum(t, ib, neg);
  });
}

Var mul(Var a, Var b) {
  check_same_tape(a, b);
  if (!val(a).same_shape(val(b))) throw DimensionError("mul: shape mismatch");
  RealTensor out = val(a);
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] *= val(b).data[i];
  auto ia = a.id, ib = b.id;
  return a.tape->record(std::move(out), [ia, ib](Tape &t, const RealTensor &g) {
    RealTensor ga = g, gb = g;
    const RealTensor &va = t.node(ia).value, &vb = t.node(ib).value;
    for (std::size_t i = 0; i < g.size(); ++i) {
      ga.data[i] *= vb.data[i];
      gb.data[i] *= va.data[i];
    }
    accum(t, ia, ga);
    accum(t, ib, gb);
  });
}

Var scale(Var a, double s) {
  RealTensor out = val(a);
  for (auto &v : out.data) v *= s;
  auto ia = a.id;
  return a.tape->record(std::move(out), [ia, s](Tape &t, const RealTensor &g) {
    RealTensor gs = g;
    for (auto &v : gs.data) v *= s;
    accum(t, ia, gs);
  });
}

Var add_bias(Var x, Var b) {
  check_same_tape(x, b);
  require_2d(val(x), "add_bias");
  if (val(b).shape.size() != 1 || val(b).shape[0] != val(x).cols())
    throw DimensionError("add_bias: bias length mismatch");
  RealTensor out = val(x);
  std::size_t n = out.rows(), m = out.cols();
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < m; ++c) out.at(r, c) += val(b).data[c];
  auto ix = x.id, ib = b.id;
  return x.tape->record(std::move(out), [ix, ib, n, m](Tape &t, const RealTensor &g) {
    accum(t, ix, g);
    RealTensor gb({m}, 0.0);
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t c = 0; c < m; ++c) gb.data[c] += g.at(r, c);
    accum(t, ib, gb);
  });
}

Var matmul(Var a, Var b) {
  check_same_tape(a, b);
  require_2d(val(a), "matmul");
  require_2d(val(b), "matmul");
  std::size_t n = val(a).rows(), k = val(a).cols(), m = val(b).cols();
  if (val(b).rows() != k) throw DimensionError("matmul: inner dims differ");
  RealTensor out({n, m}, 0.0);
  {
    const double *A = val(a).data.data();
    const double *B = val(b).data.data();
    double *O = out.data.data();
    std::size_t r = 0;
    for (; r + 4 <= n; r += 4) {  // 4 rows per pass to reuse each B row
      const double *a0 = A + r * k, *a1 = a0 + k, *a2 = a1 + k, *a3 = a2 + k;
      double *o0 = O + r * m, *o1 = o0 + m, *o2 = o1 + m, *o3 = o2 + m;
      for (std::size_t i = 0; i < k; ++i) {
        const double *brow = B + i * m;
        double v0 = a0[i], v1 = a1[i], v2 = a2[i], v3 = a3[i];
        for (std::size_t c = 0; c < m; ++c) {
          double bv = brow[c];
          o0[c] += v0 * bv;
          o1[c] += v1 * bv;
          o2[c] += v2 * bv;
          o3[c] += v3 * bv;
        }
      }
    }
    for (; r < n; ++r)
      for (std::size_t i = 0; i < k; ++i) {
        double av = A[r * k + i];
        const double *brow = B + i * m;
        double *orow = O + r * m;
        for (std::size_t c = 0; c < m; ++c) orow[c] += av * brow[c];
      }
  }
  auto ia = a.id, ib = b.id;
  return a.tape->record(std::move(out), [ia, ib, n, k, m](Tape &t, const RealTensor &g) {
    const double *A = t.node(ia).value.data.data();
    const double *B = t.node(ib).value.data.data();
    const double *G = g.data.data();
    RealTensor ga({n, k}, 0.0), gb({k, m}, 0.0);
    // ga = g B^T, gb = A^T g
    for (std::size_t r = 0; r < n; ++r) {
      const double *grow = G + r * m;
      for (std::size_t i = 0; i < k; ++i) {
        const double *brow = B + i * m;
        double s = 0.0;
        for (std::size_t c = 0; c < m; ++c) s += grow[c] * brow[c];
        ga.data[r * k + i] = s;
        double av = A[r * k + i];
        double *gbrow = gb.data.data() + i * m;
        for (std::size_t c = 0; c < m; ++c) gbrow[c] += av * grow[c];
      }
    }
    accum(t, ia, ga);
    accum(t, ib, gb);
  });
}

Var transpose(Var a) {
  require_2d(val(a), "transpose");
  std::size_t n = val(a).rows(), m = val(a).cols();
  RealTensor out({m, n});
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < m; ++c) out.at(c, r) = val(a).at(r, c);
  auto ia = a.id;
  return a.tape->record(std::move(out), [ia, n, m](Tape &t, const RealTensor &g) {
    RealTensor ga({n, m});
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t c = 0; c < m; ++c) ga.at(r, c) = g.at(c, r);
    accum(t, ia, ga);
  });
}

Var concat_cols(const std::vector<Var> &xs) {
  if (xs.empty()) throw ContractError("concat_cols: empty input");
  std::size_t n = val(xs[0]).rows(), total = 0;
  for (auto v : xs) {
    require_2d(val(v), "concat_cols");
    if (val(v).rows() != n) throw DimensionError("concat_cols: row mismatch");
    total += val(v).cols();
  }
  RealTensor out({n, total});
  std::vector<std::size_t> ids, widths;
  std::size_t off = 0;
  for (auto v : xs) {
    std::size_t m = val(v).cols();
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t c = 0; c < m; ++c) out.at(r, off + c) = val(v).at(r, c);
    ids.push_back(v.id);
    widths.push_back(m);
    off += m;
  }
  return xs[0].tape->record(std::move(out), [ids, widths, n](Tape &t, const RealTensor &g) {
    std::size_t off = 0;
    for (std::size_t k = 0; k < ids.size(); ++k) {
      RealTensor gi({n, widths[k]});
      for (std::size_t r = 0; r < n; ++r)
        for (std::size_t c = 0; c < widths[k]; ++c) gi.at(r, c) = g.at(r, off + c);
      accum(t, ids[k], gi);
      off += widths[k];
    }
  });
}

Var slice_cols(Var x, std::size_t c0, std::size_t c1) {
  require_2d(val(x), "slice_cols");
  std::size_t n = val(x).rows(), m = val(x).cols();
  if (c1 > m || c0 >= c1) throw DimensionError("slice_cols: bad range");
  RealTensor out({n, c1 - c0});
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = c0; c < c1; ++c) out.at(r, c - c0) = val(x).at(r, c);
  auto ix = x.id;
  return x.tape->record(std::move(out), [ix, c0, c1, n, m](Tape &t, const RealTensor &g) {
    RealTensor gx({n, m}, 0.0);
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t c = c0; c < c1; ++c) gx.at(r, c) = g.at(r, c - c0);
    accum(t, ix, gx);
  });
}

Var slice_rows(Var x, std::size_t r0, std::size_t r1) {
  require_2d(val(x), "slice_rows");
  std::size_t n = val(x).rows(), m = val(x).cols();
  if (r1 > n || r0 >= r1) throw DimensionError("slice_rows: bad range");
  RealTensor out({r1 - r0, m});
  for (std::size_t r = r0; r < r1; ++r)
    for (std::size_t c = 0; c < m; ++c) out.at(r - r0, c) = val(x).at(r, c);
  auto ix = x.id;
  return x.tape->record(std::move(out), [ix, r0, r1, n, m](Tape &t, const RealTensor &g) {
    RealTensor gx({n, m}, 0.0);
    for (std::size_t r = r0; r < r1; ++r)
      for (std::size_t c = 0; c < m; ++c) gx.at(r, c) = g.at(r - r0, c);
    accum(t, ix, gx);
  });
}

Var reshape(Var x, std::vector<std::size_t> shape) {
  if (numel(shape) != val(x).size()) throw DimensionError("reshape: element count differs");
  RealTensor out = val(x);
  auto old_shape = out.shape;
  out.shape = shape;
  auto ix = x.id;
  return x.tape->record(std::move(out), [ix, old_shape](Tape &t, const RealTensor &g) {
    RealTensor gx = g;
    gx.shape = old_shape;
    accum(t, ix, gx);
  });
}

Var layer_norm(Var x, Var gamma, Var beta, double eps) {
  check_same_tape(x, gamma);
  check_same_tape(x, beta);
  require_2d(val(x), "layer_norm");
  std::size_t n = val(x).rows(), m = val(x).cols();
  if (val(gamma).size() != m || val(beta).size() != m)
    throw DimensionError("layer_norm: affine length mismatch");
  RealTensor out({n, m});
  RealTensor xhat({n, m});
  std::vector<double> inv_std(n);
  for (std::size_t r = 0; r < n; ++r) {
    double mu = 0.0;
    for (std::size_t c = 0; c < m; ++c) mu += val(x).at(r, c);
    mu /= static_cast<double>(m);
    double var = 0.0;
    for (std::size_t c = 0; c < m; ++c) {
      double d = val(x).at(r, c) - mu;
      var += d * d;
    }
    var /= static_cast<double>(m);
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t c = 0; c < m; ++c) {
      xhat.at(r, c) = (val(x).at(r, c) - mu) * inv_std[r];
      out.at(r, c) = val(gamma).data[c] * xhat.at(r, c) + val(beta).data[c];
    }
  }
  auto ix = x.id, ig = gamma.id, ib = beta.id;
  return x.tape->record(
      std::move(out), [ix, ig, ib, n, m, xhat, inv_std](Tape &t, const RealTensor &g) {
        const RealTensor &gm = t.node(ig).value;
        RealTensor gx({n, m}), ggamma({m}, 0.0), gbeta({m}, 0.0);
        for (std::size_t r = 0; r < n; ++r) {
          double s1 = 0.0, s2 = 0.0;
          for (std::size_t c = 0; c < m; ++c) {
            double gy = g.at(r, c) * gm.data[c];
            s1 += gy;
            s2 += gy * xhat.at(r, c);
            ggamma.data[c] += g.at(r, c) * xhat.at(r, c);
            gbeta.data[c] += g.at(r, c);
          }
          s1 /= static_cast<double>(m);
          s2 /= static_cast<double>(m);
          for (std::size_t c = 0; c < m; ++c) {
            double gy = g.at(r, c) * gm.data[c];
            gx.at(r, c) = (gy - s1 - xhat.at(r, c) * s2) * inv_std[r];
          }
        }
        accum(t, ix, gx);
        accum(t, ig, ggamma);
        accum(t, ib, gbeta);
      });
}

Var softmax_rows(Var x) {
  require_2d(val(x), "softmax_rows");
  std::size_t n = val(x).rows(), m = val(x).cols();
  RealTensor out({n, m});
  for (std::size_t r = 0; r < n; ++r) {
    double mx = val(x).at(r, 0);
    for (std::size_t c = 1; c < m; ++c) mx = std::max(mx, val(x).at(r, c));
    double z = 0.0;
    for (std::size_t c = 0; c < m; ++c) {
      out.at(r, c) = std::exp(val(x).at(r, c) - mx);
      z += out.at(r, c);
    }
    for (std::size_t c = 0; c < m; ++c) out.at(r, c) /= z;
  }
  auto ix = x.id;
  RealTensor y = out;
  return x.tape->record(std::move(out), [ix, y, n, m](Tape &t, const RealTensor &g) {
    RealTensor gx({n, m});
    for (std::size_t r = 0; r < n; ++r) {
      double dot = 0.0;
      for (std::size_t c = 0; c < m; ++c) dot += g.at(r, c) * y.at(r, c);
      for (std::size_t c = 0; c < m; ++c)
        gx.at(r, c) = (g.at(r, c) - dot) * y.at(r, c);
    }
    accum(t, ix, gx);
  });
}

Var relu(Var x) {
  RealTensor out = val(x);
  for (auto &v : out.data) v = v > 0.0 ? v : 0.0;
  auto ix = x.id;
  return x.tape->record(std::move(out), [ix](Tape &t, const RealTensor &g) {
    const RealTensor &v = t.node(ix).value;
    RealTensor gx = g;
    for (std::size_t i = 0; i < gx.size(); ++i)
      if (v.data[i] <= 0.0) gx.data[i] = 0.0;
    accum(t, ix, gx);
  });
}

Var gelu(Var x) {
  RealTensor out = val(x);
  for (auto &v : out.data) v = 0.5 * v * (1.0 + std::erf(v / std::numbers::sqrt2));
  auto ix = x.id;
  return x.tape->record(std::move(out), [ix](Tape &t, const RealTensor &g) {
    const RealTensor &v = t.node(ix).value;
    RealTensor gx = g;
    for (std::size_t i = 0; i < gx.size(); ++i) {
      double u = v.data[i];
      double cdf = 0.5 * (1.0 + std::erf(u / std::numbers::sqrt2));
      double pdf = std::exp(-0.5 * u * u) / std::sqrt(2.0 * std::numbers::pi);
      gx.data[i] *= cdf + u * pdf;
    }
    accum(t, ix, gx);
  });
}

Var mean(Var x) {
  double s = 0.0;
  for (double v : val(x).data) s += v;
  double inv = 1.0 / static_cast<double>(val(x).size());
  RealTensor out({1});
  out.data[0] = s * inv;
  auto ix = x.id;
  return x.tape->record(std::move(out), [ix, inv](Tape &t, const RealTensor &g) {
    RealTensor gx(t.node(ix).value.shape, g.data[0] * inv);
    accum(t, ix, gx);
  });
}

Var sum_sq(Var x) {
  double s = 0.0;
  for (double v : val(x).data) s += v * v;
  RealTensor out({1});
  out.data[0] = s;
  auto ix = x.id;
  return x.tape->record(std::move(out), [ix](Tape &t, const RealTensor &g) {
    const RealTensor &v = t.node(ix).value;
    RealTensor gx = v;
    for (auto &u : gx.data) u *= 2.0 * g.data[0];
    accum(t, ix, gx);
  });
}

RealTensor planes_of(const ComplexGrid &g) {
  RealTensor out({2, g.height, g.width});
  std::size_t n = g.size();
  for (std::size_t i = 0; i < n; ++i) {
    out.data[i] = g.data[i].real();
    out.data[n + i] = g.data[i].imag();
  }
  return out;
}

ComplexGrid grid_of(const RealTensor &planes) {
  require_planes(planes, "grid_of");
  ComplexGrid g(planes.shape[1], planes.shape[2]);
  std::size_t n = g.size();
  for (std::size_t i = 0; i < n; ++i)
    g.data[i] = cdouble(planes.data[i], planes.data[n + i]);
  return g;
}

Var complex_abs_eps(Var z, double eps) {
  require_planes(val(z), "complex_abs_eps");
  std::size_t h = val(z).shape[1], w = val(z).shape[2], n = h * w;
  RealTensor out({h, w});
  for (std::size_t i = 0; i < n; ++i) {
    double re = val(z).data[i], im = val(z).data[n + i];
    out.data[i] = std::sqrt(re * re + im * im + eps * eps);
  }
  auto iz = z.id;
  RealTensor a = out;
  return z.tape->record(std::move(out), [iz, a, n](Tape &t, const RealTensor &g) {
    const RealTensor &v = t.node(iz).value;
    RealTensor gz(v.shape, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      gz.data[i] = g.data[i] * v.data[i] / a.data[i];
      gz.data[n + i] = g.data[i] * v.data[n + i] / a.data[i];
    }
    accum(t, iz, gz);
  });
}

Var complex_phase_unit_eps(Var z, double eps) {
  require_planes(val(z), "complex_phase_unit_eps");
  std::size_t h = val(z).shape[1], w = val(z).shape[2], n = h * w;
  RealTensor out({2, h, w});
  std::vector<double> s(n);
  for (std::size_t i = 0; i < n; ++i) {
    double re = val(z).data[i], im = val(z).data[n + i];
    s[i] = std::sqrt(re * re + im * im + eps * eps);
    out.data[i] = re / s[i];
    out.data[n + i] = im / s[i];
  }
  auto iz = z.id;
  return z.tape->record(std::move(out), [iz, s, n](Tape &t, const RealTensor &g) {
    const RealTensor &v = t.node(iz).value;
    RealTensor gz(v.shape, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      double re = v.data[i], im = v.data[n + i];
      double s3 = s[i] * s[i] * s[i];
      double gre = g.data[i], gim = g.data[n + i];
      gz.data[i] = gre * (1.0 / s[i] - re * re / s3) + gim * (-re * im / s3);
      gz.data[n + i] = gre * (-re * im / s3) + gim * (1.0 / s[i] - im * im / s3);
    }
    accum(t, iz, gz);
  });
}

namespace {

Var fft_like(Var z, bool inverse) {
  require_planes(val(z), "fft2_linear");
  ComplexGrid g = grid_of(val(z));
  ComplexGrid fg = inverse ? ifft2(g) : fft2(g);
  auto iz = z.id;
  return z.tape->record(planes_of(fg), [iz, inverse](Tape &t, const RealTensor &gout) {
    // unitary transform: real adjoint = inverse transform
    ComplexGrid gc = grid_of(gout);
    accum(t, iz, planes_of(inverse ? fft2(gc) : ifft2(gc)));
  });
}

}  // namespace

Var fft2_linear(Var z) { return fft_like(z, false); }
Var ifft2_linear(Var z) { return fft_like(z, true); }

Var complex_mul_const(Var z, const ComplexGrid &c) {
  require_planes(val(z), "complex_mul_const");
  ComplexGrid g = grid_of(val(z));
  if (!g.same_shape(c)) throw DimensionError("complex_mul_const: shape mismatch");
  auto iz = z.id;
  ComplexGrid cc = c;
  return z.tape->record(planes_of(mul(g, c)), [iz, cc](Tape &t, const RealTensor &gout) {
    accum(t, iz, planes_of(conj_mul(cc, grid_of(gout))));
  });
}

Var complex_scale_map(Var z, const RealTensor &m) {
  require_planes(val(z), "complex_scale_map");
  std::size_t h = val(z).shape[1], w = val(z).shape[2], n = h * w;
  if (m.shape.size() != 2 || m.rows() != h || m.cols() != w)
    throw DimensionError("complex_scale_map: map shape mismatch");
  RealTensor out = val(z);
  for (std::size_t i = 0; i < n; ++i) {
    out.data[i] *= m.data[i];
    out.data[n + i] *= m.data[i];
  }
  auto iz = z.id;
  RealTensor mm = m;
  return z.tape->record(std::move(out), [iz, mm, n](Tape &t, const RealTensor &g) {
    RealTensor gz = g;
    for (std::size_t i = 0; i < n; ++i) {
      gz.data[i] *= mm.data[i];
      gz.data[n + i] *= mm.data[i];
    }
    accum(t, iz, gz);
  });
}

Var gather_patch(Var image, std::size_t r0, std::size_t c0, std::size_t side) {
  require_planes(val(image), "gather_patch");
  std::size_t h = val(image).shape[1], w = val(image).shape[2];
  if (r0 + side > h || c0 + side > w) throw DimensionError("gather_patch: out of bounds");
  RealTensor out({2, side, side});
  for (std::size_t p = 0; p < 2; ++p)
    for (std::size_t r = 0; r < side; ++r)
      for (std::size_t c = 0; c < side; ++c)
        out.data[(p * side + r) * side + c] =
            val(image).data[(p * h + r0 + r) * w + c0 + c];
  auto ii = image.id;
  return image.tape->record(std::move(out),
                            [ii, r0, c0, side, h, w](Tape &t, const RealTensor &g) {
                              RealTensor gi({2, h, w}, 0.0);
                              for (std::size_t p = 0; p < 2; ++p)
                                for (std::size_t r = 0; r < side; ++r)
                                  for (std::size_t c = 0; c < side; ++c)
                                    gi.data[(p * h + r0 + r) * w + c0 + c] =
                                        g.data[(p * side + r) * side + c];
                              accum(t, ii, gi);
                            });
}

Var scatter_patch(Var patch, std::size_t r0, std::size_t c0, std::size_t h,
                  std::size_t w) {
  require_planes(val(patch), "scatter_patch");
  std::size_t side = val(patch).shape[1];
  if (val(patch).shape[2] != side) throw DimensionError("scatter_patch: non-square patch");
  if (r0 + side > h || c0 + side > w) throw DimensionError("scatter_patch: out of bounds");
  RealTensor out({2, h, w}, 0.0);
  for (std::size_t p = 0; p < 2; ++p)
    for (std::size_t r = 0; r < side; ++r)
      for (std::size_t c = 0; c < side; ++c)
        out.data[(p * h + r0 + r) * w + c0 + c] =
            val(patch).data[(p * side + r) * side + c];
  auto ip = patch.id;
  return patch.tape->record(std::move(out),
                            [ip, r0, c0, side, h, w](Tape &t, const RealTensor &g) {
                              RealTensor gp({2, side, side});
                              for (std::size_t p = 0; p < 2; ++p)
                                for (std::size_t r = 0; r < side; ++r)
                                  for (std::size_t c = 0; c < side; ++c)
                                    gp.data[(p * side + r) * side + c] =
                                        g.data[(p * h + r0 + r) * w + c0 + c];
                              accum(t, ip, gp);
                            });
}

Var conv2d(Var x, Var w, Var b) {
  check_same_tape(x, w);
  check_same_tape(x, b);
  const RealTensor &X = val(x), &W = val(w), &B = val(b);
  if (X.shape.size() != 3) throw DimensionError("conv2d: input must be {C, H, W}");
  if (W.shape.size() != 4) throw DimensionError("conv2d: weight must be {Co, Ci, kh, kw}");
  std::size_t ci = X.shape[0], h = X.shape[1], wd = X.shape[2];
  std::size_t co = W.shape[0], kh = W.shape[2], kw = W.shape[3];
  if (W.shape[1] != ci) throw DimensionError("conv2d: channel mismatch");
  if (B.shape.size() != 1 || B.shape[0] != co) throw DimensionError("conv2d: bias mismatch");
  long long ph = static_cast<long long>(kh) / 2, pw = static_cast<long long>(kw) / 2;
  // shifted-row accumulation: for each tap, add a scaled contiguous row
  RealTensor out({co, h, wd}, 0.0);
  const bool fused3 = kh == 3 && kw == 3 && h >= 2 && wd >= 2;
  for (std::size_t oc = 0; oc < co; ++oc) {
    double *outc = out.data.data() + oc * h * wd;
    for (std::size_t j = 0; j < h * wd; ++j) outc[j] = B.data[oc];
    for (std::size_t ic = 0; ic < ci; ++ic) {
      const double *xc = X.data.data() + ic * h * wd;
      const double *wt = W.data.data() + (oc * ci + ic) * kh * kw;
      if (fused3) {
        // interior rows: all nine taps in one pass per output row
        for (std::size_t r = 1; r + 1 < h; ++r) {
          double *orow = outc + r * wd;
          const double *x0 = xc + (r - 1) * wd;
          const double *x1 = xc + r * wd;
          const double *x2 = xc + (r + 1) * wd;
          for (std::size_t c = 1; c + 1 < wd; ++c)
            orow[c] += wt[0] * x0[c - 1] + wt[1] * x0[c] + wt[2] * x0[c + 1] +
                       wt[3] * x1[c - 1] + wt[4] * x1[c] + wt[5] * x1[c + 1] +
                       wt[6] * x2[c - 1] + wt[7] * x2[c] + wt[8] * x2[c + 1];
        }
        // boundary: top/bottom rows fully, left/right columns of interior rows
        auto edge = [&](std::size_t r, std::size_t c) {
          double s = 0.0;
          for (std::size_t u = 0; u < 3; ++u)
            for (std::size_t v = 0; v < 3; ++v) {
              long long rr = static_cast<long long>(r + u) - 1;
              long long cc = static_cast<long long>(c + v) - 1;
              if (rr < 0 || cc < 0 || rr >= static_cast<long long>(h) ||
                  cc >= static_cast<long long>(wd))
                continue;
              s += wt[u * 3 + v] * xc[rr * wd + cc];
            }
          outc[r * wd + c] += s;
        };
        for (std::size_t c = 0; c < wd; ++c) {
          edge(0, c);
          edge(h - 1, c);
        }
        for (std::size_t r = 1; r + 1 < h; ++r) {
          edge(r, 0);
          edge(r, wd - 1);
        }
        continue;
      }
      for (std::size_t u = 0; u < kh; ++u)
        for (std::size_t v = 0; v < kw; ++v) {
          double wv = wt[u * kw + v];
          long long dr = static_cast<long long>(u) - ph;
          long long dc = static_cast<long long>(v) - pw;
          std::size_t r0 = dr < 0 ? static_cast<std::size_t>(-dr) : 0;
          std::size_t r1 = dr > 0 ? h - static_cast<std::size_t>(dr) : h;
          std::size_t c0 = dc < 0 ? static_cast<std::size_t>(-dc) : 0;
          std::size_t c1 = dc > 0 ? wd - static_cast<std::size_t>(dc) : wd;
          for (std::size_t r = r0; r < r1; ++r) {
            double *orow = outc + r * wd;
            const double *xrow = xc + (r + dr) * wd + dc;
            for (std::size_t c = c0; c < c1; ++c) orow[c] += wv * xrow[c];
          }
        }
    }
  }
  auto ix = x.id, iw = w.id, ib = b.id;
  return x.tape->record(
      std::move(out), [ix, iw, ib, ci, co, h, wd, kh, kw, ph, pw](Tape &t, const RealTensor &g) {
        const RealTensor &X = t.node(ix).value, &W = t.node(iw).value;
        RealTensor gx(X.shape, 0.0), gw(W.shape, 0.0), gb({co}, 0.0);
        for (std::size_t oc = 0; oc < co; ++oc) {
          const double *gc = g.data.data() + oc * h * wd;
          for (std::size_t j = 0; j < h * wd; ++j) gb.data[oc] += gc[j];
          for (std::size_t ic = 0; ic < ci; ++ic) {
            const double *xc = X.data.data() + ic * h * wd;
            double *gxc = gx.data.data() + ic * h * wd;
            for (std::size_t u = 0; u < kh; ++u)
              for (std::size_t v = 0; v < kw; ++v) {
                double wv = W.data[((oc * ci + ic) * kh + u) * kw + v];
                double gwv = 0.0;
                long long dr = static_cast<long long>(u) - ph;
                long long dc = static_cast<long long>(v) - pw;
                std::size_t r0 = dr < 0 ? static_cast<std::size_t>(-dr) : 0;
                std::size_t r1 = dr > 0 ? h - static_cast<std::size_t>(dr) : h;
                std::size_t c0 = dc < 0 ? static_cast<std::size_t>(-dc) : 0;
                std::size_t c1 = dc > 0 ? wd - static_cast<std::size_t>(dc) : wd;
                for (std::size_t r = r0; r < r1; ++r) {
                  const double *grow = gc + r * wd;
                  const double *xrow = xc + (r + dr) * wd + dc;
                  double *gxrow = gxc + (r + dr) * wd + dc;
                  for (std::size_t c = c0; c < c1; ++c) {
                    gwv += grow[c] * xrow[c];
                    gxrow[c] += grow[c] * wv;
                  }
                }
                gw.data[((oc * ci + ic) * kh + u) * kw + v] = gwv;
              }
          }
        }
        accum(t, ix, gx);
        accum(t, iw, gw);
        accum(t, ib, gb);
      });
}

double grad_check(const std::function<Var(Tape &, Var)> &f, const RealTensor &x,
                  double step) {
  if (step <= 0.0) throw ContractError("grad_check: step must be > 0");
  Tape tape;
  Var vx = tape.leaf(x, true);
  Var loss = f(tape, vx);
  if (!std::isfinite(loss.value().data[0]))
    throw ContractError("grad_check: non-finite function value");
  auto grads = tape.backward(loss);
  const RealTensor &analytic = grads.at(vx.id);

  double worst = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    RealTensor xp = x, xm = x;
    xp.data[i] += step;
    xm.data[i] -= step;
    Tape tp, tm;
    double fp = f(tp, tp.leaf(xp, false)).value().data[0];
    double fm = f(tm, tm.leaf(xm, false)).value().data[0];
    double numeric = (fp - fm) / (2.0 * step);
    double a = analytic.data[i];
    double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
    worst = std::max(worst, std::abs(a - numeric) / denom);
  }
  return worst;
}

}  // namespace ptycholab::ad
