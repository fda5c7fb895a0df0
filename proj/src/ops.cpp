#include "vdet/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

namespace vdet::ops {

namespace {

constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

void add_into(std::span<double> dst, std::span<const double> src) {
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

// Maps every element of an output of shape `a` onto the broadcast operand of shape `b`.
struct Broadcast {
  enum class Kind { kSame, kSuffix, kGeneral } kind = Kind::kSame;
  std::int64_t nb = 1;
  std::vector<std::int64_t> map;

  Broadcast(const Shape& a, const Shape& b) {
    nb = numel(b);
    if (a == b) return;
    if (b.size() > a.size()) {
      throw DimensionError("cannot broadcast " + to_string(b) + " into " + to_string(a));
    }
    const std::size_t off = a.size() - b.size();
    bool suffix = true;
    for (std::size_t d = 0; d < b.size(); ++d) {
      if (b[d] != a[off + d]) {
        if (b[d] != 1) throw DimensionError("cannot broadcast " + to_string(b) + " into " + to_string(a));
        suffix = false;
      }
    }
    if (suffix) {
      kind = Kind::kSuffix;
      return;
    }
    kind = Kind::kGeneral;
    std::vector<std::int64_t> bstride(a.size(), 0);
    std::int64_t s = 1;
    for (std::size_t d = b.size(); d-- > 0;) {
      bstride[off + d] = b[d] == 1 ? 0 : s;
      s *= b[d];
    }
    const std::int64_t n = numel(a);
    map.resize(static_cast<std::size_t>(n));
    std::vector<std::int64_t> idx(a.size(), 0);
    std::int64_t bi = 0;
    for (std::int64_t i = 0; i < n; ++i) {
      map[static_cast<std::size_t>(i)] = bi;
      for (std::size_t d = a.size(); d-- > 0;) {
        ++idx[d];
        bi += bstride[d];
        if (idx[d] < a[d]) break;
        bi -= bstride[d] * idx[d];
        idx[d] = 0;
      }
    }
  }

  std::int64_t operator()(std::int64_t i) const {
    switch (kind) {
      case Kind::kSame: return i;
      case Kind::kSuffix: return i % nb;
      default: return map[static_cast<std::size_t>(i)];
    }
  }
};

int norm_axis(int axis, int rank) {
  int a = axis < 0 ? axis + rank : axis;
  if (a < 0 || a >= rank) throw DimensionError("axis " + std::to_string(axis) + " out of range for rank " + std::to_string(rank));
  return a;
}

}  // namespace

Index make_index(std::vector<std::int64_t> v) {
  return std::make_shared<const std::vector<std::int64_t>>(std::move(v));
}

void gemm(const double* a, const double* b, double* c, std::int64_t m, std::int64_t k, std::int64_t n, bool trans_a,
          bool trans_b, bool accumulate) {
  std::vector<double> bt;
  if (trans_b) {
    bt.resize(static_cast<std::size_t>(k * n));
    for (std::int64_t j = 0; j < n; ++j)
      for (std::int64_t p = 0; p < k; ++p) bt[static_cast<std::size_t>(p * n + j)] = b[j * k + p];
    b = bt.data();
  }
  if (!accumulate) std::fill(c, c + m * n, 0.0);
  for (std::int64_t i = 0; i < m; ++i) {
    double* crow = c + i * n;
    for (std::int64_t p = 0; p < k; ++p) {
      const double av = trans_a ? a[p * m + i] : a[i * k + p];
      if (av == 0.0) continue;
      const double* brow = b + p * n;
      for (std::int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

Var matmul(Var a, Var b, bool trans_a, bool trans_b) {
  const Shape& as = a.shape();
  const Shape& bs = b.shape();
  if (as.size() < 2 || bs.size() < 2) {
    throw DimensionError("matmul needs rank >= 2 operands, got " + to_string(as) + " and " + to_string(bs));
  }
  const std::int64_t m = trans_a ? as[as.size() - 1] : as[as.size() - 2];
  const std::int64_t k = trans_a ? as[as.size() - 2] : as[as.size() - 1];
  const std::int64_t kb = trans_b ? bs[bs.size() - 1] : bs[bs.size() - 2];
  const std::int64_t n = trans_b ? bs[bs.size() - 2] : bs[bs.size() - 1];
  const Shape lead(as.begin(), as.end() - 2);
  const bool shared_b = bs.size() == 2;
  if (k != kb || (!shared_b && Shape(bs.begin(), bs.end() - 2) != lead)) {
    throw DimensionError("matmul shape mismatch: " + to_string(as) + (trans_a ? "^T" : "") + " x " + to_string(bs) +
                         (trans_b ? "^T" : ""));
  }
  const std::int64_t batch = numel(lead);
  Shape os = lead;
  os.push_back(m);
  os.push_back(n);
  Tensor out(os);
  const double* ap = a.value().ptr();
  const double* bp = b.value().ptr();
  for (std::int64_t bi = 0; bi < batch; ++bi) {
    gemm(ap + bi * m * k, bp + (shared_b ? 0 : bi * k * n), out.ptr() + bi * m * n, m, k, n, trans_a, trans_b, false);
  }
  const int ia = a.id, ib = b.id;
  return a.tape->record(std::move(out), {a, b},
                        [=](const Tape& t, const Tensor& g, std::span<Tensor* const> gr) {
                          const double* A = t.value(ia).ptr();
                          const double* B = t.value(ib).ptr();
                          std::vector<double> tmp;
                          for (std::int64_t bi = 0; bi < batch; ++bi) {
                            const double* G = g.ptr() + bi * m * n;
                            const double* Ab = A + bi * m * k;
                            const double* Bb = B + (shared_b ? 0 : bi * k * n);
                            if (gr[0]) {
                              // d(op A) = G * op(B)^T, [m, k]
                              double* dst = gr[0]->ptr() + bi * m * k;
                              if (!trans_a) {
                                gemm(G, Bb, dst, m, n, k, false, !trans_b, true);
                              } else {
                                tmp.assign(static_cast<std::size_t>(m * k), 0.0);
                                gemm(G, Bb, tmp.data(), m, n, k, false, !trans_b, false);
                                for (std::int64_t i = 0; i < m; ++i)
                                  for (std::int64_t p = 0; p < k; ++p) dst[p * m + i] += tmp[static_cast<std::size_t>(i * k + p)];
                              }
                            }
                            if (gr[1]) {
                              // d(op B) = op(A)^T * G, [k, n]
                              double* dst = gr[1]->ptr() + (shared_b ? 0 : bi * k * n);
                              tmp.assign(static_cast<std::size_t>(k * n), 0.0);
                              gemm(Ab, G, tmp.data(), k, m, n, !trans_a, false, false);
                              if (!trans_b) {
                                for (std::int64_t q = 0; q < k * n; ++q) dst[q] += tmp[static_cast<std::size_t>(q)];
                              } else {
                                for (std::int64_t p = 0; p < k; ++p)
                                  for (std::int64_t j = 0; j < n; ++j) dst[j * k + p] += tmp[static_cast<std::size_t>(p * n + j)];
                              }
                            }
                          }
                        });
}

Var add(Var a, Var b) {
  auto bc = std::make_shared<Broadcast>(a.shape(), b.shape());
  Tensor out = a.value();
  const double* bp = b.value().ptr();
  for (std::int64_t i = 0; i < out.numel(); ++i) out[i] += bp[(*bc)(i)];
  return a.tape->record(std::move(out), {a, b}, [bc](const Tape&, const Tensor& g, std::span<Tensor* const> gr) {
    if (gr[0]) add_into(gr[0]->data(), g.data());
    if (gr[1]) {
      double* dst = gr[1]->ptr();
      for (std::int64_t i = 0; i < g.numel(); ++i) dst[(*bc)(i)] += g[i];
    }
  });
}

Var sub(Var a, Var b) { return add(a, scale(b, -1.0)); }

Var mul(Var a, Var b) {
  auto bc = std::make_shared<Broadcast>(a.shape(), b.shape());
  Tensor out = a.value();
  const double* bp = b.value().ptr();
  for (std::int64_t i = 0; i < out.numel(); ++i) out[i] *= bp[(*bc)(i)];
  const int ia = a.id, ib = b.id;
  return a.tape->record(std::move(out), {a, b}, [=](const Tape& t, const Tensor& g, std::span<Tensor* const> gr) {
    const Tensor& av = t.value(ia);
    const Tensor& bv = t.value(ib);
    if (gr[0]) {
      double* dst = gr[0]->ptr();
      for (std::int64_t i = 0; i < g.numel(); ++i) dst[i] += g[i] * bv[(*bc)(i)];
    }
    if (gr[1]) {
      double* dst = gr[1]->ptr();
      for (std::int64_t i = 0; i < g.numel(); ++i) dst[(*bc)(i)] += g[i] * av[i];
    }
  });
}

Var scale(Var a, double s) {
  Tensor out = a.value();
  for (auto& v : out.data()) v *= s;
  return a.tape->record(std::move(out), {a}, [s](const Tape&, const Tensor& g, std::span<Tensor* const> gr) {
    double* dst = gr[0]->ptr();
    for (std::int64_t i = 0; i < g.numel(); ++i) dst[i] += g[i] * s;
  });
}

Var reshape(Var a, Shape shape) {
  Tensor out = a.value().reshaped(std::move(shape));
  return a.tape->record(std::move(out), {a}, [](const Tape&, const Tensor& g, std::span<Tensor* const> gr) {
    add_into(gr[0]->data(), g.data());
  });
}

Var gather(Var a, Index index, Shape out_shape) {
  if (static_cast<std::int64_t>(index->size()) != numel(out_shape)) {
    throw DimensionError("gather index length does not match output shape " + to_string(out_shape));
  }
  const Tensor& src = a.value();
  Tensor out(std::move(out_shape));
  const auto& idx = *index;
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] >= src.numel()) throw IndexError("gather index out of range for shape " + to_string(src.shape()));
    if (idx[i] >= 0) out[static_cast<std::int64_t>(i)] = src[idx[i]];
  }
  return a.tape->record(std::move(out), {a}, [index](const Tape&, const Tensor& g, std::span<Tensor* const> gr) {
    double* dst = gr[0]->ptr();
    const auto& ix = *index;
    for (std::size_t i = 0; i < ix.size(); ++i) {
      if (ix[i] >= 0) dst[ix[i]] += g[static_cast<std::int64_t>(i)];
    }
  });
}

Shape permuted_shape(const Shape& shape, const std::vector<int>& axes) {
  if (axes.size() != shape.size()) throw DimensionError("permutation rank mismatch for shape " + to_string(shape));
  Shape out(shape.size());
  std::vector<bool> seen(shape.size(), false);
  for (std::size_t d = 0; d < axes.size(); ++d) {
    const int ax = axes[d];
    if (ax < 0 || ax >= static_cast<int>(shape.size()) || seen[static_cast<std::size_t>(ax)]) {
      throw DimensionError("invalid permutation for shape " + to_string(shape));
    }
    seen[static_cast<std::size_t>(ax)] = true;
    out[d] = shape[static_cast<std::size_t>(ax)];
  }
  return out;
}

std::vector<std::int64_t> permute_index(const Shape& shape, const std::vector<int>& axes) {
  const Shape os = permuted_shape(shape, axes);
  const std::size_t r = shape.size();
  std::vector<std::int64_t> in_stride(r, 1);
  for (std::size_t d = r; d-- > 1;) in_stride[d - 1] = in_stride[d] * shape[d];
  std::vector<std::int64_t> step(r);
  for (std::size_t d = 0; d < r; ++d) step[d] = in_stride[static_cast<std::size_t>(axes[d])];
  const std::int64_t n = numel(shape);
  std::vector<std::int64_t> idx(static_cast<std::size_t>(n));
  std::vector<std::int64_t> pos(r, 0);
  std::int64_t src = 0;
  for (std::int64_t i = 0; i < n; ++i) {
    idx[static_cast<std::size_t>(i)] = src;
    for (std::size_t d = r; d-- > 0;) {
      ++pos[d];
      src += step[d];
      if (pos[d] < os[d]) break;
      src -= step[d] * pos[d];
      pos[d] = 0;
    }
  }
  return idx;
}

Var permute(Var a, const std::vector<int>& axes) {
  Shape os = permuted_shape(a.shape(), axes);
  return gather(a, make_index(permute_index(a.shape(), axes)), std::move(os));
}

Var concat(std::span<const Var> parts, int axis) {
  if (parts.empty()) throw ContractError("concat of zero tensors");
  const Shape& s0 = parts[0].shape();
  const int ax = norm_axis(axis, static_cast<int>(s0.size()));
  Shape os = s0;
  os[static_cast<std::size_t>(ax)] = 0;
  for (const Var& p : parts) {
    const Shape& s = p.shape();
    bool ok = s.size() == s0.size();
    for (std::size_t d = 0; ok && d < s.size(); ++d) ok = static_cast<int>(d) == ax || s[d] == s0[d];
    if (!ok) throw DimensionError("concat shape mismatch: " + to_string(s0) + " vs " + to_string(s));
    os[static_cast<std::size_t>(ax)] += s[static_cast<std::size_t>(ax)];
  }
  std::int64_t outer = 1, inner = 1;
  for (int d = 0; d < ax; ++d) outer *= s0[static_cast<std::size_t>(d)];
  for (std::size_t d = static_cast<std::size_t>(ax) + 1; d < s0.size(); ++d) inner *= s0[d];
  std::vector<std::int64_t> chunk;  // per-part contiguous run length
  for (const Var& p : parts) chunk.push_back(p.shape()[static_cast<std::size_t>(ax)] * inner);
  const std::int64_t row = os[static_cast<std::size_t>(ax)] * inner;
  Tensor out(os);
  std::int64_t col = 0;
  for (std::size_t pi = 0; pi < parts.size(); ++pi) {
    const double* src = parts[pi].value().ptr();
    for (std::int64_t o = 0; o < outer; ++o) std::copy_n(src + o * chunk[pi], chunk[pi], out.ptr() + o * row + col);
    col += chunk[pi];
  }
  std::vector<Var> inputs(parts.begin(), parts.end());
  return parts[0].tape->record(std::move(out), inputs,
                               [chunk, outer, row](const Tape&, const Tensor& g, std::span<Tensor* const> gr) {
                                 std::int64_t c = 0;
                                 for (std::size_t pi = 0; pi < gr.size(); ++pi) {
                                   if (gr[pi]) {
                                     double* dst = gr[pi]->ptr();
                                     for (std::int64_t o = 0; o < outer; ++o) {
                                       const double* s = g.ptr() + o * row + c;
                                       for (std::int64_t q = 0; q < chunk[pi]; ++q) dst[o * chunk[pi] + q] += s[q];
                                     }
                                   }
                                   c += chunk[pi];
                                 }
                               });
}

Var stack(std::span<const Var> parts, int axis) {
  if (parts.empty()) throw ContractError("stack of zero tensors");
  const int r = static_cast<int>(parts[0].shape().size());
  const int ax = axis < 0 ? axis + r + 1 : axis;
  if (ax < 0 || ax > r) throw DimensionError("stack axis out of range");
  std::vector<Var> expanded;
  expanded.reserve(parts.size());
  for (const Var& p : parts) {
    Shape s = p.shape();
    s.insert(s.begin() + ax, 1);
    expanded.push_back(reshape(p, s));
  }
  return concat(expanded, ax);
}

Var slice(Var a, int axis, std::int64_t start, std::int64_t length) {
  const Shape& s = a.shape();
  const int ax = norm_axis(axis, static_cast<int>(s.size()));
  const std::int64_t n = s[static_cast<std::size_t>(ax)];
  if (start < 0 || length <= 0 || start + length > n) {
    throw IndexError("slice [" + std::to_string(start) + ", +" + std::to_string(length) + ") out of range for axis of " +
                     std::to_string(n));
  }
  std::vector<std::pair<std::int64_t, std::int64_t>> pads(s.size(), {0, 0});
  pads[static_cast<std::size_t>(ax)] = {-start, -(n - start - length)};
  return pad(a, pads);
}

Var select(Var a, int axis, std::int64_t i) {
  const int ax = norm_axis(axis, a.value().rank());
  Var s = slice(a, ax, i, 1);
  Shape os = a.shape();
  os.erase(os.begin() + ax);
  return reshape(s, os);
}

Var pad(Var a, const std::vector<std::pair<std::int64_t, std::int64_t>>& pads) {
  const Shape& s = a.shape();
  if (pads.size() != s.size()) throw DimensionError("pad spec rank mismatch for shape " + to_string(s));
  Shape os(s.size());
  for (std::size_t d = 0; d < s.size(); ++d) os[d] = s[d] + pads[d].first + pads[d].second;
  const std::int64_t n = numel(os);
  for (auto d : os) {
    if (d <= 0) throw DimensionError("padding produces empty shape from " + to_string(s));
  }
  std::vector<std::int64_t> stride(s.size(), 1);
  for (std::size_t d = s.size(); d-- > 1;) stride[d - 1] = stride[d] * s[d];
  std::vector<std::int64_t> idx(static_cast<std::size_t>(n));
  std::vector<std::int64_t> pos(s.size(), 0);
  for (std::int64_t i = 0; i < n; ++i) {
    std::int64_t src = 0;
    bool inside = true;
    for (std::size_t d = 0; d < s.size(); ++d) {
      const std::int64_t q = pos[d] - pads[d].first;
      if (q < 0 || q >= s[d]) {
        inside = false;
        break;
      }
      src += q * stride[d];
    }
    idx[static_cast<std::size_t>(i)] = inside ? src : -1;
    for (std::size_t d = s.size(); d-- > 0;) {
      if (++pos[d] < os[d]) break;
      pos[d] = 0;
    }
  }
  return gather(a, make_index(std::move(idx)), std::move(os));
}

Var roll(Var a, int axis, std::int64_t shift) {
  const Shape& s = a.shape();
  const int ax = norm_axis(axis, static_cast<int>(s.size()));
  const std::int64_t len = s[static_cast<std::size_t>(ax)];
  std::int64_t outer = 1, inner = 1;
  for (int d = 0; d < ax; ++d) outer *= s[static_cast<std::size_t>(d)];
  for (std::size_t d = static_cast<std::size_t>(ax) + 1; d < s.size(); ++d) inner *= s[d];
  const std::int64_t sh = ((shift % len) + len) % len;
  std::vector<std::int64_t> idx(static_cast<std::size_t>(numel(s)));
  for (std::int64_t o = 0; o < outer; ++o)
    for (std::int64_t p = 0; p < len; ++p) {
      const std::int64_t src_p = ((p - sh) % len + len) % len;
      for (std::int64_t q = 0; q < inner; ++q)
        idx[static_cast<std::size_t>((o * len + p) * inner + q)] = (o * len + src_p) * inner + q;
    }
  return gather(a, make_index(std::move(idx)), s);
}

Var softmax_last(Var x) {
  const Tensor& xv = x.value();
  const std::int64_t n = xv.shape().empty() ? 1 : xv.shape().back();
  const std::int64_t rows = xv.numel() / n;
  Tensor out(xv.shape());
  for (std::int64_t r = 0; r < rows; ++r) {
    const double* in = xv.ptr() + r * n;
    double* o = out.ptr() + r * n;
    double mx = in[0];
    for (std::int64_t j = 1; j < n; ++j) mx = std::max(mx, in[j]);
    double z = 0.0;
    for (std::int64_t j = 0; j < n; ++j) {
      o[j] = std::exp(in[j] - mx);
      z += o[j];
    }
    for (std::int64_t j = 0; j < n; ++j) o[j] /= z;
  }
  // The reverse rule reads this node's own output.
  const int iy = static_cast<int>(x.tape->size());
  return x.tape->record(std::move(out), {x}, [iy, n, rows](const Tape& t, const Tensor& g, std::span<Tensor* const> gr) {
    const Tensor& yv = t.value(iy);
    double* dst = gr[0]->ptr();
    for (std::int64_t r = 0; r < rows; ++r) {
      const double* yr = yv.ptr() + r * n;
      const double* gr_ = g.ptr() + r * n;
      double dot = 0.0;
      for (std::int64_t j = 0; j < n; ++j) dot += gr_[j] * yr[j];
      for (std::int64_t j = 0; j < n; ++j) dst[r * n + j] += yr[j] * (gr_[j] - dot);
    }
  });
}

Var layer_norm(Var x, Var gamma, Var beta, double eps) {
  if (eps <= 0.0) throw ConfigError("layer_norm eps must be positive");
  const Tensor& xv = x.value();
  const std::int64_t c = xv.shape().back();
  if (gamma.shape() != Shape{c} || beta.shape() != Shape{c}) {
    throw DimensionError("layer_norm affine shape mismatch for input " + to_string(xv.shape()));
  }
  const std::int64_t rows = xv.numel() / c;
  auto xhat = std::make_shared<Tensor>(xv.shape());
  auto inv_std = std::make_shared<std::vector<double>>(static_cast<std::size_t>(rows));
  Tensor out(xv.shape());
  const double* gp = gamma.value().ptr();
  const double* bp = beta.value().ptr();
  for (std::int64_t r = 0; r < rows; ++r) {
    const double* in = xv.ptr() + r * c;
    double mu = 0.0;
    for (std::int64_t j = 0; j < c; ++j) mu += in[j];
    mu /= static_cast<double>(c);
    double var = 0.0;
    for (std::int64_t j = 0; j < c; ++j) var += (in[j] - mu) * (in[j] - mu);
    var /= static_cast<double>(c);
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv_std)[static_cast<std::size_t>(r)] = is;
    for (std::int64_t j = 0; j < c; ++j) {
      const double h = (in[j] - mu) * is;
      (*xhat)[r * c + j] = h;
      out[r * c + j] = gp[j] * h + bp[j];
    }
  }
  const int ig = gamma.id;
  return x.tape->record(std::move(out), {x, gamma, beta},
                        [=](const Tape& t, const Tensor& g, std::span<Tensor* const> gr) {
                          const double* gm = t.value(ig).ptr();
                          std::vector<double> dh(static_cast<std::size_t>(c));
                          for (std::int64_t r = 0; r < rows; ++r) {
                            const double* go = g.ptr() + r * c;
                            const double* h = xhat->ptr() + r * c;
                            if (gr[1]) {
                              double* d = gr[1]->ptr();
                              for (std::int64_t j = 0; j < c; ++j) d[j] += go[j] * h[j];
                            }
                            if (gr[2]) {
                              double* d = gr[2]->ptr();
                              for (std::int64_t j = 0; j < c; ++j) d[j] += go[j];
                            }
                            if (gr[0]) {
                              double m1 = 0.0, m2 = 0.0;
                              for (std::int64_t j = 0; j < c; ++j) {
                                dh[static_cast<std::size_t>(j)] = go[j] * gm[j];
                                m1 += dh[static_cast<std::size_t>(j)];
                                m2 += dh[static_cast<std::size_t>(j)] * h[j];
                              }
                              m1 /= static_cast<double>(c);
                              m2 /= static_cast<double>(c);
                              const double is = (*inv_std)[static_cast<std::size_t>(r)];
                              double* d = gr[0]->ptr() + r * c;
                              for (std::int64_t j = 0; j < c; ++j) d[j] += is * (dh[static_cast<std::size_t>(j)] - m1 - h[j] * m2);
                            }
                          }
                        });
}

Var gelu(Var x) {
  Tensor out = x.value();
  for (auto& v : out.data()) v = 0.5 * v * (1.0 + std::erf(v * kInvSqrt2));
  const int ix = x.id;
  return x.tape->record(std::move(out), {x}, [ix](const Tape& t, const Tensor& g, std::span<Tensor* const> gr) {
    const Tensor& xv = t.value(ix);
    double* dst = gr[0]->ptr();
    for (std::int64_t i = 0; i < g.numel(); ++i) {
      const double v = xv[i];
      const double cdf = 0.5 * (1.0 + std::erf(v * kInvSqrt2));
      const double pdf = kInvSqrt2Pi * std::exp(-0.5 * v * v);
      dst[i] += g[i] * (cdf + v * pdf);
    }
  });
}

Var exp(Var x) {
  Tensor out = x.value();
  for (auto& v : out.data()) v = std::exp(v);
  const int iy = static_cast<int>(x.tape->size());
  return x.tape->record(std::move(out), {x}, [iy](const Tape& t, const Tensor& g, std::span<Tensor* const> gr) {
    const Tensor& y = t.value(iy);
    double* dst = gr[0]->ptr();
    for (std::int64_t i = 0; i < g.numel(); ++i) dst[i] += g[i] * y[i];
  });
}

Var sum(Var x) {
  double s = 0.0;
  for (double v : x.value().data()) s += v;
  return x.tape->record(Tensor::scalar(s), {x}, [](const Tape&, const Tensor& g, std::span<Tensor* const> gr) {
    const double gv = g[0];
    for (auto& v : gr[0]->data()) v += gv;
  });
}

Var mean(Var x) { return scale(sum(x), 1.0 / static_cast<double>(x.value().numel())); }

Var linear(Var x, Var weight, Var bias) { return add(linear(x, weight), bias); }

Var linear(Var x, Var weight) {
  const Shape& xs = x.shape();
  const std::int64_t in = xs.back();
  if (weight.value().rank() != 2 || weight.dim(0) != in) {
    throw DimensionError("linear: input " + to_string(xs) + " incompatible with weight " + to_string(weight.shape()));
  }
  const std::int64_t rows = numel(xs) / in;
  Var flat = reshape(x, {rows, in});
  Var y = matmul(flat, weight);
  Shape os = xs;
  os.back() = weight.dim(1);
  return reshape(y, os);
}

Var conv2d(Var x, Var weight, Var bias, int stride, int pad_px) {
  const Shape& xs = x.shape();
  const Shape& ws = weight.shape();
  if (xs.size() != 3 || ws.size() != 4 || ws[1] != xs[0] || ws[2] != ws[3]) {
    throw DimensionError("conv2d: input " + to_string(xs) + " incompatible with weight " + to_string(ws));
  }
  if (stride < 1) throw ConfigError("conv2d stride must be >= 1");
  const std::int64_t c = xs[0], h = xs[1], w = xs[2], co = ws[0], k = ws[2];
  const std::int64_t ho = (h + 2 * pad_px - k) / stride + 1;
  const std::int64_t wo = (w + 2 * pad_px - k) / stride + 1;
  if (ho <= 0 || wo <= 0) throw DimensionError("conv2d output would be empty for input " + to_string(xs));
  const std::int64_t ckk = c * k * k;
  // Columns laid out [c*k*k, ho*wo] so the product weight[co, ckk] * cols yields [co, ho*wo].
  std::vector<std::int64_t> idx(static_cast<std::size_t>(ckk * ho * wo));
  for (std::int64_t ci = 0; ci < c; ++ci)
    for (std::int64_t ky = 0; ky < k; ++ky)
      for (std::int64_t kx = 0; kx < k; ++kx) {
        const std::int64_t rowi = (ci * k + ky) * k + kx;
        for (std::int64_t oy = 0; oy < ho; ++oy)
          for (std::int64_t ox = 0; ox < wo; ++ox) {
            const std::int64_t iy = oy * stride + ky - pad_px;
            const std::int64_t ix = ox * stride + kx - pad_px;
            idx[static_cast<std::size_t>(rowi * ho * wo + oy * wo + ox)] =
                (iy < 0 || iy >= h || ix < 0 || ix >= w) ? -1 : (ci * h + iy) * w + ix;
          }
      }
  Var cols = gather(x, make_index(std::move(idx)), {ckk, ho * wo});
  Var wm = reshape(weight, {co, ckk});
  Var y = matmul(wm, cols);
  y = add(y, reshape(bias, {co, 1}));
  return reshape(y, {co, ho, wo});
}

Var upsample_nearest2x(Var x) {
  const Shape& s = x.shape();
  if (s.size() != 3) throw DimensionError("upsample expects [C,H,W], got " + to_string(s));
  const std::int64_t c = s[0], h = s[1], w = s[2];
  std::vector<std::int64_t> idx(static_cast<std::size_t>(c * 4 * h * w));
  std::size_t q = 0;
  for (std::int64_t ci = 0; ci < c; ++ci)
    for (std::int64_t y = 0; y < 2 * h; ++y)
      for (std::int64_t xx = 0; xx < 2 * w; ++xx) idx[q++] = (ci * h + y / 2) * w + xx / 2;
  return gather(x, make_index(std::move(idx)), {c, 2 * h, 2 * w});
}

Var maxpool2x2(Var x) {
  const Shape& s = x.shape();
  if (s.size() != 3) throw DimensionError("maxpool expects [C,H,W], got " + to_string(s));
  const std::int64_t c = s[0], h = s[1], w = s[2], ho = h / 2, wo = w / 2;
  if (ho == 0 || wo == 0) throw DimensionError("maxpool2x2 needs spatial extent >= 2, got " + to_string(s));
  const Tensor& xv = x.value();
  std::vector<std::int64_t> arg(static_cast<std::size_t>(c * ho * wo));
  std::size_t q = 0;
  for (std::int64_t ci = 0; ci < c; ++ci)
    for (std::int64_t y = 0; y < ho; ++y)
      for (std::int64_t xx = 0; xx < wo; ++xx) {
        std::int64_t best = (ci * h + 2 * y) * w + 2 * xx;
        for (int dy = 0; dy < 2; ++dy)
          for (int dx = 0; dx < 2; ++dx) {
            const std::int64_t i = (ci * h + 2 * y + dy) * w + 2 * xx + dx;
            if (xv[i] > xv[best]) best = i;
          }
        arg[q++] = best;
      }
  return gather(x, make_index(std::move(arg)), {c, ho, wo});
}

Var bce_with_logits(Var logits, const Tensor& targets) {
  const Tensor& xv = logits.value();
  if (xv.shape() != targets.shape()) {
    throw DimensionError("bce target shape " + to_string(targets.shape()) + " vs logits " + to_string(xv.shape()));
  }
  const double n = static_cast<double>(xv.numel());
  double s = 0.0;
  for (std::int64_t i = 0; i < xv.numel(); ++i) {
    const double x = xv[i];
    s += std::max(x, 0.0) - x * targets[i] + std::log1p(std::exp(-std::abs(x)));
  }
  auto y = std::make_shared<Tensor>(targets);
  const int ix = logits.id;
  return logits.tape->record(Tensor::scalar(s / n), {logits},
                             [=](const Tape& t, const Tensor& g, std::span<Tensor* const> gr) {
                               const Tensor& xl = t.value(ix);
                               double* dst = gr[0]->ptr();
                               for (std::int64_t i = 0; i < xl.numel(); ++i) {
                                 const double sig = 1.0 / (1.0 + std::exp(-xl[i]));
                                 dst[i] += g[0] * (sig - (*y)[i]) / n;
                               }
                             });
}

Var cross_entropy(Var logits, std::span<const int> labels) {
  const Tensor& xv = logits.value();
  if (xv.rank() != 2 || xv.dim(0) != static_cast<std::int64_t>(labels.size())) {
    throw DimensionError("cross_entropy expects [N,K] logits with N labels, got " + to_string(xv.shape()));
  }
  const std::int64_t rows = xv.dim(0), k = xv.dim(1);
  auto probs = std::make_shared<Tensor>(xv.shape());
  auto lab = std::make_shared<std::vector<int>>(labels.begin(), labels.end());
  double s = 0.0;
  for (std::int64_t r = 0; r < rows; ++r) {
    const int l = labels[static_cast<std::size_t>(r)];
    if (l < 0 || l >= k) throw IndexError("cross_entropy label out of range");
    const double* in = xv.ptr() + r * k;
    double mx = in[0];
    for (std::int64_t j = 1; j < k; ++j) mx = std::max(mx, in[j]);
    double z = 0.0;
    for (std::int64_t j = 0; j < k; ++j) z += std::exp(in[j] - mx);
    for (std::int64_t j = 0; j < k; ++j) (*probs)[r * k + j] = std::exp(in[j] - mx) / z;
    s += -(in[l] - mx - std::log(z));
  }
  const double n = static_cast<double>(rows);
  return logits.tape->record(Tensor::scalar(s / n), {logits},
                             [=](const Tape&, const Tensor& g, std::span<Tensor* const> gr) {
                               double* dst = gr[0]->ptr();
                               for (std::int64_t r = 0; r < rows; ++r)
                                 for (std::int64_t j = 0; j < k; ++j) {
                                   const double onehot = (*lab)[static_cast<std::size_t>(r)] == j ? 1.0 : 0.0;
                                   dst[r * k + j] += g[0] * ((*probs)[r * k + j] - onehot) / n;
                                 }
                             });
}

Var smooth_l1(Var pred, const Tensor& target, double beta) {
  const Tensor& pv = pred.value();
  if (pv.shape() != target.shape()) {
    throw DimensionError("smooth_l1 target shape " + to_string(target.shape()) + " vs " + to_string(pv.shape()));
  }
  if (beta <= 0.0) throw ConfigError("smooth_l1 beta must be positive");
  double s = 0.0;
  for (std::int64_t i = 0; i < pv.numel(); ++i) {
    const double d = std::abs(pv[i] - target[i]);
    s += d < beta ? 0.5 * d * d / beta : d - 0.5 * beta;
  }
  auto tg = std::make_shared<Tensor>(target);
  const int ip = pred.id;
  return pred.tape->record(Tensor::scalar(s), {pred}, [=](const Tape& t, const Tensor& g, std::span<Tensor* const> gr) {
    const Tensor& p = t.value(ip);
    double* dst = gr[0]->ptr();
    for (std::int64_t i = 0; i < p.numel(); ++i) {
      const double d = p[i] - (*tg)[i];
      const double dd = std::abs(d) < beta ? d / beta : (d > 0 ? 1.0 : -1.0);
      dst[i] += g[0] * dd;
    }
  });
}

}  // namespace vdet::ops
