#include "sen4x/ops.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <limits>

#include "sen4x/error.hpp"

namespace sen4x::ops {
namespace {

template <typename T>
using MatR = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapR = Eigen::Map<MatR<T>>;
template <typename T>
using CMapR = Eigen::Map<const MatR<T>>;

void check_same(const Shape& a, const Shape& b, const char* op) {
  if (a != b) fail(ErrorCode::kShapeMismatch, std::string(op) + ": " + shape_str(a) + " vs " + shape_str(b));
}

template <typename T>
void accumulate(Node<T>& input, const T* g, T scale_by = T{1}) {
  if (!input.requires_grad) return;
  Tensor<T>& dst = input.ensure_grad();
  for (std::size_t i = 0; i < dst.numel(); ++i) dst.data[i] += scale_by * g[i];
}

struct ConvGeom {
  int cin, h, w, k, stride, pad, ho, wo;
};

template <typename T>
void im2col(const T* x, const ConvGeom& g, T* col) {
  const int plane = g.ho * g.wo;
  for (int c = 0; c < g.cin; ++c) {
    for (int ky = 0; ky < g.k; ++ky) {
      for (int kx = 0; kx < g.k; ++kx) {
        T* dst = col + static_cast<std::size_t>((c * g.k + ky) * g.k + kx) * plane;
        for (int oy = 0; oy < g.ho; ++oy) {
          const int iy = oy * g.stride - g.pad + ky;
          T* row = dst + oy * g.wo;
          if (iy < 0 || iy >= g.h) {
            std::fill(row, row + g.wo, T{0});
            continue;
          }
          const T* src = x + (static_cast<std::size_t>(c) * g.h + iy) * g.w;
          for (int ox = 0; ox < g.wo; ++ox) {
            const int ix = ox * g.stride - g.pad + kx;
            row[ox] = (ix >= 0 && ix < g.w) ? src[ix] : T{0};
          }
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const T* col, const ConvGeom& g, T* x) {
  const int plane = g.ho * g.wo;
  for (int c = 0; c < g.cin; ++c) {
    for (int ky = 0; ky < g.k; ++ky) {
      for (int kx = 0; kx < g.k; ++kx) {
        const T* src = col + static_cast<std::size_t>((c * g.k + ky) * g.k + kx) * plane;
        for (int oy = 0; oy < g.ho; ++oy) {
          const int iy = oy * g.stride - g.pad + ky;
          if (iy < 0 || iy >= g.h) continue;
          T* dst = x + (static_cast<std::size_t>(c) * g.h + iy) * g.w;
          const T* row = src + oy * g.wo;
          for (int ox = 0; ox < g.wo; ++ox) {
            const int ix = ox * g.stride - g.pad + kx;
            if (ix >= 0 && ix < g.w) dst[ix] += row[ox];
          }
        }
      }
    }
  }
}

template <typename T>
Var<T> scalar_result(T value, std::vector<Var<T>> inputs, std::function<void(Node<T>&)> fn) {
  return make_result(Tensor<T>({1}, std::vector<T>{value}), std::move(inputs), std::move(fn));
}

}  // namespace

std::vector<int> shift_region_ids(int height, int width, int window, int shift) {
  std::vector<int> ids(static_cast<std::size_t>(height) * width, 0);
  if (shift == 0) return ids;
  auto band = [&](int v, int extent) {
    if (v < extent - window) return 0;
    if (v < extent - shift) return 1;
    return 2;
  };
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) ids[static_cast<std::size_t>(y) * width + x] = band(y, height) * 3 + band(x, width);
  return ids;
}

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  return lincomb(a, T{1}, b, T{1});
}

template <typename T>
Var<T> lincomb(const Var<T>& a, T alpha, const Var<T>& b, T beta) {
  check_same(a.shape(), b.shape(), "lincomb");
  Tensor<T> out(a.shape());
  const auto& av = a.value().data;
  const auto& bv = b.value().data;
  for (std::size_t i = 0; i < out.numel(); ++i) out.data[i] = alpha * av[i] + beta * bv[i];
  return make_result<T>(std::move(out), {a, b}, [alpha, beta](Node<T>& self) {
    accumulate(*self.inputs[0], self.grad.ptr(), alpha);
    accumulate(*self.inputs[1], self.grad.ptr(), beta);
  });
}

template <typename T>
Var<T> scale(const Var<T>& a, T alpha) {
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out.data[i] = alpha * a.value().data[i];
  return make_result<T>(std::move(out), {a},
                        [alpha](Node<T>& self) { accumulate(*self.inputs[0], self.grad.ptr(), alpha); });
}

template <typename T>
Var<T> add_const(const Var<T>& a, const Tensor<T>& c) {
  check_same(a.shape(), c.shape, "add_const");
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out.data[i] = a.value().data[i] + c.data[i];
  return make_result<T>(std::move(out), {a}, [](Node<T>& self) { accumulate(*self.inputs[0], self.grad.ptr()); });
}

template <typename T>
Var<T> gelu(const Var<T>& a) {
  const T inv_sqrt2 = T(0.70710678118654752440);
  Tensor<T> out(a.shape());
  const auto& x = a.value().data;
  for (std::size_t i = 0; i < out.numel(); ++i) out.data[i] = T(0.5) * x[i] * (T{1} + std::erf(x[i] * inv_sqrt2));
  return make_result<T>(std::move(out), {a}, [inv_sqrt2](Node<T>& self) {
    Node<T>& in = *self.inputs[0];
    Tensor<T>& g = in.ensure_grad();
    const T inv_sqrt_2pi = T(0.39894228040143267794);
    for (std::size_t i = 0; i < g.numel(); ++i) {
      const T x = in.value.data[i];
      const T cdf = T(0.5) * (T{1} + std::erf(x * inv_sqrt2));
      const T pdf = inv_sqrt_2pi * std::exp(T(-0.5) * x * x);
      g.data[i] += self.grad.data[i] * (cdf + x * pdf);
    }
  });
}

template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& w, const Var<T>& b, int stride, int pad) {
  const Shape& xs = x.shape();
  const Shape& ws = w.shape();
  if (xs.size() != 3 || ws.size() != 4 || ws[2] != ws[3])
    fail(ErrorCode::kShapeMismatch, "conv2d: bad ranks " + shape_str(xs) + " / " + shape_str(ws));
  if (xs[0] != ws[1])
    fail(ErrorCode::kShapeMismatch,
         "conv2d: input has " + std::to_string(xs[0]) + " channels, kernel expects " + std::to_string(ws[1]));
  const int k = ws[2];
  if (pad < 0) pad = k / 2;
  ConvGeom g{xs[0], xs[1], xs[2], k, stride, pad, 0, 0};
  g.ho = (g.h + 2 * pad - k) / stride + 1;
  g.wo = (g.w + 2 * pad - k) / stride + 1;
  if (g.ho <= 0 || g.wo <= 0) fail(ErrorCode::kShapeMismatch, "conv2d: input smaller than kernel");
  const int cout = ws[0];
  const int kk = g.cin * k * k;
  const int n = g.ho * g.wo;
  const bool direct = (k == 1 && stride == 1 && pad == 0);

  std::vector<T> col;
  const T* colp = x.value().ptr();
  if (!direct) {
    col.resize(static_cast<std::size_t>(kk) * n);
    im2col(x.value().ptr(), g, col.data());
    colp = col.data();
  }
  Tensor<T> out({cout, g.ho, g.wo});
  MapR<T> y(out.ptr(), cout, n);
  y.noalias() = CMapR<T>(w.value().ptr(), cout, kk) * CMapR<T>(colp, kk, n);
  if (b.defined()) {
    for (int o = 0; o < cout; ++o) y.row(o).array() += b.value().data[o];
  }

  std::vector<Var<T>> inputs{x, w};
  if (b.defined()) inputs.push_back(b);
  return make_result<T>(std::move(out), std::move(inputs), [g, cout, kk, n, direct](Node<T>& self) {
    Node<T>& xn = *self.inputs[0];
    Node<T>& wn = *self.inputs[1];
    CMapR<T> dy(self.grad.ptr(), cout, n);
    std::vector<T> col;
    const T* colp = xn.value.ptr();
    if (!direct && wn.requires_grad) {
      col.resize(static_cast<std::size_t>(kk) * n);
      im2col(xn.value.ptr(), g, col.data());
      colp = col.data();
    }
    if (wn.requires_grad) {
      MapR<T> dw(wn.ensure_grad().ptr(), cout, kk);
      dw.noalias() += dy * CMapR<T>(colp, kk, n).transpose();
    }
    if (self.inputs.size() > 2 && self.inputs[2]->requires_grad) {
      Tensor<T>& db = self.inputs[2]->ensure_grad();
      // plain loop: Eigen's vectorized sum() peels by pointer alignment, which
      // would make the result depend on where the heap put the gradient
      for (int o = 0; o < cout; ++o) {
        const T* row = self.grad.ptr() + static_cast<std::size_t>(o) * n;
        T acc{0};
        for (int i = 0; i < n; ++i) acc += row[i];
        db.data[o] += acc;
      }
    }
    if (xn.requires_grad) {
      CMapR<T> wm(wn.value.ptr(), cout, kk);
      if (direct) {
        MapR<T> dx(xn.ensure_grad().ptr(), kk, n);
        dx.noalias() += wm.transpose() * dy;
      } else {
        std::vector<T> dcol(static_cast<std::size_t>(kk) * n);
        MapR<T>(dcol.data(), kk, n).noalias() = wm.transpose() * dy;
        col2im_add(dcol.data(), g, xn.ensure_grad().ptr());
      }
    }
  });
}

template <typename T>
Var<T> concat_channels(const std::vector<Var<T>>& xs) {
  if (xs.empty()) fail(ErrorCode::kShapeMismatch, "concat_channels: no inputs");
  const int h = xs[0].shape()[1];
  const int w = xs[0].shape()[2];
  int c = 0;
  for (const auto& x : xs) {
    if (x.shape().size() != 3 || x.shape()[1] != h || x.shape()[2] != w)
      fail(ErrorCode::kShapeMismatch, "concat_channels: spatial mismatch " + shape_str(x.shape()));
    c += x.shape()[0];
  }
  Tensor<T> out({c, h, w});
  std::size_t off = 0;
  for (const auto& x : xs) {
    std::copy(x.value().data.begin(), x.value().data.end(), out.data.begin() + off);
    off += x.value().numel();
  }
  return make_result<T>(std::move(out), xs, [](Node<T>& self) {
    std::size_t off = 0;
    for (auto& in : self.inputs) {
      accumulate(*in, self.grad.ptr() + off);
      off += in->value.numel();
    }
  });
}

template <typename T>
Var<T> pixel_shuffle(const Var<T>& x, int s) {
  const Shape& xs = x.shape();
  if (xs.size() != 3 || xs[0] % (s * s) != 0)
    fail(ErrorCode::kShapeMismatch, "pixel_shuffle: channels " + shape_str(xs) + " not divisible by s²");
  const int c = xs[0] / (s * s);
  const int h = xs[1];
  const int w = xs[2];
  Tensor<T> out({c, h * s, w * s});
  auto src_index = [=](int ch, int oy, int ox) {
    const int y = oy / s, dy = oy % s, xx = ox / s, dx = ox % s;
    return (static_cast<std::size_t>(ch * s * s + dy * s + dx) * h + y) * w + xx;
  };
  for (int ch = 0; ch < c; ++ch)
    for (int oy = 0; oy < h * s; ++oy)
      for (int ox = 0; ox < w * s; ++ox) out.at(ch, oy, ox) = x.value().data[src_index(ch, oy, ox)];
  return make_result<T>(std::move(out), {x}, [=](Node<T>& self) {
    Node<T>& in = *self.inputs[0];
    Tensor<T>& g = in.ensure_grad();
    for (int ch = 0; ch < c; ++ch)
      for (int oy = 0; oy < h * s; ++oy)
        for (int ox = 0; ox < w * s; ++ox) g.data[src_index(ch, oy, ox)] += self.grad.at(ch, oy, ox);
  });
}

template <typename T>
Var<T> upsample_nearest(const Var<T>& x, int s) {
  const Shape& xs = x.shape();
  const int c = xs[0], h = xs[1], w = xs[2];
  Tensor<T> out({c, h * s, w * s});
  for (int ch = 0; ch < c; ++ch)
    for (int oy = 0; oy < h * s; ++oy)
      for (int ox = 0; ox < w * s; ++ox) out.at(ch, oy, ox) = x.value().at(ch, oy / s, ox / s);
  return make_result<T>(std::move(out), {x}, [=](Node<T>& self) {
    Tensor<T>& g = self.inputs[0]->ensure_grad();
    for (int ch = 0; ch < c; ++ch)
      for (int oy = 0; oy < h * s; ++oy)
        for (int ox = 0; ox < w * s; ++ox) g.at(ch, oy / s, ox / s) += self.grad.at(ch, oy, ox);
  });
}

template <typename T>
Var<T> to_tokens(const Var<T>& x) {
  const int c = x.shape()[0];
  const int l = x.shape()[1] * x.shape()[2];
  Tensor<T> out({l, c});
  MapR<T>(out.ptr(), l, c) = CMapR<T>(x.value().ptr(), c, l).transpose();
  return make_result<T>(std::move(out), {x}, [c, l](Node<T>& self) {
    MapR<T>(self.inputs[0]->ensure_grad().ptr(), c, l) += CMapR<T>(self.grad.ptr(), l, c).transpose();
  });
}

template <typename T>
Var<T> from_tokens(const Var<T>& x, int h, int w) {
  const int l = x.shape()[0];
  const int c = x.shape()[1];
  if (l != h * w) fail(ErrorCode::kShapeMismatch, "from_tokens: token count does not match grid");
  Tensor<T> out({c, h, w});
  MapR<T>(out.ptr(), c, l) = CMapR<T>(x.value().ptr(), l, c).transpose();
  return make_result<T>(std::move(out), {x}, [c, l](Node<T>& self) {
    MapR<T>(self.inputs[0]->ensure_grad().ptr(), l, c) += CMapR<T>(self.grad.ptr(), c, l).transpose();
  });
}

template <typename T>
Var<T> linear(const Var<T>& x, const Var<T>& w, const Var<T>& b) {
  const int l = x.shape()[0];
  const int in = x.shape()[1];
  const int out_dim = w.shape()[0];
  if (w.shape()[1] != in) fail(ErrorCode::kShapeMismatch, "linear: " + shape_str(x.shape()) + " · " + shape_str(w.shape()));
  Tensor<T> out({l, out_dim});
  MapR<T> y(out.ptr(), l, out_dim);
  y.noalias() = CMapR<T>(x.value().ptr(), l, in) * CMapR<T>(w.value().ptr(), out_dim, in).transpose();
  if (b.defined()) y.rowwise() += Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>>(b.value().ptr(), out_dim);
  std::vector<Var<T>> inputs{x, w};
  if (b.defined()) inputs.push_back(b);
  return make_result<T>(std::move(out), std::move(inputs), [l, in, out_dim](Node<T>& self) {
    Node<T>& xn = *self.inputs[0];
    Node<T>& wn = *self.inputs[1];
    CMapR<T> dy(self.grad.ptr(), l, out_dim);
    if (xn.requires_grad)
      MapR<T>(xn.ensure_grad().ptr(), l, in).noalias() += dy * CMapR<T>(wn.value.ptr(), out_dim, in);
    if (wn.requires_grad)
      MapR<T>(wn.ensure_grad().ptr(), out_dim, in).noalias() += dy.transpose() * CMapR<T>(xn.value.ptr(), l, in);
    if (self.inputs.size() > 2 && self.inputs[2]->requires_grad) {
      T* db = self.inputs[2]->ensure_grad().ptr();
      for (int r = 0; r < l; ++r)
        for (int o = 0; o < out_dim; ++o) db[o] += dy(r, o);
    }
  });
}

template <typename T>
Var<T> layer_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, T eps) {
  const int l = x.shape()[0];
  const int c = x.shape()[1];
  Tensor<T> out({l, c});
  std::vector<T> xhat(static_cast<std::size_t>(l) * c);
  std::vector<T> inv_std(l);
  const T* xv = x.value().ptr();
  const T* gv = gamma.value().ptr();
  const T* bv = beta.value().ptr();
  for (int r = 0; r < l; ++r) {
    const T* row = xv + static_cast<std::size_t>(r) * c;
    T mean = 0;
    for (int j = 0; j < c; ++j) mean += row[j];
    mean /= c;
    T var = 0;
    for (int j = 0; j < c; ++j) var += (row[j] - mean) * (row[j] - mean);
    var /= c;
    const T is = T{1} / std::sqrt(var + eps);
    inv_std[r] = is;
    for (int j = 0; j < c; ++j) {
      const std::size_t i = static_cast<std::size_t>(r) * c + j;
      xhat[i] = (row[j] - mean) * is;
      out.data[i] = xhat[i] * gv[j] + bv[j];
    }
  }
  return make_result<T>(std::move(out), {x, gamma, beta},
                        [l, c, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node<T>& self) {
    Node<T>& xn = *self.inputs[0];
    Node<T>& gn = *self.inputs[1];
    Node<T>& bn = *self.inputs[2];
    const T* dy = self.grad.ptr();
    if (gn.requires_grad || bn.requires_grad) {
      T* dg = gn.requires_grad ? gn.ensure_grad().ptr() : nullptr;
      T* db = bn.requires_grad ? bn.ensure_grad().ptr() : nullptr;
      for (int r = 0; r < l; ++r)
        for (int j = 0; j < c; ++j) {
          const std::size_t i = static_cast<std::size_t>(r) * c + j;
          if (dg) dg[j] += dy[i] * xhat[i];
          if (db) db[j] += dy[i];
        }
    }
    if (!xn.requires_grad) return;
    T* dx = xn.ensure_grad().ptr();
    const T* gv = gn.value.ptr();
    for (int r = 0; r < l; ++r) {
      T mean_d = 0, mean_dx = 0;
      for (int j = 0; j < c; ++j) {
        const std::size_t i = static_cast<std::size_t>(r) * c + j;
        const T d = dy[i] * gv[j];
        mean_d += d;
        mean_dx += d * xhat[i];
      }
      mean_d /= c;
      mean_dx /= c;
      for (int j = 0; j < c; ++j) {
        const std::size_t i = static_cast<std::size_t>(r) * c + j;
        const T d = dy[i] * gv[j];
        dx[i] += inv_std[r] * (d - mean_d - xhat[i] * mean_dx);
      }
    }
  });
}

template <typename T>
Var<T> window_attention(const Var<T>& qkv, const Var<T>& rel_bias, const WindowSpec& spec) {
  return window_attention(qkv, rel_bias, spec, static_cast<std::vector<T>*>(nullptr));
}

template <typename T>
Var<T> window_attention(const Var<T>& qkv, const Var<T>& rel_bias, const WindowSpec& spec,
                        std::vector<T>* probs_out) {
  const int hh = spec.height, ww = spec.width, win = spec.window, shift = spec.shift, heads = spec.heads;
  const int l = hh * ww;
  if (qkv.shape().size() != 2 || qkv.shape()[0] != l || qkv.shape()[1] % 3 != 0)
    fail(ErrorCode::kShapeMismatch, "window_attention: qkv " + shape_str(qkv.shape()));
  if (hh % win != 0 || ww % win != 0)
    fail(ErrorCode::kShapeMismatch, "window_attention: grid " + std::to_string(hh) + "x" + std::to_string(ww) +
                                        " not divisible by window " + std::to_string(win));
  const int c = qkv.shape()[1] / 3;
  if (c % heads != 0) fail(ErrorCode::kShapeMismatch, "window_attention: channels not divisible by heads");
  const int span = 2 * win - 1;
  if (rel_bias.shape() != Shape{span * span, heads})
    fail(ErrorCode::kShapeMismatch, "window_attention: bias table " + shape_str(rel_bias.shape()));
  const int d = c / heads;
  const int n = win * win;
  const int nwy = hh / win, nwx = ww / win;
  const int nwin = nwy * nwx;
  const T sc = T{1} / std::sqrt(static_cast<T>(d));

  // token gather indices and region ids per window
  const std::vector<int> region = shift_region_ids(hh, ww, win, shift);
  std::vector<int> idx(static_cast<std::size_t>(nwin) * n);
  std::vector<int> reg(static_cast<std::size_t>(nwin) * n);
  for (int wy = 0; wy < nwy; ++wy)
    for (int wx = 0; wx < nwx; ++wx)
      for (int i = 0; i < n; ++i) {
        const int ry = wy * win + i / win, rx = wx * win + i % win;
        const int y = (ry + shift) % hh, x = (rx + shift) % ww;
        const std::size_t k = static_cast<std::size_t>(wy * nwx + wx) * n + i;
        idx[k] = y * ww + x;
        reg[k] = region[static_cast<std::size_t>(ry) * ww + rx];
      }
  std::vector<int> relidx(static_cast<std::size_t>(n) * n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      relidx[i * n + j] = (i / win - j / win + win - 1) * span + (i % win - j % win + win - 1);

  std::vector<T> probs(static_cast<std::size_t>(nwin) * heads * n * n);
  Tensor<T> out({l, c});
  const T* qv = qkv.value().ptr();
  const T* bias = rel_bias.value().ptr();
  MatR<T> q(n, d), k(n, d), v(n, d), s(n, n);
  for (int wi = 0; wi < nwin; ++wi) {
    const int* ix = idx.data() + static_cast<std::size_t>(wi) * n;
    const int* rg = reg.data() + static_cast<std::size_t>(wi) * n;
    for (int h = 0; h < heads; ++h) {
      for (int i = 0; i < n; ++i) {
        const T* row = qv + static_cast<std::size_t>(ix[i]) * 3 * c + h * d;
        for (int j = 0; j < d; ++j) {
          q(i, j) = row[j];
          k(i, j) = row[c + j];
          v(i, j) = row[2 * c + j];
        }
      }
      s.noalias() = q * k.transpose();
      T* p = probs.data() + (static_cast<std::size_t>(wi) * heads + h) * n * n;
      for (int i = 0; i < n; ++i) {
        T mx = -std::numeric_limits<T>::infinity();
        for (int j = 0; j < n; ++j) {
          if (rg[i] != rg[j]) continue;
          s(i, j) = s(i, j) * sc + bias[relidx[i * n + j] * heads + h];
          mx = std::max(mx, s(i, j));
        }
        T sum = 0;
        for (int j = 0; j < n; ++j) {
          const T e = (rg[i] == rg[j]) ? std::exp(s(i, j) - mx) : T{0};
          p[i * n + j] = e;
          sum += e;
        }
        for (int j = 0; j < n; ++j) p[i * n + j] /= sum;
      }
      MatR<T> o = CMapR<T>(p, n, n) * v;
      for (int i = 0; i < n; ++i) {
        T* row = out.ptr() + static_cast<std::size_t>(ix[i]) * c + h * d;
        for (int j = 0; j < d; ++j) row[j] = o(i, j);
      }
    }
  }
  if (probs_out) *probs_out = probs;

  return make_result<T>(
      std::move(out), {qkv, rel_bias},
      [=, idx = std::move(idx), relidx = std::move(relidx), probs = std::move(probs)](Node<T>& self) {
        Node<T>& qn = *self.inputs[0];
        Node<T>& bn = *self.inputs[1];
        const T* qv = qn.value.ptr();
        T* dqkv = qn.requires_grad ? qn.ensure_grad().ptr() : nullptr;
        T* dbias = bn.requires_grad ? bn.ensure_grad().ptr() : nullptr;
        const T* dout = self.grad.ptr();
        MatR<T> q(n, d), k(n, d), v(n, d), dO(n, d), dP(n, n), dS(n, n);
        for (int wi = 0; wi < nwin; ++wi) {
          const int* ix = idx.data() + static_cast<std::size_t>(wi) * n;
          for (int h = 0; h < heads; ++h) {
            for (int i = 0; i < n; ++i) {
              const T* row = qv + static_cast<std::size_t>(ix[i]) * 3 * c + h * d;
              const T* grow = dout + static_cast<std::size_t>(ix[i]) * c + h * d;
              for (int j = 0; j < d; ++j) {
                q(i, j) = row[j];
                k(i, j) = row[c + j];
                v(i, j) = row[2 * c + j];
                dO(i, j) = grow[j];
              }
            }
            CMapR<T> p(probs.data() + (static_cast<std::size_t>(wi) * heads + h) * n * n, n, n);
            dP.noalias() = dO * v.transpose();
            for (int i = 0; i < n; ++i) {
              T dot = 0;
              for (int j = 0; j < n; ++j) dot += dP(i, j) * p(i, j);
              for (int j = 0; j < n; ++j) dS(i, j) = p(i, j) * (dP(i, j) - dot);
            }
            if (dbias) {
              for (int i = 0; i < n; ++i)
                for (int j = 0; j < n; ++j) dbias[relidx[i * n + j] * heads + h] += dS(i, j);
            }
            if (dqkv) {
              MatR<T> dv = p.transpose() * dO;
              MatR<T> dq = (dS * k) * sc;
              MatR<T> dk = (dS.transpose() * q) * sc;
              for (int i = 0; i < n; ++i) {
                T* row = dqkv + static_cast<std::size_t>(ix[i]) * 3 * c + h * d;
                for (int j = 0; j < d; ++j) {
                  row[j] += dq(i, j);
                  row[c + j] += dk(i, j);
                  row[2 * c + j] += dv(i, j);
                }
              }
            }
          }
        }
      });
}

template <typename T>
Var<T> l1_loss(const Var<T>& pred, const Tensor<T>& target) {
  check_same(pred.shape(), target.shape, "l1_loss");
  const std::size_t n = target.numel();
  T acc = 0;
  for (std::size_t i = 0; i < n; ++i) acc += std::abs(pred.value().data[i] - target.data[i]);
  return scalar_result<T>(acc / static_cast<T>(n), {pred}, [target, n](Node<T>& self) {
    Node<T>& in = *self.inputs[0];
    Tensor<T>& g = in.ensure_grad();
    const T gs = self.grad.data[0] / static_cast<T>(n);
    for (std::size_t i = 0; i < n; ++i) {
      const T diff = in.value.data[i] - target.data[i];
      g.data[i] += gs * static_cast<T>((diff > 0) - (diff < 0));
    }
  });
}

template <typename T>
Var<T> mse_loss(const Var<T>& pred, const Tensor<T>& target) {
  check_same(pred.shape(), target.shape, "mse_loss");
  const std::size_t n = target.numel();
  T acc = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const T diff = pred.value().data[i] - target.data[i];
    acc += diff * diff;
  }
  return scalar_result<T>(acc / static_cast<T>(n), {pred}, [target, n](Node<T>& self) {
    Node<T>& in = *self.inputs[0];
    Tensor<T>& g = in.ensure_grad();
    const T gs = T{2} * self.grad.data[0] / static_cast<T>(n);
    for (std::size_t i = 0; i < n; ++i) g.data[i] += gs * (in.value.data[i] - target.data[i]);
  });
}

template <typename T>
Var<T> dot_const(const Var<T>& x, const Tensor<T>& c) {
  check_same(x.shape(), c.shape, "dot_const");
  T acc = 0;
  for (std::size_t i = 0; i < c.numel(); ++i) acc += x.value().data[i] * c.data[i];
  return scalar_result<T>(acc, {x}, [c](Node<T>& self) {
    accumulate(*self.inputs[0], c.ptr(), self.grad.data[0]);
  });
}

template <typename T>
Var<T> masked_cross_entropy(const Var<T>& logits, std::span<const std::uint8_t> labels, std::uint8_t ignore) {
  const Shape& ls = logits.shape();
  const int kc = ls[0];
  const std::size_t np = static_cast<std::size_t>(ls[1]) * ls[2];
  if (labels.size() != np) fail(ErrorCode::kShapeMismatch, "masked_cross_entropy: label count mismatch");
  const T* z = logits.value().ptr();
  T total = 0;
  std::size_t count = 0;
  for (std::size_t p = 0; p < np; ++p) {
    const std::uint8_t lab = labels[p];
    if (lab == ignore) continue;
    if (lab >= kc) fail(ErrorCode::kData, "masked_cross_entropy: label " + std::to_string(lab) + " out of range");
    T mx = z[p];
    for (int k = 1; k < kc; ++k) mx = std::max(mx, z[k * np + p]);
    T sum = 0;
    for (int k = 0; k < kc; ++k) sum += std::exp(z[k * np + p] - mx);
    total += mx + std::log(sum) - z[lab * np + p];
    ++count;
  }
  if (count == 0) fail(ErrorCode::kData, "masked_cross_entropy: every pixel is ignored");
  std::vector<std::uint8_t> lab_copy(labels.begin(), labels.end());
  return scalar_result<T>(total / static_cast<T>(count), {logits},
                          [kc, np, count, ignore, lab_copy = std::move(lab_copy)](Node<T>& self) {
    Node<T>& in = *self.inputs[0];
    T* g = in.ensure_grad().ptr();
    const T* z = in.value.ptr();
    const T gs = self.grad.data[0] / static_cast<T>(count);
    for (std::size_t p = 0; p < np; ++p) {
      if (lab_copy[p] == ignore) continue;
      T mx = z[p];
      for (int k = 1; k < kc; ++k) mx = std::max(mx, z[k * np + p]);
      T sum = 0;
      for (int k = 0; k < kc; ++k) sum += std::exp(z[k * np + p] - mx);
      for (int k = 0; k < kc; ++k) {
        const T prob = std::exp(z[k * np + p] - mx) / sum;
        g[k * np + p] += gs * (prob - (k == lab_copy[p] ? T{1} : T{0}));
      }
    }
  });
}

#define SEN4X_INSTANTIATE_OPS(T)                                                                             \
  template Var<T> add(const Var<T>&, const Var<T>&);                                                        \
  template Var<T> lincomb(const Var<T>&, T, const Var<T>&, T);                                              \
  template Var<T> scale(const Var<T>&, T);                                                                  \
  template Var<T> add_const(const Var<T>&, const Tensor<T>&);                                               \
  template Var<T> gelu(const Var<T>&);                                                                      \
  template Var<T> conv2d(const Var<T>&, const Var<T>&, const Var<T>&, int, int);                            \
  template Var<T> concat_channels(const std::vector<Var<T>>&);                                              \
  template Var<T> pixel_shuffle(const Var<T>&, int);                                                        \
  template Var<T> upsample_nearest(const Var<T>&, int);                                                     \
  template Var<T> to_tokens(const Var<T>&);                                                                 \
  template Var<T> from_tokens(const Var<T>&, int, int);                                                     \
  template Var<T> linear(const Var<T>&, const Var<T>&, const Var<T>&);                                      \
  template Var<T> layer_norm(const Var<T>&, const Var<T>&, const Var<T>&, T);                               \
  template Var<T> window_attention(const Var<T>&, const Var<T>&, const WindowSpec&);                        \
  template Var<T> window_attention(const Var<T>&, const Var<T>&, const WindowSpec&, std::vector<T>*);       \
  template Var<T> l1_loss(const Var<T>&, const Tensor<T>&);                                                 \
  template Var<T> mse_loss(const Var<T>&, const Tensor<T>&);                                                \
  template Var<T> dot_const(const Var<T>&, const Tensor<T>&);                                               \
  template Var<T> masked_cross_entropy(const Var<T>&, std::span<const std::uint8_t>, std::uint8_t);

SEN4X_INSTANTIATE_OPS(float)
SEN4X_INSTANTIATE_OPS(double)

}  // namespace sen4x::ops
