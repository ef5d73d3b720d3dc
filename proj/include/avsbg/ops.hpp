#pragma once

// Differentiable tensor ops used by the network modules. Each op has a plain
// Tensor kernel where the computation is also needed outside the graph.
// Layout conventions: images are [N,C,H,W]; masks are [N,H,W]; row batches
// are [N,D].

#include <Eigen/Core>
#include <cmath>
#include <numeric>

#include "avsbg/autograd.hpp"

namespace avsbg {

namespace detail {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using CMatMap = Eigen::Map<const RowMat>;

inline void require_rank(const Tensor& t, int rank, const char* op) {
  if (t.rank() != rank)
    throw ArgumentError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                        shape_str(t.shape()));
}

inline double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise

inline Var add(const Var& a, const Var& b) {
  a.value().check_same(b.value(), "add");
  Tensor out = a.value();
  out += b.value();
  return make_op(std::move(out), {a, b}, [](detail::Node& self) {
    for (std::size_t i = 0; i < 2; ++i)
      if (needs_grad(self, i)) self.inputs[i]->grad_buffer() += self.grad;
  });
}

inline Var sub(const Var& a, const Var& b) {
  a.value().check_same(b.value(), "sub");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b.value()[i];
  return make_op(std::move(out), {a, b}, [](detail::Node& self) {
    if (needs_grad(self, 0)) self.inputs[0]->grad_buffer() += self.grad;
    if (needs_grad(self, 1)) {
      Tensor& g = self.inputs[1]->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
    }
  });
}

inline Var mul(const Var& a, const Var& b) {
  a.value().check_same(b.value(), "mul");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
  return make_op(std::move(out), {a, b}, [](detail::Node& self) {
    const Tensor& av = self.inputs[0]->value;
    const Tensor& bv = self.inputs[1]->value;
    if (needs_grad(self, 0)) {
      Tensor& g = self.inputs[0]->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * bv[i];
    }
    if (needs_grad(self, 1)) {
      Tensor& g = self.inputs[1]->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * av[i];
    }
  });
}

inline Var scale(const Var& a, double s) {
  Tensor out = a.value();
  out *= s;
  return make_op(std::move(out), {a}, [s](detail::Node& self) {
    Tensor& g = self.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += s * self.grad[i];
  });
}

inline Var sigmoid(const Var& a) {
  Tensor out = a.value().map(detail::sigmoid);
  return make_op(std::move(out), {a}, [](detail::Node& self) {
    Tensor& g = self.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double y = self.value[i];
      g[i] += self.grad[i] * y * (1.0 - y);
    }
  });
}

/// x * sigmoid(x); the pointwise nonlinearity used throughout the network.
inline Var silu(const Var& a) {
  Tensor out = a.value().map([](double x) { return x * detail::sigmoid(x); });
  return make_op(std::move(out), {a}, [](detail::Node& self) {
    const Tensor& x = self.inputs[0]->value;
    Tensor& g = self.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double s = detail::sigmoid(x[i]);
      g[i] += self.grad[i] * (s + x[i] * s * (1.0 - s));
    }
  });
}

inline Var sum(const Var& a) {
  return make_op(Tensor(Shape{}, a.value().sum()), {a}, [](detail::Node& self) {
    Tensor& g = self.inputs[0]->grad_buffer();
    const double go = self.grad[0];
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += go;
  });
}

inline Var mean(const Var& a) { return scale(sum(a), 1.0 / static_cast<double>(a.size())); }

inline Var reshape(const Var& a, Shape shape) {
  Tensor out = a.value().reshaped(std::move(shape));
  return make_op(std::move(out), {a}, [](detail::Node& self) {
    Tensor& g = self.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

// ---------------------------------------------------------------------------
// Convolution and linear maps

struct Conv2dGeometry {
  int n, cin, h, w, cout, k, stride, pad, hout, wout;
};

inline Conv2dGeometry conv2d_geometry(const Shape& x, const Shape& w, int stride, int pad) {
  if (x.size() != 4 || w.size() != 4) throw ArgumentError("conv2d: expected rank-4 input and weight");
  if (w[1] != x[1]) throw ArgumentError("conv2d: channel mismatch " + shape_str(x) + " vs " + shape_str(w));
  if (w[2] != w[3]) throw ArgumentError("conv2d: only square kernels supported");
  Conv2dGeometry g{x[0], x[1], x[2], x[3], w[0], w[2], stride, pad, 0, 0};
  g.hout = (g.h + 2 * pad - g.k) / stride + 1;
  g.wout = (g.w + 2 * pad - g.k) / stride + 1;
  if (g.hout <= 0 || g.wout <= 0) throw ArgumentError("conv2d: empty output for input " + shape_str(x));
  return g;
}

namespace detail {

inline bool conv_is_pointwise(const Conv2dGeometry& g) { return g.k == 1 && g.stride == 1 && g.pad == 0; }

inline void im2col(const double* x, const Conv2dGeometry& g, double* cols) {
  const int p_count = g.hout * g.wout;
  for (int c = 0; c < g.cin; ++c)
    for (int ki = 0; ki < g.k; ++ki)
      for (int kj = 0; kj < g.k; ++kj) {
        double* row = cols + static_cast<std::ptrdiff_t>(((c * g.k + ki) * g.k + kj) * p_count);
        const double* plane = x + static_cast<std::ptrdiff_t>(c) * g.h * g.w;
        for (int oh = 0; oh < g.hout; ++oh) {
          const int ih = oh * g.stride - g.pad + ki;
          for (int ow = 0; ow < g.wout; ++ow) {
            const int iw = ow * g.stride - g.pad + kj;
            row[oh * g.wout + ow] = (ih >= 0 && ih < g.h && iw >= 0 && iw < g.w) ? plane[ih * g.w + iw] : 0.0;
          }
        }
      }
}

inline void col2im_add(const double* cols, const Conv2dGeometry& g, double* dx) {
  const int p_count = g.hout * g.wout;
  for (int c = 0; c < g.cin; ++c)
    for (int ki = 0; ki < g.k; ++ki)
      for (int kj = 0; kj < g.k; ++kj) {
        const double* row = cols + static_cast<std::ptrdiff_t>(((c * g.k + ki) * g.k + kj) * p_count);
        double* plane = dx + static_cast<std::ptrdiff_t>(c) * g.h * g.w;
        for (int oh = 0; oh < g.hout; ++oh) {
          const int ih = oh * g.stride - g.pad + ki;
          if (ih < 0 || ih >= g.h) continue;
          for (int ow = 0; ow < g.wout; ++ow) {
            const int iw = ow * g.stride - g.pad + kj;
            if (iw >= 0 && iw < g.w) plane[ih * g.w + iw] += row[oh * g.wout + ow];
          }
        }
      }
}

}  // namespace detail

/// 2-D cross-correlation, zero padding. `bias` may be undefined.
inline Var conv2d(const Var& x, const Var& weight, const Var& bias, int stride = 1, int pad = 0) {
  const Conv2dGeometry g = conv2d_geometry(x.shape(), weight.shape(), stride, pad);
  if (bias && (bias.value().rank() != 1 || bias.dim(0) != g.cout))
    throw ArgumentError("conv2d: bias shape " + shape_str(bias.shape()));
  const int kdim = g.cin * g.k * g.k;
  const int p_count = g.hout * g.wout;
  const bool pointwise = detail::conv_is_pointwise(g);

  Tensor out({g.n, g.cout, g.hout, g.wout});
  std::vector<double> cols(pointwise ? 0 : static_cast<std::size_t>(kdim) * p_count);
  detail::CMatMap wmat(weight.value().data(), g.cout, kdim);
  for (int n = 0; n < g.n; ++n) {
    const double* xn = x.value().data() + static_cast<std::ptrdiff_t>(n) * g.cin * g.h * g.w;
    const double* src = xn;
    if (!pointwise) {
      detail::im2col(xn, g, cols.data());
      src = cols.data();
    }
    detail::MatMap on(out.data() + static_cast<std::ptrdiff_t>(n) * g.cout * p_count, g.cout, p_count);
    on.noalias() = wmat * detail::CMatMap(src, kdim, p_count);
    if (bias)
      for (int c = 0; c < g.cout; ++c) on.row(c).array() += bias.value()[static_cast<std::size_t>(c)];
  }

  std::vector<Var> inputs{x, weight};
  if (bias) inputs.push_back(bias);
  return make_op(std::move(out), std::move(inputs), [g, kdim, p_count, pointwise](detail::Node& self) {
    const Tensor& xv = self.inputs[0]->value;
    const Tensor& wv = self.inputs[1]->value;
    const bool need_x = needs_grad(self, 0), need_w = needs_grad(self, 1), need_b = needs_grad(self, 2);
    std::vector<double> cols(pointwise ? 0 : static_cast<std::size_t>(kdim) * p_count);
    std::vector<double> dcols(pointwise ? 0 : static_cast<std::size_t>(kdim) * p_count);
    detail::CMatMap wmat(wv.data(), g.cout, kdim);
    for (int n = 0; n < g.n; ++n) {
      detail::CMatMap gout(self.grad.data() + static_cast<std::ptrdiff_t>(n) * g.cout * p_count, g.cout, p_count);
      const double* xn = xv.data() + static_cast<std::ptrdiff_t>(n) * g.cin * g.h * g.w;
      if (need_w) {
        const double* src = xn;
        if (!pointwise) {
          detail::im2col(xn, g, cols.data());
          src = cols.data();
        }
        detail::MatMap gw(self.inputs[1]->grad_buffer().data(), g.cout, kdim);
        gw.noalias() += gout * detail::CMatMap(src, kdim, p_count).transpose();
      }
      if (need_b) {
        Tensor& gb = self.inputs[2]->grad_buffer();
        for (int c = 0; c < g.cout; ++c) gb[static_cast<std::size_t>(c)] += gout.row(c).sum();
      }
      if (need_x) {
        double* dxn = self.inputs[0]->grad_buffer().data() + static_cast<std::ptrdiff_t>(n) * g.cin * g.h * g.w;
        if (pointwise) {
          detail::MatMap dx(dxn, kdim, p_count);
          dx.noalias() += wmat.transpose() * gout;
        } else {
          detail::MatMap dc(dcols.data(), kdim, p_count);
          dc.noalias() = wmat.transpose() * gout;
          detail::col2im_add(dcols.data(), g, dxn);
        }
      }
    }
  });
}

/// 1x1 convolution: per-position linear map over channels. weight [Cout,Cin].
inline Var pointwise(const Var& x, const Var& weight, const Var& bias) {
  if (weight.value().rank() != 2) throw ArgumentError("pointwise: weight must be [Cout,Cin]");
  return conv2d(x, reshape(weight, {weight.dim(0), weight.dim(1), 1, 1}), bias, 1, 0);
}

/// y = x W^T + b for x [N,in], W [out,in].
inline Var linear(const Var& x, const Var& weight, const Var& bias) {
  detail::require_rank(x.value(), 2, "linear");
  detail::require_rank(weight.value(), 2, "linear");
  const int n = x.dim(0), in = x.dim(1), out_dim = weight.dim(0);
  if (weight.dim(1) != in) throw ArgumentError("linear: weight " + shape_str(weight.shape()) + " vs input " + shape_str(x.shape()));
  Tensor out({n, out_dim});
  detail::MatMap om(out.data(), n, out_dim);
  om.noalias() = detail::CMatMap(x.value().data(), n, in) * detail::CMatMap(weight.value().data(), out_dim, in).transpose();
  if (bias)
    for (int r = 0; r < n; ++r) om.row(r) += Eigen::Map<const Eigen::RowVectorXd>(bias.value().data(), out_dim);
  std::vector<Var> inputs{x, weight};
  if (bias) inputs.push_back(bias);
  return make_op(std::move(out), std::move(inputs), [n, in, out_dim](detail::Node& self) {
    detail::CMatMap g(self.grad.data(), n, out_dim);
    if (needs_grad(self, 0)) {
      detail::MatMap gx(self.inputs[0]->grad_buffer().data(), n, in);
      gx.noalias() += g * detail::CMatMap(self.inputs[1]->value.data(), out_dim, in);
    }
    if (needs_grad(self, 1)) {
      detail::MatMap gw(self.inputs[1]->grad_buffer().data(), out_dim, in);
      gw.noalias() += g.transpose() * detail::CMatMap(self.inputs[0]->value.data(), n, in);
    }
    if (needs_grad(self, 2)) {
      Eigen::Map<Eigen::RowVectorXd> gb(self.inputs[2]->grad_buffer().data(), out_dim);
      gb += g.colwise().sum();
    }
  });
}

// ---------------------------------------------------------------------------
// Resampling

namespace detail {

struct LinearTaps {
  std::vector<int> i0, i1;
  std::vector<double> w0, w1;
};

/// Half-pixel-centre linear interpolation taps (align_corners = false).
inline LinearTaps linear_taps(int in, int out) {
  LinearTaps t;
  t.i0.resize(static_cast<std::size_t>(out));
  t.i1.resize(static_cast<std::size_t>(out));
  t.w0.resize(static_cast<std::size_t>(out));
  t.w1.resize(static_cast<std::size_t>(out));
  const double ratio = static_cast<double>(in) / out;
  for (int o = 0; o < out; ++o) {
    double src = (o + 0.5) * ratio - 0.5;
    if (src < 0) src = 0;
    int i0 = static_cast<int>(std::floor(src));
    if (i0 > in - 1) i0 = in - 1;
    const int i1 = std::min(i0 + 1, in - 1);
    const double l1 = src - i0;
    const auto k = static_cast<std::size_t>(o);
    t.i0[k] = i0;
    t.i1[k] = i1;
    t.w0[k] = 1.0 - l1;
    t.w1[k] = l1;
  }
  return t;
}

/// Splits a tensor whose last two axes are spatial into (planes, H, W).
inline std::tuple<int, int, int> planes_hw(const Shape& s, const char* op) {
  if (s.size() < 2) throw ArgumentError(std::string(op) + ": need at least 2 spatial axes");
  const int h = s[s.size() - 2], w = s[s.size() - 1];
  const int planes = static_cast<int>(shape_numel(s) / (static_cast<std::size_t>(h) * w));
  return {planes, h, w};
}

inline void resize_planes(const double* in, int planes, int h, int w, double* out, int oh, int ow,
                          const LinearTaps& th, const LinearTaps& tw) {
  std::vector<double> tmp(static_cast<std::size_t>(h) * ow);
  for (int p = 0; p < planes; ++p) {
    const double* ip = in + static_cast<std::ptrdiff_t>(p) * h * w;
    double* op = out + static_cast<std::ptrdiff_t>(p) * oh * ow;
    for (int r = 0; r < h; ++r)
      for (int c = 0; c < ow; ++c) {
        const auto k = static_cast<std::size_t>(c);
        tmp[static_cast<std::size_t>(r * ow + c)] = tw.w0[k] * ip[r * w + tw.i0[k]] + tw.w1[k] * ip[r * w + tw.i1[k]];
      }
    for (int r = 0; r < oh; ++r) {
      const auto k = static_cast<std::size_t>(r);
      const double* a = tmp.data() + th.i0[k] * ow;
      const double* b = tmp.data() + th.i1[k] * ow;
      for (int c = 0; c < ow; ++c) op[r * ow + c] = th.w0[k] * a[c] + th.w1[k] * b[c];
    }
  }
}

inline void resize_planes_backward(const double* gout, int planes, int h, int w, double* gin, int oh, int ow,
                                   const LinearTaps& th, const LinearTaps& tw) {
  std::vector<double> tmp(static_cast<std::size_t>(h) * ow);
  for (int p = 0; p < planes; ++p) {
    const double* gp = gout + static_cast<std::ptrdiff_t>(p) * oh * ow;
    double* ip = gin + static_cast<std::ptrdiff_t>(p) * h * w;
    std::fill(tmp.begin(), tmp.end(), 0.0);
    for (int r = 0; r < oh; ++r) {
      const auto k = static_cast<std::size_t>(r);
      double* a = tmp.data() + th.i0[k] * ow;
      double* b = tmp.data() + th.i1[k] * ow;
      for (int c = 0; c < ow; ++c) {
        a[c] += th.w0[k] * gp[r * ow + c];
        b[c] += th.w1[k] * gp[r * ow + c];
      }
    }
    for (int r = 0; r < h; ++r)
      for (int c = 0; c < ow; ++c) {
        const auto k = static_cast<std::size_t>(c);
        const double v = tmp[static_cast<std::size_t>(r * ow + c)];
        ip[r * w + tw.i0[k]] += tw.w0[k] * v;
        ip[r * w + tw.i1[k]] += tw.w1[k] * v;
      }
  }
}

}  // namespace detail

/// Bilinear resize of the last two axes to (out_h, out_w).
inline Tensor resize_bilinear(const Tensor& x, int out_h, int out_w) {
  auto [planes, h, w] = detail::planes_hw(x.shape(), "resize_bilinear");
  Shape s = x.shape();
  s[s.size() - 2] = out_h;
  s[s.size() - 1] = out_w;
  Tensor out(std::move(s));
  detail::resize_planes(x.data(), planes, h, w, out.data(), out_h, out_w, detail::linear_taps(h, out_h),
                        detail::linear_taps(w, out_w));
  return out;
}

inline Var resize_bilinear(const Var& x, int out_h, int out_w) {
  auto [planes, h, w] = detail::planes_hw(x.shape(), "resize_bilinear");
  return make_op(resize_bilinear(x.value(), out_h, out_w), {x},
                 [planes = planes, h = h, w = w, out_h, out_w](detail::Node& self) {
                   detail::resize_planes_backward(self.grad.data(), planes, h, w, self.inputs[0]->grad_buffer().data(),
                                                  out_h, out_w, detail::linear_taps(h, out_h),
                                                  detail::linear_taps(w, out_w));
                 });
}

/// Nearest-neighbour resize of the last two axes (half-pixel centres).
inline Tensor resize_nearest(const Tensor& x, int out_h, int out_w) {
  auto [planes, h, w] = detail::planes_hw(x.shape(), "resize_nearest");
  Shape s = x.shape();
  s[s.size() - 2] = out_h;
  s[s.size() - 1] = out_w;
  Tensor out(std::move(s));
  auto src_index = [](int o, int in, int out) {
    return std::min(in - 1, static_cast<int>(std::floor((o + 0.5) * in / out)));
  };
  for (int p = 0; p < planes; ++p)
    for (int r = 0; r < out_h; ++r)
      for (int c = 0; c < out_w; ++c)
        out[static_cast<std::size_t>((p * out_h + r) * out_w + c)] =
            x[static_cast<std::size_t>((p * h + src_index(r, h, out_h)) * w + src_index(c, w, out_w))];
  return out;
}

/// Area averaging over non-overlapping factor x factor blocks of the last two axes.
inline Tensor avg_pool(const Tensor& x, int factor) {
  auto [planes, h, w] = detail::planes_hw(x.shape(), "avg_pool");
  if (factor <= 0 || h % factor || w % factor)
    throw ArgumentError("avg_pool: factor " + std::to_string(factor) + " does not divide " + shape_str(x.shape()));
  const int oh = h / factor, ow = w / factor;
  Shape s = x.shape();
  s[s.size() - 2] = oh;
  s[s.size() - 1] = ow;
  Tensor out(std::move(s));
  const double inv = 1.0 / (factor * factor);
  for (int p = 0; p < planes; ++p)
    for (int r = 0; r < h; ++r)
      for (int c = 0; c < w; ++c)
        out[static_cast<std::size_t>((p * oh + r / factor) * ow + c / factor)] +=
            inv * x[static_cast<std::size_t>((p * h + r) * w + c)];
  return out;
}

inline Var avg_pool(const Var& x, int factor) {
  if (factor == 1) return x;
  auto [planes, h, w] = detail::planes_hw(x.shape(), "avg_pool");
  return make_op(avg_pool(x.value(), factor), {x}, [planes = planes, h = h, w = w, factor](detail::Node& self) {
    Tensor& g = self.inputs[0]->grad_buffer();
    const int oh = h / factor, ow = w / factor;
    const double inv = 1.0 / (factor * factor);
    for (int p = 0; p < planes; ++p)
      for (int r = 0; r < h; ++r)
        for (int c = 0; c < w; ++c)
          g[static_cast<std::size_t>((p * h + r) * w + c)] +=
              inv * self.grad[static_cast<std::size_t>((p * oh + r / factor) * ow + c / factor)];
  });
}

/// [N,C,H,W] -> [N,C] spatial mean.
inline Var global_avg_pool(const Var& x) {
  detail::require_rank(x.value(), 4, "global_avg_pool");
  const int n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  Tensor out({n, c});
  for (int i = 0; i < n * c; ++i) {
    const double* p = x.value().data() + static_cast<std::ptrdiff_t>(i) * hw;
    out[static_cast<std::size_t>(i)] = std::accumulate(p, p + hw, 0.0) / hw;
  }
  return make_op(std::move(out), {x}, [n, c, hw](detail::Node& self) {
    Tensor& g = self.inputs[0]->grad_buffer();
    for (int i = 0; i < n * c; ++i) {
      const double v = self.grad[static_cast<std::size_t>(i)] / hw;
      double* p = g.data() + static_cast<std::ptrdiff_t>(i) * hw;
      for (int k = 0; k < hw; ++k) p[k] += v;
    }
  });
}

// ---------------------------------------------------------------------------
// Normalisation and broadcasting products

constexpr double kNormEpsilon = 1e-8;

/// L2-normalises along axis 1 of [N,C,...]: y = x / max(||x||, eps) per (n, position).
inline Var l2_normalize_channels(const Var& x, double eps = kNormEpsilon) {
  if (x.value().rank() < 2) throw ArgumentError("l2_normalize_channels: rank >= 2 required");
  const int n = x.dim(0), c = x.dim(1);
  const int hw = static_cast<int>(x.size() / (static_cast<std::size_t>(n) * c));
  Tensor out(x.shape());
  std::vector<double> norms(static_cast<std::size_t>(n) * hw);
  const Tensor& xv = x.value();
  for (int i = 0; i < n; ++i)
    for (int p = 0; p < hw; ++p) {
      double ss = 0.0;
      for (int k = 0; k < c; ++k) {
        const double v = xv[static_cast<std::size_t>((i * c + k) * hw + p)];
        ss += v * v;
      }
      const double nrm = std::max(std::sqrt(ss), eps);
      norms[static_cast<std::size_t>(i * hw + p)] = nrm;
      for (int k = 0; k < c; ++k) {
        const auto idx = static_cast<std::size_t>((i * c + k) * hw + p);
        out[idx] = xv[idx] / nrm;
      }
    }
  return make_op(std::move(out), {x}, [n, c, hw, eps, norms = std::move(norms)](detail::Node& self) {
    Tensor& g = self.inputs[0]->grad_buffer();
    const Tensor& y = self.value;
    for (int i = 0; i < n; ++i)
      for (int p = 0; p < hw; ++p) {
        const double nrm = norms[static_cast<std::size_t>(i * hw + p)];
        double dot = 0.0;
        if (nrm > eps)
          for (int k = 0; k < c; ++k) {
            const auto idx = static_cast<std::size_t>((i * c + k) * hw + p);
            dot += self.grad[idx] * y[idx];
          }
        for (int k = 0; k < c; ++k) {
          const auto idx = static_cast<std::size_t>((i * c + k) * hw + p);
          g[idx] += (self.grad[idx] - dot * y[idx]) / nrm;
        }
      }
  });
}

/// x[N,C,H,W] * s[N,C] broadcast over space.
inline Var channel_scale(const Var& x, const Var& s) {
  detail::require_rank(x.value(), 4, "channel_scale");
  detail::require_rank(s.value(), 2, "channel_scale");
  const int n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  if (s.dim(0) != n || s.dim(1) != c) throw ArgumentError("channel_scale: scale " + shape_str(s.shape()));
  Tensor out = x.value();
  for (int i = 0; i < n * c; ++i) {
    const double f = s.value()[static_cast<std::size_t>(i)];
    double* p = out.data() + static_cast<std::ptrdiff_t>(i) * hw;
    for (int k = 0; k < hw; ++k) p[k] *= f;
  }
  return make_op(std::move(out), {x, s}, [n, c, hw](detail::Node& self) {
    const Tensor& xv = self.inputs[0]->value;
    const Tensor& sv = self.inputs[1]->value;
    for (int i = 0; i < n * c; ++i) {
      const double* go = self.grad.data() + static_cast<std::ptrdiff_t>(i) * hw;
      if (needs_grad(self, 0)) {
        double* gx = self.inputs[0]->grad_buffer().data() + static_cast<std::ptrdiff_t>(i) * hw;
        const double f = sv[static_cast<std::size_t>(i)];
        for (int k = 0; k < hw; ++k) gx[k] += go[k] * f;
      }
      if (needs_grad(self, 1)) {
        const double* xp = xv.data() + static_cast<std::ptrdiff_t>(i) * hw;
        double acc = 0.0;
        for (int k = 0; k < hw; ++k) acc += go[k] * xp[k];
        self.inputs[1]->grad_buffer()[static_cast<std::size_t>(i)] += acc;
      }
    }
  });
}

/// x[N,C,H,W] * m[N,H,W] broadcast over channels.
inline Var spatial_scale(const Var& x, const Var& m) {
  detail::require_rank(x.value(), 4, "spatial_scale");
  detail::require_rank(m.value(), 3, "spatial_scale");
  const int n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  if (m.dim(0) != n || m.dim(1) != x.dim(2) || m.dim(2) != x.dim(3))
    throw ArgumentError("spatial_scale: mask " + shape_str(m.shape()) + " vs " + shape_str(x.shape()));
  Tensor out = x.value();
  for (int i = 0; i < n; ++i)
    for (int k = 0; k < c; ++k) {
      double* p = out.data() + static_cast<std::ptrdiff_t>(i * c + k) * hw;
      const double* mp = m.value().data() + static_cast<std::ptrdiff_t>(i) * hw;
      for (int q = 0; q < hw; ++q) p[q] *= mp[q];
    }
  return make_op(std::move(out), {x, m}, [n, c, hw](detail::Node& self) {
    const Tensor& xv = self.inputs[0]->value;
    const Tensor& mv = self.inputs[1]->value;
    for (int i = 0; i < n; ++i)
      for (int k = 0; k < c; ++k) {
        const auto off = static_cast<std::ptrdiff_t>(i * c + k) * hw;
        const double* go = self.grad.data() + off;
        const double* mp = mv.data() + static_cast<std::ptrdiff_t>(i) * hw;
        if (needs_grad(self, 0)) {
          double* gx = self.inputs[0]->grad_buffer().data() + off;
          for (int q = 0; q < hw; ++q) gx[q] += go[q] * mp[q];
        }
        if (needs_grad(self, 1)) {
          double* gm = self.inputs[1]->grad_buffer().data() + static_cast<std::ptrdiff_t>(i) * hw;
          const double* xp = xv.data() + off;
          for (int q = 0; q < hw; ++q) gm[q] += go[q] * xp[q];
        }
      }
  });
}

}  // namespace avsbg
