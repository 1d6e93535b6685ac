#include "iris/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "iris/error.hpp"

namespace iris {

namespace {

struct ConvGeom {
  int n, cin, h, w, cout, kh, kw, oh, ow, stride, pad_top, pad_left;
};

int pad_before(int in, int kernel, int stride, PadMode pad) {
  if (pad == PadMode::Valid) return 0;
  const int out = conv_out_extent(in, kernel, stride, pad);
  const int total = std::max((out - 1) * stride + kernel - in, 0);
  return total / 2;
}

// Output columns ox in [lo, hi] whose input column ox*stride + k - pad falls inside [0, extent).
void valid_range(int k, int pad, int stride, int extent, int out, int& lo, int& hi) {
  const int shift = pad - k;  // ix = ox*stride - shift
  lo = shift <= 0 ? 0 : (shift + stride - 1) / stride;
  const int top = extent - 1 + shift;
  hi = top < 0 ? -1 : std::min(out - 1, top / stride);
}

// cols[(ci*kh+ky)*kw+kx][oy*ow+ox] = x[ci][oy*stride+ky-pad_top][ox*stride+kx-pad_left], zero outside.
void im2col(const ConvGeom& g, const float* x, float* cols) {
  const std::size_t plane_out = static_cast<std::size_t>(g.oh) * g.ow;
  for (int ci = 0; ci < g.cin; ++ci)
    for (int ky = 0; ky < g.kh; ++ky) {
      int oy_lo, oy_hi;
      valid_range(ky, g.pad_top, g.stride, g.h, g.oh, oy_lo, oy_hi);
      for (int kx = 0; kx < g.kw; ++kx) {
        int ox_lo, ox_hi;
        valid_range(kx, g.pad_left, g.stride, g.w, g.ow, ox_lo, ox_hi);
        float* row = cols + static_cast<std::size_t>((ci * g.kh + ky) * g.kw + kx) * plane_out;
        std::fill(row, row + plane_out, 0.0f);
        for (int oy = oy_lo; oy <= oy_hi; ++oy) {
          const float* xrow = x + (static_cast<std::size_t>(ci) * g.h + (oy * g.stride + ky - g.pad_top)) * g.w;
          float* out = row + static_cast<std::size_t>(oy) * g.ow;
          const int base = kx - g.pad_left;
          for (int ox = ox_lo; ox <= ox_hi; ++ox) out[ox] = xrow[ox * g.stride + base];
        }
      }
    }
}

void col2im_acc(const ConvGeom& g, const float* cols, float* x) {
  const std::size_t plane_out = static_cast<std::size_t>(g.oh) * g.ow;
  for (int ci = 0; ci < g.cin; ++ci)
    for (int ky = 0; ky < g.kh; ++ky) {
      int oy_lo, oy_hi;
      valid_range(ky, g.pad_top, g.stride, g.h, g.oh, oy_lo, oy_hi);
      for (int kx = 0; kx < g.kw; ++kx) {
        int ox_lo, ox_hi;
        valid_range(kx, g.pad_left, g.stride, g.w, g.ow, ox_lo, ox_hi);
        const float* row = cols + static_cast<std::size_t>((ci * g.kh + ky) * g.kw + kx) * plane_out;
        for (int oy = oy_lo; oy <= oy_hi; ++oy) {
          float* xrow = x + (static_cast<std::size_t>(ci) * g.h + (oy * g.stride + ky - g.pad_top)) * g.w;
          const float* in = row + static_cast<std::size_t>(oy) * g.ow;
          const int base = kx - g.pad_left;
          for (int ox = ox_lo; ox <= ox_hi; ++ox) xrow[ox * g.stride + base] += in[ox];
        }
      }
    }
}

// c[m,p] += sum_k a[m,k] b[k,p]
void gemm_acc(const float* a, const float* b, float* c, std::size_t m, std::size_t k, std::size_t p) {
  std::size_t i = 0;
  for (; i + 4 <= m; i += 4) {
    float* c0 = c + i * p;
    float* c1 = c0 + p;
    float* c2 = c1 + p;
    float* c3 = c2 + p;
    for (std::size_t j = 0; j < k; ++j) {
      const float a0 = a[i * k + j], a1 = a[(i + 1) * k + j], a2 = a[(i + 2) * k + j], a3 = a[(i + 3) * k + j];
      const float* br = b + j * p;
      for (std::size_t q = 0; q < p; ++q) {
        const float bv = br[q];
        c0[q] += a0 * bv;
        c1[q] += a1 * bv;
        c2[q] += a2 * bv;
        c3[q] += a3 * bv;
      }
    }
  }
  for (; i < m; ++i)
    for (std::size_t j = 0; j < k; ++j) {
      const float av = a[i * k + j];
      const float* br = b + j * p;
      float* cr = c + i * p;
      for (std::size_t q = 0; q < p; ++q) cr[q] += av * br[q];
    }
}

// c[m,k] += sum_p a[m,p] b[k,p]
void gemm_abt_acc(const float* a, const float* b, float* c, std::size_t m, std::size_t k, std::size_t p) {
  for (std::size_t i = 0; i < m; ++i) {
    const float* ar = a + i * p;
    for (std::size_t j = 0; j < k; ++j) {
      const float* br = b + j * p;
      float s0 = 0.0f, s1 = 0.0f, s2 = 0.0f, s3 = 0.0f;
      std::size_t q = 0;
      for (; q + 4 <= p; q += 4) {
        s0 += ar[q] * br[q];
        s1 += ar[q + 1] * br[q + 1];
        s2 += ar[q + 2] * br[q + 2];
        s3 += ar[q + 3] * br[q + 3];
      }
      for (; q < p; ++q) s0 += ar[q] * br[q];
      c[i * k + j] += (s0 + s1) + (s2 + s3);
    }
  }
}

// c[k,p] += sum_m a[m,k] b[m,p]
void gemm_atb_acc(const float* a, const float* b, float* c, std::size_t m, std::size_t k, std::size_t p) {
  for (std::size_t i = 0; i < m; ++i) {
    const float* br = b + i * p;
    for (std::size_t j = 0; j < k; ++j) {
      const float av = a[i * k + j];
      float* cr = c + j * p;
      for (std::size_t q = 0; q < p; ++q) cr[q] += av * br[q];
    }
  }
}

struct Lerp {
  int i0, i1;
  float w1;
};

std::vector<Lerp> lerp_table(int in, int out) {
  std::vector<Lerp> t(static_cast<std::size_t>(out));
  const double ratio = static_cast<double>(in) / out;
  for (int o = 0; o < out; ++o) {
    double src = (o + 0.5) * ratio - 0.5;
    if (src < 0.0) src = 0.0;
    int i0 = static_cast<int>(std::floor(src));
    if (i0 >= in - 1) {
      t[static_cast<std::size_t>(o)] = Lerp{in - 1, in - 1, 0.0f};
      continue;
    }
    t[static_cast<std::size_t>(o)] = Lerp{i0, i0 + 1, static_cast<float>(src - i0)};
  }
  return t;
}

std::size_t leading(const Shape& s, int trailing) {
  std::size_t n = 1;
  for (std::size_t i = 0; i + static_cast<std::size_t>(trailing) < s.size(); ++i) n *= static_cast<std::size_t>(s[i]);
  return n;
}

}  // namespace

int conv_out_extent(int in, int kernel, int stride, PadMode pad) {
  require(stride > 0 && kernel > 0, "convolution needs positive kernel and stride");
  if (pad == PadMode::Same) return (in + stride - 1) / stride;
  require(kernel <= in, "VALID convolution kernel extent " + std::to_string(kernel) + " exceeds input extent " +
                            std::to_string(in));
  return (in - kernel) / stride + 1;
}

PoolWindow adaptive_window(int i, int in, int out) {
  const int begin = static_cast<int>((static_cast<long long>(i) * in) / out);
  const int end = static_cast<int>((static_cast<long long>(i + 1) * in + out - 1) / out);
  return PoolWindow{begin, end};
}

float sigmoid(float x) {
  if (x >= 0.0f) {
    const float z = std::exp(-x);
    return 1.0f / (1.0f + z);
  }
  const float z = std::exp(x);
  return z / (1.0f + z);
}

Var conv2d(Tape& tape, Var input, Var kernel, Var bias, int stride, PadMode pad) {
  const Tensor& x = tape.value(input);
  const Tensor& k = tape.value(kernel);
  const Tensor& b = tape.value(bias);
  require(x.rank() == 4, "conv2d input must be [N,Cin,H,W], got " + shape_str(x.shape()));
  require(k.rank() == 4, "conv2d kernel must be [Cout,Cin,kh,kw], got " + shape_str(k.shape()));
  require(x.dim(1) == k.dim(1), "conv2d channel mismatch: input axis 1 has " + std::to_string(x.dim(1)) +
                                    " but kernel axis 1 has " + std::to_string(k.dim(1)));
  require(b.rank() == 1 && b.dim(0) == k.dim(0), "conv2d bias must be [" + std::to_string(k.dim(0)) + "], got " +
                                                     shape_str(b.shape()));
  ConvGeom g{x.dim(0), x.dim(1), x.dim(2), x.dim(3), k.dim(0), k.dim(2), k.dim(3), 0, 0, stride, 0, 0};
  if (pad == PadMode::Valid) {
    require(g.kh <= g.h && g.kw <= g.w, "conv2d kernel " + shape_str({g.kh, g.kw}) + " exceeds input spatial axes " +
                                            shape_str({g.h, g.w}));
  }
  g.oh = conv_out_extent(g.h, g.kh, stride, pad);
  g.ow = conv_out_extent(g.w, g.kw, stride, pad);
  g.pad_top = pad_before(g.h, g.kh, stride, pad);
  g.pad_left = pad_before(g.w, g.kw, stride, pad);

  Tensor y({g.n, g.cout, g.oh, g.ow});
  const std::size_t plane_in = static_cast<std::size_t>(g.h) * g.w;
  const std::size_t plane_out = static_cast<std::size_t>(g.oh) * g.ow;
  const std::size_t ksize = static_cast<std::size_t>(g.cin) * g.kh * g.kw;
  std::vector<float> cols(ksize * plane_out);
  for (int n = 0; n < g.n; ++n) {
    im2col(g, x.data().data() + static_cast<std::size_t>(n) * g.cin * plane_in, cols.data());
    float* yp = y.data().data() + static_cast<std::size_t>(n) * g.cout * plane_out;
    for (int co = 0; co < g.cout; ++co) std::fill(yp + co * plane_out, yp + (co + 1) * plane_out, b[static_cast<std::size_t>(co)]);
    gemm_acc(k.data().data(), cols.data(), yp, static_cast<std::size_t>(g.cout), ksize, plane_out);
  }

  return tape.record(std::move(y), {input, kernel, bias}, [g](BackwardContext& ctx) {
    const float* gd = ctx.grad_out().data().data();
    const float* xd = ctx.in(0).data().data();
    const float* kd = ctx.in(1).data().data();
    float* gx = ctx.wants(0) ? ctx.grad_in(0).data().data() : nullptr;
    float* gk = ctx.wants(1) ? ctx.grad_in(1).data().data() : nullptr;
    float* gb = ctx.wants(2) ? ctx.grad_in(2).data().data() : nullptr;
    const std::size_t plane_in = static_cast<std::size_t>(g.h) * g.w;
    const std::size_t plane_out = static_cast<std::size_t>(g.oh) * g.ow;
    const std::size_t ksize = static_cast<std::size_t>(g.cin) * g.kh * g.kw;
    std::vector<float> cols(ksize * plane_out);
    std::vector<float> gcols(gx ? ksize * plane_out : 0);
    for (int n = 0; n < g.n; ++n) {
      const float* gp = gd + static_cast<std::size_t>(n) * g.cout * plane_out;
      if (gb)
        for (int co = 0; co < g.cout; ++co) {
          double s = 0.0;
          for (std::size_t i = 0; i < plane_out; ++i) s += gp[co * plane_out + i];
          gb[co] += static_cast<float>(s);
        }
      if (gk) {
        im2col(g, xd + static_cast<std::size_t>(n) * g.cin * plane_in, cols.data());
        gemm_abt_acc(gp, cols.data(), gk, static_cast<std::size_t>(g.cout), ksize, plane_out);
      }
      if (gx) {
        std::fill(gcols.begin(), gcols.end(), 0.0f);
        gemm_atb_acc(kd, gp, gcols.data(), static_cast<std::size_t>(g.cout), ksize, plane_out);
        col2im_acc(g, gcols.data(), gx + static_cast<std::size_t>(n) * g.cin * plane_in);
      }
    }
  });
}

Var adaptive_avg_pool2d(Tape& tape, Var input, int out_h, int out_w) {
  const Tensor& x = tape.value(input);
  require(x.rank() >= 2, "adaptive_avg_pool2d needs at least two axes, got " + shape_str(x.shape()));
  const int h = x.dim(-2);
  const int w = x.dim(-1);
  require(out_h > 0 && out_w > 0, "adaptive_avg_pool2d output extents must be positive");
  require(out_h <= h && out_w <= w, "adaptive_avg_pool2d output " + shape_str({out_h, out_w}) +
                                        " exceeds input spatial axes " + shape_str({h, w}));
  Shape out_shape = x.shape();
  out_shape[out_shape.size() - 2] = out_h;
  out_shape[out_shape.size() - 1] = out_w;
  Tensor y(out_shape);
  const std::size_t planes = leading(x.shape(), 2);
  for (std::size_t p = 0; p < planes; ++p) {
    const float* xp = x.data().data() + p * static_cast<std::size_t>(h) * w;
    float* yp = y.data().data() + p * static_cast<std::size_t>(out_h) * out_w;
    for (int i = 0; i < out_h; ++i) {
      const PoolWindow wy = adaptive_window(i, h, out_h);
      for (int j = 0; j < out_w; ++j) {
        const PoolWindow wx = adaptive_window(j, w, out_w);
        double s = 0.0;
        for (int yy = wy.begin; yy < wy.end; ++yy)
          for (int xx = wx.begin; xx < wx.end; ++xx) s += xp[yy * w + xx];
        yp[i * out_w + j] = static_cast<float>(s / ((wy.end - wy.begin) * (wx.end - wx.begin)));
      }
    }
  }
  return tape.record(std::move(y), {input}, [planes, h, w, out_h, out_w](BackwardContext& ctx) {
    const float* gd = ctx.grad_out().data().data();
    float* gx = ctx.grad_in(0).data().data();
    for (std::size_t p = 0; p < planes; ++p) {
      float* gxp = gx + p * static_cast<std::size_t>(h) * w;
      const float* gp = gd + p * static_cast<std::size_t>(out_h) * out_w;
      for (int i = 0; i < out_h; ++i) {
        const PoolWindow wy = adaptive_window(i, h, out_h);
        for (int j = 0; j < out_w; ++j) {
          const PoolWindow wx = adaptive_window(j, w, out_w);
          const float share = gp[i * out_w + j] / static_cast<float>((wy.end - wy.begin) * (wx.end - wx.begin));
          for (int yy = wy.begin; yy < wy.end; ++yy)
            for (int xx = wx.begin; xx < wx.end; ++xx) gxp[yy * w + xx] += share;
        }
      }
    }
  });
}

Var adaptive_avg_pool1d(Tape& tape, Var input, int out_len) {
  const Tensor& x = tape.value(input);
  require(x.rank() >= 1, "adaptive_avg_pool1d needs at least one axis");
  const int len = x.dim(-1);
  require(out_len > 0, "adaptive_avg_pool1d output length must be positive");
  require(out_len <= len, "adaptive_avg_pool1d output length " + std::to_string(out_len) +
                              " exceeds input length " + std::to_string(len));
  Shape out_shape = x.shape();
  out_shape.back() = out_len;
  Tensor y(out_shape);
  const std::size_t rows = leading(x.shape(), 1);
  for (std::size_t r = 0; r < rows; ++r) {
    const float* xp = x.data().data() + r * static_cast<std::size_t>(len);
    float* yp = y.data().data() + r * static_cast<std::size_t>(out_len);
    for (int i = 0; i < out_len; ++i) {
      const PoolWindow win = adaptive_window(i, len, out_len);
      double s = 0.0;
      for (int t = win.begin; t < win.end; ++t) s += xp[t];
      yp[i] = static_cast<float>(s / (win.end - win.begin));
    }
  }
  return tape.record(std::move(y), {input}, [rows, len, out_len](BackwardContext& ctx) {
    const float* gd = ctx.grad_out().data().data();
    float* gx = ctx.grad_in(0).data().data();
    for (std::size_t r = 0; r < rows; ++r) {
      for (int i = 0; i < out_len; ++i) {
        const PoolWindow win = adaptive_window(i, len, out_len);
        const float share = gd[r * static_cast<std::size_t>(out_len) + static_cast<std::size_t>(i)] /
                            static_cast<float>(win.end - win.begin);
        for (int t = win.begin; t < win.end; ++t) gx[r * static_cast<std::size_t>(len) + static_cast<std::size_t>(t)] += share;
      }
    }
  });
}

Var linear(Tape& tape, Var input, Var weight, Var bias) {
  const Tensor& x = tape.value(input);
  const Tensor& wt = tape.value(weight);
  const Tensor& b = tape.value(bias);
  require(x.rank() == 2, "linear input must be [N,F], got " + shape_str(x.shape()));
  require(wt.rank() == 2, "linear weight must be [C,F], got " + shape_str(wt.shape()));
  require(x.dim(1) == wt.dim(1), "linear feature mismatch: input axis 1 has " + std::to_string(x.dim(1)) +
                                     " but weight axis 1 has " + std::to_string(wt.dim(1)));
  require(b.rank() == 1 && b.dim(0) == wt.dim(0), "linear bias must be [" + std::to_string(wt.dim(0)) + "], got " +
                                                      shape_str(b.shape()));
  const int n = x.dim(0), f = x.dim(1), c = wt.dim(0);
  Tensor y({n, c});
  for (int i = 0; i < n; ++i) {
    const float* xr = x.data().data() + static_cast<std::size_t>(i) * f;
    for (int j = 0; j < c; ++j) {
      const float* wr = wt.data().data() + static_cast<std::size_t>(j) * f;
      float s = 0.0f;
      for (int t = 0; t < f; ++t) s += xr[t] * wr[t];
      y[static_cast<std::size_t>(i) * c + j] = s + b[static_cast<std::size_t>(j)];
    }
  }
  return tape.record(std::move(y), {input, weight, bias}, [n, f, c](BackwardContext& ctx) {
    const float* g = ctx.grad_out().data().data();
    const float* xd = ctx.in(0).data().data();
    const float* wd = ctx.in(1).data().data();
    if (ctx.wants(0)) {
      float* gx = ctx.grad_in(0).data().data();
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < c; ++j) {
          const float gv = g[static_cast<std::size_t>(i) * c + j];
          for (int t = 0; t < f; ++t) gx[static_cast<std::size_t>(i) * f + t] += gv * wd[static_cast<std::size_t>(j) * f + t];
        }
    }
    if (ctx.wants(1)) {
      float* gw = ctx.grad_in(1).data().data();
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < c; ++j) {
          const float gv = g[static_cast<std::size_t>(i) * c + j];
          for (int t = 0; t < f; ++t) gw[static_cast<std::size_t>(j) * f + t] += gv * xd[static_cast<std::size_t>(i) * f + t];
        }
    }
    if (ctx.wants(2)) {
      float* gb = ctx.grad_in(2).data().data();
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < c; ++j) gb[j] += g[static_cast<std::size_t>(i) * c + j];
    }
  });
}

Var relu(Tape& tape, Var input) {
  const Tensor& x = tape.value(input);
  Tensor y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] > 0.0f ? x[i] : 0.0f;
  if (tape.tracking_regimes()) {
    std::uint64_t h = 1469598103934665603ULL;
    for (std::size_t i = 0; i < x.size(); ++i) h = (h ^ static_cast<std::uint64_t>(x[i] > 0.0f)) * 1099511628211ULL;
    tape.note_regime(h);
  }
  return tape.record(std::move(y), {input}, [](BackwardContext& ctx) {
    const Tensor& x = ctx.in(0);
    const Tensor& g = ctx.grad_out();
    Tensor& gx = ctx.grad_in(0);
    for (std::size_t i = 0; i < x.size(); ++i)
      if (x[i] > 0.0f) gx[i] += g[i];
  });
}

Tensor softmax_rows(const Tensor& logits) {
  require(logits.rank() == 2 && logits.dim(1) >= 1, "softmax expects [N,C] with C >= 1");
  const int n = logits.dim(0), c = logits.dim(1);
  Tensor p(logits.shape());
  for (int i = 0; i < n; ++i) {
    const float* r = logits.data().data() + static_cast<std::size_t>(i) * c;
    float* o = p.data().data() + static_cast<std::size_t>(i) * c;
    const float m = *std::max_element(r, r + c);
    double s = 0.0;
    for (int j = 0; j < c; ++j) s += std::exp(static_cast<double>(r[j]) - m);
    for (int j = 0; j < c; ++j) o[j] = static_cast<float>(std::exp(static_cast<double>(r[j]) - m) / s);
  }
  return p;
}

Var log_softmax(Tape& tape, Var logits) {
  const Tensor& x = tape.value(logits);
  require(x.rank() == 2 && x.dim(1) >= 1, "log_softmax expects [N,C] with C >= 1, got " + shape_str(x.shape()));
  const int n = x.dim(0), c = x.dim(1);
  Tensor y(x.shape());
  for (int i = 0; i < n; ++i) {
    const float* r = x.data().data() + static_cast<std::size_t>(i) * c;
    float* o = y.data().data() + static_cast<std::size_t>(i) * c;
    const double m = *std::max_element(r, r + c);
    double s = 0.0;
    for (int j = 0; j < c; ++j) s += std::exp(r[j] - m);
    const double lse = std::log(s);
    for (int j = 0; j < c; ++j) o[j] = static_cast<float>(r[j] - m - lse);
  }
  return tape.record(std::move(y), {logits}, [n, c](BackwardContext& ctx) {
    const Tensor& y = ctx.out();
    const Tensor& g = ctx.grad_out();
    Tensor& gx = ctx.grad_in(0);
    for (int i = 0; i < n; ++i) {
      const std::size_t off = static_cast<std::size_t>(i) * c;
      double gs = 0.0;
      for (int j = 0; j < c; ++j) gs += g[off + j];
      for (int j = 0; j < c; ++j)
        gx[off + j] += static_cast<float>(g[off + j] - std::exp(static_cast<double>(y[off + j])) * gs);
    }
  });
}

Var cross_entropy(Tape& tape, Var logits, std::span<const int> targets) {
  const Tensor& x = tape.value(logits);
  require(x.rank() == 2, "cross_entropy expects [N,C] logits, got " + shape_str(x.shape()));
  const int n = x.dim(0), c = x.dim(1);
  require(static_cast<int>(targets.size()) == n, "cross_entropy target count " + std::to_string(targets.size()) +
                                                     " does not match batch " + std::to_string(n));
  require(n > 0, "cross_entropy on an empty batch");
  for (int t : targets)
    require(t >= 0 && t < c, "cross_entropy target " + std::to_string(t) + " outside [0, " + std::to_string(c) + ")");
  Tensor prob = softmax_rows(x);
  double total = 0.0;
  for (int i = 0; i < n; ++i) {
    const float* r = x.data().data() + static_cast<std::size_t>(i) * c;
    const double m = *std::max_element(r, r + c);
    double s = 0.0;
    for (int j = 0; j < c; ++j) s += std::exp(r[j] - m);
    total += -(r[targets[static_cast<std::size_t>(i)]] - m - std::log(s));
  }
  std::vector<int> tgt(targets.begin(), targets.end());
  return tape.record(Tensor::scalar(static_cast<float>(total / n)), {logits},
                     [prob = std::move(prob), tgt = std::move(tgt), n, c](BackwardContext& ctx) {
                       const float gv = ctx.grad_out()[0] / static_cast<float>(n);
                       Tensor& gx = ctx.grad_in(0);
                       for (int i = 0; i < n; ++i) {
                         const std::size_t off = static_cast<std::size_t>(i) * c;
                         for (int j = 0; j < c; ++j) {
                           const float onehot = j == tgt[static_cast<std::size_t>(i)] ? 1.0f : 0.0f;
                           gx[off + j] += gv * (prob[off + j] - onehot);
                         }
                       }
                     });
}

Var smooth_l1(Tape& tape, Var pred, const Tensor& target, float beta) {
  const Tensor& p = tape.value(pred);
  require(p.shape() == target.shape(), "smooth_l1 shape mismatch: " + shape_str(p.shape()) + " vs " +
                                           shape_str(target.shape()));
  require(beta > 0.0f, "smooth_l1 beta must be positive");
  require(!p.empty(), "smooth_l1 on an empty tensor");
  double total = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double d = static_cast<double>(p[i]) - target[i];
    const double ad = std::abs(d);
    total += ad < beta ? 0.5 * d * d / beta : ad - 0.5 * beta;
  }
  const auto n = static_cast<double>(p.size());
  return tape.record(Tensor::scalar(static_cast<float>(total / n)), {pred}, [target, beta, n](BackwardContext& ctx) {
    const Tensor& p = ctx.in(0);
    const double gv = ctx.grad_out()[0] / n;
    Tensor& gx = ctx.grad_in(0);
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double d = static_cast<double>(p[i]) - target[i];
      double slope;
      if (std::abs(d) < beta)
        slope = d / beta;
      else
        slope = d > 0.0 ? 1.0 : -1.0;
      gx[i] += static_cast<float>(gv * slope);
    }
  });
}

Var binary_cross_entropy_with_logits(Tape& tape, Var logits, const Tensor& targets) {
  const Tensor& x = tape.value(logits);
  require(x.shape() == targets.shape(), "binary_cross_entropy_with_logits shape mismatch: " + shape_str(x.shape()) +
                                            " vs " + shape_str(targets.shape()));
  require(!x.empty(), "binary_cross_entropy_with_logits on an empty tensor");
  for (std::size_t i = 0; i < targets.size(); ++i)
    require(targets[i] >= 0.0f && targets[i] <= 1.0f,
            "binary_cross_entropy_with_logits target " + std::to_string(targets[i]) + " outside [0,1]");
  double total = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double v = x[i];
    total += std::max(v, 0.0) - v * targets[i] + std::log1p(std::exp(-std::abs(v)));
  }
  const auto n = static_cast<double>(x.size());
  return tape.record(Tensor::scalar(static_cast<float>(total / n)), {logits}, [targets, n](BackwardContext& ctx) {
    const Tensor& x = ctx.in(0);
    const double gv = ctx.grad_out()[0] / n;
    Tensor& gx = ctx.grad_in(0);
    for (std::size_t i = 0; i < x.size(); ++i) gx[i] += static_cast<float>(gv * (sigmoid(x[i]) - targets[i]));
  });
}

Var add(Tape& tape, Var a, Var b) {
  const Tensor& x = tape.value(a);
  const Tensor& y = tape.value(b);
  require(x.shape() == y.shape(), "add shape mismatch: " + shape_str(x.shape()) + " vs " + shape_str(y.shape()));
  Tensor z(x.shape());
  for (std::size_t i = 0; i < z.size(); ++i) z[i] = x[i] + y[i];
  return tape.record(std::move(z), {a, b}, [](BackwardContext& ctx) {
    const Tensor& g = ctx.grad_out();
    for (std::size_t k = 0; k < 2; ++k) {
      if (!ctx.wants(k)) continue;
      Tensor& gx = ctx.grad_in(k);
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
    }
  });
}

Var scale(Tape& tape, Var a, float factor) {
  const Tensor& x = tape.value(a);
  Tensor z(x.shape());
  for (std::size_t i = 0; i < z.size(); ++i) z[i] = x[i] * factor;
  return tape.record(std::move(z), {a}, [factor](BackwardContext& ctx) {
    const Tensor& g = ctx.grad_out();
    Tensor& gx = ctx.grad_in(0);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * factor;
  });
}

Var reshape(Tape& tape, Var input, Shape shape) {
  Tensor y = tape.value(input).reshaped(std::move(shape));
  return tape.record(std::move(y), {input}, [](BackwardContext& ctx) {
    const Tensor& g = ctx.grad_out();
    Tensor& gx = ctx.grad_in(0);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
  });
}

Var gather(Tape& tape, Var input, std::vector<std::size_t> flat_index, Shape out_shape) {
  const Tensor& x = tape.value(input);
  require(shape_numel(out_shape) == flat_index.size(), "gather index count does not match output shape " +
                                                           shape_str(out_shape));
  Tensor y(std::move(out_shape));
  for (std::size_t i = 0; i < flat_index.size(); ++i) {
    require(flat_index[i] < x.size(), "gather index out of range");
    y[i] = x[flat_index[i]];
  }
  return tape.record(std::move(y), {input}, [idx = std::move(flat_index)](BackwardContext& ctx) {
    const Tensor& g = ctx.grad_out();
    Tensor& gx = ctx.grad_in(0);
    for (std::size_t i = 0; i < idx.size(); ++i) gx[idx[i]] += g[i];
  });
}

Var crop2d(Tape& tape, Var input, int n, int y0, int y1, int x0, int x1) {
  const Tensor& x = tape.value(input);
  require(x.rank() == 4, "crop2d expects [N,C,H,W], got " + shape_str(x.shape()));
  const int c = x.dim(1), h = x.dim(2), w = x.dim(3);
  require(n >= 0 && n < x.dim(0), "crop2d sample index out of range");
  require(0 <= y0 && y0 < y1 && y1 <= h && 0 <= x0 && x0 < x1 && x1 <= w,
          "crop2d window is empty or outside the feature map");
  const int ch = y1 - y0, cw = x1 - x0;
  Tensor y({1, c, ch, cw});
  for (int ci = 0; ci < c; ++ci)
    for (int yy = 0; yy < ch; ++yy)
      for (int xx = 0; xx < cw; ++xx)
        y[(static_cast<std::size_t>(ci) * ch + yy) * cw + xx] =
            x[((static_cast<std::size_t>(n) * c + ci) * h + (y0 + yy)) * w + (x0 + xx)];
  return tape.record(std::move(y), {input}, [n, c, h, w, y0, x0, ch, cw](BackwardContext& ctx) {
    const Tensor& g = ctx.grad_out();
    Tensor& gx = ctx.grad_in(0);
    for (int ci = 0; ci < c; ++ci)
      for (int yy = 0; yy < ch; ++yy)
        for (int xx = 0; xx < cw; ++xx)
          gx[((static_cast<std::size_t>(n) * c + ci) * h + (y0 + yy)) * w + (x0 + xx)] +=
              g[(static_cast<std::size_t>(ci) * ch + yy) * cw + xx];
  });
}

Tensor resize_bilinear(const Tensor& input, int out_h, int out_w) {
  require(input.rank() >= 2, "resize_bilinear needs at least two axes");
  const int h = input.dim(-2), w = input.dim(-1);
  require(h > 0 && w > 0, "resize_bilinear on an empty image");
  require(out_h > 0 && out_w > 0, "resize_bilinear output extents must be positive");
  Shape out_shape = input.shape();
  out_shape[out_shape.size() - 2] = out_h;
  out_shape[out_shape.size() - 1] = out_w;
  Tensor y(out_shape);
  const auto ty = lerp_table(h, out_h);
  const auto tx = lerp_table(w, out_w);
  const std::size_t planes = leading(input.shape(), 2);
  for (std::size_t p = 0; p < planes; ++p) {
    const float* src = input.data().data() + p * static_cast<std::size_t>(h) * w;
    float* dst = y.data().data() + p * static_cast<std::size_t>(out_h) * out_w;
    for (int i = 0; i < out_h; ++i) {
      const Lerp& ly = ty[static_cast<std::size_t>(i)];
      const float* r0 = src + static_cast<std::size_t>(ly.i0) * w;
      const float* r1 = src + static_cast<std::size_t>(ly.i1) * w;
      for (int j = 0; j < out_w; ++j) {
        const Lerp& lx = tx[static_cast<std::size_t>(j)];
        const float top = r0[lx.i0] + lx.w1 * (r0[lx.i1] - r0[lx.i0]);
        const float bot = r1[lx.i0] + lx.w1 * (r1[lx.i1] - r1[lx.i0]);
        dst[i * out_w + j] = top + ly.w1 * (bot - top);
      }
    }
  }
  return y;
}

Var resize_bilinear(Tape& tape, Var input, int out_h, int out_w) {
  Tensor y = resize_bilinear(tape.value(input), out_h, out_w);
  const int h = tape.value(input).dim(-2), w = tape.value(input).dim(-1);
  const std::size_t planes = leading(tape.value(input).shape(), 2);
  return tape.record(std::move(y), {input}, [h, w, out_h, out_w, planes](BackwardContext& ctx) {
    const auto ty = lerp_table(h, out_h);
    const auto tx = lerp_table(w, out_w);
    const float* g = ctx.grad_out().data().data();
    float* gx = ctx.grad_in(0).data().data();
    for (std::size_t p = 0; p < planes; ++p) {
      const float* gp = g + p * static_cast<std::size_t>(out_h) * out_w;
      float* gxp = gx + p * static_cast<std::size_t>(h) * w;
      for (int i = 0; i < out_h; ++i) {
        const Lerp& ly = ty[static_cast<std::size_t>(i)];
        for (int j = 0; j < out_w; ++j) {
          const Lerp& lx = tx[static_cast<std::size_t>(j)];
          const float gv = gp[i * out_w + j];
          const float top = gv * (1.0f - ly.w1);
          const float bot = gv * ly.w1;
          gxp[ly.i0 * w + lx.i0] += top * (1.0f - lx.w1);
          gxp[ly.i0 * w + lx.i1] += top * lx.w1;
          gxp[ly.i1 * w + lx.i0] += bot * (1.0f - lx.w1);
          gxp[ly.i1 * w + lx.i1] += bot * lx.w1;
        }
      }
    }
  });
}

}  // namespace iris
