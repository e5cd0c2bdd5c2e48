#pragma once

#include <algorithm>
#include <cstring>

#include "otus/tensor.hpp"

namespace otus {

enum class Padding { Same, Valid };

namespace detail {

struct ConvGeom {
  int N, Cin, H, W, Cout, kh, kw, stride;
  int pad_top, pad_left, OH, OW;
};

inline ConvGeom conv_geometry(const Shape& x, const Shape& k, int stride, Padding pad) {
  if (x.size() != 4) throw std::invalid_argument("conv2d: input must be rank 4, got " + shape_str(x));
  if (k.size() != 4) throw std::invalid_argument("conv2d: kernel must be rank 4, got " + shape_str(k));
  if (stride < 1) throw std::invalid_argument("conv2d: stride must be >= 1");
  ConvGeom g{};
  g.N = x[0];
  g.Cin = x[1];
  g.H = x[2];
  g.W = x[3];
  g.Cout = k[0];
  g.kh = k[2];
  g.kw = k[3];
  g.stride = stride;
  if (k[1] != g.Cin)
    throw std::invalid_argument("conv2d: kernel expects " + std::to_string(k[1]) + " input channels, input has " +
                                std::to_string(g.Cin));
  if (pad == Padding::Valid) {
    if (g.kh > g.H || g.kw > g.W) throw std::invalid_argument("conv2d: kernel larger than input (valid padding)");
    g.pad_top = g.pad_left = 0;
    g.OH = (g.H - g.kh) / stride + 1;
    g.OW = (g.W - g.kw) / stride + 1;
  } else {
    g.OH = (g.H + stride - 1) / stride;
    g.OW = (g.W + stride - 1) / stride;
    int pad_h = std::max(0, (g.OH - 1) * stride + g.kh - g.H);
    int pad_w = std::max(0, (g.OW - 1) * stride + g.kw - g.W);
    if (g.kh > g.H + pad_h || g.kw > g.W + pad_w)
      throw std::invalid_argument("conv2d: kernel larger than padded input");
    g.pad_top = pad_h / 2;
    g.pad_left = pad_w / 2;
  }
  return g;
}

// x[C,H,W] -> cols[C*kh*kw, OH*OW]
template <class T>
void im2col(const T* x, const ConvGeom& g, T* cols) {
  const int P = g.OH * g.OW;
  for (int c = 0; c < g.Cin; ++c) {
    const T* xc = x + size_t(c) * g.H * g.W;
    for (int ky = 0; ky < g.kh; ++ky) {
      for (int kx = 0; kx < g.kw; ++kx) {
        T* row = cols + (size_t(c) * g.kh * g.kw + size_t(ky) * g.kw + kx) * P;
        for (int oy = 0; oy < g.OH; ++oy) {
          int iy = oy * g.stride + ky - g.pad_top;
          T* out = row + size_t(oy) * g.OW;
          if (iy < 0 || iy >= g.H) {
            std::fill(out, out + g.OW, T(0));
            continue;
          }
          const T* xr = xc + size_t(iy) * g.W;
          for (int ox = 0; ox < g.OW; ++ox) {
            int ix = ox * g.stride + kx - g.pad_left;
            out[ox] = (ix >= 0 && ix < g.W) ? xr[ix] : T(0);
          }
        }
      }
    }
  }
}

// cols[C*kh*kw, OH*OW] scattered back into x-gradient (+=).
template <class T>
void col2im_add(const T* cols, const ConvGeom& g, T* dx) {
  const int P = g.OH * g.OW;
  for (int c = 0; c < g.Cin; ++c) {
    T* xc = dx + size_t(c) * g.H * g.W;
    for (int ky = 0; ky < g.kh; ++ky) {
      for (int kx = 0; kx < g.kw; ++kx) {
        const T* row = cols + (size_t(c) * g.kh * g.kw + size_t(ky) * g.kw + kx) * P;
        for (int oy = 0; oy < g.OH; ++oy) {
          int iy = oy * g.stride + ky - g.pad_top;
          if (iy < 0 || iy >= g.H) continue;
          const T* in = row + size_t(oy) * g.OW;
          T* xr = xc + size_t(iy) * g.W;
          for (int ox = 0; ox < g.OW; ++ox) {
            int ix = ox * g.stride + kx - g.pad_left;
            if (ix >= 0 && ix < g.W) xr[ix] += in[ox];
          }
        }
      }
    }
  }
}

// C[M,N] += A[M,K] * B[K,N]
template <class T>
void matmul_add(const T* A, const T* B, T* C, int M, int K, int N) {
  for (int m = 0; m < M; ++m) {
    T* c = C + size_t(m) * N;
    const T* a = A + size_t(m) * K;
    for (int k = 0; k < K; ++k) {
      const T av = a[k];
      const T* b = B + size_t(k) * N;
      for (int n = 0; n < N; ++n) c[n] += av * b[n];
    }
  }
}

// C[M,R] += A[M,P] * B[R,P]^T
template <class T>
void matmul_abt_add(const T* A, const T* B, T* C, int M, int P, int R) {
  for (int m = 0; m < M; ++m) {
    const T* a = A + size_t(m) * P;
    for (int r = 0; r < R; ++r) {
      const T* b = B + size_t(r) * P;
      T s = 0;
      for (int p = 0; p < P; ++p) s += a[p] * b[p];
      C[size_t(m) * R + r] += s;
    }
  }
}

}  // namespace detail

// Cross-correlation (the usual deep-learning convolution). Differentiable in
// both the input and the kernel. Same padding uses ceil(H/stride) output size
// with the extra cell of padding placed at the bottom/right.
template <class T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& kernel, int stride = 1, Padding pad = Padding::Same) {
  const auto g = detail::conv_geometry(x.shape(), kernel.shape(), stride, pad);
  const int R = g.Cin * g.kh * g.kw;
  const int P = g.OH * g.OW;

  std::vector<T> out(size_t(g.N) * g.Cout * P, T(0));
  {
    std::vector<T> cols(size_t(R) * P);
    for (int n = 0; n < g.N; ++n) {
      detail::im2col(x.data().data() + size_t(n) * g.Cin * g.H * g.W, g, cols.data());
      detail::matmul_add(kernel.data().data(), cols.data(), out.data() + size_t(n) * g.Cout * P, g.Cout, R, P);
    }
  }

  auto xn = x.node();
  auto kn = kernel.node();
  return make_op<T>(
      "conv2d", {g.N, g.Cout, g.OH, g.OW}, std::move(out), {x, kernel},
      [xn, kn, g, R, P](const std::vector<T>& up, const GradBuffers<T>& pg) {
        std::vector<T> cols(size_t(R) * P);
        std::vector<T> wt;
        if (pg[0]) {
          // W^T once: [R, Cout]
          wt.resize(size_t(R) * g.Cout);
          for (int co = 0; co < g.Cout; ++co)
            for (int r = 0; r < R; ++r) wt[size_t(r) * g.Cout + co] = kn->value[size_t(co) * R + r];
        }
        std::vector<T> dcols(pg[0] ? size_t(R) * P : 0);
        for (int n = 0; n < g.N; ++n) {
          const T* up_n = up.data() + size_t(n) * g.Cout * P;
          if (pg[1]) {
            detail::im2col(xn->value.data() + size_t(n) * g.Cin * g.H * g.W, g, cols.data());
            detail::matmul_abt_add(up_n, cols.data(), pg[1]->data(), g.Cout, P, R);
          }
          if (pg[0]) {
            std::fill(dcols.begin(), dcols.end(), T(0));
            detail::matmul_add(wt.data(), up_n, dcols.data(), R, g.Cout, P);
            detail::col2im_add(dcols.data(), g, pg[0]->data() + size_t(n) * g.Cin * g.H * g.W);
          }
        }
      });
}

// Adds a per-channel bias b[C] to x[N,C,H,W].
template <class T>
Tensor<T> bias_add(const Tensor<T>& x, const Tensor<T>& b) {
  if (x.rank() != 4 || b.rank() != 1 || b.dim(0) != x.dim(1))
    throw std::invalid_argument("bias_add: expected x[N,C,H,W] and b[C]");
  const int N = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
  std::vector<T> v(x.size());
  const auto& xv = x.data();
  const auto& bv = b.data();
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c) {
      const T bc = bv[size_t(c)];
      const T* src = xv.data() + (size_t(n) * C + c) * HW;
      T* dst = v.data() + (size_t(n) * C + c) * HW;
      for (int i = 0; i < HW; ++i) dst[i] = src[i] + bc;
    }
  return make_op<T>("bias_add", x.shape(), std::move(v), {x, b},
                    [N, C, HW](const std::vector<T>& up, const GradBuffers<T>& pg) {
                      if (pg[0])
                        for (size_t i = 0; i < up.size(); ++i) (*pg[0])[i] += up[i];
                      if (pg[1])
                        for (int n = 0; n < N; ++n)
                          for (int c = 0; c < C; ++c) {
                            const T* u = up.data() + (size_t(n) * C + c) * HW;
                            T s = 0;
                            for (int i = 0; i < HW; ++i) s += u[i];
                            (*pg[1])[size_t(c)] += s;
                          }
                    });
}

// 2-D max pooling with window == stride; gradient goes to the argmax, ties
// resolved toward the lowest linear index.
template <class T>
Tensor<T> maxpool2d(const Tensor<T>& x, int window = 2, int stride = 2) {
  if (x.rank() != 4) throw std::invalid_argument("maxpool2d: input must be rank 4");
  if (window != stride) throw std::invalid_argument("maxpool2d: window must equal stride");
  const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  if (H % stride != 0 || W % stride != 0)
    throw std::invalid_argument("maxpool2d: spatial extents " + shape_str(x.shape()) + " not divisible by stride " +
                                std::to_string(stride));
  const int OH = H / stride, OW = W / stride;
  std::vector<T> v(size_t(N) * C * OH * OW);
  auto argmax = std::make_shared<std::vector<int>>(v.size());
  const auto& xv = x.data();
  for (int nc = 0; nc < N * C; ++nc) {
    const T* src = xv.data() + size_t(nc) * H * W;
    T* dst = v.data() + size_t(nc) * OH * OW;
    int* am = argmax->data() + size_t(nc) * OH * OW;
    for (int oy = 0; oy < OH; ++oy)
      for (int ox = 0; ox < OW; ++ox) {
        int best = -1;
        T bv = 0;
        for (int ky = 0; ky < window; ++ky)
          for (int kx = 0; kx < window; ++kx) {
            int idx = (oy * stride + ky) * W + ox * stride + kx;
            if (best < 0 || src[idx] > bv) {
              best = idx;
              bv = src[idx];
            }
          }
        dst[oy * OW + ox] = bv;
        am[oy * OW + ox] = best;
      }
  }
  const int HW = H * W, OHW = OH * OW;
  return make_op<T>("maxpool2d", {N, C, OH, OW}, std::move(v), {x},
                    [argmax, HW, OHW, NC = N * C](const std::vector<T>& up, const GradBuffers<T>& pg) {
                      if (!pg[0]) return;
                      for (int nc = 0; nc < NC; ++nc) {
                        const int* am = argmax->data() + size_t(nc) * OHW;
                        const T* u = up.data() + size_t(nc) * OHW;
                        T* g = pg[0]->data() + size_t(nc) * HW;
                        for (int i = 0; i < OHW; ++i) g[am[i]] += u[i];
                      }
                    });
}

// Nearest-neighbour upsampling by an integer factor.
template <class T>
Tensor<T> upsample_nearest(const Tensor<T>& x, int factor = 2) {
  if (x.rank() != 4) throw std::invalid_argument("upsample_nearest: input must be rank 4");
  if (factor < 1) throw std::invalid_argument("upsample_nearest: factor must be >= 1");
  const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int OH = H * factor, OW = W * factor;
  std::vector<T> v(size_t(N) * C * OH * OW);
  const auto& xv = x.data();
  for (int nc = 0; nc < N * C; ++nc) {
    const T* src = xv.data() + size_t(nc) * H * W;
    T* dst = v.data() + size_t(nc) * OH * OW;
    for (int oy = 0; oy < OH; ++oy) {
      const T* sr = src + size_t(oy / factor) * W;
      T* dr = dst + size_t(oy) * OW;
      for (int ox = 0; ox < OW; ++ox) dr[ox] = sr[ox / factor];
    }
  }
  return make_op<T>("upsample_nearest", {N, C, OH, OW}, std::move(v), {x},
                    [N, C, H, W, factor](const std::vector<T>& up, const GradBuffers<T>& pg) {
                      if (!pg[0]) return;
                      const int OW = W * factor, OH = H * factor;
                      for (int nc = 0; nc < N * C; ++nc) {
                        const T* u = up.data() + size_t(nc) * OH * OW;
                        T* g = pg[0]->data() + size_t(nc) * H * W;
                        for (int oy = 0; oy < OH; ++oy)
                          for (int ox = 0; ox < OW; ++ox) g[(oy / factor) * W + ox / factor] += u[size_t(oy) * OW + ox];
                      }
                    });
}

// Concatenation along the channel axis.
template <class T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 4 || b.rank() != 4) throw std::invalid_argument("concat_channels: inputs must be rank 4");
  if (a.dim(0) != b.dim(0) || a.dim(2) != b.dim(2) || a.dim(3) != b.dim(3))
    throw std::invalid_argument("concat_channels: non-channel extents differ: " + shape_str(a.shape()) + " vs " +
                                shape_str(b.shape()));
  const int N = a.dim(0), Ca = a.dim(1), Cb = b.dim(1), HW = a.dim(2) * a.dim(3);
  std::vector<T> v(size_t(N) * (Ca + Cb) * HW);
  for (int n = 0; n < N; ++n) {
    std::memcpy(v.data() + size_t(n) * (Ca + Cb) * HW, a.data().data() + size_t(n) * Ca * HW,
                sizeof(T) * size_t(Ca) * HW);
    std::memcpy(v.data() + (size_t(n) * (Ca + Cb) + Ca) * HW, b.data().data() + size_t(n) * Cb * HW,
                sizeof(T) * size_t(Cb) * HW);
  }
  return make_op<T>("concat_channels", {N, Ca + Cb, a.dim(2), a.dim(3)}, std::move(v), {a, b},
                    [N, Ca, Cb, HW](const std::vector<T>& up, const GradBuffers<T>& pg) {
                      for (int n = 0; n < N; ++n) {
                        if (pg[0]) {
                          const T* u = up.data() + size_t(n) * (Ca + Cb) * HW;
                          T* g = pg[0]->data() + size_t(n) * Ca * HW;
                          for (int i = 0; i < Ca * HW; ++i) g[i] += u[i];
                        }
                        if (pg[1]) {
                          const T* u = up.data() + (size_t(n) * (Ca + Cb) + Ca) * HW;
                          T* g = pg[1]->data() + size_t(n) * Cb * HW;
                          for (int i = 0; i < Cb * HW; ++i) g[i] += u[i];
                        }
                      }
                    });
}

enum class BnMode { Train, Eval };

// Batch normalization over (N,H,W) per channel. Train mode normalizes with
// batch statistics and updates the running buffers in place; eval mode uses
// the running buffers. Defaults: eps 1e-5, momentum 0.1.
template <class T>
Tensor<T> batchnorm2d(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, Tensor<T>& running_mean,
                      Tensor<T>& running_var, BnMode mode, T momentum = T(0.1), T eps = T(1e-5)) {
  if (x.rank() != 4) throw std::invalid_argument("batchnorm2d: input must be rank 4");
  const int N = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
  if (gamma.rank() != 1 || gamma.dim(0) != C || beta.rank() != 1 || beta.dim(0) != C)
    throw std::invalid_argument("batchnorm2d: gamma/beta must have shape [C]");
  if (running_mean.dim(0) != C || running_var.dim(0) != C)
    throw std::invalid_argument("batchnorm2d: running stats must have shape [C]");
  const size_t M = size_t(N) * HW;  // samples per channel
  if (mode == BnMode::Train && M < 2)
    throw DegenerateVariance("batchnorm2d: train mode needs at least 2 samples per channel");

  const auto& xv = x.data();
  auto chan = [&](const std::vector<T>& v, int n, int c) { return v.data() + (size_t(n) * C + c) * HW; };

  auto mu = std::make_shared<std::vector<T>>(C);
  auto invstd = std::make_shared<std::vector<T>>(C);
  if (mode == BnMode::Train) {
    for (int c = 0; c < C; ++c) {
      double s = 0;
      for (int n = 0; n < N; ++n) {
        const T* p = chan(xv, n, c);
        for (int i = 0; i < HW; ++i) s += p[i];
      }
      T m = T(s / double(M));
      double v2 = 0;
      for (int n = 0; n < N; ++n) {
        const T* p = chan(xv, n, c);
        for (int i = 0; i < HW; ++i) {
          double d = double(p[i]) - double(m);
          v2 += d * d;
        }
      }
      T var = T(v2 / double(M));
      (*mu)[c] = m;
      (*invstd)[c] = T(1) / std::sqrt(var + eps);
      // running buffers use the unbiased variance estimate
      T unbiased = M > 1 ? T(v2 / double(M - 1)) : var;
      running_mean.data()[c] = (T(1) - momentum) * running_mean.data()[c] + momentum * m;
      running_var.data()[c] = (T(1) - momentum) * running_var.data()[c] + momentum * unbiased;
    }
  } else {
    for (int c = 0; c < C; ++c) {
      (*mu)[c] = running_mean.data()[c];
      (*invstd)[c] = T(1) / std::sqrt(running_var.data()[c] + eps);
    }
  }

  std::vector<T> out(x.size());
  const auto& gv = gamma.data();
  const auto& bv = beta.data();
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c) {
      const T* p = chan(xv, n, c);
      T* o = out.data() + (size_t(n) * C + c) * HW;
      const T m = (*mu)[c], is = (*invstd)[c], gc = gv[c], bc = bv[c];
      for (int i = 0; i < HW; ++i) o[i] = (p[i] - m) * is * gc + bc;
    }

  auto xn = x.node();
  auto gn = gamma.node();
  bool train = mode == BnMode::Train;
  return make_op<T>(
      "batchnorm2d", x.shape(), std::move(out), {x, gamma, beta},
      [xn, gn, mu, invstd, N, C, HW, M, train](const std::vector<T>& up, const GradBuffers<T>& pg) {
        for (int c = 0; c < C; ++c) {
          const T m = (*mu)[c], is = (*invstd)[c], gc = gn->value[size_t(c)];
          // per-channel reductions
          double sum_up = 0, sum_up_xhat = 0;
          for (int n = 0; n < N; ++n) {
            const T* u = up.data() + (size_t(n) * C + c) * HW;
            const T* xp = xn->value.data() + (size_t(n) * C + c) * HW;
            for (int i = 0; i < HW; ++i) {
              sum_up += u[i];
              sum_up_xhat += double(u[i]) * double((xp[i] - m) * is);
            }
          }
          if (pg[1]) (*pg[1])[size_t(c)] += T(sum_up_xhat);
          if (pg[2]) (*pg[2])[size_t(c)] += T(sum_up);
          if (!pg[0]) continue;
          for (int n = 0; n < N; ++n) {
            const T* u = up.data() + (size_t(n) * C + c) * HW;
            const T* xp = xn->value.data() + (size_t(n) * C + c) * HW;
            T* g = pg[0]->data() + (size_t(n) * C + c) * HW;
            if (train) {
              const T k1 = T(sum_up / double(M));
              const T k2 = T(sum_up_xhat / double(M));
              for (int i = 0; i < HW; ++i) {
                T xhat = (xp[i] - m) * is;
                g[i] += gc * is * (u[i] - k1 - xhat * k2);
              }
            } else {
              for (int i = 0; i < HW; ++i) g[i] += gc * is * u[i];
            }
          }
        }
      });
}

}  // namespace otus
