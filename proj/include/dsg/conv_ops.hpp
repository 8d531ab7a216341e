// 3-D convolution, pooling, and nearest-neighbor upsampling.
//
// conv3d uses an im2col + GEMM path for stride 1 (every network in this
// project) and a direct loop for general strides. All accumulation targets
// are owned by exactly one loop iteration in a fixed order, so results are
// bitwise reproducible regardless of thread count.

#pragma once

#include <Eigen/Core>
#include <array>

#include "dsg/tensor.hpp"

namespace dsg {

using Ints3 = std::array<long, 3>;

namespace detail {

template <class S>
using MatRM = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class S>
using MapRM = Eigen::Map<MatRM<S>>;
template <class S>
using CMapRM = Eigen::Map<const MatRM<S>>;

inline long conv_out_extent(long in, long pad, long k, long stride) {
  return (in + 2 * pad - k) / stride + 1;
}

/// Fills one depth-slab column buffer: col is [Cin*kd*kh*kw, OH*OW] row-major.
template <class S>
void im2col_slab(const S* x, long Cin, long D, long H, long W, long kd, long kh,
                 long kw, long pd, long ph, long pw, long od, long OH, long OW,
                 S* col) {
  for (long ic = 0; ic < Cin; ++ic) {
    const S* xc = x + ic * D * H * W;
    for (long zd = 0; zd < kd; ++zd) {
      const long id = od + zd - pd;
      for (long zh = 0; zh < kh; ++zh) {
        for (long zw = 0; zw < kw; ++zw) {
          S* row = col + (((ic * kd + zd) * kh + zh) * kw + zw) * OH * OW;
          if (id < 0 || id >= D) {
            std::fill(row, row + OH * OW, S(0));
            continue;
          }
          const S* xslice = xc + id * H * W;
          for (long oh = 0; oh < OH; ++oh) {
            const long ih = oh + zh - ph;
            S* dst = row + oh * OW;
            if (ih < 0 || ih >= H) {
              std::fill(dst, dst + OW, S(0));
              continue;
            }
            const S* src = xslice + ih * W;
            const long iw0 = zw - pw;  // input w for ow = 0
            long ow = 0;
            for (; ow < OW && iw0 + ow < 0; ++ow) dst[ow] = S(0);
            const long ow_end = std::min(OW, W - iw0);
            for (; ow < ow_end; ++ow) dst[ow] = src[iw0 + ow];
            for (; ow < OW; ++ow) dst[ow] = S(0);
          }
        }
      }
    }
  }
}

/// Scatter-add of a column slab back into the input gradient.
template <class S>
void col2im_slab(const S* col, long Cin, long D, long H, long W, long kd,
                 long kh, long kw, long pd, long ph, long pw, long od, long OH,
                 long OW, S* gx) {
  for (long ic = 0; ic < Cin; ++ic) {
    S* gc = gx + ic * D * H * W;
    for (long zd = 0; zd < kd; ++zd) {
      const long id = od + zd - pd;
      if (id < 0 || id >= D) continue;
      for (long zh = 0; zh < kh; ++zh) {
        for (long zw = 0; zw < kw; ++zw) {
          const S* row = col + (((ic * kd + zd) * kh + zh) * kw + zw) * OH * OW;
          S* gslice = gc + id * H * W;
          for (long oh = 0; oh < OH; ++oh) {
            const long ih = oh + zh - ph;
            if (ih < 0 || ih >= H) continue;
            S* dst = gslice + ih * W;
            const S* src = row + oh * OW;
            const long iw0 = zw - pw;
            const long ow_begin = std::max<long>(0, -iw0);
            const long ow_end = std::min(OW, W - iw0);
            for (long ow = ow_begin; ow < ow_end; ++ow) dst[iw0 + ow] += src[ow];
          }
        }
      }
    }
  }
}

}  // namespace detail

/// 3-D cross-correlation of [N,Cin,D,H,W] with [Cout,Cin,kd,kh,kw] plus bias.
/// Output extent per axis is floor((in + 2*pad - k)/stride) + 1.
template <class S>
Tensor<S> conv3d(const Tensor<S>& x, const Tensor<S>& w, const Tensor<S>& b,
                 Ints3 stride = {1, 1, 1}, Ints3 padding = {0, 0, 0}) {
  if (x.rank() != 5) throw ShapeError("conv3d: input must be 5-D, got " + shape_str(x.shape()));
  if (w.rank() != 5) throw ShapeError("conv3d: weight must be 5-D, got " + shape_str(w.shape()));
  const long N = x.dim(0), Cin = x.dim(1), D = x.dim(2), H = x.dim(3), W = x.dim(4);
  const long Cout = w.dim(0), kd = w.dim(2), kh = w.dim(3), kw = w.dim(4);
  if (w.dim(1) != Cin)
    throw ShapeError("conv3d: weight expects " + std::to_string(w.dim(1)) +
                     " input channels, input has " + std::to_string(Cin));
  if (b.rank() != 1 || b.dim(0) != Cout)
    throw ShapeError("conv3d: bias must be [Cout]");
  for (int i = 0; i < 3; ++i) {
    if (stride[i] < 1) throw ShapeError("conv3d: stride must be >= 1");
    if (padding[i] < 0) throw ShapeError("conv3d: padding must be >= 0");
  }
  const long OD = detail::conv_out_extent(D, padding[0], kd, stride[0]);
  const long OH = detail::conv_out_extent(H, padding[1], kh, stride[1]);
  const long OW = detail::conv_out_extent(W, padding[2], kw, stride[2]);
  if (OD < 1 || OH < 1 || OW < 1)
    throw ShapeError("conv3d: non-positive output extent for input " +
                     shape_str(x.shape()) + " and kernel " + shape_str(w.shape()));

  const bool unit_stride = stride[0] == 1 && stride[1] == 1 && stride[2] == 1;
  const long K = Cin * kd * kh * kw;
  std::vector<S> out(static_cast<size_t>(N * Cout * OD * OH * OW));
  const auto& xv = x.values();
  const auto& wv = w.values();
  const auto& bv = b.values();

  if (unit_stride) {
    detail::CMapRM<S> Wm(wv.data(), Cout, K);
    std::vector<S> col(static_cast<size_t>(K * OH * OW));
    detail::MatRM<S> slab(Cout, OH * OW);
    for (long n = 0; n < N; ++n) {
      const S* xn = xv.data() + n * Cin * D * H * W;
      for (long od = 0; od < OD; ++od) {
        detail::im2col_slab(xn, Cin, D, H, W, kd, kh, kw, padding[0], padding[1],
                            padding[2], od, OH, OW, col.data());
        detail::CMapRM<S> Cm(col.data(), K, OH * OW);
        slab.noalias() = Wm * Cm;
        for (long oc = 0; oc < Cout; ++oc) {
          S* dst = out.data() + (((n * Cout + oc) * OD + od) * OH) * OW;
          const S* src = slab.data() + oc * OH * OW;
          const S bias = bv[static_cast<size_t>(oc)];
          for (long i = 0; i < OH * OW; ++i) dst[i] = src[i] + bias;
        }
      }
    }
  } else {
    for (long n = 0; n < N; ++n)
      for (long oc = 0; oc < Cout; ++oc)
        for (long od = 0; od < OD; ++od)
          for (long oh = 0; oh < OH; ++oh)
            for (long ow = 0; ow < OW; ++ow) {
              S acc = bv[static_cast<size_t>(oc)];
              for (long ic = 0; ic < Cin; ++ic)
                for (long zd = 0; zd < kd; ++zd) {
                  const long id = od * stride[0] + zd - padding[0];
                  if (id < 0 || id >= D) continue;
                  for (long zh = 0; zh < kh; ++zh) {
                    const long ih = oh * stride[1] + zh - padding[1];
                    if (ih < 0 || ih >= H) continue;
                    for (long zw = 0; zw < kw; ++zw) {
                      const long iw = ow * stride[2] + zw - padding[2];
                      if (iw < 0 || iw >= W) continue;
                      acc += xv[(((n * Cin + ic) * D + id) * H + ih) * W + iw] *
                             wv[(((oc * Cin + ic) * kd + zd) * kh + zh) * kw + zw];
                    }
                  }
                }
              out[(((n * Cout + oc) * OD + od) * OH + oh) * OW + ow] = acc;
            }
  }

  Shape out_shape{N, Cout, OD, OH, OW};
  return detail::op_node<S>("conv3d", std::move(out_shape), std::move(out),
                            {x, w, b},
                            [x, w, b, stride, padding, N, Cin, D, H, W, Cout,
                             kd, kh, kw, OD, OH, OW, K, unit_stride](Node<S>* self) {
    return [=]() {
      const auto& g = self->grad;
      const auto& xv = x.values();
      const auto& wv = w.values();
      const bool need_x = x.node()->requires_grad;
      const bool need_w = w.node()->requires_grad;
      const bool need_b = b.node()->requires_grad;
      if (need_x) x.node()->ensure_grad();
      if (need_w) w.node()->ensure_grad();
      if (need_b) {
        b.node()->ensure_grad();
        auto& gb = b.node()->grad;
        for (long oc = 0; oc < Cout; ++oc) {
          S acc = 0;
          for (long n = 0; n < N; ++n) {
            const S* go = g.data() + ((n * Cout + oc) * OD) * OH * OW;
            for (long i = 0; i < OD * OH * OW; ++i) acc += go[i];
          }
          gb[static_cast<size_t>(oc)] += acc;
        }
      }
      if (!need_x && !need_w) return;

      if (unit_stride) {
        detail::CMapRM<S> Wm(wv.data(), Cout, K);
        std::vector<S> col(static_cast<size_t>(K * OH * OW));
        detail::MatRM<S> gslab(Cout, OH * OW);
        detail::MatRM<S> gcol(K, OH * OW);
        detail::MapRM<S> Gw(need_w ? w.node()->grad.data() : nullptr,
                            need_w ? Cout : 0, need_w ? K : 0);
        for (long n = 0; n < N; ++n) {
          const S* xn = xv.data() + n * Cin * D * H * W;
          S* gxn = need_x ? x.node()->grad.data() + n * Cin * D * H * W : nullptr;
          for (long od = 0; od < OD; ++od) {
            for (long oc = 0; oc < Cout; ++oc) {
              const S* src = g.data() + (((n * Cout + oc) * OD + od) * OH) * OW;
              std::copy(src, src + OH * OW, gslab.data() + oc * OH * OW);
            }
            if (need_w) {
              detail::im2col_slab(xn, Cin, D, H, W, kd, kh, kw, padding[0],
                                  padding[1], padding[2], od, OH, OW, col.data());
              detail::CMapRM<S> Cm(col.data(), K, OH * OW);
              Gw.noalias() += gslab * Cm.transpose();
            }
            if (need_x) {
              gcol.noalias() = Wm.transpose() * gslab;
              detail::col2im_slab(gcol.data(), Cin, D, H, W, kd, kh, kw,
                                  padding[0], padding[1], padding[2], od, OH, OW,
                                  gxn);
            }
          }
        }
      } else {
        auto* gx = need_x ? x.node()->grad.data() : nullptr;
        auto* gw = need_w ? w.node()->grad.data() : nullptr;
        for (long n = 0; n < N; ++n)
          for (long oc = 0; oc < Cout; ++oc)
            for (long od = 0; od < OD; ++od)
              for (long oh = 0; oh < OH; ++oh)
                for (long ow = 0; ow < OW; ++ow) {
                  const S go = g[(((n * Cout + oc) * OD + od) * OH + oh) * OW + ow];
                  for (long ic = 0; ic < Cin; ++ic)
                    for (long zd = 0; zd < kd; ++zd) {
                      const long id = od * stride[0] + zd - padding[0];
                      if (id < 0 || id >= D) continue;
                      for (long zh = 0; zh < kh; ++zh) {
                        const long ih = oh * stride[1] + zh - padding[1];
                        if (ih < 0 || ih >= H) continue;
                        for (long zw = 0; zw < kw; ++zw) {
                          const long iw = ow * stride[2] + zw - padding[2];
                          if (iw < 0 || iw >= W) continue;
                          const size_t xi = (((n * Cin + ic) * D + id) * H + ih) * W + iw;
                          const size_t wi = (((oc * Cin + ic) * kd + zd) * kh + zh) * kw + zw;
                          if (need_x) gx[xi] += go * wv[wi];
                          if (need_w) gw[wi] += go * xv[xi];
                        }
                      }
                    }
                }
      }
    };
  });
}

/// 2x2x2 max pooling with stride 2. Gradient routes to the first maximum in
/// window scan order (d, h, w), which keeps tie handling deterministic.
template <class S>
Tensor<S> max_pool3d(const Tensor<S>& x) {
  if (x.rank() != 5) throw ShapeError("max_pool3d: input must be 5-D");
  const long N = x.dim(0), C = x.dim(1), D = x.dim(2), H = x.dim(3), W = x.dim(4);
  const char* axis_names[3] = {"depth", "height", "width"};
  const long extents[3] = {D, H, W};
  for (int i = 0; i < 3; ++i)
    if (extents[i] % 2 != 0)
      throw ShapeError(std::string("max_pool3d: ") + axis_names[i] +
                       " extent " + std::to_string(extents[i]) +
                       " not divisible by 2");
  const long OD = D / 2, OH = H / 2, OW = W / 2;
  const auto& xv = x.values();
  std::vector<S> out(static_cast<size_t>(N * C * OD * OH * OW));
  auto argmax = std::make_shared<std::vector<long>>(out.size());
  for (long nc = 0; nc < N * C; ++nc) {
    const S* xc = xv.data() + nc * D * H * W;
    S* oc = out.data() + nc * OD * OH * OW;
    long* am = argmax->data() + nc * OD * OH * OW;
    for (long od = 0; od < OD; ++od)
      for (long oh = 0; oh < OH; ++oh)
        for (long ow = 0; ow < OW; ++ow) {
          S best = -std::numeric_limits<S>::infinity();
          long best_idx = -1;
          for (long zd = 0; zd < 2; ++zd)
            for (long zh = 0; zh < 2; ++zh)
              for (long zw = 0; zw < 2; ++zw) {
                const long idx = ((od * 2 + zd) * H + oh * 2 + zh) * W + ow * 2 + zw;
                if (xc[idx] > best) {
                  best = xc[idx];
                  best_idx = idx;
                }
              }
          oc[(od * OH + oh) * OW + ow] = best;
          am[(od * OH + oh) * OW + ow] = nc * D * H * W + best_idx;
        }
  }
  Shape out_shape{N, C, OD, OH, OW};
  return detail::op_node<S>("max_pool3d", std::move(out_shape), std::move(out),
                            {x}, [x, argmax](Node<S>* self) {
    return [x, argmax, self]() {
      if (!x.node()->requires_grad) return;
      x.node()->ensure_grad();
      auto& gx = x.node()->grad;
      const auto& g = self->grad;
      const auto& am = *argmax;
      for (size_t i = 0; i < g.size(); ++i) gx[static_cast<size_t>(am[i])] += g[i];
    };
  });
}

/// Nearest-neighbor upsampling by 2 per spatial axis. The gradient of each
/// input element is the sum over its replicated group of 8.
template <class S>
Tensor<S> upsample_nn3d(const Tensor<S>& x) {
  if (x.rank() != 5) throw ShapeError("upsample_nn3d: input must be 5-D");
  const long N = x.dim(0), C = x.dim(1), D = x.dim(2), H = x.dim(3), W = x.dim(4);
  const long OD = D * 2, OH = H * 2, OW = W * 2;
  const auto& xv = x.values();
  std::vector<S> out(static_cast<size_t>(N * C * OD * OH * OW));
  for (long nc = 0; nc < N * C; ++nc) {
    const S* xc = xv.data() + nc * D * H * W;
    S* oc = out.data() + nc * OD * OH * OW;
    for (long od = 0; od < OD; ++od)
      for (long oh = 0; oh < OH; ++oh) {
        const S* src = xc + ((od / 2) * H + oh / 2) * W;
        S* dst = oc + (od * OH + oh) * OW;
        for (long ow = 0; ow < OW; ++ow) dst[ow] = src[ow / 2];
      }
  }
  Shape out_shape{N, C, OD, OH, OW};
  return detail::op_node<S>("upsample_nn3d", std::move(out_shape), std::move(out),
                            {x}, [x, N, C, D, H, W](Node<S>* self) {
    return [x, N, C, D, H, W, self]() {
      if (!x.node()->requires_grad) return;
      x.node()->ensure_grad();
      auto& gx = x.node()->grad;
      const auto& g = self->grad;
      const long OH = H * 2, OW = W * 2;
      for (long nc = 0; nc < N * C; ++nc) {
        S* gc = gx.data() + nc * D * H * W;
        const S* go = g.data() + nc * D * H * W * 8;
        for (long id = 0; id < D; ++id)
          for (long ih = 0; ih < H; ++ih)
            for (long iw = 0; iw < W; ++iw) {
              S acc = 0;
              for (long zd = 0; zd < 2; ++zd)
                for (long zh = 0; zh < 2; ++zh) {
                  const S* row = go + ((id * 2 + zd) * OH + ih * 2 + zh) * OW + iw * 2;
                  acc += row[0] + row[1];
                }
              gc[(id * H + ih) * W + iw] += acc;
            }
      }
    };
  });
}

}  // namespace dsg
