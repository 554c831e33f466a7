#include "tumorkit/nn/tape.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>

#include <Eigen/Core>

#include "tumorkit/error.hpp"

namespace tumorkit::nn {
namespace {

using RowMat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;

void require(bool ok, const std::string& what) {
  if (!ok) throw ArgumentError(what);
}

void require_rank(const Tensor& t, int rank, const char* op) {
  require(t.rank() == rank, std::string(op) + ": expected rank " + std::to_string(rank) +
                                " tensor, got " + shape_string(t.shape()));
}

struct ConvGeom {
  int n, c, h, w;
  int o, k, stride, pad;
  int ho, wo;
};

void im2col(const float* x, const ConvGeom& g, float* col) {
  const int hw_out = g.ho * g.wo;
  for (int c = 0; c < g.c; ++c) {
    const float* plane = x + static_cast<std::size_t>(c) * g.h * g.w;
    for (int ki = 0; ki < g.k; ++ki) {
      for (int kj = 0; kj < g.k; ++kj) {
        float* row = col + static_cast<std::size_t>((c * g.k + ki) * g.k + kj) * hw_out;
        for (int oy = 0; oy < g.ho; ++oy) {
          const int iy = oy * g.stride - g.pad + ki;
          float* dst = row + oy * g.wo;
          if (iy < 0 || iy >= g.h) {
            std::fill(dst, dst + g.wo, 0.0f);
            continue;
          }
          const float* src = plane + static_cast<std::size_t>(iy) * g.w;
          for (int ox = 0; ox < g.wo; ++ox) {
            const int ix = ox * g.stride - g.pad + kj;
            dst[ox] = (ix >= 0 && ix < g.w) ? src[ix] : 0.0f;
          }
        }
      }
    }
  }
}

void col2im_add(const float* col, const ConvGeom& g, float* dx) {
  const int hw_out = g.ho * g.wo;
  for (int c = 0; c < g.c; ++c) {
    float* plane = dx + static_cast<std::size_t>(c) * g.h * g.w;
    for (int ki = 0; ki < g.k; ++ki) {
      for (int kj = 0; kj < g.k; ++kj) {
        const float* row = col + static_cast<std::size_t>((c * g.k + ki) * g.k + kj) * hw_out;
        for (int oy = 0; oy < g.ho; ++oy) {
          const int iy = oy * g.stride - g.pad + ki;
          if (iy < 0 || iy >= g.h) continue;
          float* dst = plane + static_cast<std::size_t>(iy) * g.w;
          const float* src = row + oy * g.wo;
          for (int ox = 0; ox < g.wo; ++ox) {
            const int ix = ox * g.stride - g.pad + kj;
            if (ix >= 0 && ix < g.w) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

float sigmoidf(float x) {
  if (x >= 0.0f) return 1.0f / (1.0f + std::exp(-x));
  const float e = std::exp(x);
  return e / (1.0f + e);
}

}  // namespace

Var Tape::input(Tensor value) {
  Node n;
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return Var{static_cast<int>(nodes_.size() - 1)};
}

Var Tape::param(Parameter& p) {
  Node n;
  n.value = p.value;
  n.param = &p;
  n.needs_grad = grad_enabled_;
  nodes_.push_back(std::move(n));
  return Var{static_cast<int>(nodes_.size() - 1)};
}

Tensor& Tape::grad(Var v) {
  Node& n = nodes_[static_cast<std::size_t>(v.id)];
  if (n.grad.size() != n.value.size()) n.grad = Tensor(n.value.shape());
  return n.grad;
}

Var Tape::push(Tensor value, std::initializer_list<Var> inputs, Backward back) {
  Node n;
  n.value = std::move(value);
  if (grad_enabled_) {
    for (Var in : inputs) n.needs_grad = n.needs_grad || needs_grad(in);
  }
  if (n.needs_grad) n.back = std::move(back);
  nodes_.push_back(std::move(n));
  return Var{static_cast<int>(nodes_.size() - 1)};
}

void Tape::backward(Var loss) {
  require(grad_enabled_, "backward on a tape without gradients");
  require(value(loss).size() == 1, "backward needs a single-element loss");
  grad(loss)[0] = 1.0f;
  for (int i = loss.id; i >= 0; --i) {
    Node& n = nodes_[static_cast<std::size_t>(i)];
    if (!n.needs_grad || n.grad.empty()) continue;
    if (n.back) n.back(*this, i);
  }
  for (auto& n : nodes_) {
    if (n.param == nullptr || n.grad.empty()) continue;
    float* dst = n.param->grad.data();
    const float* src = n.grad.data();
    for (std::size_t j = 0; j < n.grad.size(); ++j) dst[j] += src[j];
  }
}

Var conv2d(Tape& t, Var x, Var w, Var b, int stride, int pad) {
  const Tensor& xv = t.value(x);
  const Tensor& wv = t.value(w);
  require_rank(xv, 4, "conv2d");
  require_rank(wv, 4, "conv2d weight");
  require(wv.dim(1) == xv.dim(1), "conv2d: weight expects " + std::to_string(wv.dim(1)) +
                                      " input channels, got " + std::to_string(xv.dim(1)));
  require(wv.dim(2) == wv.dim(3), "conv2d: square kernels only");
  require(t.value(b).size() == static_cast<std::size_t>(wv.dim(0)), "conv2d: bias size mismatch");
  require(stride >= 1 && pad >= 0, "conv2d: invalid stride or padding");

  ConvGeom g{xv.dim(0), xv.dim(1), xv.dim(2), xv.dim(3), wv.dim(0), wv.dim(2), stride, pad, 0, 0};
  g.ho = (g.h + 2 * pad - g.k) / stride + 1;
  g.wo = (g.w + 2 * pad - g.k) / stride + 1;
  require(g.ho > 0 && g.wo > 0, "conv2d: input smaller than kernel");

  const int kdim = g.c * g.k * g.k;
  const int hw_out = g.ho * g.wo;
  const bool pointwise = g.k == 1 && stride == 1 && pad == 0;
  Tensor out({g.n, g.o, g.ho, g.wo});
  ConstMatMap wm(wv.data(), g.o, kdim);
  const float* bias = t.value(b).data();
  FloatBuffer col(pointwise ? 0 : static_cast<std::size_t>(kdim) * hw_out);
  for (int n = 0; n < g.n; ++n) {
    const float* xn = xv.data() + static_cast<std::size_t>(n) * g.c * g.h * g.w;
    MatMap yn(out.data() + static_cast<std::size_t>(n) * g.o * hw_out, g.o, hw_out);
    if (pointwise) {
      yn.noalias() = wm * ConstMatMap(xn, kdim, hw_out);
    } else {
      im2col(xn, g, col.data());
      yn.noalias() = wm * ConstMatMap(col.data(), kdim, hw_out);
    }
    for (int o = 0; o < g.o; ++o) yn.row(o).array() += bias[o];
  }

  return t.push(std::move(out), {x, w, b}, [x, w, b, g, kdim, hw_out, pointwise](Tape& tp, int self) {
    const Tensor& dy = tp.grad(self);
    const Tensor& xv = tp.value(x);
    ConstMatMap wm(tp.value(w).data(), g.o, kdim);
    const bool need_x = tp.needs_grad(x);
    const bool need_w = tp.needs_grad(w);
    FloatBuffer col(pointwise ? 0 : static_cast<std::size_t>(kdim) * hw_out);
    FloatBuffer dcol(pointwise ? 0 : static_cast<std::size_t>(kdim) * hw_out);
    RowMat dw_acc = RowMat::Zero(g.o, kdim);
    for (int n = 0; n < g.n; ++n) {
      const float* xn = xv.data() + static_cast<std::size_t>(n) * g.c * g.h * g.w;
      ConstMatMap dyn(dy.data() + static_cast<std::size_t>(n) * g.o * hw_out, g.o, hw_out);
      if (need_w) {
        if (pointwise) {
          dw_acc.noalias() += dyn * ConstMatMap(xn, kdim, hw_out).transpose();
        } else {
          im2col(xn, g, col.data());
          dw_acc.noalias() += dyn * ConstMatMap(col.data(), kdim, hw_out).transpose();
        }
      }
      if (tp.needs_grad(b)) {
        float* db = tp.grad(b).data();
        for (int o = 0; o < g.o; ++o) db[o] += dyn.row(o).sum();
      }
      if (need_x) {
        float* dxn = tp.grad(x).data() + static_cast<std::size_t>(n) * g.c * g.h * g.w;
        if (pointwise) {
          MatMap(dxn, kdim, hw_out).noalias() += wm.transpose() * dyn;
        } else {
          MatMap(dcol.data(), kdim, hw_out).noalias() = wm.transpose() * dyn;
          col2im_add(dcol.data(), g, dxn);
        }
      }
    }
    if (need_w) MatMap(tp.grad(w).data(), g.o, kdim) += dw_acc;
  });
}

Var depthwise_conv2d(Tape& t, Var x, Var w, Var b, int stride, int pad) {
  const Tensor& xv = t.value(x);
  const Tensor& wv = t.value(w);
  require_rank(xv, 4, "depthwise_conv2d");
  require_rank(wv, 4, "depthwise_conv2d weight");
  require(wv.dim(0) == xv.dim(1) && wv.dim(1) == 1, "depthwise_conv2d: weight must be [C, 1, k, k]");
  require(t.value(b).size() == static_cast<std::size_t>(xv.dim(1)), "depthwise_conv2d: bias size mismatch");

  ConvGeom g{xv.dim(0), xv.dim(1), xv.dim(2), xv.dim(3), xv.dim(1), wv.dim(2), stride, pad, 0, 0};
  g.ho = (g.h + 2 * pad - g.k) / stride + 1;
  g.wo = (g.w + 2 * pad - g.k) / stride + 1;
  require(g.ho > 0 && g.wo > 0, "depthwise_conv2d: input smaller than kernel");

  Tensor out({g.n, g.c, g.ho, g.wo});
  const float* bias = t.value(b).data();
  for (int n = 0; n < g.n; ++n) {
    for (int c = 0; c < g.c; ++c) {
      const float* in = xv.data() + (static_cast<std::size_t>(n) * g.c + c) * g.h * g.w;
      const float* k = wv.data() + static_cast<std::size_t>(c) * g.k * g.k;
      float* o = out.data() + (static_cast<std::size_t>(n) * g.c + c) * g.ho * g.wo;
      for (int oy = 0; oy < g.ho; ++oy) {
        for (int ox = 0; ox < g.wo; ++ox) {
          float acc = bias[c];
          for (int ki = 0; ki < g.k; ++ki) {
            const int iy = oy * stride - pad + ki;
            if (iy < 0 || iy >= g.h) continue;
            for (int kj = 0; kj < g.k; ++kj) {
              const int ix = ox * stride - pad + kj;
              if (ix >= 0 && ix < g.w) acc += k[ki * g.k + kj] * in[iy * g.w + ix];
            }
          }
          o[oy * g.wo + ox] = acc;
        }
      }
    }
  }

  return t.push(std::move(out), {x, w, b}, [x, w, b, g](Tape& tp, int self) {
    const Tensor& dy = tp.grad(self);
    const Tensor& xv = tp.value(x);
    const Tensor& wv = tp.value(w);
    const bool need_x = tp.needs_grad(x);
    const bool need_w = tp.needs_grad(w);
    const bool need_b = tp.needs_grad(b);
    float* dx = need_x ? tp.grad(x).data() : nullptr;
    float* dw = need_w ? tp.grad(w).data() : nullptr;
    float* db = need_b ? tp.grad(b).data() : nullptr;
    for (int n = 0; n < g.n; ++n) {
      for (int c = 0; c < g.c; ++c) {
        const std::size_t in_off = (static_cast<std::size_t>(n) * g.c + c) * g.h * g.w;
        const float* in = xv.data() + in_off;
        const float* k = wv.data() + static_cast<std::size_t>(c) * g.k * g.k;
        const float* d = dy.data() + (static_cast<std::size_t>(n) * g.c + c) * g.ho * g.wo;
        for (int oy = 0; oy < g.ho; ++oy) {
          for (int ox = 0; ox < g.wo; ++ox) {
            const float go = d[oy * g.wo + ox];
            if (db) db[c] += go;
            for (int ki = 0; ki < g.k; ++ki) {
              const int iy = oy * g.stride - g.pad + ki;
              if (iy < 0 || iy >= g.h) continue;
              for (int kj = 0; kj < g.k; ++kj) {
                const int ix = ox * g.stride - g.pad + kj;
                if (ix < 0 || ix >= g.w) continue;
                if (dw) dw[static_cast<std::size_t>(c) * g.k * g.k + ki * g.k + kj] += go * in[iy * g.w + ix];
                if (dx) dx[in_off + iy * g.w + ix] += go * k[ki * g.k + kj];
              }
            }
          }
        }
      }
    }
  });
}

Var conv_transpose2x2(Tape& t, Var x, Var w, Var b) {
  const Tensor& xv = t.value(x);
  const Tensor& wv = t.value(w);
  require_rank(xv, 4, "conv_transpose2x2");
  require_rank(wv, 4, "conv_transpose2x2 weight");
  require(wv.dim(0) == xv.dim(1) && wv.dim(2) == 2 && wv.dim(3) == 2,
          "conv_transpose2x2: weight must be [C, O, 2, 2]");
  const int n_batch = xv.dim(0), c = xv.dim(1), h = xv.dim(2), wd = xv.dim(3), o = wv.dim(1);
  require(t.value(b).size() == static_cast<std::size_t>(o), "conv_transpose2x2: bias size mismatch");
  const int hw = h * wd;

  Tensor out({n_batch, o, 2 * h, 2 * wd});
  ConstMatMap wm(wv.data(), c, 4 * o);
  const float* bias = t.value(b).data();
  RowMat y4(4 * o, hw);
  for (int n = 0; n < n_batch; ++n) {
    ConstMatMap xn(xv.data() + static_cast<std::size_t>(n) * c * hw, c, hw);
    y4.noalias() = wm.transpose() * xn;
    float* on = out.data() + static_cast<std::size_t>(n) * o * 4 * hw;
    for (int oc = 0; oc < o; ++oc) {
      for (int a = 0; a < 2; ++a) {
        for (int bb = 0; bb < 2; ++bb) {
          const float* src = y4.data() + static_cast<std::size_t>(oc * 4 + a * 2 + bb) * hw;
          for (int i = 0; i < h; ++i) {
            float* dst = on + (static_cast<std::size_t>(oc) * 2 * h + 2 * i + a) * 2 * wd + bb;
            for (int j = 0; j < wd; ++j) dst[2 * j] = src[i * wd + j] + bias[oc];
          }
        }
      }
    }
  }

  return t.push(std::move(out), {x, w, b}, [x, w, b, n_batch, c, h, wd, o, hw](Tape& tp, int self) {
    const Tensor& dy = tp.grad(self);
    const Tensor& xv = tp.value(x);
    ConstMatMap wm(tp.value(w).data(), c, 4 * o);
    RowMat dy4(4 * o, hw);
    RowMat dw_acc = RowMat::Zero(c, 4 * o);
    for (int n = 0; n < n_batch; ++n) {
      const float* dn = dy.data() + static_cast<std::size_t>(n) * o * 4 * hw;
      for (int oc = 0; oc < o; ++oc) {
        for (int a = 0; a < 2; ++a) {
          for (int bb = 0; bb < 2; ++bb) {
            float* dst = dy4.data() + static_cast<std::size_t>(oc * 4 + a * 2 + bb) * hw;
            for (int i = 0; i < h; ++i) {
              const float* src = dn + (static_cast<std::size_t>(oc) * 2 * h + 2 * i + a) * 2 * wd + bb;
              for (int j = 0; j < wd; ++j) dst[i * wd + j] = src[2 * j];
            }
          }
        }
      }
      if (tp.needs_grad(b)) {
        float* db = tp.grad(b).data();
        for (int oc = 0; oc < o; ++oc) db[oc] += dy4.middleRows(oc * 4, 4).sum();
      }
      ConstMatMap xn(xv.data() + static_cast<std::size_t>(n) * c * hw, c, hw);
      if (tp.needs_grad(w)) dw_acc.noalias() += xn * dy4.transpose();
      if (tp.needs_grad(x)) {
        MatMap(tp.grad(x).data() + static_cast<std::size_t>(n) * c * hw, c, hw).noalias() += wm * dy4;
      }
    }
    if (tp.needs_grad(w)) MatMap(tp.grad(w).data(), c, 4 * o) += dw_acc;
  });
}

Var max_pool2(Tape& t, Var x) {
  const Tensor& xv = t.value(x);
  require_rank(xv, 4, "max_pool2");
  const int n = xv.dim(0), c = xv.dim(1), h = xv.dim(2), w = xv.dim(3);
  const int ho = h / 2, wo = w / 2;
  require(ho > 0 && wo > 0, "max_pool2: input spatial size below 2");
  Tensor out({n, c, ho, wo});
  std::vector<std::uint32_t> argmax(out.size());
  std::size_t idx = 0;
  for (int p = 0; p < n * c; ++p) {
    const float* in = xv.data() + static_cast<std::size_t>(p) * h * w;
    const std::size_t base = static_cast<std::size_t>(p) * h * w;
    for (int oy = 0; oy < ho; ++oy) {
      for (int ox = 0; ox < wo; ++ox, ++idx) {
        int best = (2 * oy) * w + 2 * ox;
        for (int off : {1, w, w + 1}) {
          const int cand = (2 * oy) * w + 2 * ox + off;
          if (in[cand] > in[best]) best = cand;
        }
        out[idx] = in[best];
        argmax[idx] = static_cast<std::uint32_t>(base + best);
      }
    }
  }
  return t.push(std::move(out), {x}, [x, argmax = std::move(argmax)](Tape& tp, int self) {
    const Tensor& dy = tp.grad(self);
    float* dx = tp.grad(x).data();
    for (std::size_t i = 0; i < argmax.size(); ++i) dx[argmax[i]] += dy[i];
  });
}

Var global_avg_pool(Tape& t, Var x) {
  const Tensor& xv = t.value(x);
  require_rank(xv, 4, "global_avg_pool");
  const int n = xv.dim(0), c = xv.dim(1);
  const int hw = xv.dim(2) * xv.dim(3);
  Tensor out({n, c});
  for (int p = 0; p < n * c; ++p) {
    const float* in = xv.data() + static_cast<std::size_t>(p) * hw;
    double s = 0.0;
    for (int i = 0; i < hw; ++i) s += in[i];
    out[static_cast<std::size_t>(p)] = static_cast<float>(s / hw);
  }
  return t.push(std::move(out), {x}, [x, n, c, hw](Tape& tp, int self) {
    const Tensor& dy = tp.grad(self);
    float* dx = tp.grad(x).data();
    for (int p = 0; p < n * c; ++p) {
      const float g = dy[static_cast<std::size_t>(p)] / static_cast<float>(hw);
      float* d = dx + static_cast<std::size_t>(p) * hw;
      for (int i = 0; i < hw; ++i) d[i] += g;
    }
  });
}

Var scale_channels(Tape& t, Var x, Var s) {
  const Tensor& xv = t.value(x);
  const Tensor& sv = t.value(s);
  require_rank(xv, 4, "scale_channels");
  require(sv.rank() == 2 && sv.dim(0) == xv.dim(0) && sv.dim(1) == xv.dim(1),
          "scale_channels: scale must be [N, C]");
  const int nc = xv.dim(0) * xv.dim(1);
  const int hw = xv.dim(2) * xv.dim(3);
  Tensor out(xv.shape());
  for (int p = 0; p < nc; ++p) {
    const float k = sv[static_cast<std::size_t>(p)];
    const float* in = xv.data() + static_cast<std::size_t>(p) * hw;
    float* o = out.data() + static_cast<std::size_t>(p) * hw;
    for (int i = 0; i < hw; ++i) o[i] = in[i] * k;
  }
  return t.push(std::move(out), {x, s}, [x, s, nc, hw](Tape& tp, int self) {
    const Tensor& dy = tp.grad(self);
    const Tensor& xv = tp.value(x);
    const Tensor& sv = tp.value(s);
    for (int p = 0; p < nc; ++p) {
      const float* d = dy.data() + static_cast<std::size_t>(p) * hw;
      const float* in = xv.data() + static_cast<std::size_t>(p) * hw;
      if (tp.needs_grad(x)) {
        float* dx = tp.grad(x).data() + static_cast<std::size_t>(p) * hw;
        const float k = sv[static_cast<std::size_t>(p)];
        for (int i = 0; i < hw; ++i) dx[i] += d[i] * k;
      }
      if (tp.needs_grad(s)) {
        float acc = 0.0f;
        for (int i = 0; i < hw; ++i) acc += d[i] * in[i];
        tp.grad(s)[static_cast<std::size_t>(p)] += acc;
      }
    }
  });
}

Var concat_channels(Tape& t, Var a, Var b) {
  const Tensor& av = t.value(a);
  const Tensor& bv = t.value(b);
  require_rank(av, 4, "concat_channels");
  require_rank(bv, 4, "concat_channels");
  require(av.dim(0) == bv.dim(0) && av.dim(2) == bv.dim(2) && av.dim(3) == bv.dim(3),
          "concat_channels: batch/spatial mismatch " + shape_string(av.shape()) + " vs " +
              shape_string(bv.shape()));
  const int n = av.dim(0), ca = av.dim(1), cb = bv.dim(1);
  const std::size_t hw = static_cast<std::size_t>(av.dim(2)) * av.dim(3);
  Tensor out({n, ca + cb, av.dim(2), av.dim(3)});
  for (int i = 0; i < n; ++i) {
    float* o = out.data() + static_cast<std::size_t>(i) * (ca + cb) * hw;
    std::copy_n(av.data() + static_cast<std::size_t>(i) * ca * hw, ca * hw, o);
    std::copy_n(bv.data() + static_cast<std::size_t>(i) * cb * hw, cb * hw, o + ca * hw);
  }
  return t.push(std::move(out), {a, b}, [a, b, n, ca, cb, hw](Tape& tp, int self) {
    const Tensor& dy = tp.grad(self);
    for (int i = 0; i < n; ++i) {
      const float* d = dy.data() + static_cast<std::size_t>(i) * (ca + cb) * hw;
      if (tp.needs_grad(a)) {
        float* da = tp.grad(a).data() + static_cast<std::size_t>(i) * ca * hw;
        for (std::size_t j = 0; j < ca * hw; ++j) da[j] += d[j];
      }
      if (tp.needs_grad(b)) {
        float* db = tp.grad(b).data() + static_cast<std::size_t>(i) * cb * hw;
        for (std::size_t j = 0; j < cb * hw; ++j) db[j] += d[ca * hw + j];
      }
    }
  });
}

Var flatten(Tape& t, Var x) {
  const Tensor& xv = t.value(x);
  require(xv.rank() >= 1, "flatten: scalar input");
  const int n = xv.dim(0);
  const int rest = n == 0 ? 0 : static_cast<int>(xv.size() / static_cast<std::size_t>(n));
  return t.push(xv.reshaped({n, rest}), {x}, [x](Tape& tp, int self) {
    const Tensor& dy = tp.grad(self);
    float* dx = tp.grad(x).data();
    for (std::size_t i = 0; i < dy.size(); ++i) dx[i] += dy[i];
  });
}

Var linear(Tape& t, Var x, Var w, Var b) {
  const Tensor& xv = t.value(x);
  const Tensor& wv = t.value(w);
  require_rank(xv, 2, "linear");
  require_rank(wv, 2, "linear weight");
  require(wv.dim(1) == xv.dim(1), "linear: expected " + std::to_string(wv.dim(1)) +
                                      " features, got " + std::to_string(xv.dim(1)));
  const int n = xv.dim(0), f = xv.dim(1), o = wv.dim(0);
  require(t.value(b).size() == static_cast<std::size_t>(o), "linear: bias size mismatch");
  Tensor out({n, o});
  MatMap y(out.data(), n, o);
  y.noalias() = ConstMatMap(xv.data(), n, f) * ConstMatMap(wv.data(), o, f).transpose();
  const float* bias = t.value(b).data();
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < o; ++j) y(i, j) += bias[j];
  }
  return t.push(std::move(out), {x, w, b}, [x, w, b, n, f, o](Tape& tp, int self) {
    ConstMatMap dy(tp.grad(self).data(), n, o);
    if (tp.needs_grad(x)) {
      MatMap(tp.grad(x).data(), n, f).noalias() += dy * ConstMatMap(tp.value(w).data(), o, f);
    }
    if (tp.needs_grad(w)) {
      MatMap(tp.grad(w).data(), o, f).noalias() += dy.transpose() * ConstMatMap(tp.value(x).data(), n, f);
    }
    if (tp.needs_grad(b)) {
      float* db = tp.grad(b).data();
      for (int j = 0; j < o; ++j) db[j] += dy.col(j).sum();
    }
  });
}

Var add(Tape& t, Var a, Var b) {
  const Tensor& av = t.value(a);
  const Tensor& bv = t.value(b);
  require(av.shape() == bv.shape(), "add: shape mismatch " + shape_string(av.shape()) + " vs " +
                                        shape_string(bv.shape()));
  Tensor out(av.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
  return t.push(std::move(out), {a, b}, [a, b](Tape& tp, int self) {
    const Tensor& dy = tp.grad(self);
    for (Var v : {a, b}) {
      if (!tp.needs_grad(v)) continue;
      float* d = tp.grad(v).data();
      for (std::size_t i = 0; i < dy.size(); ++i) d[i] += dy[i];
    }
  });
}

Var relu(Tape& t, Var x) {
  const Tensor& xv = t.value(x);
  Tensor out(xv.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] > 0.0f ? xv[i] : 0.0f;
  return t.push(std::move(out), {x}, [x](Tape& tp, int self) {
    const Tensor& dy = tp.grad(self);
    const Tensor& xv = tp.value(x);
    float* dx = tp.grad(x).data();
    for (std::size_t i = 0; i < dy.size(); ++i) {
      if (xv[i] > 0.0f) dx[i] += dy[i];
    }
  });
}

Var silu(Tape& t, Var x) {
  const Tensor& xv = t.value(x);
  Tensor out(xv.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] * sigmoidf(xv[i]);
  return t.push(std::move(out), {x}, [x](Tape& tp, int self) {
    const Tensor& dy = tp.grad(self);
    const Tensor& xv = tp.value(x);
    float* dx = tp.grad(x).data();
    for (std::size_t i = 0; i < dy.size(); ++i) {
      const float s = sigmoidf(xv[i]);
      dx[i] += dy[i] * s * (1.0f + xv[i] * (1.0f - s));
    }
  });
}

Var sigmoid(Tape& t, Var x) {
  const Tensor& xv = t.value(x);
  Tensor out(xv.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = sigmoidf(xv[i]);
  return t.push(std::move(out), {x}, [x](Tape& tp, int self) {
    const Tensor& dy = tp.grad(self);
    const Tensor& y = tp.value(Var{self});
    float* dx = tp.grad(x).data();
    for (std::size_t i = 0; i < dy.size(); ++i) dx[i] += dy[i] * y[i] * (1.0f - y[i]);
  });
}

Var softmax_cross_entropy(Tape& t, Var logits, std::span<const int> labels) {
  const Tensor& lv = t.value(logits);
  require_rank(lv, 2, "softmax_cross_entropy");
  const int n = lv.dim(0), k = lv.dim(1);
  require(static_cast<int>(labels.size()) == n, "softmax_cross_entropy: label count mismatch");
  std::vector<float> probs(lv.size());
  double loss = 0.0;
  for (int i = 0; i < n; ++i) {
    const float* row = lv.data() + static_cast<std::size_t>(i) * k;
    const int y = labels[static_cast<std::size_t>(i)];
    require(y >= 0 && y < k, "softmax_cross_entropy: label out of range");
    const float mx = *std::max_element(row, row + k);
    double z = 0.0;
    for (int j = 0; j < k; ++j) z += std::exp(static_cast<double>(row[j] - mx));
    for (int j = 0; j < k; ++j) {
      probs[static_cast<std::size_t>(i) * k + j] = static_cast<float>(std::exp(static_cast<double>(row[j] - mx)) / z);
    }
    loss += std::log(z) - static_cast<double>(row[y] - mx);
  }
  Tensor out({1}, static_cast<float>(loss / n));
  std::vector<int> ys(labels.begin(), labels.end());
  return t.push(std::move(out), {logits}, [logits, n, k, probs = std::move(probs), ys = std::move(ys)](Tape& tp, int self) {
    const float g = tp.grad(self)[0] / static_cast<float>(n);
    float* d = tp.grad(logits).data();
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < k; ++j) {
        const std::size_t idx = static_cast<std::size_t>(i) * k + j;
        d[idx] += g * (probs[idx] - (j == ys[static_cast<std::size_t>(i)] ? 1.0f : 0.0f));
      }
    }
  });
}

Var soft_dice_loss(Tape& t, Var probs, const Tensor& target, float smooth) {
  const Tensor& pv = t.value(probs);
  require(pv.shape() == target.shape(), "soft_dice_loss: shape mismatch " + shape_string(pv.shape()) +
                                            " vs " + shape_string(target.shape()));
  require(pv.rank() >= 1 && pv.dim(0) > 0, "soft_dice_loss: empty batch");
  const int n = pv.dim(0);
  const std::size_t per = pv.size() / static_cast<std::size_t>(n);
  std::vector<double> inter(static_cast<std::size_t>(n)), total(static_cast<std::size_t>(n));
  double loss = 0.0;
  for (int i = 0; i < n; ++i) {
    const float* p = pv.data() + i * per;
    const float* y = target.data() + i * per;
    double in = 0.0, tot = 0.0;
    for (std::size_t j = 0; j < per; ++j) {
      in += static_cast<double>(p[j]) * y[j];
      tot += static_cast<double>(p[j]) + y[j];
    }
    inter[static_cast<std::size_t>(i)] = in;
    total[static_cast<std::size_t>(i)] = tot;
    loss += 1.0 - (2.0 * in + smooth) / (tot + smooth);
  }
  Tensor out({1}, static_cast<float>(loss / n));
  return t.push(std::move(out), {probs},
                [probs, target, n, per, smooth, inter = std::move(inter), total = std::move(total)](Tape& tp, int self) {
                  const double g = tp.grad(self)[0] / static_cast<double>(n);
                  float* d = tp.grad(probs).data();
                  for (int i = 0; i < n; ++i) {
                    const double den = total[static_cast<std::size_t>(i)] + smooth;
                    const double num = 2.0 * inter[static_cast<std::size_t>(i)] + smooth;
                    const float* y = target.data() + i * per;
                    for (std::size_t j = 0; j < per; ++j) {
                      // d/dp of -(num/den)
                      const double dj = -(2.0 * y[j] * den - num) / (den * den);
                      d[i * per + j] += static_cast<float>(g * dj);
                    }
                  }
                });
}

}  // namespace tumorkit::nn
