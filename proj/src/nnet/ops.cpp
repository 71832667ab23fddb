#include "exdiff/nnet/ops.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <string>

#include <Eigen/Core>

#include "exdiff/error.hpp"

namespace exdiff::nnet {

namespace {

template <typename R>
using RowMat = Eigen::Matrix<R, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename R>
using MatMap = Eigen::Map<RowMat<R>>;
template <typename R>
using ConstMatMap = Eigen::Map<const RowMat<R>>;
template <typename R>
using ConstVecMap = Eigen::Map<const Eigen::Matrix<R, Eigen::Dynamic, 1>>;
template <typename R>
using StridedMatMap = Eigen::Map<RowMat<R>, 0, Eigen::OuterStride<>>;
template <typename R>
using ConstStridedMatMap = Eigen::Map<const RowMat<R>, 0, Eigen::OuterStride<>>;
template <typename R>
using ArrMap = Eigen::Map<Eigen::Array<R, Eigen::Dynamic, 1>>;
template <typename R>
using ConstArrMap = Eigen::Map<const Eigen::Array<R, Eigen::Dynamic, 1>>;

void require(bool ok, const std::string& op, const std::string& what) {
  if (!ok) throw ShapeError(op + ": " + what);
}

template <typename R>
void require_nonempty(const Var<R>& a, const std::string& op) {
  require(a.defined() && a.value().numel() > 0, op, "zero-size or undefined input");
}

template <typename R>
void require_same(const Var<R>& a, const Var<R>& b, const std::string& op) {
  require_nonempty(a, op);
  require_nonempty(b, op);
  require(a.shape() == b.shape(), op, "shape mismatch " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
}

template <typename R>
bool wants(const Node<R>& n, std::size_t i) {
  return i < n.inputs.size() && n.inputs[i] && n.inputs[i]->requires_grad;
}

template <typename R>
Tensor<R>& grad_of(Node<R>& n, std::size_t i) {
  return n.inputs[i]->grad_buffer();
}

template <typename R>
const Tensor<R>& value_of(const Node<R>& n, std::size_t i) {
  return n.inputs[i]->value;
}

// Rows of im2col are (channel, ky, kx); columns are the output pixels of
// image rows [y0, y1).
template <typename R>
void im2col(const R* x, std::size_t channels, std::size_t h, std::size_t w, std::size_t k, std::size_t y0,
            std::size_t y1, R* cols) {
  const auto pad = static_cast<std::ptrdiff_t>(k / 2);
  const auto H = static_cast<std::ptrdiff_t>(h), W = static_cast<std::ptrdiff_t>(w);
  const std::size_t span = (y1 - y0) * w;
  for (std::size_t c = 0; c < channels; ++c) {
    const R* plane = x + c * h * w;
    for (std::size_t ky = 0; ky < k; ++ky) {
      for (std::size_t kx = 0; kx < k; ++kx) {
        R* row = cols + ((c * k + ky) * k + kx) * span;
        const std::ptrdiff_t dy = static_cast<std::ptrdiff_t>(ky) - pad;
        const std::ptrdiff_t dx = static_cast<std::ptrdiff_t>(kx) - pad;
        const std::ptrdiff_t lo = std::max<std::ptrdiff_t>(0, -dx);
        const std::ptrdiff_t hi = std::max(lo, std::min<std::ptrdiff_t>(W, W - dx));
        for (auto y = static_cast<std::ptrdiff_t>(y0); y < static_cast<std::ptrdiff_t>(y1); ++y) {
          const std::ptrdiff_t iy = y + dy;
          R* out = row + (y - static_cast<std::ptrdiff_t>(y0)) * W;
          if (iy < 0 || iy >= H) {
            std::fill(out, out + W, R(0));
            continue;
          }
          const R* in = plane + iy * W;
          std::fill(out, out + lo, R(0));
          std::copy(in + lo + dx, in + hi + dx, out + lo);
          std::fill(out + hi, out + W, R(0));
        }
      }
    }
  }
}

template <typename R>
void col2im_add(const R* cols, std::size_t channels, std::size_t h, std::size_t w, std::size_t k, std::size_t y0,
                std::size_t y1, R* dx) {
  const auto pad = static_cast<std::ptrdiff_t>(k / 2);
  const auto H = static_cast<std::ptrdiff_t>(h), W = static_cast<std::ptrdiff_t>(w);
  const std::size_t span = (y1 - y0) * w;
  for (std::size_t c = 0; c < channels; ++c) {
    R* plane = dx + c * h * w;
    for (std::size_t ky = 0; ky < k; ++ky) {
      for (std::size_t kx = 0; kx < k; ++kx) {
        const R* row = cols + ((c * k + ky) * k + kx) * span;
        const std::ptrdiff_t dy = static_cast<std::ptrdiff_t>(ky) - pad;
        const std::ptrdiff_t dxo = static_cast<std::ptrdiff_t>(kx) - pad;
        const std::ptrdiff_t lo = std::max<std::ptrdiff_t>(0, -dxo);
        const std::ptrdiff_t hi = std::min<std::ptrdiff_t>(W, W - dxo);
        for (auto y = static_cast<std::ptrdiff_t>(y0); y < static_cast<std::ptrdiff_t>(y1); ++y) {
          const std::ptrdiff_t iy = y + dy;
          if (iy < 0 || iy >= H) continue;
          const R* g = row + (y - static_cast<std::ptrdiff_t>(y0)) * W;
          R* out = plane + iy * W;
          for (std::ptrdiff_t xx = lo; xx < hi; ++xx) out[xx + dxo] += g[xx];
        }
      }
    }
  }
}

// Image rows per im2col tile, sized so a tile stays cache resident.
inline std::size_t conv_tile_rows(std::size_t ckk, std::size_t h, std::size_t w) {
  const std::size_t budget = 48 * 1024;  // elements
  return std::clamp<std::size_t>(budget / std::max<std::size_t>(1, ckk * w), 1, h);
}

}  // namespace

// ---------------------------------------------------------------- elementwise

template <typename R>
Var<R> add(const Var<R>& a, const Var<R>& b) {
  require_same(a, b, "add");
  Tensor<R> out = a.value();
  const auto& bv = b.value();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] += bv[i];
  return make_result<R>(std::move(out), {a, b}, [](Node<R>& n) {
    for (std::size_t k = 0; k < 2; ++k) {
      if (!wants(n, k)) continue;
      auto& g = grad_of(n, k);
      for (std::size_t i = 0; i < g.numel(); ++i) g[i] += n.grad[i];
    }
  });
}

template <typename R>
Var<R> sub(const Var<R>& a, const Var<R>& b) {
  require_same(a, b, "sub");
  Tensor<R> out = a.value();
  const auto& bv = b.value();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] -= bv[i];
  return make_result<R>(std::move(out), {a, b}, [](Node<R>& n) {
    if (wants(n, 0)) {
      auto& g = grad_of(n, 0);
      for (std::size_t i = 0; i < g.numel(); ++i) g[i] += n.grad[i];
    }
    if (wants(n, 1)) {
      auto& g = grad_of(n, 1);
      for (std::size_t i = 0; i < g.numel(); ++i) g[i] -= n.grad[i];
    }
  });
}

template <typename R>
Var<R> mul(const Var<R>& a, const Var<R>& b) {
  require_same(a, b, "mul");
  Tensor<R> out = a.value();
  const auto& bv = b.value();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] *= bv[i];
  return make_result<R>(std::move(out), {a, b}, [](Node<R>& n) {
    const auto& av = value_of(n, 0);
    const auto& bv2 = value_of(n, 1);
    if (wants(n, 0)) {
      auto& g = grad_of(n, 0);
      for (std::size_t i = 0; i < g.numel(); ++i) g[i] += n.grad[i] * bv2[i];
    }
    if (wants(n, 1)) {
      auto& g = grad_of(n, 1);
      for (std::size_t i = 0; i < g.numel(); ++i) g[i] += n.grad[i] * av[i];
    }
  });
}

template <typename R>
Var<R> scale(const Var<R>& a, double s) {
  require_nonempty(a, "scale");
  Tensor<R> out = a.value();
  const R f = static_cast<R>(s);
  for (auto& v : out.values()) v *= f;
  return make_result<R>(std::move(out), {a}, [f](Node<R>& n) {
    auto& g = grad_of(n, 0);
    for (std::size_t i = 0; i < g.numel(); ++i) g[i] += f * n.grad[i];
  });
}

template <typename R>
Var<R> scale_per_item(const Var<R>& a, const std::vector<double>& factors) {
  require_nonempty(a, "scale_per_item");
  require(a.shape()[0] == factors.size(), "scale_per_item", "one factor per batch item required");
  Tensor<R> out = a.value();
  const std::size_t per = out.numel() / factors.size();
  for (std::size_t b = 0; b < factors.size(); ++b) {
    const R f = static_cast<R>(factors[b]);
    for (std::size_t i = 0; i < per; ++i) out[b * per + i] *= f;
  }
  return make_result<R>(std::move(out), {a}, [factors, per](Node<R>& n) {
    auto& g = grad_of(n, 0);
    for (std::size_t b = 0; b < factors.size(); ++b) {
      const R f = static_cast<R>(factors[b]);
      for (std::size_t i = 0; i < per; ++i) g[b * per + i] += f * n.grad[b * per + i];
    }
  });
}

template <typename R>
Var<R> silu(const Var<R>& a) {
  require_nonempty(a, "silu");
  const auto n = static_cast<Eigen::Index>(a.value().numel());
  std::shared_ptr<R[]> sig(new R[n]);
  ConstArrMap<R> x(a.value().data(), n);
  // Scalar exp: Eigen's packet exp rounds differently from its scalar path, so
  // results would depend on buffer alignment.
  for (Eigen::Index i = 0; i < n; ++i) sig[i] = R(1) / (R(1) + std::exp(-x[i]));
  Tensor<R> out(a.shape());
  ArrMap<R>(out.data(), n) = x * ConstArrMap<R>(sig.get(), n);
  return make_result<R>(std::move(out), {a}, [sig, n](Node<R>& node) {
    ConstArrMap<R> xv(value_of(node, 0).data(), n);
    ConstArrMap<R> s(sig.get(), n);
    ArrMap<R>(grad_of(node, 0).data(), n) += ConstArrMap<R>(node.grad.data(), n) * s * (R(1) + xv * (R(1) - s));
  });
}

template <typename R>
Var<R> sum(const Var<R>& a) {
  require_nonempty(a, "sum");
  double acc = 0.0;
  for (R v : a.value().values()) acc += v;
  Tensor<R> out({1}, static_cast<R>(acc));
  return make_result<R>(std::move(out), {a}, [](Node<R>& n) {
    auto& g = grad_of(n, 0);
    for (auto& v : g.values()) v += n.grad[0];
  });
}

template <typename R>
Var<R> mean_square(const Var<R>& a) {
  require_nonempty(a, "mean_square");
  double acc = 0.0;
  for (R v : a.value().values()) acc += static_cast<double>(v) * v;
  const double count = static_cast<double>(a.value().numel());
  Tensor<R> out({1}, static_cast<R>(acc / count));
  return make_result<R>(std::move(out), {a}, [count](Node<R>& n) {
    const auto& x = value_of(n, 0);
    auto& g = grad_of(n, 0);
    const R f = static_cast<R>(2.0 / count) * n.grad[0];
    for (std::size_t i = 0; i < g.numel(); ++i) g[i] += f * x[i];
  });
}

template <typename R>
Var<R> reshape(const Var<R>& a, Shape shape) {
  require_nonempty(a, "reshape");
  Tensor<R> out = a.value();
  out.reshape(std::move(shape));
  return make_result<R>(std::move(out), {a}, [](Node<R>& n) {
    auto& g = grad_of(n, 0);
    for (std::size_t i = 0; i < g.numel(); ++i) g[i] += n.grad[i];
  });
}

// ---------------------------------------------------------------- linear maps

template <typename R>
Var<R> conv2d(const Var<R>& x, const Var<R>& w, const Var<R>& b) {
  require_nonempty(x, "conv2d");
  require_nonempty(w, "conv2d");
  require(x.value().rank() == 4 && w.value().rank() == 4, "conv2d", "expects (B,C,H,W) input and (O,I,k,k) weight");
  const std::size_t batch = x.dim(0), cin = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const std::size_t cout = w.dim(0), k = w.dim(2);
  require(w.dim(1) == cin, "conv2d", "input channels " + std::to_string(cin) + " vs weight " + shape_string(w.shape()));
  require(w.dim(3) == k && k % 2 == 1, "conv2d", "kernel must be square and odd");
  const bool has_bias = b.defined();
  if (has_bias) require(b.value().numel() == cout, "conv2d", "bias length mismatch");

  const std::size_t hw = h * wd, ckk = cin * k * k;
  const std::size_t tile = conv_tile_rows(ckk, h, wd);
  Tensor<R> out({batch, cout, h, wd});
  std::unique_ptr<R[]> cols(k == 1 ? nullptr : new R[ckk * tile * wd]);
  ConstMatMap<R> wm(w.value().data(), cout, ckk);
  for (std::size_t n = 0; n < batch; ++n) {
    const R* xin = x.value().data() + n * cin * hw;
    R* yout = out.data() + n * cout * hw;
    if (k == 1) {
      MatMap<R>(yout, cout, hw).noalias() = wm * ConstMatMap<R>(xin, ckk, hw);
    } else {
      for (std::size_t y0 = 0; y0 < h; y0 += tile) {
        const std::size_t y1 = std::min(h, y0 + tile), span = (y1 - y0) * wd;
        im2col(xin, cin, h, wd, k, y0, y1, cols.get());
        StridedMatMap<R>(yout + y0 * wd, cout, span, Eigen::OuterStride<>(hw)).noalias() =
            wm * ConstMatMap<R>(cols.get(), ckk, span);
      }
    }
    if (has_bias) MatMap<R>(yout, cout, hw).colwise() += ConstVecMap<R>(b.value().data(), cout);
  }

  std::vector<Var<R>> inputs{x, w};
  if (has_bias) inputs.push_back(b);
  return make_result<R>(std::move(out), std::move(inputs), [=](Node<R>& node) {
    const auto& xv = value_of(node, 0);
    ConstMatMap<R> wmat(value_of(node, 1).data(), cout, ckk);
    const bool dw_needed = wants(node, 1), dx_needed = wants(node, 0);
    std::unique_ptr<R[]> colbuf(k == 1 ? nullptr : new R[ckk * tile * wd]);
    std::unique_ptr<R[]> dcols(k == 1 ? nullptr : new R[ckk * tile * wd]);
    for (std::size_t n = 0; n < batch; ++n) {
      const R* dyp = node.grad.data() + n * cout * hw;
      const R* xin = xv.data() + n * cin * hw;
      if (has_bias && wants(node, 2)) {
        auto& db = grad_of(node, 2);
        ConstMatMap<R> dy(dyp, cout, hw);
        for (std::size_t o = 0; o < cout; ++o) {
          R acc = 0;
          for (Eigen::Index j = 0; j < dy.cols(); ++j) acc += dy(o, j);
          db[o] += acc;
        }
      }
      if (k == 1) {
        ConstMatMap<R> dy(dyp, cout, hw);
        if (dw_needed) {
          MatMap<R>(grad_of(node, 1).data(), cout, ckk).noalias() += dy * ConstMatMap<R>(xin, ckk, hw).transpose();
        }
        if (dx_needed) {
          MatMap<R>(grad_of(node, 0).data() + n * cin * hw, ckk, hw).noalias() += wmat.transpose() * dy;
        }
        continue;
      }
      for (std::size_t y0 = 0; y0 < h; y0 += tile) {
        const std::size_t y1 = std::min(h, y0 + tile), span = (y1 - y0) * wd;
        ConstStridedMatMap<R> dy(dyp + y0 * wd, cout, span, Eigen::OuterStride<>(hw));
        if (dw_needed) {
          im2col(xin, cin, h, wd, k, y0, y1, colbuf.get());
          MatMap<R>(grad_of(node, 1).data(), cout, ckk).noalias() +=
              dy * ConstMatMap<R>(colbuf.get(), ckk, span).transpose();
        }
        if (dx_needed) {
          MatMap<R>(dcols.get(), ckk, span).noalias() = wmat.transpose() * dy;
          col2im_add(dcols.get(), cin, h, wd, k, y0, y1, grad_of(node, 0).data() + n * cin * hw);
        }
      }
    }
  });
}

template <typename R>
Var<R> linear(const Var<R>& x, const Var<R>& w, const Var<R>& b) {
  require_nonempty(x, "linear");
  require_nonempty(w, "linear");
  require(w.value().rank() == 2, "linear", "weight must be (out, in)");
  const std::size_t out_dim = w.dim(0), in_dim = w.dim(1);
  require(x.shape().back() == in_dim, "linear",
          "input width " + std::to_string(x.shape().back()) + " vs weight " + shape_string(w.shape()));
  const bool has_bias = b.defined();
  if (has_bias) require(b.value().numel() == out_dim, "linear", "bias length mismatch");
  const std::size_t rows = x.value().numel() / in_dim;

  Shape oshape = x.shape();
  oshape.back() = out_dim;
  Tensor<R> out(oshape);
  MatMap<R> y(out.data(), rows, out_dim);
  y.noalias() = ConstMatMap<R>(x.value().data(), rows, in_dim) * ConstMatMap<R>(w.value().data(), out_dim, in_dim).transpose();
  if (has_bias) y.rowwise() += ConstVecMap<R>(b.value().data(), out_dim).transpose();

  std::vector<Var<R>> inputs{x, w};
  if (has_bias) inputs.push_back(b);
  return make_result<R>(std::move(out), std::move(inputs), [=](Node<R>& node) {
    ConstMatMap<R> dy(node.grad.data(), rows, out_dim);
    if (wants(node, 0)) {
      MatMap<R>(grad_of(node, 0).data(), rows, in_dim).noalias() +=
          dy * ConstMatMap<R>(value_of(node, 1).data(), out_dim, in_dim);
    }
    if (wants(node, 1)) {
      MatMap<R>(grad_of(node, 1).data(), out_dim, in_dim).noalias() +=
          dy.transpose() * ConstMatMap<R>(value_of(node, 0).data(), rows, in_dim);
    }
    if (has_bias && wants(node, 2)) {
      auto& db = grad_of(node, 2);
      for (std::size_t o = 0; o < out_dim; ++o) {
        R acc = 0;
        for (std::size_t r = 0; r < rows; ++r) acc += dy(r, o);
        db[o] += acc;
      }
    }
  });
}

// ---------------------------------------------------------------- normalisation

namespace {

struct NormCache {
  std::vector<double> inv_std;
};

// Sums in a fixed eight-lane order. The lanes break the add dependency chain
// while keeping the result independent of alignment and build.
constexpr std::size_t kLanes = 8;

template <typename R, typename F>
double lane_sum(std::size_t n, F&& term) {
  double acc[kLanes] = {};
  std::size_t i = 0;
  for (; i + kLanes <= n; i += kLanes) {
    for (std::size_t l = 0; l < kLanes; ++l) acc[l] += term(i + l);
  }
  for (; i < n; ++i) acc[i % kLanes] += term(i);
  double s = 0.0;
  for (double a : acc) s += a;
  return s;
}

// Shared normalisation over contiguous runs of `run` elements. Inside a run,
// consecutive segments of `seg` elements share one affine index, cycling
// through `period` indices.
template <typename R>
Var<R> normalize_runs(const Var<R>& x, const Var<R>& gamma, const Var<R>& beta, std::size_t runs, std::size_t run,
                      std::size_t seg, std::size_t period, double eps) {
  const auto& xv = x.value();
  Tensor<R> out(xv.shape());
  auto xhat = std::make_shared<Tensor<R>>(xv.shape());
  auto cache = std::make_shared<NormCache>();
  cache->inv_std.resize(runs);
  const std::size_t segs = run / seg;
  const R* gv = gamma.value().data();
  const R* bv = beta.value().data();
  for (std::size_t r = 0; r < runs; ++r) {
    const R* in = xv.data() + r * run;
    const double mean = lane_sum<R>(run, [&](std::size_t i) { return static_cast<double>(in[i]); }) /
                        static_cast<double>(run);
    const double var = lane_sum<R>(run, [&](std::size_t i) {
                         const double d = in[i] - mean;
                         return d * d;
                       }) /
                       static_cast<double>(run);
    const double inv = 1.0 / std::sqrt(var + eps);
    cache->inv_std[r] = inv;
    const R m = static_cast<R>(mean), iv = static_cast<R>(inv);
    R* xh = xhat->data() + r * run;
    R* o = out.data() + r * run;
    for (std::size_t sgi = 0; sgi < segs; ++sgi) {
      const std::size_t c = (r * segs + sgi) % period;
      const R g = gv[c], bb = bv[c];
      for (std::size_t i = sgi * seg; i < (sgi + 1) * seg; ++i) {
        xh[i] = (in[i] - m) * iv;
        o[i] = xh[i] * g + bb;
      }
    }
  }
  return make_result<R>(std::move(out), {x, gamma, beta}, [=](Node<R>& n) {
    const R* gam = value_of(n, 1).data();
    R* dgamma = wants(n, 1) ? grad_of(n, 1).data() : nullptr;
    R* dbeta = wants(n, 2) ? grad_of(n, 2).data() : nullptr;
    R* dx = wants(n, 0) ? grad_of(n, 0).data() : nullptr;
    std::vector<R> dxhat(run);
    for (std::size_t r = 0; r < runs; ++r) {
      const R* dy = n.grad.data() + r * run;
      const R* xh = xhat->data() + r * run;
      for (std::size_t sgi = 0; sgi < segs; ++sgi) {
        const std::size_t c = (r * segs + sgi) % period;
        const std::size_t b = sgi * seg;
        if (dgamma) dgamma[c] += static_cast<R>(lane_sum<R>(seg, [&](std::size_t i) {
          return static_cast<double>(dy[b + i]) * xh[b + i];
        }));
        if (dbeta) dbeta[c] += static_cast<R>(lane_sum<R>(seg, [&](std::size_t i) { return static_cast<double>(dy[b + i]); }));
        for (std::size_t i = b; i < b + seg; ++i) dxhat[i] = dy[i] * gam[c];
      }
      const double sum_d = lane_sum<R>(run, [&](std::size_t i) { return static_cast<double>(dxhat[i]); });
      const double sum_dx = lane_sum<R>(run, [&](std::size_t i) { return static_cast<double>(dxhat[i]) * xh[i]; });
      if (!dx) continue;
      const double mm = static_cast<double>(run);
      const R a = static_cast<R>(cache->inv_std[r]);
      const R sd = static_cast<R>(sum_d / mm), sx = static_cast<R>(sum_dx / mm);
      R* d = dx + r * run;
      for (std::size_t i = 0; i < run; ++i) d[i] += a * (dxhat[i] - sd - xh[i] * sx);
    }
  });
}

}  // namespace

template <typename R>
Var<R> group_normalize(const Var<R>& x, std::size_t groups, const Var<R>& gamma, const Var<R>& beta, double eps) {
  require_nonempty(x, "group_normalize");
  require(x.value().rank() >= 2, "group_normalize", "expects (B, C, ...)");
  const std::size_t batch = x.dim(0), channels = x.dim(1);
  require(groups > 0 && channels % groups == 0, "group_normalize",
          std::to_string(channels) + " channels not divisible into " + std::to_string(groups) + " groups");
  require(gamma.value().numel() == channels && beta.value().numel() == channels, "group_normalize",
          "affine length mismatch");
  const std::size_t spatial = x.value().numel() / (batch * channels);
  const std::size_t run = (channels / groups) * spatial;
  return normalize_runs<R>(x, gamma, beta, batch * groups, run, spatial, channels, eps);
}

template <typename R>
Var<R> layer_normalize(const Var<R>& x, const Var<R>& gamma, const Var<R>& beta, double eps) {
  require_nonempty(x, "layer_normalize");
  const std::size_t width = x.shape().back();
  require(gamma.value().numel() == width && beta.value().numel() == width, "layer_normalize", "affine length mismatch");
  return normalize_runs<R>(x, gamma, beta, x.value().numel() / width, width, 1, width, eps);
}

// ---------------------------------------------------------------- attention

template <typename R>
Var<R> softmax(const Var<R>& a) {
  require_nonempty(a, "softmax");
  const std::size_t width = a.shape().back();
  const std::size_t rows = a.value().numel() / width;
  Tensor<R> out = a.value();
  for (std::size_t r = 0; r < rows; ++r) {
    R* row = out.data() + r * width;
    const R mx = *std::max_element(row, row + width);
    double total = 0.0;
    for (std::size_t i = 0; i < width; ++i) {
      row[i] = std::exp(row[i] - mx);
      total += row[i];
    }
    for (std::size_t i = 0; i < width; ++i) row[i] = static_cast<R>(row[i] / total);
  }
  return make_result<R>(std::move(out), {a}, [rows, width](Node<R>& n) {
    auto& g = grad_of(n, 0);
    for (std::size_t r = 0; r < rows; ++r) {
      const R* y = n.value.data() + r * width;
      const R* dy = n.grad.data() + r * width;
      double dot = 0.0;
      for (std::size_t i = 0; i < width; ++i) dot += static_cast<double>(dy[i]) * y[i];
      for (std::size_t i = 0; i < width; ++i) g[r * width + i] += static_cast<R>(y[i] * (dy[i] - dot));
    }
  });
}

template <typename R>
Var<R> matmul(const Var<R>& a, const Var<R>& b, bool transpose_b) {
  require_nonempty(a, "matmul");
  require_nonempty(b, "matmul");
  require(a.value().rank() == 3 && b.value().rank() == 3, "matmul", "expects rank-3 batched operands");
  const std::size_t batch = a.dim(0), m = a.dim(1), kdim = a.dim(2);
  require(b.dim(0) == batch, "matmul", "batch mismatch");
  const std::size_t n = transpose_b ? b.dim(1) : b.dim(2);
  require((transpose_b ? b.dim(2) : b.dim(1)) == kdim, "matmul",
          "inner dimension mismatch " + shape_string(a.shape()) + " x " + shape_string(b.shape()));
  Tensor<R> out({batch, m, n});
  for (std::size_t i = 0; i < batch; ++i) {
    ConstMatMap<R> am(a.value().data() + i * m * kdim, m, kdim);
    MatMap<R> c(out.data() + i * m * n, m, n);
    if (transpose_b) {
      c.noalias() = am * ConstMatMap<R>(b.value().data() + i * n * kdim, n, kdim).transpose();
    } else {
      c.noalias() = am * ConstMatMap<R>(b.value().data() + i * kdim * n, kdim, n);
    }
  }
  return make_result<R>(std::move(out), {a, b}, [=](Node<R>& node) {
    const auto& av = value_of(node, 0);
    const auto& bv = value_of(node, 1);
    for (std::size_t i = 0; i < batch; ++i) {
      ConstMatMap<R> dc(node.grad.data() + i * m * n, m, n);
      ConstMatMap<R> am(av.data() + i * m * kdim, m, kdim);
      if (transpose_b) {
        ConstMatMap<R> bm(bv.data() + i * n * kdim, n, kdim);
        if (wants(node, 0)) MatMap<R>(grad_of(node, 0).data() + i * m * kdim, m, kdim).noalias() += dc * bm;
        if (wants(node, 1)) MatMap<R>(grad_of(node, 1).data() + i * n * kdim, n, kdim).noalias() += dc.transpose() * am;
      } else {
        ConstMatMap<R> bm(bv.data() + i * kdim * n, kdim, n);
        if (wants(node, 0)) MatMap<R>(grad_of(node, 0).data() + i * m * kdim, m, kdim).noalias() += dc * bm.transpose();
        if (wants(node, 1)) MatMap<R>(grad_of(node, 1).data() + i * kdim * n, kdim, n).noalias() += am.transpose() * dc;
      }
    }
  });
}

template <typename R>
Var<R> attention(const Var<R>& q, const Var<R>& k, const Var<R>& v) {
  require_nonempty(q, "attention");
  require_nonempty(k, "attention");
  require_nonempty(v, "attention");
  require(q.value().rank() == 3 && k.value().rank() == 3 && v.value().rank() == 3, "attention",
          "expects rank-3 Q, K, V");
  require(q.dim(2) == k.dim(2), "attention", "Q and K widths differ");
  require(k.dim(1) == v.dim(1), "attention", "K and V token counts differ");
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(q.dim(2)));
  return matmul(softmax(scale(matmul(q, k, true), inv_sqrt_d)), v);
}

// ---------------------------------------------------------------- layout

template <typename R>
Var<R> concat_channels(const Var<R>& a, const Var<R>& b) {
  require_nonempty(a, "concat_channels");
  require_nonempty(b, "concat_channels");
  require(a.value().rank() >= 2 && a.value().rank() == b.value().rank(), "concat_channels", "rank mismatch");
  require(a.dim(0) == b.dim(0), "concat_channels", "batch mismatch");
  for (std::size_t i = 2; i < a.value().rank(); ++i) require(a.dim(i) == b.dim(i), "concat_channels", "spatial mismatch");
  const std::size_t batch = a.dim(0);
  const std::size_t sa = a.value().numel() / batch, sb = b.value().numel() / batch;
  Shape shape = a.shape();
  shape[1] += b.dim(1);
  Tensor<R> out(shape);
  for (std::size_t n = 0; n < batch; ++n) {
    std::copy_n(a.value().data() + n * sa, sa, out.data() + n * (sa + sb));
    std::copy_n(b.value().data() + n * sb, sb, out.data() + n * (sa + sb) + sa);
  }
  return make_result<R>(std::move(out), {a, b}, [=](Node<R>& node) {
    for (std::size_t n = 0; n < batch; ++n) {
      const R* g = node.grad.data() + n * (sa + sb);
      if (wants(node, 0)) {
        R* ga = grad_of(node, 0).data() + n * sa;
        for (std::size_t i = 0; i < sa; ++i) ga[i] += g[i];
      }
      if (wants(node, 1)) {
        R* gb = grad_of(node, 1).data() + n * sb;
        for (std::size_t i = 0; i < sb; ++i) gb[i] += g[sa + i];
      }
    }
  });
}

template <typename R>
Var<R> downsample2x(const Var<R>& x) {
  require_nonempty(x, "downsample2x");
  require(x.value().rank() == 4, "downsample2x", "expects (B,C,H,W)");
  const std::size_t planes = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3);
  require(h % 2 == 0 && w % 2 == 0, "downsample2x", "spatial dims must be even, got " + shape_string(x.shape()));
  const std::size_t ho = h / 2, wo = w / 2;
  Tensor<R> out({x.dim(0), x.dim(1), ho, wo});
  for (std::size_t p = 0; p < planes; ++p) {
    const R* in = x.value().data() + p * h * w;
    R* o = out.data() + p * ho * wo;
    for (std::size_t y = 0; y < ho; ++y) {
      for (std::size_t xx = 0; xx < wo; ++xx) {
        const R* tl = in + (2 * y) * w + 2 * xx;
        o[y * wo + xx] = R(0.25) * (tl[0] + tl[1] + tl[w] + tl[w + 1]);
      }
    }
  }
  return make_result<R>(std::move(out), {x}, [=](Node<R>& node) {
    auto& g = grad_of(node, 0);
    for (std::size_t p = 0; p < planes; ++p) {
      const R* go = node.grad.data() + p * ho * wo;
      R* gi = g.data() + p * h * w;
      for (std::size_t y = 0; y < ho; ++y) {
        for (std::size_t xx = 0; xx < wo; ++xx) {
          const R v = R(0.25) * go[y * wo + xx];
          R* tl = gi + (2 * y) * w + 2 * xx;
          tl[0] += v;
          tl[1] += v;
          tl[w] += v;
          tl[w + 1] += v;
        }
      }
    }
  });
}

template <typename R>
Var<R> upsample2x(const Var<R>& x) {
  require_nonempty(x, "upsample2x");
  require(x.value().rank() == 4, "upsample2x", "expects (B,C,H,W)");
  const std::size_t planes = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::size_t ho = 2 * h, wo = 2 * w;
  Tensor<R> out({x.dim(0), x.dim(1), ho, wo});
  for (std::size_t p = 0; p < planes; ++p) {
    const R* in = x.value().data() + p * h * w;
    R* o = out.data() + p * ho * wo;
    for (std::size_t y = 0; y < ho; ++y) {
      for (std::size_t xx = 0; xx < wo; ++xx) o[y * wo + xx] = in[(y / 2) * w + xx / 2];
    }
  }
  return make_result<R>(std::move(out), {x}, [=](Node<R>& node) {
    auto& g = grad_of(node, 0);
    for (std::size_t p = 0; p < planes; ++p) {
      const R* go = node.grad.data() + p * ho * wo;
      R* gi = g.data() + p * h * w;
      for (std::size_t y = 0; y < ho; ++y) {
        for (std::size_t xx = 0; xx < wo; ++xx) gi[(y / 2) * w + xx / 2] += go[y * wo + xx];
      }
    }
  });
}

template <typename R>
Var<R> add_channel_bias(const Var<R>& x, const Var<R>& v) {
  require_nonempty(x, "add_channel_bias");
  require_nonempty(v, "add_channel_bias");
  require(x.value().rank() == 4 && v.value().rank() == 2, "add_channel_bias", "expects (B,C,H,W) and (B,C)");
  require(v.dim(0) == x.dim(0) && v.dim(1) == x.dim(1), "add_channel_bias", "bias shape mismatch");
  const std::size_t planes = x.dim(0) * x.dim(1), hw = x.dim(2) * x.dim(3);
  Tensor<R> out = x.value();
  for (std::size_t p = 0; p < planes; ++p) {
    const R b = v.value()[p];
    for (std::size_t i = 0; i < hw; ++i) out[p * hw + i] += b;
  }
  return make_result<R>(std::move(out), {x, v}, [=](Node<R>& node) {
    if (wants(node, 0)) {
      auto& g = grad_of(node, 0);
      for (std::size_t i = 0; i < g.numel(); ++i) g[i] += node.grad[i];
    }
    if (wants(node, 1)) {
      auto& g = grad_of(node, 1);
      for (std::size_t p = 0; p < planes; ++p) {
        double acc = 0.0;
        for (std::size_t i = 0; i < hw; ++i) acc += node.grad[p * hw + i];
        g[p] += static_cast<R>(acc);
      }
    }
  });
}

template <typename R>
Var<R> to_tokens(const Var<R>& x) {
  require_nonempty(x, "to_tokens");
  require(x.value().rank() == 4, "to_tokens", "expects (B,C,H,W)");
  const std::size_t batch = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  Tensor<R> out({batch, hw, c});
  for (std::size_t n = 0; n < batch; ++n) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      for (std::size_t i = 0; i < hw; ++i) out[(n * hw + i) * c + ch] = x.value()[(n * c + ch) * hw + i];
    }
  }
  return make_result<R>(std::move(out), {x}, [=](Node<R>& node) {
    auto& g = grad_of(node, 0);
    for (std::size_t n = 0; n < batch; ++n) {
      for (std::size_t ch = 0; ch < c; ++ch) {
        for (std::size_t i = 0; i < hw; ++i) g[(n * c + ch) * hw + i] += node.grad[(n * hw + i) * c + ch];
      }
    }
  });
}

template <typename R>
Var<R> from_tokens(const Var<R>& t, std::size_t height, std::size_t width) {
  require_nonempty(t, "from_tokens");
  require(t.value().rank() == 3 && t.dim(1) == height * width, "from_tokens", "token count mismatch");
  const std::size_t batch = t.dim(0), c = t.dim(2), hw = height * width;
  Tensor<R> out({batch, c, height, width});
  for (std::size_t n = 0; n < batch; ++n) {
    for (std::size_t i = 0; i < hw; ++i) {
      for (std::size_t ch = 0; ch < c; ++ch) out[(n * c + ch) * hw + i] = t.value()[(n * hw + i) * c + ch];
    }
  }
  return make_result<R>(std::move(out), {t}, [=](Node<R>& node) {
    auto& g = grad_of(node, 0);
    for (std::size_t n = 0; n < batch; ++n) {
      for (std::size_t i = 0; i < hw; ++i) {
        for (std::size_t ch = 0; ch < c; ++ch) g[(n * hw + i) * c + ch] += node.grad[(n * c + ch) * hw + i];
      }
    }
  });
}

template <typename R>
Var<R> broadcast_spatial(const Var<R>& v, std::size_t height, std::size_t width) {
  require_nonempty(v, "broadcast_spatial");
  require(v.value().rank() == 2, "broadcast_spatial", "expects (B, P)");
  const std::size_t planes = v.value().numel(), hw = height * width;
  Tensor<R> out({v.dim(0), v.dim(1), height, width});
  for (std::size_t p = 0; p < planes; ++p) std::fill_n(out.data() + p * hw, hw, v.value()[p]);
  return make_result<R>(std::move(out), {v}, [=](Node<R>& node) {
    auto& g = grad_of(node, 0);
    for (std::size_t p = 0; p < planes; ++p) {
      double acc = 0.0;
      for (std::size_t i = 0; i < hw; ++i) acc += node.grad[p * hw + i];
      g[p] += static_cast<R>(acc);
    }
  });
}

#define EXDIFF_INSTANTIATE(R)                                                                       \
  template Var<R> add<R>(const Var<R>&, const Var<R>&);                                             \
  template Var<R> sub<R>(const Var<R>&, const Var<R>&);                                             \
  template Var<R> mul<R>(const Var<R>&, const Var<R>&);                                             \
  template Var<R> scale<R>(const Var<R>&, double);                                                  \
  template Var<R> scale_per_item<R>(const Var<R>&, const std::vector<double>&);                     \
  template Var<R> silu<R>(const Var<R>&);                                                           \
  template Var<R> sum<R>(const Var<R>&);                                                            \
  template Var<R> mean_square<R>(const Var<R>&);                                                    \
  template Var<R> reshape<R>(const Var<R>&, Shape);                                                 \
  template Var<R> conv2d<R>(const Var<R>&, const Var<R>&, const Var<R>&);                           \
  template Var<R> linear<R>(const Var<R>&, const Var<R>&, const Var<R>&);                           \
  template Var<R> group_normalize<R>(const Var<R>&, std::size_t, const Var<R>&, const Var<R>&, double); \
  template Var<R> layer_normalize<R>(const Var<R>&, const Var<R>&, const Var<R>&, double);          \
  template Var<R> softmax<R>(const Var<R>&);                                                        \
  template Var<R> matmul<R>(const Var<R>&, const Var<R>&, bool);                                    \
  template Var<R> attention<R>(const Var<R>&, const Var<R>&, const Var<R>&);                        \
  template Var<R> concat_channels<R>(const Var<R>&, const Var<R>&);                                 \
  template Var<R> downsample2x<R>(const Var<R>&);                                                   \
  template Var<R> upsample2x<R>(const Var<R>&);                                                     \
  template Var<R> add_channel_bias<R>(const Var<R>&, const Var<R>&);                                \
  template Var<R> to_tokens<R>(const Var<R>&);                                                      \
  template Var<R> from_tokens<R>(const Var<R>&, std::size_t, std::size_t);                          \
  template Var<R> broadcast_spatial<R>(const Var<R>&, std::size_t, std::size_t);

EXDIFF_INSTANTIATE(float)
EXDIFF_INSTANTIATE(double)
#undef EXDIFF_INSTANTIATE

}  // namespace exdiff::nnet
