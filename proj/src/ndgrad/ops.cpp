#include "sdid/ndgrad/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>

namespace sdid::nd {

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using CMap = Eigen::Map<const RowMat<T>>;
template <typename T>
using MMap = Eigen::Map<RowMat<T>>;
template <typename T>
using CVec = Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>>;

void require(bool ok, const std::string& what) {
  if (!ok) throw DimensionError(what);
}

struct Broadcast {
  Shape out;
  // Iteration space: out with mergeable adjacent dims coalesced.
  Shape loop;
  std::vector<std::size_t> stride_a, stride_b;  // per loop dim, 0 where broadcast
  bool same = false;
};

Broadcast plan_broadcast(const Shape& a, const Shape& b, const char* op) {
  Broadcast bc;
  if (a == b) {
    bc.out = a;
    bc.same = true;
    return bc;
  }
  const std::size_t rank = std::max(a.size(), b.size());
  Shape pa(rank - a.size(), 1), pb(rank - b.size(), 1);
  pa.insert(pa.end(), a.begin(), a.end());
  pb.insert(pb.end(), b.begin(), b.end());
  bc.out.resize(rank);
  for (std::size_t i = 0; i < rank; ++i) {
    if (pa[i] == pb[i] || pb[i] == 1)
      bc.out[i] = pa[i];
    else if (pa[i] == 1)
      bc.out[i] = pb[i];
    else
      throw DimensionError(std::string(op) + ": cannot broadcast " + shape_str(a) + " with " + shape_str(b));
  }
  auto strides = [&](const Shape& p) {
    std::vector<std::size_t> s(rank, 0);
    std::size_t acc = 1;
    for (std::size_t i = rank; i-- > 0;) {
      s[i] = p[i] == 1 ? 0 : acc;
      acc *= p[i];
    }
    return s;
  };
  const auto sa = strides(pa), sb = strides(pb);
  bc.loop = {bc.out[0]};
  bc.stride_a = {sa[0]};
  bc.stride_b = {sb[0]};
  for (std::size_t i = 1; i < rank; ++i) {
    auto& la = bc.stride_a.back();
    auto& lb = bc.stride_b.back();
    if (la == sa[i] * bc.out[i] && lb == sb[i] * bc.out[i]) {
      bc.loop.back() *= bc.out[i];
      la = sa[i];
      lb = sb[i];
    } else {
      bc.loop.push_back(bc.out[i]);
      bc.stride_a.push_back(sa[i]);
      bc.stride_b.push_back(sb[i]);
    }
  }
  return bc;
}

// Calls fn(out_index, a_index, b_index) for every output element.
template <typename Fn>
void for_each_broadcast(const Broadcast& bc, Fn&& fn) {
  const std::size_t total = shape_numel(bc.out);
  if (bc.same) {
    for (std::size_t i = 0; i < total; ++i) fn(i, i, i);
    return;
  }
  const std::size_t rank = bc.loop.size();
  const std::size_t inner = bc.loop[rank - 1];
  const std::size_t sa = bc.stride_a[rank - 1], sb = bc.stride_b[rank - 1];
  std::vector<std::size_t> idx(rank, 0);
  std::size_t i = 0;
  while (i < total) {
    std::size_t oa = 0, ob = 0;
    for (std::size_t d = 0; d + 1 < rank; ++d) {
      oa += idx[d] * bc.stride_a[d];
      ob += idx[d] * bc.stride_b[d];
    }
    for (std::size_t j = 0; j < inner; ++j, ++i) fn(i, oa + j * sa, ob + j * sb);
    for (std::size_t d = rank - 1; d-- > 0;) {
      if (++idx[d] < bc.loop[d]) break;
      idx[d] = 0;
    }
  }
}

template <typename T, typename Fwd, typename Deriv>
Tensor<T> unary(const Tensor<T>& x, const char* name, Fwd fwd, Deriv deriv) {
  const auto& xd = x.values();
  Buffer<T> out(xd.size());
  for (std::size_t i = 0; i < xd.size(); ++i) out[i] = fwd(xd[i]);
  Node<T>* px = x.node().get();
  return make_result<T>(x.shape(), std::move(out), {&x}, name, [px, deriv](Node<T>& self) {
    auto& g = px->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * deriv(px->data[i], self.data[i]);
  });
}

}  // namespace

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  require(a.ndim() == 2 && b.ndim() == 2, "matmul expects 2-D operands, got " + shape_str(a.shape()) + " and " +
                                              shape_str(b.shape()));
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  require(b.dim(0) == k, "matmul inner dims differ: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  Buffer<T> out(m * n);
  MMap<T>(out.data(), m, n).noalias() = CMap<T>(a.data().data(), m, k) * CMap<T>(b.data().data(), k, n);
  Node<T>*pa = a.node().get(), *pb = b.node().get();
  return make_result<T>({m, n}, std::move(out), {&a, &b}, "matmul", [pa, pb, m, k, n](Node<T>& self) {
    CMap<T> dc(self.grad.data(), m, n);
    if (pa->requires_grad)
      MMap<T>(pa->ensure_grad().data(), m, k).noalias() += dc * CMap<T>(pb->data.data(), k, n).transpose();
    if (pb->requires_grad)
      MMap<T>(pb->ensure_grad().data(), k, n).noalias() += CMap<T>(pa->data.data(), m, k).transpose() * dc;
  });
}

template <typename T>
Tensor<T> bmm(const Tensor<T>& a, const Tensor<T>& b, bool transpose_b) {
  require(a.ndim() >= 3 && a.ndim() == b.ndim(), "bmm expects operands of equal rank >= 3, got " +
                                                     shape_str(a.shape()) + " and " + shape_str(b.shape()));
  const std::size_t r = a.ndim();
  for (std::size_t i = 0; i + 2 < r; ++i)
    if (a.dim(i) != b.dim(i))
      throw DimensionError("bmm batch dims differ: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  const std::size_t m = a.dim(r - 2), k = a.dim(r - 1);
  const std::size_t n = transpose_b ? b.dim(r - 2) : b.dim(r - 1);
  require((transpose_b ? b.dim(r - 1) : b.dim(r - 2)) == k,
          "bmm inner dims differ: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  const std::size_t batch = a.numel() / (m * k);
  Buffer<T> out(batch * m * n);
  const T* ad = a.data().data();
  const T* bd = b.data().data();
  for (std::size_t i = 0; i < batch; ++i) {
    CMap<T> am(ad + i * m * k, m, k);
    MMap<T> om(out.data() + i * m * n, m, n);
    if (transpose_b)
      om.noalias() = am * CMap<T>(bd + i * n * k, n, k).transpose();
    else
      om.noalias() = am * CMap<T>(bd + i * k * n, k, n);
  }
  Shape shape(a.shape().begin(), a.shape().end() - 2);
  shape.push_back(m);
  shape.push_back(n);
  Node<T>*pa = a.node().get(), *pb = b.node().get();
  return make_result<T>(
      std::move(shape), std::move(out), {&a, &b}, "bmm", [pa, pb, batch, m, k, n, transpose_b](Node<T>& self) {
        T* ga = pa->requires_grad ? pa->ensure_grad().data() : nullptr;
        T* gb = pb->requires_grad ? pb->ensure_grad().data() : nullptr;
        for (std::size_t i = 0; i < batch; ++i) {
          CMap<T> dc(self.grad.data() + i * m * n, m, n);
          CMap<T> am(pa->data.data() + i * m * k, m, k);
          if (transpose_b) {
            CMap<T> bm(pb->data.data() + i * n * k, n, k);
            if (ga) MMap<T>(ga + i * m * k, m, k).noalias() += dc * bm;
            if (gb) MMap<T>(gb + i * n * k, n, k).noalias() += dc.transpose() * am;
          } else {
            CMap<T> bm(pb->data.data() + i * k * n, k, n);
            if (ga) MMap<T>(ga + i * m * k, m, k).noalias() += dc * bm.transpose();
            if (gb) MMap<T>(gb + i * k * n, k, n).noalias() += am.transpose() * dc;
          }
        }
      });
}

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, OptTensor<T> bias) {
  require(w.ndim() == 2, "linear weight must be 2-D");
  require(x.ndim() >= 1 && x.shape().back() == w.dim(0),
          "linear: input " + shape_str(x.shape()) + " does not match weight " + shape_str(w.shape()));
  const std::size_t k = w.dim(0), n = w.dim(1), rows = x.numel() / k;
  if (bias) require(bias->ndim() == 1 && bias->dim(0) == n, "linear bias must have length " + std::to_string(n));
  Buffer<T> out(rows * n);
  MMap<T> om(out.data(), rows, n);
  om.noalias() = CMap<T>(x.data().data(), rows, k) * CMap<T>(w.data().data(), k, n);
  if (bias) om.rowwise() += CVec<T>(bias->data().data(), n).transpose();
  Shape shape = x.shape();
  shape.back() = n;
  Node<T>*px = x.node().get(), *pw = w.node().get();
  Node<T>* pbias = bias ? bias->node().get() : nullptr;
  return make_result<T>(std::move(shape), std::move(out), {&x, &w, bias}, "linear",
                        [px, pw, pbias, rows, k, n](Node<T>& self) {
                          CMap<T> dy(self.grad.data(), rows, n);
                          if (px->requires_grad)
                            MMap<T>(px->ensure_grad().data(), rows, k).noalias() +=
                                dy * CMap<T>(pw->data.data(), k, n).transpose();
                          if (pw->requires_grad)
                            MMap<T>(pw->ensure_grad().data(), k, n).noalias() +=
                                CMap<T>(px->data.data(), rows, k).transpose() * dy;
                          if (pbias && pbias->requires_grad)
                            MMap<T>(pbias->ensure_grad().data(), 1, n) += dy.colwise().sum();
                        });
}

namespace {

struct ConvGeom {
  std::size_t batch, cin, h, w, cout, k, stride, pad, ho, wo;
  bool pointwise() const { return k == 1 && stride == 1 && pad == 0; }
};

template <typename T>
void im2col(const T* x, const ConvGeom& g, T* col) {
  const std::size_t hw = g.ho * g.wo;
  for (std::size_t c = 0; c < g.cin; ++c)
    for (std::size_t ki = 0; ki < g.k; ++ki)
      for (std::size_t kj = 0; kj < g.k; ++kj) {
        T* row = col + ((c * g.k + ki) * g.k + kj) * hw;
        for (std::size_t oh = 0; oh < g.ho; ++oh) {
          const long ih = static_cast<long>(oh * g.stride + ki) - static_cast<long>(g.pad);
          T* dst = row + oh * g.wo;
          if (ih < 0 || ih >= static_cast<long>(g.h)) {
            std::fill(dst, dst + g.wo, T(0));
            continue;
          }
          const T* src = x + (c * g.h + static_cast<std::size_t>(ih)) * g.w;
          for (std::size_t ow = 0; ow < g.wo; ++ow) {
            const long iw = static_cast<long>(ow * g.stride + kj) - static_cast<long>(g.pad);
            dst[ow] = (iw < 0 || iw >= static_cast<long>(g.w)) ? T(0) : src[iw];
          }
        }
      }
}

template <typename T>
void col2im(const T* col, const ConvGeom& g, T* dx) {
  const std::size_t hw = g.ho * g.wo;
  for (std::size_t c = 0; c < g.cin; ++c)
    for (std::size_t ki = 0; ki < g.k; ++ki)
      for (std::size_t kj = 0; kj < g.k; ++kj) {
        const T* row = col + ((c * g.k + ki) * g.k + kj) * hw;
        for (std::size_t oh = 0; oh < g.ho; ++oh) {
          const long ih = static_cast<long>(oh * g.stride + ki) - static_cast<long>(g.pad);
          if (ih < 0 || ih >= static_cast<long>(g.h)) continue;
          T* dst = dx + (c * g.h + static_cast<std::size_t>(ih)) * g.w;
          const T* src = row + oh * g.wo;
          for (std::size_t ow = 0; ow < g.wo; ++ow) {
            const long iw = static_cast<long>(ow * g.stride + kj) - static_cast<long>(g.pad);
            if (iw >= 0 && iw < static_cast<long>(g.w)) dst[iw] += src[ow];
          }
        }
      }
}

}  // namespace

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, OptTensor<T> bias, std::size_t stride,
                 std::size_t pad) {
  require(x.ndim() == 4, "conv2d input must be [B,C,H,W], got " + shape_str(x.shape()));
  require(w.ndim() == 4 && w.dim(2) == w.dim(3), "conv2d weight must be [O,C,k,k], got " + shape_str(w.shape()));
  require(w.dim(1) == x.dim(1), "conv2d channel mismatch: input " + shape_str(x.shape()) + ", weight " +
                                    shape_str(w.shape()));
  require(stride >= 1, "conv2d stride must be positive");
  ConvGeom g{x.dim(0), x.dim(1), x.dim(2), x.dim(3), w.dim(0), w.dim(2), stride, pad, 0, 0};
  require(pad < g.k, "conv2d padding must be smaller than the kernel");
  require(g.h + 2 * pad >= g.k && g.w + 2 * pad >= g.k,
          "conv2d kernel larger than padded input " + shape_str(x.shape()));
  g.ho = (g.h + 2 * pad - g.k) / stride + 1;
  g.wo = (g.w + 2 * pad - g.k) / stride + 1;
  if (bias) require(bias->ndim() == 1 && bias->dim(0) == g.cout, "conv2d bias length mismatch");

  const std::size_t ckk = g.cin * g.k * g.k, hw = g.ho * g.wo;
  Buffer<T> out(g.batch * g.cout * hw);
  Buffer<T> col(g.pointwise() ? 0 : ckk * hw);
  CMap<T> wm(w.data().data(), g.cout, ckk);
  for (std::size_t b = 0; b < g.batch; ++b) {
    const T* xb = x.data().data() + b * g.cin * g.h * g.w;
    const T* src = xb;
    if (!g.pointwise()) {
      im2col(xb, g, col.data());
      src = col.data();
    }
    MMap<T> om(out.data() + b * g.cout * hw, g.cout, hw);
    om.noalias() = wm * CMap<T>(src, ckk, hw);
    if (bias) om.colwise() += CVec<T>(bias->data().data(), g.cout);
  }

  Node<T>*px = x.node().get(), *pw = w.node().get();
  Node<T>* pbias = bias ? bias->node().get() : nullptr;
  return make_result<T>({g.batch, g.cout, g.ho, g.wo}, std::move(out), {&x, &w, bias}, "conv2d",
                        [px, pw, pbias, g, ckk, hw](Node<T>& self) {
                          Buffer<T> col(g.pointwise() ? 0 : ckk * hw);
                          Buffer<T> dcol(px->requires_grad && !g.pointwise() ? ckk * hw : 0);
                          CMap<T> wm(pw->data.data(), g.cout, ckk);
                          for (std::size_t b = 0; b < g.batch; ++b) {
                            CMap<T> dy(self.grad.data() + b * g.cout * hw, g.cout, hw);
                            const T* xb = px->data.data() + b * g.cin * g.h * g.w;
                            if (pw->requires_grad) {
                              const T* src = xb;
                              if (!g.pointwise()) {
                                im2col(xb, g, col.data());
                                src = col.data();
                              }
                              MMap<T>(pw->ensure_grad().data(), g.cout, ckk).noalias() +=
                                  dy * CMap<T>(src, ckk, hw).transpose();
                            }
                            if (pbias && pbias->requires_grad)
                              Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>>(pbias->ensure_grad().data(), g.cout) +=
                                  dy.rowwise().sum();
                            if (px->requires_grad) {
                              T* dxb = px->ensure_grad().data() + b * g.cin * g.h * g.w;
                              if (g.pointwise()) {
                                MMap<T>(dxb, g.cin, hw).noalias() += wm.transpose() * dy;
                              } else {
                                MMap<T>(dcol.data(), ckk, hw).noalias() = wm.transpose() * dy;
                                col2im(dcol.data(), g, dxb);
                              }
                            }
                          }
                        });
}

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps) {
  require(eps > T(0), "layer_norm eps must be positive");
  const std::size_t d = x.shape().back();
  require(gamma.numel() == d && beta.numel() == d, "layer_norm affine params must have length " + std::to_string(d));
  const std::size_t rows = x.numel() / d;
  auto xhat = std::make_shared<Buffer<T>>(x.numel());
  auto rstd = std::make_shared<Buffer<T>>(rows);
  Buffer<T> out(x.numel());
  const T* xd = x.data().data();
  const T* gd = gamma.data().data();
  const T* bd = beta.data().data();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* row = xd + r * d;
    T mu = 0;
    for (std::size_t j = 0; j < d; ++j) mu += row[j];
    mu /= T(d);
    T var = 0;
    for (std::size_t j = 0; j < d; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= T(d);
    const T rs = T(1) / std::sqrt(var + eps);
    (*rstd)[r] = rs;
    for (std::size_t j = 0; j < d; ++j) {
      const T h = (row[j] - mu) * rs;
      (*xhat)[r * d + j] = h;
      out[r * d + j] = h * gd[j] + bd[j];
    }
  }
  Node<T>*px = x.node().get(), *pg = gamma.node().get(), *pb = beta.node().get();
  return make_result<T>(x.shape(), std::move(out), {&x, &gamma, &beta}, "layer_norm",
                        [px, pg, pb, xhat, rstd, rows, d](Node<T>& self) {
                          const T* dy = self.grad.data();
                          if (pg->requires_grad) {
                            auto& gg = pg->ensure_grad();
                            for (std::size_t i = 0; i < rows * d; ++i) gg[i % d] += dy[i] * (*xhat)[i];
                          }
                          if (pb->requires_grad) {
                            auto& gb = pb->ensure_grad();
                            for (std::size_t i = 0; i < rows * d; ++i) gb[i % d] += dy[i];
                          }
                          if (!px->requires_grad) return;
                          auto& gx = px->ensure_grad();
                          const T* gam = pg->data.data();
                          for (std::size_t r = 0; r < rows; ++r) {
                            T m1 = 0, m2 = 0;
                            for (std::size_t j = 0; j < d; ++j) {
                              const T dh = dy[r * d + j] * gam[j];
                              m1 += dh;
                              m2 += dh * (*xhat)[r * d + j];
                            }
                            m1 /= T(d);
                            m2 /= T(d);
                            for (std::size_t j = 0; j < d; ++j) {
                              const T dh = dy[r * d + j] * gam[j];
                              gx[r * d + j] += (*rstd)[r] * (dh - m1 - (*xhat)[r * d + j] * m2);
                            }
                          }
                        });
}

template <typename T>
Tensor<T> softmax_lastdim(const Tensor<T>& x) {
  const std::size_t d = x.shape().back(), rows = x.numel() / d;
  Buffer<T> out(x.numel());
  const T* xd = x.data().data();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* row = xd + r * d;
    T* o = out.data() + r * d;
    const T mx = *std::max_element(row, row + d);
    for (std::size_t j = 0; j < d; ++j) o[j] = row[j] - mx;
  }
  using Arr = Eigen::Array<T, Eigen::Dynamic, 1>;
  Eigen::Map<Arr> all(out.data(), static_cast<Eigen::Index>(out.size()));
  // below the smallest normal result exp is flushed to an exact zero, so
  // masked logits carry no weight at all
  const T cutoff = std::log(std::numeric_limits<T>::min());
  all = (all < cutoff).select(T(0), all.exp());
  for (std::size_t r = 0; r < rows; ++r) {
    T* o = out.data() + r * d;
    T s = 0;
    for (std::size_t j = 0; j < d; ++j) s += o[j];
    const T inv = T(1) / s;
    for (std::size_t j = 0; j < d; ++j) o[j] *= inv;
  }
  Node<T>* px = x.node().get();
  return make_result<T>(x.shape(), std::move(out), {&x}, "softmax", [px, rows, d](Node<T>& self) {
    auto& gx = px->ensure_grad();
    for (std::size_t r = 0; r < rows; ++r) {
      const T* y = self.data.data() + r * d;
      const T* dy = self.grad.data() + r * d;
      T dot = 0;
      for (std::size_t j = 0; j < d; ++j) dot += dy[j] * y[j];
      for (std::size_t j = 0; j < d; ++j) gx[r * d + j] += y[j] * (dy[j] - dot);
    }
  });
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  auto bc = plan_broadcast(a.shape(), b.shape(), "add");
  Buffer<T> out(shape_numel(bc.out));
  const T *ad = a.data().data(), *bd = b.data().data();
  for_each_broadcast(bc, [&](std::size_t i, std::size_t ia, std::size_t ib) { out[i] = ad[ia] + bd[ib]; });
  Node<T>*pa = a.node().get(), *pb = b.node().get();
  Shape shape = bc.out;
  return make_result<T>(std::move(shape), std::move(out), {&a, &b}, "add", [pa, pb, bc](Node<T>& self) {
    T* ga = pa->requires_grad ? pa->ensure_grad().data() : nullptr;
    T* gb = pb->requires_grad ? pb->ensure_grad().data() : nullptr;
    const T* dy = self.grad.data();
    for_each_broadcast(bc, [&](std::size_t i, std::size_t ia, std::size_t ib) {
      if (ga) ga[ia] += dy[i];
      if (gb) gb[ib] += dy[i];
    });
  });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  auto bc = plan_broadcast(a.shape(), b.shape(), "sub");
  Buffer<T> out(shape_numel(bc.out));
  const T *ad = a.data().data(), *bd = b.data().data();
  for_each_broadcast(bc, [&](std::size_t i, std::size_t ia, std::size_t ib) { out[i] = ad[ia] - bd[ib]; });
  Node<T>*pa = a.node().get(), *pb = b.node().get();
  Shape shape = bc.out;
  return make_result<T>(std::move(shape), std::move(out), {&a, &b}, "sub", [pa, pb, bc](Node<T>& self) {
    T* ga = pa->requires_grad ? pa->ensure_grad().data() : nullptr;
    T* gb = pb->requires_grad ? pb->ensure_grad().data() : nullptr;
    const T* dy = self.grad.data();
    for_each_broadcast(bc, [&](std::size_t i, std::size_t ia, std::size_t ib) {
      if (ga) ga[ia] += dy[i];
      if (gb) gb[ib] -= dy[i];
    });
  });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  auto bc = plan_broadcast(a.shape(), b.shape(), "mul");
  Buffer<T> out(shape_numel(bc.out));
  const T *ad = a.data().data(), *bd = b.data().data();
  for_each_broadcast(bc, [&](std::size_t i, std::size_t ia, std::size_t ib) { out[i] = ad[ia] * bd[ib]; });
  Node<T>*pa = a.node().get(), *pb = b.node().get();
  Shape shape = bc.out;
  return make_result<T>(std::move(shape), std::move(out), {&a, &b}, "mul", [pa, pb, bc](Node<T>& self) {
    T* ga = pa->requires_grad ? pa->ensure_grad().data() : nullptr;
    T* gb = pb->requires_grad ? pb->ensure_grad().data() : nullptr;
    const T* dy = self.grad.data();
    const T *ad = pa->data.data(), *bd = pb->data.data();
    for_each_broadcast(bc, [&](std::size_t i, std::size_t ia, std::size_t ib) {
      if (ga) ga[ia] += dy[i] * bd[ib];
      if (gb) gb[ib] += dy[i] * ad[ia];
    });
  });
}

template <typename T>
Tensor<T> affine_scalar(const Tensor<T>& x, T a, T b) {
  return unary<T>(x, "affine_scalar", [a, b](T v) { return a * v + b; }, [a](T, T) { return a; });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  return unary<T>(x, "relu", [](T v) { return v > T(0) ? v : T(0); },
                  [](T v, T) { return v > T(0) ? T(1) : T(0); });
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  return unary<T>(
      x, "sigmoid",
      [](T v) {
        if (v >= T(0)) return T(1) / (T(1) + std::exp(-v));
        const T e = std::exp(v);
        return e / (T(1) + e);
      },
      [](T, T y) { return y * (T(1) - y); });
}

template <typename T>
Tensor<T> gelu(const Tensor<T>& x) {
  using Arr = Eigen::Array<T, Eigen::Dynamic, 1>;
  constexpr T kC = T(0.044715);
  const T kS = std::sqrt(T(2) / std::numbers::pi_v<T>);
  const std::size_t n = x.numel();
  Eigen::Map<const Arr> v(x.data().data(), static_cast<Eigen::Index>(n));
  auto t = std::make_shared<Buffer<T>>(n);
  Eigen::Map<Arr> tm(t->data(), static_cast<Eigen::Index>(n));
  tm = (kS * (v + kC * v.cube())).tanh();
  Buffer<T> out(n);
  Eigen::Map<Arr>(out.data(), static_cast<Eigen::Index>(n)) = T(0.5) * v * (T(1) + tm);
  Node<T>* px = x.node().get();
  return make_result<T>(x.shape(), std::move(out), {&x}, "gelu", [px, t, kS, n](Node<T>& self) {
    const auto idx = static_cast<Eigen::Index>(n);
    Eigen::Map<const Arr> v(px->data.data(), idx), tm(t->data(), idx), g(self.grad.data(), idx);
    Eigen::Map<Arr>(px->ensure_grad().data(), idx) +=
        g * (T(0.5) * (T(1) + tm) + T(0.5) * v * (T(1) - tm.square()) * kS * (T(1) + T(3) * kC * v.square()));
  });
}

template <typename T>
Tensor<T> abs(const Tensor<T>& x) {
  return unary<T>(x, "abs", [](T v) { return std::abs(v); },
                  [](T v, T) { return v > T(0) ? T(1) : (v < T(0) ? T(-1) : T(0)); });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  T s = 0;
  for (T v : x.data()) s += v;
  Node<T>* px = x.node().get();
  return make_result<T>({1}, {s}, {&x}, "sum", [px](Node<T>& self) {
    auto& g = px->ensure_grad();
    for (auto& v : g) v += self.grad[0];
  });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
  T s = 0;
  for (T v : x.data()) s += v;
  const T n = T(x.numel());
  Node<T>* px = x.node().get();
  return make_result<T>({1}, {s / n}, {&x}, "mean", [px, n](Node<T>& self) {
    auto& g = px->ensure_grad();
    const T d = self.grad[0] / n;
    for (auto& v : g) v += d;
  });
}

template <typename T>
Tensor<T> l1_loss(const Tensor<T>& a, const Tensor<T>& b) {
  require(a.shape() == b.shape(), "l1_loss shape mismatch: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  return mean(abs(sub(a, b)));
}

template <typename T>
Tensor<T> avg_pool2(const Tensor<T>& x) {
  require(x.ndim() == 4, "avg_pool2 expects [B,C,H,W]");
  const std::size_t bc = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3);
  require(h % 2 == 0 && w % 2 == 0, "avg_pool2 needs even spatial dims, got " + shape_str(x.shape()));
  const std::size_t ho = h / 2, wo = w / 2;
  Buffer<T> out(bc * ho * wo);
  const T* xd = x.data().data();
  for (std::size_t p = 0; p < bc; ++p)
    for (std::size_t i = 0; i < ho; ++i)
      for (std::size_t j = 0; j < wo; ++j) {
        const T* s = xd + p * h * w + 2 * i * w + 2 * j;
        out[(p * ho + i) * wo + j] = T(0.25) * (s[0] + s[1] + s[w] + s[w + 1]);
      }
  Node<T>* px = x.node().get();
  return make_result<T>({x.dim(0), x.dim(1), ho, wo}, std::move(out), {&x}, "avg_pool2",
                        [px, bc, h, w, ho, wo](Node<T>& self) {
                          auto& g = px->ensure_grad();
                          for (std::size_t p = 0; p < bc; ++p)
                            for (std::size_t i = 0; i < ho; ++i)
                              for (std::size_t j = 0; j < wo; ++j) {
                                const T d = T(0.25) * self.grad[(p * ho + i) * wo + j];
                                T* s = g.data() + p * h * w + 2 * i * w + 2 * j;
                                s[0] += d;
                                s[1] += d;
                                s[w] += d;
                                s[w + 1] += d;
                              }
                        });
}

template <typename T>
Tensor<T> upsample_nearest2(const Tensor<T>& x) {
  require(x.ndim() == 4, "upsample_nearest2 expects [B,C,H,W]");
  const std::size_t bc = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::size_t ho = 2 * h, wo = 2 * w;
  Buffer<T> out(bc * ho * wo);
  const T* xd = x.data().data();
  for (std::size_t p = 0; p < bc; ++p)
    for (std::size_t i = 0; i < ho; ++i)
      for (std::size_t j = 0; j < wo; ++j) out[(p * ho + i) * wo + j] = xd[(p * h + i / 2) * w + j / 2];
  Node<T>* px = x.node().get();
  return make_result<T>({x.dim(0), x.dim(1), ho, wo}, std::move(out), {&x}, "upsample_nearest2",
                        [px, bc, h, w, ho, wo](Node<T>& self) {
                          auto& g = px->ensure_grad();
                          for (std::size_t p = 0; p < bc; ++p)
                            for (std::size_t i = 0; i < ho; ++i)
                              for (std::size_t j = 0; j < wo; ++j)
                                g[(p * h + i / 2) * w + j / 2] += self.grad[(p * ho + i) * wo + j];
                        });
}

template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& x) {
  require(x.ndim() == 4, "global_avg_pool expects [B,C,H,W]");
  const std::size_t bc = x.dim(0) * x.dim(1), hw = x.dim(2) * x.dim(3);
  Buffer<T> out(bc);
  const T* xd = x.data().data();
  for (std::size_t p = 0; p < bc; ++p) {
    T s = 0;
    for (std::size_t i = 0; i < hw; ++i) s += xd[p * hw + i];
    out[p] = s / T(hw);
  }
  Node<T>* px = x.node().get();
  return make_result<T>({x.dim(0), x.dim(1)}, std::move(out), {&x}, "global_avg_pool",
                        [px, bc, hw](Node<T>& self) {
                          auto& g = px->ensure_grad();
                          for (std::size_t p = 0; p < bc; ++p) {
                            const T d = self.grad[p] / T(hw);
                            for (std::size_t i = 0; i < hw; ++i) g[p * hw + i] += d;
                          }
                        });
}

template <typename T>
Tensor<T> gather(const Tensor<T>& x, Shape out_shape, IndexMap index) {
  require(index && index->size() == shape_numel(out_shape),
          "gather index length does not match output shape " + shape_str(out_shape));
  const std::size_t n = x.numel();
  Buffer<T> out(index->size());
  const T* xd = x.data().data();
  for (std::size_t i = 0; i < out.size(); ++i) {
    const std::size_t src = (*index)[i];
    if (src >= n) throw DimensionError("gather index out of range");
    out[i] = xd[src];
  }
  Node<T>* px = x.node().get();
  return make_result<T>(std::move(out_shape), std::move(out), {&x}, "gather", [px, index](Node<T>& self) {
    auto& g = px->ensure_grad();
    const auto& idx = *index;
    for (std::size_t i = 0; i < idx.size(); ++i) g[idx[i]] += self.grad[i];
  });
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  require(shape_numel(shape) == x.numel(), "reshape " + shape_str(x.shape()) + " -> " + shape_str(shape));
  Node<T>* px = x.node().get();
  return make_result<T>(std::move(shape), x.values(), {&x}, "reshape", [px](Node<T>& self) {
    auto& g = px->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

template <typename T>
Tensor<T> nchw_to_nhwc(const Tensor<T>& x) {
  require(x.ndim() == 4, "nchw_to_nhwc expects 4-D input");
  const std::size_t b = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  auto idx = std::make_shared<std::vector<std::size_t>>(x.numel());
  std::size_t o = 0;
  for (std::size_t n = 0; n < b; ++n)
    for (std::size_t i = 0; i < h * w; ++i)
      for (std::size_t ch = 0; ch < c; ++ch) (*idx)[o++] = (n * c + ch) * h * w + i;
  return gather(x, {b, h, w, c}, std::move(idx));
}

template <typename T>
Tensor<T> nhwc_to_nchw(const Tensor<T>& x) {
  require(x.ndim() == 4, "nhwc_to_nchw expects 4-D input");
  const std::size_t b = x.dim(0), h = x.dim(1), w = x.dim(2), c = x.dim(3);
  auto idx = std::make_shared<std::vector<std::size_t>>(x.numel());
  std::size_t o = 0;
  for (std::size_t n = 0; n < b; ++n)
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t i = 0; i < h * w; ++i) (*idx)[o++] = (n * h * w + i) * c + ch;
  return gather(x, {b, c, h, w}, std::move(idx));
}

template <typename T>
Tensor<T> slice_lastdim(const Tensor<T>& x, std::size_t lo, std::size_t hi) {
  const std::size_t d = x.shape().back();
  require(lo < hi && hi <= d, "slice_lastdim range out of bounds");
  const std::size_t rows = x.numel() / d, width = hi - lo;
  auto idx = std::make_shared<std::vector<std::size_t>>(rows * width);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < width; ++j) (*idx)[r * width + j] = r * d + lo + j;
  Shape shape = x.shape();
  shape.back() = width;
  return gather(x, std::move(shape), std::move(idx));
}

template <typename T>
Tensor<T> adain(const Tensor<T>& e, const Tensor<T>& scale, const Tensor<T>& shift, T eps) {
  require(e.ndim() == 4, "adain expects features [B,C,h,w], got " + shape_str(e.shape()));
  require(eps > T(0), "adain eps must be positive");
  const std::size_t batch = e.dim(0), ch = e.dim(1), hw = e.dim(2) * e.dim(3);
  auto style_ok = [&](const Tensor<T>& s) {
    return (s.ndim() == 1 && s.dim(0) == ch) || (s.ndim() == 2 && s.dim(0) == batch && s.dim(1) == ch);
  };
  require(style_ok(scale) && style_ok(shift),
          "adain scale/shift must be [C] or [B,C] for features " + shape_str(e.shape()));
  const bool per_sample_scale = scale.ndim() == 2, per_sample_shift = shift.ndim() == 2;
  auto xhat = std::make_shared<Buffer<T>>(e.numel());
  auto rstd = std::make_shared<Buffer<T>>(batch * ch);
  Buffer<T> out(e.numel());
  const T* ed = e.data().data();
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t c = 0; c < ch; ++c) {
      const std::size_t p = b * ch + c;
      const T* row = ed + p * hw;
      T mu = 0;
      for (std::size_t i = 0; i < hw; ++i) mu += row[i];
      mu /= T(hw);
      T var = 0;
      for (std::size_t i = 0; i < hw; ++i) var += (row[i] - mu) * (row[i] - mu);
      var /= T(hw);
      const T rs = T(1) / std::sqrt(var + eps);
      (*rstd)[p] = rs;
      const T s = scale.data()[per_sample_scale ? p : c];
      const T t = shift.data()[per_sample_shift ? p : c];
      for (std::size_t i = 0; i < hw; ++i) {
        const T h = (row[i] - mu) * rs;
        (*xhat)[p * hw + i] = h;
        out[p * hw + i] = s * h + t;
      }
    }
  Node<T>*pe = e.node().get(), *ps = scale.node().get(), *pt = shift.node().get();
  return make_result<T>(
      e.shape(), std::move(out), {&e, &scale, &shift}, "adain",
      [pe, ps, pt, xhat, rstd, batch, ch, hw, per_sample_scale, per_sample_shift](Node<T>& self) {
        const T* dy = self.grad.data();
        T* gs = ps->requires_grad ? ps->ensure_grad().data() : nullptr;
        T* gt = pt->requires_grad ? pt->ensure_grad().data() : nullptr;
        T* ge = pe->requires_grad ? pe->ensure_grad().data() : nullptr;
        for (std::size_t b = 0; b < batch; ++b)
          for (std::size_t c = 0; c < ch; ++c) {
            const std::size_t p = b * ch + c;
            const T s = ps->data[per_sample_scale ? p : c];
            T sum_dy = 0, sum_dyh = 0;
            for (std::size_t i = 0; i < hw; ++i) {
              sum_dy += dy[p * hw + i];
              sum_dyh += dy[p * hw + i] * (*xhat)[p * hw + i];
            }
            if (gs) gs[per_sample_scale ? p : c] += sum_dyh;
            if (gt) gt[per_sample_shift ? p : c] += sum_dy;
            if (ge) {
              const T m1 = s * sum_dy / T(hw), m2 = s * sum_dyh / T(hw);
              for (std::size_t i = 0; i < hw; ++i)
                ge[p * hw + i] += (*rstd)[p] * (s * dy[p * hw + i] - m1 - (*xhat)[p * hw + i] * m2);
            }
          }
      });
}

#define SDID_INSTANTIATE_OPS(T)                                                                  \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                                 \
  template Tensor<T> bmm(const Tensor<T>&, const Tensor<T>&, bool);                              \
  template Tensor<T> linear(const Tensor<T>&, const Tensor<T>&, const Tensor<T>*);               \
  template Tensor<T> conv2d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>*, std::size_t,   \
                            std::size_t);                                                        \
  template Tensor<T> layer_norm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, T);        \
  template Tensor<T> softmax_lastdim(const Tensor<T>&);                                          \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                    \
  template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                                    \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                                    \
  template Tensor<T> affine_scalar(const Tensor<T>&, T, T);                                      \
  template Tensor<T> relu(const Tensor<T>&);                                                     \
  template Tensor<T> sigmoid(const Tensor<T>&);                                                  \
  template Tensor<T> gelu(const Tensor<T>&);                                                     \
  template Tensor<T> abs(const Tensor<T>&);                                                      \
  template Tensor<T> sum(const Tensor<T>&);                                                      \
  template Tensor<T> mean(const Tensor<T>&);                                                     \
  template Tensor<T> l1_loss(const Tensor<T>&, const Tensor<T>&);                                \
  template Tensor<T> avg_pool2(const Tensor<T>&);                                                \
  template Tensor<T> upsample_nearest2(const Tensor<T>&);                                        \
  template Tensor<T> global_avg_pool(const Tensor<T>&);                                          \
  template Tensor<T> gather(const Tensor<T>&, Shape, IndexMap);                                  \
  template Tensor<T> reshape(const Tensor<T>&, Shape);                                           \
  template Tensor<T> nchw_to_nhwc(const Tensor<T>&);                                             \
  template Tensor<T> nhwc_to_nchw(const Tensor<T>&);                                             \
  template Tensor<T> slice_lastdim(const Tensor<T>&, std::size_t, std::size_t);                  \
  template Tensor<T> adain(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, T);

SDID_INSTANTIATE_OPS(float)
SDID_INSTANTIATE_OPS(double)
SDID_INSTANTIATE_OPS(long double)

}  // namespace sdid::nd
