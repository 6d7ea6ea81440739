#include "sdid/train/objective.hpp"

#include <cmath>
#include <numbers>

namespace sdid::train {

using net::StyleKind;

void LossWeights::validate() const {
  if (!(lambda1 >= 0) || !(lambda2 >= 0) || !(lambda_sty >= 0)) throw ConfigError("loss weights must be non-negative");
}

template <typename T>
BranchOutputs<T> run_branches(const net::Model<T>& model, const Tensor<T>& x, const Tensor<T>& y, const Tensor<T>& z) {
  if (x.shape() != y.shape())
    throw DimensionError("noisy " + nd::shape_str(x.shape()) + " and clean " + nd::shape_str(y.shape()) +
                         " batches differ");
  if (z.ndim() != 2 || z.dim(0) != x.dim(0)) throw DimensionError("generator input must be [B, gen_input_dim]");
  BranchOutputs<T> out;
  const auto fx = model.encode(x);
  out.rec_x = model.decode(fx);
  out.rec_y = model.decode(model.encode(y));
  const auto s_noise = model.extract_style(x, StyleKind::noise);
  const auto s_clean = model.extract_style(y, StyleKind::noise_free);
  const auto s_gen = model.generate_style(z);
  out.with_noise = model.decode(model.style_convert(fx, s_noise));
  out.with_clean = model.decode(model.style_convert(fx, s_clean));
  out.with_sampled = model.decode(model.style_convert(fx, s_gen));
  out.s_gen = s_gen.values;
  out.s_noise_free = s_clean.values;
  out.s_trg = model.extract_style(out.with_sampled, StyleKind::sampled).values;
  return out;
}

template <typename T>
RecLoss<T> reconstruction_loss(const BranchOutputs<T>& out, const Tensor<T>& x, const Tensor<T>& y,
                               const LossWeights& w) {
  w.validate();
  if (x.shape() != y.shape()) throw DimensionError("reconstruction_loss: x and y shapes differ");
  RecLoss<T> r;
  r.terms = {nd::l1_loss(out.rec_x, x), nd::l1_loss(out.rec_y, y), nd::l1_loss(out.with_noise, x),
             nd::l1_loss(out.with_clean, y), nd::l1_loss(out.with_sampled, y)};
  const auto first = nd::add(nd::add(r.terms[0], r.terms[1]), r.terms[2]);
  const auto second = nd::add(r.terms[3], r.terms[4]);
  r.total = nd::add(nd::scale(first, T(w.lambda1)), nd::scale(second, T(w.lambda2)));
  return r;
}

template <typename T>
StyleLoss<T> style_regression_loss(const BranchOutputs<T>& out) {
  StyleLoss<T> s;
  s.cycle = nd::l1_loss(out.s_gen, out.s_trg);
  s.to_clean = nd::l1_loss(out.s_gen, out.s_noise_free);
  s.total = nd::add(s.cycle, s.to_clean);
  return s;
}

template <typename T>
Tensor<T> combine_losses(const Tensor<T>& rec, const Tensor<T>& sty, const LossWeights& w) {
  w.validate();
  return nd::add(rec, nd::scale(sty, T(w.lambda_sty)));
}

template <typename T>
FullLoss<T> full_loss(const BranchOutputs<T>& out, const Tensor<T>& x, const Tensor<T>& y, const LossWeights& w) {
  FullLoss<T> f;
  f.rec = reconstruction_loss(out, x, y, w);
  f.sty = style_regression_loss(out);
  f.total = combine_losses(f.rec.total, f.sty.total, w);
  return f;
}

template <typename T>
Adam<T>::Adam(std::vector<typename nd::ParamStore<T>::Entry> params, double beta1, double beta2, double eps)
    : beta1_(beta1), beta2_(beta2), eps_(eps) {
  for (auto& e : params) {
    const auto n = e.tensor.numel();
    slots_.push_back({e.name, e.tensor, std::vector<T>(n, T(0)), std::vector<T>(n, T(0))});
  }
}

template <typename T>
void Adam<T>::step(double lr) {
  ++steps_;
  const double c1 = 1.0 - std::pow(beta1_, double(steps_));
  const double c2 = 1.0 - std::pow(beta2_, double(steps_));
  const T b1 = T(beta1_), b2 = T(beta2_);
  for (auto& s : slots_) {
    auto p = s.param.data();
    if (s.m1.size() != p.size() || s.m2.size() != p.size())
      throw DimensionError("optimizer state for '" + s.name + "' does not match the parameter");
    const auto g = s.param.grad();
    const bool has = !g.empty();
    for (std::size_t i = 0; i < p.size(); ++i) {
      const T gi = has ? g[i] : T(0);
      s.m1[i] = b1 * s.m1[i] + (T(1) - b1) * gi;
      s.m2[i] = b2 * s.m2[i] + (T(1) - b2) * gi * gi;
      const double mh = double(s.m1[i]) / c1, vh = double(s.m2[i]) / c2;
      p[i] = T(double(p[i]) - lr * mh / (std::sqrt(vh) + eps_));
    }
  }
}

double cosine_lr(std::size_t step, std::size_t total, double lr_max, double lr_min) {
  if (total == 0 || step >= total) return total == 0 ? lr_max : lr_min;
  return lr_min + 0.5 * (lr_max - lr_min) * (1.0 + std::cos(std::numbers::pi * double(step) / double(total)));
}

template <typename T>
double clip_grad_norm(nd::ParamStore<T>& params, double max_norm) {
  double sq = 0;
  for (const auto& e : params.entries())
    for (T g : e.tensor.grad()) sq += double(g) * double(g);
  const double norm = std::sqrt(sq);
  if (max_norm > 0 && norm > max_norm) {
    const T f = T(max_norm / norm);
    for (auto& e : params.entries())
      for (T& g : e.tensor.grad_mut()) g *= f;
  }
  return norm;
}

data::Image augment(const data::Image& img, unsigned code) {
  if (code > 7) throw ConfigError("augment code must be in 0..7");
  if (img.height != img.width) throw DimensionError("augment needs a square image");
  const std::size_t n = img.width;
  data::Image cur = img;
  if (code & 1)
    for (std::size_t c = 0; c < img.channels; ++c)
      for (std::size_t y = 0; y < n; ++y)
        for (std::size_t x = 0; x < n; ++x) cur.at(c, y, x) = img.at(c, y, n - 1 - x);
  for (unsigned k = 0; k < (code >> 1); ++k) {
    data::Image next(img.channels, n, n);
    for (std::size_t c = 0; c < img.channels; ++c)
      for (std::size_t y = 0; y < n; ++y)
        for (std::size_t x = 0; x < n; ++x) next.at(c, y, x) = cur.at(c, x, n - 1 - y);
    cur = std::move(next);
  }
  return cur;
}

data::TrainSample augment(const data::TrainSample& s, unsigned code) {
  data::TrainSample out = s;
  out.clean = augment(s.clean, code);
  out.noisy = augment(s.noisy, code);
  return out;
}

unsigned inverse_code(unsigned code) {
  if (code > 7) throw ConfigError("augment code must be in 0..7");
  // a flip followed by any rotation is a reflection, hence an involution
  if (code & 1) return code;
  return ((4 - (code >> 1)) % 4) << 1;
}

#define SDID_INSTANTIATE(T)                                                                                          \
  template BranchOutputs<T> run_branches(const net::Model<T>&, const Tensor<T>&, const Tensor<T>&, const Tensor<T>&); \
  template RecLoss<T> reconstruction_loss(const BranchOutputs<T>&, const Tensor<T>&, const Tensor<T>&,               \
                                          const LossWeights&);                                                       \
  template StyleLoss<T> style_regression_loss(const BranchOutputs<T>&);                                              \
  template Tensor<T> combine_losses(const Tensor<T>&, const Tensor<T>&, const LossWeights&);                         \
  template FullLoss<T> full_loss(const BranchOutputs<T>&, const Tensor<T>&, const Tensor<T>&, const LossWeights&);   \
  template class Adam<T>;                                                                                            \
  template double clip_grad_norm(nd::ParamStore<T>&, double);

SDID_INSTANTIATE(float)
SDID_INSTANTIATE(double)

template BranchOutputs<long double> run_branches(const net::Model<long double>&, const Tensor<long double>&,
                                                 const Tensor<long double>&, const Tensor<long double>&);
template FullLoss<long double> full_loss(const BranchOutputs<long double>&, const Tensor<long double>&,
                                         const Tensor<long double>&, const LossWeights&);

}  // namespace sdid::train
