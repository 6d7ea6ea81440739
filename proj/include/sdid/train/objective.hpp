#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "sdid/config.hpp"
#include "sdid/data/synth.hpp"
#include "sdid/net/model.hpp"

namespace sdid::train {

using nd::Tensor;

struct LossWeights {
  double lambda1 = 0.1;
  double lambda2 = 0.3;
  double lambda_sty = 0.1;

  static LossWeights from(const TrainConfig& cfg) { return {cfg.lambda1, cfg.lambda2, cfg.lambda_sty}; }
  void validate() const;
};

/// Everything the losses look at from one training forward pass.
template <typename T>
struct BranchOutputs {
  Tensor<T> rec_x;         // dec(enc(x))
  Tensor<T> rec_y;         // dec(enc(y))
  Tensor<T> with_noise;    // dec(sc(enc(x), s_noise)), target x
  Tensor<T> with_clean;    // dec(sc(enc(x), s_noise_free)), target y
  Tensor<T> with_sampled;  // dec(sc(enc(x), s_gen)), target y; also x_trg
  Tensor<T> s_gen;
  Tensor<T> s_noise_free;
  Tensor<T> s_trg;  // ext(x_trg)
};

/// Runs all five branches on noisy x and clean y; z feeds the generator.
template <typename T>
BranchOutputs<T> run_branches(const net::Model<T>& model, const Tensor<T>& x, const Tensor<T>& y, const Tensor<T>& z);

template <typename T>
struct RecLoss {
  Tensor<T> total;
  std::array<Tensor<T>, 5> terms;  // unweighted L1, in BranchOutputs order
};

template <typename T>
RecLoss<T> reconstruction_loss(const BranchOutputs<T>& out, const Tensor<T>& x, const Tensor<T>& y,
                               const LossWeights& w);

template <typename T>
struct StyleLoss {
  Tensor<T> total;
  Tensor<T> cycle;    // |s_gen - ext(x_trg)|
  Tensor<T> to_clean; // |s_gen - s_noise_free|
};

template <typename T>
StyleLoss<T> style_regression_loss(const BranchOutputs<T>& out);

/// rec + lambda_sty * sty.
template <typename T>
Tensor<T> combine_losses(const Tensor<T>& rec, const Tensor<T>& sty, const LossWeights& w);

template <typename T>
struct FullLoss {
  Tensor<T> total;
  RecLoss<T> rec;
  StyleLoss<T> sty;
};

template <typename T>
FullLoss<T> full_loss(const BranchOutputs<T>& out, const Tensor<T>& x, const Tensor<T>& y, const LossWeights& w);

/// Adam with bias correction over a fixed list of parameters.
template <typename T>
class Adam {
 public:
  struct Slot {
    std::string name;
    Tensor<T> param;
    std::vector<T> m1, m2;
  };

  Adam(std::vector<typename nd::ParamStore<T>::Entry> params, double beta1 = 0.9, double beta2 = 0.999,
       double eps = 1e-8);

  /// One update from the current gradients; a parameter without a gradient
  /// is treated as having a zero gradient.
  void step(double lr);

  std::uint64_t steps() const { return steps_; }
  void set_steps(std::uint64_t n) { steps_ = n; }
  std::vector<Slot>& slots() { return slots_; }
  const std::vector<Slot>& slots() const { return slots_; }

 private:
  std::vector<Slot> slots_;
  double beta1_, beta2_, eps_;
  std::uint64_t steps_ = 0;
};

/// lr_min + (lr_max - lr_min)(1 + cos(pi step / total)) / 2, held at lr_min past the end.
double cosine_lr(std::size_t step, std::size_t total, double lr_max, double lr_min);

/// Scales all gradients so their joint L2 norm is at most max_norm. Returns
/// the norm before clipping.
template <typename T>
double clip_grad_norm(nd::ParamStore<T>& params, double max_norm);

/// Dihedral transform of a square image: bit 0 flips left-right, bits 1-2
/// count quarter turns applied after the flip.
data::Image augment(const data::Image& img, unsigned code);
data::TrainSample augment(const data::TrainSample& s, unsigned code);
unsigned inverse_code(unsigned code);

}  // namespace sdid::train
