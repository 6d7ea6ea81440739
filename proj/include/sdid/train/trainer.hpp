#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "sdid/net/checkpoint.hpp"
#include "sdid/train/objective.hpp"

namespace sdid::train {

using Samples = std::shared_ptr<const std::vector<data::TrainSample>>;

struct StepMetrics {
  std::size_t step = 0;  // steps completed after this one
  double lr_main = 0, lr_gen = 0;
  double loss_full = 0, loss_rec = 0, loss_sty = 0;
  double grad_norm = 0;
  std::optional<double> psnr_val;
};

/// Model init seed for a run.
std::uint64_t init_seed(const RunConfig& cfg);

/// Rebuilds a model from a checkpoint's embedded config and parameters.
template <typename T>
net::Model<T> model_from_checkpoint(const net::Checkpoint& ckpt, RunConfig* cfg_out = nullptr);

/// Sampled-style z for evaluation: fixed per (run seed, batch index).
template <typename T>
Tensor<T> eval_noise(const RunConfig& cfg, std::size_t batch, std::uint64_t index);

/// Mean PSNR of sampled-style denoising over the first `count` samples.
double validation_psnr(const net::Model<float>& model, const RunConfig& cfg, const std::vector<data::TrainSample>& val,
                       std::size_t count);

/// Float32 training loop. All per-step randomness is a function of
/// (seed, step), so a run resumed from a checkpoint continues bit-exactly.
class Trainer {
 public:
  /// Fresh run. If out_dir is non-empty, writes metrics.csv and checkpoints there.
  Trainer(const RunConfig& cfg, Samples train, Samples val, std::string out_dir);
  /// Continues from a checkpoint written by save_checkpoint.
  static Trainer resume(const std::string& checkpoint, Samples train, Samples val, std::string out_dir);

  /// Runs until `until` steps are complete (capped at the configured total).
  /// Checkpoints every checkpoint_every steps and at the end.
  void run(std::optional<std::size_t> until = std::nullopt);
  StepMetrics step();

  void save_checkpoint(const std::string& path) const;
  /// Path of the most recent checkpoint written by run(), empty if none.
  const std::string& last_checkpoint() const { return last_checkpoint_; }

  std::size_t steps_done() const { return step_; }
  const RunConfig& config() const { return cfg_; }
  net::Model<float>& model() { return model_; }
  const net::Model<float>& model() const { return model_; }
  const std::vector<StepMetrics>& history() const { return history_; }

  std::function<void(const StepMetrics&)> on_log;

 private:
  Trainer(const RunConfig& cfg, net::Model<float> model, Samples train, Samples val, std::string out_dir);
  void log(StepMetrics m);
  void checkpoint_now();

  RunConfig cfg_;
  net::Model<float> model_;
  Samples train_, val_;
  std::string out_dir_;
  Adam<float> main_opt_, gen_opt_;
  std::size_t step_ = 0;
  std::string last_checkpoint_;
  std::vector<StepMetrics> history_;
};

}  // namespace sdid::train
