#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace sdid {

struct ModelConfig {
  std::size_t in_channels = 1;
  std::size_t base_channels = 16;
  std::size_t num_scales = 2;
  std::size_t window = 4;
  std::size_t heads = 2;
  std::size_t mlp_ratio = 2;
  std::size_t style_dim = 64;
  std::size_t gen_input_dim = 16;
  std::size_t sc_blocks = 8;
  std::size_t sc_reduce_factor = 2;
  std::size_t gap_dim = 256;
  double eps = 1e-5;

  /// Channels at the bottleneck, C * 2^s.
  std::size_t encoded_channels() const { return base_channels << num_scales; }
  /// Input sides must be multiples of 2^s * M.
  std::size_t size_multiple() const { return window << num_scales; }
  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

struct TrainConfig {
  std::size_t batch = 4;
  std::size_t crop = 32;
  std::size_t steps = 3000;
  double lr_main = 2e-4;
  double lr_gen = 1e-5;
  double lr_min = 1e-6;
  double lambda1 = 0.1;
  double lambda2 = 0.3;
  double lambda_sty = 0.1;
  double grad_clip = 5.0;
  std::vector<double> sigmas{25.0};
  std::size_t checkpoint_every = 500;
  std::size_t log_every = 50;
  std::size_t val_samples = 32;

  void validate(const ModelConfig& model) const;
  bool operator==(const TrainConfig&) const = default;
};

struct DataConfig {
  std::size_t train_count = 2048;
  std::size_t val_count = 128;
  std::size_t train_size = 48;
  std::size_t val_size = 32;
  std::string kind = "mixed";

  void validate(const ModelConfig& model) const;
  bool operator==(const DataConfig&) const = default;
};

struct AnalysisConfig {
  std::vector<double> lambdas{0.0, 0.25, 0.5, 0.75, 1.0};
  std::size_t mix_pairs = 16;
  std::size_t style_images = 128;
  std::size_t feature_images = 1024;
  std::size_t bins = 64;

  void validate() const;
  bool operator==(const AnalysisConfig&) const = default;
};

/// Everything a command needs. Serialized as flat `key = value` lines with
/// `#` comments; unknown keys are rejected.
struct RunConfig {
  std::string preset = "desk";
  std::uint64_t seed = 1;
  ModelConfig model;
  TrainConfig train;
  DataConfig data;
  AnalysisConfig analysis;

  static RunConfig desk();
  static RunConfig paper();

  void validate() const;
  std::string render() const;
  /// Applies `key = value` lines on top of the preset named by a leading
  /// `preset` key (desk when absent).
  static RunConfig parse(const std::string& text);
  static RunConfig load(const std::string& path);
  /// Sets a single key; throws ConfigError naming the key if unknown or malformed.
  void set(const std::string& key, const std::string& value);
  static const std::vector<std::string>& keys();

  bool operator==(const RunConfig&) const = default;
};

}  // namespace sdid
