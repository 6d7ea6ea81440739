#pragma once

#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "sdid/config.hpp"
#include "sdid/errors.hpp"
#include "sdid/ndgrad/rng.hpp"

namespace sdid::data {

/// Float image, CHW row-major. Values are nominally in [0,1] but noisy
/// images are not clipped.
struct Image {
  std::size_t channels = 0, height = 0, width = 0;
  std::vector<float> pixels;

  Image() = default;
  Image(std::size_t c, std::size_t h, std::size_t w, float fill = 0.0f)
      : channels(c), height(h), width(w), pixels(c * h * w, fill) {}

  float& at(std::size_t c, std::size_t y, std::size_t x) { return pixels[(c * height + y) * width + x]; }
  float at(std::size_t c, std::size_t y, std::size_t x) const { return pixels[(c * height + y) * width + x]; }
  std::size_t size() const { return pixels.size(); }
  bool operator==(const Image&) const = default;
};

struct TrainSample {
  Image clean, noisy;
  float sigma = 0.0f;  // 0..1 scale, i.e. sigma_255 / 255
  std::uint64_t seed = 0;
  bool operator==(const TrainSample&) const = default;
};

enum class ImageKind { gradient, shapes, sinusoid, mixed };

ImageKind parse_image_kind(const std::string& name);

/// Procedural clean image in [0,1]; a pure function of its arguments.
Image gen_clean_image(std::uint64_t seed, ImageKind kind, std::size_t size, std::size_t channels = 1);

/// clean + N(0, (sigma_255/255)^2) per pixel, unclipped.
Image add_awgn(const Image& clean, double sigma_255, nd::Rng& rng);

Image crop_patch(const Image& img, std::size_t top, std::size_t left, std::size_t size);

/// Builds one sample: clean image from the seed, noise from a derived stream.
TrainSample make_sample(std::uint64_t sample_seed, ImageKind kind, std::size_t size, std::size_t channels,
                        double sigma_255);

/// Sample seeds for the two splits occupy disjoint ranges below and above
/// 2^31 inside the run seed's 2^32 block.
std::uint64_t train_sample_seed(std::uint64_t run_seed, std::size_t index);
std::uint64_t val_sample_seed(std::uint64_t run_seed, std::size_t index);

/// Sigma for a sample, chosen from the configured list by the sample seed.
double pick_sigma(std::uint64_t sample_seed, const std::vector<double>& sigmas);

struct ArchiveHeader {
  std::uint32_t version = 1;
  std::uint64_t count = 0;
  std::uint32_t channels = 0, height = 0, width = 0;
};

/// Streams samples into an archive: "SDAT" u32 version u64 count u32 C,H,W,
/// then per sample u64 seed, f32 sigma, clean and noisy f32 CHW payloads.
class ArchiveWriter {
 public:
  ArchiveWriter(const std::string& path, std::size_t channels, std::size_t height, std::size_t width);
  void write(const TrainSample& sample);
  /// Patches the sample count into the header and closes the file.
  void close();
  ~ArchiveWriter();

 private:
  std::string path_, tmp_;
  std::ofstream out_;
  ArchiveHeader header_;
  bool closed_ = false;
};

/// Streaming reader; only one sample is held in memory at a time.
class ArchiveReader {
 public:
  explicit ArchiveReader(const std::string& path);
  const ArchiveHeader& header() const { return header_; }
  /// Returns false after the last sample.
  bool next(TrainSample& sample);

 private:
  std::string path_;
  std::ifstream in_;
  ArchiveHeader header_;
  std::uint64_t read_ = 0;
};

void write_archive(const std::string& path, const std::vector<TrainSample>& samples);
std::vector<TrainSample> read_archive(const std::string& path);

/// Binary PGM (1 channel) or PPM (3 channels), 8-bit; values are clamped to
/// [0,1] and rounded to nearest.
void write_pnm(const std::string& path, const Image& img);
Image read_pnm(const std::string& path);

/// Generates the train and validation archives for a run config into `dir`
/// (train.sdat, val.sdat). Returns the two sample counts.
std::pair<std::size_t, std::size_t> build_dataset(const RunConfig& cfg, const std::string& dir);

}  // namespace sdid::data
