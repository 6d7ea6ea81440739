#include <cmath>
#include <filesystem>
#include <fstream>
#include <unistd.h>

#include "doctest.h"
#include "sdid/data/synth.hpp"

using namespace sdid;
using namespace sdid::data;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
  auto p = fs::temp_directory_path() / ("sdid_test_" + name + "_" + std::to_string(::getpid()));
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

double max_gradient(const Image& img) {
  double g = 0;
  for (std::size_t c = 0; c < img.channels; ++c)
    for (std::size_t y = 0; y < img.height; ++y)
      for (std::size_t x = 0; x < img.width; ++x) {
        if (x + 1 < img.width) g = std::max(g, double(std::abs(img.at(c, y, x + 1) - img.at(c, y, x))));
        if (y + 1 < img.height) g = std::max(g, double(std::abs(img.at(c, y + 1, x) - img.at(c, y, x))));
      }
  return g;
}

}  // namespace

TEST_CASE("synth: clean images are deterministic and inside [0,1]") {
  for (auto kind : {ImageKind::gradient, ImageKind::shapes, ImageKind::sinusoid, ImageKind::mixed})
    for (std::uint64_t seed = 0; seed < 20; ++seed)
      for (std::size_t c : {1u, 3u}) {
        const auto a = gen_clean_image(seed, kind, 32, c);
        CHECK(a == gen_clean_image(seed, kind, 32, c));
        for (float v : a.pixels) {
          REQUIRE(v >= 0.0f);
          REQUIRE(v <= 1.0f);
        }
      }
  CHECK_FALSE(gen_clean_image(1, ImageKind::mixed, 32) == gen_clean_image(2, ImageKind::mixed, 32));
  CHECK_THROWS_AS(parse_image_kind("plaid"), ConfigError);
}

TEST_CASE("synth: shape images contain at least one sharp edge") {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    CHECK(max_gradient(gen_clean_image(seed, ImageKind::shapes, 32)) >= 0.2);
    CHECK(max_gradient(gen_clean_image(seed, ImageKind::mixed, 32)) >= 0.2);
  }
}

TEST_CASE("synth: awgn at sigma 25 has the right spread and no bias") {
  const Image clean(1, 64, 64, 0.5f);
  nd::Rng rng(7);
  const auto noisy = add_awgn(clean, 25.0, rng);
  double mean = 0, sq = 0;
  for (std::size_t i = 0; i < noisy.size(); ++i) {
    const double d = noisy.pixels[i] - clean.pixels[i];
    mean += d;
    sq += d * d;
  }
  const double n = double(noisy.size());
  mean /= n;
  const double sd = std::sqrt(sq / n - mean * mean);
  CHECK(sd >= 0.092);
  CHECK(sd <= 0.104);
  // four standard errors of the sample mean
  CHECK(std::abs(mean) <= 4 * (25.0 / 255.0) / std::sqrt(n));

  nd::Rng r0(1);
  CHECK(add_awgn(clean, 0.0, r0) == clean);
  CHECK_THROWS_AS(add_awgn(clean, -1.0, r0), ConfigError);
}

TEST_CASE("synth: crop of a ramp picks the expected window") {
  Image ramp(1, 4, 4);
  for (std::size_t i = 0; i < 16; ++i) ramp.pixels[i] = float(i);
  const auto c = crop_patch(ramp, 1, 2, 2);
  CHECK(c.pixels == std::vector<float>{6, 7, 10, 11});
  CHECK_THROWS_AS(crop_patch(ramp, 3, 0, 2), DimensionError);
  CHECK_THROWS_AS(crop_patch(ramp, 0, 0, 0), DimensionError);
}

TEST_CASE("synth: sample seeds split train and val, sigma comes from the list") {
  CHECK(train_sample_seed(3, 5) == (3ULL << 32) + 5);
  CHECK(val_sample_seed(3, 5) == (3ULL << 32) + (1ULL << 31) + 5);
  const std::vector<double> sigmas{15, 25, 50};
  std::size_t hits[3] = {0, 0, 0};
  for (std::size_t i = 0; i < 300; ++i) {
    const double s = pick_sigma(train_sample_seed(1, i), sigmas);
    for (std::size_t k = 0; k < 3; ++k) hits[k] += s == sigmas[k];
  }
  CHECK(hits[0] + hits[1] + hits[2] == 300);
  for (auto h : hits) CHECK(h > 50);
  CHECK_THROWS_AS(pick_sigma(1, {}), ConfigError);

  const auto s = make_sample(42, ImageKind::mixed, 16, 1, 25.0);
  CHECK(s.sigma == doctest::Approx(25.0 / 255.0));
  CHECK(s == make_sample(42, ImageKind::mixed, 16, 1, 25.0));
  CHECK_FALSE(s.clean == s.noisy);
}

TEST_CASE("synth: archive roundtrip is bit-exact and compact") {
  const auto dir = scratch_dir("archive");
  std::vector<TrainSample> samples;
  for (std::size_t i = 0; i < 100; ++i) samples.push_back(make_sample(i, ImageKind::mixed, 32, 1, 25.0));
  const auto path = (dir / "a.sdat").string();
  write_archive(path, samples);
  CHECK(read_archive(path) == samples);
  CHECK_FALSE(fs::exists(path + ".tmp"));
  // two float planes per sample plus small fixed overhead
  CHECK(fs::file_size(path) <= 100 * (2 * 32 * 32 * 4 + 64) + 64);

  ArchiveReader r(path);
  CHECK(r.header().count == 100);
  CHECK(r.header().height == 32);

  {
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.write("XXXX", 4);
  }
  CHECK_THROWS_AS(read_archive(path), FormatError);

  write_archive(path, samples);
  fs::resize_file(path, fs::file_size(path) - 10);
  CHECK_THROWS_AS(read_archive(path), FormatError);
  CHECK_THROWS_AS(read_archive((dir / "missing.sdat").string()), IoError);

  ArchiveWriter w((dir / "b.sdat").string(), 1, 32, 32);
  CHECK_THROWS_AS(w.write(make_sample(0, ImageKind::mixed, 16, 1, 25.0)), DimensionError);
  fs::remove_all(dir);
}

TEST_CASE("synth: pnm roundtrip within quantization") {
  const auto dir = scratch_dir("pnm");
  for (std::size_t c : {1u, 3u}) {
    const auto img = gen_clean_image(9, ImageKind::mixed, 24, c);
    const auto path = (dir / (c == 1 ? "x.pgm" : "x.ppm")).string();
    write_pnm(path, img);
    const auto back = read_pnm(path);
    REQUIRE(back.channels == c);
    REQUIRE(back.height == 24);
    for (std::size_t i = 0; i < img.size(); ++i) CHECK(std::abs(back.pixels[i] - img.pixels[i]) <= 0.5 / 255 + 1e-6);
  }
  {
    std::ofstream f(dir / "bad.pgm");
    f << "P2\n2 2\n255\n0 0 0 0\n";
  }
  CHECK_THROWS_AS(read_pnm((dir / "bad.pgm").string()), FormatError);
  {
    std::ofstream f(dir / "comment.pgm", std::ios::binary);
    f << "P5\n# made by hand\n2 1\n255\n";
    f.put(char(0));
    f.put(char(255));
  }
  const auto hand = read_pnm((dir / "comment.pgm").string());
  CHECK(hand.pixels == std::vector<float>{0.0f, 1.0f});
  fs::remove_all(dir);
}

TEST_CASE("synth: build_dataset writes both splits") {
  const auto dir = scratch_dir("dataset");
  auto cfg = RunConfig::desk();
  cfg.data.train_count = 6;
  cfg.data.val_count = 3;
  const auto [nt, nv] = build_dataset(cfg, dir.string());
  CHECK(nt == 6);
  CHECK(nv == 3);
  const auto train = read_archive((dir / "train.sdat").string());
  const auto val = read_archive((dir / "val.sdat").string());
  REQUIRE(train.size() == 6);
  REQUIRE(val.size() == 3);
  CHECK(train[0].clean.height == cfg.data.train_size);
  CHECK(val[0].clean.height == cfg.data.val_size);
  CHECK(train[2].seed == train_sample_seed(cfg.seed, 2));
  fs::remove_all(dir);
}
