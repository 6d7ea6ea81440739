#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <unistd.h>
#include <vector>

#include "doctest.h"
#include "sdid/sdid.h"

namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  auto p = fs::temp_directory_path() / ("sdid_capi_" + name + "_" + std::to_string(::getpid()));
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

sdid_config* tiny_config() {
  sdid_config* c = nullptr;
  REQUIRE(sdid_config_new("desk", &c) == SDID_OK);
  const std::pair<const char*, const char*> kv[] = {
      {"model.base_channels", "4"}, {"model.num_scales", "1"},  {"model.heads", "1"},
      {"model.style_dim", "8"},     {"model.gen_input_dim", "4"}, {"model.sc_blocks", "1"},
      {"model.gap_dim", "8"},       {"train.batch", "2"},       {"train.crop", "16"},
      {"train.steps", "4"},         {"train.log_every", "2"},   {"train.checkpoint_every", "2"},
      {"train.val_samples", "2"},   {"data.train_count", "6"},  {"data.val_count", "4"},
      {"data.train_size", "16"},    {"data.val_size", "16"},    {"analysis.style_images", "12"},
      {"analysis.feature_images", "8"}};
  for (const auto& [k, v] : kv) REQUIRE(sdid_config_set(c, k, v) == SDID_OK);
  return c;
}

std::vector<char> bytes(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), {}};
}

}  // namespace

TEST_CASE("capi: status codes and thread-local messages") {
  sdid_config* c = nullptr;
  CHECK(sdid_config_new("nope", &c) == SDID_ERR_CONFIG);
  CHECK(c == nullptr);
  CHECK(std::string(sdid_last_error()).find("nope") != std::string::npos);
  CHECK(sdid_config_new(nullptr, &c) == SDID_ERR_ARGUMENT);
  REQUIRE(sdid_config_new("desk", &c) == SDID_OK);
  CHECK(std::string(sdid_last_error()).empty());
  CHECK(sdid_config_set(c, "train.stepz", "3") == SDID_ERR_CONFIG);
  CHECK(std::string(sdid_last_error()).find("train.stepz") != std::string::npos);
  CHECK(sdid_config_set(c, "model.window", "0") == SDID_ERR_CONFIG);

  char buf[8];
  std::size_t need = 0;
  CHECK(sdid_config_get(c, "seed", buf, sizeof buf, &need) == SDID_OK);
  CHECK(std::string(buf) == "1");
  CHECK(sdid_config_render(c, buf, sizeof buf, &need) == SDID_ERR_ARGUMENT);
  std::string text(need, '\0');
  CHECK(sdid_config_render(c, text.data(), need, &need) == SDID_OK);
  CHECK(text.find("model.sc_blocks = 8") != std::string::npos);
  CHECK(std::string(sdid_status_name(SDID_ERR_NUMERICAL)) == "numerical");
  sdid_config_free(c);
  sdid_config_free(nullptr);

  sdid_image* img = nullptr;
  CHECK(sdid_image_read("/nonexistent/x.pgm", &img) == SDID_ERR_IO);
  CHECK(sdid_model_load("/nonexistent/x.ckpt", nullptr) == SDID_ERR_ARGUMENT);
}

TEST_CASE("capi: images, metrics and pnm roundtrip") {
  std::vector<float> a(256, 0.0f), b(256, 0.1f);
  sdid_image *ia = nullptr, *ib = nullptr, *back = nullptr;
  REQUIRE(sdid_image_new(1, 16, 16, a.data(), &ia) == SDID_OK);
  REQUIRE(sdid_image_new(1, 16, 16, b.data(), &ib) == SDID_OK);
  double p = 0, s = 0;
  REQUIRE(sdid_image_psnr(ia, ib, &p) == SDID_OK);
  CHECK(p == doctest::Approx(20.0).epsilon(1e-6));
  REQUIRE(sdid_image_ssim(ia, ia, &s) == SDID_OK);
  CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
  sdid_image* small = nullptr;
  REQUIRE(sdid_image_new(1, 4, 4, nullptr, &small) == SDID_OK);
  CHECK(sdid_image_psnr(ia, small, &p) == SDID_ERR_DIMENSION);
  CHECK(sdid_image_new(0, 4, 4, nullptr, &small) == SDID_ERR_DIMENSION);

  const auto dir = scratch("img");
  const auto path = (dir / "b.pgm").string();
  REQUIRE(sdid_image_write(ib, path.c_str()) == SDID_OK);
  REQUIRE(sdid_image_read(path.c_str(), &back) == SDID_OK);
  std::size_t c = 0, h = 0, w = 0;
  sdid_image_shape(back, &c, &h, &w);
  CHECK(c == 1);
  CHECK(h == 16);
  CHECK(w == 16);
  CHECK(std::abs(sdid_image_data(back)[5] - 26.0f / 255.0f) < 1e-7f);
  for (auto* i : {ia, ib, small, back}) sdid_image_free(i);
  fs::remove_all(dir);
}

TEST_CASE("capi: data, training, resume, denoise, mix, analyze") {
  const auto dir = scratch("run");
  sdid_config* cfg = tiny_config();
  const auto data = (dir / "data").string();
  std::size_t ntr = 0, nva = 0;
  REQUIRE(sdid_make_data(cfg, data.c_str(), &ntr, &nva) == SDID_OK);
  CHECK(ntr == 6);
  CHECK(nva == 4);
  const auto first = bytes(dir / "data" / "train.sdat");
  REQUIRE(sdid_make_data(cfg, data.c_str(), nullptr, nullptr) == SDID_OK);
  CHECK(bytes(dir / "data" / "train.sdat") == first);

  sdid_trainer* full = nullptr;
  REQUIRE(sdid_trainer_new(cfg, data.c_str(), (dir / "full").string().c_str(), &full) == SDID_OK);
  int logs = 0;
  sdid_trainer_set_log(
      full,
      [](void* u, const sdid_step_metrics* m) {
        if (m->step > 0) ++*static_cast<int*>(u);
      },
      &logs);
  REQUIRE(sdid_trainer_run_all(full) == SDID_OK);
  CHECK(logs == 2);
  CHECK(sdid_trainer_steps_done(full) == 4);

  sdid_trainer* part = nullptr;
  REQUIRE(sdid_trainer_new(cfg, data.c_str(), (dir / "part").string().c_str(), &part) == SDID_OK);
  REQUIRE(sdid_trainer_run(part, 2) == SDID_OK);
  const std::string ckpt = sdid_trainer_last_checkpoint(part);
  sdid_trainer_free(part);
  sdid_trainer* resumed = nullptr;
  REQUIRE(sdid_trainer_resume(ckpt.c_str(), data.c_str(), (dir / "part").string().c_str(), &resumed) == SDID_OK);
  CHECK(sdid_trainer_steps_done(resumed) == 2);
  REQUIRE(sdid_trainer_run_all(resumed) == SDID_OK);
  CHECK(bytes(dir / "part" / "last.ckpt") == bytes(dir / "full" / "last.ckpt"));
  sdid_trainer_free(resumed);
  sdid_trainer_free(full);

  sdid_model* m = nullptr;
  REQUIRE(sdid_model_load((dir / "full" / "last.ckpt").string().c_str(), &m) == SDID_OK);
  CHECK(sdid_model_size_multiple(m) == 8);
  std::vector<float> px(12 * 12);
  for (std::size_t i = 0; i < px.size(); ++i) px[i] = float(i % 12) / 12.0f;
  sdid_image *x = nullptr, *y1 = nullptr, *y2 = nullptr;
  REQUIRE(sdid_image_new(1, 12, 12, px.data(), &x) == SDID_OK);
  CHECK(sdid_model_denoise(m, x, nullptr, 1, 0, &y1) == SDID_ERR_DIMENSION);
  CHECK(std::string(sdid_last_error()).find("--pad") != std::string::npos);
  REQUIRE(sdid_model_denoise(m, x, nullptr, 1, 1, &y1) == SDID_OK);
  REQUIRE(sdid_model_denoise(m, x, x, 1, 1, &y2) == SDID_OK);
  std::size_t h = 0;
  sdid_image_shape(y1, nullptr, &h, nullptr);
  CHECK(h == 12);

  sdid_image *n16 = nullptr, *c16 = nullptr;
  std::vector<float> clean(256), noisy(256);
  for (std::size_t i = 0; i < 256; ++i) {
    clean[i] = float(i % 16) / 16.0f;
    noisy[i] = clean[i] + ((i * 7919) % 13 == 0 ? 0.2f : -0.05f);
  }
  REQUIRE(sdid_image_new(1, 16, 16, noisy.data(), &n16) == SDID_OK);
  REQUIRE(sdid_image_new(1, 16, 16, clean.data(), &c16) == SDID_OK);
  const double lambdas[] = {0, 0.5, 1};
  sdid_mix_result mr{};
  const auto csv = (dir / "mix.csv").string(), prefix = (dir / "mix_").string();
  REQUIRE(sdid_model_mix(m, n16, c16, lambdas, 3, csv.c_str(), prefix.c_str(), &mr) == SDID_OK);
  std::ifstream f(csv);
  std::string line;
  int rows = -1;
  while (std::getline(f, line)) ++rows;
  CHECK(rows == 3);
  CHECK(fs::exists(dir / "mix_2.pgm"));
  CHECK(std::isfinite(mr.spearman));
  CHECK(sdid_model_mix(m, n16, c16, lambdas, 1, csv.c_str(), nullptr, &mr) == SDID_ERR_CONFIG);

  sdid_analysis_summary s{};
  const auto an = (dir / "an").string();
  REQUIRE(sdid_model_analyze(m, data.c_str(), an.c_str(), &s) == SDID_OK);
  CHECK(s.style_points == 36);
  CHECK(s.channels == 8);
  const auto report = bytes(dir / "an" / "report.txt");
  REQUIRE(sdid_model_analyze(m, data.c_str(), an.c_str(), &s) == SDID_OK);
  CHECK(bytes(dir / "an" / "report.txt") == report);
  CHECK(fs::exists(dir / "an" / "style_proj.csv"));
  CHECK(fs::exists(dir / "an" / "feat_stats.csv"));

  for (auto* i : {x, y1, y2, n16, c16}) sdid_image_free(i);
  sdid_model_free(m);
  sdid_config_free(cfg);
  fs::remove_all(dir);
}

TEST_CASE("capi: verify props passes; unknown suite is a config error") {
  int pass = 0, seen = 0;
  REQUIRE(sdid_verify("props", 0, 1.0, [](void* u, const sdid_check*) { ++*static_cast<int*>(u); }, &seen, &pass,
                      nullptr) == SDID_OK);
  CHECK(pass == 1);
  CHECK(seen > 10);
  CHECK(sdid_verify("nope", 0, 1.0, nullptr, nullptr, &pass, nullptr) == SDID_ERR_CONFIG);
}
