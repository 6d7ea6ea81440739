#include <cmath>
#include <cstring>
#include <limits>
#include <memory>
#include <sstream>

#include "sdid/analysis/protocol.hpp"
#include "sdid/data/synth.hpp"
#include "sdid/sdid.h"
#include "sdid/train/trainer.hpp"
#include "sdid/verify/verify.hpp"

struct sdid_config {
  sdid::RunConfig cfg;
};

struct sdid_trainer {
  std::unique_ptr<sdid::train::Trainer> trainer;
  sdid_log_fn log = nullptr;
  void* user = nullptr;
};

struct sdid_model {
  sdid::RunConfig cfg;
  sdid::net::Model<float> model;
};

struct sdid_image {
  sdid::data::Image img;
};

namespace {

thread_local std::string last_error;

sdid_status fail(sdid_status s, const std::string& msg) {
  last_error = msg;
  return s;
}

struct ArgumentError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

template <typename F>
sdid_status api(F f) {
  try {
    last_error.clear();
    f();
    return SDID_OK;
  } catch (const ArgumentError& e) {
    return fail(SDID_ERR_ARGUMENT, e.what());
  } catch (const sdid::ConfigError& e) {
    return fail(SDID_ERR_CONFIG, e.what());
  } catch (const sdid::DimensionError& e) {
    return fail(SDID_ERR_DIMENSION, e.what());
  } catch (const sdid::FormatError& e) {
    return fail(SDID_ERR_FORMAT, e.what());
  } catch (const sdid::IoError& e) {
    return fail(SDID_ERR_IO, e.what());
  } catch (const sdid::NumericalError& e) {
    return fail(SDID_ERR_NUMERICAL, e.what());
  } catch (const sdid::GraphError& e) {
    return fail(SDID_ERR_GRAPH, e.what());
  } catch (const std::exception& e) {
    return fail(SDID_ERR_INTERNAL, e.what());
  } catch (...) {
    return fail(SDID_ERR_INTERNAL, "unknown exception");
  }
}

template <typename... P>
void need(const char* what, P*... ptrs) {
  if (((ptrs == nullptr) || ...)) throw ArgumentError(std::string(what) + ": null argument");
}

sdid_status copy_out(const std::string& s, char* buf, std::size_t cap, std::size_t* needed) {
  if (needed) *needed = s.size() + 1;
  if (buf && cap > 0) {
    const std::size_t n = std::min(cap - 1, s.size());
    std::memcpy(buf, s.data(), n);
    buf[n] = '\0';
  }
  if (buf && cap < s.size() + 1) return fail(SDID_ERR_ARGUMENT, "buffer too small");
  return SDID_OK;
}

sdid::train::Samples load_split(const std::string& dir, const char* name) {
  return std::make_shared<const std::vector<sdid::data::TrainSample>>(
      sdid::data::read_archive(dir + "/" + name));
}

}  // namespace

extern "C" {

const char* sdid_last_error(void) { return last_error.c_str(); }

const char* sdid_status_name(sdid_status status) {
  switch (status) {
    case SDID_OK: return "ok";
    case SDID_ERR_ARGUMENT: return "argument";
    case SDID_ERR_CONFIG: return "config";
    case SDID_ERR_DIMENSION: return "dimension";
    case SDID_ERR_FORMAT: return "format";
    case SDID_ERR_IO: return "io";
    case SDID_ERR_NUMERICAL: return "numerical";
    case SDID_ERR_GRAPH: return "graph";
    case SDID_ERR_INTERNAL: return "internal";
  }
  return "unknown";
}

sdid_status sdid_config_new(const char* preset, sdid_config** out) {
  return api([&] {
    need("sdid_config_new", preset, out);
    *out = nullptr;
    const std::string p = preset;
    if (p != "desk" && p != "paper") throw sdid::ConfigError("unknown preset '" + p + "'");
    *out = new sdid_config{p == "desk" ? sdid::RunConfig::desk() : sdid::RunConfig::paper()};
  });
}

sdid_status sdid_config_load(const char* path, sdid_config** out) {
  return api([&] {
    need("sdid_config_load", path, out);
    *out = nullptr;
    *out = new sdid_config{sdid::RunConfig::load(path)};
  });
}

sdid_status sdid_config_set(sdid_config* cfg, const char* key, const char* value) {
  return api([&] {
    need("sdid_config_set", cfg, key, value);
    auto next = cfg->cfg;
    next.set(key, value);
    next.validate();
    cfg->cfg = std::move(next);
  });
}

sdid_status sdid_config_get(const sdid_config* cfg, const char* key, char* buf, size_t cap, size_t* needed) {
  std::string value;
  const auto s = api([&] {
    need("sdid_config_get", cfg, key);
    std::istringstream in(cfg->cfg.render());
    for (std::string line; std::getline(in, line);) {
      const auto eq = line.find(" = ");
      if (line.empty() || line[0] == '#' || eq == std::string::npos) continue;
      if (line.substr(0, eq) == key) {
        value = line.substr(eq + 3);
        return;
      }
    }
    throw sdid::ConfigError(std::string("unknown config key '") + key + "'");
  });
  return s == SDID_OK ? copy_out(value, buf, cap, needed) : s;
}

sdid_status sdid_config_render(const sdid_config* cfg, char* buf, size_t cap, size_t* needed) {
  std::string text;
  const auto s = api([&] {
    need("sdid_config_render", cfg);
    text = cfg->cfg.render();
  });
  return s == SDID_OK ? copy_out(text, buf, cap, needed) : s;
}

void sdid_config_free(sdid_config* cfg) { delete cfg; }

sdid_status sdid_make_data(const sdid_config* cfg, const char* dir, size_t* train_count, size_t* val_count) {
  return api([&] {
    need("sdid_make_data", cfg, dir);
    const auto [tr, va] = sdid::data::build_dataset(cfg->cfg, dir);
    if (train_count) *train_count = tr;
    if (val_count) *val_count = va;
  });
}

sdid_status sdid_trainer_new(const sdid_config* cfg, const char* data_dir, const char* out_dir, sdid_trainer** out) {
  return api([&] {
    need("sdid_trainer_new", cfg, data_dir, out_dir, out);
    *out = nullptr;
    auto t = std::make_unique<sdid_trainer>();
    t->trainer = std::make_unique<sdid::train::Trainer>(cfg->cfg, load_split(data_dir, "train.sdat"),
                                                        load_split(data_dir, "val.sdat"), out_dir);
    *out = t.release();
  });
}

sdid_status sdid_trainer_resume(const char* checkpoint, const char* data_dir, const char* out_dir,
                                sdid_trainer** out) {
  return api([&] {
    need("sdid_trainer_resume", checkpoint, data_dir, out_dir, out);
    *out = nullptr;
    auto t = std::make_unique<sdid_trainer>();
    t->trainer = std::make_unique<sdid::train::Trainer>(sdid::train::Trainer::resume(
        checkpoint, load_split(data_dir, "train.sdat"), load_split(data_dir, "val.sdat"), out_dir));
    *out = t.release();
  });
}

sdid_status sdid_trainer_set_log(sdid_trainer* tr, sdid_log_fn fn, void* user) {
  return api([&] {
    need("sdid_trainer_set_log", tr);
    tr->log = fn;
    tr->user = user;
    if (!fn) {
      tr->trainer->on_log = nullptr;
      return;
    }
    tr->trainer->on_log = [tr](const sdid::train::StepMetrics& m) {
      const sdid_step_metrics c{m.step,     m.lr_main,  m.lr_gen,    m.loss_full,
                                m.loss_rec, m.loss_sty, m.grad_norm, m.psnr_val.value_or(std::nan(""))};
      tr->log(tr->user, &c);
    };
  });
}

sdid_status sdid_trainer_run(sdid_trainer* tr, size_t until) {
  return api([&] {
    need("sdid_trainer_run", tr);
    tr->trainer->run(until);
  });
}

sdid_status sdid_trainer_run_all(sdid_trainer* tr) {
  return api([&] {
    need("sdid_trainer_run_all", tr);
    tr->trainer->run();
  });
}

size_t sdid_trainer_steps_done(const sdid_trainer* tr) { return tr ? tr->trainer->steps_done() : 0; }

size_t sdid_trainer_total_steps(const sdid_trainer* tr) { return tr ? tr->trainer->config().train.steps : 0; }

sdid_status sdid_trainer_save(const sdid_trainer* tr, const char* path) {
  return api([&] {
    need("sdid_trainer_save", tr, path);
    tr->trainer->save_checkpoint(path);
  });
}

const char* sdid_trainer_last_checkpoint(const sdid_trainer* tr) {
  return tr ? tr->trainer->last_checkpoint().c_str() : "";
}

void sdid_trainer_free(sdid_trainer* tr) { delete tr; }

sdid_status sdid_image_new(size_t channels, size_t height, size_t width, const float* pixels, sdid_image** out) {
  return api([&] {
    need("sdid_image_new", out);
    *out = nullptr;
    if (channels == 0 || height == 0 || width == 0) throw sdid::DimensionError("image dimensions must be positive");
    auto img = std::make_unique<sdid_image>();
    img->img = sdid::data::Image(channels, height, width);
    if (pixels) std::copy(pixels, pixels + img->img.size(), img->img.pixels.begin());
    *out = img.release();
  });
}

sdid_status sdid_image_read(const char* path, sdid_image** out) {
  return api([&] {
    need("sdid_image_read", path, out);
    *out = nullptr;
    *out = new sdid_image{sdid::data::read_pnm(path)};
  });
}

sdid_status sdid_image_write(const sdid_image* img, const char* path) {
  return api([&] {
    need("sdid_image_write", img, path);
    sdid::data::write_pnm(path, img->img);
  });
}

sdid_status sdid_image_shape(const sdid_image* img, size_t* channels, size_t* height, size_t* width) {
  return api([&] {
    need("sdid_image_shape", img);
    if (channels) *channels = img->img.channels;
    if (height) *height = img->img.height;
    if (width) *width = img->img.width;
  });
}

const float* sdid_image_data(const sdid_image* img) { return img ? img->img.pixels.data() : nullptr; }

sdid_status sdid_image_psnr(const sdid_image* a, const sdid_image* b, double* out) {
  return api([&] {
    need("sdid_image_psnr", a, b, out);
    *out = sdid::analysis::psnr(a->img, b->img);
  });
}

sdid_status sdid_image_ssim(const sdid_image* a, const sdid_image* b, double* out) {
  return api([&] {
    need("sdid_image_ssim", a, b, out);
    *out = sdid::analysis::ssim(a->img, b->img);
  });
}

void sdid_image_free(sdid_image* img) { delete img; }

sdid_status sdid_model_load(const char* checkpoint, sdid_model** out) {
  return api([&] {
    need("sdid_model_load", checkpoint, out);
    *out = nullptr;
    const auto ckpt = sdid::net::Checkpoint::load(checkpoint);
    sdid::RunConfig cfg;
    auto model = sdid::train::model_from_checkpoint<float>(ckpt, &cfg);
    *out = new sdid_model{std::move(cfg), std::move(model)};
  });
}

size_t sdid_model_size_multiple(const sdid_model* m) { return m ? m->model.config().size_multiple() : 0; }

sdid_status sdid_model_config(const sdid_model* m, sdid_config** out) {
  return api([&] {
    need("sdid_model_config", m, out);
    *out = new sdid_config{m->cfg};
  });
}

sdid_status sdid_model_denoise(const sdid_model* m, const sdid_image* noisy, const sdid_image* style_ref,
                               uint64_t seed, int pad, sdid_image** out) {
  return api([&] {
    need("sdid_model_denoise", m, noisy, out);
    *out = nullptr;
    auto y = sdid::analysis::denoise_image(m->model, noisy->img, style_ref ? &style_ref->img : nullptr, seed,
                                           pad != 0);
    *out = new sdid_image{std::move(y)};
  });
}

sdid_status sdid_model_mix(const sdid_model* m, const sdid_image* noisy, const sdid_image* clean,
                           const double* lambdas, size_t count, const char* csv_path, const char* image_prefix,
                           sdid_mix_result* out) {
  return api([&] {
    need("sdid_model_mix", m, noisy, clean, lambdas, csv_path);
    if (count < 2) throw sdid::ConfigError("mix needs at least two lambdas");
    if (noisy->img.channels != clean->img.channels || noisy->img.height != clean->img.height ||
        noisy->img.width != clean->img.width)
      throw sdid::DimensionError("noisy and clean images differ in shape");
    sdid::data::TrainSample pair{clean->img, noisy->img};
    const std::vector<double> ls(lambdas, lambdas + count);
    const auto sweep = sdid::analysis::mix_sweep(m->model, {pair}, ls);
    sdid::analysis::write_mix_csv(csv_path, sweep);
    if (image_prefix) {
      const char* ext = noisy->img.channels == 3 ? ".ppm" : ".pgm";
      for (std::size_t k = 0; k < sweep.first_pair.size(); ++k)
        sdid::data::write_pnm(std::string(image_prefix) + std::to_string(k) + ext, sweep.first_pair[k]);
    }
    if (out) *out = {sweep.mean_spearman, sweep.identity_band};
  });
}

sdid_status sdid_model_analyze(const sdid_model* m, const char* data_dir, const char* out_dir,
                               sdid_analysis_summary* out) {
  return api([&] {
    need("sdid_model_analyze", m, data_dir, out_dir);
    const auto val = sdid::data::read_archive(std::string(data_dir) + "/val.sdat");
    const auto r = sdid::analysis::analyze(m->model, m->cfg, val);
    sdid::analysis::write_analysis(out_dir, r);
    if (out) {
      const auto& p = r.projection;
      *out = {p.coords.size(), r.features.size(), r.gaussian_channels,
              p.nearest[p.index_of("sampled")] == p.index_of("noise_free")};
    }
  });
}

void sdid_model_free(sdid_model* m) { delete m; }

sdid_status sdid_verify(const char* suite, uint64_t seed, double corrupt_backward, sdid_check_fn fn, void* user,
                        int* all_pass, double* max_rel_err) {
  return api([&] {
    need("sdid_verify", suite);
    sdid::verify::Options o;
    o.seed = seed;
    o.corrupt_backward = corrupt_backward;
    if (fn)
      o.on_check = [&](const sdid::verify::CheckResult& c) {
        const sdid_check cc{c.suite.c_str(), c.name.c_str(), c.pass, c.value, c.limit, c.detail.c_str()};
        fn(user, &cc);
      };
    const auto r = sdid::verify::run(suite, o);
    if (all_pass) *all_pass = r.pass();
    if (max_rel_err) *max_rel_err = r.max_rel_err;
  });
}

}  // extern "C"
