#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "sdid/sdid.h"

namespace {

constexpr int kExitOk = 0, kExitInternal = 1, kExitUsage = 2, kExitNumerical = 3;

struct Failure {
  int code;
};

int exit_code(sdid_status s) {
  switch (s) {
    case SDID_OK: return kExitOk;
    case SDID_ERR_NUMERICAL: return kExitNumerical;
    case SDID_ERR_GRAPH:
    case SDID_ERR_INTERNAL: return kExitInternal;
    default: return kExitUsage;
  }
}

void check(sdid_status s) {
  if (s == SDID_OK) return;
  std::fprintf(stderr, "error (%s): %s\n", sdid_status_name(s), sdid_last_error());
  throw Failure{exit_code(s)};
}

[[noreturn]] void usage(const std::string& msg) {
  std::fprintf(stderr, "error: %s\n", msg.c_str());
  throw Failure{kExitUsage};
}

template <typename T, void (*Free)(T*)>
struct Handle {
  T* p = nullptr;
  Handle() = default;
  Handle(const Handle&) = delete;
  Handle& operator=(const Handle&) = delete;
  ~Handle() { Free(p); }
  T** out() { return &p; }
  T* get() const { return p; }
};

using Config = Handle<sdid_config, sdid_config_free>;
using Model = Handle<sdid_model, sdid_model_free>;
using Trainer = Handle<sdid_trainer, sdid_trainer_free>;
using Image = Handle<sdid_image, sdid_image_free>;

struct Globals {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
};

void load_config(const Globals& g, Config& cfg) {
  if (g.config.empty())
    check(sdid_config_new("desk", cfg.out()));
  else
    check(sdid_config_load(g.config.c_str(), cfg.out()));
  if (g.seed) check(sdid_config_set(cfg.get(), "seed", std::to_string(*g.seed).c_str()));
}

std::string config_value(const sdid_config* cfg, const char* key) {
  std::size_t n = 0;
  check(sdid_config_get(cfg, key, nullptr, 0, &n));
  std::string s(n, '\0');
  check(sdid_config_get(cfg, key, s.data(), n, &n));
  s.resize(n - 1);
  return s;
}

void check_threads() {
  const char* env = std::getenv("SDID_THREADS");
  if (!env) return;
  char* end = nullptr;
  const long v = std::strtol(env, &end, 10);
  if (*env == '\0' || *end != '\0' || v < 1) usage(std::string("SDID_THREADS must be a positive integer, got '") + env + "'");
}

void log_step(void*, const sdid_step_metrics* m) {
  std::printf("step %zu loss %.5f rec %.5f sty %.5f gnorm %.3f lr %.3g", m->step, m->loss_full, m->loss_rec,
              m->loss_sty, m->grad_norm, m->lr_main);
  if (!std::isnan(m->psnr_val)) std::printf(" val_psnr %.3f", m->psnr_val);
  std::printf("\n");
  std::fflush(stdout);
}

void print_check(void*, const sdid_check* c) {
  std::printf("%s %-6s %-44s %.3e / %.0e %s\n", c->pass ? "PASS" : "FAIL", c->suite, c->name, c->value, c->limit,
              c->pass ? "" : c->detail);
  std::fflush(stdout);
}

int cmd_make_data(const Globals& g) {
  Config cfg;
  load_config(g, cfg);
  const std::string dir = g.out.empty() ? "data" : g.out;
  std::size_t tr = 0, va = 0;
  check(sdid_make_data(cfg.get(), dir.c_str(), &tr, &va));
  std::printf("wrote %zu train and %zu validation samples to %s\n", tr, va, dir.c_str());
  return kExitOk;
}

struct TrainArgs {
  std::string data = "data";
  std::string resume;
  std::optional<std::size_t> steps;
};

int cmd_train(const Globals& g, const TrainArgs& a) {
  const std::string out = g.out.empty() ? "run" : g.out;
  Trainer tr;
  if (a.resume.empty()) {
    Config cfg;
    load_config(g, cfg);
    check(sdid_trainer_new(cfg.get(), a.data.c_str(), out.c_str(), tr.out()));
  } else {
    if (!g.config.empty() || g.seed) usage("--resume takes the configuration from the checkpoint");
    check(sdid_trainer_resume(a.resume.c_str(), a.data.c_str(), out.c_str(), tr.out()));
  }
  check(sdid_trainer_set_log(tr.get(), log_step, nullptr));
  const std::size_t until = a.steps.value_or(sdid_trainer_total_steps(tr.get()));
  check(sdid_trainer_run(tr.get(), until));
  std::printf("trained %zu of %zu steps; checkpoint %s\n", sdid_trainer_steps_done(tr.get()),
              sdid_trainer_total_steps(tr.get()), sdid_trainer_last_checkpoint(tr.get()));
  return kExitOk;
}

struct DenoiseArgs {
  std::string ckpt, in, ref, pad;
  std::vector<std::string> style{"sampled"};
};

int cmd_denoise(const Globals& g, const DenoiseArgs& a) {
  if (g.out.empty()) usage("denoise needs --out");
  if (!a.pad.empty() && a.pad != "reflect") usage("--pad supports only 'reflect'");
  Model m;
  check(sdid_model_load(a.ckpt.c_str(), m.out()));
  Image noisy, style_ref, ref, out;
  check(sdid_image_read(a.in.c_str(), noisy.out()));
  if (a.style[0] == "from-clean") {
    if (a.style.size() != 2) usage("--style from-clean needs the clean image path");
    check(sdid_image_read(a.style[1].c_str(), style_ref.out()));
  } else if (a.style[0] != "sampled" || a.style.size() != 1) {
    usage("--style must be 'sampled' or 'from-clean <path>'");
  }
  std::uint64_t seed = 0;
  if (g.seed) {
    seed = *g.seed;
  } else {
    Config cfg;
    check(sdid_model_config(m.get(), cfg.out()));
    seed = std::stoull(config_value(cfg.get(), "seed"));
  }
  check(sdid_model_denoise(m.get(), noisy.get(), style_ref.get(), seed, !a.pad.empty(), out.out()));
  check(sdid_image_write(out.get(), g.out.c_str()));
  std::printf("wrote %s\n", g.out.c_str());
  if (!a.ref.empty()) {
    check(sdid_image_read(a.ref.c_str(), ref.out()));
    double p_in = 0, p_out = 0;
    check(sdid_image_psnr(noisy.get(), ref.get(), &p_in));
    check(sdid_image_psnr(out.get(), ref.get(), &p_out));
    std::printf("psnr input %.3f dB, denoised %.3f dB\n", p_in, p_out);
  }
  return kExitOk;
}

struct MixArgs {
  std::string ckpt;
  std::vector<std::string> pair;
  std::vector<double> lambdas{0.0, 0.25, 0.5, 0.75, 1.0};
};

int cmd_mix(const Globals& g, const MixArgs& a) {
  const std::string dir = g.out.empty() ? "." : g.out;
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) usage("cannot create '" + dir + "': " + ec.message());
  Model m;
  check(sdid_model_load(a.ckpt.c_str(), m.out()));
  Image x, y;
  check(sdid_image_read(a.pair[0].c_str(), x.out()));
  check(sdid_image_read(a.pair[1].c_str(), y.out()));
  const std::string csv = dir + "/mix_sweep.csv", prefix = dir + "/mix_";
  sdid_mix_result r{};
  check(sdid_model_mix(m.get(), x.get(), y.get(), a.lambdas.data(), a.lambdas.size(), csv.c_str(), prefix.c_str(),
                       &r));
  std::printf("wrote %s (%zu rows)\n", csv.c_str(), a.lambdas.size());
  std::printf("spearman rho(lambda, psnr) = %.4f (%s 0.9)\n", r.spearman, r.spearman >= 0.9 ? ">=" : "<");
  std::printf("identity band %.3f dB\n", r.identity_band);
  return kExitOk;
}

struct AnalyzeArgs {
  std::string ckpt, data = "data";
};

int cmd_analyze(const Globals& g, const AnalyzeArgs& a) {
  const std::string dir = g.out.empty() ? "analysis" : g.out;
  Model m;
  check(sdid_model_load(a.ckpt.c_str(), m.out()));
  sdid_analysis_summary s{};
  check(sdid_model_analyze(m.get(), a.data.c_str(), dir.c_str(), &s));
  std::printf("style points %zu; sampled centroid nearest noise_free: %s\n", s.style_points,
              s.sampled_nearest_noise_free ? "yes" : "no");
  std::printf("gaussian channels %zu of %zu\n", s.gaussian_channels, s.channels);
  std::printf("wrote %s/style_proj.csv, %s/feat_stats.csv, %s/report.txt\n", dir.c_str(), dir.c_str(), dir.c_str());
  return kExitOk;
}

struct VerifyArgs {
  std::string suite = "all";
  double corrupt = 1.0;
};

int cmd_verify(const Globals& g, const VerifyArgs& a) {
  int pass = 0;
  double max_rel = 0;
  check(sdid_verify(a.suite.c_str(), g.seed.value_or(0), a.corrupt, print_check, nullptr, &pass, &max_rel));
  std::printf("max relative gradient error %.3e; %s\n", max_rel, pass ? "all checks passed" : "FAILED");
  return pass ? kExitOk : kExitNumerical;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Image denoising by style disentanglement"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("--config", g.config, "flat key = value configuration file");
  app.add_option("--seed", g.seed, "run seed");
  app.add_option("--out", g.out, "output file or directory");

  auto* make = app.add_subcommand("make-data", "generate train.sdat and val.sdat");

  TrainArgs ta;
  auto* train = app.add_subcommand("train", "train a model");
  train->add_option("--data", ta.data, "directory with train.sdat and val.sdat");
  train->add_option("--resume", ta.resume, "checkpoint to continue from");
  train->add_option("--steps", ta.steps, "stop once this many steps are complete");

  DenoiseArgs da;
  auto* denoise = app.add_subcommand("denoise", "denoise one image");
  denoise->add_option("--ckpt", da.ckpt)->required();
  denoise->add_option("--in", da.in)->required();
  denoise->add_option("--style", da.style, "sampled | from-clean <path>")->expected(1, 2);
  denoise->add_option("--ref", da.ref, "clean reference; prints PSNR");
  denoise->add_option("--pad", da.pad, "reflect");

  MixArgs ma;
  auto* mix = app.add_subcommand("mix", "denoise with mixed styles");
  mix->add_option("--ckpt", ma.ckpt)->required();
  mix->add_option("--pair", ma.pair, "noisy and clean image")->required()->expected(2);
  mix->add_option("--lambdas", ma.lambdas)->delimiter(',');

  AnalyzeArgs aa;
  auto* analyze = app.add_subcommand("analyze", "style-space and feature-difference analysis");
  analyze->add_option("--ckpt", aa.ckpt)->required();
  analyze->add_option("--data", aa.data, "directory with val.sdat");

  VerifyArgs va;
  auto* verify = app.add_subcommand("verify", "gradient and property checks");
  verify->add_option("--suite", va.suite)->check(CLI::IsMember({"grad", "props", "all"}));
  verify->add_option("--corrupt-backward", va.corrupt, "scale every backward pass (negative control)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    check_threads();
    if (make->parsed()) return cmd_make_data(g);
    if (train->parsed()) return cmd_train(g, ta);
    if (denoise->parsed()) return cmd_denoise(g, da);
    if (mix->parsed()) return cmd_mix(g, ma);
    if (analyze->parsed()) return cmd_analyze(g, aa);
    if (verify->parsed()) return cmd_verify(g, va);
  } catch (const Failure& f) {
    return f.code;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitInternal;
  }
  return kExitUsage;
}
