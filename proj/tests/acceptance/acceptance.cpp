// Acceptance run: one PASS/FAIL line per criterion. Trains two desk models
// (N=8 and N=1), so expect roughly half an hour per model on one core.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <string>
#include <unistd.h>
#include <vector>

#include "sdid/analysis/protocol.hpp"
#include "sdid/train/trainer.hpp"
#include "sdid/verify/verify.hpp"

using namespace sdid;
namespace fs = std::filesystem;

namespace {

// Tolerances.
constexpr double kGradTol = 1e-5;
constexpr double kGradSeconds = 60;
constexpr double kTrainMinutes = 30;
constexpr std::size_t kMaxSteps = 5000;
constexpr std::size_t kMinValSamples = 64;
constexpr double kPsnrGain = 3.0;
constexpr double kSsimGain = 0.05;
constexpr double kSpearman = 0.9;
constexpr std::size_t kMinMixPairs = 16;
constexpr double kIdentityBand = 1.5;
constexpr double kBypassPsnr = 30.0;
constexpr double kBypassBand = 1.0;
constexpr double kFitResidual = 0.05;
constexpr std::size_t kResumeSteps = 100;
constexpr double kAblationSlack = 0.2;
constexpr double kConvergeGain = 1.0;

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t) { return std::chrono::duration<double>(Clock::now() - t).count(); }

int failures = 0;

void verdict(int id, bool pass, const std::string& what) {
  std::printf("[%s] criterion %d: %s\n", pass ? "PASS" : "FAIL", id, what.c_str());
  std::fflush(stdout);
  failures += !pass;
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

void note(const std::string& s) {
  std::printf("  %s\n", s.c_str());
  std::fflush(stdout);
}

struct Run {
  RunConfig cfg;
  double minutes = 0;
  std::size_t steps = 0;
  double first_loss = 0, last_loss = 0;
  std::unique_ptr<train::Trainer> trainer;
};

Run train_desk(const RunConfig& cfg, const train::Samples& tr, const train::Samples& va, const std::string& dir) {
  Run r;
  r.cfg = cfg;
  const auto t0 = Clock::now();
  r.trainer = std::make_unique<train::Trainer>(cfg, tr, va, dir);
  r.trainer->on_log = [&](const train::StepMetrics& m) {
    if (m.step % 500 == 0 || m.step == cfg.train.steps)
      note(fmt("N=%zu step %zu loss %.4f val psnr %.3f (%.0f s)", cfg.model.sc_blocks, m.step, m.loss_full,
               m.psnr_val.value_or(NAN), seconds_since(t0)));
  };
  r.trainer->run();
  r.minutes = seconds_since(t0) / 60;
  r.steps = r.trainer->steps_done();
  const auto& h = r.trainer->history();
  r.first_loss = h.front().loss_full;
  r.last_loss = h.back().loss_full;
  return r;
}

std::vector<std::uint8_t> param_bytes(const net::Model<float>& m) {
  net::Checkpoint c;
  net::store_params(c, m);
  return c.serialize();
}

}  // namespace

int main() {
  const auto dir = fs::temp_directory_path() / ("sdid_acceptance_" + std::to_string(::getpid()));
  fs::remove_all(dir);
  fs::create_directories(dir);

  // 1: gradient suite
  {
    const auto rep = verify::run("grad");
    std::size_t failed = 0;
    for (const auto& c : rep.checks)
      if (!c.pass) {
        ++failed;
        note("failed " + c.name + ": " + c.detail);
      }
    verdict(1, rep.pass() && rep.max_rel_err <= kGradTol && rep.seconds < kGradSeconds,
            fmt("gradient checks: %zu checks, %zu failed, max rel err %.3e (<= %.0e), %.1f s (< %.0f s)",
                rep.checks.size(), failed, rep.max_rel_err, kGradTol, rep.seconds, kGradSeconds));
  }

  // 7: metric and algebra identities
  {
    const auto rep = verify::run("props");
    std::size_t failed = 0;
    for (const auto& c : rep.checks)
      if (!c.pass) {
        ++failed;
        note("failed " + c.name + ": " + c.detail);
      }
    verdict(7, rep.pass(), fmt("property checks: %zu checks, %zu failed", rep.checks.size(), failed));
  }

  const auto desk = RunConfig::desk();
  data::build_dataset(desk, (dir / "data").string());
  const auto train_set = std::make_shared<const std::vector<data::TrainSample>>(
      data::read_archive((dir / "data" / "train.sdat").string()));
  const auto val_set = std::make_shared<const std::vector<data::TrainSample>>(
      data::read_archive((dir / "data" / "val.sdat").string()));

  // 8: persistence
  {
    bool ok = true;
    std::vector<data::TrainSample> back;
    data::write_archive((dir / "copy.sdat").string(), *val_set);
    back = data::read_archive((dir / "copy.sdat").string());
    const bool archive_ok = back == *val_set;

    auto cfg = desk;
    const std::size_t start = 20, stop = start + kResumeSteps;
    train::Trainer straight(cfg, train_set, val_set, (dir / "straight").string());
    straight.run(stop);
    train::Trainer part(cfg, train_set, val_set, (dir / "part").string());
    part.run(start);
    part.save_checkpoint((dir / "part" / "mid.ckpt").string());
    auto resumed = train::Trainer::resume((dir / "part" / "mid.ckpt").string(), train_set, val_set,
                                          (dir / "part").string());
    resumed.run(stop);
    const bool resume_ok = resumed.steps_done() == stop && param_bytes(resumed.model()) == param_bytes(straight.model());

    const auto ckpt_path = (dir / "straight" / "final.ckpt").string();
    straight.save_checkpoint(ckpt_path);
    const auto loaded = net::Checkpoint::load(ckpt_path);
    const auto reloaded = train::model_from_checkpoint<float>(loaded);
    const bool ckpt_ok = param_bytes(reloaded) == param_bytes(straight.model()) &&
                         net::Checkpoint::load(ckpt_path).serialize() == loaded.serialize();
    ok = archive_ok && resume_ok && ckpt_ok;
    verdict(8, ok,
            fmt("archive roundtrip %s, checkpoint roundtrip %s, resume at step %zu for %zu steps %s",
                archive_ok ? "bit-exact" : "DIFFERS", ckpt_ok ? "bit-exact" : "DIFFERS", start, kResumeSteps,
                resume_ok ? "bit-exact" : "DIFFERS"));
  }

  // 2-6 on the N=8 desk model
  const auto val = analysis::validation_samples(desk, *val_set, std::max<std::size_t>(val_set->size(), kMinValSamples));
  auto run8 = train_desk(desk, train_set, val_set, (dir / "n8").string());
  const auto& model = run8.trainer->model();
  const auto eval8 = analysis::evaluate_denoising(model, desk, val);
  {
    const bool ok = run8.minutes <= kTrainMinutes && run8.steps <= kMaxSteps && val.size() >= kMinValSamples &&
                    eval8.psnr_out >= eval8.psnr_noisy + kPsnrGain && eval8.ssim_out >= eval8.ssim_noisy + kSsimGain;
    verdict(2, ok,
            fmt("desk training %zu steps in %.1f min (<= %.0f); over %zu validation samples PSNR %.3f -> %.3f dB "
                "(gain %.3f >= %.1f), SSIM %.4f -> %.4f (gain %.4f >= %.2f)",
                run8.steps, run8.minutes, kTrainMinutes, val.size(), eval8.psnr_noisy, eval8.psnr_out,
                eval8.psnr_out - eval8.psnr_noisy, kPsnrGain, eval8.ssim_noisy, eval8.ssim_out,
                eval8.ssim_out - eval8.ssim_noisy, kSsimGain));
  }
  {
    const std::size_t pairs = std::max(desk.analysis.mix_pairs, kMinMixPairs);
    const std::vector<data::TrainSample> mix_pairs(val.begin(), val.begin() + std::ptrdiff_t(pairs));
    const auto sweep = analysis::mix_sweep(model, mix_pairs, desk.analysis.lambdas);
    analysis::write_mix_csv((dir / "mix_sweep.csv").string(), sweep);
    for (const auto& r : sweep.rows)
      note(fmt("lambda %.2f cos_sq %.4f psnr %.3f ssim %.4f psnr vs noisy %.3f", r.lambda, r.cos_sq, r.psnr, r.ssim,
               r.psnr_noisy));
    double at_zero = NAN;
    for (const auto& r : sweep.rows)
      if (r.lambda == 0.0) at_zero = r.psnr_noisy;
    const double gap = std::abs(at_zero - sweep.identity_band);
    verdict(3, sweep.mean_spearman >= kSpearman && gap <= kIdentityBand,
            fmt("mixed styles over %zu pairs: mean Spearman %.4f (>= %.1f); at lambda 0 PSNR(y_hat,x) %.3f vs identity "
                "band %.3f, gap %.3f dB (<= %.1f)",
                pairs, sweep.mean_spearman, kSpearman, at_zero, sweep.identity_band, gap, kIdentityBand));
  }
  {
    const auto b = analysis::evaluate_bypass(model, val);
    const double gap = std::abs(b.psnr_clean - b.psnr_noisy);
    verdict(4, b.psnr_input >= kBypassPsnr && gap <= kBypassBand,
            fmt("style conversion bypassed: PSNR(dec(enc(x)),x) %.3f dB (>= %.0f); PSNR(dec(enc(x)),y) %.3f vs "
                "PSNR(x,y) %.3f, gap %.3f dB (<= %.1f)",
                b.psnr_input, kBypassPsnr, b.psnr_clean, b.psnr_noisy, gap, kBypassBand));
  }
  {
    const auto rep = analysis::analyze(model, desk, *val_set);
    const auto again = analysis::analyze(model, desk, *val_set);
    analysis::write_analysis((dir / "analysis").string(), rep);
    std::printf("%s", rep.text.c_str());
    const auto& p = rep.projection;
    const std::size_t n = p.index_of("noise"), nf = p.index_of("noise_free"), s = p.index_of("sampled");
    const double between = p.centroid_cos[n][nf];
    const bool sep = between < p.within_cos[n] && between < p.within_cos[nf];
    const bool near = p.nearest[s] == nf;
    verdict(5, sep && near && p.coords.size() / 3 >= kMinValSamples,
            fmt("style space over %zu images: centroid cosine noise/noise_free %.4f < within %.4f and %.4f: %s; "
                "sampled centroid nearest %s",
                p.coords.size() / 3, between, p.within_cos[n], p.within_cos[nf], sep ? "yes" : "no",
                p.class_names[p.nearest[s]].c_str()));
    const bool deterministic = rep.text == again.text;
    const bool majority = 2 * rep.gaussian_channels > rep.features.size();
    verdict(6, majority && deterministic && rep.fit_threshold == kFitResidual,
            fmt("feature differences: %zu of %zu channels with residual <= %.2f (need > half); report %s",
                rep.gaussian_channels, rep.features.size(), kFitResidual,
                deterministic ? "deterministic" : "NOT deterministic"));
  }

  // 9: N ablation
  {
    auto cfg1 = desk;
    cfg1.model.sc_blocks = 1;
    auto run1 = train_desk(cfg1, train_set, val_set, (dir / "n1").string());
    const auto eval1 = analysis::evaluate_denoising(run1.trainer->model(), cfg1, val);
    const auto converged = [](const Run& r, const analysis::DenoiseEval& e) {
      return std::isfinite(r.last_loss) && r.last_loss < r.first_loss && e.psnr_out >= e.psnr_noisy + kConvergeGain;
    };
    const bool ok = converged(run8, eval8) && converged(run1, eval1) && eval8.psnr_out >= eval1.psnr_out - kAblationSlack;
    verdict(9, ok,
            fmt("N=8 PSNR %.3f dB (loss %.4f -> %.4f), N=1 PSNR %.3f dB (loss %.4f -> %.4f, %.1f min); "
                "difference %.3f dB (>= -%.1f)",
                eval8.psnr_out, run8.first_loss, run8.last_loss, eval1.psnr_out, run1.first_loss, run1.last_loss,
                run1.minutes, eval8.psnr_out - eval1.psnr_out, kAblationSlack));
  }

  fs::remove_all(dir);
  std::printf("%d criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
