#include "sdid/train/trainer.hpp"

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "sdid/analysis/metrics.hpp"
#include "sdid/data/batch.hpp"

namespace sdid::train {

namespace {

constexpr std::uint64_t kInitTag = 0x696e6974;   // "init"
constexpr std::uint64_t kBatchTag = 0x62617463;  // "batc"
constexpr std::uint64_t kNoiseTag = 0x6e6f6973;  // "nois"
constexpr std::uint64_t kStyleTag = 0x7374796c;  // "styl"
constexpr std::uint64_t kEvalTag = 0x6576616c;   // "eval"
constexpr const char* kCsvHeader = "step,lr_main,lr_gen,loss_full,loss_rec,loss_sty,psnr_val";

template <typename T>
std::vector<typename nd::ParamStore<T>::Entry> partition(const net::Model<T>& model, bool generator) {
  std::vector<typename nd::ParamStore<T>::Entry> out;
  for (const auto& e : model.params().entries())
    if (model.is_generator_param(e.name) == generator) out.push_back(e);
  return out;
}

std::string csv_row(const StepMetrics& m) {
  std::ostringstream s;
  s.precision(9);
  s << m.step << ',' << m.lr_main << ',' << m.lr_gen << ',' << m.loss_full << ',' << m.loss_rec << ',' << m.loss_sty
    << ',';
  if (m.psnr_val) s << *m.psnr_val;
  return s.str();
}

double gen_lr_min(const TrainConfig& t) { return std::min(t.lr_min, t.lr_gen); }

}  // namespace

std::uint64_t init_seed(const RunConfig& cfg) { return nd::derive_seed(cfg.seed, kInitTag, 0); }

template <typename T>
net::Model<T> model_from_checkpoint(const net::Checkpoint& ckpt, RunConfig* cfg_out) {
  const auto cfg = RunConfig::parse(ckpt.text(net::kConfigEntry));
  net::Model<T> model(cfg.model, init_seed(cfg));
  net::load_params(ckpt, model);
  if (cfg_out) *cfg_out = cfg;
  return model;
}

template <typename T>
Tensor<T> eval_noise(const RunConfig& cfg, std::size_t batch, std::uint64_t index) {
  nd::Rng rng(nd::derive_seed(cfg.seed, kEvalTag, index));
  std::vector<T> z(batch * cfg.model.gen_input_dim);
  for (auto& v : z) v = T(rng.normal());
  return Tensor<T>::from({batch, cfg.model.gen_input_dim}, std::move(z));
}

double validation_psnr(const net::Model<float>& model, const RunConfig& cfg, const std::vector<data::TrainSample>& val,
                       std::size_t count) {
  count = std::min(count, val.size());
  if (count == 0) throw ConfigError("validation needs at least one sample");
  nd::NoGradGuard guard;
  constexpr std::size_t kChunk = 8;
  double total = 0;
  for (std::size_t lo = 0; lo < count; lo += kChunk) {
    const std::size_t n = std::min(kChunk, count - lo);
    std::vector<const data::Image*> noisy;
    for (std::size_t i = 0; i < n; ++i) noisy.push_back(&val[lo + i].noisy);
    const auto style = model.generate_style(eval_noise<float>(cfg, n, lo / kChunk));
    const auto out = model.denoise(data::stack_images<float>(noisy), style);
    for (std::size_t i = 0; i < n; ++i) total += analysis::psnr(data::image_at(out, i), val[lo + i].clean);
  }
  return total / double(count);
}

Trainer::Trainer(const RunConfig& cfg, net::Model<float> model, Samples train, Samples val, std::string out_dir)
    : cfg_(cfg),
      model_(std::move(model)),
      train_(std::move(train)),
      val_(std::move(val)),
      out_dir_(std::move(out_dir)),
      main_opt_(partition(model_, false)),
      gen_opt_(partition(model_, true)) {
  cfg_.validate();
  if (!train_ || train_->empty()) throw ConfigError("training set is empty");
  if (!val_ || val_->empty()) throw ConfigError("validation set is empty");
  const auto& first = train_->front().clean;
  if (first.channels != cfg_.model.in_channels)
    throw ConfigError("training data has " + std::to_string(first.channels) + " channels, model expects " +
                      std::to_string(cfg_.model.in_channels));
  if (first.height < cfg_.train.crop || first.width < cfg_.train.crop)
    throw ConfigError("training images are smaller than the crop size");
  if (first.height != first.width) throw ConfigError("training images must be square");
  if (!out_dir_.empty()) std::filesystem::create_directories(out_dir_);
}

Trainer::Trainer(const RunConfig& cfg, Samples train, Samples val, std::string out_dir)
    : Trainer(cfg, net::Model<float>(cfg.model, init_seed(cfg)), std::move(train), std::move(val),
              std::move(out_dir)) {
  if (!out_dir_.empty()) {
    std::ofstream f(out_dir_ + "/metrics.csv", std::ios::trunc);
    if (!f) throw IoError("cannot write '" + out_dir_ + "/metrics.csv'");
    f << kCsvHeader << "\n";
  }
}

Trainer Trainer::resume(const std::string& checkpoint, Samples train, Samples val, std::string out_dir) {
  const auto ckpt = net::Checkpoint::load(checkpoint);
  RunConfig cfg;
  auto model = model_from_checkpoint<float>(ckpt, &cfg);
  Trainer t(cfg, std::move(model), std::move(train), std::move(val), std::move(out_dir));
  std::uint64_t step = 0;
  const auto& raw = ckpt.at("opt/step");
  if (raw.dtype != net::DType::raw || raw.payload.size() != sizeof(step))
    throw FormatError("checkpoint entry 'opt/step' is malformed");
  std::memcpy(&step, raw.payload.data(), sizeof(step));
  for (auto* opt : {&t.main_opt_, &t.gen_opt_}) {
    for (auto& s : opt->slots()) {
      s.m1 = ckpt.values<float>("opt/" + s.name + "/m1");
      s.m2 = ckpt.values<float>("opt/" + s.name + "/m2");
      if (s.m1.size() != s.param.numel() || s.m2.size() != s.param.numel())
        throw FormatError("optimizer state for '" + s.name + "' does not match the parameter");
    }
    opt->set_steps(step);
  }
  t.step_ = step;
  t.last_checkpoint_ = checkpoint;

  if (!t.out_dir_.empty()) {
    // drop metric rows past the resume point so the log matches an uninterrupted run
    const std::string path = t.out_dir_ + "/metrics.csv";
    std::vector<std::string> keep{kCsvHeader};
    std::ifstream in(path);
    std::string line;
    if (in && std::getline(in, line))
      while (std::getline(in, line))
        if (!line.empty() && std::stoull(line.substr(0, line.find(','))) <= step) keep.push_back(line);
    in.close();
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot write '" + path + "'");
    for (const auto& l : keep) out << l << "\n";
  }
  return t;
}

StepMetrics Trainer::step() {
  const auto& tc = cfg_.train;
  const std::size_t crop = tc.crop, b = tc.batch;
  const auto& train = *train_;
  const std::size_t side = train.front().clean.height;

  nd::Rng pick(nd::derive_seed(cfg_.seed, kBatchTag, step_));
  std::vector<data::Image> clean, noisy;
  for (std::size_t i = 0; i < b; ++i) {
    const auto& s = train[pick.below(train.size())];
    const auto code = unsigned(pick.below(8));
    const auto top = pick.below(side - crop + 1), left = pick.below(side - crop + 1);
    clean.push_back(augment(data::crop_patch(s.clean, top, left, crop), code));
    // fresh noise every step at the sample's sigma
    nd::Rng noise(nd::derive_seed(cfg_.seed, kNoiseTag, step_ * b + i));
    noisy.push_back(data::add_awgn(clean.back(), double(s.sigma) * 255.0, noise));
  }
  nd::Rng zr(nd::derive_seed(cfg_.seed, kStyleTag, step_));
  std::vector<float> zv(b * cfg_.model.gen_input_dim);
  for (auto& v : zv) v = float(zr.normal());

  const auto x = data::stack_images<float>(noisy), y = data::stack_images<float>(clean);
  const auto z = Tensor<float>::from({b, cfg_.model.gen_input_dim}, std::move(zv));

  StepMetrics m;
  m.lr_main = cosine_lr(step_, tc.steps, tc.lr_main, tc.lr_min);
  m.lr_gen = cosine_lr(step_, tc.steps, tc.lr_gen, gen_lr_min(tc));

  const auto out = run_branches(model_, x, y, z);
  const auto loss = full_loss(out, x, y, LossWeights::from(tc));
  m.loss_full = loss.total.item();
  m.loss_rec = loss.rec.total.item();
  m.loss_sty = loss.sty.total.item();
  if (!std::isfinite(m.loss_full))
    throw NumericalError("non-finite loss at step " + std::to_string(step_ + 1) + "; last good checkpoint: " +
                         (last_checkpoint_.empty() ? std::string("none") : last_checkpoint_));
  nd::backward(loss.total);
  m.grad_norm = clip_grad_norm(model_.params(), tc.grad_clip);
  if (!std::isfinite(m.grad_norm))
    throw NumericalError("non-finite gradient at step " + std::to_string(step_ + 1) + "; last good checkpoint: " +
                         (last_checkpoint_.empty() ? std::string("none") : last_checkpoint_));
  main_opt_.step(m.lr_main);
  gen_opt_.step(m.lr_gen);
  model_.params().zero_grad();
  m.step = ++step_;
  return m;
}

void Trainer::log(StepMetrics m) {
  m.psnr_val = validation_psnr(model_, cfg_, *val_, cfg_.train.val_samples);
  history_.push_back(m);
  if (!out_dir_.empty()) {
    std::ofstream f(out_dir_ + "/metrics.csv", std::ios::app);
    if (!f) throw IoError("cannot append to '" + out_dir_ + "/metrics.csv'");
    f << csv_row(m) << "\n";
  }
  if (on_log) on_log(m);
}

void Trainer::checkpoint_now() {
  if (out_dir_.empty()) return;
  const std::string path = out_dir_ + "/last.ckpt";
  save_checkpoint(path);
  last_checkpoint_ = path;
}

void Trainer::run(std::optional<std::size_t> until) {
  const auto& tc = cfg_.train;
  const std::size_t stop = std::min(until.value_or(tc.steps), tc.steps);
  if (step_ == 0 && last_checkpoint_.empty()) checkpoint_now();
  while (step_ < stop) {
    const auto m = step();
    if (tc.log_every && (step_ % tc.log_every == 0 || step_ == tc.steps)) log(m);
    if (tc.checkpoint_every && step_ % tc.checkpoint_every == 0) checkpoint_now();
  }
  checkpoint_now();
}

void Trainer::save_checkpoint(const std::string& path) const {
  net::Checkpoint ckpt;
  ckpt.put_text(net::kConfigEntry, cfg_.render());
  net::store_params(ckpt, model_);
  for (const auto* opt : {&main_opt_, &gen_opt_})
    for (const auto& s : opt->slots()) {
      ckpt.put_f32("opt/" + s.name + "/m1", s.param.shape(), s.m1);
      ckpt.put_f32("opt/" + s.name + "/m2", s.param.shape(), s.m2);
    }
  const std::uint64_t step = step_;
  ckpt.put_raw("opt/step", {reinterpret_cast<const std::uint8_t*>(&step), sizeof(step)});
  ckpt.save(path);
}

template net::Model<float> model_from_checkpoint(const net::Checkpoint&, RunConfig*);
template net::Model<double> model_from_checkpoint(const net::Checkpoint&, RunConfig*);
template Tensor<float> eval_noise(const RunConfig&, std::size_t, std::uint64_t);
template Tensor<double> eval_noise(const RunConfig&, std::size_t, std::uint64_t);

}  // namespace sdid::train
