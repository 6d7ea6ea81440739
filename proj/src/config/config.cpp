#include "sdid/config.hpp"

#include <charconv>
#include <concepts>
#include <fstream>
#include <functional>
#include <sstream>

#include "sdid/errors.hpp"

namespace sdid {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <std::unsigned_integral U>
std::string fmt(U v) {
  return std::to_string(v);
}

std::string fmt(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

std::string fmt(const std::vector<double>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + fmt(v[i]);
  return out;
}

template <std::unsigned_integral U>
void parse_into(const std::string& key, const std::string& text, U& out) {
  const char* end = text.data() + text.size();
  auto res = std::from_chars(text.data(), end, out);
  if (res.ec != std::errc() || res.ptr != end || text.empty())
    throw ConfigError("key '" + key + "': expected a non-negative integer, got '" + text + "'");
}

void parse_into(const std::string& key, const std::string& text, double& out) {
  const char* end = text.data() + text.size();
  auto res = std::from_chars(text.data(), end, out);
  if (res.ec != std::errc() || res.ptr != end || text.empty())
    throw ConfigError("key '" + key + "': expected a number, got '" + text + "'");
}

void parse_into(const std::string& key, const std::string& text, std::vector<double>& out) {
  std::vector<double> values;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    double v = 0;
    parse_into(key, trim(item), v);
    values.push_back(v);
  }
  if (values.empty()) throw ConfigError("key '" + key + "': expected a comma-separated list");
  out = std::move(values);
}

void parse_into(const std::string&, const std::string& text, std::string& out) { out = text; }

struct Field {
  std::string key;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&)> set;
};

#define SDID_FIELD(name, member)                                                            \
  Field {                                                                                   \
    name, [](const RunConfig& c) { return fmt(c.member); },                                 \
        [](RunConfig& c, const std::string& v) { parse_into(name, v, c.member); }           \
  }

std::string fmt(const std::string& s) { return s; }

const std::vector<Field>& fields() {
  static const std::vector<Field> table{
      SDID_FIELD("preset", preset),
      SDID_FIELD("seed", seed),
      SDID_FIELD("model.in_channels", model.in_channels),
      SDID_FIELD("model.base_channels", model.base_channels),
      SDID_FIELD("model.num_scales", model.num_scales),
      SDID_FIELD("model.window", model.window),
      SDID_FIELD("model.heads", model.heads),
      SDID_FIELD("model.mlp_ratio", model.mlp_ratio),
      SDID_FIELD("model.style_dim", model.style_dim),
      SDID_FIELD("model.gen_input_dim", model.gen_input_dim),
      SDID_FIELD("model.sc_blocks", model.sc_blocks),
      SDID_FIELD("model.sc_reduce_factor", model.sc_reduce_factor),
      SDID_FIELD("model.gap_dim", model.gap_dim),
      SDID_FIELD("model.eps", model.eps),
      SDID_FIELD("train.batch", train.batch),
      SDID_FIELD("train.crop", train.crop),
      SDID_FIELD("train.steps", train.steps),
      SDID_FIELD("train.lr_main", train.lr_main),
      SDID_FIELD("train.lr_gen", train.lr_gen),
      SDID_FIELD("train.lr_min", train.lr_min),
      SDID_FIELD("train.lambda1", train.lambda1),
      SDID_FIELD("train.lambda2", train.lambda2),
      SDID_FIELD("train.lambda_sty", train.lambda_sty),
      SDID_FIELD("train.grad_clip", train.grad_clip),
      SDID_FIELD("train.sigmas", train.sigmas),
      SDID_FIELD("train.checkpoint_every", train.checkpoint_every),
      SDID_FIELD("train.log_every", train.log_every),
      SDID_FIELD("train.val_samples", train.val_samples),
      SDID_FIELD("data.train_count", data.train_count),
      SDID_FIELD("data.val_count", data.val_count),
      SDID_FIELD("data.train_size", data.train_size),
      SDID_FIELD("data.val_size", data.val_size),
      SDID_FIELD("data.kind", data.kind),
      SDID_FIELD("analysis.lambdas", analysis.lambdas),
      SDID_FIELD("analysis.mix_pairs", analysis.mix_pairs),
      SDID_FIELD("analysis.style_images", analysis.style_images),
      SDID_FIELD("analysis.feature_images", analysis.feature_images),
      SDID_FIELD("analysis.bins", analysis.bins),
  };
  return table;
}

#undef SDID_FIELD

void positive(std::size_t v, const char* key) {
  if (v == 0) throw ConfigError(std::string("key '") + key + "' must be positive");
}

}  // namespace

void ModelConfig::validate() const {
  positive(base_channels, "model.base_channels");
  positive(num_scales, "model.num_scales");
  positive(window, "model.window");
  positive(heads, "model.heads");
  positive(mlp_ratio, "model.mlp_ratio");
  positive(style_dim, "model.style_dim");
  positive(gen_input_dim, "model.gen_input_dim");
  positive(sc_blocks, "model.sc_blocks");
  positive(sc_reduce_factor, "model.sc_reduce_factor");
  positive(gap_dim, "model.gap_dim");
  if (in_channels != 1 && in_channels != 3) throw ConfigError("key 'model.in_channels' must be 1 or 3");
  if (style_dim % 4 != 0) throw ConfigError("key 'model.style_dim' must be divisible by 4");
  if (encoded_channels() % sc_reduce_factor != 0)
    throw ConfigError("key 'model.sc_reduce_factor' must divide the encoded channel count " +
                      std::to_string(encoded_channels()));
  for (std::size_t s = 0, c = base_channels; s <= num_scales; ++s, c *= 2)
    if (c % heads != 0)
      throw ConfigError("key 'model.heads' must divide every stage width; " + std::to_string(c) + " is not divisible");
  if (!(eps > 0)) throw ConfigError("key 'model.eps' must be positive");
}

void TrainConfig::validate(const ModelConfig& model) const {
  positive(batch, "train.batch");
  positive(crop, "train.crop");
  if (crop % model.size_multiple() != 0)
    throw ConfigError("key 'train.crop' must be a multiple of " + std::to_string(model.size_multiple()));
  for (double v : {lr_main, lr_gen, lr_min, lambda1, lambda2, lambda_sty, grad_clip})
    if (!(v >= 0)) throw ConfigError("learning rates, loss weights and train.grad_clip must be non-negative");
  for (double s : sigmas)
    if (!(s >= 0)) throw ConfigError("key 'train.sigmas' must hold non-negative values");
  positive(log_every, "train.log_every");
  positive(checkpoint_every, "train.checkpoint_every");
}

void DataConfig::validate(const ModelConfig& model) const {
  positive(train_count, "data.train_count");
  positive(val_count, "data.val_count");
  if (val_size % model.size_multiple() != 0)
    throw ConfigError("key 'data.val_size' must be a multiple of " + std::to_string(model.size_multiple()));
  if (kind != "gradient" && kind != "shapes" && kind != "sinusoid" && kind != "mixed")
    throw ConfigError("key 'data.kind' must be one of gradient, shapes, sinusoid, mixed");
}

void AnalysisConfig::validate() const {
  for (double l : lambdas)
    if (!(l >= 0 && l <= 1)) throw ConfigError("key 'analysis.lambdas' values must lie in [0,1]");
  positive(bins, "analysis.bins");
}

RunConfig RunConfig::desk() { return RunConfig{}; }

RunConfig RunConfig::paper() {
  RunConfig c;
  c.preset = "paper";
  c.model.in_channels = 3;
  c.model.base_channels = 32;
  c.model.window = 8;
  c.model.heads = 4;
  c.model.style_dim = 256;
  c.model.gen_input_dim = 32;
  c.model.gap_dim = 2048;
  c.train.batch = 6;
  c.train.crop = 128;
  c.train.steps = 200000;
  c.train.lr_gen = 1e-6;
  c.train.sigmas = {15.0, 25.0, 50.0};
  c.train.checkpoint_every = 5000;
  c.data.train_size = 160;
  c.data.val_size = 128;
  return c;
}

void RunConfig::validate() const {
  if (preset != "desk" && preset != "paper") throw ConfigError("key 'preset' must be desk or paper");
  model.validate();
  train.validate(model);
  data.validate(model);
  if (data.train_size < train.crop) throw ConfigError("key 'data.train_size' must be at least train.crop");
  analysis.validate();
}

std::string RunConfig::render() const {
  std::string out;
  for (const auto& f : fields()) out += f.key + " = " + f.get(*this) + "\n";
  return out;
}

void RunConfig::set(const std::string& key, const std::string& value) {
  for (const auto& f : fields())
    if (f.key == key) {
      f.set(*this, value);
      return;
    }
  throw ConfigError("unknown config key '" + key + "'");
}

const std::vector<std::string>& RunConfig::keys() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> v;
    for (const auto& f : fields()) v.push_back(f.key);
    return v;
  }();
  return names;
}

RunConfig RunConfig::parse(const std::string& text) {
  std::vector<std::pair<std::string, std::string>> pairs;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(lineno) + ": expected 'key = value'");
    pairs.emplace_back(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  RunConfig cfg = desk();
  for (const auto& [k, v] : pairs)
    if (k == "preset") {
      if (v == "paper") cfg = paper();
      else if (v != "desk") throw ConfigError("key 'preset' must be desk or paper, got '" + v + "'");
    }
  for (const auto& [k, v] : pairs)
    if (k != "preset") cfg.set(k, v);
  cfg.validate();
  return cfg;
}

RunConfig RunConfig::load(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot read config file '" + path + "'");
  std::stringstream ss;
  ss << f.rdbuf();
  return parse(ss.str());
}

}  // namespace sdid
