#include "sdid/data/synth.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <numbers>

#include "sdid/errors.hpp"

namespace sdid::data {

static_assert(std::endian::native == std::endian::little, "archive IO assumes a little-endian host");

namespace {

constexpr char kMagic[4] = {'S', 'D', 'A', 'T'};
constexpr std::size_t kHeaderBytes = 4 + 4 + 8 + 4 * 3;

struct Shape2D {
  bool circle;
  double cx, cy, rx, ry;  // centre, radius (circle uses rx) or half extents
  std::vector<double> value;
};

double clamp01(double v) { return std::clamp(v, 0.0, 1.0); }

// Smooth background: offset plus linear and quadratic terms.
struct Background {
  std::vector<double> offset;
  double gx, gy, q;
  double at(std::size_t c, double u, double v) const {
    return offset[c] + gx * (u - 0.5) + gy * (v - 0.5) + q * ((u - 0.5) * (u - 0.5) + (v - 0.5) * (v - 0.5));
  }
};

Background random_background(nd::Rng& rng, std::size_t channels, double amplitude) {
  Background b;
  for (std::size_t c = 0; c < channels; ++c) b.offset.push_back(rng.uniform(0.25, 0.75));
  b.gx = rng.uniform(-amplitude, amplitude);
  b.gy = rng.uniform(-amplitude, amplitude);
  b.q = rng.uniform(-amplitude, amplitude);
  return b;
}

struct Wave {
  double fx, fy, phase, amp;
};

std::vector<Wave> random_waves(nd::Rng& rng, std::size_t count, double total_amp) {
  std::vector<Wave> w;
  for (std::size_t k = 0; k < count; ++k) {
    // at most 0.15 cycles per pixel, so every component spans >= 6 pixels
    const double f = rng.uniform(0.02, 0.15), theta = rng.uniform(0.0, std::numbers::pi);
    w.push_back({f * std::cos(theta), f * std::sin(theta), rng.uniform(0.0, 2 * std::numbers::pi),
                 total_amp / double(count) * rng.uniform(0.5, 1.0)});
  }
  return w;
}

double wave_value(const std::vector<Wave>& waves, double x, double y) {
  double s = 0;
  for (const auto& w : waves) s += w.amp * std::sin(2 * std::numbers::pi * (w.fx * x + w.fy * y) + w.phase);
  return s;
}

// Fraction of the pixel centred at (x,y) covered by the shape, from the
// signed distance to its boundary.
double coverage(const Shape2D& s, double x, double y) {
  if (s.circle) {
    const double d = std::hypot(x - s.cx, y - s.cy) - s.rx;
    return std::clamp(0.5 - d, 0.0, 1.0);
  }
  const double dx = std::abs(x - s.cx) - s.rx, dy = std::abs(y - s.cy) - s.ry;
  return std::clamp(0.5 - std::max(dx, dy), 0.0, 1.0);
}

std::vector<Shape2D> random_shapes(nd::Rng& rng, std::size_t size, std::size_t channels, const Background& bg) {
  const std::size_t count = 2 + rng.below(5);
  const double n = double(size);
  std::vector<Shape2D> shapes;
  for (std::size_t k = 0; k < count; ++k) {
    Shape2D s;
    s.circle = rng.uniform() < 0.5;
    s.cx = rng.uniform(0.1 * n, 0.9 * n);
    s.cy = rng.uniform(0.1 * n, 0.9 * n);
    s.rx = rng.uniform(0.08 * n, 0.3 * n);
    s.ry = s.circle ? s.rx : rng.uniform(0.08 * n, 0.3 * n);
    for (std::size_t c = 0; c < channels; ++c) {
      const double under = bg.at(c, s.cx / n, s.cy / n);
      double v = rng.uniform();
      // keep each shape visibly distinct from what lies beneath it
      if (std::abs(v - under) < 0.3) v = under < 0.5 ? std::min(1.0, under + 0.3 + 0.2 * rng.uniform())
                                                     : std::max(0.0, under - 0.3 - 0.2 * rng.uniform());
      s.value.push_back(v);
    }
    shapes.push_back(std::move(s));
  }
  return shapes;
}

template <typename V>
void put(std::ostream& out, V v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(V));
}

template <typename V>
V get(std::istream& in, const std::string& path) {
  V v;
  in.read(reinterpret_cast<char*>(&v), sizeof(V));
  if (!in) throw FormatError("archive '" + path + "' is truncated");
  return v;
}

std::size_t sample_bytes(const ArchiveHeader& h) {
  return 8 + 4 + 2 * std::size_t(h.channels) * h.height * h.width * 4;
}

}  // namespace

ImageKind parse_image_kind(const std::string& name) {
  if (name == "gradient") return ImageKind::gradient;
  if (name == "shapes") return ImageKind::shapes;
  if (name == "sinusoid") return ImageKind::sinusoid;
  if (name == "mixed") return ImageKind::mixed;
  throw ConfigError("unknown image kind '" + name + "'");
}

Image gen_clean_image(std::uint64_t seed, ImageKind kind, std::size_t size, std::size_t channels) {
  if (size == 0 || channels == 0) throw DimensionError("gen_clean_image needs a positive size and channel count");
  nd::Rng rng(seed);
  Image img(channels, size, size);
  const double n = double(size);

  if (kind == ImageKind::sinusoid) {
    std::vector<std::vector<Wave>> waves;
    std::vector<double> offset;
    const std::size_t count = 2 + rng.below(2);
    for (std::size_t c = 0; c < channels; ++c) {
      offset.push_back(rng.uniform(0.4, 0.6));
      waves.push_back(random_waves(rng, count, 0.35));
    }
    for (std::size_t c = 0; c < channels; ++c)
      for (std::size_t y = 0; y < size; ++y)
        for (std::size_t x = 0; x < size; ++x)
          img.at(c, y, x) = float(clamp01(offset[c] + wave_value(waves[c], double(x), double(y))));
    return img;
  }

  const auto bg = random_background(rng, channels, kind == ImageKind::gradient ? 0.6 : 0.3);
  std::vector<Shape2D> shapes;
  if (kind != ImageKind::gradient) shapes = random_shapes(rng, size, channels, bg);
  std::vector<Wave> texture;
  std::size_t textured = shapes.size();
  if (kind == ImageKind::mixed) {
    texture = random_waves(rng, 2, rng.uniform(0.05, 0.12));
    textured = shapes.empty() ? 0 : rng.below(shapes.size() + 1);  // == size(): texture the background
  }

  for (std::size_t y = 0; y < size; ++y)
    for (std::size_t x = 0; x < size; ++x) {
      const double px = double(x) + 0.5, py = double(y) + 0.5;
      for (std::size_t c = 0; c < channels; ++c) {
        double v = bg.at(c, px / n, py / n);
        if (kind == ImageKind::mixed && textured == shapes.size()) v += wave_value(texture, double(x), double(y));
        for (std::size_t k = 0; k < shapes.size(); ++k) {
          const double cov = coverage(shapes[k], px, py);
          if (cov <= 0) continue;
          double inside = shapes[k].value[c];
          if (kind == ImageKind::mixed && k == textured) inside += wave_value(texture, double(x), double(y));
          v = v * (1 - cov) + inside * cov;
        }
        img.at(c, y, x) = float(clamp01(v));
      }
    }
  return img;
}

Image add_awgn(const Image& clean, double sigma_255, nd::Rng& rng) {
  if (!(sigma_255 >= 0)) throw ConfigError("noise sigma must be non-negative");
  Image out = clean;
  const double s = sigma_255 / 255.0;
  if (s == 0) return out;
  for (auto& v : out.pixels) v = float(double(v) + s * rng.normal());
  return out;
}

Image crop_patch(const Image& img, std::size_t top, std::size_t left, std::size_t size) {
  if (size == 0 || top + size > img.height || left + size > img.width)
    throw DimensionError("crop (" + std::to_string(top) + "," + std::to_string(left) + "," + std::to_string(size) +
                         ") does not fit a " + std::to_string(img.height) + "x" + std::to_string(img.width) +
                         " image");
  Image out(img.channels, size, size);
  for (std::size_t c = 0; c < img.channels; ++c)
    for (std::size_t y = 0; y < size; ++y)
      std::copy_n(&img.pixels[(c * img.height + top + y) * img.width + left], size, &out.at(c, y, 0));
  return out;
}

TrainSample make_sample(std::uint64_t sample_seed, ImageKind kind, std::size_t size, std::size_t channels,
                        double sigma_255) {
  TrainSample s;
  s.seed = sample_seed;
  s.sigma = float(sigma_255 / 255.0);
  s.clean = gen_clean_image(nd::derive_seed(sample_seed, 1, 0), kind, size, channels);
  nd::Rng noise(nd::derive_seed(sample_seed, 2, 0));
  s.noisy = add_awgn(s.clean, sigma_255, noise);
  return s;
}

std::uint64_t train_sample_seed(std::uint64_t run_seed, std::size_t index) {
  if (index >= (1ULL << 31)) throw ConfigError("too many samples for one split");
  return (run_seed << 32) + index;
}

std::uint64_t val_sample_seed(std::uint64_t run_seed, std::size_t index) {
  if (index >= (1ULL << 31)) throw ConfigError("too many samples for one split");
  return (run_seed << 32) + (1ULL << 31) + index;
}

double pick_sigma(std::uint64_t sample_seed, const std::vector<double>& sigmas) {
  if (sigmas.empty()) throw ConfigError("sigma list is empty");
  return sigmas[nd::derive_seed(sample_seed, 3, 0) % sigmas.size()];
}

ArchiveWriter::ArchiveWriter(const std::string& path, std::size_t channels, std::size_t height, std::size_t width)
    : path_(path), tmp_(path + ".tmp") {
  header_.channels = std::uint32_t(channels);
  header_.height = std::uint32_t(height);
  header_.width = std::uint32_t(width);
  out_.open(tmp_, std::ios::binary | std::ios::trunc);
  if (!out_) throw IoError("cannot write '" + tmp_ + "'");
  out_.write(kMagic, 4);
  put(out_, header_.version);
  put(out_, header_.count);
  put(out_, header_.channels);
  put(out_, header_.height);
  put(out_, header_.width);
}

void ArchiveWriter::write(const TrainSample& s) {
  if (closed_) throw IoError("archive '" + path_ + "' is already closed");
  for (const Image* img : {&s.clean, &s.noisy})
    if (img->channels != header_.channels || img->height != header_.height || img->width != header_.width)
      throw DimensionError("sample shape does not match archive header");
  put(out_, s.seed);
  put(out_, s.sigma);
  out_.write(reinterpret_cast<const char*>(s.clean.pixels.data()), std::streamsize(s.clean.size() * 4));
  out_.write(reinterpret_cast<const char*>(s.noisy.pixels.data()), std::streamsize(s.noisy.size() * 4));
  if (!out_) throw IoError("write failed for '" + tmp_ + "'");
  ++header_.count;
}

void ArchiveWriter::close() {
  if (closed_) return;
  closed_ = true;
  out_.seekp(8);
  put(out_, header_.count);
  out_.close();
  if (!out_) throw IoError("write failed for '" + tmp_ + "'");
  std::error_code ec;
  std::filesystem::rename(tmp_, path_, ec);
  if (ec) throw IoError("cannot move archive into place at '" + path_ + "': " + ec.message());
}

ArchiveWriter::~ArchiveWriter() {
  if (!closed_) {
    out_.close();
    std::error_code ec;
    std::filesystem::remove(tmp_, ec);
  }
}

ArchiveReader::ArchiveReader(const std::string& path) : path_(path), in_(path, std::ios::binary) {
  if (!in_) throw IoError("cannot read '" + path + "'");
  char magic[4];
  in_.read(magic, 4);
  if (!in_ || std::memcmp(magic, kMagic, 4) != 0) throw FormatError("'" + path + "' is not a sample archive");
  header_.version = get<std::uint32_t>(in_, path);
  if (header_.version != 1) throw FormatError("unsupported archive version " + std::to_string(header_.version));
  header_.count = get<std::uint64_t>(in_, path);
  header_.channels = get<std::uint32_t>(in_, path);
  header_.height = get<std::uint32_t>(in_, path);
  header_.width = get<std::uint32_t>(in_, path);
  if (header_.channels == 0 || header_.height == 0 || header_.width == 0)
    throw FormatError("archive '" + path + "' has an empty sample shape");
  std::error_code ec;
  const auto size = std::filesystem::file_size(path, ec);
  if (ec || size != kHeaderBytes + header_.count * sample_bytes(header_))
    throw FormatError("archive '" + path + "' length does not match its header");
}

bool ArchiveReader::next(TrainSample& s) {
  if (read_ == header_.count) return false;
  s.seed = get<std::uint64_t>(in_, path_);
  s.sigma = get<float>(in_, path_);
  for (Image* img : {&s.clean, &s.noisy}) {
    *img = Image(header_.channels, header_.height, header_.width);
    in_.read(reinterpret_cast<char*>(img->pixels.data()), std::streamsize(img->size() * 4));
    if (!in_) throw FormatError("archive '" + path_ + "' is truncated");
  }
  ++read_;
  return true;
}

void write_archive(const std::string& path, const std::vector<TrainSample>& samples) {
  if (samples.empty()) throw DimensionError("write_archive needs at least one sample");
  const auto& first = samples.front().clean;
  ArchiveWriter w(path, first.channels, first.height, first.width);
  for (const auto& s : samples) w.write(s);
  w.close();
}

std::vector<TrainSample> read_archive(const std::string& path) {
  ArchiveReader r(path);
  std::vector<TrainSample> out;
  out.reserve(r.header().count);
  TrainSample s;
  while (r.next(s)) out.push_back(s);
  return out;
}

void write_pnm(const std::string& path, const Image& img) {
  if (img.channels != 1 && img.channels != 3) throw DimensionError("PNM export needs 1 or 3 channels");
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot write '" + path + "'");
  f << (img.channels == 1 ? "P5" : "P6") << "\n" << img.width << " " << img.height << "\n255\n";
  std::vector<unsigned char> bytes(img.size());
  for (std::size_t y = 0; y < img.height; ++y)
    for (std::size_t x = 0; x < img.width; ++x)
      for (std::size_t c = 0; c < img.channels; ++c)
        bytes[(y * img.width + x) * img.channels + c] =
            static_cast<unsigned char>(std::lround(clamp01(img.at(c, y, x)) * 255.0));
  f.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
  if (!f) throw IoError("write failed for '" + path + "'");
}

Image read_pnm(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot read '" + path + "'");
  auto token = [&]() {
    std::string t;
    int ch;
    while ((ch = f.get()) != EOF) {
      if (ch == '#') {
        while ((ch = f.get()) != EOF && ch != '\n') {
        }
        continue;
      }
      if (std::isspace(ch)) {
        if (!t.empty()) break;
        continue;
      }
      t.push_back(char(ch));
    }
    if (t.empty()) throw FormatError("'" + path + "' has a truncated PNM header");
    return t;
  };
  const std::string magic = token();
  if (magic != "P5" && magic != "P6") throw FormatError("'" + path + "' is not a binary PGM/PPM");
  std::size_t w = 0, h = 0, maxval = 0;
  try {
    w = std::stoul(token());
    h = std::stoul(token());
    maxval = std::stoul(token());
  } catch (const std::logic_error&) {
    throw FormatError("'" + path + "' has a malformed PNM header");
  }
  if (w == 0 || h == 0 || maxval == 0 || maxval > 255) throw FormatError("'" + path + "' needs 8-bit samples");
  const std::size_t c = magic == "P5" ? 1 : 3;
  std::vector<unsigned char> bytes(w * h * c);
  f.read(reinterpret_cast<char*>(bytes.data()), std::streamsize(bytes.size()));
  if (!f) throw FormatError("'" + path + "' pixel data is truncated");
  Image img(c, h, w);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t k = 0; k < c; ++k)
        img.at(k, y, x) = float(double(bytes[(y * w + x) * c + k]) / double(maxval));
  return img;
}

std::pair<std::size_t, std::size_t> build_dataset(const RunConfig& cfg, const std::string& dir) {
  cfg.validate();
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create output directory '" + dir + "': " + ec.message());
  const auto kind = parse_image_kind(cfg.data.kind);
  const std::size_t c = cfg.model.in_channels;
  {
    ArchiveWriter w(dir + "/train.sdat", c, cfg.data.train_size, cfg.data.train_size);
    for (std::size_t i = 0; i < cfg.data.train_count; ++i) {
      const auto seed = train_sample_seed(cfg.seed, i);
      w.write(make_sample(seed, kind, cfg.data.train_size, c, pick_sigma(seed, cfg.train.sigmas)));
    }
    w.close();
  }
  {
    ArchiveWriter w(dir + "/val.sdat", c, cfg.data.val_size, cfg.data.val_size);
    for (std::size_t i = 0; i < cfg.data.val_count; ++i) {
      const auto seed = val_sample_seed(cfg.seed, i);
      w.write(make_sample(seed, kind, cfg.data.val_size, c, pick_sigma(seed, cfg.train.sigmas)));
    }
    w.close();
  }
  return {cfg.data.train_count, cfg.data.val_count};
}

}  // namespace sdid::data
