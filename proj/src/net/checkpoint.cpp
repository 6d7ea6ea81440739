#include "sdid/net/checkpoint.hpp"

#include <bit>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "sdid/net/model.hpp"

namespace sdid::net {

static_assert(std::endian::native == std::endian::little, "checkpoint IO assumes a little-endian host");

namespace {

template <typename V>
void append(std::vector<std::uint8_t>& out, V v) {
  const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
  out.insert(out.end(), p, p + sizeof(V));
}

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  template <typename V>
  V read() {
    V v;
    std::memcpy(&v, take(sizeof(V)).data(), sizeof(V));
    return v;
  }

  std::span<const std::uint8_t> take(std::size_t n) {
    if (n > bytes_.size() - pos_) throw FormatError("checkpoint truncated at byte " + std::to_string(pos_));
    auto s = bytes_.subspan(pos_, n);
    pos_ += n;
    return s;
  }

  bool done() const { return pos_ == bytes_.size(); }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

std::size_t element_size(DType t) { return t == DType::f32 ? 4 : t == DType::f64 ? 8 : 1; }

}  // namespace

void Checkpoint::put(CheckpointEntry entry) {
  if (entry.name.empty() || entry.name.size() > 65535) throw FormatError("checkpoint entry name length out of range");
  if (entry.dims.size() > 255) throw FormatError("checkpoint entry '" + entry.name + "' has too many dims");
  for (auto& e : entries_)
    if (e.name == entry.name) {
      e = std::move(entry);
      return;
    }
  entries_.push_back(std::move(entry));
}

void Checkpoint::put_f32(const std::string& name, const nd::Shape& dims, std::span<const float> values) {
  if (nd::shape_numel(dims) != values.size()) throw DimensionError("checkpoint entry '" + name + "' size mismatch");
  const auto* p = reinterpret_cast<const std::uint8_t*>(values.data());
  put({name, DType::f32, dims, {p, p + values.size_bytes()}});
}

void Checkpoint::put_f64(const std::string& name, const nd::Shape& dims, std::span<const double> values) {
  if (nd::shape_numel(dims) != values.size()) throw DimensionError("checkpoint entry '" + name + "' size mismatch");
  const auto* p = reinterpret_cast<const std::uint8_t*>(values.data());
  put({name, DType::f64, dims, {p, p + values.size_bytes()}});
}

void Checkpoint::put_raw(const std::string& name, std::span<const std::uint8_t> bytes) {
  put({name, DType::raw, {bytes.size()}, {bytes.begin(), bytes.end()}});
}

void Checkpoint::put_text(const std::string& name, const std::string& text) {
  put_raw(name, {reinterpret_cast<const std::uint8_t*>(text.data()), text.size()});
}

const CheckpointEntry* Checkpoint::find(const std::string& name) const {
  for (const auto& e : entries_)
    if (e.name == name) return &e;
  return nullptr;
}

const CheckpointEntry& Checkpoint::at(const std::string& name) const {
  const auto* e = find(name);
  if (!e) throw FormatError("checkpoint has no entry '" + name + "'");
  return *e;
}

template <typename T>
std::vector<T> Checkpoint::values(const std::string& name) const {
  const auto& e = at(name);
  const std::size_t n = nd::shape_numel(e.dims);
  std::vector<T> out(n);
  if (e.dtype == DType::f32) {
    std::vector<float> tmp(n);
    std::memcpy(tmp.data(), e.payload.data(), n * 4);
    for (std::size_t i = 0; i < n; ++i) out[i] = static_cast<T>(tmp[i]);
  } else if (e.dtype == DType::f64) {
    std::vector<double> tmp(n);
    std::memcpy(tmp.data(), e.payload.data(), n * 8);
    for (std::size_t i = 0; i < n; ++i) out[i] = static_cast<T>(tmp[i]);
  } else {
    throw FormatError("checkpoint entry '" + name + "' is not numeric");
  }
  return out;
}

template std::vector<float> Checkpoint::values<float>(const std::string&) const;
template std::vector<double> Checkpoint::values<double>(const std::string&) const;

std::string Checkpoint::text(const std::string& name) const {
  const auto& e = at(name);
  if (e.dtype != DType::raw) throw FormatError("checkpoint entry '" + name + "' is not raw bytes");
  return {e.payload.begin(), e.payload.end()};
}

std::vector<std::uint8_t> Checkpoint::serialize() const {
  std::vector<std::uint8_t> out{'S', 'D', 'I', 'D'};
  append(out, kVersion);
  append(out, static_cast<std::uint32_t>(entries_.size()));
  for (const auto& e : entries_) {
    append(out, static_cast<std::uint32_t>(e.name.size()));
    out.insert(out.end(), e.name.begin(), e.name.end());
    append(out, static_cast<std::uint8_t>(e.dtype));
    append(out, static_cast<std::uint8_t>(e.dims.size()));
    for (auto d : e.dims) append(out, static_cast<std::uint32_t>(d));
    out.insert(out.end(), e.payload.begin(), e.payload.end());
  }
  return out;
}

Checkpoint Checkpoint::deserialize(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  auto magic = r.take(4);
  if (std::memcmp(magic.data(), "SDID", 4) != 0) throw FormatError("not a checkpoint (bad magic)");
  const auto version = r.read<std::uint32_t>();
  if (version != kVersion)
    throw FormatError("unsupported checkpoint version " + std::to_string(version) + " (expected " +
                      std::to_string(kVersion) + ")");
  const auto count = r.read<std::uint32_t>();
  Checkpoint ckpt;
  for (std::uint32_t i = 0; i < count; ++i) {
    CheckpointEntry e;
    const auto len = r.read<std::uint32_t>();
    auto name = r.take(len);
    e.name.assign(name.begin(), name.end());
    const auto dtype = r.read<std::uint8_t>();
    if (dtype > 2) throw FormatError("checkpoint entry '" + e.name + "' has unknown dtype " + std::to_string(dtype));
    e.dtype = static_cast<DType>(dtype);
    const auto ndim = r.read<std::uint8_t>();
    std::size_t n = 1;
    for (std::uint8_t d = 0; d < ndim; ++d) {
      e.dims.push_back(r.read<std::uint32_t>());
      n *= e.dims.back();
    }
    auto payload = r.take(n * element_size(e.dtype));
    e.payload.assign(payload.begin(), payload.end());
    if (ckpt.find(e.name)) throw FormatError("checkpoint repeats entry '" + e.name + "'");
    ckpt.entries_.push_back(std::move(e));
  }
  if (!r.done()) throw FormatError("checkpoint has trailing bytes");
  return ckpt;
}

void Checkpoint::save(const std::string& path) const {
  const auto bytes = serialize();
  const std::string tmp = path + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot write '" + tmp + "'");
    f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw IoError("write failed for '" + tmp + "'");
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot move checkpoint into place at '" + path + "': " + ec.message());
}

Checkpoint Checkpoint::load(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot read '" + path + "'");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return deserialize(bytes);
}

template <typename T>
void store_params(Checkpoint& ckpt, const Model<T>& model) {
  for (const auto& e : model.params().entries()) {
    if constexpr (std::is_same_v<T, float>)
      ckpt.put_f32(e.name, e.tensor.shape(), e.tensor.data());
    else
      ckpt.put_f64(e.name, e.tensor.shape(), e.tensor.data());
  }
}

template <typename T>
void load_params(const Checkpoint& ckpt, Model<T>& model) {
  for (auto& e : model.params().entries()) {
    const auto& entry = ckpt.at(e.name);
    if (entry.dims != e.tensor.shape())
      throw FormatError("checkpoint entry '" + e.name + "' has shape " + nd::shape_str(entry.dims) + ", model expects " +
                        nd::shape_str(e.tensor.shape()));
    const auto v = ckpt.values<T>(e.name);
    e.tensor.values().assign(v.begin(), v.end());
  }
}

template void store_params(Checkpoint&, const Model<float>&);
template void store_params(Checkpoint&, const Model<double>&);
template void load_params(const Checkpoint&, Model<float>&);
template void load_params(const Checkpoint&, Model<double>&);

}  // namespace sdid::net
