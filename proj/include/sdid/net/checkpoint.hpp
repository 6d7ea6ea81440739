#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "sdid/ndgrad/tensor.hpp"

namespace sdid::net {

template <typename T>
class Model;

enum class DType : std::uint8_t { f32 = 0, f64 = 1, raw = 2 };

struct CheckpointEntry {
  std::string name;
  DType dtype = DType::raw;
  nd::Shape dims;
  std::vector<std::uint8_t> payload;
};

/// Ordered list of named little-endian tensors:
///   "SDID" u32 version u32 count
///   per entry: u32 name_len, name, u8 dtype, u8 ndim, u32 dims[ndim], payload
class Checkpoint {
 public:
  static constexpr std::uint32_t kVersion = 1;

  void put_f32(const std::string& name, const nd::Shape& dims, std::span<const float> values);
  void put_f64(const std::string& name, const nd::Shape& dims, std::span<const double> values);
  void put_raw(const std::string& name, std::span<const std::uint8_t> bytes);
  void put_text(const std::string& name, const std::string& text);

  const CheckpointEntry* find(const std::string& name) const;
  const CheckpointEntry& at(const std::string& name) const;
  /// Numeric payload converted to T (f32 or f64 entries).
  template <typename T>
  std::vector<T> values(const std::string& name) const;
  std::string text(const std::string& name) const;

  const std::vector<CheckpointEntry>& entries() const { return entries_; }

  std::vector<std::uint8_t> serialize() const;
  static Checkpoint deserialize(std::span<const std::uint8_t> bytes);
  /// Writes to a temporary sibling and renames, so readers never see a partial file.
  void save(const std::string& path) const;
  static Checkpoint load(const std::string& path);

 private:
  void put(CheckpointEntry entry);
  std::vector<CheckpointEntry> entries_;
};

inline constexpr const char* kConfigEntry = "__config__";

/// Adds every model parameter under its registered name (f32 for float
/// models, f64 for double models).
template <typename T>
void store_params(Checkpoint& ckpt, const Model<T>& model);
/// Overwrites model parameters from the checkpoint; every parameter must be
/// present with a matching shape.
template <typename T>
void load_params(const Checkpoint& ckpt, Model<T>& model);

}  // namespace sdid::net
