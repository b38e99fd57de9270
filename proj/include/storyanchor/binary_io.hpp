#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <string_view>

#include "storyanchor/adam.hpp"
#include "storyanchor/autograd.hpp"

namespace storyanchor::numerics {

/// Little-endian byte sink. Layouts are written field by field, never by
/// memcpy of structs, so the bytes do not depend on the host ABI.
class ByteWriter {
 public:
  void u8(uint8_t v) { bytes_.push_back(static_cast<char>(v)); }
  void u16(uint16_t v);
  void u32(uint32_t v);
  void u64(uint64_t v);
  void f64(double v);
  void f32(float v);
  void raw(std::string_view data) { bytes_.append(data); }
  void str(std::string_view s);  // u32 length + bytes
  void tensor(const Tensor& t);  // u32 rank, u64 extents, f64 values

  const std::string& bytes() const noexcept { return bytes_; }
  std::string take() { return std::move(bytes_); }

 private:
  std::string bytes_;
};

/// Bounds-checked reader; any overrun is a format-error naming `what`.
class ByteReader {
 public:
  ByteReader(std::string_view data, std::string what) : data_(data), what_(std::move(what)) {}

  uint8_t u8();
  uint16_t u16();
  uint32_t u32();
  uint64_t u64();
  double f64();
  float f32();
  std::string_view raw(size_t n);
  std::string str();
  Tensor tensor();

  size_t remaining() const noexcept { return data_.size() - pos_; }
  bool at_end() const noexcept { return pos_ == data_.size(); }

 private:
  const char* take(size_t n);

  std::string_view data_;
  size_t pos_ = 0;
  std::string what_;
};

using NameFilter = std::function<bool(const std::string&)>;

/// Parameter records: u32 count, then per parameter name + tensor. Trainable
/// flags are not stored; they belong to the training stage, not the values.
/// Only parameters accepted by `filter` are written.
void write_params(ByteWriter& out, const ParamStore& params, const NameFilter& filter = nullptr);
ParamStore read_params(ByteReader& in);

void write_adam(ByteWriter& out, const AdamState& state);
AdamState read_adam(ByteReader& in);

/// Serialized bytes of the selected parameters; equal bytes mean equal values.
std::string serialize_params(const ParamStore& params, const NameFilter& filter = nullptr);

/// 64-bit FNV-1a, used to identify checkpoints.
uint64_t fingerprint(std::string_view bytes);

}  // namespace storyanchor::numerics
