#include "storyanchor/binary_io.hpp"

#include <bit>
#include <limits>

#include "storyanchor/error.hpp"

namespace storyanchor::numerics {

void ByteWriter::u16(uint16_t v) {
  for (int i = 0; i < 2; ++i) {
    u8(static_cast<uint8_t>(v >> (8 * i)));
  }
}

void ByteWriter::u32(uint32_t v) {
  for (int i = 0; i < 4; ++i) {
    u8(static_cast<uint8_t>(v >> (8 * i)));
  }
}

void ByteWriter::u64(uint64_t v) {
  for (int i = 0; i < 8; ++i) {
    u8(static_cast<uint8_t>(v >> (8 * i)));
  }
}

void ByteWriter::f64(double v) { u64(std::bit_cast<uint64_t>(v)); }

void ByteWriter::f32(float v) { u32(std::bit_cast<uint32_t>(v)); }

void ByteWriter::str(std::string_view s) {
  u32(static_cast<uint32_t>(s.size()));
  raw(s);
}

void ByteWriter::tensor(const Tensor& t) {
  u32(static_cast<uint32_t>(t.rank()));
  for (const size_t extent : t.shape()) {
    u64(extent);
  }
  for (const double v : t.values()) {
    f64(v);
  }
}

const char* ByteReader::take(size_t n) {
  if (n > remaining()) {
    fail(ErrorCategory::kFormat, what_ + ": truncated (needed " + std::to_string(n) + " bytes at offset " +
                                     std::to_string(pos_) + ", " + std::to_string(remaining()) + " left)");
  }
  const char* p = data_.data() + pos_;
  pos_ += n;
  return p;
}

uint8_t ByteReader::u8() { return static_cast<uint8_t>(*take(1)); }

uint16_t ByteReader::u16() {
  const char* p = take(2);
  uint16_t v = 0;
  for (int i = 0; i < 2; ++i) {
    v |= static_cast<uint16_t>(static_cast<uint8_t>(p[i])) << (8 * i);
  }
  return v;
}

uint32_t ByteReader::u32() {
  const char* p = take(4);
  uint32_t v = 0;
  for (int i = 0; i < 4; ++i) {
    v |= static_cast<uint32_t>(static_cast<uint8_t>(p[i])) << (8 * i);
  }
  return v;
}

uint64_t ByteReader::u64() {
  const char* p = take(8);
  uint64_t v = 0;
  for (int i = 0; i < 8; ++i) {
    v |= static_cast<uint64_t>(static_cast<uint8_t>(p[i])) << (8 * i);
  }
  return v;
}

double ByteReader::f64() { return std::bit_cast<double>(u64()); }

float ByteReader::f32() { return std::bit_cast<float>(u32()); }

std::string_view ByteReader::raw(size_t n) { return {take(n), n}; }

std::string ByteReader::str() {
  const uint32_t n = u32();
  return std::string(raw(n));
}

Tensor ByteReader::tensor() {
  const uint32_t rank = u32();
  if (rank > 8) {
    fail(ErrorCategory::kFormat, what_ + ": implausible tensor rank " + std::to_string(rank));
  }
  Shape shape(rank);
  size_t count = 1;
  for (auto& extent : shape) {
    extent = u64();
    if (extent != 0 && count > remaining() / extent) {
      fail(ErrorCategory::kFormat, what_ + ": tensor extent exceeds remaining payload");
    }
    count *= extent;
  }
  if (count > remaining() / 8) {
    fail(ErrorCategory::kFormat, what_ + ": truncated tensor payload");
  }
  std::vector<double> values(count);
  for (double& v : values) {
    v = f64();
  }
  return Tensor(std::move(shape), std::move(values));
}

void write_params(ByteWriter& out, const ParamStore& params, const NameFilter& filter) {
  uint32_t count = 0;
  for (const auto& entry : params) {
    if (!filter || filter(entry.first)) {
      ++count;
    }
  }
  out.u32(count);
  for (const auto& [name, param] : params) {
    if (filter && !filter(name)) {
      continue;
    }
    out.str(name);
    out.tensor(param.value);
  }
}

ParamStore read_params(ByteReader& in) {
  ParamStore params;
  const uint32_t count = in.u32();
  for (uint32_t i = 0; i < count; ++i) {
    std::string name = in.str();
    params.add(name, in.tensor());
  }
  return params;
}

void write_adam(ByteWriter& out, const AdamState& state) {
  out.f64(state.config.lr);
  out.f64(state.config.beta1);
  out.f64(state.config.beta2);
  out.f64(state.config.epsilon);
  out.u64(state.step);
  out.u32(static_cast<uint32_t>(state.first_moment.size()));
  for (const auto& [name, m] : state.first_moment) {
    out.str(name);
    out.tensor(m);
    out.tensor(state.second_moment.at(name));
  }
}

AdamState read_adam(ByteReader& in) {
  AdamState state;
  state.config.lr = in.f64();
  state.config.beta1 = in.f64();
  state.config.beta2 = in.f64();
  state.config.epsilon = in.f64();
  state.step = in.u64();
  const uint32_t count = in.u32();
  for (uint32_t i = 0; i < count; ++i) {
    std::string name = in.str();
    state.first_moment.emplace(name, in.tensor());
    state.second_moment.emplace(name, in.tensor());
  }
  return state;
}

std::string serialize_params(const ParamStore& params, const NameFilter& filter) {
  ByteWriter out;
  write_params(out, params, filter);
  return out.take();
}

uint64_t fingerprint(std::string_view bytes) {
  uint64_t hash = 0xCBF29CE484222325ULL;
  for (const char c : bytes) {
    hash ^= static_cast<unsigned char>(c);
    hash *= 0x100000001B3ULL;
  }
  return hash;
}

}  // namespace storyanchor::numerics
