#pragma once

// Binary tensor files:
//   "VTF1" | dtype u8 (1 = f64) | rank u8 | 2 zero bytes | rank x u32 LE extents | f64 LE payload
// Decoding is total: any byte string either yields a tensor or a ParseError
// naming the offending field.

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>
#include <string>
#include <vector>

#include "vidkern/core/tensor.hpp"

namespace vidkern {

inline constexpr std::uint8_t kTensorMagic[4] = {'V', 'T', 'F', '1'};
inline constexpr std::uint8_t kDtypeF64 = 1;
inline constexpr std::size_t kTensorHeaderBytes = 8;

namespace detail {

inline void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

inline std::uint32_t get_u32(const std::uint8_t* p) {
  return static_cast<std::uint32_t>(p[0]) | static_cast<std::uint32_t>(p[1]) << 8 |
         static_cast<std::uint32_t>(p[2]) << 16 | static_cast<std::uint32_t>(p[3]) << 24;
}

inline void put_f64(std::vector<std::uint8_t>& out, double v) {
  const auto bits = std::bit_cast<std::uint64_t>(v);
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(bits >> (8 * i)));
}

inline double get_f64(const std::uint8_t* p) {
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return std::bit_cast<double>(bits);
}

}  // namespace detail

inline std::vector<std::uint8_t> encode_tensor(const Tensor& t) {
  if (t.empty()) throw ContractError("encode_tensor: empty tensor");
  std::vector<std::uint8_t> out(std::begin(kTensorMagic), std::end(kTensorMagic));
  out.push_back(kDtypeF64);
  out.push_back(static_cast<std::uint8_t>(t.rank()));
  out.push_back(0);
  out.push_back(0);
  for (std::size_t d : t.dims()) {
    if (d > std::numeric_limits<std::uint32_t>::max()) throw ContractError("encode_tensor: extent exceeds 32 bits");
    detail::put_u32(out, static_cast<std::uint32_t>(d));
  }
  out.reserve(out.size() + 8 * t.size());
  for (double v : t.data()) detail::put_f64(out, v);
  return out;
}

inline Tensor decode_tensor(const std::uint8_t* bytes, std::size_t n) {
  if (n < 4 || std::memcmp(bytes, kTensorMagic, 4) != 0) throw ParseError("magic", "expected \"VTF1\"");
  if (n < 5) throw ParseError("dtype", "truncated header");
  if (bytes[4] != kDtypeF64) throw ParseError("dtype", "unsupported dtype " + std::to_string(bytes[4]));
  if (n < 6) throw ParseError("rank", "truncated header");
  const std::size_t rank = bytes[5];
  if (rank < 1 || rank > kMaxRank) throw ParseError("rank", "rank " + std::to_string(rank) + " outside 1..5");
  if (n < kTensorHeaderBytes) throw ParseError("reserved", "truncated header");
  if (bytes[6] != 0 || bytes[7] != 0) throw ParseError("reserved", "reserved bytes must be zero");
  if (n < kTensorHeaderBytes + 4 * rank) throw ParseError("extents", "truncated extents");
  Shape dims(rank);
  std::size_t count = 1;
  for (std::size_t i = 0; i < rank; ++i) {
    dims[i] = detail::get_u32(bytes + kTensorHeaderBytes + 4 * i);
    if (dims[i] == 0) throw ParseError("extents", "extent " + std::to_string(i) + " is zero");
    // Bound the element count by the bytes actually present before multiplying further.
    if (dims[i] > (n / 8) / count) throw ParseError("payload", "truncated payload");
    count *= dims[i];
  }
  const std::size_t offset = kTensorHeaderBytes + 4 * rank;
  const std::size_t available = n - offset;
  if (available < 8 * count) throw ParseError("payload", "truncated payload");
  if (available > 8 * count) throw ParseError("payload", "trailing bytes after payload");
  std::vector<double> values(count);
  for (std::size_t i = 0; i < count; ++i) values[i] = detail::get_f64(bytes + offset + 8 * i);
  return Tensor(std::move(dims), std::move(values));
}

inline Tensor decode_tensor(const std::vector<std::uint8_t>& bytes) { return decode_tensor(bytes.data(), bytes.size()); }

inline void write_tensor(const std::string& path, const Tensor& t) {
  const auto bytes = encode_tensor(t);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot open " + path + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("write failed for " + path);
}

inline Tensor read_tensor(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path);
  const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  try {
    return decode_tensor(bytes);
  } catch (const ParseError& e) {
    throw ParseError(e.field(), std::string(e.what()).substr(e.field().size() + 2) + " in " + path);
  }
}

}  // namespace vidkern
