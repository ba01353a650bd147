#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "hidepet/numcore/tensor.hpp"

namespace hidepet {

// Binary tensor container shared by checkpoints and saved CL states.
//
//   "HIDEPET1" | u32 version | u32 count |
//   count x ( u16 name_len | name | u8 rank | u64 dims[rank] | f32 data[] )
//
// Everything little-endian, payload row-major.

inline constexpr char kRecordMagic[8] = {'H', 'I', 'D', 'E', 'P', 'E', 'T', '1'};
inline constexpr std::uint32_t kRecordVersion = 1;

struct TensorRecord {
  std::string name;
  Tensor<float> tensor;
};

std::vector<std::uint8_t> encode_records(const std::vector<TensorRecord>& records);
std::vector<TensorRecord> decode_records(const std::vector<std::uint8_t>& bytes);

void write_records(const std::string& path, const std::vector<TensorRecord>& records);
std::vector<TensorRecord> read_records(const std::string& path);

/// FNV-1a over shape and raw bytes; used to assert frozen parameters stay put.
template <typename Real>
std::uint64_t tensor_hash(const Tensor<Real>& t, std::uint64_t h = 0xcbf29ce484222325ULL) {
  auto feed = [&h](const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= b[i];
      h *= 0x100000001b3ULL;
    }
  };
  for (std::size_t d : t.shape()) {
    const std::uint64_t v = d;
    feed(&v, sizeof v);
  }
  feed(t.data().data(), t.numel() * sizeof(Real));
  return h;
}

}  // namespace hidepet
