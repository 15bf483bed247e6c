#pragma once

// Binary record container shared by checkpoints and dataset files.
//
//   magic     8 bytes  "GBCN0001"
//   meta_len  u64 LE
//   metadata  meta_len bytes of UTF-8 JSON
//   n_arrays  u32 LE
//   per array:
//     name_len u32 LE, name bytes
//     dtype    u8 (1 = float64)
//     ndim     u32 LE, dims u64 LE x ndim
//     payload  float64 LE x prod(dims)
//   crc32     u32 LE, IEEE CRC-32 of every byte after the magic

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "npgrid/ndarray.hpp"

namespace npgrid {

inline constexpr char kContainerMagic[9] = "GBCN0001";
inline constexpr std::uint8_t kDtypeFloat64 = 1;

struct Container {
  nlohmann::json metadata = nlohmann::json::object();
  std::vector<std::pair<std::string, NdArray>> arrays;

  const NdArray& array(const std::string& name) const;
};

std::vector<std::uint8_t> encode_container(const Container& container);
/// Throws FormatError on magic/version mismatch, truncation or CRC failure.
Container decode_container(const std::vector<std::uint8_t>& bytes);

void write_container(const std::filesystem::path& path, const Container& container);
Container read_container(const std::filesystem::path& path);

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes);

}  // namespace npgrid
