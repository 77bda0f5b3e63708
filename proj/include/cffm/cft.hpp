#pragma once

// CFT1 tensor files:
//   "CFT1" | u8 dtype (0=f32, 1=f64, 2=u8) | u8 rank | rank x u32le extents |
//   raw little-endian row-major payload

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <vector>

#include "cffm/tensor.hpp"

namespace cffm::cft {

enum class DType : std::uint8_t { F32 = 0, F64 = 1, U8 = 2 };

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

template <typename T>
std::vector<std::uint8_t> encode(const Tensor<T>& t);

/// Decodes into T. Floating payloads convert between f32 and f64; u8
/// payloads only decode as u8.
template <typename T>
Tensor<T> decode(const std::vector<std::uint8_t>& bytes);

DType peek_dtype(const std::vector<std::uint8_t>& bytes);

template <typename T>
void save(const std::filesystem::path& path, const Tensor<T>& t);

template <typename T>
Tensor<T> load(const std::filesystem::path& path);

std::vector<std::uint8_t> read_bytes(const std::filesystem::path& path);

}  // namespace cffm::cft
