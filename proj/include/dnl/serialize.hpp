#pragma once

#include <filesystem>
#include <iosfwd>

#include "dnl/tensor.hpp"

namespace dnl {

// Tensor wire format, little-endian:
//   "DNLT" | u32 version (=1) | u8 rank | u64 extents[rank] | f64 payload[numel]
inline constexpr std::uint32_t kTensorFormatVersion = 1;

void write_tensor(std::ostream& os, const Tensor& t);
Tensor read_tensor(std::istream& is);

void save_tensor(const std::filesystem::path& path, const Tensor& t);
Tensor load_tensor(const std::filesystem::path& path);

}  // namespace dnl
