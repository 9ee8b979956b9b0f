#pragma once

#include <filesystem>
#include <iosfwd>

#include "dmm/tensor.hpp"

namespace dmm {

// Binary tensor format, all integers little-endian:
//   "DMMT" | u8 version | u8 dtype (0=f32, 1=f64) | u32 rank |
//   rank x u64 dims | raw little-endian values
inline constexpr std::uint8_t kTensorFormatVersion = 1;

template <Real T>
void write_tensor(std::ostream& out, const Tensor<T>& tensor);

// Reads a tensor of either stored width and converts it to T.
template <Real T>
Tensor<T> read_tensor(std::istream& in);

// Stored element width of the tensor at the stream's current position;
// the stream position is restored.
DType peek_dtype(std::istream& in);

template <Real T>
void save_tensor(const std::filesystem::path& path, const Tensor<T>& tensor);

template <Real T>
Tensor<T> load_tensor(const std::filesystem::path& path);

}  // namespace dmm
