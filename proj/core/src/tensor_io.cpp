#include "dmm/tensor_io.hpp"

#include <array>
#include <bit>
#include <fstream>
#include <istream>
#include <ostream>

#include "dmm/error.hpp"

namespace dmm {

namespace {

constexpr std::array<char, 4> kMagic{'D', 'M', 'M', 'T'};

template <class U>
void put_le(std::ostream& out, U value) {
  std::array<char, sizeof(U)> bytes{};
  for (std::size_t i = 0; i < sizeof(U); ++i) {
    bytes[i] = static_cast<char>((value >> (8 * i)) & 0xFF);
  }
  out.write(bytes.data(), bytes.size());
}

template <class U>
U get_le(std::istream& in) {
  std::array<unsigned char, sizeof(U)> bytes{};
  in.read(reinterpret_cast<char*>(bytes.data()), bytes.size());
  if (!in) throw DataError("tensor stream truncated");
  U value = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) value |= static_cast<U>(bytes[i]) << (8 * i);
  return value;
}

template <class S>
void read_values(std::istream& in, std::size_t count, auto& out) {
  using Bits = std::conditional_t<sizeof(S) == 4, std::uint32_t, std::uint64_t>;
  for (std::size_t i = 0; i < count; ++i) {
    out[i] = static_cast<std::remove_reference_t<decltype(out[i])>>(std::bit_cast<S>(get_le<Bits>(in)));
  }
}

}  // namespace

template <Real T>
void write_tensor(std::ostream& out, const Tensor<T>& tensor) {
  if (tensor.empty()) throw ShapeError("cannot serialize an empty tensor");
  out.write(kMagic.data(), kMagic.size());
  put_le<std::uint8_t>(out, kTensorFormatVersion);
  put_le<std::uint8_t>(out, static_cast<std::uint8_t>(dtype_of<T>()));
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(tensor.rank()));
  for (const auto d : tensor.shape()) put_le<std::uint64_t>(out, d);
  using Bits = std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>;
  for (const T v : tensor.data()) put_le<Bits>(out, std::bit_cast<Bits>(v));
  if (!out) throw DataError("failed writing tensor stream");
}

DType peek_dtype(std::istream& in) {
  const auto pos = in.tellg();
  std::array<char, 4> magic{};
  in.read(magic.data(), magic.size());
  if (!in || magic != kMagic) throw DataError("not a DMMT tensor stream");
  get_le<std::uint8_t>(in);
  const auto dtype = get_le<std::uint8_t>(in);
  in.seekg(pos);
  if (dtype > 1) throw DataError("unknown tensor dtype byte " + std::to_string(dtype));
  return static_cast<DType>(dtype);
}

template <Real T>
Tensor<T> read_tensor(std::istream& in) {
  std::array<char, 4> magic{};
  in.read(magic.data(), magic.size());
  if (!in || magic != kMagic) throw DataError("not a DMMT tensor stream");
  const auto version = get_le<std::uint8_t>(in);
  if (version != kTensorFormatVersion) {
    throw DataError("unsupported tensor format version " + std::to_string(version));
  }
  const auto dtype = get_le<std::uint8_t>(in);
  const auto rank = get_le<std::uint32_t>(in);
  if (rank == 0 || rank > 16) throw DataError("invalid tensor rank " + std::to_string(rank));
  Shape shape(rank);
  for (auto& d : shape) {
    d = static_cast<std::size_t>(get_le<std::uint64_t>(in));
    if (d == 0) throw DataError("tensor dimension of zero");
  }
  std::vector<T> values(shape_size(shape));
  if (dtype == static_cast<std::uint8_t>(DType::f32)) {
    read_values<float>(in, values.size(), values);
  } else if (dtype == static_cast<std::uint8_t>(DType::f64)) {
    read_values<double>(in, values.size(), values);
  } else {
    throw DataError("unknown tensor dtype byte " + std::to_string(dtype));
  }
  return Tensor<T>(std::move(shape), std::move(values));
}

template <Real T>
void save_tensor(const std::filesystem::path& path, const Tensor<T>& tensor) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot open " + path.string() + " for writing");
  write_tensor(out, tensor);
}

template <Real T>
Tensor<T> load_tensor(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open tensor file " + path.string());
  try {
    return read_tensor<T>(in);
  } catch (const DataError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

template void write_tensor<float>(std::ostream&, const Tensor<float>&);
template void write_tensor<double>(std::ostream&, const Tensor<double>&);
template Tensor<float> read_tensor<float>(std::istream&);
template Tensor<double> read_tensor<double>(std::istream&);
template void save_tensor<float>(const std::filesystem::path&, const Tensor<float>&);
template void save_tensor<double>(const std::filesystem::path&, const Tensor<double>&);
template Tensor<float> load_tensor<float>(const std::filesystem::path&);
template Tensor<double> load_tensor<double>(const std::filesystem::path&);

}  // namespace dmm
