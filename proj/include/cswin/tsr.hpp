#pragma once

// TSR1 tensor files: 8-byte magic "TSR1\0\0\0\0", u32 LE rank, rank x u64 LE
// extents, u8 dtype (0 = f32, 1 = f64), then raw LE scalars in row-major order.

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "cswin/errors.hpp"
#include "cswin/tensor.hpp"

namespace cswin {

static_assert(std::endian::native == std::endian::little, "TSR1 I/O assumes a little-endian host");

inline constexpr std::array<char, 8> kTsrMagic = {'T', 'S', 'R', '1', '\0', '\0', '\0', '\0'};

namespace detail {

template <class U>
void put_le(std::ostream& os, U v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(U));
}

template <class U>
U get_le(std::istream& is, const char* field) {
  U v{};
  if (!is.read(reinterpret_cast<char*>(&v), sizeof(U))) {
    throw FormatError(std::string("truncated stream while reading ") + field);
  }
  return v;
}

}  // namespace detail

template <class T>
void write_tensor(std::ostream& os, const Tensor<T>& t) {
  os.write(kTsrMagic.data(), kTsrMagic.size());
  detail::put_le<std::uint32_t>(os, static_cast<std::uint32_t>(t.rank()));
  for (std::size_t e : t.shape()) detail::put_le<std::uint64_t>(os, e);
  detail::put_le<std::uint8_t>(os, static_cast<std::uint8_t>(dtype_of<T>()));
  os.write(reinterpret_cast<const char*>(t.vec().data()), static_cast<std::streamsize>(t.numel() * sizeof(T)));
  if (!os) throw FormatError("failed writing tensor payload");
}

/// Size in bytes of the TSR1 encoding of `t`.
template <class T>
std::uint64_t encoded_size(const Tensor<T>& t) {
  return kTsrMagic.size() + 4 + 8 * t.rank() + 1 + t.numel() * sizeof(T);
}

template <class T>
Tensor<T> read_tensor(std::istream& is) {
  std::array<char, 8> magic{};
  if (!is.read(magic.data(), magic.size())) throw FormatError("truncated stream while reading TSR1 magic");
  if (magic != kTsrMagic) throw FormatError("bad TSR1 magic");
  const auto rank = detail::get_le<std::uint32_t>(is, "rank");
  if (rank > 16) throw FormatError("implausible rank " + std::to_string(rank));
  Shape shape(rank);
  std::uint64_t count = 1;
  for (auto& e : shape) {
    const auto v = detail::get_le<std::uint64_t>(is, "extent");
    if (v != 0 && count > (std::uint64_t{1} << 40) / v) throw FormatError("extent product overflows");
    e = static_cast<std::size_t>(v);
    count *= v;
  }
  const auto code = detail::get_le<std::uint8_t>(is, "dtype");
  if (code > 1) throw FormatError("unknown dtype code " + std::to_string(code));
  if (code != static_cast<std::uint8_t>(dtype_of<T>())) {
    throw FormatError(std::string("dtype mismatch: file holds ") + (code ? "f64" : "f32"));
  }
  std::vector<T> data(count);
  if (!is.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(count * sizeof(T)))) {
    throw FormatError("truncated stream while reading tensor payload");
  }
  return Tensor<T>(std::move(shape), std::move(data));
}

template <class T>
void save_tensor(const std::string& path, const Tensor<T>& t) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw FormatError("cannot open " + path + " for writing");
  write_tensor(os, t);
}

template <class T>
Tensor<T> load_tensor(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot open " + path);
  return read_tensor<T>(is);
}

}  // namespace cswin
