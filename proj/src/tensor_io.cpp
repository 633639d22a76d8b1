// SPDX-License-Identifier: Apache-2.0
#include "drat/tensor_io.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

namespace drat {

namespace {

constexpr char kMagic[4] = {'T', 'N', 'S', 'R'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void put(std::vector<std::uint8_t>& out, T value) {
  static_assert(std::is_trivially_copyable_v<T>);
  std::uint8_t bytes[sizeof(T)];
  std::memcpy(bytes, &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(std::begin(bytes), std::end(bytes));
  out.insert(out.end(), std::begin(bytes), std::end(bytes));
}

template <typename T>
T get(const std::vector<std::uint8_t>& in, std::size_t& pos) {
  if (pos + sizeof(T) > in.size()) throw IoError("TNSR: truncated payload");
  std::uint8_t bytes[sizeof(T)];
  std::memcpy(bytes, in.data() + pos, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(std::begin(bytes), std::end(bytes));
  pos += sizeof(T);
  T value;
  std::memcpy(&value, bytes, sizeof(T));
  return value;
}

}  // namespace

std::vector<std::uint8_t> encode_tensor(const Tensor& t, DType dtype) {
  std::vector<std::uint8_t> out(std::begin(kMagic), std::end(kMagic));
  put<std::uint32_t>(out, kVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
  for (auto d : t.shape()) put<std::uint64_t>(out, d);
  out.push_back(static_cast<std::uint8_t>(dtype));
  out.reserve(out.size() + t.size() * (dtype == DType::F64 ? 8 : 4));
  for (double v : t.data()) {
    if (dtype == DType::F64) {
      put<double>(out, v);
    } else {
      put<float>(out, static_cast<float>(v));
    }
  }
  return out;
}

Tensor decode_tensor(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0) throw IoError("TNSR: bad magic");
  std::size_t pos = 4;
  const auto version = get<std::uint32_t>(bytes, pos);
  if (version != kVersion) throw IoError("TNSR: unsupported version " + std::to_string(version));
  const auto ndim = get<std::uint32_t>(bytes, pos);
  Shape shape(ndim);
  for (auto& d : shape) d = static_cast<std::size_t>(get<std::uint64_t>(bytes, pos));
  const auto code = get<std::uint8_t>(bytes, pos);
  if (code != 1 && code != 2) throw IoError("TNSR: unknown dtype code " + std::to_string(code));
  const std::size_t n = shape_size(shape);
  std::vector<double> data(n);
  for (auto& v : data) v = code == 2 ? get<double>(bytes, pos) : static_cast<double>(get<float>(bytes, pos));
  if (pos != bytes.size()) throw IoError("TNSR: trailing bytes");
  return Tensor::from(std::move(shape), std::move(data));
}

void save_tensor(const std::filesystem::path& path, const Tensor& t, DType dtype) {
  const auto bytes = encode_tensor(t, dtype);
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open " + path.string() + " for writing");
  os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!os) throw IoError("failed writing " + path.string());
}

Tensor load_tensor(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  return decode_tensor(bytes);
}

}  // namespace drat
