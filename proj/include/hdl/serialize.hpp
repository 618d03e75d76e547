#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "hdl/tensor.hpp"

namespace hdl {

// Flat binary container of named tensors:
//   magic "HDLT" | u32 version=1 | u64 tensor count
//   per tensor: u32 name length | name bytes | u8 dtype (0=f32, 1=f64)
//               | u32 rank | u64 dims[rank] | raw little-endian payload
// All integers little-endian.
namespace detail {

inline void put_bytes(std::string& out, std::uint64_t v, int nbytes) {
  for (int i = 0; i < nbytes; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

class ByteReader {
 public:
  ByteReader(const std::string& buf, const std::string& src) : buf_(buf), src_(src) {}

  std::uint64_t u(int nbytes) {
    HDL_CHECK(pos_ + static_cast<std::size_t>(nbytes) <= buf_.size(),
              "parameter file ", src_, ": truncated at byte ", pos_);
    std::uint64_t v = 0;
    for (int i = 0; i < nbytes; ++i)
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf_[pos_++])) << (8 * i);
    return v;
  }

  std::string str(std::size_t n) {
    HDL_CHECK(pos_ + n <= buf_.size(), "parameter file ", src_, ": truncated at byte ", pos_);
    std::string s = buf_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  bool done() const { return pos_ == buf_.size(); }

 private:
  const std::string& buf_;
  std::string src_;
  std::size_t pos_ = 0;
};

template <typename T>
constexpr std::uint8_t dtype_tag() {
  static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>,
                "parameter container supports float and double tensors");
  return std::is_same_v<T, float> ? 0 : 1;
}

}  // namespace detail

template <typename T>
using NamedTensors = std::vector<std::pair<std::string, Tensor<T>>>;

template <typename T>
void save_params(const std::string& path, const NamedTensors<T>& tensors) {
  std::string out;
  out += "HDLT";
  detail::put_bytes(out, 1, 4);
  detail::put_bytes(out, tensors.size(), 8);
  for (const auto& [name, tensor] : tensors) {
    detail::put_bytes(out, name.size(), 4);
    out += name;
    out.push_back(static_cast<char>(detail::dtype_tag<T>()));
    detail::put_bytes(out, tensor.shape.size(), 4);
    for (std::int64_t d : tensor.shape) detail::put_bytes(out, static_cast<std::uint64_t>(d), 8);
    for (T v : tensor.data) {
      if constexpr (std::is_same_v<T, float>)
        detail::put_bytes(out, std::bit_cast<std::uint32_t>(v), 4);
      else
        detail::put_bytes(out, std::bit_cast<std::uint64_t>(v), 8);
    }
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  HDL_CHECK(f.good(), "cannot open ", path, " for writing");
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  HDL_CHECK(f.good(), "write failed for ", path);
}

template <typename T>
NamedTensors<T> load_params(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  HDL_CHECK(f.good(), "cannot open parameter file ", path);
  std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  detail::ByteReader r(buf, path);
  HDL_CHECK(r.str(4) == "HDLT", "parameter file ", path, ": bad magic");
  const std::uint64_t version = r.u(4);
  HDL_CHECK(version == 1, "parameter file ", path, ": unsupported version ", version);
  const std::uint64_t count = r.u(8);
  NamedTensors<T> out;
  out.reserve(count);
  for (std::uint64_t t = 0; t < count; ++t) {
    const std::uint64_t name_len = r.u(4);
    std::string name = r.str(name_len);
    const std::uint8_t dtype = static_cast<std::uint8_t>(r.u(1));
    HDL_CHECK(dtype == detail::dtype_tag<T>(), "parameter file ", path, ": tensor '", name,
              "' has dtype tag ", int(dtype), " but the run expects tag ",
              int(detail::dtype_tag<T>()), " (precision mode mismatch)");
    const std::uint32_t rank = static_cast<std::uint32_t>(r.u(4));
    Shape shape(rank);
    for (std::uint32_t i = 0; i < rank; ++i) shape[i] = static_cast<std::int64_t>(r.u(8));
    Tensor<T> tensor(shape);
    for (T& v : tensor.data) {
      if constexpr (std::is_same_v<T, float>)
        v = std::bit_cast<float>(static_cast<std::uint32_t>(r.u(4)));
      else
        v = std::bit_cast<double>(r.u(8));
    }
    out.emplace_back(std::move(name), std::move(tensor));
  }
  HDL_CHECK(r.done(), "parameter file ", path, ": trailing bytes after last tensor");
  return out;
}

}  // namespace hdl
