// Copyright 2026 The MadyGraph Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//    http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or  implied.
// See the License for the specific language governing permissions and
// limitations under the License.
// =============================================================================
//
// ".tns" binary tensor container:
//   "TNSR" | u8 version=1 | u8 dtype (1=f32, 2=f64) | u8 ndim | u8 reserved=0
//   | ndim x u32 LE extents | row-major LE payload

#pragma once

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>

#include "madygraph/tensor.hpp"

namespace mdg::tns {

inline constexpr char kMagic[4] = {'T', 'N', 'S', 'R'};
inline constexpr std::uint8_t kVersion = 1;

namespace detail {

template <class U>
void put_le(std::vector<char>& out, U v) {
  using Bits = std::conditional_t<sizeof(U) == 4, std::uint32_t, std::uint64_t>;
  const Bits bits = std::bit_cast<Bits>(v);
  for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xFF));
}

template <class U>
U get_le(const unsigned char* p) {
  using Bits = std::conditional_t<sizeof(U) == 4, std::uint32_t, std::uint64_t>;
  Bits bits = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) bits |= static_cast<Bits>(p[i]) << (8 * i);
  return std::bit_cast<U>(bits);
}

}  // namespace detail

template <std::floating_point T>
std::vector<char> encode(const Tensor<T>& t) {
  if (t.ndim() > 255) throw FormatError("tns: rank exceeds 255");
  std::vector<char> out(kMagic, kMagic + 4);
  out.push_back(static_cast<char>(kVersion));
  out.push_back(static_cast<char>(dtype_of<T>()));
  out.push_back(static_cast<char>(t.ndim()));
  out.push_back(0);
  for (auto d : t.shape()) {
    if (d > 0xFFFFFFFFull) throw FormatError("tns: extent exceeds u32");
    detail::put_le(out, static_cast<std::uint32_t>(d));
  }
  out.reserve(out.size() + t.numel() * sizeof(T));
  for (T v : t.data()) detail::put_le(out, v);
  return out;
}

/// Decodes a .tns buffer; payloads of either dtype are converted to T.
template <std::floating_point T>
Tensor<T> decode(std::span<const char> buf) {
  const auto* p = reinterpret_cast<const unsigned char*>(buf.data());
  if (buf.size() < 8 || std::memcmp(p, kMagic, 4) != 0) throw FormatError("tns: bad magic");
  if (p[4] != kVersion) throw FormatError("tns: unsupported version " + std::to_string(p[4]));
  const std::uint8_t dtype = p[5];
  if (dtype != 1 && dtype != 2) throw FormatError("tns: unknown dtype code " + std::to_string(dtype));
  if (p[7] != 0) throw FormatError("tns: reserved byte must be zero");
  const std::size_t ndim = p[6];
  std::size_t pos = 8;
  if (buf.size() < pos + 4 * ndim) throw FormatError("tns: truncated header");
  Shape shape(ndim);
  for (std::size_t i = 0; i < ndim; ++i, pos += 4) shape[i] = detail::get_le<std::uint32_t>(p + pos);
  const std::size_t n = mdg::numel(shape);
  const std::size_t width = dtype == 1 ? 4 : 8;
  if (buf.size() != pos + n * width)
    throw FormatError("tns: payload is " + std::to_string(buf.size() - pos) + " bytes, expected " +
                      std::to_string(n * width));
  std::vector<T> data(n);
  for (std::size_t i = 0; i < n; ++i, pos += width)
    data[i] = dtype == 1 ? static_cast<T>(detail::get_le<float>(p + pos))
                         : static_cast<T>(detail::get_le<double>(p + pos));
  return Tensor<T>(std::move(shape), std::move(data));
}

template <std::floating_point T>
void save(const Tensor<T>& t, const std::filesystem::path& path) {
  const auto bytes = encode(t);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("tns: cannot open " + path.string() + " for writing");
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw std::runtime_error("tns: write failed for " + path.string());
}

template <std::floating_point T>
Tensor<T> load(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("tns: cannot open " + path.string());
  std::vector<char> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  try {
    return decode<T>(bytes);
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

}  // namespace mdg::tns
