#pragma once

#include <cstdint>
#include <istream>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include "hnfl/errors.hpp"
#include "hnfl/tensor.hpp"

namespace hnfl {

/// Binary stream helpers shared by the checkpoint writers. All readers bound
/// every length they trust before allocating, so a corrupt or truncated
/// stream raises io_error instead of aborting on a huge allocation.

inline void write_bytes(std::ostream& out, const void* p, std::size_t n) {
  out.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
}

inline void read_bytes(std::istream& in, void* p, std::size_t n) {
  in.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
  if (static_cast<std::size_t>(in.gcount()) != n) {
    throw io_error("truncated checkpoint stream");
  }
}

template <class T>
void write_pod(std::ostream& out, T v) {
  write_bytes(out, &v, sizeof(T));
}

template <class T>
T read_pod(std::istream& in) {
  T v{};
  read_bytes(in, &v, sizeof(T));
  return v;
}

inline void write_string(std::ostream& out, const std::string& s) {
  write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(s.size()));
  write_bytes(out, s.data(), s.size());
}

inline std::string read_string(std::istream& in) {
  auto n = read_pod<std::uint32_t>(in);
  if (n > (1u << 24)) throw io_error("corrupt string length in checkpoint");
  std::string s(n, '\0');
  if (n) read_bytes(in, s.data(), n);
  return s;
}

// A default-constructed tensor has an empty shape and no elements, which is
// distinct from a zero-dimensional scalar, so the element count is stored
// explicitly.
inline void write_tensor(std::ostream& out, const Tensor& t) {
  write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(t.shape.size()));
  for (auto d : t.shape) write_pod<std::int64_t>(out, d);
  write_pod<std::uint64_t>(out, t.data.size());
  write_bytes(out, t.data.data(), t.data.size() * sizeof(double));
}

inline Tensor read_tensor(std::istream& in) {
  auto nd = read_pod<std::uint32_t>(in);
  if (nd > 8) throw io_error("corrupt tensor rank in checkpoint");
  std::vector<std::int64_t> shape(nd);
  for (auto& d : shape) {
    d = read_pod<std::int64_t>(in);
    if (d < 0 || d > (std::int64_t{1} << 32)) throw io_error("corrupt tensor shape in checkpoint");
  }
  auto count = read_pod<std::uint64_t>(in);
  if (count > (std::uint64_t{1} << 32)) throw io_error("corrupt tensor size in checkpoint");
  if (nd > 0 && count != static_cast<std::uint64_t>(Tensor::numel_of(shape))) {
    throw io_error("tensor size does not match its shape in checkpoint");
  }
  Tensor t;
  t.shape = std::move(shape);
  t.data.resize(count);
  if (count) read_bytes(in, t.data.data(), count * sizeof(double));
  return t;
}

}  // namespace hnfl
