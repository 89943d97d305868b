#pragma once

#include <cstdint>
#include <cstring>
#include <string>
#include <vector>

#include "rectflow/errors.hpp"

namespace rectflow::io {

// Little-endian scalar append/read on byte buffers.
template <class T>
void put(std::vector<std::uint8_t>& buf, T value) {
  static_assert(std::is_trivially_copyable_v<T>);
  const std::size_t at = buf.size();
  buf.resize(at + sizeof(T));
  std::memcpy(buf.data() + at, &value, sizeof(T));
}

template <class T>
T get(const std::vector<std::uint8_t>& buf, std::size_t& pos) {
  if (pos + sizeof(T) > buf.size()) {
    throw IoError("truncated file: wanted " + std::to_string(sizeof(T)) +
                  " bytes at offset " + std::to_string(pos));
  }
  T value;
  std::memcpy(&value, buf.data() + pos, sizeof(T));
  pos += sizeof(T);
  return value;
}

void put_string(std::vector<std::uint8_t>& buf, const std::string& s);
std::string get_string(const std::vector<std::uint8_t>& buf, std::size_t& pos);

void put_doubles(std::vector<std::uint8_t>& buf, const std::vector<double>& v);
std::vector<double> get_doubles(const std::vector<std::uint8_t>& buf,
                                std::size_t& pos, std::size_t n);

std::vector<std::uint8_t> read_file(const std::string& path);
// Write-temp-then-rename; partial writes never clobber existing artifacts.
void write_file_atomic(const std::string& path,
                       const std::vector<std::uint8_t>& bytes);
void write_file_atomic(const std::string& path, const std::string& text);
bool file_exists(const std::string& path);
void ensure_directory(const std::string& path);

}  // namespace rectflow::io
