#include "rectflow/io_util.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>

namespace rectflow::io {

namespace fs = std::filesystem;

void put_string(std::vector<std::uint8_t>& buf, const std::string& s) {
  put<std::uint32_t>(buf, static_cast<std::uint32_t>(s.size()));
  buf.insert(buf.end(), s.begin(), s.end());
}

std::string get_string(const std::vector<std::uint8_t>& buf,
                       std::size_t& pos) {
  const auto len = get<std::uint32_t>(buf, pos);
  if (pos + len > buf.size()) {
    throw IoError("truncated string at offset " + std::to_string(pos));
  }
  std::string s(reinterpret_cast<const char*>(buf.data() + pos), len);
  pos += len;
  return s;
}

void put_doubles(std::vector<std::uint8_t>& buf, const std::vector<double>& v) {
  const std::size_t at = buf.size();
  buf.resize(at + v.size() * sizeof(double));
  std::memcpy(buf.data() + at, v.data(), v.size() * sizeof(double));
}

std::vector<double> get_doubles(const std::vector<std::uint8_t>& buf,
                                std::size_t& pos, std::size_t n) {
  if (pos + n * sizeof(double) > buf.size()) {
    throw IoError("truncated value block at offset " + std::to_string(pos));
  }
  std::vector<double> v(n);
  std::memcpy(v.data(), buf.data() + pos, n * sizeof(double));
  pos += n * sizeof(double);
  return v;
}

std::vector<std::uint8_t> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "' for reading");
  in.seekg(0, std::ios::end);
  const auto size = in.tellg();
  in.seekg(0, std::ios::beg);
  std::vector<std::uint8_t> bytes(static_cast<std::size_t>(size));
  if (size > 0 &&
      !in.read(reinterpret_cast<char*>(bytes.data()), size)) {
    throw IoError("short read on '" + path + "'");
  }
  return bytes;
}

void write_file_atomic(const std::string& path,
                       const std::vector<std::uint8_t>& bytes) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open '" + tmp + "' for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("short write on '" + tmp + "'");
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) throw IoError("cannot rename '" + tmp + "' to '" + path + "'");
}

void write_file_atomic(const std::string& path, const std::string& text) {
  write_file_atomic(path,
                    std::vector<std::uint8_t>(text.begin(), text.end()));
}

bool file_exists(const std::string& path) {
  std::error_code ec;
  return fs::exists(path, ec);
}

void ensure_directory(const std::string& path) {
  std::error_code ec;
  fs::create_directories(path, ec);
  if (ec) throw IoError("cannot create directory '" + path + "'");
}

}  // namespace rectflow::io
