#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace apgan {

class FileError : public std::runtime_error {
 public:
  explicit FileError(const std::string& msg) : std::runtime_error(msg) {}
};

namespace detail {

static_assert(std::endian::native == std::endian::little,
              "serialized formats are little-endian; big-endian hosts need byte swaps");

inline void put_u32(std::string& buf, std::uint32_t v) {
  char b[4];
  std::memcpy(b, &v, 4);
  buf.append(b, 4);
}

inline void put_u64(std::string& buf, std::uint64_t v) {
  char b[8];
  std::memcpy(b, &v, 8);
  buf.append(b, 8);
}

inline void put_f64(std::string& buf, double v) {
  char b[8];
  std::memcpy(b, &v, 8);
  buf.append(b, 8);
}

class ByteReader {
 public:
  ByteReader(const std::string& bytes, std::string context)
      : bytes_(bytes), context_(std::move(context)) {}

  std::uint32_t u32() { return read_as<std::uint32_t>(); }
  std::uint64_t u64() { return read_as<std::uint64_t>(); }
  double f64() { return read_as<double>(); }

  std::string raw(std::size_t n) {
    need(n);
    std::string out = bytes_.substr(pos_, n);
    pos_ += n;
    return out;
  }

  std::size_t remaining() const { return bytes_.size() - pos_; }
  std::size_t position() const { return pos_; }

 private:
  template <typename T>
  T read_as() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }

  void need(std::size_t n) {
    if (pos_ + n > bytes_.size()) {
      throw FileError(context_ + ": truncated (needed " + std::to_string(n) + " bytes at offset " +
                      std::to_string(pos_) + ", file has " + std::to_string(bytes_.size()) + ")");
    }
  }

  const std::string& bytes_;
  std::string context_;
  std::size_t pos_ = 0;
};

inline std::uint64_t fnv1a64(const char* data, std::size_t n) {
  std::uint64_t h = 1469598103934665603ull;
  for (std::size_t i = 0; i < n; ++i) {
    h ^= static_cast<unsigned char>(data[i]);
    h *= 1099511628211ull;
  }
  return h;
}

inline void write_file(const std::string& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FileError("cannot open for writing: " + path);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw FileError("write failed: " + path);
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FileError("cannot open: " + path);
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return bytes;
}

}  // namespace detail

}  // namespace apgan
