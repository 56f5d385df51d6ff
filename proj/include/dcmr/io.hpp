#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <string>
#include <vector>

#include <fcntl.h>
#include <unistd.h>

#include "dcmr/errors.hpp"

namespace dcmr {

// Little-endian byte packing and durable file writes. All multi-byte fields
// in the project's binary formats are little-endian regardless of host.

class ByteWriter {
public:
  void u8(std::uint8_t x) { buf_.push_back(static_cast<char>(x)); }
  void u16(std::uint16_t x) {
    for (int i = 0; i < 2; ++i) buf_.push_back(static_cast<char>((x >> (8 * i)) & 0xff));
  }
  void u32(std::uint32_t x) {
    for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<char>((x >> (8 * i)) & 0xff));
  }
  void u64(std::uint64_t x) {
    for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<char>((x >> (8 * i)) & 0xff));
  }
  void f32(float x) { u32(std::bit_cast<std::uint32_t>(x)); }
  void f64(double x) { u64(std::bit_cast<std::uint64_t>(x)); }
  void bytes(const void* data, size_t n) {
    const char* p = static_cast<const char*>(data);
    buf_.insert(buf_.end(), p, p + n);
  }
  void str(const std::string& s) { bytes(s.data(), s.size()); }

  const std::string& data() const { return buf_; }

private:
  std::string buf_;
};

// Cursor over a byte buffer; every failure names the offending offset.
class ByteReader {
public:
  ByteReader(const std::string& data, std::string what) : data_(data), what_(std::move(what)) {}

  std::uint64_t offset() const { return pos_; }
  bool at_end() const { return pos_ == data_.size(); }
  size_t remaining() const { return data_.size() - pos_; }

  std::uint8_t u8() { return static_cast<std::uint8_t>(take(1)[0]); }
  std::uint16_t u16() { return static_cast<std::uint16_t>(gather(2)); }
  std::uint32_t u32() { return static_cast<std::uint32_t>(gather(4)); }
  std::uint64_t u64() { return gather(8); }
  float f32() { return std::bit_cast<float>(u32()); }
  double f64() { return std::bit_cast<double>(u64()); }

  std::string str(size_t n) {
    const char* p = take(n);
    return std::string(p, n);
  }

  [[noreturn]] void fail(const std::string& msg) const { throw FormatError(what_ + ": " + msg, pos_); }

private:
  const char* take(size_t n) {
    if (pos_ + n > data_.size())
      throw FormatError(what_ + ": truncated, needed " + std::to_string(n) + " more bytes", pos_);
    const char* p = data_.data() + pos_;
    pos_ += n;
    return p;
  }
  std::uint64_t gather(size_t n) {
    const char* p = take(n);
    std::uint64_t x = 0;
    for (size_t i = 0; i < n; ++i) x |= static_cast<std::uint64_t>(static_cast<unsigned char>(p[i])) << (8 * i);
    return x;
  }

  const std::string& data_;
  std::string what_;
  std::uint64_t pos_ = 0;
};

inline std::string read_file_bytes(const std::string& path) {
  int fd = ::open(path.c_str(), O_RDONLY);
  if (fd < 0) throw IoError("cannot open " + path + " for reading");
  std::string out;
  char chunk[1 << 16];
  ssize_t n;
  while ((n = ::read(fd, chunk, sizeof chunk)) > 0) out.append(chunk, static_cast<size_t>(n));
  ::close(fd);
  if (n < 0) throw IoError("read failed for " + path);
  return out;
}

// Writes and fsyncs. Throws IoError with the path on any failure.
inline void write_file_bytes(const std::string& path, const std::string& data) {
  int fd = ::open(path.c_str(), O_WRONLY | O_CREAT | O_TRUNC, 0644);
  if (fd < 0) throw IoError("cannot open " + path + " for writing");
  size_t off = 0;
  while (off < data.size()) {
    ssize_t n = ::write(fd, data.data() + off, data.size() - off);
    if (n < 0) {
      ::close(fd);
      throw IoError("write failed for " + path);
    }
    off += static_cast<size_t>(n);
  }
  if (::fsync(fd) != 0) {
    ::close(fd);
    throw IoError("fsync failed for " + path);
  }
  ::close(fd);
}

// Temp file in the target directory, fsync, then atomic rename.
inline void write_file_atomic(const std::string& path, const std::string& data) {
  std::filesystem::path target(path);
  std::string tmp = (target.parent_path() / (target.filename().string() + ".tmp")).string();
  write_file_bytes(tmp, data);
  if (std::rename(tmp.c_str(), path.c_str()) != 0) {
    std::remove(tmp.c_str());
    throw IoError("atomic rename to " + path + " failed");
  }
}

}  // namespace dcmr
