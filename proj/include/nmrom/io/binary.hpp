#pragma once

#include <zlib.h>

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <string_view>
#include <vector>

#include "nmrom/error.hpp"

namespace nmrom::io {

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

inline std::uint32_t crc32(const std::uint8_t* data, std::size_t n) {
  uLong crc = ::crc32(0L, Z_NULL, 0);
  while (n > 0) {
    const uInt chunk = static_cast<uInt>(std::min<std::size_t>(n, 1u << 30));
    crc = ::crc32(crc, data, chunk);
    data += chunk;
    n -= chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

class ByteWriter {
 public:
  void raw(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    buf_.insert(buf_.end(), b, b + n);
  }
  void text(std::string_view s) { raw(s.data(), s.size()); }
  void u32(std::uint32_t v) { raw(&v, sizeof v); }
  void f64(double v) { raw(&v, sizeof v); }
  void f64s(const double* p, std::size_t n) { raw(p, n * sizeof(double)); }

  /// Appends the CRC32 of everything written so far and writes the file.
  void finish(const std::filesystem::path& path) {
    const std::uint32_t crc = crc32(buf_.data(), buf_.size());
    u32(crc);
    const auto tmp = path.string() + ".tmp";
    {
      std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
      if (!out) throw FormatError("cannot open " + tmp + " for writing");
      out.write(reinterpret_cast<const char*>(buf_.data()), static_cast<std::streamsize>(buf_.size()));
      if (!out) throw FormatError("write failed: " + tmp);
    }
    std::filesystem::rename(tmp, path);
  }

  [[nodiscard]] const std::vector<std::uint8_t>& bytes() const noexcept { return buf_; }

 private:
  std::vector<std::uint8_t> buf_;
};

class ByteReader {
 public:
  /// Loads the file, verifies the magic string and trailing checksum.
  ByteReader(const std::filesystem::path& path, std::string_view magic) : what_(path.string()) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open " + what_);
    buf_.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
    if (buf_.size() < magic.size() || std::memcmp(buf_.data(), magic.data(), magic.size()) != 0) {
      throw FormatError(what_ + ": bad magic");
    }
    if (buf_.size() < magic.size() + 4) throw FormatError(what_ + ": truncated");
    end_ = buf_.size() - 4;
    pos_ = magic.size();
  }

  /// Checked after the header so a corrupted version is reported as such.
  void verify_checksum() const {
    std::uint32_t stored;
    std::memcpy(&stored, buf_.data() + end_, 4);
    if (crc32(buf_.data(), end_) != stored) throw FormatError(what_ + ": checksum mismatch");
  }

  std::uint32_t u32() {
    std::uint32_t v;
    take(&v, sizeof v);
    return v;
  }
  double f64() {
    double v;
    take(&v, sizeof v);
    return v;
  }
  void f64s(double* out, std::size_t n) { take(out, n * sizeof(double)); }
  std::string text(std::size_t n) {
    std::string s(n, '\0');
    take(s.data(), n);
    return s;
  }
  [[nodiscard]] std::size_t remaining() const noexcept { return end_ - pos_; }
  void expect_end() const {
    if (pos_ != end_) throw FormatError(what_ + ": trailing bytes");
  }

 private:
  void take(void* out, std::size_t n) {
    if (n > end_ - pos_) throw FormatError(what_ + ": truncated");
    std::memcpy(out, buf_.data() + pos_, n);
    pos_ += n;
  }

  std::string what_;
  std::vector<std::uint8_t> buf_;
  std::size_t pos_ = 0;
  std::size_t end_ = 0;
};

}  // namespace nmrom::io
