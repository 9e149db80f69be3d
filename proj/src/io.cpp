#include "fusid/io.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <istream>
#include <ostream>

namespace fusid::io {

namespace {

template <typename T>
void write_le(std::ostream& os, T v) {
  static_assert(std::is_trivially_copyable_v<T>);
  std::array<unsigned char, sizeof(T)> buf{};
  std::uint64_t bits = 0;
  std::memcpy(&bits, &v, sizeof(T));
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    buf[i] = static_cast<unsigned char>((bits >> (8 * i)) & 0xff);
  }
  os.write(reinterpret_cast<const char*>(buf.data()), buf.size());
}

template <typename T>
T read_le(std::istream& is, const std::string& context) {
  std::array<unsigned char, sizeof(T)> buf{};
  is.read(reinterpret_cast<char*>(buf.data()), buf.size());
  if (!is) {
    throw DataError("truncated binary file while reading " + context);
  }
  std::uint64_t bits = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    bits |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
  }
  T v;
  std::memcpy(&v, &bits, sizeof(T));
  return v;
}

}  // namespace

void write_u32(std::ostream& os, std::uint32_t v) { write_le(os, v); }
void write_u64(std::ostream& os, std::uint64_t v) { write_le(os, v); }
void write_f32(std::ostream& os, float v) {
  std::uint32_t bits;
  std::memcpy(&bits, &v, 4);
  write_le(os, bits);
}
void write_f64(std::ostream& os, double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, 8);
  write_le(os, bits);
}

std::uint32_t read_u32(std::istream& is, const std::string& context) {
  return read_le<std::uint32_t>(is, context);
}
std::uint64_t read_u64(std::istream& is, const std::string& context) {
  return read_le<std::uint64_t>(is, context);
}
float read_f32(std::istream& is, const std::string& context) {
  std::uint32_t bits = read_le<std::uint32_t>(is, context);
  float v;
  std::memcpy(&v, &bits, 4);
  return v;
}
double read_f64(std::istream& is, const std::string& context) {
  std::uint64_t bits = read_le<std::uint64_t>(is, context);
  double v;
  std::memcpy(&v, &bits, 8);
  return v;
}

void write_magic(std::ostream& os, const char magic[4]) { os.write(magic, 4); }

void expect_magic(std::istream& is, const char magic[4], const std::string& context) {
  char got[4] = {0, 0, 0, 0};
  is.read(got, 4);
  if (!is || std::memcmp(got, magic, 4) != 0) {
    throw DataError("bad magic in " + context + " (expected " +
                    std::string(magic, 4) + ")");
  }
}

std::ofstream open_output(const std::string& path, bool binary) {
  std::ofstream os(path, binary ? std::ios::binary | std::ios::trunc : std::ios::trunc);
  if (!os) {
    throw DataError("cannot open for writing: " + path);
  }
  return os;
}

std::ifstream open_input(const std::string& path, bool binary) {
  std::ifstream is(path, binary ? std::ios::binary : std::ios::in);
  if (!is) {
    throw DataError("cannot open for reading: " + path);
  }
  return is;
}

void for_each_line(const std::string& path,
                   const std::function<void(std::size_t, const std::string&)>& fn) {
  std::ifstream is = open_input(path, false);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') {
      line.pop_back();
    }
    if (line.empty()) {
      continue;
    }
    fn(line_no, line);
  }
}

std::uint64_t file_fingerprint(const std::string& path) {
  std::ifstream is = open_input(path, true);
  std::uint64_t h = 0xcbf29ce484222325ULL;
  char buf[1 << 16];
  while (is) {
    is.read(buf, sizeof(buf));
    std::streamsize got = is.gcount();
    for (std::streamsize i = 0; i < got; ++i) {
      h ^= static_cast<unsigned char>(buf[i]);
      h *= 0x100000001b3ULL;
    }
  }
  return h;
}

std::string fingerprint_hex(std::uint64_t fp) {
  static const char* digits = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[static_cast<std::size_t>(i)] = digits[fp & 0xf];
    fp >>= 4;
  }
  return out;
}

}  // namespace fusid::io
