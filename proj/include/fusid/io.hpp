#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iosfwd>
#include <string>

#include "fusid/common.hpp"

// Little-endian binary primitives shared by the FVEC/FMOD/FCBK/FREC formats,
// plus line-oriented helpers for the newline-delimited JSON files.
namespace fusid::io {

void write_u32(std::ostream& os, std::uint32_t v);
void write_u64(std::ostream& os, std::uint64_t v);
void write_f32(std::ostream& os, float v);
void write_f64(std::ostream& os, double v);

std::uint32_t read_u32(std::istream& is, const std::string& context);
std::uint64_t read_u64(std::istream& is, const std::string& context);
float read_f32(std::istream& is, const std::string& context);
double read_f64(std::istream& is, const std::string& context);

void write_magic(std::ostream& os, const char magic[4]);
void expect_magic(std::istream& is, const char magic[4], const std::string& context);

std::ofstream open_output(const std::string& path, bool binary);
std::ifstream open_input(const std::string& path, bool binary);

// Calls fn(line_number, line) for every non-empty line; 1-based numbering.
void for_each_line(const std::string& path,
                   const std::function<void(std::size_t, const std::string&)>& fn);

// FNV-1a over the file bytes; used for manifest checksums, not security.
std::uint64_t file_fingerprint(const std::string& path);
std::string fingerprint_hex(std::uint64_t fp);

}  // namespace fusid::io
