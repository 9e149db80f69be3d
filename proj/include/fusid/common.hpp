#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

namespace fusid {

using TrackId = std::uint64_t;
using PlaylistId = std::uint64_t;

// Error categories map to CLI exit codes: usage 1, data 2, numeric 3.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// A track present only in val/test playlists has no trained playlist vector.
struct ColdStartError : DataError {
  using DataError::DataError;
};

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

// Per-stage seeds are derived from the global seed so any stage can be rerun
// in isolation with the same stream it saw inside a full pipeline run.
inline std::uint64_t derive_seed(std::uint64_t global_seed, std::string_view stage) {
  return splitmix64(global_seed ^ fnv1a64(stage));
}

}  // namespace fusid
