#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <unordered_set>
#include <vector>

#include "fusid/types.hpp"

namespace fusid {

struct SynthConfig {
  int n_tracks = 0;
  int n_playlists = 0;
  int n_genres = 0;
  std::vector<std::pair<std::string, int>> modalities;  // name, dim
  int playlist_len_min = 0;
  int playlist_len_max = 0;
  double p_coherence = 0.8;  // probability a slot stays in the home genre
  double noise_sigma = 0.1;

  void validate() const;
};

struct SynthResult {
  Corpus corpus;
  std::vector<int> track_genre;     // latent genre per track, by table index
  std::vector<int> playlist_genre;  // home genre per playlist, by list index
};

// Newline-delimited JSON readers/writers, one record per line.
TrackTable load_tracks(const std::string& path);
Corpus load_corpus(const std::string& tracks_path, const std::string& playlists_path);
void save_tracks(const TrackTable& tracks, const std::string& path);
void save_playlists(const std::vector<Playlist>& playlists, const std::string& path);
std::vector<Playlist> load_playlists(const std::string& path);

// Drops tracks outside valid_track_ids from each playlist, then keeps
// playlists whose remaining length is >= min_len.
std::vector<Playlist> filter_playlists(const std::vector<Playlist>& playlists,
                                       const std::unordered_set<TrackId>& valid_track_ids,
                                       int min_len);

// Seeded shuffle, then floor allocation per ratio with the remainder going
// to train.
CorpusSplit split_corpus(const std::vector<Playlist>& playlists,
                         const std::array<double, 3>& ratios, std::uint64_t seed);

void save_split(const CorpusSplit& split, const std::string& path);
CorpusSplit load_split(const std::string& path);

SynthResult generate_synthetic_corpus(const SynthConfig& cfg, std::uint64_t seed);

}  // namespace fusid
