#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "fusid/types.hpp"

namespace fusid {

struct TrackPairHash {
  std::size_t operator()(const std::pair<TrackId, TrackId>& p) const {
    return static_cast<std::size_t>(
        splitmix64(splitmix64(p.first) ^ (p.second + 0x9e3779b97f4a7c15ULL)));
  }
};

struct CoocStats {
  // Number of training playlists containing the track (presence, not
  // occurrences: a duplicated track counts once per playlist).
  std::unordered_map<TrackId, std::uint32_t> track_count;
  // Keyed by (min_id, max_id); only co-occurring pairs are materialized.
  std::unordered_map<std::pair<TrackId, TrackId>, std::uint32_t, TrackPairHash> pair_count;

  std::uint32_t count(TrackId i) const;
  std::uint32_t pair(TrackId i, TrackId j) const;
};

struct PairExample {
  TrackId a = 0;
  TrackId b = 0;
  int y = 0;  // 1 positive, 0 negative
};

struct PairSet {
  std::vector<PairExample> pairs;

  std::size_t positives() const;
  std::size_t negatives() const;
};

struct PairMineConfig {
  int min_count = 3;
  int pos_per_anchor = 5;
  double neg_quantile = 0.90;
  std::uint64_t seed = 0;

  void validate() const;
};

CoocStats count_cooccurrence(const std::vector<Playlist>& train_playlists);

// C(i ∩ j) / min(C(i), C(j)); throws DataError when either count is zero.
double normalized_cooc(const CoocStats& stats, TrackId i, TrackId j);

struct PairMineInfo {
  std::size_t anchors_skipped = 0;  // anchors with no co-occurring partner
};

// Per anchor (count >= min_count): top pos_per_anchor partners by score
// (ties to the lower id) become positives; an equal number of negatives is
// drawn uniformly from partners whose score falls in the anchor's bottom
// neg_quantile. Output is balanced 1:1.
PairSet mine_pairs(const CoocStats& stats, const PairMineConfig& cfg,
                   PairMineInfo* info = nullptr);

void save_pairs(const PairSet& pairs, const std::string& path);
PairSet load_pairs(const std::string& path);

}  // namespace fusid
