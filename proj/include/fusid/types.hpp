#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "fusid/common.hpp"

namespace fusid {

enum class Optimizer { sgd, adam };

// Modality layout shared by every track in a corpus. Concatenation order of
// the fused input follows the schema order.
struct ModalitySchema {
  std::vector<std::string> names;
  std::vector<int> dims;

  int concat_dim() const {
    int total = 0;
    for (int d : dims) total += d;
    return total;
  }
  bool operator==(const ModalitySchema&) const = default;
};

struct Track {
  TrackId id = 0;
  std::vector<Eigen::VectorXd> features;  // aligned with the schema order
};

class TrackTable {
 public:
  TrackTable() = default;
  explicit TrackTable(ModalitySchema schema) : schema_(std::move(schema)) {}

  // Validates id uniqueness, modality count/dims and value finiteness.
  void add(Track track);

  const ModalitySchema& schema() const { return schema_; }
  std::size_t size() const { return tracks_.size(); }
  bool contains(TrackId id) const { return index_.count(id) > 0; }
  const Track& at(TrackId id) const;
  const Track& by_index(std::size_t i) const { return tracks_[i]; }
  const std::vector<Track>& all() const { return tracks_; }

  // Flattened feature vector in schema order.
  Eigen::VectorXd concat_features(TrackId id) const;

 private:
  ModalitySchema schema_;
  std::vector<Track> tracks_;
  std::unordered_map<TrackId, std::size_t> index_;
};

struct Playlist {
  PlaylistId id = 0;
  std::vector<TrackId> tracks;  // ordered, duplicates allowed
};

struct Corpus {
  TrackTable tracks;
  std::vector<Playlist> playlists;

  // Throws DataError on dangling track references or duplicate playlist ids.
  void validate() const;
};

struct CorpusSplit {
  std::vector<PlaylistId> train;
  std::vector<PlaylistId> val;
  std::vector<PlaylistId> test;
};

// Dense per-track vectors keyed by sorted track id; used both for the fused
// network input (concatenated modalities) and for catalog embeddings.
struct VectorTable {
  std::vector<TrackId> ids;    // ascending
  Eigen::MatrixXd rows;        // ids.size() x dim
  std::unordered_map<TrackId, int> row_of;

  int dim() const { return static_cast<int>(rows.cols()); }
  std::size_t size() const { return ids.size(); }
  bool contains(TrackId id) const { return row_of.count(id) > 0; }
  Eigen::VectorXd vector_for(TrackId id) const;
  void rebuild_index();
};

struct SemanticId {
  std::vector<std::int32_t> codes;

  bool operator==(const SemanticId&) const = default;
};

struct SemanticIdHash {
  std::size_t operator()(const SemanticId& sid) const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (std::int32_t c : sid.codes) {
      h ^= static_cast<std::uint64_t>(static_cast<std::uint32_t>(c));
      h *= 0x100000001b3ULL;
    }
    return static_cast<std::size_t>(h);
  }
};

// Tokenized catalog: track ids ascending, one semantic id each.
struct SidTable {
  std::vector<TrackId> ids;
  std::vector<SemanticId> sids;
  std::unordered_map<TrackId, int> row_of;

  std::size_t size() const { return ids.size(); }
  bool contains(TrackId id) const { return row_of.count(id) > 0; }
  const SemanticId& sid_for(TrackId id) const;
  void rebuild_index();
};

}  // namespace fusid
