#include "fusid/types.hpp"

#include <cmath>
#include <unordered_set>

namespace fusid {

void TrackTable::add(Track track) {
  if (index_.count(track.id)) {
    throw DataError("duplicate track_id " + std::to_string(track.id));
  }
  if (track.features.size() != schema_.names.size()) {
    throw DataError("track " + std::to_string(track.id) + " has " +
                    std::to_string(track.features.size()) + " modalities, schema declares " +
                    std::to_string(schema_.names.size()));
  }
  for (std::size_t m = 0; m < track.features.size(); ++m) {
    const auto& v = track.features[m];
    if (v.size() != schema_.dims[m]) {
      throw DataError("track " + std::to_string(track.id) + " modality '" + schema_.names[m] +
                      "' has dim " + std::to_string(v.size()) + ", schema declares " +
                      std::to_string(schema_.dims[m]));
    }
    if (!v.allFinite()) {
      throw DataError("track " + std::to_string(track.id) + " modality '" + schema_.names[m] +
                      "' contains non-finite values");
    }
  }
  index_.emplace(track.id, tracks_.size());
  tracks_.push_back(std::move(track));
}

const Track& TrackTable::at(TrackId id) const {
  auto it = index_.find(id);
  if (it == index_.end()) {
    throw DataError("unknown track_id " + std::to_string(id));
  }
  return tracks_[it->second];
}

Eigen::VectorXd TrackTable::concat_features(TrackId id) const {
  const Track& t = at(id);
  Eigen::VectorXd out(schema_.concat_dim());
  int offset = 0;
  for (const auto& v : t.features) {
    out.segment(offset, v.size()) = v;
    offset += static_cast<int>(v.size());
  }
  return out;
}

void Corpus::validate() const {
  std::unordered_set<PlaylistId> seen;
  for (const auto& pl : playlists) {
    if (!seen.insert(pl.id).second) {
      throw DataError("duplicate playlist_id " + std::to_string(pl.id));
    }
    for (TrackId t : pl.tracks) {
      if (!tracks.contains(t)) {
        throw DataError("playlist " + std::to_string(pl.id) + " references unknown track_id " +
                        std::to_string(t));
      }
    }
  }
}

Eigen::VectorXd VectorTable::vector_for(TrackId id) const {
  auto it = row_of.find(id);
  if (it == row_of.end()) {
    throw DataError("no vector for track_id " + std::to_string(id));
  }
  return rows.row(it->second).transpose();
}

void VectorTable::rebuild_index() {
  row_of.clear();
  row_of.reserve(ids.size());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    row_of.emplace(ids[i], static_cast<int>(i));
  }
}

const SemanticId& SidTable::sid_for(TrackId id) const {
  auto it = row_of.find(id);
  if (it == row_of.end()) {
    throw DataError("no semantic id for track_id " + std::to_string(id));
  }
  return sids[static_cast<std::size_t>(it->second)];
}

void SidTable::rebuild_index() {
  row_of.clear();
  row_of.reserve(ids.size());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    row_of.emplace(ids[i], static_cast<int>(i));
  }
}

}  // namespace fusid
