#include "fusid/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include <nlohmann/json.hpp>

#include "fusid/io.hpp"

namespace fusid {

namespace {

using ordered_json = nlohmann::ordered_json;

TrackId parse_id(const ordered_json& j, const char* field, std::size_t line_no,
                 const std::string& path) {
  if (!j.contains(field) || !j[field].is_number_integer()) {
    throw DataError(path + ":" + std::to_string(line_no) + ": missing integer field '" +
                    field + "'");
  }
  auto v = j[field].get<std::int64_t>();
  if (v < 0) {
    throw DataError(path + ":" + std::to_string(line_no) + ": negative " + field);
  }
  return static_cast<TrackId>(v);
}

}  // namespace

void SynthConfig::validate() const {
  if (n_tracks <= 0 || n_playlists <= 0 || n_genres <= 0) {
    throw DataError("synthetic corpus needs positive n_tracks, n_playlists, n_genres");
  }
  if (n_genres > n_tracks) {
    throw DataError("n_genres (" + std::to_string(n_genres) + ") exceeds n_tracks (" +
                    std::to_string(n_tracks) + ")");
  }
  if (modalities.empty()) {
    throw DataError("synthetic corpus needs at least one modality");
  }
  for (const auto& [name, dim] : modalities) {
    if (name.empty() || dim <= 0) {
      throw DataError("modality '" + name + "' must have a name and positive dim");
    }
  }
  if (playlist_len_min < 1 || playlist_len_max < playlist_len_min) {
    throw DataError("empty playlist length range [" + std::to_string(playlist_len_min) + ", " +
                    std::to_string(playlist_len_max) + "]");
  }
  if (p_coherence < 0.0 || p_coherence > 1.0) {
    throw DataError("p_coherence must lie in [0, 1]");
  }
  if (noise_sigma < 0.0) {
    throw DataError("noise_sigma must be >= 0");
  }
}

TrackTable load_tracks(const std::string& path) {
  TrackTable table;
  bool schema_set = false;

  io::for_each_line(path, [&](std::size_t line_no, const std::string& line) {
    ordered_json j;
    try {
      j = ordered_json::parse(line);
    } catch (const std::exception& e) {
      throw DataError(path + ":" + std::to_string(line_no) + ": malformed JSON record: " +
                      e.what());
    }
    TrackId id = parse_id(j, "track_id", line_no, path);
    if (!j.contains("features") || !j["features"].is_object()) {
      throw DataError(path + ":" + std::to_string(line_no) + ": missing 'features' object");
    }

    Track track;
    track.id = id;
    std::vector<std::string> names;
    std::vector<int> dims;
    for (const auto& [name, arr] : j["features"].items()) {
      if (!arr.is_array()) {
        throw DataError(path + ":" + std::to_string(line_no) + ": modality '" + name +
                        "' is not an array");
      }
      Eigen::VectorXd v(arr.size());
      Eigen::Index k = 0;
      for (const auto& x : arr) {
        if (!x.is_number()) {
          throw DataError(path + ":" + std::to_string(line_no) + ": modality '" + name +
                          "' contains a non-numeric entry");
        }
        v[k++] = x.get<double>();
      }
      names.push_back(name);
      dims.push_back(static_cast<int>(v.size()));
      track.features.push_back(std::move(v));
    }

    if (!schema_set) {
      // The first record fixes the modality order for the whole corpus.
      table = TrackTable(ModalitySchema{names, dims});
      schema_set = true;
    } else if (names != table.schema().names) {
      throw DataError(path + ":" + std::to_string(line_no) +
                      ": modality names/order differ from the first record");
    }
    try {
      table.add(std::move(track));
    } catch (const DataError& e) {
      throw DataError(path + ":" + std::to_string(line_no) + ": " + e.what());
    }
  });

  if (!schema_set) {
    throw DataError(path + ": no track records");
  }
  return table;
}

Corpus load_corpus(const std::string& tracks_path, const std::string& playlists_path) {
  Corpus corpus;
  corpus.tracks = load_tracks(tracks_path);

  io::for_each_line(playlists_path, [&](std::size_t line_no, const std::string& line) {
    ordered_json j;
    try {
      j = ordered_json::parse(line);
    } catch (const std::exception& e) {
      throw DataError(playlists_path + ":" + std::to_string(line_no) +
                      ": malformed JSON record: " + e.what());
    }
    Playlist pl;
    pl.id = parse_id(j, "playlist_id", line_no, playlists_path);
    if (!j.contains("tracks") || !j["tracks"].is_array()) {
      throw DataError(playlists_path + ":" + std::to_string(line_no) +
                      ": missing 'tracks' array");
    }
    for (const auto& t : j["tracks"]) {
      if (!t.is_number_integer() || t.get<std::int64_t>() < 0) {
        throw DataError(playlists_path + ":" + std::to_string(line_no) +
                        ": track reference is not a non-negative integer");
      }
      pl.tracks.push_back(t.get<TrackId>());
    }
    corpus.playlists.push_back(std::move(pl));
  });

  corpus.validate();
  return corpus;
}

void save_tracks(const TrackTable& tracks, const std::string& path) {
  auto os = io::open_output(path, false);
  const auto& schema = tracks.schema();
  for (const auto& track : tracks.all()) {
    ordered_json features = ordered_json::object();
    for (std::size_t m = 0; m < schema.names.size(); ++m) {
      ordered_json arr = ordered_json::array();
      const auto& v = track.features[m];
      for (Eigen::Index i = 0; i < v.size(); ++i) {
        arr.push_back(v[i]);
      }
      features[schema.names[m]] = std::move(arr);
    }
    ordered_json j;
    j["track_id"] = track.id;
    j["features"] = std::move(features);
    os << j.dump() << "\n";
  }
}

void save_playlists(const std::vector<Playlist>& playlists, const std::string& path) {
  auto os = io::open_output(path, false);
  for (const auto& pl : playlists) {
    ordered_json j;
    j["playlist_id"] = pl.id;
    j["tracks"] = pl.tracks;
    os << j.dump() << "\n";
  }
}

std::vector<Playlist> load_playlists(const std::string& path) {
  std::vector<Playlist> playlists;
  io::for_each_line(path, [&](std::size_t line_no, const std::string& line) {
    ordered_json j;
    try {
      j = ordered_json::parse(line);
    } catch (const std::exception& e) {
      throw DataError(path + ":" + std::to_string(line_no) + ": malformed JSON record: " +
                      e.what());
    }
    Playlist pl;
    pl.id = parse_id(j, "playlist_id", line_no, path);
    if (!j.contains("tracks") || !j["tracks"].is_array()) {
      throw DataError(path + ":" + std::to_string(line_no) + ": missing 'tracks' array");
    }
    for (const auto& t : j["tracks"]) {
      pl.tracks.push_back(t.get<TrackId>());
    }
    playlists.push_back(std::move(pl));
  });
  return playlists;
}

std::vector<Playlist> filter_playlists(const std::vector<Playlist>& playlists,
                                       const std::unordered_set<TrackId>& valid_track_ids,
                                       int min_len) {
  if (min_len < 1) {
    throw DataError("min_len must be >= 1");
  }
  std::vector<Playlist> out;
  for (const auto& pl : playlists) {
    Playlist kept;
    kept.id = pl.id;
    for (TrackId t : pl.tracks) {
      if (valid_track_ids.count(t)) {
        kept.tracks.push_back(t);
      }
    }
    if (kept.tracks.size() >= static_cast<std::size_t>(min_len)) {
      out.push_back(std::move(kept));
    }
  }
  return out;
}

CorpusSplit split_corpus(const std::vector<Playlist>& playlists,
                         const std::array<double, 3>& ratios, std::uint64_t seed) {
  double sum = ratios[0] + ratios[1] + ratios[2];
  if (ratios[0] <= 0 || ratios[1] <= 0 || ratios[2] <= 0 || std::abs(sum - 1.0) > 1e-9) {
    throw DataError("split ratios must be positive and sum to 1");
  }

  std::vector<PlaylistId> ids;
  ids.reserve(playlists.size());
  for (const auto& pl : playlists) {
    ids.push_back(pl.id);
  }
  std::mt19937_64 rng(seed);
  std::shuffle(ids.begin(), ids.end(), rng);

  const auto total = ids.size();
  auto n_train = static_cast<std::size_t>(std::floor(ratios[0] * static_cast<double>(total)));
  auto n_val = static_cast<std::size_t>(std::floor(ratios[1] * static_cast<double>(total)));
  auto n_test = static_cast<std::size_t>(std::floor(ratios[2] * static_cast<double>(total)));
  n_train += total - (n_train + n_val + n_test);  // remainder goes to train

  CorpusSplit split;
  split.train.assign(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(n_train));
  split.val.assign(ids.begin() + static_cast<std::ptrdiff_t>(n_train),
                   ids.begin() + static_cast<std::ptrdiff_t>(n_train + n_val));
  split.test.assign(ids.begin() + static_cast<std::ptrdiff_t>(n_train + n_val), ids.end());
  return split;
}

void save_split(const CorpusSplit& split, const std::string& path) {
  nlohmann::json j;
  j["train"] = split.train;
  j["val"] = split.val;
  j["test"] = split.test;
  auto os = io::open_output(path, false);
  os << j.dump(2) << "\n";
}

CorpusSplit load_split(const std::string& path) {
  auto is = io::open_input(path, false);
  nlohmann::json j;
  try {
    is >> j;
  } catch (const std::exception& e) {
    throw DataError(path + ": malformed split file: " + e.what());
  }
  CorpusSplit split;
  for (const char* key : {"train", "val", "test"}) {
    if (!j.contains(key) || !j[key].is_array()) {
      throw DataError(path + ": missing '" + std::string(key) + "' array");
    }
  }
  split.train = j["train"].get<std::vector<PlaylistId>>();
  split.val = j["val"].get<std::vector<PlaylistId>>();
  split.test = j["test"].get<std::vector<PlaylistId>>();
  return split;
}

SynthResult generate_synthetic_corpus(const SynthConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);

  // One centroid per (modality, genre); genre structure is what makes
  // co-occurrence and modality similarity correlated downstream.
  std::vector<std::vector<Eigen::VectorXd>> centroids(cfg.modalities.size());
  for (std::size_t m = 0; m < cfg.modalities.size(); ++m) {
    centroids[m].resize(static_cast<std::size_t>(cfg.n_genres));
    for (int g = 0; g < cfg.n_genres; ++g) {
      Eigen::VectorXd c(cfg.modalities[m].second);
      for (Eigen::Index i = 0; i < c.size(); ++i) {
        c[i] = gauss(rng);
      }
      centroids[m][static_cast<std::size_t>(g)] = std::move(c);
    }
  }

  ModalitySchema schema;
  for (const auto& [name, dim] : cfg.modalities) {
    schema.names.push_back(name);
    schema.dims.push_back(dim);
  }

  SynthResult result;
  result.corpus.tracks = TrackTable(schema);
  result.track_genre.resize(static_cast<std::size_t>(cfg.n_tracks));

  std::vector<std::vector<TrackId>> genre_members(static_cast<std::size_t>(cfg.n_genres));
  for (int i = 0; i < cfg.n_tracks; ++i) {
    int g = i % cfg.n_genres;  // round-robin keeps every genre populated
    result.track_genre[static_cast<std::size_t>(i)] = g;
    genre_members[static_cast<std::size_t>(g)].push_back(static_cast<TrackId>(i));

    Track track;
    track.id = static_cast<TrackId>(i);
    for (std::size_t m = 0; m < cfg.modalities.size(); ++m) {
      Eigen::VectorXd v = centroids[m][static_cast<std::size_t>(g)];
      for (Eigen::Index k = 0; k < v.size(); ++k) {
        v[k] += cfg.noise_sigma * gauss(rng);
      }
      track.features.push_back(std::move(v));
    }
    result.corpus.tracks.add(std::move(track));
  }

  std::uniform_int_distribution<int> genre_pick(0, cfg.n_genres - 1);
  std::uniform_int_distribution<int> len_pick(cfg.playlist_len_min, cfg.playlist_len_max);
  std::uniform_int_distribution<int> track_pick(0, cfg.n_tracks - 1);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  result.playlist_genre.resize(static_cast<std::size_t>(cfg.n_playlists));
  for (int p = 0; p < cfg.n_playlists; ++p) {
    int home = genre_pick(rng);
    result.playlist_genre[static_cast<std::size_t>(p)] = home;
    Playlist pl;
    pl.id = static_cast<PlaylistId>(p);
    int len = len_pick(rng);
    const auto& members = genre_members[static_cast<std::size_t>(home)];
    for (int s = 0; s < len; ++s) {
      if (unit(rng) < cfg.p_coherence) {
        std::uniform_int_distribution<std::size_t> member_pick(0, members.size() - 1);
        pl.tracks.push_back(members[member_pick(rng)]);
      } else {
        pl.tracks.push_back(static_cast<TrackId>(track_pick(rng)));
      }
    }
    result.corpus.playlists.push_back(std::move(pl));
  }

  result.corpus.validate();
  return result;
}

}  // namespace fusid
