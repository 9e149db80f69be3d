#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <unistd.h>
#include <unordered_set>

#include "fusid/corpus.hpp"

using namespace fusid;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() / ("fusid_corpus_test_" + std::to_string(::getpid()) +
                                        "_" + std::to_string(counter()++));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string file(const std::string& name) const { return (path / name).string(); }
  static int& counter() {
    static int c = 0;
    return c;
  }
};

void write_file(const std::string& path, const std::string& content) {
  std::ofstream os(path);
  os << content;
}

SynthConfig small_synth() {
  SynthConfig cfg;
  cfg.n_tracks = 60;
  cfg.n_playlists = 40;
  cfg.n_genres = 4;
  cfg.modalities = {{"tag", 8}, {"audio", 4}};
  cfg.playlist_len_min = 3;
  cfg.playlist_len_max = 8;
  cfg.p_coherence = 0.9;
  cfg.noise_sigma = 0.05;
  return cfg;
}

Playlist make_playlist(PlaylistId id, std::vector<TrackId> tracks) {
  Playlist pl;
  pl.id = id;
  pl.tracks = std::move(tracks);
  return pl;
}

}  // namespace

TEST_CASE("load_corpus round-trips a hand-written fixture") {
  TempDir dir;
  write_file(dir.file("tracks.jsonl"),
             R"({"track_id": 0, "features": {"tag": [1.0, 2.0], "audio": [0.5]}}
{"track_id": 1, "features": {"tag": [0.0, 1.0], "audio": [1.5]}}
{"track_id": 2, "features": {"tag": [3.0, 4.0], "audio": [2.5]}}
)");
  write_file(dir.file("playlists.jsonl"),
             R"({"playlist_id": 0, "tracks": [0, 1, 1]}
{"playlist_id": 1, "tracks": [2]}
)");

  Corpus corpus = load_corpus(dir.file("tracks.jsonl"), dir.file("playlists.jsonl"));
  CHECK(corpus.tracks.size() == 3);
  CHECK(corpus.playlists.size() == 2);
  CHECK(corpus.tracks.schema().names == std::vector<std::string>{"tag", "audio"});
  CHECK(corpus.tracks.at(0).features[0][1] == doctest::Approx(2.0));
  // Duplicates inside a playlist are preserved.
  CHECK(corpus.playlists[0].tracks == std::vector<TrackId>{0, 1, 1});

  // Full save/load round trip.
  save_tracks(corpus.tracks, dir.file("tracks2.jsonl"));
  save_playlists(corpus.playlists, dir.file("playlists2.jsonl"));
  Corpus again = load_corpus(dir.file("tracks2.jsonl"), dir.file("playlists2.jsonl"));
  CHECK(again.tracks.size() == 3);
  CHECK(again.tracks.concat_features(1) == corpus.tracks.concat_features(1));
}

TEST_CASE("load_corpus rejects dangling track references") {
  TempDir dir;
  write_file(dir.file("tracks.jsonl"),
             R"({"track_id": 0, "features": {"tag": [1.0]}}
)");
  write_file(dir.file("playlists.jsonl"),
             R"({"playlist_id": 0, "tracks": [0, 99]}
)");
  CHECK_THROWS_AS(load_corpus(dir.file("tracks.jsonl"), dir.file("playlists.jsonl")),
                  DataError);
}

TEST_CASE("load_corpus rejects dimension mismatches with line numbers") {
  TempDir dir;
  write_file(dir.file("tracks.jsonl"),
             R"({"track_id": 0, "features": {"tag": [1.0, 2.0]}}
{"track_id": 1, "features": {"tag": [1.0]}}
)");
  write_file(dir.file("playlists.jsonl"), "");
  try {
    load_corpus(dir.file("tracks.jsonl"), dir.file("playlists.jsonl"));
    FAIL("expected DataError");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find(":2") != std::string::npos);
  }
}

TEST_CASE("load_corpus reports malformed JSON with its line number") {
  TempDir dir;
  write_file(dir.file("tracks.jsonl"),
             R"({"track_id": 0, "features": {"tag": [1.0]}}
this is not json
)");
  write_file(dir.file("playlists.jsonl"), "");
  try {
    load_corpus(dir.file("tracks.jsonl"), dir.file("playlists.jsonl"));
    FAIL("expected DataError");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find(":2") != std::string::npos);
  }
}

TEST_CASE("filter_playlists applies the valid-track-then-length rule") {
  std::unordered_set<TrackId> valid = {1, 2, 3, 4, 5, 6};
  std::vector<Playlist> playlists = {
      make_playlist(0, {1, 2, 3, 4, 5, 6}),   // all valid, length 6
      make_playlist(1, {1, 2, 3, 4, 5, 99}),  // 5 valid after dropping 99
      make_playlist(2, {1, 99, 2}),
  };

  auto kept = filter_playlists(playlists, valid, 6);
  REQUIRE(kept.size() == 1);
  CHECK(kept[0].id == 0);

  auto loose = filter_playlists(playlists, valid, 1);
  CHECK(loose.size() == 3);  // degenerate threshold keeps every nonempty playlist
  CHECK(loose[2].tracks == std::vector<TrackId>{1, 2});  // invalid ids dropped

  // Idempotence: filtering a filtered list changes nothing.
  auto twice = filter_playlists(kept, valid, 6);
  REQUIRE(twice.size() == kept.size());
  CHECK(twice[0].tracks == kept[0].tracks);
}

TEST_CASE("split_corpus floor allocation sends the remainder to train") {
  std::vector<Playlist> ten, eleven;
  for (PlaylistId i = 0; i < 10; ++i) ten.push_back(make_playlist(i, {0}));
  for (PlaylistId i = 0; i < 11; ++i) eleven.push_back(make_playlist(i, {0}));

  CorpusSplit s10 = split_corpus(ten, {0.8, 0.1, 0.1}, 7);
  CHECK(s10.train.size() == 8);
  CHECK(s10.val.size() == 1);
  CHECK(s10.test.size() == 1);

  CorpusSplit s11 = split_corpus(eleven, {0.8, 0.1, 0.1}, 7);
  CHECK(s11.train.size() == 9);  // floor allocation, remainder to train
  CHECK(s11.val.size() == 1);
  CHECK(s11.test.size() == 1);
}

TEST_CASE("split_corpus is an exact deterministic partition") {
  std::vector<Playlist> playlists;
  for (PlaylistId i = 0; i < 103; ++i) playlists.push_back(make_playlist(i, {0}));

  CorpusSplit a = split_corpus(playlists, {0.8, 0.1, 0.1}, 42);
  CorpusSplit b = split_corpus(playlists, {0.8, 0.1, 0.1}, 42);
  CHECK(a.train == b.train);
  CHECK(a.val == b.val);
  CHECK(a.test == b.test);

  std::unordered_set<PlaylistId> seen;
  for (const auto* part : {&a.train, &a.val, &a.test}) {
    for (PlaylistId id : *part) {
      CHECK(seen.insert(id).second);  // pairwise disjoint
    }
  }
  CHECK(seen.size() == playlists.size());  // union covers everything

  CHECK_THROWS_AS(split_corpus(playlists, {0.8, 0.1, 0.2}, 1), DataError);
}

TEST_CASE("synthetic corpus respects coherence and noise settings") {
  SynthConfig cfg = small_synth();

  SUBCASE("p_coherence = 1 keeps every playlist in one genre") {
    cfg.p_coherence = 1.0;
    SynthResult r = generate_synthetic_corpus(cfg, 3);
    for (std::size_t p = 0; p < r.corpus.playlists.size(); ++p) {
      int home = r.playlist_genre[p];
      for (TrackId t : r.corpus.playlists[p].tracks) {
        CHECK(r.track_genre[static_cast<std::size_t>(t)] == home);
      }
    }
  }

  SUBCASE("sigma = 0 makes same-genre features identical") {
    cfg.noise_sigma = 0.0;
    SynthResult r = generate_synthetic_corpus(cfg, 3);
    const auto& a = r.corpus.tracks.at(0);  // genre 0
    const auto& b = r.corpus.tracks.at(4);  // also genre 0 (round robin of 4 genres)
    REQUIRE(r.track_genre[0] == r.track_genre[4]);
    for (std::size_t m = 0; m < a.features.size(); ++m) {
      CHECK(a.features[m] == b.features[m]);
    }
  }

  SUBCASE("fixed seed is bit-reproducible") {
    SynthResult r1 = generate_synthetic_corpus(cfg, 11);
    SynthResult r2 = generate_synthetic_corpus(cfg, 11);
    REQUIRE(r1.corpus.tracks.size() == r2.corpus.tracks.size());
    for (std::size_t i = 0; i < r1.corpus.tracks.size(); ++i) {
      const auto& t1 = r1.corpus.tracks.by_index(i);
      const auto& t2 = r2.corpus.tracks.by_index(i);
      for (std::size_t m = 0; m < t1.features.size(); ++m) {
        CHECK(t1.features[m] == t2.features[m]);
      }
    }
    REQUIRE(r1.corpus.playlists.size() == r2.corpus.playlists.size());
    for (std::size_t p = 0; p < r1.corpus.playlists.size(); ++p) {
      CHECK(r1.corpus.playlists[p].tracks == r2.corpus.playlists[p].tracks);
    }
  }

  SUBCASE("invalid configs are rejected") {
    SynthConfig bad = cfg;
    bad.n_genres = bad.n_tracks + 1;
    CHECK_THROWS_AS(generate_synthetic_corpus(bad, 1), DataError);
    bad = cfg;
    bad.playlist_len_min = 5;
    bad.playlist_len_max = 4;
    CHECK_THROWS_AS(generate_synthetic_corpus(bad, 1), DataError);
  }
}

TEST_CASE("reference-scale synthetic corpus separates genres in feature space") {
  SynthConfig cfg;
  cfg.n_tracks = 2000;
  cfg.n_playlists = 200;  // playlists are irrelevant to the feature geometry
  cfg.n_genres = 20;
  cfg.modalities = {{"tag", 16}, {"audio", 8}};
  cfg.playlist_len_min = 5;
  cfg.playlist_len_max = 20;
  cfg.p_coherence = 0.8;
  cfg.noise_sigma = 0.3;
  SynthResult r = generate_synthetic_corpus(cfg, 42);

  // Exact pair means via per-genre sums of unit-normalized features.
  const std::size_t count = r.corpus.tracks.size();
  const int dim = r.corpus.tracks.schema().concat_dim();
  Eigen::MatrixXd units(count, dim);
  for (std::size_t i = 0; i < count; ++i) {
    Eigen::VectorXd f = r.corpus.tracks.concat_features(r.corpus.tracks.by_index(i).id);
    units.row(static_cast<Eigen::Index>(i)) = (f / f.norm()).transpose();
  }
  Eigen::VectorXd total = units.colwise().sum().transpose();
  double within_sum = 0.0, within_pairs = 0.0;
  for (int g = 0; g < cfg.n_genres; ++g) {
    Eigen::VectorXd genre_sum = Eigen::VectorXd::Zero(dim);
    double members = 0.0;
    for (std::size_t i = 0; i < count; ++i) {
      if (r.track_genre[i] == g) {
        genre_sum += units.row(static_cast<Eigen::Index>(i)).transpose();
        members += 1.0;
      }
    }
    within_sum += genre_sum.squaredNorm() - members;
    within_pairs += members * (members - 1.0);
  }
  const double n = static_cast<double>(count);
  double all_sum = total.squaredNorm() - n;
  double cross_sum = all_sum - within_sum;
  double cross_pairs = n * (n - 1.0) - within_pairs;

  double mean_within = within_sum / within_pairs;
  double mean_cross = cross_sum / cross_pairs;
  CHECK(mean_within > mean_cross);
}
