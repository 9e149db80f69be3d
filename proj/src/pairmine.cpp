#include "fusid/pairmine.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <unordered_set>

#include <nlohmann/json.hpp>

#include "fusid/io.hpp"

namespace fusid {

namespace {

std::pair<TrackId, TrackId> canonical(TrackId i, TrackId j) {
  return i < j ? std::make_pair(i, j) : std::make_pair(j, i);
}

}  // namespace

std::uint32_t CoocStats::count(TrackId i) const {
  auto it = track_count.find(i);
  return it == track_count.end() ? 0 : it->second;
}

std::uint32_t CoocStats::pair(TrackId i, TrackId j) const {
  auto it = pair_count.find(canonical(i, j));
  return it == pair_count.end() ? 0 : it->second;
}

std::size_t PairSet::positives() const {
  std::size_t n = 0;
  for (const auto& p : pairs) n += p.y == 1;
  return n;
}

std::size_t PairSet::negatives() const { return pairs.size() - positives(); }

void PairMineConfig::validate() const {
  if (min_count < 1) throw DataError("pair mining min_count must be >= 1");
  if (pos_per_anchor < 1) throw DataError("pair mining pos_per_anchor must be >= 1");
  if (neg_quantile <= 0.0 || neg_quantile >= 1.0) {
    throw DataError("pair mining neg_quantile must lie in (0, 1)");
  }
}

CoocStats count_cooccurrence(const std::vector<Playlist>& train_playlists) {
  CoocStats stats;
  std::vector<TrackId> distinct;
  for (const auto& pl : train_playlists) {
    distinct.assign(pl.tracks.begin(), pl.tracks.end());
    std::sort(distinct.begin(), distinct.end());
    distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());

    for (TrackId t : distinct) {
      ++stats.track_count[t];
    }
    for (std::size_t i = 0; i < distinct.size(); ++i) {
      for (std::size_t j = i + 1; j < distinct.size(); ++j) {
        ++stats.pair_count[{distinct[i], distinct[j]}];
      }
    }
  }
  return stats;
}

double normalized_cooc(const CoocStats& stats, TrackId i, TrackId j) {
  std::uint32_t ci = stats.count(i);
  std::uint32_t cj = stats.count(j);
  if (ci == 0 || cj == 0) {
    throw DataError("normalized co-occurrence undefined: track " +
                    std::to_string(ci == 0 ? i : j) + " appears in no training playlist");
  }
  return static_cast<double>(stats.pair(i, j)) / static_cast<double>(std::min(ci, cj));
}

PairSet mine_pairs(const CoocStats& stats, const PairMineConfig& cfg, PairMineInfo* info) {
  cfg.validate();

  // Anchor universe: tracks frequent enough for a reliable normalization.
  std::vector<TrackId> anchors;
  for (const auto& [id, c] : stats.track_count) {
    if (c >= static_cast<std::uint32_t>(cfg.min_count)) {
      anchors.push_back(id);
    }
  }
  std::sort(anchors.begin(), anchors.end());
  std::unordered_set<TrackId> anchor_set(anchors.begin(), anchors.end());

  // Adjacency restricted to the anchor universe.
  std::unordered_map<TrackId, std::vector<std::pair<TrackId, double>>> adjacency;
  for (const auto& [key, c] : stats.pair_count) {
    const auto& [i, j] = key;
    if (!anchor_set.count(i) || !anchor_set.count(j)) {
      continue;
    }
    double score = static_cast<double>(c) /
                   static_cast<double>(std::min(stats.count(i), stats.count(j)));
    adjacency[i].emplace_back(j, score);
    adjacency[j].emplace_back(i, score);
  }

  PairSet out;
  std::unordered_set<std::pair<TrackId, TrackId>, TrackPairHash> labeled;
  std::mt19937_64 rng(cfg.seed);
  std::vector<std::pair<TrackId, double>> scored;
  std::vector<TrackId> pool;

  for (TrackId anchor : anchors) {
    auto adj_it = adjacency.find(anchor);
    if (adj_it == adjacency.end()) {
      if (info) ++info->anchors_skipped;  // no co-occurring partner: no positives
      continue;
    }
    scored = adj_it->second;
    std::sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
      if (a.second != b.second) return a.second > b.second;
      return a.first < b.first;
    });

    // Bottom-quantile threshold over the anchor's full score distribution
    // (every other anchor-universe track; non-co-occurring partners score 0).
    const std::size_t partners = anchors.size() - 1;
    const std::size_t zeros = partners - scored.size();
    const auto cut = static_cast<std::size_t>(
        std::floor(cfg.neg_quantile * static_cast<double>(partners)));
    double threshold = 0.0;
    if (cut > zeros) {
      // cut-th smallest score lies among the nonzero scores (ascending).
      threshold = scored[scored.size() - (cut - zeros)].second;
    } else if (cut == 0) {
      continue;  // degenerate quantile: no negative pool, skip anchor
    }

    // Positives are exactly the top pos_per_anchor partners; a pair already
    // mined from the other side is not re-emitted and not replaced.
    std::vector<PairExample> anchor_pos;
    std::size_t considered = 0;
    for (const auto& [partner, score] : scored) {
      if (considered >= static_cast<std::size_t>(cfg.pos_per_anchor)) break;
      if (score <= 0.0) break;
      ++considered;
      auto key = canonical(anchor, partner);
      if (labeled.count(key)) continue;
      labeled.insert(key);
      anchor_pos.push_back({anchor, partner, 1});
    }
    if (anchor_pos.empty()) {
      if (considered == 0 && info) {
        ++info->anchors_skipped;  // no eligible positive partner at all
      }
      continue;
    }

    pool.clear();
    std::unordered_map<TrackId, double> score_of(scored.begin(), scored.end());
    for (TrackId candidate : anchors) {
      if (candidate == anchor) continue;
      auto it = score_of.find(candidate);
      double score = it == score_of.end() ? 0.0 : it->second;
      if (score <= threshold && !labeled.count(canonical(anchor, candidate))) {
        pool.push_back(candidate);
      }
    }

    // Draw without replacement; trim positives if the pool runs dry so the
    // 1:1 balance invariant holds exactly.
    std::size_t want = std::min(anchor_pos.size(), pool.size());
    for (std::size_t k = 0; k < want; ++k) {
      std::uniform_int_distribution<std::size_t> pick(k, pool.size() - 1);
      std::swap(pool[k], pool[pick(rng)]);
      labeled.insert(canonical(anchor, pool[k]));
    }
    for (std::size_t k = want; k < anchor_pos.size(); ++k) {
      labeled.erase(canonical(anchor, anchor_pos[k].b));  // leave for the mirror anchor
    }
    anchor_pos.resize(want);
    for (std::size_t k = 0; k < want; ++k) {
      out.pairs.push_back(anchor_pos[k]);
      out.pairs.push_back({anchor, pool[k], 0});
    }
  }
  return out;
}

void save_pairs(const PairSet& pairs, const std::string& path) {
  auto os = io::open_output(path, false);
  for (const auto& p : pairs.pairs) {
    nlohmann::json j;
    j["a"] = p.a;
    j["b"] = p.b;
    j["y"] = p.y;
    os << j.dump() << "\n";
  }
}

PairSet load_pairs(const std::string& path) {
  PairSet out;
  io::for_each_line(path, [&](std::size_t line_no, const std::string& line) {
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const std::exception& e) {
      throw DataError(path + ":" + std::to_string(line_no) + ": malformed JSON record: " +
                      e.what());
    }
    if (!j.contains("a") || !j.contains("b") || !j.contains("y")) {
      throw DataError(path + ":" + std::to_string(line_no) + ": pair record needs a, b, y");
    }
    int y = j["y"].get<int>();
    if (y != 0 && y != 1) {
      throw DataError(path + ":" + std::to_string(line_no) + ": y must be 0 or 1");
    }
    auto a = j["a"].get<TrackId>();
    auto b = j["b"].get<TrackId>();
    if (a == b) {
      throw DataError(path + ":" + std::to_string(line_no) + ": pair anchors itself");
    }
    out.pairs.push_back({a, b, y});
  });
  return out;
}

}  // namespace fusid
