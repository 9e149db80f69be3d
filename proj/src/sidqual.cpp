#include "fusid/sidqual.hpp"

#include <unordered_map>

namespace fusid {

namespace {

void check_codes(const std::vector<SemanticId>& sids, int n, int k) {
  for (const auto& sid : sids) {
    if (sid.codes.size() != static_cast<std::size_t>(n)) {
      throw DataError("semantic id has length " + std::to_string(sid.codes.size()) +
                      ", expected " + std::to_string(n));
    }
    for (std::int32_t c : sid.codes) {
      if (c < 0 || c >= k) {
        throw DataError("semantic id code " + std::to_string(c) + " out of range [0, " +
                        std::to_string(k) + ")");
      }
    }
  }
}

std::unordered_map<SemanticId, std::int64_t, SemanticIdHash> multiplicities(
    const std::vector<SemanticId>& sids) {
  std::unordered_map<SemanticId, std::int64_t, SemanticIdHash> counts;
  counts.reserve(sids.size());
  for (const auto& sid : sids) {
    ++counts[sid];
  }
  return counts;
}

}  // namespace

double cur(const std::vector<SemanticId>& sids, int n, int k) {
  check_codes(sids, n, k);
  std::vector<std::vector<char>> used(static_cast<std::size_t>(n),
                                      std::vector<char>(static_cast<std::size_t>(k), 0));
  for (const auto& sid : sids) {
    for (int pos = 0; pos < n; ++pos) {
      used[static_cast<std::size_t>(pos)]
          [static_cast<std::size_t>(sid.codes[static_cast<std::size_t>(pos)])] = 1;
    }
  }
  std::int64_t unused = 0;
  for (const auto& row : used) {
    for (char u : row) {
      unused += u == 0;
    }
  }
  return 100.0 * static_cast<double>(unused) / static_cast<double>(std::int64_t(n) * k);
}

std::int64_t cardinality(const std::vector<SemanticId>& sids) {
  return static_cast<std::int64_t>(multiplicities(sids).size());
}

double conflict_rate(const std::vector<SemanticId>& sids, ConflictMode mode) {
  if (sids.empty()) {
    throw DataError("conflict rate is undefined for an empty collection");
  }
  auto counts = multiplicities(sids);
  std::int64_t conflicted = 0;
  for (const auto& [sid, count] : counts) {
    if (count >= 2) {
      conflicted += mode == ConflictMode::all_members ? count : count - 1;
    }
  }
  return 100.0 * static_cast<double>(conflicted) / static_cast<double>(sids.size());
}

SidQualityReport make_report(const std::vector<SemanticId>& sids, int n, int k,
                             ConflictMode mode) {
  SidQualityReport r;
  r.cur_percent = cur(sids, n, k);
  r.cardinality = cardinality(sids);
  r.cardinality_max = static_cast<std::int64_t>(sids.size());
  r.conflict_rate_percent = conflict_rate(sids, mode);
  return r;
}

SidQualityPair report(const SidTable& all_sids, const std::vector<TrackId>& test_ids, int n,
                      int k, ConflictMode mode) {
  std::vector<SemanticId> test_sids;
  test_sids.reserve(test_ids.size());
  for (TrackId id : test_ids) {
    if (!all_sids.contains(id)) {
      throw DataError("test set track " + std::to_string(id) +
                      " is not part of the tokenized catalog");
    }
    test_sids.push_back(all_sids.sid_for(id));
  }
  SidQualityPair pair;
  pair.all = make_report(all_sids.sids, n, k, mode);
  pair.test = make_report(test_sids, n, k, mode);
  return pair;
}

nlohmann::json report_to_json(const SidQualityPair& pair) {
  nlohmann::json j;
  j["cur"] = {{"all", pair.all.cur_percent}, {"test", pair.test.cur_percent}};
  j["cardinality"] = {{"all", pair.all.cardinality},
                      {"test", pair.test.cardinality},
                      {"max_all", pair.all.cardinality_max},
                      {"max_test", pair.test.cardinality_max}};
  j["conflict_rate"] = {{"all", pair.all.conflict_rate_percent},
                        {"test", pair.test.conflict_rate_percent}};
  return j;
}

}  // namespace fusid
