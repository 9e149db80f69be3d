#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fusid/types.hpp"

namespace fusid {

enum class ConflictMode {
  all_members,  // every item in a colliding group counts (default)
  extras,       // only duplicates beyond the first count
};

struct SidQualityReport {
  double cur_percent = 0.0;
  std::int64_t cardinality = 0;
  std::int64_t cardinality_max = 0;
  double conflict_rate_percent = 0.0;
};

struct SidQualityPair {
  SidQualityReport all;
  SidQualityReport test;
};

// Percentage of (position, code) entries never used by any SID.
double cur(const std::vector<SemanticId>& sids, int n, int k);

std::int64_t cardinality(const std::vector<SemanticId>& sids);

// Percentage of items whose SID appears >= 2 times; DataError on empty input.
double conflict_rate(const std::vector<SemanticId>& sids,
                     ConflictMode mode = ConflictMode::all_members);

SidQualityReport make_report(const std::vector<SemanticId>& sids, int n, int k,
                             ConflictMode mode = ConflictMode::all_members);

// All/test metric pair; test ids must be a subset of the table and share the
// full n*K codebook denominator for CUR.
SidQualityPair report(const SidTable& all_sids, const std::vector<TrackId>& test_ids, int n,
                      int k, ConflictMode mode = ConflictMode::all_members);

nlohmann::json report_to_json(const SidQualityPair& pair);

}  // namespace fusid
