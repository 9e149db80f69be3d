#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fusid/corpus.hpp"
#include "fusid/fusion.hpp"
#include "fusid/genrec.hpp"
#include "fusid/pairmine.hpp"
#include "fusid/playvec.hpp"
#include "fusid/pq.hpp"
#include "fusid/sidqual.hpp"

namespace fusid {

enum class Stage { synth, split, playvec, pairs, fusion, pq, sidqual, genrec };

const char* stage_name(Stage s);
std::vector<Stage> parse_stages(const std::string& names);  // "all" or comma list

struct PipelineConfig {
  std::string out_dir = "runs/out";
  std::uint64_t seed = 0;
  SynthConfig synth;
  int min_len = 6;
  std::array<double, 3> ratios = {0.8, 0.1, 0.1};
  PlayvecConfig playvec;
  PairMineConfig pairs;
  FusionConfig fusion;  // input_dim 0 means inferred from the feature table
  KmeansConfig pq;
  ConflictMode conflict_mode = ConflictMode::all_members;
  RecConfig genrec;
  std::vector<int> ks = {1, 5, 10, 20};
  int eval_threads = 0;

  nlohmann::json to_json() const;
  static PipelineConfig from_json(const nlohmann::json& j);  // rejects unknown keys
  std::string config_hash() const;
};

// key=value with dotted paths, e.g. fusion.alpha=0.1; the value is parsed
// as JSON when possible, otherwise taken as a string.
void apply_override(nlohmann::json& config, const std::string& assignment);

PipelineConfig load_pipeline_config(const std::string& path,
                                    const std::vector<std::string>& overrides = {});

// Artifact layout inside a run directory.
struct ArtifactPaths {
  std::string dir;

  std::string tracks() const { return dir + "/tracks.jsonl"; }
  std::string playlists() const { return dir + "/playlists.jsonl"; }
  std::string filtered_playlists() const { return dir + "/filtered_playlists.jsonl"; }
  std::string split() const { return dir + "/split.json"; }
  std::string playvec_file() const { return dir + "/playvec.fvec"; }
  std::string pairs() const { return dir + "/pairs.jsonl"; }
  std::string fusion_model() const { return dir + "/fusion.fmod"; }
  std::string fusion_history() const { return dir + "/fusion_history.json"; }
  std::string embeddings() const { return dir + "/embeddings.fvec"; }
  std::string codebook() const { return dir + "/codebook.fcbk"; }
  std::string sids() const { return dir + "/sids.jsonl"; }
  std::string test_track_ids() const { return dir + "/test_track_ids.txt"; }
  std::string sidqual_report() const { return dir + "/sidqual.json"; }
  std::string rec_model() const { return dir + "/recmodel.frec"; }
  std::string rec_metrics() const { return dir + "/genrec_metrics.json"; }
  std::string manifest() const { return dir + "/manifest.json"; }
};

struct StageRecord {
  std::string stage;
  std::uint64_t seed = 0;
  std::string config_hash;
  std::vector<std::pair<std::string, std::string>> outputs;  // filename -> fingerprint
};

struct Manifest {
  std::vector<StageRecord> stages;

  nlohmann::json to_json() const;
  static Manifest from_json(const nlohmann::json& j);
  void upsert(StageRecord record);  // replace the entry for the same stage
};

// Runs the requested stages in dependency order; every stage reads its
// inputs from disk so isolated reruns reproduce in-pipeline results exactly.
Manifest run_pipeline(const PipelineConfig& config, const std::vector<Stage>& stages);

// Embeddings persisted as a generic FVEC table with dim = n*d.
void save_vector_table(const VectorTable& table, const std::string& path);
VectorTable load_vector_table(const std::string& path);

// Two full runs from the same seed (configured alpha vs alpha = 0) plus a
// side-by-side report of semantic-id quality and recommendation metrics.
nlohmann::json run_ablation(const PipelineConfig& config);

}  // namespace fusid
