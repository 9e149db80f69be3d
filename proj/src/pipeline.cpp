#include "fusid/pipeline.hpp"

#include <algorithm>
#include <filesystem>
#include <set>
#include <unordered_set>

#include "fusid/io.hpp"

namespace fusid {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

constexpr Stage kAllStages[] = {Stage::synth,  Stage::split, Stage::playvec, Stage::pairs,
                                Stage::fusion, Stage::pq,    Stage::sidqual, Stage::genrec};

void check_keys(const json& j, const std::string& section,
                std::initializer_list<const char*> allowed) {
  if (!j.is_object()) {
    throw UsageError("config section '" + section + "' must be an object");
  }
  for (const auto& [key, _] : j.items()) {
    if (std::find_if(allowed.begin(), allowed.end(),
                     [&key](const char* a) { return key == a; }) == allowed.end()) {
      throw UsageError("unknown config key '" + section + "." + key + "'");
    }
  }
}

template <typename T>
void read_into(const json& j, const char* key, T& out) {
  if (j.contains(key)) {
    out = j[key].get<T>();
  }
}

DistanceMode parse_distance(const std::string& s) {
  if (s == "dim-normalized" || s == "dim_normalized") return DistanceMode::dim_normalized;
  if (s == "plain") return DistanceMode::plain;
  throw UsageError("unknown distance mode '" + s + "' (expected dim-normalized or plain)");
}

std::string distance_name(DistanceMode m) {
  return m == DistanceMode::dim_normalized ? "dim-normalized" : "plain";
}

Optimizer parse_optimizer(const std::string& s) {
  if (s == "sgd") return Optimizer::sgd;
  if (s == "adam") return Optimizer::adam;
  throw UsageError("unknown optimizer '" + s + "' (expected sgd or adam)");
}

std::string optimizer_name(Optimizer o) { return o == Optimizer::sgd ? "sgd" : "adam"; }

ConflictMode parse_conflict_mode(const std::string& s) {
  if (s == "all-members" || s == "all_members") return ConflictMode::all_members;
  if (s == "extras") return ConflictMode::extras;
  throw UsageError("unknown conflict mode '" + s + "' (expected all-members or extras)");
}

std::string conflict_mode_name(ConflictMode m) {
  return m == ConflictMode::all_members ? "all-members" : "extras";
}

void require_artifact(const std::string& path, Stage stage, const char* producer) {
  if (!fs::exists(path)) {
    throw DataError(std::string("stage '") + stage_name(stage) + "' is missing dependency " +
                    path + "; run stage '" + producer + "' first");
  }
}

std::vector<Playlist> playlists_for(const std::vector<Playlist>& all,
                                    const std::vector<PlaylistId>& ids) {
  std::unordered_set<PlaylistId> wanted(ids.begin(), ids.end());
  std::vector<Playlist> out;
  out.reserve(ids.size());
  for (const auto& pl : all) {
    if (wanted.count(pl.id)) {
      out.push_back(pl);
    }
  }
  return out;
}

std::vector<TrackId> distinct_tracks(const std::vector<Playlist>& playlists) {
  std::set<TrackId> ids;
  for (const auto& pl : playlists) {
    ids.insert(pl.tracks.begin(), pl.tracks.end());
  }
  return {ids.begin(), ids.end()};
}

StageRecord make_record(const PipelineConfig& config, Stage stage, std::uint64_t seed,
                        const std::vector<std::string>& outputs) {
  StageRecord rec;
  rec.stage = stage_name(stage);
  rec.seed = seed;
  rec.config_hash = config.config_hash();
  for (const auto& path : outputs) {
    rec.outputs.emplace_back(fs::path(path).filename().string(),
                             io::fingerprint_hex(io::file_fingerprint(path)));
  }
  return rec;
}

}  // namespace

const char* stage_name(Stage s) {
  switch (s) {
    case Stage::synth: return "synth";
    case Stage::split: return "split";
    case Stage::playvec: return "playvec";
    case Stage::pairs: return "pairs";
    case Stage::fusion: return "fusion";
    case Stage::pq: return "pq";
    case Stage::sidqual: return "sidqual";
    case Stage::genrec: return "genrec";
  }
  return "?";
}

std::vector<Stage> parse_stages(const std::string& names) {
  if (names == "all" || names.empty()) {
    return {kAllStages, kAllStages + std::size(kAllStages)};
  }
  std::set<int> chosen;
  std::size_t start = 0;
  while (start <= names.size()) {
    std::size_t comma = names.find(',', start);
    std::string name = names.substr(start, comma == std::string::npos ? std::string::npos
                                                                     : comma - start);
    if (!name.empty()) {
      bool found = false;
      for (Stage s : kAllStages) {
        if (name == stage_name(s)) {
          chosen.insert(static_cast<int>(s));
          found = true;
          break;
        }
      }
      if (!found) {
        throw UsageError("unknown stage '" + name + "'");
      }
    }
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  std::vector<Stage> out;
  for (Stage s : kAllStages) {
    if (chosen.count(static_cast<int>(s))) {
      out.push_back(s);
    }
  }
  return out;
}

json PipelineConfig::to_json() const {
  json j;
  j["out_dir"] = out_dir;
  j["seed"] = seed;

  json s;
  s["n_tracks"] = synth.n_tracks;
  s["n_playlists"] = synth.n_playlists;
  s["n_genres"] = synth.n_genres;
  json mods = json::array();
  for (const auto& [name, dim] : synth.modalities) {
    mods.push_back({{"name", name}, {"dim", dim}});
  }
  s["modalities"] = mods;
  s["playlist_len_min"] = synth.playlist_len_min;
  s["playlist_len_max"] = synth.playlist_len_max;
  s["p_coherence"] = synth.p_coherence;
  s["noise_sigma"] = synth.noise_sigma;
  j["synth"] = s;

  j["corpus"] = {{"min_len", min_len}, {"ratios", ratios}};
  j["playvec"] = {{"dim", playvec.dim},       {"window", playvec.window},
                  {"neg", playvec.neg_k},     {"epochs", playvec.epochs},
                  {"lr", playvec.lr},         {"workers", playvec.workers}};
  j["pairs"] = {{"min_count", pairs.min_count},
                {"pos_per_anchor", pairs.pos_per_anchor},
                {"neg_quantile", pairs.neg_quantile}};
  j["fusion"] = {{"hidden_dim", fusion.hidden_dim},
                 {"n", fusion.n},
                 {"d", fusion.d},
                 {"alpha", fusion.alpha},
                 {"gamma", fusion.gamma},
                 {"eps", fusion.eps},
                 {"batch_size", fusion.batch_size},
                 {"lr", fusion.lr},
                 {"epochs", fusion.epochs},
                 {"distance", distance_name(fusion.distance)},
                 {"optimizer", optimizer_name(fusion.optimizer)}};
  j["pq"] = {{"k", pq.k}, {"max_iters", pq.max_iters}, {"tol", pq.tol}};
  j["sidqual"] = {{"conflict_mode", conflict_mode_name(conflict_mode)}};
  j["genrec"] = {{"layers", genrec.layers},
                 {"heads", genrec.heads},
                 {"d_model", genrec.d_model},
                 {"d_ff", genrec.d_ff},
                 {"max_len", genrec.max_len},
                 {"lr", genrec.lr},
                 {"batch_size", genrec.batch_size},
                 {"epochs", genrec.epochs},
                 {"optimizer", optimizer_name(genrec.optimizer)},
                 {"ks", ks},
                 {"eval_threads", eval_threads}};
  return j;
}

PipelineConfig PipelineConfig::from_json(const json& j) {
  check_keys(j, "", {"out_dir", "seed", "synth", "corpus", "playvec", "pairs", "fusion", "pq",
                     "sidqual", "genrec"});
  PipelineConfig c;
  read_into(j, "out_dir", c.out_dir);
  read_into(j, "seed", c.seed);

  if (j.contains("synth")) {
    const json& s = j["synth"];
    check_keys(s, "synth",
               {"n_tracks", "n_playlists", "n_genres", "modalities", "playlist_len_min",
                "playlist_len_max", "p_coherence", "noise_sigma"});
    read_into(s, "n_tracks", c.synth.n_tracks);
    read_into(s, "n_playlists", c.synth.n_playlists);
    read_into(s, "n_genres", c.synth.n_genres);
    if (s.contains("modalities")) {
      c.synth.modalities.clear();
      for (const auto& m : s["modalities"]) {
        check_keys(m, "synth.modalities[]", {"name", "dim"});
        c.synth.modalities.emplace_back(m.at("name").get<std::string>(),
                                        m.at("dim").get<int>());
      }
    }
    read_into(s, "playlist_len_min", c.synth.playlist_len_min);
    read_into(s, "playlist_len_max", c.synth.playlist_len_max);
    read_into(s, "p_coherence", c.synth.p_coherence);
    read_into(s, "noise_sigma", c.synth.noise_sigma);
  }

  if (j.contains("corpus")) {
    const json& s = j["corpus"];
    check_keys(s, "corpus", {"min_len", "ratios"});
    read_into(s, "min_len", c.min_len);
    if (s.contains("ratios")) {
      auto r = s["ratios"].get<std::vector<double>>();
      if (r.size() != 3) {
        throw UsageError("corpus.ratios must have exactly three entries");
      }
      c.ratios = {r[0], r[1], r[2]};
    }
  }

  if (j.contains("playvec")) {
    const json& s = j["playvec"];
    check_keys(s, "playvec", {"dim", "window", "neg", "epochs", "lr", "workers"});
    read_into(s, "dim", c.playvec.dim);
    read_into(s, "window", c.playvec.window);
    read_into(s, "neg", c.playvec.neg_k);
    read_into(s, "epochs", c.playvec.epochs);
    read_into(s, "lr", c.playvec.lr);
    read_into(s, "workers", c.playvec.workers);
  }

  if (j.contains("pairs")) {
    const json& s = j["pairs"];
    check_keys(s, "pairs", {"min_count", "pos_per_anchor", "neg_quantile"});
    read_into(s, "min_count", c.pairs.min_count);
    read_into(s, "pos_per_anchor", c.pairs.pos_per_anchor);
    read_into(s, "neg_quantile", c.pairs.neg_quantile);
  }

  if (j.contains("fusion")) {
    const json& s = j["fusion"];
    check_keys(s, "fusion",
               {"hidden_dim", "n", "d", "alpha", "gamma", "eps", "batch_size", "lr", "epochs",
                "distance", "optimizer"});
    read_into(s, "hidden_dim", c.fusion.hidden_dim);
    read_into(s, "n", c.fusion.n);
    read_into(s, "d", c.fusion.d);
    read_into(s, "alpha", c.fusion.alpha);
    read_into(s, "gamma", c.fusion.gamma);
    read_into(s, "eps", c.fusion.eps);
    read_into(s, "batch_size", c.fusion.batch_size);
    read_into(s, "lr", c.fusion.lr);
    read_into(s, "epochs", c.fusion.epochs);
    if (s.contains("distance")) {
      c.fusion.distance = parse_distance(s["distance"].get<std::string>());
    }
    if (s.contains("optimizer")) {
      c.fusion.optimizer = parse_optimizer(s["optimizer"].get<std::string>());
    }
  }

  if (j.contains("pq")) {
    const json& s = j["pq"];
    check_keys(s, "pq", {"k", "max_iters", "tol"});
    read_into(s, "k", c.pq.k);
    read_into(s, "max_iters", c.pq.max_iters);
    read_into(s, "tol", c.pq.tol);
  }

  if (j.contains("sidqual")) {
    const json& s = j["sidqual"];
    check_keys(s, "sidqual", {"conflict_mode"});
    if (s.contains("conflict_mode")) {
      c.conflict_mode = parse_conflict_mode(s["conflict_mode"].get<std::string>());
    }
  }

  if (j.contains("genrec")) {
    const json& s = j["genrec"];
    check_keys(s, "genrec",
               {"layers", "heads", "d_model", "d_ff", "max_len", "lr", "batch_size", "epochs",
                "optimizer", "ks", "eval_threads"});
    read_into(s, "layers", c.genrec.layers);
    read_into(s, "heads", c.genrec.heads);
    read_into(s, "d_model", c.genrec.d_model);
    read_into(s, "d_ff", c.genrec.d_ff);
    read_into(s, "max_len", c.genrec.max_len);
    read_into(s, "lr", c.genrec.lr);
    read_into(s, "batch_size", c.genrec.batch_size);
    read_into(s, "epochs", c.genrec.epochs);
    if (s.contains("optimizer")) {
      c.genrec.optimizer = parse_optimizer(s["optimizer"].get<std::string>());
    }
    read_into(s, "ks", c.ks);
    read_into(s, "eval_threads", c.eval_threads);
  }
  return c;
}

std::string PipelineConfig::config_hash() const {
  return io::fingerprint_hex(fnv1a64(to_json().dump()));
}

void apply_override(json& config, const std::string& assignment) {
  auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw UsageError("--set expects key=value, got '" + assignment + "'");
  }
  std::string path = assignment.substr(0, eq);
  std::string value = assignment.substr(eq + 1);

  json* node = &config;
  std::size_t start = 0;
  while (true) {
    std::size_t dot = path.find('.', start);
    std::string key = path.substr(start, dot == std::string::npos ? std::string::npos
                                                                  : dot - start);
    if (key.empty()) {
      throw UsageError("--set path has an empty segment: '" + path + "'");
    }
    if (dot == std::string::npos) {
      json parsed = json::parse(value, nullptr, /*allow_exceptions=*/false);
      (*node)[key] = parsed.is_discarded() ? json(value) : parsed;
      return;
    }
    node = &(*node)[key];
    start = dot + 1;
  }
}

PipelineConfig load_pipeline_config(const std::string& path,
                                    const std::vector<std::string>& overrides) {
  auto is = io::open_input(path, false);
  json j;
  try {
    is >> j;
  } catch (const std::exception& e) {
    throw DataError(path + ": malformed config JSON: " + e.what());
  }
  for (const auto& o : overrides) {
    apply_override(j, o);
  }
  return PipelineConfig::from_json(j);
}

json Manifest::to_json() const {
  json j;
  json arr = json::array();
  for (const auto& rec : stages) {
    json outputs = json::object();
    for (const auto& [name, fp] : rec.outputs) {
      outputs[name] = fp;
    }
    arr.push_back({{"stage", rec.stage},
                   {"seed", rec.seed},
                   {"config_hash", rec.config_hash},
                   {"outputs", outputs}});
  }
  j["stages"] = arr;
  return j;
}

Manifest Manifest::from_json(const json& j) {
  Manifest m;
  for (const auto& rec : j.at("stages")) {
    StageRecord r;
    r.stage = rec.at("stage").get<std::string>();
    r.seed = rec.at("seed").get<std::uint64_t>();
    r.config_hash = rec.at("config_hash").get<std::string>();
    for (const auto& [name, fp] : rec.at("outputs").items()) {
      r.outputs.emplace_back(name, fp.get<std::string>());
    }
    m.stages.push_back(std::move(r));
  }
  return m;
}

void Manifest::upsert(StageRecord record) {
  for (auto& rec : stages) {
    if (rec.stage == record.stage) {
      rec = std::move(record);
      return;
    }
  }
  stages.push_back(std::move(record));
}

void save_vector_table(const VectorTable& table, const std::string& path) {
  auto os = io::open_output(path, true);
  io::write_magic(os, "FVEC");
  io::write_u32(os, 1);
  io::write_u64(os, table.size());
  io::write_u32(os, static_cast<std::uint32_t>(table.dim()));
  for (std::size_t i = 0; i < table.size(); ++i) {
    io::write_u64(os, table.ids[i]);
    for (int c = 0; c < table.dim(); ++c) {
      io::write_f32(os, static_cast<float>(table.rows(static_cast<Eigen::Index>(i), c)));
    }
  }
}

VectorTable load_vector_table(const std::string& path) {
  auto is = io::open_input(path, true);
  io::expect_magic(is, "FVEC", path);
  std::uint32_t version = io::read_u32(is, path + " version");
  if (version != 1) {
    throw DataError(path + ": unsupported FVEC version " + std::to_string(version));
  }
  std::uint64_t count = io::read_u64(is, path + " count");
  std::uint32_t dim = io::read_u32(is, path + " dim");

  std::vector<std::pair<TrackId, std::vector<float>>> rows;
  rows.reserve(count);
  for (std::uint64_t i = 0; i < count; ++i) {
    TrackId id = io::read_u64(is, path + " track_id");
    std::vector<float> v(dim);
    for (std::uint32_t c = 0; c < dim; ++c) {
      v[c] = io::read_f32(is, path + " vector");
    }
    rows.emplace_back(id, std::move(v));
  }
  std::sort(rows.begin(), rows.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });

  VectorTable table;
  table.ids.reserve(rows.size());
  table.rows.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(dim));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    table.ids.push_back(rows[i].first);
    for (std::uint32_t c = 0; c < dim; ++c) {
      table.rows(static_cast<Eigen::Index>(i), c) = rows[i].second[c];
    }
  }
  table.rebuild_index();
  return table;
}

Manifest run_pipeline(const PipelineConfig& config, const std::vector<Stage>& stages) {
  ArtifactPaths paths{config.out_dir};
  fs::create_directories(config.out_dir);

  Manifest manifest;
  if (fs::exists(paths.manifest())) {
    auto is = io::open_input(paths.manifest(), false);
    json j;
    is >> j;
    manifest = Manifest::from_json(j);
  }

  for (Stage stage : stages) {
    const std::uint64_t stage_seed = derive_seed(config.seed, stage_name(stage));
    std::vector<std::string> outputs;

    switch (stage) {
      case Stage::synth: {
        SynthResult synth = generate_synthetic_corpus(config.synth, stage_seed);
        save_tracks(synth.corpus.tracks, paths.tracks());
        save_playlists(synth.corpus.playlists, paths.playlists());
        outputs = {paths.tracks(), paths.playlists()};
        break;
      }
      case Stage::split: {
        require_artifact(paths.tracks(), stage, "synth");
        require_artifact(paths.playlists(), stage, "synth");
        Corpus corpus = load_corpus(paths.tracks(), paths.playlists());
        std::unordered_set<TrackId> valid;
        for (const auto& t : corpus.tracks.all()) {
          valid.insert(t.id);
        }
        auto filtered = filter_playlists(corpus.playlists, valid, config.min_len);
        save_playlists(filtered, paths.filtered_playlists());
        CorpusSplit split = split_corpus(filtered, config.ratios, stage_seed);
        save_split(split, paths.split());
        outputs = {paths.filtered_playlists(), paths.split()};
        break;
      }
      case Stage::playvec: {
        require_artifact(paths.filtered_playlists(), stage, "split");
        require_artifact(paths.split(), stage, "split");
        auto filtered = load_playlists(paths.filtered_playlists());
        CorpusSplit split = load_split(paths.split());
        PlayvecConfig cfg = config.playvec;
        cfg.seed = stage_seed;
        PlayvecModel model = train_playvec(playlists_for(filtered, split.train), cfg);
        save_playvec(model, paths.playvec_file());
        outputs = {paths.playvec_file()};
        break;
      }
      case Stage::pairs: {
        require_artifact(paths.filtered_playlists(), stage, "split");
        require_artifact(paths.split(), stage, "split");
        auto filtered = load_playlists(paths.filtered_playlists());
        CorpusSplit split = load_split(paths.split());
        CoocStats stats = count_cooccurrence(playlists_for(filtered, split.train));
        PairMineConfig cfg = config.pairs;
        cfg.seed = stage_seed;
        PairSet pairs = mine_pairs(stats, cfg);
        save_pairs(pairs, paths.pairs());
        outputs = {paths.pairs()};
        break;
      }
      case Stage::fusion: {
        require_artifact(paths.tracks(), stage, "synth");
        require_artifact(paths.playvec_file(), stage, "playvec");
        require_artifact(paths.pairs(), stage, "pairs");
        Corpus corpus = load_corpus(paths.tracks(), paths.playlists());
        PlayvecModel playvec = load_playvec(paths.playvec_file());
        PairSet pairs = load_pairs(paths.pairs());
        VectorTable features = assemble_features(corpus.tracks, playvec);
        FusionConfig cfg = config.fusion;
        cfg.seed = stage_seed;
        cfg.input_dim = features.dim();
        TrainedFusion trained = train_fusion(features, pairs, cfg);
        save_fusion(trained.model, paths.fusion_model());

        json hist = json::array();
        for (const auto& e : trained.history.epochs) {
          hist.push_back({{"contrastive", e.contrastive},
                          {"covariance", e.covariance},
                          {"variance", e.variance},
                          {"total", e.total(cfg.alpha)}});
        }
        {
          auto os = io::open_output(paths.fusion_history(), false);
          os << json{{"alpha", cfg.alpha}, {"epochs", hist}}.dump(2) << "\n";
        }

        VectorTable embeddings = embed_catalog(trained.model, features);
        save_vector_table(embeddings, paths.embeddings());
        outputs = {paths.fusion_model(), paths.fusion_history(), paths.embeddings()};
        break;
      }
      case Stage::pq: {
        require_artifact(paths.embeddings(), stage, "fusion");
        require_artifact(paths.filtered_playlists(), stage, "split");
        require_artifact(paths.split(), stage, "split");
        VectorTable embeddings = load_vector_table(paths.embeddings());
        auto filtered = load_playlists(paths.filtered_playlists());
        CorpusSplit split = load_split(paths.split());

        // Codebooks are fit on songs included in the training playlists.
        auto train_tracks = distinct_tracks(playlists_for(filtered, split.train));
        VectorTable train_embeddings;
        train_embeddings.ids = train_tracks;
        train_embeddings.rows.resize(static_cast<Eigen::Index>(train_tracks.size()),
                                     embeddings.dim());
        for (std::size_t i = 0; i < train_tracks.size(); ++i) {
          train_embeddings.rows.row(static_cast<Eigen::Index>(i)) =
              embeddings.rows.row(embeddings.row_of.at(train_tracks[i]));
        }
        train_embeddings.rebuild_index();

        KmeansConfig cfg = config.pq;
        cfg.seed = stage_seed;
        Codebook book = fit_codebook(train_embeddings, config.fusion.n, config.fusion.d, cfg);
        save_codebook(book, paths.codebook());
        SidTable sids = tokenize_catalog(book, embeddings);
        save_sids(sids, paths.sids());
        outputs = {paths.codebook(), paths.sids()};
        break;
      }
      case Stage::sidqual: {
        require_artifact(paths.sids(), stage, "pq");
        require_artifact(paths.filtered_playlists(), stage, "split");
        require_artifact(paths.split(), stage, "split");
        SidTable sids = load_sids(paths.sids());
        auto filtered = load_playlists(paths.filtered_playlists());
        CorpusSplit split = load_split(paths.split());
        auto test_tracks = distinct_tracks(playlists_for(filtered, split.test));
        {
          auto os = io::open_output(paths.test_track_ids(), false);
          for (TrackId id : test_tracks) {
            os << id << "\n";
          }
        }
        SidQualityPair pair =
            report(sids, test_tracks, config.fusion.n, config.pq.k, config.conflict_mode);
        {
          auto os = io::open_output(paths.sidqual_report(), false);
          os << report_to_json(pair).dump(2) << "\n";
        }
        outputs = {paths.test_track_ids(), paths.sidqual_report()};
        break;
      }
      case Stage::genrec: {
        require_artifact(paths.sids(), stage, "pq");
        require_artifact(paths.filtered_playlists(), stage, "split");
        require_artifact(paths.split(), stage, "split");
        SidTable sids = load_sids(paths.sids());
        auto filtered = load_playlists(paths.filtered_playlists());
        CorpusSplit split = load_split(paths.split());
        auto train_playlists = playlists_for(filtered, split.train);
        auto test_playlists = playlists_for(filtered, split.test);

        TokenVocab vocab{config.fusion.n, config.pq.k};
        RecConfig cfg = config.genrec;
        cfg.seed = stage_seed;
        TrainedRec trained = train_recmodel(train_playlists, sids, vocab, cfg);
        save_recmodel(trained.model, paths.rec_model());

        auto instances = make_eval_instances(test_playlists);
        RecMetrics model_metrics =
            evaluate(trained.model, instances, sids, config.ks, config.eval_threads);

        PopularityRanker popularity(train_playlists, sids.ids);
        RecMetrics pop_metrics = evaluate_with_ranks(
            instances,
            [&](std::size_t, const EvalInstance& inst) {
              return popularity.rank_of(inst.target);
            },
            config.ks);
        RandomRanker random(sids.ids, derive_seed(config.seed, "random-baseline"));
        RecMetrics rand_metrics = evaluate_with_ranks(
            instances,
            [&](std::size_t i, const EvalInstance& inst) {
              return random.rank_of(i, inst.target);
            },
            config.ks);

        json out = metrics_to_json(model_metrics);
        out["loss_curve"] = trained.epoch_loss;
        out["baselines"] = {{"popularity", metrics_to_json(pop_metrics)},
                            {"random", metrics_to_json(rand_metrics)}};
        {
          auto os = io::open_output(paths.rec_metrics(), false);
          os << out.dump(2) << "\n";
        }
        outputs = {paths.rec_model(), paths.rec_metrics()};
        break;
      }
    }

    manifest.upsert(make_record(config, stage, stage_seed, outputs));
    auto os = io::open_output(paths.manifest(), false);
    os << manifest.to_json().dump(2) << "\n";
  }
  return manifest;
}

json run_ablation(const PipelineConfig& config) {
  auto run_variant = [](PipelineConfig variant) {
    run_pipeline(variant, parse_stages("all"));
    ArtifactPaths paths{variant.out_dir};
    auto is_sq = io::open_input(paths.sidqual_report(), false);
    json sidqual;
    is_sq >> sidqual;
    auto is_gm = io::open_input(paths.rec_metrics(), false);
    json metrics;
    is_gm >> metrics;
    json fusion_hist;
    auto is_fh = io::open_input(paths.fusion_history(), false);
    is_fh >> fusion_hist;
    return json{{"alpha", variant.fusion.alpha},
                {"sidqual", sidqual},
                {"metrics", metrics},
                {"fusion_history", fusion_hist}};
  };

  PipelineConfig full = config;
  full.out_dir = config.out_dir + "/full";
  PipelineConfig ablation = config;
  ablation.out_dir = config.out_dir + "/ablation";
  ablation.fusion.alpha = 0.0;

  json full_row = run_variant(full);
  full_row["name"] = "fusid";
  json ablation_row = run_variant(ablation);
  ablation_row["name"] = "fusid-ablation";

  json report;
  report["rows"] = json::array({full_row, ablation_row});

  fs::create_directories(config.out_dir);
  auto os = io::open_output(config.out_dir + "/ablation_report.json", false);
  os << report.dump(2) << "\n";
  return report;
}

}  // namespace fusid
