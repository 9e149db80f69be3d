#include <filesystem>
#include <iostream>
#include <set>
#include <string>
#include <unordered_set>
#include <vector>

#include <CLI11.hpp>

#include "fusid/io.hpp"
#include "fusid/pipeline.hpp"

namespace {

namespace fs = std::filesystem;
using namespace fusid;

std::array<double, 3> parse_ratios(const std::string& s) {
  std::array<double, 3> out{};
  std::size_t start = 0;
  for (int i = 0; i < 3; ++i) {
    std::size_t comma = s.find(',', start);
    std::string part = s.substr(start, comma == std::string::npos ? std::string::npos
                                                                  : comma - start);
    if (part.empty() || (i < 2 && comma == std::string::npos) ||
        (i == 2 && comma != std::string::npos)) {
      throw UsageError("--ratios expects three comma-separated numbers, got '" + s + "'");
    }
    out[static_cast<std::size_t>(i)] = std::stod(part);
    start = comma + 1;
  }
  return out;
}

std::vector<int> parse_int_list(const std::string& s) {
  std::vector<int> out;
  std::size_t start = 0;
  while (start <= s.size()) {
    std::size_t comma = s.find(',', start);
    std::string part = s.substr(start, comma == std::string::npos ? std::string::npos
                                                                  : comma - start);
    if (!part.empty()) {
      out.push_back(std::stoi(part));
    }
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  if (out.empty()) {
    throw UsageError("expected a comma-separated integer list, got '" + s + "'");
  }
  return out;
}

DistanceMode parse_distance_flag(const std::string& s) {
  if (s == "dim-normalized") return DistanceMode::dim_normalized;
  if (s == "plain") return DistanceMode::plain;
  throw UsageError("--distance expects dim-normalized or plain");
}

Optimizer parse_optimizer_flag(const std::string& s) {
  if (s == "sgd") return Optimizer::sgd;
  if (s == "adam") return Optimizer::adam;
  throw UsageError("--optimizer expects sgd or adam");
}

std::vector<Playlist> train_subset(const std::vector<Playlist>& playlists,
                                   const std::string& split_path) {
  if (split_path.empty()) {
    return playlists;
  }
  CorpusSplit split = load_split(split_path);
  std::unordered_set<PlaylistId> wanted(split.train.begin(), split.train.end());
  std::vector<Playlist> out;
  for (const auto& pl : playlists) {
    if (wanted.count(pl.id)) {
      out.push_back(pl);
    }
  }
  return out;
}

std::vector<TrackId> read_id_file(const std::string& path) {
  std::vector<TrackId> ids;
  io::for_each_line(path, [&](std::size_t line_no, const std::string& line) {
    try {
      ids.push_back(std::stoull(line));
    } catch (const std::exception&) {
      throw DataError(path + ":" + std::to_string(line_no) + ": not a track id: '" + line +
                      "'");
    }
  });
  return ids;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"fusid: modality-fused semantic ids for playlist continuation"};
  app.require_subcommand(1);

  try {
    // ---- corpus ----
    auto* corpus_cmd = app.add_subcommand("corpus", "corpus generation and preparation");
    corpus_cmd->require_subcommand(1);

    std::string synth_config, synth_out = "runs/out";
    std::uint64_t synth_seed = 0;
    auto* synth_cmd = corpus_cmd->add_subcommand("synth", "generate a synthetic corpus");
    synth_cmd->add_option("--config", synth_config, "synthetic corpus config JSON")->required();
    synth_cmd->add_option("--seed", synth_seed, "RNG seed");
    synth_cmd->add_option("--out", synth_out, "output directory")->required();
    synth_cmd->callback([&]() {
      auto is = io::open_input(synth_config, false);
      nlohmann::json j;
      is >> j;
      PipelineConfig cfg = PipelineConfig::from_json(nlohmann::json{{"synth", j}});
      SynthResult result = generate_synthetic_corpus(cfg.synth, synth_seed);
      fs::create_directories(synth_out);
      save_tracks(result.corpus.tracks, synth_out + "/tracks.jsonl");
      save_playlists(result.corpus.playlists, synth_out + "/playlists.jsonl");
      std::cout << "wrote " << result.corpus.tracks.size() << " tracks, "
                << result.corpus.playlists.size() << " playlists to " << synth_out << "\n";
    });

    std::string filter_tracks, filter_playlists_path, filter_out;
    int filter_min_len = 6;
    auto* filter_cmd = corpus_cmd->add_subcommand("filter", "drop short playlists");
    filter_cmd->add_option("--tracks", filter_tracks, "tracks.jsonl (defines valid ids)")
        ->required();
    filter_cmd->add_option("--playlists", filter_playlists_path, "playlists.jsonl")->required();
    filter_cmd->add_option("--min-len", filter_min_len, "minimum valid tracks per playlist");
    filter_cmd->add_option("--out", filter_out, "filtered playlists output")->required();
    filter_cmd->callback([&]() {
      Corpus corpus = load_corpus(filter_tracks, filter_playlists_path);
      std::unordered_set<TrackId> valid;
      for (const auto& t : corpus.tracks.all()) valid.insert(t.id);
      auto filtered = filter_playlists(corpus.playlists, valid, filter_min_len);
      save_playlists(filtered, filter_out);
      std::cout << "kept " << filtered.size() << " of " << corpus.playlists.size()
                << " playlists\n";
    });

    std::string split_playlists_path, split_ratios = "0.8,0.1,0.1", split_out;
    std::uint64_t split_seed = 0;
    auto* split_cmd = corpus_cmd->add_subcommand("split", "train/val/test split");
    split_cmd->add_option("--playlists", split_playlists_path, "playlists.jsonl")->required();
    split_cmd->add_option("--ratios", split_ratios, "train,val,test ratios");
    split_cmd->add_option("--seed", split_seed, "RNG seed");
    split_cmd->add_option("--out", split_out, "split JSON output")->required();
    split_cmd->callback([&]() {
      auto playlists = load_playlists(split_playlists_path);
      CorpusSplit split = split_corpus(playlists, parse_ratios(split_ratios), split_seed);
      save_split(split, split_out);
      std::cout << "split " << playlists.size() << " playlists into " << split.train.size()
                << "/" << split.val.size() << "/" << split.test.size() << "\n";
    });

    // ---- playvec ----
    auto* playvec_cmd = app.add_subcommand("playvec", "playlist co-occurrence embeddings");
    playvec_cmd->require_subcommand(1);

    std::string pv_playlists, pv_split, pv_out;
    PlayvecConfig pv_cfg;
    bool pv_hogwild = false;
    auto* pv_train = playvec_cmd->add_subcommand("train", "train skip-gram embeddings");
    pv_train->add_option("--playlists", pv_playlists, "filtered playlists")->required();
    pv_train->add_option("--split", pv_split, "split JSON (train subset used)");
    pv_train->add_option("--dim", pv_cfg.dim, "embedding dimension");
    pv_train->add_option("--window", pv_cfg.window, "context window");
    pv_train->add_option("--neg", pv_cfg.neg_k, "negative samples per pair");
    pv_train->add_option("--epochs", pv_cfg.epochs, "training epochs");
    pv_train->add_option("--lr", pv_cfg.lr, "learning rate");
    pv_train->add_option("--seed", pv_cfg.seed, "RNG seed");
    pv_train->add_flag("--hogwild", pv_hogwild, "unsynchronized parallel workers");
    pv_train->add_option("--workers", pv_cfg.workers, "worker count for --hogwild");
    pv_train->add_option("--out", pv_out, "FVEC output")->required();
    pv_train->callback([&]() {
      if (!pv_hogwild) {
        pv_cfg.workers = 1;
      }
      auto playlists = load_playlists(pv_playlists);
      PlayvecHistory history;
      PlayvecModel model = train_playvec(train_subset(playlists, pv_split), pv_cfg, &history);
      save_playvec(model, pv_out);
      std::cout << "trained " << model.vocab_size() << " track vectors";
      if (!history.epoch_loss.empty()) {
        std::cout << ", final pair loss " << history.epoch_loss.back();
      }
      std::cout << "\n";
    });

    // ---- pairs ----
    auto* pairs_cmd = app.add_subcommand("pairs", "contrastive pair mining");
    pairs_cmd->require_subcommand(1);

    std::string pm_playlists, pm_split, pm_out;
    PairMineConfig pm_cfg;
    auto* pm_mine = pairs_cmd->add_subcommand("mine", "mine positive/negative pairs");
    pm_mine->add_option("--playlists", pm_playlists, "filtered playlists")->required();
    pm_mine->add_option("--split", pm_split, "split JSON (train subset used)");
    pm_mine->add_option("--min-count", pm_cfg.min_count, "minimum playlist count per anchor");
    pm_mine->add_option("--pos-k", pm_cfg.pos_per_anchor, "positives per anchor");
    pm_mine->add_option("--neg-quantile", pm_cfg.neg_quantile, "bottom score quantile");
    pm_mine->add_option("--seed", pm_cfg.seed, "RNG seed");
    pm_mine->add_option("--out", pm_out, "pair set output")->required();
    pm_mine->callback([&]() {
      auto playlists = load_playlists(pm_playlists);
      CoocStats stats = count_cooccurrence(train_subset(playlists, pm_split));
      PairMineInfo info;
      PairSet pairs = mine_pairs(stats, pm_cfg, &info);
      save_pairs(pairs, pm_out);
      std::cout << "mined " << pairs.positives() << " positive and " << pairs.negatives()
                << " negative pairs (" << info.anchors_skipped << " anchors skipped)\n";
    });

    // ---- fusion ----
    auto* fusion_cmd = app.add_subcommand("fusion", "fused embedding training");
    fusion_cmd->require_subcommand(1);

    std::string fu_tracks, fu_playvec, fu_pairs;
    std::string fu_out_model, fu_out_hist, fu_out_emb;
    std::string fu_distance = "dim-normalized", fu_optimizer = "sgd";
    FusionConfig fu_cfg;
    auto* fu_train = fusion_cmd->add_subcommand("train", "train the fusion head");
    fu_train->add_option("--tracks", fu_tracks, "tracks.jsonl")->required();
    fu_train->add_option("--playvec", fu_playvec, "playvec FVEC")->required();
    fu_train->add_option("--pairs", fu_pairs, "mined pair set")->required();
    fu_train->add_option("--hidden", fu_cfg.hidden_dim, "hidden width");
    fu_train->add_option("--n", fu_cfg.n, "sub-embedding count");
    fu_train->add_option("--d", fu_cfg.d, "sub-embedding dimension");
    fu_train->add_option("--alpha", fu_cfg.alpha, "regularization strength");
    fu_train->add_option("--gamma", fu_cfg.gamma, "variance target");
    fu_train->add_option("--eps", fu_cfg.eps, "variance hinge epsilon");
    fu_train->add_option("--batch", fu_cfg.batch_size, "pairs per step");
    fu_train->add_option("--lr", fu_cfg.lr, "learning rate");
    fu_train->add_option("--epochs", fu_cfg.epochs, "training epochs");
    fu_train->add_option("--seed", fu_cfg.seed, "RNG seed");
    fu_train->add_option("--distance", fu_distance, "dim-normalized|plain");
    fu_train->add_option("--optimizer", fu_optimizer, "sgd|adam");
    fu_train->add_option("--out-model", fu_out_model, "FMOD output")->required();
    fu_train->add_option("--out-history", fu_out_hist, "loss history JSON output");
    fu_train->add_option("--out-embeddings", fu_out_emb, "catalog embeddings FVEC output");
    fu_train->callback([&]() {
      fu_cfg.distance = parse_distance_flag(fu_distance);
      fu_cfg.optimizer = parse_optimizer_flag(fu_optimizer);

      TrackTable tracks = load_tracks(fu_tracks);
      PlayvecModel playvec = load_playvec(fu_playvec);
      PairSet pairs = load_pairs(fu_pairs);
      VectorTable features = assemble_features(tracks, playvec);
      fu_cfg.input_dim = features.dim();
      TrainedFusion trained = train_fusion(features, pairs, fu_cfg);
      save_fusion(trained.model, fu_out_model);
      if (!fu_out_hist.empty()) {
        nlohmann::json hist = nlohmann::json::array();
        for (const auto& e : trained.history.epochs) {
          hist.push_back({{"contrastive", e.contrastive},
                          {"covariance", e.covariance},
                          {"variance", e.variance},
                          {"total", e.total(fu_cfg.alpha)}});
        }
        auto os = io::open_output(fu_out_hist, false);
        os << nlohmann::json{{"alpha", fu_cfg.alpha}, {"epochs", hist}}.dump(2) << "\n";
      }
      if (!fu_out_emb.empty()) {
        VectorTable embeddings = embed_catalog(trained.model, features);
        save_vector_table(embeddings, fu_out_emb);
      }
      if (!trained.history.epochs.empty()) {
        const auto& last = trained.history.epochs.back();
        std::cout << "final losses: cont=" << last.contrastive << " cov=" << last.covariance
                  << " var=" << last.variance << "\n";
      }
    });

    // ---- pq ----
    auto* pq_cmd = app.add_subcommand("pq", "product quantization");
    pq_cmd->require_subcommand(1);

    std::string pq_emb, pq_playlists, pq_split, pq_out;
    int pq_n = 5;
    KmeansConfig pq_cfg;
    auto* pq_fit = pq_cmd->add_subcommand("fit", "fit per-position codebooks");
    pq_fit->add_option("--embeddings", pq_emb, "catalog embeddings FVEC")->required();
    pq_fit->add_option("--playlists", pq_playlists, "filtered playlists (training songs)");
    pq_fit->add_option("--split", pq_split, "split JSON");
    pq_fit->add_option("--n", pq_n, "quantizer positions");
    pq_fit->add_option("--k", pq_cfg.k, "codes per position");
    pq_fit->add_option("--max-iters", pq_cfg.max_iters, "Lloyd iteration cap");
    pq_fit->add_option("--tol", pq_cfg.tol, "centroid displacement tolerance");
    pq_fit->add_option("--seed", pq_cfg.seed, "RNG seed");
    pq_fit->add_option("--out", pq_out, "FCBK output")->required();
    pq_fit->callback([&]() {
      VectorTable embeddings = load_vector_table(pq_emb);
      if (embeddings.dim() % pq_n != 0) {
        throw DataError("embedding dim " + std::to_string(embeddings.dim()) +
                        " is not divisible by n=" + std::to_string(pq_n));
      }
      VectorTable train_embeddings = embeddings;
      if (!pq_playlists.empty()) {
        auto playlists = load_playlists(pq_playlists);
        auto train = train_subset(playlists, pq_split);
        std::set<TrackId> wanted;
        for (const auto& pl : train) {
          wanted.insert(pl.tracks.begin(), pl.tracks.end());
        }
        VectorTable subset;
        subset.ids.assign(wanted.begin(), wanted.end());
        subset.rows.resize(static_cast<Eigen::Index>(subset.ids.size()), embeddings.dim());
        for (std::size_t i = 0; i < subset.ids.size(); ++i) {
          subset.rows.row(static_cast<Eigen::Index>(i)) =
              embeddings.rows.row(embeddings.row_of.at(subset.ids[i]));
        }
        subset.rebuild_index();
        train_embeddings = std::move(subset);
      }
      Codebook book =
          fit_codebook(train_embeddings, pq_n, embeddings.dim() / pq_n, pq_cfg);
      save_codebook(book, pq_out);
      std::cout << "fit codebook n=" << book.n << " K=" << book.k << " d=" << book.d << "\n";
    });

    std::string tok_emb, tok_book, tok_out;
    auto* pq_tok = pq_cmd->add_subcommand("tokenize", "assign semantic ids");
    pq_tok->add_option("--embeddings", tok_emb, "catalog embeddings FVEC")->required();
    pq_tok->add_option("--codebook", tok_book, "FCBK codebook")->required();
    pq_tok->add_option("--out", tok_out, "SID output")->required();
    pq_tok->callback([&]() {
      VectorTable embeddings = load_vector_table(tok_emb);
      Codebook book = load_codebook(tok_book);
      SidTable sids = tokenize_catalog(book, embeddings);
      save_sids(sids, tok_out);
      std::cout << "tokenized " << sids.size() << " tracks\n";
    });

    // ---- sidqual ----
    std::string sq_sids, sq_test_ids, sq_out, sq_conflict = "all-members";
    int sq_n = 5, sq_k = 1024;
    auto* sq_cmd = app.add_subcommand("sidqual", "semantic id quality report");
    sq_cmd->add_option("--sids", sq_sids, "tokenized catalog")->required();
    sq_cmd->add_option("--test-ids", sq_test_ids, "test track ids, one per line")->required();
    sq_cmd->add_option("--n", sq_n, "quantizer positions");
    sq_cmd->add_option("--k", sq_k, "codes per position");
    sq_cmd->add_option("--conflict-mode", sq_conflict, "all-members|extras");
    sq_cmd->add_option("--out", sq_out, "report JSON output")->required();
    sq_cmd->callback([&]() {
      SidTable sids = load_sids(sq_sids);
      auto test_ids = read_id_file(sq_test_ids);
      ConflictMode mode = sq_conflict == "extras" ? ConflictMode::extras
                                                  : ConflictMode::all_members;
      if (sq_conflict != "extras" && sq_conflict != "all-members") {
        throw UsageError("--conflict-mode expects all-members or extras");
      }
      SidQualityPair pair = report(sids, test_ids, sq_n, sq_k, mode);
      auto os = io::open_output(sq_out, false);
      os << report_to_json(pair).dump(2) << "\n";
      std::cout << "cur all=" << pair.all.cur_percent << "% test=" << pair.test.cur_percent
                << "%, conflicts all=" << pair.all.conflict_rate_percent << "%\n";
    });

    // ---- genrec ----
    auto* genrec_cmd = app.add_subcommand("genrec", "autoregressive recommender");
    genrec_cmd->require_subcommand(1);

    std::string gr_sids, gr_playlists, gr_split, gr_out;
    int gr_k = 1024;
    RecConfig gr_cfg;
    std::string gr_optimizer = "adam";
    auto* gr_train = genrec_cmd->add_subcommand("train", "train the decoder");
    gr_train->add_option("--sids", gr_sids, "tokenized catalog")->required();
    gr_train->add_option("--playlists", gr_playlists, "filtered playlists")->required();
    gr_train->add_option("--split", gr_split, "split JSON (train subset used)");
    gr_train->add_option("--k", gr_k, "codes per position")->required();
    gr_train->add_option("--layers", gr_cfg.layers, "decoder blocks");
    gr_train->add_option("--heads", gr_cfg.heads, "attention heads");
    gr_train->add_option("--dim", gr_cfg.d_model, "model width");
    gr_train->add_option("--ff", gr_cfg.d_ff, "feed-forward width (0: 4x dim)");
    gr_train->add_option("--max-len", gr_cfg.max_len, "maximum sequence length");
    gr_train->add_option("--lr", gr_cfg.lr, "learning rate");
    gr_train->add_option("--batch", gr_cfg.batch_size, "sequences per step");
    gr_train->add_option("--epochs", gr_cfg.epochs, "training epochs");
    gr_train->add_option("--seed", gr_cfg.seed, "RNG seed");
    gr_train->add_option("--optimizer", gr_optimizer, "sgd|adam");
    gr_train->add_option("--out", gr_out, "FREC output")->required();
    gr_train->callback([&]() {
      gr_cfg.optimizer = parse_optimizer_flag(gr_optimizer);
      SidTable sids = load_sids(gr_sids);
      if (sids.size() == 0) {
        throw DataError("empty SID table");
      }
      auto playlists = load_playlists(gr_playlists);
      TokenVocab vocab{static_cast<int>(sids.sids.front().codes.size()), gr_k};
      TrainedRec trained =
          train_recmodel(train_subset(playlists, gr_split), sids, vocab, gr_cfg);
      save_recmodel(trained.model, gr_out);
      std::cout << "trained recommender; final loss "
                << (trained.epoch_loss.empty() ? 0.0 : trained.epoch_loss.back()) << "\n";
    });

    std::string ge_model, ge_sids, ge_playlists, ge_split, ge_ks = "1,5,10,20", ge_out;
    int ge_threads = 0;
    auto* gr_eval = genrec_cmd->add_subcommand("eval", "playlist continuation metrics");
    gr_eval->add_option("--model", ge_model, "FREC model")->required();
    gr_eval->add_option("--sids", ge_sids, "tokenized catalog")->required();
    gr_eval->add_option("--playlists", ge_playlists, "filtered playlists")->required();
    gr_eval->add_option("--split", ge_split, "split JSON (test subset used)")->required();
    gr_eval->add_option("--ks", ge_ks, "recall cutoffs");
    gr_eval->add_option("--threads", ge_threads, "evaluation threads (0: hardware)");
    gr_eval->add_option("--out", ge_out, "metrics JSON output");
    gr_eval->callback([&]() {
      RecModel model = load_recmodel(ge_model);
      SidTable sids = load_sids(ge_sids);
      auto playlists = load_playlists(ge_playlists);
      CorpusSplit split = load_split(ge_split);
      std::unordered_set<PlaylistId> wanted(split.test.begin(), split.test.end());
      std::vector<Playlist> test;
      for (const auto& pl : playlists) {
        if (wanted.count(pl.id)) test.push_back(pl);
      }
      auto instances = make_eval_instances(test);
      RecMetrics metrics = evaluate(model, instances, sids, parse_int_list(ge_ks), ge_threads);
      nlohmann::json j = metrics_to_json(metrics);
      if (!ge_out.empty()) {
        auto os = io::open_output(ge_out, false);
        os << j.dump(2) << "\n";
      }
      std::cout << j.dump(2) << "\n";
    });

    // ---- run / ablate ----
    std::string run_config, run_stages = "all";
    std::vector<std::string> run_sets;
    auto* run_cmd = app.add_subcommand("run", "run pipeline stages from a config");
    run_cmd->add_option("--config", run_config, "pipeline config JSON")->required();
    run_cmd->add_option("--stages", run_stages, "'all' or comma-separated stage names");
    run_cmd->add_option("--set", run_sets, "config overrides key=value");
    run_cmd->callback([&]() {
      PipelineConfig cfg = load_pipeline_config(run_config, run_sets);
      Manifest manifest = run_pipeline(cfg, parse_stages(run_stages));
      std::cout << "completed " << manifest.stages.size() << " stage(s); manifest at "
                << ArtifactPaths{cfg.out_dir}.manifest() << "\n";
    });

    std::string ab_config;
    std::vector<std::string> ab_sets;
    auto* ab_cmd = app.add_subcommand("ablate", "full run vs alpha=0 ablation");
    ab_cmd->add_option("--config", ab_config, "pipeline config JSON")->required();
    ab_cmd->add_option("--set", ab_sets, "config overrides key=value");
    ab_cmd->callback([&]() {
      PipelineConfig cfg = load_pipeline_config(ab_config, ab_sets);
      nlohmann::json report = run_ablation(cfg);
      std::cout << report.dump(2) << "\n";
    });

    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 1;
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return 3;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
