#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <random>
#include <unistd.h>

#include "fusid/genrec.hpp"
#include "support/oracles.hpp"

using namespace fusid;

namespace {

Playlist make_playlist(PlaylistId id, std::vector<TrackId> tracks) {
  Playlist pl;
  pl.id = id;
  pl.tracks = std::move(tracks);
  return pl;
}

// Catalog of `count` tracks with structured SIDs over (n, k).
SidTable structured_catalog(int count, int n, int k) {
  SidTable t;
  for (int i = 0; i < count; ++i) {
    t.ids.push_back(static_cast<TrackId>(i));
    SemanticId sid;
    int value = i;
    for (int pos = 0; pos < n; ++pos) {
      sid.codes.push_back(value % k);
      value /= k;
    }
    t.sids.push_back(std::move(sid));
  }
  t.rebuild_index();
  return t;
}

RecConfig mini_config() {
  RecConfig cfg;
  cfg.layers = 2;
  cfg.heads = 2;
  cfg.d_model = 8;
  cfg.d_ff = 16;
  cfg.max_len = 16;
  cfg.seed = 5;
  return cfg;
}

std::vector<Playlist> clique_playlists(int n_playlists, int catalog, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<Playlist> out;
  int half = catalog / 2;
  for (int p = 0; p < n_playlists; ++p) {
    int base = (p % 2) * half;
    std::vector<TrackId> tracks;
    for (int s = 0; s < 5; ++s) {
      tracks.push_back(static_cast<TrackId>(base + static_cast<int>(rng() % half)));
    }
    out.push_back(make_playlist(static_cast<PlaylistId>(p), std::move(tracks)));
  }
  return out;
}

template <class Fn>
void visit_rec_params(RecModel& m, RecGradients& g, Fn&& fn) {
  fn("tok_emb", m.tok_emb, g.tok_emb);
  fn("pos_emb", m.pos_emb, g.pos_emb);
  for (std::size_t l = 0; l < m.blocks.size(); ++l) {
    auto& mb = m.blocks[l];
    auto& gb = g.blocks[l];
    std::string p = "block" + std::to_string(l) + ".";
    fn(p + "wq", mb.wq, gb.wq);
    fn(p + "wk", mb.wk, gb.wk);
    fn(p + "wv", mb.wv, gb.wv);
    fn(p + "wo", mb.wo, gb.wo);
    fn(p + "w_ff1", mb.w_ff1, gb.w_ff1);
    fn(p + "w_ff2", mb.w_ff2, gb.w_ff2);
  }
  fn("w_out", m.w_out, g.w_out);
}

template <class Fn>
void visit_rec_vectors(RecModel& m, RecGradients& g, Fn&& fn) {
  for (std::size_t l = 0; l < m.blocks.size(); ++l) {
    auto& mb = m.blocks[l];
    auto& gb = g.blocks[l];
    std::string p = "block" + std::to_string(l) + ".";
    fn(p + "ln1_scale", mb.ln1_scale, gb.ln1_scale);
    fn(p + "ln1_shift", mb.ln1_shift, gb.ln1_shift);
    fn(p + "bq", mb.bq, gb.bq);
    fn(p + "bk", mb.bk, gb.bk);
    fn(p + "bv", mb.bv, gb.bv);
    fn(p + "bo", mb.bo, gb.bo);
    fn(p + "ln2_scale", mb.ln2_scale, gb.ln2_scale);
    fn(p + "ln2_shift", mb.ln2_shift, gb.ln2_shift);
    fn(p + "b_ff1", mb.b_ff1, gb.b_ff1);
    fn(p + "b_ff2", mb.b_ff2, gb.b_ff2);
  }
  fn("lnf_scale", m.lnf_scale, g.lnf_scale);
  fn("lnf_shift", m.lnf_shift, g.lnf_shift);
  fn("b_out", m.b_out, g.b_out);
}

}  // namespace

TEST_CASE("token vocabulary is a bijection with the documented layout") {
  TokenVocab vocab{5, 1024};
  CHECK(vocab.size() == 3 + 5 * 1024);

  // SID (0,0,0,0,0) maps to tokens (3, 1027, 2051, 3075, 4099).
  std::vector<int> expected = {3, 1027, 2051, 3075, 4099};
  for (int pos = 0; pos < 5; ++pos) {
    CHECK(vocab.code_token(pos, 0) == expected[static_cast<std::size_t>(pos)]);
  }

  for (int pos = 0; pos < 5; ++pos) {
    for (int code : {0, 1, 511, 1023}) {
      auto [p, c] = vocab.position_code(vocab.code_token(pos, code));
      CHECK(p == pos);
      CHECK(c == code);
    }
  }
  CHECK_THROWS_AS(vocab.code_token(5, 0), DataError);
  CHECK_THROWS_AS(vocab.code_token(0, 1024), DataError);
  CHECK_THROWS_AS(vocab.position_code(TokenVocab::kBos), DataError);
}

TEST_CASE("encode_playlist layout and decode round trip") {
  TokenVocab vocab{5, 8};
  SidTable catalog = structured_catalog(40, 5, 8);

  std::vector<TrackId> tracks = {4, 17};
  auto tokens = encode_playlist(tracks, catalog, vocab, /*append_eos=*/true);
  CHECK(tokens.size() == 1 + 2 * 5 + 1);  // BOS + two 5-token groups + EOS
  CHECK(tokens.front() == TokenVocab::kBos);
  CHECK(tokens.back() == TokenVocab::kEos);

  std::unordered_map<SemanticId, TrackId, SemanticIdHash> reverse;
  for (std::size_t i = 0; i < catalog.size(); ++i) {
    reverse.emplace(catalog.sids[i], catalog.ids[i]);
  }
  CHECK(decode_playlist(tokens, vocab, reverse) == tracks);

  auto no_eos = encode_playlist(tracks, catalog, vocab, /*append_eos=*/false);
  CHECK(no_eos.size() == 11);
  CHECK(decode_playlist(no_eos, vocab, reverse) == tracks);

  SidTable missing = structured_catalog(3, 5, 8);
  CHECK_THROWS_AS(encode_playlist({99}, missing, vocab, true), DataError);
}

TEST_CASE("training windows are track-aligned and overlap") {
  TokenVocab vocab{3, 4};
  SidTable catalog = structured_catalog(60, 3, 4);
  // max_len 14 -> (14-2)/3 = 4 tracks per window, stride 2.
  std::vector<Playlist> playlists = {make_playlist(0, {0, 1, 2, 3, 4, 5, 6})};
  auto windows = make_training_windows(playlists, catalog, vocab, 14);

  REQUIRE(windows.size() == 3);  // tracks [0,4), [2,6), [4,7)
  for (const auto& w : windows) {
    CHECK(w.front() == TokenVocab::kBos);
    CHECK((w.size() - 1) % 3 <= 1);  // only a trailing EOS may break the stride
    CHECK(static_cast<int>(w.size()) <= 14);
  }
  CHECK(windows.back().back() == TokenVocab::kEos);
  CHECK(windows.front().back() != TokenVocab::kEos);

  // Short playlists stay whole.
  auto single = make_training_windows({make_playlist(1, {7, 8})}, catalog, vocab, 14);
  REQUIRE(single.size() == 1);
  CHECK(single[0].size() == 1 + 6 + 1);
}

TEST_CASE("an untrained model predicts near-uniformly") {
  TokenVocab vocab{2, 5};  // vocab size 13
  RecConfig cfg = mini_config();
  RecModel model = init_recmodel(vocab, cfg);

  SidTable catalog = structured_catalog(20, 2, 5);
  std::vector<std::vector<int>> batch = {
      encode_playlist({0, 5, 7}, catalog, vocab, true),
      encode_playlist({3, 2}, catalog, vocab, true),
  };
  double loss = rec_loss_and_grad(model, batch, nullptr);
  CHECK(std::abs(loss - std::log(vocab.size())) < 0.1);
}

TEST_CASE("softmax rows sum to one") {
  TokenVocab vocab{2, 5};
  RecModel model = init_recmodel(vocab, mini_config());
  SidTable catalog = structured_catalog(20, 2, 5);
  auto tokens = encode_playlist({1, 2, 3}, catalog, vocab, true);

  Eigen::MatrixXd logits = rec_forward_logits(model, tokens);
  for (Eigen::Index t = 0; t < logits.rows(); ++t) {
    double max = logits.row(t).maxCoeff();
    double sum = (logits.row(t).array() - max).exp().sum();
    double total = sum * std::exp(max - (max + std::log(sum)));  // softmax mass
    CHECK(total == doctest::Approx(1.0).epsilon(1e-6));
  }
}

TEST_CASE("causal mask: future tokens do not change earlier logits") {
  TokenVocab vocab{2, 5};
  RecModel model = init_recmodel(vocab, mini_config());
  SidTable catalog = structured_catalog(20, 2, 5);

  auto tokens = encode_playlist({0, 5, 7, 11}, catalog, vocab, false);
  auto perturbed = tokens;
  perturbed.back() = vocab.code_token(1, 3);  // change the final token
  REQUIRE(perturbed != tokens);

  Eigen::MatrixXd a = rec_forward_logits(model, tokens);
  Eigen::MatrixXd b = rec_forward_logits(model, perturbed);
  CHECK(a.topRows(a.rows() - 1) == b.topRows(b.rows() - 1));
  CHECK(a.bottomRows(1) != b.bottomRows(1));
}

TEST_CASE("transformer gradients match finite differences on a miniature model") {
  TokenVocab vocab{2, 3};  // vocab size 9
  RecConfig cfg = mini_config();
  cfg.max_len = 12;
  RecModel model = init_recmodel(vocab, cfg);

  SidTable catalog = structured_catalog(9, 2, 3);
  std::vector<std::vector<int>> batch = {
      encode_playlist({0, 4, 7}, catalog, vocab, true),
      encode_playlist({2, 8}, catalog, vocab, true),
  };

  RecGradients grads = make_zero_gradients(model);
  rec_loss_and_grad(model, batch, &grads);
  auto loss_fn = [&]() { return rec_loss_and_grad(model, batch, nullptr); };

  visit_rec_params(model, grads, [&](const std::string& name, Eigen::MatrixXd& param,
                                     const Eigen::MatrixXd& grad) {
    INFO("parameter ", name);
    Eigen::MatrixXd fd = testing::finite_difference(param, loss_fn);
    CHECK(testing::max_relative_error(grad, fd, 1e-5) < 1e-3);
  });
  visit_rec_vectors(model, grads, [&](const std::string& name, Eigen::VectorXd& param,
                                      const Eigen::VectorXd& grad) {
    INFO("parameter ", name);
    Eigen::VectorXd fd = testing::finite_difference_vec(param, loss_fn);
    CHECK(testing::max_relative_error(grad, fd, 1e-5) < 1e-3);
  });
}

TEST_CASE("training reduces loss deterministically") {
  TokenVocab vocab{2, 5};
  SidTable catalog = structured_catalog(20, 2, 5);
  auto playlists = clique_playlists(60, 20, 8);

  RecConfig cfg = mini_config();
  cfg.d_model = 16;
  cfg.d_ff = 32;
  cfg.max_len = 32;
  cfg.epochs = 4;
  cfg.batch_size = 8;
  cfg.lr = 3e-3;
  cfg.seed = 21;

  TrainedRec a = train_recmodel(playlists, catalog, vocab, cfg);
  REQUIRE(a.epoch_loss.size() == 4);
  CHECK(a.epoch_loss.back() < a.epoch_loss.front());

  TrainedRec b = train_recmodel(playlists, catalog, vocab, cfg);
  CHECK(a.epoch_loss == b.epoch_loss);
  CHECK(a.model.tok_emb == b.model.tok_emb);
  CHECK(a.model.blocks[0].wq == b.model.blocks[0].wq);
}

TEST_CASE("trie-accelerated scoring equals naive per-candidate scoring bitwise") {
  TokenVocab vocab{3, 4};
  SidTable catalog = structured_catalog(50, 3, 4);  // shared prefixes by construction
  RecConfig cfg = mini_config();
  cfg.max_len = 32;
  RecModel model = init_recmodel(vocab, cfg);

  auto context = encode_playlist({0, 9, 17}, catalog, vocab, false);
  std::vector<double> trie_scores = score_candidates_vec(model, context, catalog);

  for (std::size_t c = 0; c < catalog.size(); ++c) {
    RecScorer scorer(model);
    Eigen::VectorXd lp;
    for (int tok : context) {
      lp = scorer.step_logprobs(tok);
    }
    double naive = 0.0;
    for (int pos = 0; pos < vocab.n; ++pos) {
      int tok = vocab.code_token(pos, catalog.sids[c].codes[static_cast<std::size_t>(pos)]);
      naive += lp[tok];
      if (pos + 1 < vocab.n) {
        lp = scorer.step_logprobs(tok);
      }
    }
    CHECK(trie_scores[c] == naive);  // bitwise, same arithmetic path
  }
}

TEST_CASE("incremental scorer agrees with the full-sequence forward") {
  TokenVocab vocab{2, 6};
  SidTable catalog = structured_catalog(30, 2, 6);
  RecConfig cfg = mini_config();
  cfg.max_len = 24;
  RecModel model = init_recmodel(vocab, cfg);

  auto tokens = encode_playlist({3, 11, 26, 7}, catalog, vocab, false);
  Eigen::MatrixXd logits = rec_forward_logits(model, tokens);

  RecScorer scorer(model);
  for (std::size_t t = 0; t < tokens.size(); ++t) {
    Eigen::VectorXd lp = scorer.step_logprobs(tokens[t]);
    // Compare log-softmax of the batched row against the incremental one.
    Eigen::VectorXd row = logits.row(static_cast<Eigen::Index>(t)).transpose();
    double m = row.maxCoeff();
    double lse = m + std::log((row.array() - m).exp().sum());
    for (Eigen::Index v = 0; v < lp.size(); ++v) {
      CHECK(lp[v] == doctest::Approx(row[v] - lse).epsilon(1e-9));
    }
  }
}

TEST_CASE("candidate scores are finite log-probabilities") {
  TokenVocab vocab{2, 4};
  SidTable catalog = structured_catalog(16, 2, 4);
  RecModel model = init_recmodel(vocab, mini_config());

  auto context = encode_playlist({1, 2}, catalog, vocab, false);
  auto scores = score_candidates(model, context, catalog);
  REQUIRE(scores.size() == catalog.size());
  for (const auto& [id, s] : scores) {
    CHECK(std::isfinite(s));
    CHECK(s <= 0.0);
  }

  // Tracks sharing an SID get identical scores.
  SidTable with_dup = catalog;
  with_dup.ids.push_back(999);
  with_dup.sids.push_back(catalog.sids[3]);
  with_dup.rebuild_index();
  auto dup_scores = score_candidates(model, context, with_dup);
  CHECK(dup_scores.at(999) == dup_scores.at(catalog.ids[3]));
}

TEST_CASE("evaluation protocol truncates context at 30 tracks") {
  std::vector<Playlist> playlists;
  std::vector<TrackId> base;
  for (TrackId t = 0; t < 100; ++t) base.push_back(t);
  for (std::size_t l : {std::size_t(7), std::size_t(30), std::size_t(31), std::size_t(100)}) {
    playlists.push_back(make_playlist(static_cast<PlaylistId>(l),
                                      std::vector<TrackId>(base.begin(), base.begin() + l)));
  }

  auto instances = make_eval_instances(playlists);
  REQUIRE(instances.size() == 4);
  CHECK(instances[0].context.size() == 6);
  CHECK(instances[1].context.size() == 29);
  CHECK(instances[2].context.size() == 30);
  CHECK(instances[3].context.size() == 30);
  // The target is the track immediately after the context.
  CHECK(instances[0].target == 6);
  CHECK(instances[1].target == 29);
  CHECK(instances[2].target == 30);
  CHECK(instances[3].target == 30);

  CHECK_THROWS_AS(make_eval_instances({make_playlist(0, {1})}), DataError);
}

TEST_CASE("metric aggregation matches hand computations") {
  std::vector<EvalInstance> instances(3);
  for (auto& inst : instances) {
    inst.context = {0};
    inst.target = 1;
  }

  SUBCASE("MRR of ranks [1, 4]") {
    std::vector<EvalInstance> two(instances.begin(), instances.begin() + 2);
    std::vector<int> ranks = {1, 4};
    RecMetrics m = evaluate_with_ranks(
        two, [&](std::size_t i, const EvalInstance&) { return ranks[i]; }, {1, 5});
    CHECK(m.mrr_percent == doctest::Approx(62.5));  // (1 + 0.25)/2
  }

  SUBCASE("Recall@5 of ranks [1, 4, 7]") {
    std::vector<int> ranks = {1, 4, 7};
    RecMetrics m = evaluate_with_ranks(
        instances, [&](std::size_t i, const EvalInstance&) { return ranks[i]; }, {5});
    CHECK(m.recall_percent.at(5) == doctest::Approx(100.0 * 2.0 / 3.0));
  }

  SUBCASE("perfect ranking yields 100 everywhere") {
    RecMetrics m = evaluate_with_ranks(
        instances, [](std::size_t, const EvalInstance&) { return 1; }, {1, 5, 10, 20});
    CHECK(m.mrr_percent == doctest::Approx(100.0));
    for (int k : {1, 5, 10, 20}) {
      CHECK(m.recall_percent.at(k) == doctest::Approx(100.0));
    }
  }

  SUBCASE("fuzz against the brute-force oracle") {
    std::mt19937_64 rng(71);
    for (int trial = 0; trial < 100; ++trial) {
      std::size_t count = 1 + rng() % 10;
      std::vector<EvalInstance> insts(count);
      for (auto& inst : insts) {
        inst.context = {0};
        inst.target = 1;
      }
      std::vector<int> ranks;
      for (std::size_t i = 0; i < count; ++i) {
        ranks.push_back(1 + static_cast<int>(rng() % 50));
      }
      RecMetrics m = evaluate_with_ranks(
          insts, [&](std::size_t i, const EvalInstance&) { return ranks[i]; }, {1, 5, 10, 20});
      CHECK(m.mrr_percent == doctest::Approx(testing::brute_mrr_percent(ranks)).epsilon(1e-12));
      for (int k : {1, 5, 10, 20}) {
        CHECK(m.recall_percent.at(k) ==
              doctest::Approx(testing::brute_recall_percent(ranks, k)).epsilon(1e-12));
      }
    }
  }
}

TEST_CASE("model evaluation is order-invariant and matches direct ranking") {
  TokenVocab vocab{2, 5};
  SidTable catalog = structured_catalog(25, 2, 5);
  auto playlists = clique_playlists(40, 25, 31);

  RecConfig cfg = mini_config();
  cfg.d_model = 16;
  cfg.d_ff = 32;
  cfg.max_len = 32;
  cfg.epochs = 2;
  cfg.batch_size = 8;
  cfg.seed = 2;
  TrainedRec trained = train_recmodel(playlists, catalog, vocab, cfg);

  std::vector<Playlist> test = {make_playlist(100, {1, 2, 3, 4}),
                                make_playlist(101, {20, 21, 22})};
  auto instances = make_eval_instances(test);
  RecMetrics forward = evaluate(trained.model, instances, catalog, {1, 5, 10}, 2);

  std::reverse(instances.begin(), instances.end());
  RecMetrics reversed = evaluate(trained.model, instances, catalog, {1, 5, 10}, 1);
  CHECK(forward.mrr_percent == doctest::Approx(reversed.mrr_percent).epsilon(1e-12));
  for (int k : {1, 5, 10}) {
    CHECK(forward.recall_percent.at(k) ==
          doctest::Approx(reversed.recall_percent.at(k)).epsilon(1e-12));
  }

  // Direct rank of the first instance's target from raw scores.
  const EvalInstance& inst = instances.back();  // originally the first
  auto context = encode_playlist(inst.context, catalog, vocab, false);
  auto scores = score_candidates_vec(trained.model, context, catalog);
  double target_score = scores[static_cast<std::size_t>(catalog.row_of.at(inst.target))];
  int better = 0;
  for (std::size_t c = 0; c < scores.size(); ++c) {
    if (scores[c] > target_score ||
        (scores[c] == target_score && catalog.ids[c] < inst.target)) {
      ++better;
    }
  }
  RecMetrics single = evaluate(trained.model, {inst}, catalog, {1}, 1);
  CHECK(single.mrr_percent == doctest::Approx(100.0 / (better + 1)).epsilon(1e-12));
}

TEST_CASE("popularity baseline ranks by training frequency with id tie-breaks") {
  std::vector<Playlist> train = {
      make_playlist(0, {5, 1}), make_playlist(1, {5, 2}), make_playlist(2, {5, 1}),
      make_playlist(3, {2}),
  };
  std::vector<TrackId> catalog_ids = {1, 2, 5, 9};
  PopularityRanker ranker(train, catalog_ids);
  CHECK(ranker.rank_of(5) == 1);  // 3 playlists
  CHECK(ranker.rank_of(1) == 2);  // 2 playlists, lower id than 2
  CHECK(ranker.rank_of(2) == 3);
  CHECK(ranker.rank_of(9) == 4);  // unseen
}

TEST_CASE("random baseline MRR approaches its closed-form expectation") {
  std::vector<TrackId> catalog_ids;
  for (TrackId t = 0; t < 10; ++t) catalog_ids.push_back(t);
  RandomRanker ranker(catalog_ids, 7);

  std::vector<EvalInstance> instances(2000);
  std::mt19937_64 rng(3);
  for (auto& inst : instances) {
    inst.context = {0};
    inst.target = rng() % 10;
  }
  RecMetrics m = evaluate_with_ranks(
      instances,
      [&](std::size_t i, const EvalInstance& inst) { return ranker.rank_of(i, inst.target); },
      {1});
  double expectation = 100.0 * testing::random_mrr_expectation(catalog_ids.size());
  CHECK(m.mrr_percent > expectation / 1.5);
  CHECK(m.mrr_percent < expectation * 1.5);

  // Per-instance determinism.
  CHECK(ranker.rank_of(3, 5) == ranker.rank_of(3, 5));
}

TEST_CASE("FREC round trip preserves the model bit-for-bit") {
  TokenVocab vocab{2, 5};
  SidTable catalog = structured_catalog(20, 2, 5);
  auto playlists = clique_playlists(20, 20, 77);
  RecConfig cfg = mini_config();
  cfg.max_len = 32;
  cfg.epochs = 1;
  cfg.batch_size = 4;
  TrainedRec trained = train_recmodel(playlists, catalog, vocab, cfg);

  auto path = std::filesystem::temp_directory_path() /
              ("fusid_frec_" + std::to_string(::getpid()) + ".frec");
  save_recmodel(trained.model, path.string());
  RecModel loaded = load_recmodel(path.string());
  std::filesystem::remove(path);

  auto tokens = encode_playlist({0, 7, 13}, catalog, vocab, false);
  CHECK(rec_forward_logits(loaded, tokens) == rec_forward_logits(trained.model, tokens));
}
