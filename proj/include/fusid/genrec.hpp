#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "fusid/types.hpp"

namespace fusid {

// Token layout: PAD=0, BOS=1, EOS=2, then position-major code tokens.
struct TokenVocab {
  int n = 0;
  int k = 0;

  static constexpr int kPad = 0;
  static constexpr int kBos = 1;
  static constexpr int kEos = 2;

  int size() const { return 3 + n * k; }
  int code_token(int position, int code) const;            // 0-based position
  std::pair<int, int> position_code(int token) const;      // inverse
  bool is_code(int token) const { return token >= 3 && token < size(); }
};

struct RecConfig {
  int layers = 2;
  int heads = 4;
  int d_model = 128;
  int d_ff = 0;  // 0 means 4 * d_model
  int max_len = 256;
  double lr = 1e-3;
  int batch_size = 16;
  int epochs = 3;
  std::uint64_t seed = 0;
  Optimizer optimizer = Optimizer::adam;
  double init_std = 0.02;
  bool tie_output = false;

  int ff_dim() const { return d_ff > 0 ? d_ff : 4 * d_model; }
  void validate() const;
};

struct RecBlock {
  Eigen::VectorXd ln1_scale, ln1_shift;
  Eigen::MatrixXd wq, wk, wv, wo;  // d_model x d_model, applied as x * W^T
  Eigen::VectorXd bq, bk, bv, bo;
  Eigen::VectorXd ln2_scale, ln2_shift;
  Eigen::MatrixXd w_ff1;  // d_ff x d_model
  Eigen::VectorXd b_ff1;
  Eigen::MatrixXd w_ff2;  // d_model x d_ff
  Eigen::VectorXd b_ff2;
};

// Pre-LN GPT-2 style decoder over semantic-id token sequences.
struct RecModel {
  RecConfig cfg;
  TokenVocab vocab;
  Eigen::MatrixXd tok_emb;  // vocab x d_model
  Eigen::MatrixXd pos_emb;  // max_len x d_model
  std::vector<RecBlock> blocks;
  Eigen::VectorXd lnf_scale, lnf_shift;
  Eigen::MatrixXd w_out;  // vocab x d_model; aliases tok_emb when tied
  Eigen::VectorXd b_out;
};

struct RecGradients {
  Eigen::MatrixXd tok_emb, pos_emb;
  std::vector<RecBlock> blocks;
  Eigen::VectorXd lnf_scale, lnf_shift;
  Eigen::MatrixXd w_out;
  Eigen::VectorXd b_out;
};

RecModel init_recmodel(const TokenVocab& vocab, const RecConfig& cfg);

// Zero-filled gradients with shapes matching the model.
RecGradients make_zero_gradients(const RecModel& model);

// Full-sequence forward; returns logits (seq_len x vocab). Used for training
// and as the reference for the incremental scorer.
Eigen::MatrixXd rec_forward_logits(const RecModel& model, const std::vector<int>& tokens);

// Mean next-token cross-entropy over all non-PAD targets of the batch;
// exact analytic gradients when grads is non-null.
double rec_loss_and_grad(const RecModel& model, const std::vector<std::vector<int>>& batch,
                         RecGradients* grads);

// BOS + n tokens per track in playlist order; EOS appended when requested.
std::vector<int> encode_playlist(const std::vector<TrackId>& tracks, const SidTable& sids,
                                 const TokenVocab& vocab, bool append_eos);

// Inverse of encode_playlist for conflict-free catalogs (tests/debugging).
std::vector<TrackId> decode_playlist(
    const std::vector<int>& tokens, const TokenVocab& vocab,
    const std::unordered_map<SemanticId, TrackId, SemanticIdHash>& sid_to_track);

// Track-aligned windows: sequences longer than max_len are split into
// overlapping chunks that never cut through a track's n-token group.
std::vector<std::vector<int>> make_training_windows(const std::vector<Playlist>& playlists,
                                                    const SidTable& sids,
                                                    const TokenVocab& vocab, int max_len);

struct TrainedRec {
  RecModel model;
  std::vector<double> epoch_loss;  // mean cross-entropy per target token
};

TrainedRec train_recmodel(const std::vector<Playlist>& train_playlists, const SidTable& sids,
                          const TokenVocab& vocab, const RecConfig& cfg);

// Incremental decoder with per-layer KV cache. Feeding the same tokens in
// the same order yields bit-identical results regardless of sharing, which
// is what makes trie-based candidate scoring exactly equal to naive
// per-candidate scoring.
class RecScorer {
 public:
  explicit RecScorer(const RecModel& model);

  int length() const { return length_; }
  void reset() { length_ = 0; }
  void truncate(int len);

  // Appends one token and returns log-softmax over the vocabulary.
  Eigen::VectorXd step_logprobs(int token);

 private:
  const RecModel& model_;
  std::vector<Eigen::MatrixXd> k_cache_;  // per layer, max_len x d_model
  std::vector<Eigen::MatrixXd> v_cache_;
  int length_ = 0;
};

// Sum of the model's log-probabilities of each candidate's n tokens appended
// autoregressively to the context; candidates sharing SID prefixes share
// computation through a prefix trie. Scores align with catalog.ids.
std::vector<double> score_candidates_vec(const RecModel& model,
                                         const std::vector<int>& context_tokens,
                                         const SidTable& catalog);
std::unordered_map<TrackId, double> score_candidates(const RecModel& model,
                                                     const std::vector<int>& context_tokens,
                                                     const SidTable& catalog);

struct EvalInstance {
  std::vector<TrackId> context;  // first min(l-1, 30) tracks
  TrackId target = 0;
};

// One instance per playlist: the track right after the truncated context.
std::vector<EvalInstance> make_eval_instances(const std::vector<Playlist>& test_playlists,
                                              int max_context_tracks = 30);

struct RecMetrics {
  double mrr_percent = 0.0;
  std::map<int, double> recall_percent;
  std::size_t n_instances = 0;
};

// rank_fn returns the 1-based full-catalog rank of the instance's target.
RecMetrics evaluate_with_ranks(
    const std::vector<EvalInstance>& instances,
    const std::function<int(std::size_t, const EvalInstance&)>& rank_fn,
    const std::vector<int>& ks);

// Full-catalog exact scoring; ties broken by lower track_id. threads == 0
// uses the hardware count.
RecMetrics evaluate(const RecModel& model, const std::vector<EvalInstance>& instances,
                    const SidTable& catalog, const std::vector<int>& ks, int threads = 0);

// Context-independent ranking by training-playlist frequency, ties by id.
class PopularityRanker {
 public:
  PopularityRanker(const std::vector<Playlist>& train_playlists,
                   const std::vector<TrackId>& catalog_ids);
  int rank_of(TrackId target) const;

 private:
  std::unordered_map<TrackId, int> rank_;
};

// Seeded shuffle of the catalog per instance.
class RandomRanker {
 public:
  RandomRanker(std::vector<TrackId> catalog_ids, std::uint64_t seed);
  int rank_of(std::size_t instance_index, TrackId target) const;

 private:
  std::vector<TrackId> ids_;
  std::uint64_t seed_;
};

nlohmann::json metrics_to_json(const RecMetrics& metrics);

// FREC: binary little-endian model file.
void save_recmodel(const RecModel& model, const std::string& path);
RecModel load_recmodel(const std::string& path);

}  // namespace fusid
