#include "fusid/playvec.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <set>
#include <thread>

#include "fusid/io.hpp"

namespace fusid {

namespace {

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

struct NegativeSampler {
  // Cumulative unigram^0.75 mass over vocab indices.
  std::vector<double> cumulative;

  explicit NegativeSampler(const std::vector<double>& counts) {
    cumulative.resize(counts.size());
    double acc = 0.0;
    for (std::size_t i = 0; i < counts.size(); ++i) {
      acc += std::pow(counts[i], 0.75);
      cumulative[i] = acc;
    }
  }

  int sample(std::mt19937_64& rng) const {
    std::uniform_real_distribution<double> u(0.0, cumulative.back());
    double x = u(rng);
    auto it = std::upper_bound(cumulative.begin(), cumulative.end(), x);
    if (it == cumulative.end()) {
      --it;
    }
    return static_cast<int>(it - cumulative.begin());
  }
};

struct EpochStats {
  double loss_sum = 0.0;
  std::size_t pairs = 0;
};

// One skip-gram step for (center, context): a positive update plus neg_k
// negative-sample updates, with the classic deferred in-vector write.
void train_pair(PlayvecModel& model, int center, int context, const PlayvecConfig& cfg,
                const NegativeSampler& sampler, std::mt19937_64& rng, EpochStats& stats) {
  auto& in = model.in_vectors();
  auto& out = model.out_vectors();
  Eigen::VectorXd in_grad = Eigen::VectorXd::Zero(model.dim());

  for (int k = 0; k <= cfg.neg_k; ++k) {
    int target;
    double label;
    if (k == 0) {
      target = context;
      label = 1.0;
    } else {
      target = sampler.sample(rng);
      for (int tries = 0; target == context && tries < 100; ++tries) {
        target = sampler.sample(rng);
      }
      if (target == context) {
        continue;  // degenerate vocabulary
      }
      label = 0.0;
    }
    double x = in.row(center).dot(out.row(target));
    double s = sigmoid(x);
    stats.loss_sum += label > 0.5 ? -std::log(std::max(s, 1e-300))
                                  : -std::log(std::max(1.0 - s, 1e-300));
    stats.pairs += 1;
    double g = cfg.lr * (s - label);
    in_grad -= g * out.row(target).transpose();
    out.row(target) -= g * in.row(center);
  }
  in.row(center) += in_grad.transpose();
}

void train_shard(PlayvecModel& model, const std::vector<const Playlist*>& shard,
                 const std::vector<std::vector<int>>& shard_tokens, const PlayvecConfig& cfg,
                 const NegativeSampler& sampler, std::uint64_t seed, EpochStats& stats) {
  std::mt19937_64 rng(seed);
  for (std::size_t p = 0; p < shard.size(); ++p) {
    const auto& tokens = shard_tokens[p];
    const int len = static_cast<int>(tokens.size());
    for (int t = 0; t < len; ++t) {
      int lo = std::max(0, t - cfg.window);
      int hi = std::min(len - 1, t + cfg.window);
      for (int c = lo; c <= hi; ++c) {
        if (c == t) {
          continue;
        }
        train_pair(model, tokens[t], tokens[c], cfg, sampler, rng, stats);
      }
    }
  }
}

}  // namespace

void PlayvecConfig::validate() const {
  if (dim <= 0) throw DataError("playvec dim must be positive");
  if (window < 1) throw DataError("playvec window must be >= 1");
  if (neg_k < 1) throw DataError("playvec neg_k must be >= 1");
  if (epochs < 0) throw DataError("playvec epochs must be >= 0");
  if (lr <= 0) throw DataError("playvec lr must be positive");
  if (workers < 1) throw DataError("playvec workers must be >= 1");
}

PlayvecModel::PlayvecModel(std::vector<TrackId> vocab, int dim) : vocab_(std::move(vocab)) {
  in_vectors_ = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(vocab_.size()), dim);
  out_vectors_ = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(vocab_.size()), dim);
  index_.reserve(vocab_.size());
  for (std::size_t i = 0; i < vocab_.size(); ++i) {
    index_.emplace(vocab_[i], static_cast<int>(i));
  }
}

int PlayvecModel::index_of(TrackId id) const {
  auto it = index_.find(id);
  if (it == index_.end()) {
    throw ColdStartError("track " + std::to_string(id) + " was not seen in training playlists");
  }
  return it->second;
}

Eigen::VectorXd PlayvecModel::feature(TrackId id) const {
  return in_vectors_.row(index_of(id)).transpose();
}

Eigen::VectorXd PlayvecModel::feature_or_zero(TrackId id, bool* cold) const {
  auto it = index_.find(id);
  if (it == index_.end()) {
    if (cold) *cold = true;
    return Eigen::VectorXd::Zero(dim());
  }
  if (cold) *cold = false;
  return in_vectors_.row(it->second).transpose();
}

double logistic_pair_loss(const Eigen::VectorXd& u, const Eigen::VectorXd& v, int y) {
  double s = sigmoid(u.dot(v));
  return y ? -std::log(std::max(s, 1e-300)) : -std::log(std::max(1.0 - s, 1e-300));
}

void logistic_pair_grad(const Eigen::VectorXd& u, const Eigen::VectorXd& v, int y,
                        Eigen::VectorXd& du, Eigen::VectorXd& dv) {
  double g = sigmoid(u.dot(v)) - static_cast<double>(y);
  du = g * v;
  dv = g * u;
}

PlayvecModel train_playvec(const std::vector<Playlist>& train_playlists,
                           const PlayvecConfig& cfg, PlayvecHistory* history) {
  cfg.validate();
  if (train_playlists.empty()) {
    throw DataError("playvec training corpus is empty");
  }

  std::set<TrackId> vocab_set;
  for (const auto& pl : train_playlists) {
    vocab_set.insert(pl.tracks.begin(), pl.tracks.end());
  }
  std::vector<TrackId> vocab(vocab_set.begin(), vocab_set.end());
  PlayvecModel model(std::move(vocab), cfg.dim);

  std::vector<double> counts(model.vocab_size(), 0.0);
  std::vector<std::vector<int>> token_lists;
  token_lists.reserve(train_playlists.size());
  for (const auto& pl : train_playlists) {
    std::vector<int> tokens;
    tokens.reserve(pl.tracks.size());
    for (TrackId t : pl.tracks) {
      int idx = model.index_of(t);
      tokens.push_back(idx);
      counts[static_cast<std::size_t>(idx)] += 1.0;
    }
    token_lists.push_back(std::move(tokens));
  }
  NegativeSampler sampler(counts);

  // word2vec convention: in uniform in [-0.5/dim, 0.5/dim], out zero.
  std::mt19937_64 init_rng(cfg.seed);
  std::uniform_real_distribution<double> init(-0.5 / cfg.dim, 0.5 / cfg.dim);
  auto& in = model.in_vectors();
  for (Eigen::Index r = 0; r < in.rows(); ++r) {
    for (Eigen::Index c = 0; c < in.cols(); ++c) {
      in(r, c) = init(init_rng);
    }
  }

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    EpochStats stats;
    if (cfg.workers <= 1) {
      std::vector<const Playlist*> shard;
      shard.reserve(train_playlists.size());
      for (const auto& pl : train_playlists) shard.push_back(&pl);
      train_shard(model, shard, token_lists, cfg, sampler,
                  derive_seed(cfg.seed, "epoch" + std::to_string(epoch)), stats);
    } else {
      // Hogwild: shards update shared tables without synchronization.
      std::vector<std::thread> threads;
      std::vector<EpochStats> shard_stats(static_cast<std::size_t>(cfg.workers));
      for (int w = 0; w < cfg.workers; ++w) {
        threads.emplace_back([&, w]() {
          std::vector<const Playlist*> shard;
          std::vector<std::vector<int>> shard_tokens;
          for (std::size_t p = static_cast<std::size_t>(w); p < train_playlists.size();
               p += static_cast<std::size_t>(cfg.workers)) {
            shard.push_back(&train_playlists[p]);
            shard_tokens.push_back(token_lists[p]);
          }
          train_shard(model, shard, shard_tokens, cfg, sampler,
                      derive_seed(cfg.seed, "epoch" + std::to_string(epoch) + "-worker" +
                                                std::to_string(w)),
                      shard_stats[static_cast<std::size_t>(w)]);
        });
      }
      for (auto& t : threads) t.join();
      for (const auto& s : shard_stats) {
        stats.loss_sum += s.loss_sum;
        stats.pairs += s.pairs;
      }
    }

    if (!model.in_vectors().allFinite() || !model.out_vectors().allFinite()) {
      throw NumericError("playvec parameters became non-finite in epoch " +
                         std::to_string(epoch));
    }
    if (history) {
      history->epoch_loss.push_back(stats.pairs ? stats.loss_sum / static_cast<double>(stats.pairs)
                                                : 0.0);
    }
  }
  return model;
}

void save_playvec(const PlayvecModel& model, const std::string& path) {
  auto os = io::open_output(path, true);
  io::write_magic(os, "FVEC");
  io::write_u32(os, 1);
  io::write_u64(os, model.vocab_size());
  io::write_u32(os, static_cast<std::uint32_t>(model.dim()));
  for (std::size_t i = 0; i < model.vocab_size(); ++i) {
    io::write_u64(os, model.vocab()[i]);
    for (int c = 0; c < model.dim(); ++c) {
      io::write_f32(os, static_cast<float>(model.in_vectors()(static_cast<Eigen::Index>(i), c)));
    }
  }
}

PlayvecModel load_playvec(const std::string& path) {
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

  std::vector<TrackId> vocab;
  vocab.reserve(rows.size());
  for (const auto& [id, _] : rows) vocab.push_back(id);
  PlayvecModel model(std::move(vocab), static_cast<int>(dim));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::uint32_t c = 0; c < dim; ++c) {
      model.in_vectors()(static_cast<Eigen::Index>(i), c) = rows[i].second[c];
    }
  }
  return model;
}

}  // namespace fusid
