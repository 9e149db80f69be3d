#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "fusid/types.hpp"

namespace fusid {

struct PlayvecConfig {
  int dim = 128;
  int window = 5;
  int neg_k = 5;
  int epochs = 5;
  double lr = 0.025;
  std::uint64_t seed = 0;
  // >1 enables unsynchronized parallel updates (hogwild); breaks determinism.
  int workers = 1;

  void validate() const;
};

class PlayvecModel {
 public:
  PlayvecModel() = default;
  PlayvecModel(std::vector<TrackId> vocab, int dim);

  int dim() const { return static_cast<int>(in_vectors_.cols()); }
  std::size_t vocab_size() const { return vocab_.size(); }
  const std::vector<TrackId>& vocab() const { return vocab_; }
  bool contains(TrackId id) const { return index_.count(id) > 0; }
  int index_of(TrackId id) const;

  // The in_vector of the track; throws ColdStartError for unseen tracks.
  Eigen::VectorXd feature(TrackId id) const;
  // Zero-vector fallback for unseen tracks; sets *cold when provided.
  Eigen::VectorXd feature_or_zero(TrackId id, bool* cold = nullptr) const;

  Eigen::MatrixXd& in_vectors() { return in_vectors_; }
  Eigen::MatrixXd& out_vectors() { return out_vectors_; }
  const Eigen::MatrixXd& in_vectors() const { return in_vectors_; }
  const Eigen::MatrixXd& out_vectors() const { return out_vectors_; }

 private:
  std::vector<TrackId> vocab_;  // ascending
  std::unordered_map<TrackId, int> index_;
  Eigen::MatrixXd in_vectors_;   // vocab x dim
  Eigen::MatrixXd out_vectors_;  // vocab x dim
};

struct PlayvecHistory {
  std::vector<double> epoch_loss;  // mean logistic loss per (center, context) pair
};

// Skip-gram pair objective: -y*log(sigmoid(u.v)) - (1-y)*log(1 - sigmoid(u.v)).
double logistic_pair_loss(const Eigen::VectorXd& u, const Eigen::VectorXd& v, int y);
void logistic_pair_grad(const Eigen::VectorXd& u, const Eigen::VectorXd& v, int y,
                        Eigen::VectorXd& du, Eigen::VectorXd& dv);

PlayvecModel train_playvec(const std::vector<Playlist>& train_playlists,
                           const PlayvecConfig& cfg, PlayvecHistory* history = nullptr);

// FVEC: header {magic "FVEC", version u32, count u64, dim u32}, then per
// track {track_id u64, dim x f32}. Stores the in_vector table.
void save_playvec(const PlayvecModel& model, const std::string& path);
PlayvecModel load_playvec(const std::string& path);

}  // namespace fusid
