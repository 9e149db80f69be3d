#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <string>
#include <vector>

#include "fusid/pairmine.hpp"
#include "fusid/playvec.hpp"
#include "fusid/types.hpp"

namespace fusid {

enum class DistanceMode { plain, dim_normalized };

struct FusionConfig {
  int input_dim = 0;
  int hidden_dim = 2048;
  int n = 5;
  int d = 128;
  double alpha = 0.2;   // regularization strength
  double gamma = 1.0;   // target per-dimension standard deviation
  double eps = 1e-4;    // inside the variance-hinge square root
  int batch_size = 128;  // pairs per step, split evenly between labels
  double lr = 5e-4;
  int epochs = 10;
  std::uint64_t seed = 0;
  DistanceMode distance = DistanceMode::dim_normalized;
  Optimizer optimizer = Optimizer::sgd;
  double bn_momentum = 0.1;
  double bn_eps = 1e-5;
  double ln_eps = 1e-5;

  void validate() const;
};

// Projection head: linear -> batch norm -> ReLU -> linear -> layer norm,
// output interpreted as n sub-embeddings of dimension d.
struct FusionModel {
  Eigen::MatrixXd w1;  // hidden x input
  Eigen::VectorXd b1;
  Eigen::VectorXd bn_scale, bn_shift;
  Eigen::VectorXd bn_running_mean, bn_running_var;
  double bn_momentum = 0.1;
  double bn_eps = 1e-5;
  Eigen::MatrixXd w2;  // (n*d) x hidden
  Eigen::VectorXd b2;
  Eigen::VectorXd ln_scale, ln_shift;  // over the flattened n*d output
  double ln_eps = 1e-5;
  int n = 0;
  int d = 0;

  int input_dim() const { return static_cast<int>(w1.cols()); }
  int hidden_dim() const { return static_cast<int>(w1.rows()); }
  int out_dim() const { return n * d; }
};

struct FusionGradients {
  Eigen::MatrixXd w1;
  Eigen::VectorXd b1;
  Eigen::VectorXd bn_scale, bn_shift;
  Eigen::MatrixXd w2;
  Eigen::VectorXd b2;
  Eigen::VectorXd ln_scale, ln_shift;
};

// Pair of row indices into the embedding batch plus the label.
struct BatchPair {
  int p = 0;
  int q = 0;
  int y = 0;
};

struct LossBreakdown {
  double contrastive = 0.0;
  double covariance = 0.0;
  double variance = 0.0;

  double total(double alpha) const { return contrastive + alpha * (covariance + variance); }
};

struct FusionHistory {
  std::vector<LossBreakdown> epochs;  // mean over steps within each epoch
};

FusionModel init_fusion_model(const FusionConfig& cfg);

// Batched forward; rows of x are items, rows of the result are flattened
// n*d embeddings. Train mode uses batch statistics (batch >= 2) and updates
// running stats only when update_running is set; eval mode uses running
// statistics and is a pure function of (model, input).
Eigen::MatrixXd fusion_forward(FusionModel& model, const Eigen::MatrixXd& x, bool train,
                               bool update_running = true);

// Loss terms on flattened embeddings. These entry points share their
// implementation with the gradient path used in training.
double contrastive_loss(const Eigen::VectorXd& e_i, const Eigen::VectorXd& e_j, int y,
                        DistanceMode mode);
double covariance_loss(const Eigen::MatrixXd& batch_flat, int n, int d);
double variance_loss(const Eigen::MatrixXd& batch_flat, double gamma, double eps);

// Total objective and exact analytic gradients for one pair batch. The
// regularizers see the distinct items of the batch (rows of x).
LossBreakdown fusion_loss_and_grad(FusionModel& model, const Eigen::MatrixXd& x,
                                   const std::vector<BatchPair>& pairs, const FusionConfig& cfg,
                                   FusionGradients* grads, bool update_running);

struct TrainedFusion {
  FusionModel model;
  FusionHistory history;
};

TrainedFusion train_fusion(const VectorTable& features, const PairSet& pair_set,
                           const FusionConfig& cfg);

// Eval-mode embeddings for every track in the feature table (fixed chunking
// so results are bit-stable regardless of catalog size).
VectorTable embed_catalog(FusionModel& model, const VectorTable& features);

// Concatenate corpus modalities with the playlist vector (zero for
// cold-start tracks; *cold_count reports how many).
VectorTable assemble_features(const TrackTable& tracks, const PlayvecModel& playvec,
                              std::size_t* cold_count = nullptr);

// FMOD: header {magic "FMOD", version, input_dim, hidden, n, d}, parameter
// blocks in declared order as f64.
void save_fusion(const FusionModel& model, const std::string& path);
FusionModel load_fusion(const std::string& path);

}  // namespace fusid
