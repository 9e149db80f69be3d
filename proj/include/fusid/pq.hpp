#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <string>
#include <vector>

#include "fusid/types.hpp"

namespace fusid {

struct Codebook {
  int n = 0;
  int k = 0;
  int d = 0;
  std::vector<Eigen::MatrixXd> centroids;  // n matrices, each k x d
};

struct KmeansConfig {
  int k = 1024;
  int max_iters = 100;
  double tol = 1e-6;
  std::uint64_t seed = 0;

  void validate() const;
};

struct KmeansFitInfo {
  // Per position, inertia after each assignment pass (non-increasing).
  std::vector<std::vector<double>> inertia;
};

// Independent per-position k-means over the n sub-embedding subspaces:
// k-means++ init, Lloyd iterations until max centroid displacement < tol,
// empty clusters reseeded with the point farthest from its centroid.
Codebook fit_codebook(const VectorTable& train_embeddings, int n, int d,
                      const KmeansConfig& cfg, KmeansFitInfo* info = nullptr);

// Nearest centroid per position by squared distance, ties to the lower code.
SemanticId assign(const Codebook& codebook, const Eigen::VectorXd& flat_embedding);

SidTable tokenize_catalog(const Codebook& codebook, const VectorTable& embeddings);

// FCBK: header {magic "FCBK", version, n, K, d}, centroids position-major f32.
void save_codebook(const Codebook& codebook, const std::string& path);
Codebook load_codebook(const std::string& path);

void save_sids(const SidTable& sids, const std::string& path);
SidTable load_sids(const std::string& path);

}  // namespace fusid
