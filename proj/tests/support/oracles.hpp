#pragma once

// Test-only oracles, independent of the implementation paths they check:
// central finite differences for gradients and brute-force counting for the
// quality and ranking metrics.

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <vector>

#include "fusid/types.hpp"

namespace fusid::testing {

// Central finite difference d(loss)/d(param[i]) for every entry of `param`,
// where `loss` re-evaluates the full objective after each perturbation.
inline Eigen::MatrixXd finite_difference(Eigen::MatrixXd& param,
                                         const std::function<double()>& loss,
                                         double h = 1e-5) {
  Eigen::MatrixXd grad(param.rows(), param.cols());
  for (Eigen::Index r = 0; r < param.rows(); ++r) {
    for (Eigen::Index c = 0; c < param.cols(); ++c) {
      const double saved = param(r, c);
      param(r, c) = saved + h;
      double up = loss();
      param(r, c) = saved - h;
      double down = loss();
      param(r, c) = saved;
      grad(r, c) = (up - down) / (2.0 * h);
    }
  }
  return grad;
}

inline Eigen::VectorXd finite_difference_vec(Eigen::VectorXd& param,
                                             const std::function<double()>& loss,
                                             double h = 1e-5) {
  Eigen::VectorXd grad(param.size());
  for (Eigen::Index i = 0; i < param.size(); ++i) {
    const double saved = param[i];
    param[i] = saved + h;
    double up = loss();
    param[i] = saved - h;
    double down = loss();
    param[i] = saved;
    grad[i] = (up - down) / (2.0 * h);
  }
  return grad;
}

// Largest relative error between an analytic gradient and its
// finite-difference estimate, with an absolute floor for near-zero entries.
inline double max_relative_error(const Eigen::MatrixXd& analytic,
                                 const Eigen::MatrixXd& numeric, double floor = 1e-6) {
  double worst = 0.0;
  for (Eigen::Index r = 0; r < analytic.rows(); ++r) {
    for (Eigen::Index c = 0; c < analytic.cols(); ++c) {
      double denom = std::max({std::abs(analytic(r, c)), std::abs(numeric(r, c)), floor});
      worst = std::max(worst, std::abs(analytic(r, c) - numeric(r, c)) / denom);
    }
  }
  return worst;
}

// ---- brute-force semantic-id metrics (sorting + counting) ----

inline double brute_cur(const std::vector<SemanticId>& sids, int n, int k) {
  std::int64_t unused = 0;
  for (int pos = 0; pos < n; ++pos) {
    for (int code = 0; code < k; ++code) {
      bool seen = false;
      for (const auto& sid : sids) {
        if (sid.codes[static_cast<std::size_t>(pos)] == code) {
          seen = true;
          break;
        }
      }
      unused += !seen;
    }
  }
  return 100.0 * static_cast<double>(unused) / static_cast<double>(std::int64_t(n) * k);
}

inline std::int64_t brute_cardinality(const std::vector<SemanticId>& sids) {
  std::vector<std::vector<std::int32_t>> sorted;
  sorted.reserve(sids.size());
  for (const auto& sid : sids) {
    sorted.push_back(sid.codes);
  }
  std::sort(sorted.begin(), sorted.end());
  sorted.erase(std::unique(sorted.begin(), sorted.end()), sorted.end());
  return static_cast<std::int64_t>(sorted.size());
}

inline double brute_conflict_rate(const std::vector<SemanticId>& sids) {
  std::int64_t conflicted = 0;
  for (std::size_t i = 0; i < sids.size(); ++i) {
    for (std::size_t j = 0; j < sids.size(); ++j) {
      if (i != j && sids[i] == sids[j]) {
        ++conflicted;
        break;
      }
    }
  }
  return 100.0 * static_cast<double>(conflicted) / static_cast<double>(sids.size());
}

// ---- brute-force ranking metrics ----

inline double brute_mrr_percent(const std::vector<int>& ranks) {
  double sum = 0.0;
  for (int r : ranks) {
    sum += 1.0 / static_cast<double>(r);
  }
  return 100.0 * sum / static_cast<double>(ranks.size());
}

inline double brute_recall_percent(const std::vector<int>& ranks, int k) {
  std::size_t hits = 0;
  for (int r : ranks) {
    hits += r <= k;
  }
  return 100.0 * static_cast<double>(hits) / static_cast<double>(ranks.size());
}

// Expected MRR of a uniformly random ranking over a catalog of size c:
// (1/c) * sum_{r=1..c} 1/r.
inline double random_mrr_expectation(std::size_t c) {
  double h = 0.0;
  for (std::size_t r = 1; r <= c; ++r) {
    h += 1.0 / static_cast<double>(r);
  }
  return h / static_cast<double>(c);
}

}  // namespace fusid::testing
