#include "fusid/pq.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <mutex>
#include <random>
#include <thread>

#include <nlohmann/json.hpp>

#include "fusid/io.hpp"

namespace fusid {

namespace {

int nearest_centroid(const Eigen::MatrixXd& centroids, const Eigen::VectorXd& point,
                     double* best_dist = nullptr) {
  int best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (Eigen::Index c = 0; c < centroids.rows(); ++c) {
    double dist = (centroids.row(c).transpose() - point).squaredNorm();
    if (dist < best_d) {
      best_d = dist;
      best = static_cast<int>(c);
    }
  }
  if (best_dist) {
    *best_dist = best_d;
  }
  return best;
}

Eigen::MatrixXd kmeanspp_init(const Eigen::MatrixXd& points, int k, std::mt19937_64& rng) {
  const auto count = points.rows();
  Eigen::MatrixXd centers(k, points.cols());

  std::uniform_int_distribution<Eigen::Index> first(0, count - 1);
  centers.row(0) = points.row(first(rng));

  Eigen::VectorXd dist2(count);
  for (Eigen::Index p = 0; p < count; ++p) {
    dist2[p] = (points.row(p) - centers.row(0)).squaredNorm();
  }

  for (int c = 1; c < k; ++c) {
    double total = dist2.sum();
    Eigen::Index chosen;
    if (total <= 0.0) {
      chosen = std::uniform_int_distribution<Eigen::Index>(0, count - 1)(rng);
    } else {
      double x = std::uniform_real_distribution<double>(0.0, total)(rng);
      double acc = 0.0;
      chosen = count - 1;
      for (Eigen::Index p = 0; p < count; ++p) {
        acc += dist2[p];
        if (x < acc) {
          chosen = p;
          break;
        }
      }
    }
    centers.row(c) = points.row(chosen);
    for (Eigen::Index p = 0; p < count; ++p) {
      dist2[p] = std::min(dist2[p], (points.row(p) - centers.row(c)).squaredNorm());
    }
  }
  return centers;
}

// Lloyd iterations for one subspace. Returns the centroid table.
Eigen::MatrixXd fit_position(const Eigen::MatrixXd& points, const KmeansConfig& cfg,
                             std::uint64_t seed, std::vector<double>* inertia_log) {
  std::mt19937_64 rng(seed);
  Eigen::MatrixXd centers = kmeanspp_init(points, cfg.k, rng);

  const auto count = points.rows();
  std::vector<int> assignment(static_cast<std::size_t>(count), 0);
  std::vector<double> residual(static_cast<std::size_t>(count), 0.0);
  double prev_inertia = std::numeric_limits<double>::infinity();

  for (int iter = 0; iter < cfg.max_iters; ++iter) {
    double inertia = 0.0;
    for (Eigen::Index p = 0; p < count; ++p) {
      double dist;
      assignment[static_cast<std::size_t>(p)] = nearest_centroid(centers, points.row(p).transpose(), &dist);
      residual[static_cast<std::size_t>(p)] = dist;
      inertia += dist;
    }
    if (inertia_log) {
      inertia_log->push_back(inertia);
    }
    if (inertia > prev_inertia + 1e-9 * std::max(1.0, prev_inertia)) {
      throw NumericError("k-means inertia increased (" + std::to_string(prev_inertia) + " -> " +
                         std::to_string(inertia) + ")");
    }
    prev_inertia = inertia;

    Eigen::MatrixXd sums = Eigen::MatrixXd::Zero(cfg.k, points.cols());
    std::vector<Eigen::Index> sizes(static_cast<std::size_t>(cfg.k), 0);
    for (Eigen::Index p = 0; p < count; ++p) {
      sums.row(assignment[static_cast<std::size_t>(p)]) += points.row(p);
      ++sizes[static_cast<std::size_t>(assignment[static_cast<std::size_t>(p)])];
    }

    Eigen::MatrixXd updated(cfg.k, points.cols());
    std::vector<int> empties;
    for (int c = 0; c < cfg.k; ++c) {
      if (sizes[static_cast<std::size_t>(c)] > 0) {
        updated.row(c) = sums.row(c) / static_cast<double>(sizes[static_cast<std::size_t>(c)]);
      } else {
        empties.push_back(c);
      }
    }
    // Reseed empties with the points farthest from their centroids, one
    // distinct point per empty cluster, keeping K intact.
    std::vector<char> taken(static_cast<std::size_t>(count), 0);
    for (int c : empties) {
      Eigen::Index far = -1;
      double far_d = -1.0;
      for (Eigen::Index p = 0; p < count; ++p) {
        if (!taken[static_cast<std::size_t>(p)] && residual[static_cast<std::size_t>(p)] > far_d) {
          far_d = residual[static_cast<std::size_t>(p)];
          far = p;
        }
      }
      taken[static_cast<std::size_t>(far)] = 1;
      updated.row(c) = points.row(far);
    }

    double shift = (updated - centers).rowwise().norm().maxCoeff();
    centers = std::move(updated);
    if (shift < cfg.tol) {
      break;
    }
  }
  return centers;
}

}  // namespace

void KmeansConfig::validate() const {
  if (k < 1) throw DataError("k-means needs k >= 1");
  if (max_iters < 1) throw DataError("k-means needs max_iters >= 1");
  if (tol <= 0) throw DataError("k-means tol must be positive");
}

Codebook fit_codebook(const VectorTable& train_embeddings, int n, int d,
                      const KmeansConfig& cfg, KmeansFitInfo* info) {
  cfg.validate();
  if (train_embeddings.dim() != n * d) {
    throw DataError("embedding dim " + std::to_string(train_embeddings.dim()) +
                    " does not factor as n*d = " + std::to_string(n) + "*" + std::to_string(d));
  }
  const auto count = train_embeddings.rows.rows();
  if (count < cfg.k) {
    throw DataError("k-means needs at least K=" + std::to_string(cfg.k) +
                    " training items per position, got " + std::to_string(count));
  }

  Codebook book;
  book.n = n;
  book.k = cfg.k;
  book.d = d;
  book.centroids.resize(static_cast<std::size_t>(n));
  if (info) {
    info->inertia.assign(static_cast<std::size_t>(n), {});
  }

  // Positions share nothing; fit them on a couple of threads.
  const unsigned workers =
      std::max(1u, std::min<unsigned>(std::thread::hardware_concurrency(),
                                      static_cast<unsigned>(n)));
  std::mutex error_mutex;
  std::exception_ptr first_error = nullptr;
  std::vector<std::thread> threads;
  for (unsigned w = 0; w < workers; ++w) {
    threads.emplace_back([&, w]() {
      try {
        for (int pos = static_cast<int>(w); pos < n; pos += static_cast<int>(workers)) {
          Eigen::MatrixXd points =
              train_embeddings.rows.middleCols(static_cast<Eigen::Index>(pos) * d, d);
          book.centroids[static_cast<std::size_t>(pos)] =
              fit_position(points, cfg, derive_seed(cfg.seed, "pq-pos" + std::to_string(pos)),
                           info ? &info->inertia[static_cast<std::size_t>(pos)] : nullptr);
        }
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (!first_error) {
          first_error = std::current_exception();
        }
      }
    });
  }
  for (auto& t : threads) t.join();
  if (first_error) {
    std::rethrow_exception(first_error);
  }
  return book;
}

SemanticId assign(const Codebook& codebook, const Eigen::VectorXd& flat_embedding) {
  if (flat_embedding.size() != static_cast<Eigen::Index>(codebook.n) * codebook.d) {
    throw DataError("embedding shape does not match codebook (expected " +
                    std::to_string(codebook.n * codebook.d) + ", got " +
                    std::to_string(flat_embedding.size()) + ")");
  }
  SemanticId sid;
  sid.codes.resize(static_cast<std::size_t>(codebook.n));
  for (int pos = 0; pos < codebook.n; ++pos) {
    Eigen::VectorXd sub = flat_embedding.segment(static_cast<Eigen::Index>(pos) * codebook.d,
                                                 codebook.d);
    sid.codes[static_cast<std::size_t>(pos)] =
        nearest_centroid(codebook.centroids[static_cast<std::size_t>(pos)], sub);
  }
  return sid;
}

SidTable tokenize_catalog(const Codebook& codebook, const VectorTable& embeddings) {
  SidTable table;
  table.ids = embeddings.ids;
  table.sids.resize(embeddings.size());
  for (std::size_t i = 0; i < embeddings.size(); ++i) {
    table.sids[i] = assign(codebook, embeddings.rows.row(static_cast<Eigen::Index>(i)).transpose());
  }
  table.rebuild_index();
  return table;
}

void save_codebook(const Codebook& codebook, const std::string& path) {
  auto os = io::open_output(path, true);
  io::write_magic(os, "FCBK");
  io::write_u32(os, 1);
  io::write_u32(os, static_cast<std::uint32_t>(codebook.n));
  io::write_u32(os, static_cast<std::uint32_t>(codebook.k));
  io::write_u32(os, static_cast<std::uint32_t>(codebook.d));
  for (const auto& table : codebook.centroids) {
    for (Eigen::Index r = 0; r < table.rows(); ++r) {
      for (Eigen::Index c = 0; c < table.cols(); ++c) {
        io::write_f32(os, static_cast<float>(table(r, c)));
      }
    }
  }
}

Codebook load_codebook(const std::string& path) {
  auto is = io::open_input(path, true);
  io::expect_magic(is, "FCBK", path);
  std::uint32_t version = io::read_u32(is, path + " version");
  if (version != 1) {
    throw DataError(path + ": unsupported FCBK version " + std::to_string(version));
  }
  Codebook book;
  book.n = static_cast<int>(io::read_u32(is, path + " n"));
  book.k = static_cast<int>(io::read_u32(is, path + " K"));
  book.d = static_cast<int>(io::read_u32(is, path + " d"));
  book.centroids.resize(static_cast<std::size_t>(book.n));
  for (auto& table : book.centroids) {
    table.resize(book.k, book.d);
    for (Eigen::Index r = 0; r < table.rows(); ++r) {
      for (Eigen::Index c = 0; c < table.cols(); ++c) {
        table(r, c) = io::read_f32(is, path + " centroids");
      }
    }
  }
  return book;
}

void save_sids(const SidTable& sids, const std::string& path) {
  auto os = io::open_output(path, false);
  for (std::size_t i = 0; i < sids.size(); ++i) {
    nlohmann::json j;
    j["track_id"] = sids.ids[i];
    j["sid"] = sids.sids[i].codes;
    os << j.dump() << "\n";
  }
}

SidTable load_sids(const std::string& path) {
  SidTable table;
  io::for_each_line(path, [&](std::size_t line_no, const std::string& line) {
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const std::exception& e) {
      throw DataError(path + ":" + std::to_string(line_no) + ": malformed JSON record: " +
                      e.what());
    }
    if (!j.contains("track_id") || !j.contains("sid") || !j["sid"].is_array()) {
      throw DataError(path + ":" + std::to_string(line_no) +
                      ": sid record needs track_id and sid array");
    }
    table.ids.push_back(j["track_id"].get<TrackId>());
    SemanticId sid;
    sid.codes = j["sid"].get<std::vector<std::int32_t>>();
    table.sids.push_back(std::move(sid));
  });
  table.rebuild_index();
  return table;
}

}  // namespace fusid
