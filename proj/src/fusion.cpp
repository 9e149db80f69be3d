#include "fusid/fusion.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <unordered_map>

#include "fusid/io.hpp"

namespace fusid {

namespace {

struct ForwardCache {
  Eigen::MatrixXd bn_xhat;     // B x hidden
  Eigen::VectorXd bn_inv_std;  // hidden
  Eigen::MatrixXd relu_out;    // B x hidden
  Eigen::MatrixXd ln_xhat;     // B x (n*d)
  Eigen::VectorXd ln_inv_std;  // B
};

Eigen::MatrixXd forward_impl(FusionModel& model, const Eigen::MatrixXd& x, bool train,
                             bool update_running, ForwardCache* cache) {
  if (x.cols() != model.input_dim()) {
    throw DataError("fusion input dim " + std::to_string(x.cols()) + " does not match model (" +
                    std::to_string(model.input_dim()) + ")");
  }
  const auto batch = x.rows();
  if (train && batch < 2) {
    throw DataError("train-mode fusion forward needs a batch of >= 2 items");
  }

  Eigen::MatrixXd h = x * model.w1.transpose();
  h.rowwise() += model.b1.transpose();

  const auto hidden = h.cols();
  Eigen::MatrixXd bn_xhat(batch, hidden);
  Eigen::VectorXd inv_std(hidden);
  if (train) {
    for (Eigen::Index j = 0; j < hidden; ++j) {
      double mu = h.col(j).mean();
      double var = (h.col(j).array() - mu).square().sum() / static_cast<double>(batch);
      inv_std[j] = 1.0 / std::sqrt(var + model.bn_eps);
      bn_xhat.col(j) = ((h.col(j).array() - mu) * inv_std[j]).matrix();
      if (update_running) {
        double unbiased = var * static_cast<double>(batch) / static_cast<double>(batch - 1);
        model.bn_running_mean[j] =
            (1.0 - model.bn_momentum) * model.bn_running_mean[j] + model.bn_momentum * mu;
        model.bn_running_var[j] =
            (1.0 - model.bn_momentum) * model.bn_running_var[j] + model.bn_momentum * unbiased;
      }
    }
  } else {
    for (Eigen::Index j = 0; j < hidden; ++j) {
      double denom = 1.0 / std::sqrt(model.bn_running_var[j] + model.bn_eps);
      bn_xhat.col(j) = ((h.col(j).array() - model.bn_running_mean[j]) * denom).matrix();
    }
  }

  Eigen::MatrixXd activated =
      ((bn_xhat * model.bn_scale.asDiagonal()).rowwise() + model.bn_shift.transpose())
          .cwiseMax(0.0);

  Eigen::MatrixXd z = activated * model.w2.transpose();
  z.rowwise() += model.b2.transpose();

  const auto out_dim = z.cols();
  Eigen::MatrixXd ln_xhat(batch, out_dim);
  Eigen::VectorXd ln_inv(batch);
  for (Eigen::Index i = 0; i < batch; ++i) {
    double mu = z.row(i).mean();
    double var = (z.row(i).array() - mu).square().sum() / static_cast<double>(out_dim);
    ln_inv[i] = 1.0 / std::sqrt(var + model.ln_eps);
    ln_xhat.row(i) = ((z.row(i).array() - mu) * ln_inv[i]).matrix();
  }
  Eigen::MatrixXd y =
      (ln_xhat * model.ln_scale.asDiagonal()).rowwise() + model.ln_shift.transpose();

  if (cache) {
    cache->bn_xhat = std::move(bn_xhat);
    cache->bn_inv_std = std::move(inv_std);
    cache->relu_out = std::move(activated);
    cache->ln_xhat = std::move(ln_xhat);
    cache->ln_inv_std = std::move(ln_inv);
  }
  return y;
}

double distance_scale(DistanceMode mode, Eigen::Index flat_dim) {
  return mode == DistanceMode::dim_normalized ? 1.0 / std::sqrt(static_cast<double>(flat_dim))
                                              : 1.0;
}

// Mean over pairs of ((1-y) - D)^2; gradient scaled by `scale` into dy.
double cont_loss_grad(const Eigen::MatrixXd& y_batch, const std::vector<BatchPair>& pairs,
                      DistanceMode mode, Eigen::MatrixXd* dy, double scale) {
  if (pairs.empty()) {
    return 0.0;
  }
  const double s = distance_scale(mode, y_batch.cols());
  const double inv_p = 1.0 / static_cast<double>(pairs.size());
  double loss = 0.0;
  for (const auto& pr : pairs) {
    Eigen::VectorXd diff = (y_batch.row(pr.p) - y_batch.row(pr.q)).transpose();
    double norm = diff.norm();
    double dist = s * norm;
    double target = 1.0 - static_cast<double>(pr.y);
    loss += (target - dist) * (target - dist) * inv_p;
    if (dy && norm > 0.0) {
      // d/dE_p of (target-D)^2 = 2(D-target) * s * diff / ||diff||
      Eigen::VectorXd g = (scale * inv_p * 2.0 * (dist - target) * s / norm) * diff;
      dy->row(pr.p) += g.transpose();
      dy->row(pr.q) -= g.transpose();
    }
  }
  return loss;
}

// Block-wise cross-covariance penalty over the n sub-embedding positions.
double cov_loss_grad(const Eigen::MatrixXd& y_batch, int n, int d, Eigen::MatrixXd* dy,
                     double scale) {
  const auto batch = y_batch.rows();
  if (batch < 2) {
    throw DataError("covariance loss needs a batch of >= 2 items");
  }
  if (n < 2) {
    return 0.0;  // no position pairs
  }
  Eigen::MatrixXd centered = y_batch.rowwise() - y_batch.colwise().mean();
  const double denom = static_cast<double>(batch - 1);
  const double coeff = 2.0 / (static_cast<double>(n) * (n - 1)) / static_cast<double>(d);

  double loss = 0.0;
  Eigen::MatrixXd d_centered;
  if (dy) {
    d_centered = Eigen::MatrixXd::Zero(batch, y_batch.cols());
  }
  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j < n; ++j) {
      auto ci = centered.middleCols(static_cast<Eigen::Index>(i) * d, d);
      auto cj = centered.middleCols(static_cast<Eigen::Index>(j) * d, d);
      Eigen::MatrixXd cov = (ci.transpose() * cj) / denom;
      loss += coeff * cov.squaredNorm();
      if (dy) {
        d_centered.middleCols(static_cast<Eigen::Index>(i) * d, d) +=
            (scale * coeff * 2.0 / denom) * (cj * cov.transpose());
        d_centered.middleCols(static_cast<Eigen::Index>(j) * d, d) +=
            (scale * coeff * 2.0 / denom) * (ci * cov);
      }
    }
  }
  if (dy) {
    d_centered.rowwise() -= d_centered.colwise().mean().eval();  // centering backward
    *dy += d_centered;
  }
  return loss;
}

// Hinge on per-dimension batch standard deviation (unbiased variance).
double var_loss_grad(const Eigen::MatrixXd& y_batch, double gamma, double eps,
                     Eigen::MatrixXd* dy, double scale) {
  const auto batch = y_batch.rows();
  if (batch < 2) {
    throw DataError("variance loss needs a batch of >= 2 items");
  }
  const auto flat_dim = y_batch.cols();
  const double denom = static_cast<double>(batch - 1);
  const double inv_dim = 1.0 / static_cast<double>(flat_dim);

  double loss = 0.0;
  for (Eigen::Index c = 0; c < flat_dim; ++c) {
    double mu = y_batch.col(c).mean();
    Eigen::VectorXd centered = (y_batch.col(c).array() - mu).matrix();
    double sd = std::sqrt(centered.squaredNorm() / denom + eps);
    if (sd < gamma) {
      loss += (gamma - sd) * inv_dim;
      if (dy) {
        dy->col(c) -= (scale * inv_dim / (denom * sd)) * centered;
      }
    }
  }
  return loss;
}

void backward_impl(const FusionModel& model, const Eigen::MatrixXd& x, const ForwardCache& cache,
                   const Eigen::MatrixXd& dy, FusionGradients& grads) {
  const auto batch = x.rows();
  const auto out_dim = dy.cols();
  const auto hidden = model.hidden_dim();

  grads.ln_scale = (dy.array() * cache.ln_xhat.array()).colwise().sum().matrix().transpose();
  grads.ln_shift = dy.colwise().sum().transpose();

  // Layer-norm backward, per row over the flattened output.
  Eigen::MatrixXd dz(batch, out_dim);
  const double n_out = static_cast<double>(out_dim);
  for (Eigen::Index i = 0; i < batch; ++i) {
    Eigen::ArrayXd dxhat = dy.row(i).transpose().array() * model.ln_scale.array();
    Eigen::ArrayXd xhat = cache.ln_xhat.row(i).transpose().array();
    double sum_dxhat = dxhat.sum();
    double sum_dxhat_xhat = (dxhat * xhat).sum();
    Eigen::ArrayXd row = (cache.ln_inv_std[i] / n_out) *
                         (n_out * dxhat - sum_dxhat - xhat * sum_dxhat_xhat);
    dz.row(i) = row.matrix().transpose();
  }

  grads.w2 = dz.transpose() * cache.relu_out;
  grads.b2 = dz.colwise().sum().transpose();

  Eigen::MatrixXd da = dz * model.w2;
  Eigen::MatrixXd d_bnout =
      ((cache.relu_out.array() > 0.0).cast<double>() * da.array()).matrix();

  grads.bn_scale =
      (d_bnout.array() * cache.bn_xhat.array()).colwise().sum().matrix().transpose();
  grads.bn_shift = d_bnout.colwise().sum().transpose();

  // Batch-norm backward through the train-mode batch statistics.
  Eigen::MatrixXd dh(batch, hidden);
  const double n_b = static_cast<double>(batch);
  for (Eigen::Index j = 0; j < hidden; ++j) {
    Eigen::ArrayXd dxhat = d_bnout.col(j).array() * model.bn_scale[j];
    Eigen::ArrayXd xhat = cache.bn_xhat.col(j).array();
    double sum_dxhat = dxhat.sum();
    double sum_dxhat_xhat = (dxhat * xhat).sum();
    dh.col(j) = ((cache.bn_inv_std[j] / n_b) *
                 (n_b * dxhat - sum_dxhat - xhat * sum_dxhat_xhat))
                    .matrix();
  }

  grads.w1 = dh.transpose() * x;
  grads.b1 = dh.colwise().sum().transpose();
}

template <class Fn>
void for_each_param(FusionModel& m, FusionGradients& g, Fn&& fn) {
  fn(m.w1, g.w1);
  fn(m.b1, g.b1);
  fn(m.bn_scale, g.bn_scale);
  fn(m.bn_shift, g.bn_shift);
  fn(m.w2, g.w2);
  fn(m.b2, g.b2);
  fn(m.ln_scale, g.ln_scale);
  fn(m.ln_shift, g.ln_shift);
}

FusionGradients zero_like(const FusionModel& m) {
  FusionGradients g;
  g.w1 = Eigen::MatrixXd::Zero(m.w1.rows(), m.w1.cols());
  g.b1 = Eigen::VectorXd::Zero(m.b1.size());
  g.bn_scale = Eigen::VectorXd::Zero(m.bn_scale.size());
  g.bn_shift = Eigen::VectorXd::Zero(m.bn_shift.size());
  g.w2 = Eigen::MatrixXd::Zero(m.w2.rows(), m.w2.cols());
  g.b2 = Eigen::VectorXd::Zero(m.b2.size());
  g.ln_scale = Eigen::VectorXd::Zero(m.ln_scale.size());
  g.ln_shift = Eigen::VectorXd::Zero(m.ln_shift.size());
  return g;
}

}  // namespace

void FusionConfig::validate() const {
  if (input_dim <= 0) throw DataError("fusion input_dim must be positive");
  if (hidden_dim <= 0) throw DataError("fusion hidden_dim must be positive");
  if (n <= 0 || d <= 0) throw DataError("fusion n and d must be positive");
  if (alpha < 0) throw DataError("fusion alpha must be >= 0");
  if (gamma <= 0) throw DataError("fusion gamma must be positive");
  if (eps <= 0) throw DataError("fusion eps must be positive");
  if (batch_size < 2) throw DataError("fusion batch_size must be >= 2");
  if (lr <= 0) throw DataError("fusion lr must be positive");
  if (epochs < 0) throw DataError("fusion epochs must be >= 0");
}

FusionModel init_fusion_model(const FusionConfig& cfg) {
  cfg.validate();
  FusionModel m;
  m.n = cfg.n;
  m.d = cfg.d;
  m.bn_momentum = cfg.bn_momentum;
  m.bn_eps = cfg.bn_eps;
  m.ln_eps = cfg.ln_eps;

  std::mt19937_64 rng(cfg.seed);
  auto kaiming_fill = [&rng](Eigen::MatrixXd& w, int fan_in) {
    double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (Eigen::Index r = 0; r < w.rows(); ++r) {
      for (Eigen::Index c = 0; c < w.cols(); ++c) {
        w(r, c) = dist(rng);
      }
    }
  };

  m.w1.resize(cfg.hidden_dim, cfg.input_dim);
  kaiming_fill(m.w1, cfg.input_dim);
  m.b1 = Eigen::VectorXd::Zero(cfg.hidden_dim);
  m.bn_scale = Eigen::VectorXd::Ones(cfg.hidden_dim);
  m.bn_shift = Eigen::VectorXd::Zero(cfg.hidden_dim);
  m.bn_running_mean = Eigen::VectorXd::Zero(cfg.hidden_dim);
  m.bn_running_var = Eigen::VectorXd::Ones(cfg.hidden_dim);
  m.w2.resize(cfg.n * cfg.d, cfg.hidden_dim);
  kaiming_fill(m.w2, cfg.hidden_dim);
  m.b2 = Eigen::VectorXd::Zero(cfg.n * cfg.d);
  m.ln_scale = Eigen::VectorXd::Ones(cfg.n * cfg.d);
  m.ln_shift = Eigen::VectorXd::Zero(cfg.n * cfg.d);
  return m;
}

Eigen::MatrixXd fusion_forward(FusionModel& model, const Eigen::MatrixXd& x, bool train,
                               bool update_running) {
  return forward_impl(model, x, train, train && update_running, nullptr);
}

double contrastive_loss(const Eigen::VectorXd& e_i, const Eigen::VectorXd& e_j, int y,
                        DistanceMode mode) {
  if (e_i.size() != e_j.size()) {
    throw DataError("contrastive loss embeddings have mismatched shapes");
  }
  Eigen::MatrixXd batch(2, e_i.size());
  batch.row(0) = e_i.transpose();
  batch.row(1) = e_j.transpose();
  return cont_loss_grad(batch, {{0, 1, y}}, mode, nullptr, 1.0);
}

double covariance_loss(const Eigen::MatrixXd& batch_flat, int n, int d) {
  if (batch_flat.cols() != static_cast<Eigen::Index>(n) * d) {
    throw DataError("covariance loss batch has wrong flattened dimension");
  }
  return cov_loss_grad(batch_flat, n, d, nullptr, 1.0);
}

double variance_loss(const Eigen::MatrixXd& batch_flat, double gamma, double eps) {
  return var_loss_grad(batch_flat, gamma, eps, nullptr, 1.0);
}

LossBreakdown fusion_loss_and_grad(FusionModel& model, const Eigen::MatrixXd& x,
                                   const std::vector<BatchPair>& pairs, const FusionConfig& cfg,
                                   FusionGradients* grads, bool update_running) {
  ForwardCache cache;
  Eigen::MatrixXd y = forward_impl(model, x, /*train=*/true, update_running, &cache);

  Eigen::MatrixXd dy;
  Eigen::MatrixXd* dy_ptr = nullptr;
  if (grads) {
    dy = Eigen::MatrixXd::Zero(y.rows(), y.cols());
    dy_ptr = &dy;
  }

  LossBreakdown loss;
  loss.contrastive = cont_loss_grad(y, pairs, cfg.distance, dy_ptr, 1.0);
  loss.covariance = cov_loss_grad(y, model.n, model.d, dy_ptr, cfg.alpha);
  loss.variance = var_loss_grad(y, cfg.gamma, cfg.eps, dy_ptr, cfg.alpha);

  if (grads) {
    backward_impl(model, x, cache, dy, *grads);
  }
  return loss;
}

TrainedFusion train_fusion(const VectorTable& features, const PairSet& pair_set,
                           const FusionConfig& cfg) {
  FusionConfig local = cfg;
  if (local.input_dim == 0) {
    local.input_dim = features.dim();
  }
  local.validate();
  if (features.dim() != local.input_dim) {
    throw DataError("feature table dim does not match fusion input_dim");
  }

  std::vector<PairExample> positives, negatives;
  for (const auto& p : pair_set.pairs) {
    if (!features.contains(p.a) || !features.contains(p.b)) {
      throw DataError("pair references track without features: " + std::to_string(p.a) + "/" +
                      std::to_string(p.b));
    }
    (p.y == 1 ? positives : negatives).push_back(p);
  }
  if (positives.empty() || negatives.empty()) {
    throw DataError("fusion training needs at least one positive and one negative pair");
  }

  TrainedFusion result;
  result.model = init_fusion_model(local);
  FusionModel& model = result.model;

  FusionGradients adam_m = zero_like(model);
  FusionGradients adam_v = zero_like(model);
  long adam_t = 0;

  std::mt19937_64 rng(derive_seed(local.seed, "fusion-batches"));
  const std::size_t half = static_cast<std::size_t>(std::max(1, local.batch_size / 2));
  const std::size_t per_epoch = std::min(positives.size(), negatives.size());

  for (int epoch = 0; epoch < local.epochs; ++epoch) {
    std::shuffle(positives.begin(), positives.end(), rng);
    std::shuffle(negatives.begin(), negatives.end(), rng);

    LossBreakdown epoch_sum;
    std::size_t steps = 0;
    for (std::size_t start = 0; start < per_epoch; start += half) {
      std::size_t stop = std::min(start + half, per_epoch);

      // Batch = distinct items of the pair slice, in first-appearance order.
      std::vector<TrackId> item_ids;
      std::unordered_map<TrackId, int> item_index;
      std::vector<BatchPair> batch_pairs;
      auto intern = [&](TrackId id) {
        auto [it, inserted] = item_index.emplace(id, static_cast<int>(item_ids.size()));
        if (inserted) {
          item_ids.push_back(id);
        }
        return it->second;
      };
      for (std::size_t k = start; k < stop; ++k) {
        batch_pairs.push_back({intern(positives[k].a), intern(positives[k].b), 1});
        batch_pairs.push_back({intern(negatives[k].a), intern(negatives[k].b), 0});
      }

      Eigen::MatrixXd x(item_ids.size(), local.input_dim);
      for (std::size_t i = 0; i < item_ids.size(); ++i) {
        x.row(static_cast<Eigen::Index>(i)) =
            features.rows.row(features.row_of.at(item_ids[i]));
      }

      FusionGradients grads = zero_like(model);
      LossBreakdown loss = fusion_loss_and_grad(model, x, batch_pairs, local, &grads, true);
      double total = loss.total(local.alpha);
      if (!std::isfinite(total)) {
        throw NumericError("non-finite fusion loss at epoch " + std::to_string(epoch) +
                           ", step " + std::to_string(steps) + " (cont=" +
                           std::to_string(loss.contrastive) + ", cov=" +
                           std::to_string(loss.covariance) + ", var=" +
                           std::to_string(loss.variance) + ")");
      }

      if (local.optimizer == Optimizer::sgd) {
        for_each_param(model, grads, [&](auto& param, auto& grad) {
          param -= local.lr * grad;
        });
      } else {
        ++adam_t;
        const double beta1 = 0.9, beta2 = 0.999, adam_eps = 1e-8;
        double bias1 = 1.0 - std::pow(beta1, static_cast<double>(adam_t));
        double bias2 = 1.0 - std::pow(beta2, static_cast<double>(adam_t));
        auto step_one = [&](auto& param, auto& grad, auto& m_st, auto& v_st) {
          m_st = beta1 * m_st + (1.0 - beta1) * grad;
          v_st = (beta2 * v_st.array() + (1.0 - beta2) * grad.array().square()).matrix();
          param.array() -= local.lr * (m_st.array() / bias1) /
                           ((v_st.array() / bias2).sqrt() + adam_eps);
        };
        step_one(model.w1, grads.w1, adam_m.w1, adam_v.w1);
        step_one(model.b1, grads.b1, adam_m.b1, adam_v.b1);
        step_one(model.bn_scale, grads.bn_scale, adam_m.bn_scale, adam_v.bn_scale);
        step_one(model.bn_shift, grads.bn_shift, adam_m.bn_shift, adam_v.bn_shift);
        step_one(model.w2, grads.w2, adam_m.w2, adam_v.w2);
        step_one(model.b2, grads.b2, adam_m.b2, adam_v.b2);
        step_one(model.ln_scale, grads.ln_scale, adam_m.ln_scale, adam_v.ln_scale);
        step_one(model.ln_shift, grads.ln_shift, adam_m.ln_shift, adam_v.ln_shift);
      }

      epoch_sum.contrastive += loss.contrastive;
      epoch_sum.covariance += loss.covariance;
      epoch_sum.variance += loss.variance;
      ++steps;
    }

    LossBreakdown mean;
    if (steps > 0) {
      mean.contrastive = epoch_sum.contrastive / static_cast<double>(steps);
      mean.covariance = epoch_sum.covariance / static_cast<double>(steps);
      mean.variance = epoch_sum.variance / static_cast<double>(steps);
    }
    result.history.epochs.push_back(mean);
  }
  return result;
}

VectorTable embed_catalog(FusionModel& model, const VectorTable& features) {
  constexpr Eigen::Index kChunk = 256;  // fixed so results are chunking-independent
  VectorTable out;
  out.ids = features.ids;
  out.rows.resize(features.rows.rows(), model.out_dim());
  for (Eigen::Index start = 0; start < features.rows.rows(); start += kChunk) {
    Eigen::Index count = std::min(kChunk, features.rows.rows() - start);
    out.rows.middleRows(start, count) =
        fusion_forward(model, features.rows.middleRows(start, count), /*train=*/false);
  }
  out.rebuild_index();
  return out;
}

VectorTable assemble_features(const TrackTable& tracks, const PlayvecModel& playvec,
                              std::size_t* cold_count) {
  std::vector<TrackId> ids;
  ids.reserve(tracks.size());
  for (const auto& t : tracks.all()) {
    ids.push_back(t.id);
  }
  std::sort(ids.begin(), ids.end());

  const int corpus_dim = tracks.schema().concat_dim();
  const int total_dim = corpus_dim + playvec.dim();
  VectorTable table;
  table.ids = std::move(ids);
  table.rows.resize(static_cast<Eigen::Index>(table.ids.size()), total_dim);
  std::size_t cold = 0;
  for (std::size_t i = 0; i < table.ids.size(); ++i) {
    bool is_cold = false;
    table.rows.row(static_cast<Eigen::Index>(i)).head(corpus_dim) =
        tracks.concat_features(table.ids[i]).transpose();
    table.rows.row(static_cast<Eigen::Index>(i)).tail(playvec.dim()) =
        playvec.feature_or_zero(table.ids[i], &is_cold).transpose();
    cold += is_cold;
  }
  if (cold_count) {
    *cold_count = cold;
  }
  table.rebuild_index();
  return table;
}

void save_fusion(const FusionModel& model, const std::string& path) {
  auto os = io::open_output(path, true);
  io::write_magic(os, "FMOD");
  io::write_u32(os, 1);
  io::write_u32(os, static_cast<std::uint32_t>(model.input_dim()));
  io::write_u32(os, static_cast<std::uint32_t>(model.hidden_dim()));
  io::write_u32(os, static_cast<std::uint32_t>(model.n));
  io::write_u32(os, static_cast<std::uint32_t>(model.d));

  auto write_matrix = [&os](const Eigen::MatrixXd& m) {
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
      for (Eigen::Index c = 0; c < m.cols(); ++c) {
        io::write_f64(os, m(r, c));
      }
    }
  };
  auto write_vector = [&os](const Eigen::VectorXd& v) {
    for (Eigen::Index i = 0; i < v.size(); ++i) {
      io::write_f64(os, v[i]);
    }
  };

  write_matrix(model.w1);
  write_vector(model.b1);
  write_vector(model.bn_scale);
  write_vector(model.bn_shift);
  write_vector(model.bn_running_mean);
  write_vector(model.bn_running_var);
  io::write_f64(os, model.bn_momentum);
  io::write_f64(os, model.bn_eps);
  write_matrix(model.w2);
  write_vector(model.b2);
  write_vector(model.ln_scale);
  write_vector(model.ln_shift);
  io::write_f64(os, model.ln_eps);
}

FusionModel load_fusion(const std::string& path) {
  auto is = io::open_input(path, true);
  io::expect_magic(is, "FMOD", path);
  std::uint32_t version = io::read_u32(is, path + " version");
  if (version != 1) {
    throw DataError(path + ": unsupported FMOD version " + std::to_string(version));
  }
  std::uint32_t input_dim = io::read_u32(is, path + " input_dim");
  std::uint32_t hidden = io::read_u32(is, path + " hidden");
  std::uint32_t n = io::read_u32(is, path + " n");
  std::uint32_t d = io::read_u32(is, path + " d");

  FusionModel m;
  m.n = static_cast<int>(n);
  m.d = static_cast<int>(d);

  auto read_matrix = [&is, &path](Eigen::Index rows, Eigen::Index cols) {
    Eigen::MatrixXd out(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r) {
      for (Eigen::Index c = 0; c < cols; ++c) {
        out(r, c) = io::read_f64(is, path + " parameters");
      }
    }
    return out;
  };
  auto read_vector = [&is, &path](Eigen::Index size) {
    Eigen::VectorXd out(size);
    for (Eigen::Index i = 0; i < size; ++i) {
      out[i] = io::read_f64(is, path + " parameters");
    }
    return out;
  };

  m.w1 = read_matrix(hidden, input_dim);
  m.b1 = read_vector(hidden);
  m.bn_scale = read_vector(hidden);
  m.bn_shift = read_vector(hidden);
  m.bn_running_mean = read_vector(hidden);
  m.bn_running_var = read_vector(hidden);
  m.bn_momentum = io::read_f64(is, path + " bn_momentum");
  m.bn_eps = io::read_f64(is, path + " bn_eps");
  m.w2 = read_matrix(static_cast<Eigen::Index>(n) * d, hidden);
  m.b2 = read_vector(static_cast<Eigen::Index>(n) * d);
  m.ln_scale = read_vector(static_cast<Eigen::Index>(n) * d);
  m.ln_shift = read_vector(static_cast<Eigen::Index>(n) * d);
  m.ln_eps = io::read_f64(is, path + " ln_eps");
  return m;
}

}  // namespace fusid
