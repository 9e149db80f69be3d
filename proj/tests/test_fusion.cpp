#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numeric>
#include <random>
#include <unistd.h>

#include "fusid/corpus.hpp"
#include "fusid/fusion.hpp"
#include "support/oracles.hpp"

using namespace fusid;

namespace {

FusionConfig tiny_config() {
  FusionConfig cfg;
  cfg.input_dim = 12;
  cfg.hidden_dim = 8;
  cfg.n = 2;
  cfg.d = 3;
  cfg.alpha = 0.2;
  cfg.batch_size = 6;
  cfg.seed = 17;
  return cfg;
}

Eigen::MatrixXd random_batch(int rows, int cols, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  Eigen::MatrixXd x(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    for (Eigen::Index c = 0; c < cols; ++c) {
      x(r, c) = gauss(rng);
    }
  }
  return x;
}

// Synthetic features + mined pairs for training-dynamics checks.
struct TrainFixture {
  VectorTable features;
  PairSet pairs;
};

TrainFixture make_train_fixture(int n_tracks, std::uint64_t seed) {
  SynthConfig synth;
  synth.n_tracks = n_tracks;
  synth.n_playlists = 300;
  synth.n_genres = 8;
  synth.modalities = {{"tag", 12}, {"audio", 6}};
  synth.playlist_len_min = 4;
  synth.playlist_len_max = 10;
  synth.p_coherence = 0.9;
  synth.noise_sigma = 0.2;
  SynthResult r = generate_synthetic_corpus(synth, seed);

  TrainFixture fx;
  fx.features.ids.reserve(r.corpus.tracks.size());
  for (const auto& t : r.corpus.tracks.all()) {
    fx.features.ids.push_back(t.id);
  }
  std::sort(fx.features.ids.begin(), fx.features.ids.end());
  fx.features.rows.resize(static_cast<Eigen::Index>(fx.features.ids.size()),
                          r.corpus.tracks.schema().concat_dim());
  for (std::size_t i = 0; i < fx.features.ids.size(); ++i) {
    fx.features.rows.row(static_cast<Eigen::Index>(i)) =
        r.corpus.tracks.concat_features(fx.features.ids[i]).transpose();
  }
  fx.features.rebuild_index();

  CoocStats stats = count_cooccurrence(r.corpus.playlists);
  PairMineConfig mine_cfg;
  mine_cfg.min_count = 2;
  mine_cfg.pos_per_anchor = 3;
  mine_cfg.seed = seed;
  fx.pairs = mine_pairs(stats, mine_cfg);
  return fx;
}

}  // namespace

TEST_CASE("forward produces the configured n x d shape") {
  FusionConfig cfg;
  cfg.input_dim = 40;
  cfg.hidden_dim = 32;
  cfg.n = 5;
  cfg.d = 128;
  cfg.seed = 1;
  FusionModel model = init_fusion_model(cfg);
  Eigen::MatrixXd x = random_batch(3, 40, 2);
  Eigen::MatrixXd y = fusion_forward(model, x, /*train=*/true);
  CHECK(y.rows() == 3);
  CHECK(y.cols() == 5 * 128);  // flattened n x d

  CHECK_THROWS_AS(fusion_forward(model, random_batch(1, 40, 3), /*train=*/true), DataError);
  CHECK_THROWS_AS(fusion_forward(model, random_batch(2, 39, 3), /*train=*/true), DataError);
}

TEST_CASE("degenerate zero parameters produce the zero embedding") {
  FusionConfig cfg = tiny_config();
  FusionModel model = init_fusion_model(cfg);
  model.w1.setZero();
  model.w2.setZero();

  Eigen::MatrixXd x = random_batch(2, cfg.input_dim, 5);
  Eigen::MatrixXd y_train = fusion_forward(model, x, /*train=*/true, /*update_running=*/false);
  CHECK(y_train.isZero(0.0));
  Eigen::MatrixXd y_eval = fusion_forward(model, x, /*train=*/false);
  CHECK(y_eval.isZero(0.0));
}

TEST_CASE("eval-mode forward is a pure function of parameters and input") {
  FusionConfig cfg = tiny_config();
  FusionModel model = init_fusion_model(cfg);
  // Populate running stats with a few train batches.
  fusion_forward(model, random_batch(6, cfg.input_dim, 8), /*train=*/true);
  Eigen::MatrixXd x = random_batch(4, cfg.input_dim, 9);
  Eigen::MatrixXd y1 = fusion_forward(model, x, /*train=*/false);
  Eigen::MatrixXd y2 = fusion_forward(model, x, /*train=*/false);
  CHECK(y1 == y2);  // bit-identical
}

TEST_CASE("contrastive loss hits its documented fixed points") {
  Eigen::VectorXd e = random_batch(1, 6, 3).row(0).transpose();
  Eigen::VectorXd other = e;
  // Coincident positives: D = 0, target 0.
  CHECK(contrastive_loss(e, other, 1, DistanceMode::dim_normalized) == doctest::Approx(0.0));
  // Coincident negatives: D = 0, target 1.
  CHECK(contrastive_loss(e, other, 0, DistanceMode::dim_normalized) == doctest::Approx(1.0));

  // y = 0 with D exactly 1 (plain mode): loss 0.
  Eigen::VectorXd a = Eigen::VectorXd::Zero(4);
  Eigen::VectorXd b = Eigen::VectorXd::Zero(4);
  b[0] = 1.0;
  CHECK(contrastive_loss(a, b, 0, DistanceMode::plain) == doctest::Approx(0.0));
  // dim-normalized: D = 1/sqrt(4) = 0.5, loss (1 - 0.5)^2.
  CHECK(contrastive_loss(a, b, 0, DistanceMode::dim_normalized) == doctest::Approx(0.25));
  CHECK_THROWS_AS(contrastive_loss(a, random_batch(1, 6, 1).row(0).transpose(), 0,
                                   DistanceMode::plain),
                  DataError);
}

TEST_CASE("covariance loss identities") {
  SUBCASE("constant batch contributes zero") {
    Eigen::MatrixXd batch = Eigen::MatrixXd::Ones(5, 6);  // n=2, d=3, all rows equal
    CHECK(covariance_loss(batch, 2, 3) == doctest::Approx(0.0));
  }

  SUBCASE("duplicated position with identity covariance gives exactly 1") {
    // e_1 samples: s * {(1,0),(-1,0),(0,1),(0,-1)} has unbiased covariance
    // s^2 * (2/3) * I, so s = sqrt(3/2) makes it exactly I. e_2 = e_1 gives
    // ||Cov||_F^2 = 2 and loss (2/(2*1)) * (1/2) * 2 = 1.
    const double s = std::sqrt(1.5);
    Eigen::MatrixXd e1(4, 2);
    e1 << s, 0, -s, 0, 0, s, 0, -s;
    Eigen::MatrixXd batch(4, 4);
    batch << e1, e1;
    CHECK(covariance_loss(batch, 2, 2) == doctest::Approx(1.0).epsilon(1e-12));
  }

  SUBCASE("independent positions concentrate near zero") {
    Eigen::MatrixXd batch = random_batch(10000, 4, 77);  // n=2, d=2 independent
    CHECK(covariance_loss(batch, 2, 2) < 0.01);
  }

  SUBCASE("rejects a single-row batch") {
    CHECK_THROWS_AS(covariance_loss(Eigen::MatrixXd::Ones(1, 4), 2, 2), DataError);
  }
}

TEST_CASE("variance loss identities") {
  SUBCASE("constant batch: every term is 1 - sqrt(eps)") {
    Eigen::MatrixXd batch = Eigen::MatrixXd::Constant(7, 10, 3.25);
    double loss = variance_loss(batch, 1.0, 1e-4);
    CHECK(std::abs(loss - 0.99) < 1e-12);
  }

  SUBCASE("unit per-dimension variance: loss exactly 0") {
    // Two samples at x and x + sqrt(2) per dimension: unbiased variance 1.
    Eigen::MatrixXd batch(2, 6);
    batch.row(0).setConstant(0.3);
    batch.row(1).setConstant(0.3 + M_SQRT2);
    CHECK(variance_loss(batch, 1.0, 1e-4) == 0.0);
  }

  SUBCASE("large spread saturates the hinge") {
    Eigen::MatrixXd batch = 100.0 * random_batch(8, 6, 5);
    CHECK(variance_loss(batch, 1.0, 1e-4) == 0.0);
  }
}

TEST_CASE("regularizers are nonnegative and permutation-invariant") {
  std::mt19937_64 rng(31);
  for (int trial = 0; trial < 10; ++trial) {
    Eigen::MatrixXd batch = random_batch(9, 8, rng());
    double cov = covariance_loss(batch, 2, 4);
    double var = variance_loss(batch, 1.0, 1e-4);
    CHECK(cov >= 0.0);
    CHECK(var >= 0.0);

    std::vector<int> perm(9);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    Eigen::MatrixXd shuffled(9, 8);
    for (int i = 0; i < 9; ++i) {
      shuffled.row(i) = batch.row(perm[static_cast<std::size_t>(i)]);
    }
    CHECK(covariance_loss(shuffled, 2, 4) == doctest::Approx(cov).epsilon(1e-12));
    CHECK(variance_loss(shuffled, 1.0, 1e-4) == doctest::Approx(var).epsilon(1e-12));
  }
}

TEST_CASE("alpha = 0 reduces the total objective to the contrastive term") {
  FusionConfig cfg = tiny_config();
  cfg.alpha = 0.0;
  FusionModel model = init_fusion_model(cfg);
  Eigen::MatrixXd x = random_batch(6, cfg.input_dim, 21);
  std::vector<BatchPair> pairs = {{0, 1, 1}, {2, 3, 0}, {4, 5, 1}};

  LossBreakdown loss = fusion_loss_and_grad(model, x, pairs, cfg, nullptr, false);
  CHECK(loss.total(cfg.alpha) == doctest::Approx(loss.contrastive).epsilon(1e-15));
  CHECK(loss.contrastive >= 0.0);
}

TEST_CASE("analytic gradients match central finite differences on a tiny model") {
  FusionConfig cfg = tiny_config();
  FusionModel model = init_fusion_model(cfg);
  Eigen::MatrixXd x = random_batch(6, cfg.input_dim, 11);
  std::vector<BatchPair> pairs = {{0, 1, 1}, {2, 3, 0}, {4, 5, 1}, {0, 3, 0}};

  for (DistanceMode mode : {DistanceMode::dim_normalized, DistanceMode::plain}) {
    cfg.distance = mode;
    FusionGradients grads;
    LossBreakdown loss = fusion_loss_and_grad(model, x, pairs, cfg, &grads, false);
    CHECK(std::isfinite(loss.total(cfg.alpha)));

    auto total = [&]() {
      LossBreakdown l = fusion_loss_and_grad(model, x, pairs, cfg, nullptr, false);
      return l.total(cfg.alpha);
    };

    CHECK(testing::max_relative_error(grads.w1, testing::finite_difference(model.w1, total)) <
          1e-4);
    CHECK(testing::max_relative_error(grads.b1,
                                      testing::finite_difference_vec(model.b1, total)) < 1e-4);
    CHECK(testing::max_relative_error(
              grads.bn_scale, testing::finite_difference_vec(model.bn_scale, total)) < 1e-4);
    CHECK(testing::max_relative_error(
              grads.bn_shift, testing::finite_difference_vec(model.bn_shift, total)) < 1e-4);
    CHECK(testing::max_relative_error(grads.w2, testing::finite_difference(model.w2, total)) <
          1e-4);
    CHECK(testing::max_relative_error(grads.b2,
                                      testing::finite_difference_vec(model.b2, total)) < 1e-4);
    CHECK(testing::max_relative_error(
              grads.ln_scale, testing::finite_difference_vec(model.ln_scale, total)) < 1e-4);
    CHECK(testing::max_relative_error(
              grads.ln_shift, testing::finite_difference_vec(model.ln_shift, total)) < 1e-4);
  }
}

TEST_CASE("training reduces the objective and the regularizer works") {
  TrainFixture fx = make_train_fixture(200, 13);
  REQUIRE(fx.pairs.positives() > 20);

  FusionConfig cfg;
  cfg.input_dim = fx.features.dim();
  cfg.hidden_dim = 32;
  cfg.n = 2;
  cfg.d = 8;
  cfg.alpha = 0.2;
  cfg.batch_size = 32;
  cfg.lr = 1e-3;
  cfg.epochs = 20;
  cfg.seed = 42;
  cfg.optimizer = Optimizer::adam;

  TrainedFusion with_reg = train_fusion(fx.features, fx.pairs, cfg);
  REQUIRE(with_reg.history.epochs.size() == 20);
  double first = with_reg.history.epochs.front().total(cfg.alpha);
  double last = with_reg.history.epochs.back().total(cfg.alpha);
  CHECK(last < first);

  FusionConfig ablation = cfg;
  ablation.alpha = 0.0;
  TrainedFusion without_reg = train_fusion(fx.features, fx.pairs, ablation);
  // The regularized run must end with strictly lower covariance loss.
  CHECK(with_reg.history.epochs.back().covariance <
        without_reg.history.epochs.back().covariance);
}

TEST_CASE("training is deterministic for a fixed seed") {
  TrainFixture fx = make_train_fixture(80, 3);
  FusionConfig cfg;
  cfg.input_dim = fx.features.dim();
  cfg.hidden_dim = 16;
  cfg.n = 2;
  cfg.d = 4;
  cfg.batch_size = 16;
  cfg.epochs = 3;
  cfg.seed = 77;

  TrainedFusion a = train_fusion(fx.features, fx.pairs, cfg);
  TrainedFusion b = train_fusion(fx.features, fx.pairs, cfg);
  REQUIRE(a.history.epochs.size() == b.history.epochs.size());
  for (std::size_t i = 0; i < a.history.epochs.size(); ++i) {
    CHECK(a.history.epochs[i].contrastive == b.history.epochs[i].contrastive);
    CHECK(a.history.epochs[i].covariance == b.history.epochs[i].covariance);
    CHECK(a.history.epochs[i].variance == b.history.epochs[i].variance);
  }
  CHECK(a.model.w1 == b.model.w1);
  CHECK(a.model.w2 == b.model.w2);
}

TEST_CASE("embed_catalog is deterministic and handles single-track catalogs") {
  TrainFixture fx = make_train_fixture(50, 5);
  FusionConfig cfg;
  cfg.input_dim = fx.features.dim();
  cfg.hidden_dim = 16;
  cfg.n = 2;
  cfg.d = 4;
  cfg.batch_size = 8;
  cfg.epochs = 2;
  cfg.seed = 10;
  TrainedFusion trained = train_fusion(fx.features, fx.pairs, cfg);

  VectorTable e1 = embed_catalog(trained.model, fx.features);
  VectorTable e2 = embed_catalog(trained.model, fx.features);
  CHECK(e1.rows == e2.rows);  // bit-identical
  CHECK(e1.dim() == cfg.n * cfg.d);

  VectorTable one;
  one.ids = {fx.features.ids[0]};
  one.rows = fx.features.rows.topRows(1);
  one.rebuild_index();
  VectorTable embedded = embed_catalog(trained.model, one);
  CHECK(embedded.size() == 1);
  CHECK(embedded.rows.row(0) == e1.rows.row(0));  // eval mode ignores batch context
}

TEST_CASE("FMOD round trip restores the model exactly") {
  FusionConfig cfg = tiny_config();
  FusionModel model = init_fusion_model(cfg);
  fusion_forward(model, random_batch(6, cfg.input_dim, 2), /*train=*/true);  // move stats

  auto path = std::filesystem::temp_directory_path() /
              ("fusid_fmod_" + std::to_string(::getpid()) + ".fmod");
  save_fusion(model, path.string());
  FusionModel loaded = load_fusion(path.string());
  std::filesystem::remove(path);

  CHECK(loaded.w1 == model.w1);
  CHECK(loaded.b1 == model.b1);
  CHECK(loaded.bn_scale == model.bn_scale);
  CHECK(loaded.bn_shift == model.bn_shift);
  CHECK(loaded.bn_running_mean == model.bn_running_mean);
  CHECK(loaded.bn_running_var == model.bn_running_var);
  CHECK(loaded.w2 == model.w2);
  CHECK(loaded.b2 == model.b2);
  CHECK(loaded.ln_scale == model.ln_scale);
  CHECK(loaded.ln_shift == model.ln_shift);
  CHECK(loaded.n == model.n);
  CHECK(loaded.d == model.d);
  CHECK(loaded.bn_momentum == model.bn_momentum);

  Eigen::MatrixXd x = random_batch(3, cfg.input_dim, 30);
  CHECK(fusion_forward(loaded, x, false) == fusion_forward(model, x, false));
}
