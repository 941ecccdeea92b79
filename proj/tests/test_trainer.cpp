#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "deepin/datagen.hpp"
#include "deepin/harness.hpp"
#include "deepin/trainer.hpp"

using namespace deepin;

namespace {

DeepInModel scalar_model() {
  RepuNetwork net = make_network({1, 1});
  net.layers[0].w(0, 0) = 0.5;
  Matrix b(1, 1);
  b(0, 0) = 0.5;
  return make_model(std::move(b), std::move(net), Task::regression);
}

bool models_equal(const DeepInModel& a, const DeepInModel& b) {
  if (!(a.rep.b == b.rep.b)) return false;
  if (a.rep.active_rows != b.rep.active_rows) return false;
  if (a.rep.active_cols != b.rep.active_cols) return false;
  return flatten(a.net) == flatten(b.net);
}

}  // namespace

TEST_CASE("truncate masks everything in a zero matrix", "[trainer]") {
  DeepInModel m = make_model(Matrix(3, 3), make_network({3, 1}), Task::regression);
  truncate(m, 0.0, 0.0, 0.0);
  const StructureTriplet s = active_structure(m);
  REQUIRE(s.dims == 0);
  REQUIRE(s.n_vars == 0);
  for (auto a : m.rep.active_rows) REQUIRE(a == 0);
  for (auto a : m.rep.active_cols) REQUIRE(a == 0);
}

TEST_CASE("truncate with zero thresholds only masks exact zeros", "[trainer]") {
  Matrix b(2, 2);
  b.data = {0.3, 0.0, 0.0, 0.0};
  DeepInModel m = make_model(std::move(b), make_network({2, 1}), Task::regression);
  truncate(m, 0.0, 0.0, 0.0);
  REQUIRE(m.rep.active_rows[0] == 1);
  REQUIRE(m.rep.active_rows[1] == 0);
  REQUIRE(m.rep.active_cols[0] == 1);
  REQUIRE(m.rep.active_cols[1] == 0);
  REQUIRE(m.rep.b(0, 0) == 0.3);
}

TEST_CASE("truncate runs the column pass on the row-truncated matrix", "[trainer]") {
  // row norms: row0 = 0.05, row1 = 0.2 (kept), row2 = 0.01
  // after zeroing rows 0 and 2, column 1's survivor norm drops below tau2
  Matrix b(3, 3);
  b.data = {0.05, 0.0,  0.0,   //
            0.2,  0.03, 0.0,   //
            0.0,  0.01, 0.0};
  DeepInModel m = make_model(std::move(b), make_network({3, 1}), Task::regression);
  truncate(m, 0.1, 0.05, 0.0);
  REQUIRE(m.rep.active_rows[0] == 0);
  REQUIRE(m.rep.active_rows[1] == 1);
  REQUIRE(m.rep.active_rows[2] == 0);
  // column 0 survives through row 1 (0.2 > 0.05); column 1 is now 0.03 <= tau2
  REQUIRE(m.rep.active_cols[0] == 1);
  REQUIRE(m.rep.active_cols[1] == 0);
  REQUIRE(m.rep.active_cols[2] == 0);
  REQUIRE(m.rep.b(1, 1) == 0.0);
}

TEST_CASE("truncate is idempotent and respects its thresholds", "[trainer][property]") {
  Rng rng(15);
  for (int trial = 0; trial < 20; ++trial) {
    Matrix b(5, 6);
    for (double& v : b.data) v = rng.normal(0.0, 0.3);
    RepuNetwork net = make_network({5, 4, 1});
    for (Layer& l : net.layers)
      for (double& w : l.w.data) w = rng.normal(0.0, 0.3);
    DeepInModel m = make_model(std::move(b), std::move(net), Task::regression);
    const double tau1 = 0.3, tau2 = 0.25, tau3 = 0.1;
    truncate(m, tau1, tau2, tau3);

    for (std::size_t k = 0; k < m.rep.b.rows; ++k) {
      const double nrm = row_norm(m.rep.b, k);
      if (m.rep.active_rows[k]) REQUIRE(nrm > tau1);
      else REQUIRE(nrm == 0.0);
    }
    for (std::size_t j = 0; j < m.rep.b.cols; ++j) {
      const double nrm = col_norm(m.rep.b, j);
      if (m.rep.active_cols[j]) REQUIRE(nrm > tau2);
      else REQUIRE(nrm == 0.0);
    }
    for (double v : flatten(m.net)) REQUIRE((v == 0.0 || std::fabs(v) > tau3));

    DeepInModel twice = m;
    truncate(twice, tau1, tau2, tau3);
    REQUIRE(models_equal(twice, m));
  }
}

TEST_CASE("train fits the 1-D least squares problem y = 2x", "[trainer]") {
  Rng rng(70);
  Matrix x(128, 1);
  Vec y(128);
  for (std::size_t i = 0; i < 128; ++i) {
    x(i, 0) = rng.uniform(-1.0, 1.0);
    y[i] = 2.0 * x(i, 0);
  }
  TrainOptions opts;
  opts.epochs = 200;
  opts.batch_size = 16;
  opts.learning_rate = 0.05;
  opts.seed = 7;
  opts.truncation_enabled = false;
  const TrainResult res = train(scalar_model(), x, y, PenaltyConfig{}, opts);
  REQUIRE(std::fabs(predict(res.model, {1.0}) - 2.0) < 0.05);
  REQUIRE(res.history.epochs.size() == 200);
  REQUIRE(res.history.epochs.back().objective < 0.5 * res.history.epochs.front().objective);
}

TEST_CASE("penalty-dominated training truncates every row", "[trainer]") {
  Rng rng(71);
  const std::size_t n = 200, d = 5;
  Matrix x(n, d);
  Vec y(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j) x(i, j) = rng.normal();
    y[i] = rng.normal();
  }
  DeepInModel m = make_deepin_model(d, {4}, 2, Task::regression, 3);
  PenaltyConfig cfg;
  cfg.lambda1 = 1000.0;
  cfg.tau1 = 0.05;
  cfg.tau2 = 0.0;
  cfg.tau3 = 0.0;
  TrainOptions opts;
  opts.epochs = 120;
  opts.batch_size = 32;
  opts.seed = 4;
  opts.relative_thresholds = false;
  const TrainResult res = train(std::move(m), x, y, cfg, opts);
  REQUIRE(active_structure(res.model).dims == 0);
}

TEST_CASE("zero epochs returns the model unchanged", "[trainer]") {
  const DeepInModel m = make_deepin_model(3, {4}, 2, Task::regression, 11);
  Matrix x(4, 3);
  Vec y(4, 0.0);
  TrainOptions opts;
  opts.epochs = 0;
  const TrainResult res = train(m, x, y, PenaltyConfig{}, opts);
  REQUIRE(models_equal(res.model, m));
  REQUIRE(res.history.epochs.empty());
}

TEST_CASE("masked groups stay exactly zero through further training", "[trainer]") {
  Rng rng(72);
  Matrix x(64, 3);
  Vec y(64);
  for (std::size_t i = 0; i < 64; ++i) {
    for (std::size_t j = 0; j < 3; ++j) x(i, j) = rng.normal();
    y[i] = x(i, 0) - x(i, 2) + 0.1 * rng.normal();
  }
  DeepInModel m = make_deepin_model(3, {4}, 2, Task::regression, 5);
  for (std::size_t j = 0; j < 3; ++j) m.rep.b(1, j) = 0.0;
  m.rep.active_rows[1] = 0;
  TrainOptions opts;
  opts.epochs = 30;
  opts.seed = 6;
  opts.truncation_enabled = false;
  const TrainResult res = train(std::move(m), x, y, PenaltyConfig{}, opts);
  for (std::size_t j = 0; j < 3; ++j) REQUIRE(res.model.rep.b(1, j) == 0.0);
  REQUIRE(res.model.rep.active_rows[1] == 0);
}

TEST_CASE("training is bit-reproducible for a fixed seed", "[trainer]") {
  Rng rng(73);
  Matrix x(50, 2);
  Vec y(50);
  for (std::size_t i = 0; i < 50; ++i) {
    x(i, 0) = rng.normal();
    x(i, 1) = rng.normal();
    y[i] = x(i, 0) + 0.2 * rng.normal();
  }
  PenaltyConfig cfg;
  cfg.lambda1 = 0.05;
  TrainOptions opts;
  opts.epochs = 25;
  opts.seed = 9;
  const TrainResult a = train(make_deepin_model(2, {3}, 2, Task::regression, 1), x, y, cfg, opts);
  const TrainResult b = train(make_deepin_model(2, {3}, 2, Task::regression, 1), x, y, cfg, opts);
  REQUIRE(models_equal(a.model, b.model));
  REQUIRE(a.history.epochs.size() == b.history.epochs.size());
  for (std::size_t e = 0; e < a.history.epochs.size(); ++e)
    REQUIRE(a.history.epochs[e].objective == b.history.epochs[e].objective);
}

TEST_CASE("training throws training_diverged with history attached", "[trainer]") {
  Matrix x(8, 1);
  Vec y(8);
  for (std::size_t i = 0; i < 8; ++i) {
    x(i, 0) = 10.0;
    y[i] = 1e4;
  }
  DeepInModel m = make_deepin_model(1, {4}, 2, Task::regression, 2);
  TrainOptions opts;
  opts.epochs = 400;
  opts.learning_rate = 1e5;
  opts.grad_clip = 0.0;
  opts.seed = 3;
  REQUIRE_THROWS_AS(train(std::move(m), x, y, PenaltyConfig{}, opts), training_diverged);
}

TEST_CASE("normalize handles the (-3, 4) row by flipping then scaling", "[trainer]") {
  Matrix b(1, 2);
  b.data = {-3.0, 4.0};
  const NormalizeResult r = normalize(b);
  REQUIRE(r.b(0, 0) == Catch::Approx(0.6).margin(1e-15));
  REQUIRE(r.b(0, 1) == Catch::Approx(-0.8).margin(1e-15));
  REQUIRE(r.row_scales[0] == Catch::Approx(5.0).margin(1e-15));
  REQUIRE(r.sign_flips[0] == -1.0);
}

TEST_CASE("normalize is the identity on already-normalized input", "[trainer]") {
  Matrix b(2, 3);
  b.data = {1.0, 0.0, 0.0, 0.0, 1.0, 0.0};
  const NormalizeResult r = normalize(b);
  REQUIRE(r.b == b);
  for (double s : r.row_scales) REQUIRE(s == 1.0);
  for (double f : r.sign_flips) REQUIRE(f == 1.0);
  for (std::size_t i = 0; i < r.permutation.size(); ++i) REQUIRE(r.permutation[i] == i);
}

TEST_CASE("normalize properties on random full-rank matrices", "[trainer][property]") {
  Rng rng(80);
  for (int trial = 0; trial < 100; ++trial) {
    Matrix b(3, 5);
    for (double& v : b.data) v = rng.normal();
    const NormalizeResult r = normalize(b);
    for (std::size_t k = 0; k < 3; ++k)
      REQUIRE(row_norm(r.b, k) == Catch::Approx(1.0).margin(1e-12));
    for (std::size_t k = 0; k < 3; ++k) {
      for (std::size_t j = 0; j < 5; ++j) {
        if (r.b(k, j) != 0.0) {
          REQUIRE(r.b(k, j) > 0.0);
          break;
        }
      }
    }
    const Vec sv = singular_values(r.b);
    for (std::size_t i = 0; i + 1 < sv.size(); ++i) REQUIRE(sv[i] > sv[i + 1]);
    REQUIRE(sv.back() > 0.0);

    const NormalizeResult again = normalize(r.b);
    for (std::size_t i = 0; i < r.b.data.size(); ++i)
      REQUIRE(again.b.data[i] == Catch::Approx(r.b.data[i]).margin(1e-15));

    // row space is preserved: ranks agree
    const Vec sv_orig = singular_values(b);
    std::size_t rank_orig = 0, rank_norm = 0;
    for (double s : sv_orig) rank_orig += (s > 1e-10 * sv_orig.front());
    for (double s : sv) rank_norm += (s > 1e-10 * sv.front());
    REQUIRE(rank_orig == rank_norm);
  }
}

TEST_CASE("normalize_model keeps predictions identical", "[trainer]") {
  Rng rng(81);
  DeepInModel m = make_deepin_model(4, {5}, 2, Task::regression, 19);
  for (double& v : m.rep.b.data) v = rng.normal(0.0, 2.0);
  std::vector<Vec> probes;
  Vec outputs;
  for (int t = 0; t < 25; ++t) {
    Vec x(4);
    for (double& v : x) v = rng.normal();
    probes.push_back(x);
    outputs.push_back(predict(m, x));
  }
  normalize_model(m);
  for (std::size_t k = 0; k < 4; ++k)
    REQUIRE(row_norm(m.rep.b, k) == Catch::Approx(1.0).margin(1e-12));
  for (std::size_t t = 0; t < probes.size(); ++t)
    REQUIRE(predict(m, probes[t]) == Catch::Approx(outputs[t]).epsilon(1e-12));
}

TEST_CASE("active_structure counts", "[trainer]") {
  const std::size_t d = 4;
  RepuNetwork net = make_network({d, 3, 1});
  for (Layer& l : net.layers) {
    for (double& w : l.w.data) w = 1.0;
    for (double& a : l.a) a = 1.0;
  }
  const DeepInModel dense = make_model(Matrix::identity(d), net, Task::regression);
  const StructureTriplet s = active_structure(dense);
  REQUIRE(s.dims == d);
  REQUIRE(s.n_vars == d);
  REQUIRE(s.nnz == structure(net).size);

  DeepInModel empty = make_model(Matrix(d, d), make_network({d, 1}), Task::regression);
  truncate(empty, 0.0, 0.0, 0.0);
  const StructureTriplet s0 = active_structure(empty);
  REQUIRE(s0.dims == 0);
  REQUIRE(s0.n_vars == 0);
  REQUIRE(s0.nnz == 0);
}

TEST_CASE("active_structure matches a brute-force recount after training", "[trainer]") {
  Rng rng(83);
  Matrix x(120, 4);
  Vec y(120);
  for (std::size_t i = 0; i < 120; ++i) {
    for (std::size_t j = 0; j < 4; ++j) x(i, j) = rng.normal();
    y[i] = std::sin(x(i, 0)) + 0.1 * rng.normal();
  }
  PenaltyConfig cfg;
  cfg.lambda1 = 0.05;
  cfg.lambda4 = 0.01;
  TrainOptions opts;
  opts.epochs = 40;
  opts.seed = 14;
  const TrainResult res =
      train(make_deepin_model(4, {4}, 2, Task::regression, 10), x, y, cfg, opts);
  const StructureTriplet s = active_structure(res.model);
  std::size_t dims = 0, vars = 0, nnz = 0;
  for (std::size_t k = 0; k < 4; ++k) dims += (row_norm(res.model.rep.b, k) > 0.0);
  for (std::size_t j = 0; j < 4; ++j) vars += (col_norm(res.model.rep.b, j) > 0.0);
  for (double v : flatten(res.model.net)) nnz += (v != 0.0);
  REQUIRE(s.dims == dims);
  REQUIRE(s.n_vars == vars);
  REQUIRE(s.nnz == nnz);
}

TEST_CASE("tune with all-zero grids returns the zero config", "[trainer]") {
  Rng rng(85);
  Matrix x(60, 2);
  Vec y(60);
  for (std::size_t i = 0; i < 60; ++i) {
    x(i, 0) = rng.normal();
    x(i, 1) = rng.normal();
    y[i] = x(i, 0);
  }
  TuneGrids grids;
  grids.lambda1 = grids.lambda2 = grids.lambda3 = grids.lambda4 = {0.0};
  TrainOptions opts;
  opts.epochs = 5;
  opts.seed = 2;
  const PenaltyConfig cfg = tune(
      [](std::uint64_t s) { return make_deepin_model(2, {3}, 2, Task::regression, s); }, x, y,
      Task::regression, grids, opts);
  REQUIRE(cfg.lambda1 == 0.0);
  REQUIRE(cfg.lambda2 == 0.0);
  REQUIRE(cfg.lambda3 == 0.0);
  REQUIRE(cfg.lambda4 == 0.0);
}

TEST_CASE("tune prefers a positive lambda1 on pure-noise responses", "[trainer][slow]") {
  std::size_t wins = 0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(1000 + seed);
    const std::size_t n = 240, d = 6;
    Matrix x(n, d);
    Vec y(n);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < d; ++j) x(i, j) = rng.normal();
      y[i] = rng.normal();  // no signal at all
    }
    TuneGrids grids;
    grids.lambda1 = {0.0, 0.3};
    grids.lambda2 = grids.lambda3 = grids.lambda4 = {0.0};
    TrainOptions opts;
    opts.epochs = 40;
    opts.batch_size = 32;
    opts.seed = seed;
    const PenaltyConfig cfg = tune(
        [d](std::uint64_t s) { return make_deepin_model(d, {4}, 2, Task::regression, s); }, x, y,
        Task::regression, grids, opts);
    wins += (cfg.lambda1 > 0.0);
  }
  REQUIRE(wins >= 8);
}
