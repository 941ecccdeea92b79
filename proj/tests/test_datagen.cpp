#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "deepin/datagen.hpp"
#include "deepin/metrics.hpp"
#include "deepin/trainer.hpp"

using namespace deepin;

namespace {

double sample_corr(const Matrix& x, std::size_t a, std::size_t b) {
  const double n = static_cast<double>(x.rows);
  double ma = 0.0, mb = 0.0;
  for (std::size_t i = 0; i < x.rows; ++i) {
    ma += x(i, a);
    mb += x(i, b);
  }
  ma /= n;
  mb /= n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < x.rows; ++i) {
    sab += (x(i, a) - ma) * (x(i, b) - mb);
    saa += (x(i, a) - ma) * (x(i, a) - ma);
    sbb += (x(i, b) - mb) * (x(i, b) - mb);
  }
  return sab / std::sqrt(saa * sbb);
}

}  // namespace

TEST_CASE("independent design has near-zero sample correlations", "[datagen]") {
  Rng rng(1);
  const std::size_t n = 4000;
  const Matrix x = gen_x(n, 4, 0.0, CorrelationScheme::equicorrelated, rng);
  const double bound = 3.0 / std::sqrt(static_cast<double>(n));
  for (std::size_t a = 0; a < 4; ++a)
    for (std::size_t b = a + 1; b < 4; ++b) REQUIRE(std::fabs(sample_corr(x, a, b)) <= bound);
}

TEST_CASE("equicorrelated design matches its target correlation", "[datagen]") {
  Rng rng(2);
  const Matrix x = gen_x(100000, 3, 0.2, CorrelationScheme::equicorrelated, rng);
  for (std::size_t a = 0; a < 3; ++a)
    for (std::size_t b = a + 1; b < 3; ++b)
      REQUIRE(sample_corr(x, a, b) == Catch::Approx(0.2).margin(0.01));
}

TEST_CASE("ar1 design decays geometrically", "[datagen]") {
  Rng rng(3);
  const Matrix x = gen_x(100000, 3, 0.5, CorrelationScheme::ar1, rng);
  REQUIRE(sample_corr(x, 0, 1) == Catch::Approx(0.5).margin(0.02));
  REQUIRE(sample_corr(x, 0, 2) == Catch::Approx(0.25).margin(0.02));
}

TEST_CASE("noiseless setting 1 returns the signal as the response", "[datagen]") {
  SyntheticSpec spec;
  spec.setting = 1;
  spec.n = 500;
  spec.d = 20;
  spec.s0 = 5;
  spec.d0 = 2;
  spec.sigma = 0.0;
  spec.seed = 4;
  const LabeledDataset ds = gen_setting(spec);
  REQUIRE(ds.y == ds.truth.f0);
  const MetricsReport m = prediction_metrics(ds.truth.f0, ds.y, &ds.truth.f0, Task::regression);
  REQUIRE(*m.mse == 0.0);
}

TEST_CASE("classification labels follow the logistic signal", "[datagen]") {
  SyntheticSpec spec;
  spec.setting = 4;
  spec.n = 10000;
  spec.d = 12;
  spec.s0 = 6;
  spec.d0 = 3;
  spec.seed = 5;
  const LabeledDataset ds = gen_setting(spec);
  REQUIRE(ds.task == Task::binary_classification);
  double mean_y = 0.0, mean_p = 0.0;
  for (std::size_t i = 0; i < spec.n; ++i) {
    mean_y += ds.y[i];
    mean_p += sigmoid(ds.truth.f0[i]);
  }
  REQUIRE(mean_y / spec.n == Catch::Approx(mean_p / spec.n).margin(0.02));
  // symmetric signal keeps classes near balance
  REQUIRE(mean_y / spec.n == Catch::Approx(0.5).margin(0.05));
}

TEST_CASE("truth index set matches the nonzero columns of B0", "[datagen][property]") {
  for (int setting : {1, 2, 3, 4}) {
    SyntheticSpec spec;
    spec.setting = setting;
    spec.n = 50;
    spec.d = 15;
    spec.s0 = 6;
    spec.d0 = setting == 3 ? 4 : 3;
    spec.seed = 6 + setting;
    const LabeledDataset ds = gen_setting(spec);
    for (std::size_t j = 0; j < spec.d; ++j) {
      const bool informative =
          std::find(ds.truth.informative.begin(), ds.truth.informative.end(), j) !=
          ds.truth.informative.end();
      REQUIRE((col_norm(ds.truth.b0, j) != 0.0) == informative);
    }
    // rows of the B0 block are orthonormal
    for (std::size_t i = 0; i < spec.d0; ++i) {
      REQUIRE(row_norm(ds.truth.b0, i) == Catch::Approx(1.0).margin(1e-10));
      for (std::size_t k = i + 1; k < spec.d0; ++k) {
        double ip = 0.0;
        for (std::size_t j = 0; j < spec.d; ++j) ip += ds.truth.b0(i, j) * ds.truth.b0(k, j);
        REQUIRE(ip == Catch::Approx(0.0).margin(1e-10));
      }
    }
  }
}

TEST_CASE("same spec and seed give a bitwise identical dataset", "[datagen]") {
  SyntheticSpec spec;
  spec.setting = 2;
  spec.n = 200;
  spec.d = 10;
  spec.s0 = 4;
  spec.d0 = 2;
  spec.seed = 11;
  const LabeledDataset a = gen_setting(spec);
  const LabeledDataset b = gen_setting(spec);
  REQUIRE(a.x == b.x);
  REQUIRE(a.y == b.y);
  REQUIRE(a.truth.b0 == b.truth.b0);
  REQUIRE(a.truth.f0 == b.truth.f0);
}

TEST_CASE("standardized signal has unit sample variance", "[datagen]") {
  for (int setting : {1, 2, 3}) {
    SyntheticSpec spec;
    spec.setting = setting;
    spec.n = 10000;
    spec.d = 20;
    spec.s0 = 8;
    spec.d0 = setting == 3 ? 6 : 4;
    spec.seed = 21 + setting;
    const LabeledDataset ds = gen_setting(spec);
    double mean = 0.0, var = 0.0;
    for (double v : ds.truth.f0) mean += v;
    mean /= static_cast<double>(spec.n);
    for (double v : ds.truth.f0) var += (v - mean) * (v - mean);
    var /= static_cast<double>(spec.n);
    REQUIRE(var == Catch::Approx(1.0).margin(0.05));
  }
}

TEST_CASE("teacher-student refit with the oracle representation", "[datagen][slow]") {
  // draw train + test jointly so they share the same teacher truth
  const std::size_t n_train = 5000, n_test = 2000;
  SyntheticSpec spec;
  spec.setting = 3;
  spec.n = n_train + n_test;
  spec.d = 12;
  spec.s0 = 6;
  spec.d0 = 3;
  spec.sigma = 0.4;
  spec.seed = 31;
  const LabeledDataset ds = gen_setting(spec);
  Matrix x_train(n_train, spec.d);
  Vec y_train(n_train);
  for (std::size_t i = 0; i < n_train; ++i) {
    for (std::size_t j = 0; j < spec.d; ++j) x_train(i, j) = ds.x(i, j);
    y_train[i] = ds.y[i];
  }

  RepuNetwork net = make_network({spec.d0, 16, 8, 1});
  Rng rng(33);
  init_params(net, rng);
  DeepInModel model = make_model(ds.truth.b0, std::move(net), Task::regression);
  TrainOptions opts;
  opts.epochs = 150;
  opts.batch_size = 64;
  opts.learning_rate = 0.02;
  opts.freeze_b = true;  // oracle B0 stays fixed
  opts.truncation_enabled = false;
  opts.seed = 34;
  const TrainResult res = train(std::move(model), x_train, y_train, PenaltyConfig{}, opts);

  double mse = 0.0;
  Vec xi(spec.d);
  for (std::size_t i = n_train; i < spec.n; ++i) {
    for (std::size_t j = 0; j < spec.d; ++j) xi[j] = ds.x(i, j);
    const double diff = predict(res.model, xi) - ds.truth.f0[i];
    mse += diff * diff;
  }
  mse /= static_cast<double>(n_test);
  REQUIRE(mse <= 2.0 * spec.sigma * spec.sigma);
}
