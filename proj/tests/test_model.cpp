#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "deepin/finite_diff.hpp"
#include "deepin/model.hpp"

using namespace deepin;

namespace {

DeepInModel seeded_model(std::size_t d, const std::vector<std::size_t>& hidden,
                         std::uint64_t seed, Task task = Task::regression) {
  Rng rng(seed);
  Matrix b(d, d);
  for (double& v : b.data) v = rng.normal(0.0, 0.5);
  std::vector<std::size_t> dims{d};
  dims.insert(dims.end(), hidden.begin(), hidden.end());
  dims.push_back(1);
  RepuNetwork net = make_network(dims);
  for (Layer& l : net.layers) {
    for (double& w : l.w.data) w = rng.normal(0.0, 0.5);
    for (double& a : l.a) a = rng.normal(0.0, 0.2);
  }
  return make_model(std::move(b), std::move(net), task);
}

Vec model_params(const DeepInModel& m) {
  Vec all = m.rep.b.data;
  const Vec theta = flatten(m.net);
  all.insert(all.end(), theta.begin(), theta.end());
  return all;
}

void set_model_params(DeepInModel& m, const Vec& all) {
  const std::size_t nb = m.rep.b.data.size();
  for (std::size_t i = 0; i < nb; ++i) m.rep.b.data[i] = all[i];
  unflatten(m.net, Vec(all.begin() + nb, all.end()));
}

}  // namespace

TEST_CASE("predict with zero B is constant in x", "[model]") {
  DeepInModel m = seeded_model(3, {4}, 1);
  for (double& v : m.rep.b.data) v = 0.0;
  const double at_zero = predict(m, {0.0, 0.0, 0.0});
  REQUIRE(predict(m, {5.0, -2.0, 1.0}) == at_zero);
  REQUIRE(predict(m, {-9.0, 4.0, 0.5}) == at_zero);
}

TEST_CASE("predict with identity B and affine net is a plain linear map", "[model]") {
  RepuNetwork net = make_network({2, 1});
  net.layers[0].w.data = {1.5, -2.0};
  net.layers[0].a = {0.25};
  const DeepInModel m = make_model(Matrix::identity(2), net, Task::regression);
  REQUIRE(predict(m, {2.0, 1.0}) == Catch::Approx(1.5 * 2.0 - 2.0 * 1.0 + 0.25).margin(1e-14));
}

TEST_CASE("predict equals explicit composition of B and the network", "[model]") {
  const DeepInModel m = seeded_model(4, {6, 3}, 9);
  Rng rng(10);
  for (int t = 0; t < 20; ++t) {
    Vec x(4);
    for (double& v : x) v = rng.normal();
    REQUIRE(predict(m, x) == forward(m.net, matvec(m.rep.b, x)).output[0]);
  }
}

TEST_CASE("loss triple values at anchor points", "[model]") {
  const LossTriple ls = loss(Task::regression, 1.7, 1.7);
  REQUIRE(ls.value == 0.0);
  REQUIRE(ls.d1 == 0.0);
  REQUIRE(ls.d2 == 2.0);

  const LossTriple lg = loss(Task::binary_classification, 0.0, 1.0);
  REQUIRE(lg.value == Catch::Approx(std::log(2.0)).margin(1e-14));
  REQUIRE(lg.d1 == Catch::Approx(-0.5).margin(1e-14));
  REQUIRE(lg.d2 == Catch::Approx(0.25).margin(1e-14));

  REQUIRE_THROWS_AS(loss(Task::binary_classification, 0.3, 0.5), contract_violation);
}

TEST_CASE("loss derivatives match finite differences", "[model][property]") {
  for (const Task task : {Task::regression, Task::binary_classification}) {
    for (double y : {0.0, 1.0}) {
      for (double u = -3.0; u <= 3.0; u += 0.37) {
        const auto f = [&](const Vec& v) { return loss(task, v[0], y).value; };
        const auto f1 = [&](const Vec& v) { return loss(task, v[0], y).d1; };
        const LossTriple t = loss(task, u, y);
        REQUIRE(t.d1 == Catch::Approx(finite_diff_grad(f, {u}, 1e-6)[0]).margin(1e-6));
        REQUIRE(t.d2 == Catch::Approx(finite_diff_grad(f1, {u}, 1e-6)[0]).margin(1e-6));
        if (task == Task::binary_classification) {
          REQUIRE(t.d2 > 0.0);
          REQUIRE(t.d2 <= 0.25);
        }
      }
    }
  }
}

TEST_CASE("penalty components at reference points", "[model]") {
  const std::size_t d = 5;
  RepuNetwork net = make_network({d, d, 1});
  net.layers[0].w = Matrix::identity(d);
  net.layers[1].w = Matrix(1, d);
  DeepInModel m = make_model(Matrix::identity(d), net, Task::regression);

  PenaltyConfig cfg;
  cfg.lambda1 = cfg.lambda2 = cfg.lambda3 = cfg.lambda4 = 1.0;
  const PenaltyBreakdown p = penalty(m, cfg);
  REQUIRE(p.rho1 == Catch::Approx(static_cast<double>(d)).margin(1e-12));
  REQUIRE(p.rho2 == Catch::Approx(static_cast<double>(d)).margin(1e-12));

  // square hidden layers at W=I, a=0 pay no depth penalty
  RepuNetwork deep = make_network({3, 4, 4, 4, 1});
  Rng rng(3);
  init_params(deep, rng);
  const DeepInModel md = make_model(Matrix::identity(3), deep, Task::regression);
  REQUIRE(penalty(md, cfg).rho31 == 0.0);
}

TEST_CASE("penalty matches an independent direct summation", "[model]") {
  const DeepInModel m = seeded_model(4, {4, 4}, 33);
  PenaltyConfig cfg;
  cfg.lambda1 = 0.3;
  cfg.lambda2 = 0.7;
  cfg.lambda3 = 0.11;
  cfg.lambda4 = 0.05;
  const PenaltyBreakdown p = penalty(m, cfg);

  double rho1 = 0.0, rho2 = 0.0, rho31 = 0.0, l1 = 0.0;
  for (std::size_t k = 0; k < 4; ++k) {
    double s = 0.0;
    for (std::size_t j = 0; j < 4; ++j) s += m.rep.b(k, j) * m.rep.b(k, j);
    rho1 += std::sqrt(s);
  }
  for (std::size_t j = 0; j < 4; ++j) {
    double s = 0.0;
    for (std::size_t k = 0; k < 4; ++k) s += m.rep.b(k, j) * m.rep.b(k, j);
    rho2 += std::sqrt(s);
  }
  for (std::size_t l = 0; l < m.net.layers.size(); ++l) {
    const Layer& layer = m.net.layers[l];
    for (double w : layer.w.data) l1 += std::fabs(w);
    for (double a : layer.a) l1 += std::fabs(a);
    if (l >= 1 && layer.w.rows == layer.w.cols) {
      double s = 0.0;
      for (std::size_t i = 0; i < layer.w.rows; ++i)
        for (std::size_t j = 0; j < layer.w.cols; ++j) {
          const double dval = layer.w(i, j) - (i == j ? 1.0 : 0.0);
          s += dval * dval;
        }
      double a2 = 0.0;
      for (double a : layer.a) a2 += a * a;
      rho31 += std::sqrt(s) + std::sqrt(a2);
    }
  }
  REQUIRE(p.rho1 == Catch::Approx(rho1).margin(1e-12));
  REQUIRE(p.rho2 == Catch::Approx(rho2).margin(1e-12));
  REQUIRE(p.rho31 == Catch::Approx(rho31).margin(1e-12));
  REQUIRE(p.l1_theta == Catch::Approx(l1).margin(1e-12));
  REQUIRE(p.total ==
          Catch::Approx(0.3 * rho1 + 0.7 * rho2 + 0.11 * rho31 + 0.05 * l1).margin(1e-12));
}

TEST_CASE("penalty is positively homogeneous of degree one", "[model][property]") {
  DeepInModel m = seeded_model(3, {3}, 8);
  PenaltyConfig cfg;
  cfg.lambda1 = cfg.lambda2 = cfg.lambda4 = 1.0;
  const PenaltyBreakdown before = penalty(m, cfg);
  Vec params = model_params(m);
  for (double& v : params) v *= 2.0;
  set_model_params(m, params);
  const PenaltyBreakdown after = penalty(m, cfg);
  REQUIRE(after.rho1 == Catch::Approx(2.0 * before.rho1).margin(1e-10));
  REQUIRE(after.rho2 == Catch::Approx(2.0 * before.rho2).margin(1e-10));
  REQUIRE(after.l1_theta == Catch::Approx(2.0 * before.l1_theta).margin(1e-10));
}

TEST_CASE("stationary point has zero subgradient", "[model]") {
  RepuNetwork net = make_network({1, 1});
  net.layers[0].w(0, 0) = 2.0;
  DeepInModel m = make_model(Matrix::identity(1), net, Task::regression);
  Matrix x(3, 1);
  x.data = {1.0, 1.0, 1.0};
  const Vec y(3, predict(m, {1.0}));  // batch replicates one perfectly fit point
  const ObjectiveResult r = objective_and_subgrad(m, x, y, PenaltyConfig{});
  REQUIRE(r.objective == 0.0);
  for (double g : r.grad_b.data) REQUIRE(g == 0.0);
  for (double g : r.grad_theta) REQUIRE(g == 0.0);
}

TEST_CASE("zero B row contributes a zero group subgradient", "[model]") {
  DeepInModel m = seeded_model(3, {3}, 12);
  for (std::size_t j = 0; j < 3; ++j) m.rep.b(1, j) = 0.0;
  PenaltyConfig cfg;
  cfg.lambda1 = 5.0;
  Matrix x(2, 3);
  x.data = {1.0, 0.0, 0.0, 0.0, 1.0, 0.0};
  const Vec y = {0.0, 0.0};
  // isolate the penalty term: subtract the data-only gradient
  PenaltyConfig zero;
  const ObjectiveResult with_pen = objective_and_subgrad(m, x, y, cfg);
  const ObjectiveResult data_only = objective_and_subgrad(m, x, y, zero);
  for (std::size_t j = 0; j < 3; ++j)
    REQUIRE(with_pen.grad_b(1, j) - data_only.grad_b(1, j) == 0.0);
}

TEST_CASE("data-term subgradients match finite differences", "[model][property]") {
  for (std::uint64_t seed : {41u, 42u, 43u, 44u, 45u}) {
    DeepInModel m = seeded_model(3, {4, 2}, seed);
    Rng rng(seed + 7);
    Matrix x(6, 3);
    for (double& v : x.data) v = rng.normal();
    Vec y(6);
    for (double& v : y) v = rng.normal();
    const PenaltyConfig cfg;  // lambda = 0: check the smooth part only

    const ObjectiveResult r = objective_and_subgrad(m, x, y, cfg);
    Vec analytic = r.grad_b.data;
    analytic.insert(analytic.end(), r.grad_theta.begin(), r.grad_theta.end());

    DeepInModel probe = m;
    const auto f = [&](const Vec& params) {
      set_model_params(probe, params);
      return objective_and_subgrad(probe, x, y, cfg).objective;
    };
    const Vec fd = finite_diff_grad(f, model_params(m), 1e-5);
    double ref = 1e-8;
    for (double v : fd) ref = std::max(ref, std::fabs(v));
    for (std::size_t i = 0; i < fd.size(); ++i)
      REQUIRE(std::fabs(analytic[i] - fd[i]) <= 1e-4 * ref);
  }
}

TEST_CASE("objective is invariant to permuting batch rows", "[model][property]") {
  const DeepInModel m = seeded_model(3, {4}, 49);
  Rng rng(50);
  Matrix x(8, 3);
  for (double& v : x.data) v = rng.normal();
  Vec y(8);
  for (double& v : y) v = rng.normal();
  PenaltyConfig cfg;
  cfg.lambda1 = 0.2;
  const double base = objective_and_subgrad(m, x, y, cfg).objective;

  Matrix xp(8, 3);
  Vec yp(8);
  const std::size_t perm[8] = {5, 2, 7, 0, 3, 6, 1, 4};
  for (std::size_t i = 0; i < 8; ++i) {
    for (std::size_t j = 0; j < 3; ++j) xp(i, j) = x(perm[i], j);
    yp[i] = y[perm[i]];
  }
  REQUIRE(objective_and_subgrad(m, xp, yp, cfg).objective ==
          Catch::Approx(base).epsilon(1e-12));
}

TEST_CASE("with identity B and zero penalty the model is a vanilla network", "[model]") {
  const DeepInModel m = seeded_model(4, {5}, 60);
  DeepInModel vanilla = m;
  vanilla.rep.b = Matrix::identity(4);
  Rng rng(61);
  for (int t = 0; t < 10; ++t) {
    Vec x(4);
    for (double& v : x) v = rng.normal();
    REQUIRE(predict(vanilla, x) == forward(vanilla.net, x).output[0]);
  }
}
