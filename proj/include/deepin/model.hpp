#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "deepin/network.hpp"
#include "deepin/special.hpp"

namespace deepin {

enum class Task { regression, binary_classification };

inline std::string task_name(Task t) {
  return t == Task::regression ? "regression" : "binary_classification";
}

/// Representation matrix B with hard activity masks. Masked rows/columns are
/// exactly zero and stay zero: training zeroes their gradients.
struct RepMatrix {
  Matrix b;
  std::vector<std::uint8_t> active_rows;
  std::vector<std::uint8_t> active_cols;

  RepMatrix() = default;
  explicit RepMatrix(Matrix m)
      : b(std::move(m)), active_rows(b.rows, 1), active_cols(b.cols, 1) {}

  std::size_t n_active_rows() const {
    std::size_t c = 0;
    for (auto a : active_rows) c += a;
    return c;
  }
  std::size_t n_active_cols() const {
    std::size_t c = 0;
    for (auto a : active_cols) c += a;
    return c;
  }
};

struct DeepInModel {
  RepMatrix rep;
  RepuNetwork net;
  Task task = Task::regression;
};

inline DeepInModel make_model(Matrix b, RepuNetwork net, Task task) {
  if (net.input_dim() != b.rows)
    throw contract_violation("make_model: B row count must equal network input dim");
  DeepInModel m;
  m.rep = RepMatrix(std::move(b));
  m.net = std::move(net);
  m.task = task;
  return m;
}

/// Prediction g(Bx); the logit for classification tasks.
inline double predict(const DeepInModel& model, const Vec& x) {
  if (x.size() != model.rep.b.cols) throw contract_violation("predict: input dimension mismatch");
  return forward(model.net, matvec(model.rep.b, x)).output[0];
}

inline double predict_proba(const DeepInModel& model, const Vec& x) {
  return sigmoid(predict(model, x));
}

/// Loss value with its first two derivatives in the prediction u.
struct LossTriple {
  double value = 0.0;
  double d1 = 0.0;
  double d2 = 0.0;
};

inline LossTriple loss(Task task, double u, double y) {
  LossTriple t;
  if (task == Task::regression) {
    const double r = u - y;
    t.value = r * r;
    t.d1 = 2.0 * r;
    t.d2 = 2.0;
  } else {
    if (y != 0.0 && y != 1.0)
      throw contract_violation("loss: classification labels must be 0 or 1");
    // log(1 + e^u) - y u, evaluated without overflow for large |u|
    t.value = (u > 0.0 ? u + std::log1p(std::exp(-u)) : std::log1p(std::exp(u))) - y * u;
    const double s = sigmoid(u);
    t.d1 = s - y;
    t.d2 = s * (1.0 - s);
  }
  return t;
}

struct PenaltyConfig {
  double lambda1 = 0.0;  // rows of B
  double lambda2 = 0.0;  // columns of B
  double lambda3 = 0.0;  // depth penalty rho_31
  double lambda4 = 0.0;  // l1 on theta
  double tau1 = 0.0;     // row truncation threshold
  double tau2 = 0.0;     // column truncation threshold
  double tau3 = 0.0;     // theta truncation threshold

  void validate() const {
    for (double v : {lambda1, lambda2, lambda3, lambda4, tau1, tau2, tau3})
      if (!(v >= 0.0)) throw contract_violation("PenaltyConfig: all entries must be >= 0");
  }
};

struct PenaltyBreakdown {
  double rho1 = 0.0;      // sum of row l2 norms of B
  double rho2 = 0.0;      // sum of column l2 norms of B
  double rho31 = 0.0;     // sum over square layers l >= 1 of ||W - I||_F + ||a||_2
  double l1_theta = 0.0;  // ||theta||_1
  double total = 0.0;
};

/// True for layers the depth penalty applies to: every layer past the first
/// whose weight matrix is square, so it can collapse to the identity map.
inline bool depth_penalized(const RepuNetwork& net, std::size_t l) {
  return l >= 1 && net.layers[l].w.rows == net.layers[l].w.cols;
}

inline PenaltyBreakdown penalty(const DeepInModel& model, const PenaltyConfig& cfg) {
  PenaltyBreakdown p;
  const Matrix& b = model.rep.b;
  for (std::size_t k = 0; k < b.rows; ++k) p.rho1 += row_norm(b, k);
  for (std::size_t j = 0; j < b.cols; ++j) p.rho2 += col_norm(b, j);
  for (std::size_t l = 0; l < model.net.layers.size(); ++l) {
    const Layer& layer = model.net.layers[l];
    if (depth_penalized(model.net, l)) {
      double w2 = 0.0;
      for (std::size_t i = 0; i < layer.w.rows; ++i)
        for (std::size_t j = 0; j < layer.w.cols; ++j) {
          const double d = layer.w(i, j) - (i == j ? 1.0 : 0.0);
          w2 += d * d;
        }
      p.rho31 += std::sqrt(w2) + norm2(layer.a);
    }
    for (double x : layer.w.data) p.l1_theta += std::fabs(x);
    for (double x : layer.a) p.l1_theta += std::fabs(x);
  }
  p.total = cfg.lambda1 * p.rho1 + cfg.lambda2 * p.rho2 + cfg.lambda3 * p.rho31 +
            cfg.lambda4 * p.l1_theta;
  return p;
}

struct ObjectiveResult {
  double objective = 0.0;
  double data_loss = 0.0;  // mean loss over the batch
  Matrix grad_b;
  Vec grad_theta;
};

namespace detail {

inline double sign0(double x) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); }

/// Subgradient of the penalty, using the minimal-norm element (zero) for
/// groups sitting exactly at zero so truncated groups stay put.
inline void add_penalty_subgrad(const DeepInModel& model, const PenaltyConfig& cfg,
                                Matrix& grad_b, NetGrad& grad_net) {
  const Matrix& b = model.rep.b;
  if (cfg.lambda1 > 0.0) {
    for (std::size_t k = 0; k < b.rows; ++k) {
      const double nrm = row_norm(b, k);
      if (nrm == 0.0) continue;
      const double f = cfg.lambda1 / nrm;
      for (std::size_t j = 0; j < b.cols; ++j) grad_b(k, j) += f * b(k, j);
    }
  }
  if (cfg.lambda2 > 0.0) {
    for (std::size_t j = 0; j < b.cols; ++j) {
      const double nrm = col_norm(b, j);
      if (nrm == 0.0) continue;
      const double f = cfg.lambda2 / nrm;
      for (std::size_t k = 0; k < b.rows; ++k) grad_b(k, j) += f * b(k, j);
    }
  }
  for (std::size_t l = 0; l < model.net.layers.size(); ++l) {
    const Layer& layer = model.net.layers[l];
    Layer& g = grad_net.layers[l];
    if (cfg.lambda3 > 0.0 && depth_penalized(model.net, l)) {
      double w2 = 0.0;
      for (std::size_t i = 0; i < layer.w.rows; ++i)
        for (std::size_t j = 0; j < layer.w.cols; ++j) {
          const double d = layer.w(i, j) - (i == j ? 1.0 : 0.0);
          w2 += d * d;
        }
      const double wn = std::sqrt(w2);
      if (wn > 0.0) {
        const double f = cfg.lambda3 / wn;
        for (std::size_t i = 0; i < layer.w.rows; ++i)
          for (std::size_t j = 0; j < layer.w.cols; ++j)
            g.w(i, j) += f * (layer.w(i, j) - (i == j ? 1.0 : 0.0));
      }
      const double an = norm2(layer.a);
      if (an > 0.0) {
        const double f = cfg.lambda3 / an;
        for (std::size_t i = 0; i < layer.a.size(); ++i) g.a[i] += f * layer.a[i];
      }
    }
    if (cfg.lambda4 > 0.0) {
      for (std::size_t i = 0; i < layer.w.data.size(); ++i)
        g.w.data[i] += cfg.lambda4 * sign0(layer.w.data[i]);
      for (std::size_t i = 0; i < layer.a.size(); ++i)
        g.a[i] += cfg.lambda4 * sign0(layer.a[i]);
    }
  }
}

}  // namespace detail

/// Mean loss over the batch plus penalty, with subgradients in B and theta.
/// Rows are reduced in index order so single-threaded runs are bit-stable.
inline ObjectiveResult objective_and_subgrad(const DeepInModel& model, const Matrix& x,
                                             const Vec& y, const PenaltyConfig& cfg) {
  if (x.rows == 0) throw contract_violation("objective_and_subgrad: empty batch");
  if (x.rows != y.size()) throw contract_violation("objective_and_subgrad: X/y length mismatch");
  if (x.cols != model.rep.b.cols)
    throw contract_violation("objective_and_subgrad: covariate dimension mismatch");

  ObjectiveResult res;
  res.grad_b = Matrix(model.rep.b.rows, model.rep.b.cols);
  NetGrad grad_net = NetGrad::zeros_like(model.net);
  const double inv_n = 1.0 / static_cast<double>(x.rows);

  Vec xi(x.cols);
  for (std::size_t i = 0; i < x.rows; ++i) {
    for (std::size_t j = 0; j < x.cols; ++j) xi[j] = x(i, j);
    const Vec z = matvec(model.rep.b, xi);
    const ForwardTape tape = forward(model.net, z);
    const double u = tape.output[0];
    if (!std::isfinite(u))
      throw numerical_failure("objective_and_subgrad: non-finite prediction at row " +
                              std::to_string(i));
    const LossTriple lt = loss(model.task, u, y[i]);
    res.data_loss += lt.value * inv_n;
    const Vec grad_in = backward(model.net, tape, lt.d1 * inv_n, grad_net);
    for (std::size_t k = 0; k < res.grad_b.rows; ++k) {
      const double gk = grad_in[k];
      if (gk == 0.0) continue;
      for (std::size_t j = 0; j < res.grad_b.cols; ++j) res.grad_b(k, j) += gk * xi[j];
    }
  }
  if (!std::isfinite(res.data_loss))
    throw numerical_failure("objective_and_subgrad: non-finite batch loss");

  detail::add_penalty_subgrad(model, cfg, res.grad_b, grad_net);
  res.grad_theta = flatten(grad_net);
  res.objective = res.data_loss + penalty(model, cfg).total;
  return res;
}

}  // namespace deepin
