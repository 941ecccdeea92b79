#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "deepin/linalg.hpp"
#include "deepin/model.hpp"
#include "deepin/rng.hpp"

namespace deepin {

struct StructureTriplet {
  std::size_t dims = 0;    // active representations (nonzero rows of B)
  std::size_t n_vars = 0;  // selected variables (nonzero columns of B)
  std::size_t nnz = 0;     // nonzero network weights

  bool operator==(const StructureTriplet&) const = default;
};

/// Exact counts; masked groups are exactly zero so value counting agrees
/// with the masks.
inline StructureTriplet active_structure(const DeepInModel& model) {
  StructureTriplet s;
  const Matrix& b = model.rep.b;
  for (std::size_t k = 0; k < b.rows; ++k) s.dims += (row_norm(b, k) != 0.0);
  for (std::size_t j = 0; j < b.cols; ++j) s.n_vars += (col_norm(b, j) != 0.0);
  s.nnz = structure(model.net).nnz;
  return s;
}

/// Hard truncation: rows of B with small norm are zeroed and masked, then
/// columns of the updated matrix, then small network weights are zeroed
/// (weights may regrow; masked rows/columns stay zero).
inline void truncate(DeepInModel& model, double tau1, double tau2, double tau3) {
  if (tau1 < 0.0 || tau2 < 0.0 || tau3 < 0.0)
    throw contract_violation("truncate: thresholds must be >= 0");
  Matrix& b = model.rep.b;
  for (std::size_t k = 0; k < b.rows; ++k) {
    if (row_norm(b, k) <= tau1) {
      for (std::size_t j = 0; j < b.cols; ++j) b(k, j) = 0.0;
      model.rep.active_rows[k] = 0;
    }
  }
  for (std::size_t j = 0; j < b.cols; ++j) {
    if (col_norm(b, j) <= tau2) {
      for (std::size_t k = 0; k < b.rows; ++k) b(k, j) = 0.0;
      model.rep.active_cols[j] = 0;
    }
  }
  for (Layer& layer : model.net.layers) {
    for (double& x : layer.w.data)
      if (std::fabs(x) <= tau3) x = 0.0;
    for (double& x : layer.a)
      if (std::fabs(x) <= tau3) x = 0.0;
  }
}

struct TrainOptions {
  std::size_t epochs = 200;
  std::size_t batch_size = 32;
  double learning_rate = 0.01;
  double momentum = 0.9;
  std::size_t truncation_period = 5;  // epochs between truncations after warmup
  // During warmup the lambdas are held at zero and no truncation runs, so the
  // data term wires the network before whole groups are penalized away.
  std::size_t warmup_epochs = 10;
  bool penalty_warmup = true;
  bool truncation_enabled = true;
  // Relative thresholds recompute tau at each truncation event from the
  // current parameter scale; absolute mode uses PenaltyConfig's tau values.
  bool relative_thresholds = true;
  double rel_tau_b = 0.01;       // times mean active-row l2 norm
  double rel_tau_theta = 0.001;  // times mean |theta|
  bool freeze_b = false;         // vanilla-DNN mode: B never updates
  double b_lr_scale = 1.0;       // relative learning rate for B updates
  double grad_clip = 10.0;       // global subgradient norm cap; 0 disables
  std::uint64_t seed = 0;
  double validation_fraction = 0.2;

  void validate() const {
    if (batch_size < 1) throw contract_violation("TrainOptions: batch_size must be >= 1");
    if (truncation_period < 1)
      throw contract_violation("TrainOptions: truncation_period must be >= 1");
    if (!(validation_fraction > 0.0 && validation_fraction < 1.0))
      throw contract_violation("TrainOptions: validation_fraction must lie in (0,1)");
  }
};

struct EpochStats {
  double objective = 0.0;
  double data_loss = 0.0;
  PenaltyBreakdown penalty;
  StructureTriplet structure;
};

struct TrainHistory {
  std::vector<EpochStats> epochs;
};

/// Training blew up; carries the history up to the last finite epoch.
class training_diverged : public numerical_failure {
 public:
  training_diverged(const std::string& what, TrainHistory history)
      : numerical_failure(what), history_(std::move(history)) {}
  const TrainHistory& history() const { return history_; }

 private:
  TrainHistory history_;
};

struct TrainResult {
  DeepInModel model;
  TrainHistory history;
};

namespace detail {

inline double full_objective(const DeepInModel& model, const Matrix& x, const Vec& y,
                             const PenaltyConfig& cfg, double* data_loss_out) {
  double data = 0.0;
  Vec xi(x.cols);
  for (std::size_t i = 0; i < x.rows; ++i) {
    for (std::size_t j = 0; j < x.cols; ++j) xi[j] = x(i, j);
    data += loss(model.task, predict(model, xi), y[i]).value;
  }
  data /= static_cast<double>(x.rows);
  if (data_loss_out) *data_loss_out = data;
  return data + penalty(model, cfg).total;
}

inline void zero_masked(RepMatrix& rep, Matrix& m) {
  for (std::size_t k = 0; k < m.rows; ++k)
    if (!rep.active_rows[k])
      for (std::size_t j = 0; j < m.cols; ++j) m(k, j) = 0.0;
  for (std::size_t j = 0; j < m.cols; ++j)
    if (!rep.active_cols[j])
      for (std::size_t k = 0; k < m.rows; ++k) m(k, j) = 0.0;
}

inline std::pair<double, double> relative_taus(const DeepInModel& model,
                                               const TrainOptions& opts) {
  const Matrix& b = model.rep.b;
  double row_sum = 0.0;
  std::size_t row_cnt = 0;
  for (std::size_t k = 0; k < b.rows; ++k) {
    const double nrm = row_norm(b, k);
    if (nrm > 0.0) {
      row_sum += nrm;
      ++row_cnt;
    }
  }
  const Vec theta = flatten(model.net);
  double abs_sum = 0.0;
  for (double t : theta) abs_sum += std::fabs(t);
  const double tau_b = row_cnt ? opts.rel_tau_b * row_sum / static_cast<double>(row_cnt) : 0.0;
  const double tau_t =
      theta.empty() ? 0.0 : opts.rel_tau_theta * abs_sum / static_cast<double>(theta.size());
  return {tau_b, tau_t};
}

}  // namespace detail

/// Mini-batch subgradient descent with periodic truncation (the training
/// loop of the paper-style estimator). Deterministic for a fixed seed in
/// this single-threaded implementation. Truncation runs every
/// truncation_period epochs after warmup and once more after the final
/// epoch, so reported structure reflects truncated parameters.
inline TrainResult train(DeepInModel model, const Matrix& x, const Vec& y,
                         const PenaltyConfig& cfg, const TrainOptions& opts) {
  cfg.validate();
  opts.validate();
  if (x.rows == 0) throw contract_violation("train: empty dataset");
  if (x.rows != y.size()) throw contract_violation("train: X/y length mismatch");
  if (x.cols != model.rep.b.cols) throw contract_violation("train: covariate dim mismatch");

  TrainHistory history;
  if (opts.epochs == 0) return {std::move(model), std::move(history)};

  Rng rng(opts.seed);
  std::vector<std::size_t> order(x.rows);
  std::iota(order.begin(), order.end(), 0);

  Matrix vel_b(model.rep.b.rows, model.rep.b.cols);
  Vec vel_theta(structure(model.net).size, 0.0);
  const std::size_t decay_every = (opts.epochs + 3) / 4;

  const auto run_truncation = [&](void) {
    double tau1 = cfg.tau1, tau2 = cfg.tau2, tau3 = cfg.tau3;
    if (opts.relative_thresholds) {
      const auto [tb, tt] = detail::relative_taus(model, opts);
      tau1 = tau2 = tb;
      tau3 = tt;
    }
    truncate(model, tau1, tau2, tau3);
    detail::zero_masked(model.rep, vel_b);
  };

  for (std::size_t epoch = 1; epoch <= opts.epochs; ++epoch) {
    rng.shuffle(order);
    const double lr =
        opts.learning_rate * std::pow(0.5, static_cast<double>((epoch - 1) / decay_every));
    const bool warm = opts.penalty_warmup && epoch <= opts.warmup_epochs;
    static const PenaltyConfig kZeroPenalty{};
    const PenaltyConfig& step_cfg = warm ? kZeroPenalty : cfg;

    for (std::size_t start = 0; start < x.rows; start += opts.batch_size) {
      const std::size_t bsz = std::min(opts.batch_size, x.rows - start);
      Matrix xb(bsz, x.cols);
      Vec yb(bsz);
      for (std::size_t r = 0; r < bsz; ++r) {
        const std::size_t src = order[start + r];
        for (std::size_t j = 0; j < x.cols; ++j) xb(r, j) = x(src, j);
        yb[r] = y[src];
      }
      ObjectiveResult res = objective_and_subgrad(model, xb, yb, step_cfg);

      if (opts.grad_clip > 0.0) {
        double sq = 0.0;
        if (!opts.freeze_b)
          for (double g : res.grad_b.data) sq += g * g;
        for (double g : res.grad_theta) sq += g * g;
        const double nrm = std::sqrt(sq);
        if (nrm > opts.grad_clip) {
          const double f = opts.grad_clip / nrm;
          for (double& g : res.grad_b.data) g *= f;
          for (double& g : res.grad_theta) g *= f;
        }
      }

      if (!opts.freeze_b) {
        detail::zero_masked(model.rep, res.grad_b);
        const double lr_b = lr * opts.b_lr_scale;
        for (std::size_t i = 0; i < vel_b.data.size(); ++i) {
          vel_b.data[i] = opts.momentum * vel_b.data[i] + res.grad_b.data[i];
          model.rep.b.data[i] -= lr_b * vel_b.data[i];
        }
        detail::zero_masked(model.rep, model.rep.b);
      }
      Vec theta = flatten(model.net);
      for (std::size_t i = 0; i < theta.size(); ++i) {
        vel_theta[i] = opts.momentum * vel_theta[i] + res.grad_theta[i];
        theta[i] -= lr * vel_theta[i];
      }
      unflatten(model.net, theta);
    }

    const bool trunc_due = opts.truncation_enabled && epoch > opts.warmup_epochs &&
                           ((epoch - opts.warmup_epochs) % opts.truncation_period == 0 ||
                            epoch == opts.epochs);
    if (trunc_due) run_truncation();

    EpochStats stats;
    stats.objective = detail::full_objective(model, x, y, cfg, &stats.data_loss);
    stats.penalty = penalty(model, cfg);
    stats.structure = active_structure(model);
    if (!std::isfinite(stats.objective) || stats.objective > 1e10)
      throw training_diverged("train: objective diverged at epoch " + std::to_string(epoch),
                              std::move(history));
    history.epochs.push_back(stats);
  }
  return {std::move(model), std::move(history)};
}

struct NormalizeResult {
  Matrix b;
  Vec row_scales;                       // original l2 norm per input row (1 for zero rows)
  Vec sign_flips;                       // +1 / -1 per input row
  std::vector<std::size_t> permutation; // permutation[p] = input row now at position p
};

/// Row normalization making B identifiable: each nonzero row gets unit l2
/// norm with its first nonzero entry positive, and nonzero rows are ordered
/// by descending original norm (stable, so the map is idempotent). Singular
/// values are invariant to these row operations up to sign, so a generic
/// matrix keeps positive strictly decreasing singular values.
inline NormalizeResult normalize(const Matrix& b) {
  NormalizeResult out;
  out.row_scales.assign(b.rows, 1.0);
  out.sign_flips.assign(b.rows, 1.0);
  std::vector<std::size_t> active;
  for (std::size_t k = 0; k < b.rows; ++k) {
    double nrm = row_norm(b, k);
    if (nrm == 0.0) continue;
    // snap near-unit rows to scale 1 so re-normalizing is exactly idempotent
    if (std::fabs(nrm - 1.0) <= 1e-12) nrm = 1.0;
    active.push_back(k);
    out.row_scales[k] = nrm;
    for (std::size_t j = 0; j < b.cols; ++j) {
      if (b(k, j) != 0.0) {
        out.sign_flips[k] = b(k, j) > 0.0 ? 1.0 : -1.0;
        break;
      }
    }
  }
  std::vector<std::size_t> sorted = active;
  std::stable_sort(sorted.begin(), sorted.end(), [&](std::size_t i, std::size_t j) {
    return out.row_scales[i] > out.row_scales[j];
  });

  out.permutation.resize(b.rows);
  std::iota(out.permutation.begin(), out.permutation.end(), 0);
  for (std::size_t i = 0; i < active.size(); ++i) out.permutation[active[i]] = sorted[i];

  out.b = Matrix(b.rows, b.cols);
  for (std::size_t p = 0; p < b.rows; ++p) {
    const std::size_t src = out.permutation[p];
    if (row_norm(b, src) == 0.0) continue;
    const double f = out.sign_flips[src] / out.row_scales[src];
    for (std::size_t j = 0; j < b.cols; ++j) out.b(p, j) = f * b(src, j);
  }
  return out;
}

/// Normalize the model's B and rescale the first network layer so that
/// predictions are unchanged: z_src = scale * flip * z_new implies
/// W0_new[:,p] = scale_src * flip_src * W0[:,src].
inline NormalizeResult normalize_model(DeepInModel& model) {
  for (std::size_t k = 0; k < model.rep.b.rows; ++k)
    if (model.rep.active_rows[k] && row_norm(model.rep.b, k) == 0.0)
      throw contract_violation("normalize_model: active row " + std::to_string(k) + " is zero");

  NormalizeResult res = normalize(model.rep.b);
  Matrix w0 = model.net.layers.front().w;
  std::vector<std::uint8_t> rows = model.rep.active_rows;
  for (std::size_t p = 0; p < res.b.rows; ++p) {
    const std::size_t src = res.permutation[p];
    model.rep.active_rows[p] = rows[src];
    if (row_norm(res.b, p) == 0.0) continue;
    const double f = res.row_scales[src] * res.sign_flips[src];
    for (std::size_t i = 0; i < w0.rows; ++i)
      w0(i, p) = f * model.net.layers.front().w(i, src);
  }
  model.rep.b = res.b;
  model.net.layers.front().w = w0;
  return res;
}

/// One dimension of the sequential lambda grid search.
struct TuneGrids {
  Vec lambda1;
  Vec lambda2;
  Vec lambda3;
  Vec lambda4;
};

class tuning_failed : public numerical_failure {
 public:
  explicit tuning_failed(const std::string& what) : numerical_failure(what) {}
};

/// Sequential grid search: lambda1 first with the rest at zero, then
/// lambda2, lambda3, lambda4, each with earlier winners fixed. Winners
/// minimize validation MSE (regression) or maximize validation accuracy
/// (classification); ties go to the larger lambda, preferring sparser fits.
template <typename ModelFactory>
PenaltyConfig tune(ModelFactory&& make_fresh_model, const Matrix& x, const Vec& y, Task task,
                   const TuneGrids& grids, const TrainOptions& opts) {
  opts.validate();
  if (x.rows != y.size()) throw contract_violation("tune: X/y length mismatch");
  for (const Vec* g : {&grids.lambda1, &grids.lambda2, &grids.lambda3, &grids.lambda4})
    if (g->empty()) throw contract_violation("tune: every grid must be non-empty");

  // fixed validation split
  Rng rng(opts.seed ^ 0x5eedu);
  std::vector<std::size_t> order(x.rows);
  std::iota(order.begin(), order.end(), 0);
  rng.shuffle(order);
  const std::size_t n_val =
      std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(
                                   opts.validation_fraction * static_cast<double>(x.rows))));
  const std::size_t n_tr = x.rows - n_val;
  if (n_tr == 0) throw contract_violation("tune: no training rows after validation split");
  Matrix xtr(n_tr, x.cols), xval(n_val, x.cols);
  Vec ytr(n_tr), yval(n_val);
  for (std::size_t i = 0; i < n_tr; ++i) {
    for (std::size_t j = 0; j < x.cols; ++j) xtr(i, j) = x(order[i], j);
    ytr[i] = y[order[i]];
  }
  for (std::size_t i = 0; i < n_val; ++i) {
    for (std::size_t j = 0; j < x.cols; ++j) xval(i, j) = x(order[n_tr + i], j);
    yval[i] = y[order[n_tr + i]];
  }

  const auto val_score = [&](const DeepInModel& m) {
    // lower is better for both tasks
    double s = 0.0;
    Vec xi(xval.cols);
    for (std::size_t i = 0; i < xval.rows; ++i) {
      for (std::size_t j = 0; j < xval.cols; ++j) xi[j] = xval(i, j);
      const double u = predict(m, xi);
      if (task == Task::regression) {
        s += (u - yval[i]) * (u - yval[i]);
      } else {
        const double label = u > 0.0 ? 1.0 : 0.0;
        s += (label != yval[i]);
      }
    }
    return s / static_cast<double>(xval.rows);
  };

  PenaltyConfig chosen;
  std::vector<std::string> diverged;
  for (int pass = 0; pass < 4; ++pass) {
    Vec grid = (pass == 0)   ? grids.lambda1
               : (pass == 1) ? grids.lambda2
               : (pass == 2) ? grids.lambda3
                             : grids.lambda4;
    std::sort(grid.begin(), grid.end());
    double best_score = 0.0;
    double best_lambda = 0.0;
    bool any = false;
    for (double lam : grid) {
      PenaltyConfig cand = chosen;
      (pass == 0 ? cand.lambda1
       : pass == 1 ? cand.lambda2
       : pass == 2 ? cand.lambda3
                   : cand.lambda4) = lam;
      try {
        TrainResult r = train(make_fresh_model(opts.seed), xtr, ytr, cand, opts);
        const double s = val_score(r.model);
        // ascending grid + non-strict comparison: ties go to the larger lambda
        if (!any || s <= best_score) {
          any = true;
          best_score = s;
          best_lambda = lam;
        }
      } catch (const training_diverged&) {
        diverged.push_back("pass " + std::to_string(pass + 1) + " lambda=" + std::to_string(lam));
      }
    }
    if (!any) {
      std::string msg = "tune: every candidate diverged in pass " + std::to_string(pass + 1) + ":";
      for (const auto& c : diverged) msg += " [" + c + "]";
      throw tuning_failed(msg);
    }
    (pass == 0 ? chosen.lambda1
     : pass == 1 ? chosen.lambda2
     : pass == 2 ? chosen.lambda3
                 : chosen.lambda4) = best_lambda;
  }
  return chosen;
}

}  // namespace deepin
