#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "deepin/model.hpp"

namespace deepin {

struct MetricsReport {
  std::optional<double> pe;   // sum (yhat - y)^2 / sum y^2
  std::optional<double> mse;  // mean (yhat - f0)^2, needs the true signal
  std::optional<double> acc;
  std::optional<double> auc;
  std::optional<double> tpr;
  std::optional<double> fpr;
  std::size_t dims = 0;
  std::size_t n_vars = 0;
  std::optional<double> prop_zero;  // 1 - nnz(theta) / network size
  std::vector<std::string> diagnostics;
};

/// AUC with the strict-inequality pair count: ties contribute zero. Sorting
/// with tie groups reproduces the brute-force double loop exactly.
inline std::optional<double> auc_score(const Vec& scores, const Vec& labels,
                                       std::string* diagnostic = nullptr) {
  std::size_t n_pos = 0, n_neg = 0;
  for (double y : labels) (y == 1.0 ? n_pos : n_neg) += 1;
  if (n_pos == 0 || n_neg == 0) {
    if (diagnostic) *diagnostic = "auc: needs both classes present";
    return std::nullopt;
  }
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  unsigned long long hits = 0;
  std::size_t neg_below = 0;
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    std::size_t pos_in_group = 0, neg_in_group = 0;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) {
      (labels[order[j]] == 1.0 ? pos_in_group : neg_in_group) += 1;
      ++j;
    }
    hits += static_cast<unsigned long long>(pos_in_group) * neg_below;
    neg_below += neg_in_group;
    i = j;
  }
  return static_cast<double>(hits) / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

/// Regression: PE and (with f0) MSE. Classification: predictions are
/// probabilities; ACC thresholds at 1/2 and AUC ranks by probability.
inline MetricsReport prediction_metrics(const Vec& yhat, const Vec& y, const Vec* f0,
                                        Task task) {
  if (yhat.size() != y.size())
    throw contract_violation("prediction_metrics: length mismatch");
  if (f0 && f0->size() != y.size())
    throw contract_violation("prediction_metrics: f0 length mismatch");
  MetricsReport r;
  const double n = static_cast<double>(y.size());
  if (task == Task::regression) {
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) {
      num += (yhat[i] - y[i]) * (yhat[i] - y[i]);
      den += y[i] * y[i];
    }
    if (den > 0.0) {
      r.pe = num / den;
    } else {
      r.diagnostics.push_back("pe: response has zero sum of squares");
    }
    if (f0) {
      double s = 0.0;
      for (std::size_t i = 0; i < y.size(); ++i) s += (yhat[i] - (*f0)[i]) * (yhat[i] - (*f0)[i]);
      r.mse = s / n;
    }
  } else {
    double correct = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) {
      const double label = yhat[i] > 0.5 ? 1.0 : 0.0;
      correct += (label == y[i]);
    }
    r.acc = correct / n;
    std::string diag;
    r.auc = auc_score(yhat, y, &diag);
    if (!r.auc) r.diagnostics.push_back(diag);
  }
  return r;
}

/// TPR = |S_hat ∩ S*| / |S*| and FPR = |S_hat ∩ S*^c| / |S*^c|.
inline std::pair<double, double> selection_metrics(const std::vector<std::size_t>& selected,
                                                   const std::vector<std::size_t>& truth,
                                                   std::size_t d) {
  if (truth.empty()) throw contract_violation("selection_metrics: S* must be non-empty");
  if (truth.size() >= d)
    throw contract_violation("selection_metrics: complement of S* must be non-empty");
  std::vector<char> is_true(d, 0), is_sel(d, 0);
  for (std::size_t j : truth) {
    if (j >= d) throw contract_violation("selection_metrics: S* index out of range");
    is_true[j] = 1;
  }
  for (std::size_t j : selected) {
    if (j >= d) throw contract_violation("selection_metrics: selected index out of range");
    is_sel[j] = 1;
  }
  std::size_t tp = 0, fp = 0;
  for (std::size_t j = 0; j < d; ++j) {
    if (is_sel[j] && is_true[j]) ++tp;
    if (is_sel[j] && !is_true[j]) ++fp;
  }
  const double tpr = static_cast<double>(tp) / static_cast<double>(truth.size());
  const double fpr = static_cast<double>(fp) / static_cast<double>(d - truth.size());
  return {tpr, fpr};
}

}  // namespace deepin
