#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "deepin/linalg.hpp"
#include "deepin/model.hpp"
#include "deepin/rng.hpp"

namespace deepin {

enum class CorrelationScheme { equicorrelated, ar1 };

/// Gaussian design with rows i.i.d. N(0, Sigma_rho), drawn via the Cholesky
/// factor. Equicorrelated: Sigma = (1-rho) I + rho 11^T; AR(1): rho^|i-j|.
inline Matrix gen_x(std::size_t n, std::size_t d, double rho, CorrelationScheme scheme,
                    Rng& rng) {
  if (!(rho >= 0.0 && rho < 1.0)) throw contract_violation("gen_x: rho must lie in [0,1)");
  Matrix sigma(d, d);
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = 0; j < d; ++j) {
      if (scheme == CorrelationScheme::equicorrelated)
        sigma(i, j) = i == j ? 1.0 : rho;
      else
        sigma(i, j) = std::pow(rho, std::fabs(static_cast<double>(i) - static_cast<double>(j)));
    }
  const Matrix chol = cholesky(sigma);
  Matrix x(n, d);
  Vec z(d);
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t j = 0; j < d; ++j) z[j] = rng.normal();
    for (std::size_t i = 0; i < d; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j <= i; ++j) s += chol(i, j) * z[j];
      x(r, i) = s;
    }
  }
  return x;
}

struct SyntheticSpec {
  int setting = 1;  // 1 additive, 2 interactive, 3 network teacher, 4 classification
  std::size_t n = 2000;
  std::size_t d = 200;
  double rho = 0.0;
  std::size_t s0 = 10;  // informative variables
  std::size_t d0 = 5;   // true representation count
  double sigma = 1.0 / std::sqrt(3.0);  // noise sd; default gives SNR 3 on unit-variance signal
  std::uint64_t seed = 0;
  CorrelationScheme scheme = CorrelationScheme::equicorrelated;

  void validate() const {
    if (setting < 1 || setting > 4) throw contract_violation("SyntheticSpec: setting must be 1-4");
    if (s0 > d) throw contract_violation("SyntheticSpec: s0 must be <= d");
    if (d0 > s0) throw contract_violation("SyntheticSpec: d0 must be <= s0");
    if (d0 == 0) throw contract_violation("SyntheticSpec: d0 must be >= 1");
    if (!(rho >= 0.0 && rho < 1.0)) throw contract_violation("SyntheticSpec: rho must lie in [0,1)");
    if (!(sigma >= 0.0)) throw contract_violation("SyntheticSpec: sigma must be >= 0");
  }

  Task task() const { return setting == 4 ? Task::binary_classification : Task::regression; }
};

struct DatasetTruth {
  std::vector<std::size_t> informative;  // S*, zero-based column indices
  Matrix b0;                             // d0 x d, nonzero only on S* columns
  Vec f0;                                // standardized noiseless signal
};

struct LabeledDataset {
  Matrix x;
  Vec y;
  DatasetTruth truth;
  Task task = Task::regression;
};

namespace detail {

inline double additive_link(const Vec& z) {
  double s = 0.0;
  for (std::size_t k = 0; k < z.size(); ++k) {
    const double t = z[k];
    switch (k % 5) {
      case 0: s += t; break;
      case 1: s += t * t; break;
      case 2: s += std::sin(3.141592653589793 * t); break;
      case 3: s += std::tanh(t); break;
      default: s += std::fabs(t); break;
    }
  }
  return s;
}

inline double interactive_link(const Vec& z) {
  double s = additive_link(z);
  for (std::size_t k = 0; k < z.size(); ++k)
    for (std::size_t l = k + 1; l < z.size(); ++l) s += z[k] * z[l];
  return s;
}

/// Random d0 x s0 block with orthonormal rows (Gram-Schmidt on normal draws).
inline Matrix orthonormal_rows(std::size_t d0, std::size_t s0, Rng& rng) {
  Matrix b(d0, s0);
  for (std::size_t i = 0; i < d0; ++i) {
    for (int attempt = 0; attempt < 64; ++attempt) {
      Vec v(s0);
      for (double& e : v) e = rng.normal();
      for (std::size_t k = 0; k < i; ++k) {
        double proj = 0.0;
        for (std::size_t j = 0; j < s0; ++j) proj += b(k, j) * v[j];
        for (std::size_t j = 0; j < s0; ++j) v[j] -= proj * b(k, j);
      }
      const double nrm = norm2(v);
      if (nrm > 1e-8) {
        for (std::size_t j = 0; j < s0; ++j) b(i, j) = v[j] / nrm;
        break;
      }
    }
  }
  return b;
}

}  // namespace detail

/// Synthetic benchmark generator. Signals: Setting 1 is additive in the
/// representations, Setting 2 adds all pairwise interactions, Setting 3 is a
/// frozen random ReQU teacher network, Setting 4 draws Bernoulli labels from
/// a Setting-2 style logit. The noiseless signal is standardized to sample
/// mean zero and unit variance before noise is added.
inline LabeledDataset gen_setting(const SyntheticSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);

  LabeledDataset ds;
  ds.task = spec.task();
  ds.truth.informative.resize(spec.s0);
  for (std::size_t j = 0; j < spec.s0; ++j) ds.truth.informative[j] = j;

  const Matrix block = detail::orthonormal_rows(spec.d0, spec.s0, rng);
  ds.truth.b0 = Matrix(spec.d0, spec.d);
  for (std::size_t i = 0; i < spec.d0; ++i)
    for (std::size_t j = 0; j < spec.s0; ++j) ds.truth.b0(i, j) = block(i, j);

  RepuNetwork teacher;
  if (spec.setting == 3) {
    teacher = make_network({spec.d0, 16, 8, 1});
    for (Layer& l : teacher.layers) {
      const double bound = std::sqrt(6.0 / static_cast<double>(l.w.rows + l.w.cols));
      for (double& w : l.w.data) w = rng.uniform(-bound, bound);
      for (double& a : l.a) a = rng.uniform(-0.1, 0.1);
    }
  }

  ds.x = gen_x(spec.n, spec.d, spec.rho, spec.scheme, rng);

  Vec raw(spec.n, 0.0);
  Vec z(spec.d0);
  for (std::size_t i = 0; i < spec.n; ++i) {
    for (std::size_t k = 0; k < spec.d0; ++k) {
      double s = 0.0;
      for (std::size_t j = 0; j < spec.s0; ++j) s += ds.truth.b0(k, j) * ds.x(i, j);
      z[k] = s;
    }
    switch (spec.setting) {
      case 1: raw[i] = detail::additive_link(z); break;
      case 2: raw[i] = detail::interactive_link(z); break;
      case 3: raw[i] = forward(teacher, z).output[0]; break;
      default: raw[i] = detail::interactive_link(z); break;
    }
  }

  double mean = 0.0;
  for (double v : raw) mean += v;
  mean /= static_cast<double>(spec.n);
  double var = 0.0;
  for (double v : raw) var += (v - mean) * (v - mean);
  var /= static_cast<double>(spec.n);
  const double sd = std::sqrt(var);
  ds.truth.f0.resize(spec.n);
  for (std::size_t i = 0; i < spec.n; ++i)
    ds.truth.f0[i] = sd > 1e-12 ? (raw[i] - mean) / sd : raw[i];

  ds.y.resize(spec.n);
  if (ds.task == Task::regression) {
    for (std::size_t i = 0; i < spec.n; ++i) ds.y[i] = ds.truth.f0[i] + spec.sigma * rng.normal();
  } else {
    for (std::size_t i = 0; i < spec.n; ++i)
      ds.y[i] = rng.uniform01() < sigmoid(ds.truth.f0[i]) ? 1.0 : 0.0;
  }
  return ds;
}

}  // namespace deepin
