#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "deepin/matrix.hpp"
#include "deepin/rng.hpp"

namespace deepin {

/// Rectified power unit: max(x,0)^p. Continuously differentiable for p >= 2.
inline double repu(double x, int p) { return x > 0.0 ? std::pow(x, p) : 0.0; }

inline double repu_deriv(double x, int p) {
  return x > 0.0 ? static_cast<double>(p) * std::pow(x, p - 1) : 0.0;
}

struct Layer {
  Matrix w;  // out_dim x in_dim
  Vec a;     // out_dim
};

struct NetworkStructure {
  std::size_t depth = 0;    // hidden layers
  std::size_t width = 0;    // max hidden dim
  std::size_t size = 0;     // total parameter count, sum d_{l+1} (d_l + 1)
  std::size_t neurons = 0;  // sum of hidden dims
  std::size_t nnz = 0;      // parameters that are exactly nonzero
};

/// Feed-forward RePU network. Hidden layers apply the activation to the
/// affine output; the final layer is affine only. Pre-activations are clamped
/// to [-kPreactClamp, kPreactClamp] before exponentiation in both forward and
/// backward passes so p >= 2 powers cannot overflow during early training.
struct RepuNetwork {
  std::vector<Layer> layers;
  int power = 2;

  static constexpr double kPreactClamp = 30.0;

  std::size_t input_dim() const { return layers.empty() ? 0 : layers.front().w.cols; }
  std::size_t output_dim() const { return layers.empty() ? 0 : layers.back().w.rows; }
  std::size_t depth() const { return layers.empty() ? 0 : layers.size() - 1; }

  double activate(double h) const {
    if (h > kPreactClamp) h = kPreactClamp;
    return repu(h, power);
  }

  /// Derivative of the clamped activation; zero on the clamped flat.
  double activate_deriv(double h) const {
    if (h >= kPreactClamp) return 0.0;
    return repu_deriv(h, power);
  }
};

/// Network with the given layer widths: dims = {input, hidden..., output}.
inline RepuNetwork make_network(const std::vector<std::size_t>& dims, int power = 2) {
  if (dims.size() < 2) throw contract_violation("make_network: need input and output dims");
  if (power < 2) throw contract_violation("make_network: activation power must be >= 2");
  RepuNetwork net;
  net.power = power;
  for (std::size_t l = 0; l + 1 < dims.size(); ++l)
    net.layers.push_back({Matrix(dims[l + 1], dims[l]), Vec(dims[l + 1], 0.0)});
  return net;
}

/// Glorot-uniform at half scale everywhere except layers l >= 1 with square
/// weights, which start at the identity so the depth penalty sees a shallow
/// model at initialization.
inline void init_params(RepuNetwork& net, Rng& rng) {
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    Layer& layer = net.layers[l];
    std::fill(layer.a.begin(), layer.a.end(), 0.0);
    if (l >= 1 && layer.w.rows == layer.w.cols) {
      layer.w = Matrix::identity(layer.w.rows);
      continue;
    }
    const double bound =
        0.5 * std::sqrt(6.0 / static_cast<double>(layer.w.rows + layer.w.cols));
    for (double& x : layer.w.data) x = rng.uniform(-bound, bound);
  }
}

struct ForwardTape {
  Vec input;
  std::vector<Vec> preacts;      // one per layer
  std::vector<Vec> activations;  // activations[l] = input to layer l
  Vec output;
};

inline ForwardTape forward(const RepuNetwork& net, const Vec& z) {
  if (z.size() != net.input_dim()) throw contract_violation("forward: input dimension mismatch");
  ForwardTape tape;
  tape.input = z;
  Vec cur = z;
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    tape.activations.push_back(cur);
    Vec h = matvec(net.layers[l].w, cur);
    for (std::size_t i = 0; i < h.size(); ++i) h[i] += net.layers[l].a[i];
    tape.preacts.push_back(h);
    if (l + 1 == net.layers.size()) {
      cur = h;  // output layer is affine
    } else {
      for (double& x : h) x = net.activate(x);
      cur = std::move(h);
    }
  }
  tape.output = cur;
  return tape;
}

/// Gradient accumulator mirroring the layer layout.
struct NetGrad {
  std::vector<Layer> layers;

  static NetGrad zeros_like(const RepuNetwork& net) {
    NetGrad g;
    for (const Layer& l : net.layers)
      g.layers.push_back({Matrix(l.w.rows, l.w.cols), Vec(l.a.size(), 0.0)});
    return g;
  }
};

/// Backpropagate an upstream gradient through the tape. Returns the gradient
/// with respect to the network input; parameter gradients accumulate into g.
inline Vec backward(const RepuNetwork& net, const ForwardTape& tape, const Vec& upstream,
                    NetGrad& g) {
  if (tape.preacts.size() != net.layers.size())
    throw contract_violation("backward: tape does not match network");
  if (upstream.size() != net.output_dim())
    throw contract_violation("backward: upstream dimension mismatch");
  Vec delta = upstream;  // gradient w.r.t. layer output (post-activation)
  for (std::size_t li = net.layers.size(); li-- > 0;) {
    const Layer& layer = net.layers[li];
    Vec dpre = delta;
    if (li + 1 != net.layers.size()) {
      for (std::size_t i = 0; i < dpre.size(); ++i)
        dpre[i] *= net.activate_deriv(tape.preacts[li][i]);
    }
    const Vec& in = tape.activations[li];
    Matrix& gw = g.layers[li].w;
    for (std::size_t i = 0; i < layer.w.rows; ++i) {
      const double di = dpre[i];
      g.layers[li].a[i] += di;
      if (di == 0.0) continue;
      for (std::size_t j = 0; j < layer.w.cols; ++j) gw(i, j) += di * in[j];
    }
    Vec next(layer.w.cols, 0.0);
    for (std::size_t i = 0; i < layer.w.rows; ++i) {
      const double di = dpre[i];
      if (di == 0.0) continue;
      for (std::size_t j = 0; j < layer.w.cols; ++j) next[j] += di * layer.w(i, j);
    }
    delta = std::move(next);
  }
  return delta;
}

/// Scalar-output convenience matching the single-response model.
inline Vec backward(const RepuNetwork& net, const ForwardTape& tape, double upstream,
                    NetGrad& g) {
  return backward(net, tape, Vec{upstream}, g);
}

/// Canonical flat order: per layer, W row-major then a.
inline Vec flatten(const RepuNetwork& net) {
  Vec theta;
  for (const Layer& l : net.layers) {
    theta.insert(theta.end(), l.w.data.begin(), l.w.data.end());
    theta.insert(theta.end(), l.a.begin(), l.a.end());
  }
  return theta;
}

inline Vec flatten(const NetGrad& g) {
  Vec theta;
  for (const Layer& l : g.layers) {
    theta.insert(theta.end(), l.w.data.begin(), l.w.data.end());
    theta.insert(theta.end(), l.a.begin(), l.a.end());
  }
  return theta;
}

inline void unflatten(RepuNetwork& net, const Vec& theta) {
  std::size_t pos = 0;
  for (Layer& l : net.layers) {
    for (double& x : l.w.data) x = theta[pos++];
    for (double& x : l.a) x = theta[pos++];
  }
  if (pos != theta.size()) throw contract_violation("unflatten: parameter vector length mismatch");
}

inline NetworkStructure structure(const RepuNetwork& net) {
  NetworkStructure s;
  s.depth = net.depth();
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    const Layer& layer = net.layers[l];
    s.size += layer.w.rows * (layer.w.cols + 1);
    if (l + 1 != net.layers.size()) {
      s.width = std::max(s.width, layer.w.rows);
      s.neurons += layer.w.rows;
    }
    for (double x : layer.w.data) s.nnz += (x != 0.0);
    for (double x : layer.a) s.nnz += (x != 0.0);
  }
  return s;
}

}  // namespace deepin
