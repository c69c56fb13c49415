#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

#include "unlearn_arena/error.hpp"
#include "unlearn_arena/numerics.hpp"

namespace arena {

/// Fully connected ReLU network over a flat parameter vector. Layer l maps
/// sizes[l] -> sizes[l+1]; its weights (row-major, out × in) are followed
/// by its biases. With two sizes it is multinomial logistic regression.
class Network {
 public:
  explicit Network(std::vector<std::size_t> sizes) : sizes_(std::move(sizes)) {
    if (sizes_.size() < 2) throw Error(ErrorKind::DimensionMismatch, "network needs input and output sizes");
    std::size_t off = 0;
    for (std::size_t l = 0; l + 1 < sizes_.size(); ++l) {
      weight_offset_.push_back(off);
      off += sizes_[l] * sizes_[l + 1];
      bias_offset_.push_back(off);
      off += sizes_[l + 1];
    }
    param_count_ = off;
  }

  const std::vector<std::size_t>& sizes() const noexcept { return sizes_; }
  std::size_t layers() const noexcept { return sizes_.size() - 1; }
  std::size_t input_dim() const noexcept { return sizes_.front(); }
  std::size_t output_dim() const noexcept { return sizes_.back(); }
  std::size_t param_count() const noexcept { return param_count_; }
  std::size_t weight_offset(std::size_t l) const noexcept { return weight_offset_[l]; }
  std::size_t bias_offset(std::size_t l) const noexcept { return bias_offset_[l]; }

  /// Scratch space for one forward/backward pass.
  struct Workspace {
    std::vector<Vector> act;    // act[0] = input, act[L] = logits
    std::vector<Vector> delta;  // gradient w.r.t. pre-activations per layer
  };

  Workspace workspace() const {
    Workspace ws;
    ws.act.resize(sizes_.size());
    ws.delta.resize(sizes_.size());
    for (std::size_t l = 0; l < sizes_.size(); ++l) {
      ws.act[l].assign(sizes_[l], 0.0);
      ws.delta[l].assign(sizes_[l], 0.0);
    }
    return ws;
  }

  /// Logits are left in ws.act.back().
  void forward(std::span<const double> params, std::span<const double> x, Workspace& ws) const {
    if (x.size() != input_dim()) throw Error(ErrorKind::DimensionMismatch, "input dimension mismatch");
    std::copy(x.begin(), x.end(), ws.act[0].begin());
    for (std::size_t l = 0; l < layers(); ++l) {
      const std::size_t in = sizes_[l];
      const std::size_t out = sizes_[l + 1];
      const double* w = params.data() + weight_offset_[l];
      const double* b = params.data() + bias_offset_[l];
      const double* a = ws.act[l].data();
      double* z = ws.act[l + 1].data();
      const bool hidden = l + 1 < layers();
      for (std::size_t o = 0; o < out; ++o) {
        double s = b[o];
        const double* wr = w + o * in;
        for (std::size_t i = 0; i < in; ++i) s += wr[i] * a[i];
        z[o] = hidden ? std::max(s, 0.0) : s;
      }
    }
  }

  Vector logits(std::span<const double> params, std::span<const double> x) const {
    Workspace ws = workspace();
    forward(params, x, ws);
    return ws.act.back();
  }

  /// Accumulates scale · ∂(loss)/∂θ into `grad`, given ∂loss/∂logits in
  /// ws.delta.back() after a forward pass.
  void backward(std::span<const double> params, Workspace& ws, std::span<double> grad, double scale = 1.0) const {
    for (std::size_t l = layers(); l-- > 0;) {
      const std::size_t in = sizes_[l];
      const std::size_t out = sizes_[l + 1];
      const double* w = params.data() + weight_offset_[l];
      double* gw = grad.data() + weight_offset_[l];
      double* gb = grad.data() + bias_offset_[l];
      const double* a = ws.act[l].data();
      const double* d = ws.delta[l + 1].data();
      for (std::size_t o = 0; o < out; ++o) {
        const double dv = d[o] * scale;
        if (dv == 0.0) continue;
        double* gwr = gw + o * in;
        for (std::size_t i = 0; i < in; ++i) gwr[i] += dv * a[i];
        gb[o] += dv;
      }
      if (l == 0) break;
      double* dprev = ws.delta[l].data();
      std::fill(dprev, dprev + in, 0.0);
      for (std::size_t o = 0; o < out; ++o) {
        const double dv = d[o];
        if (dv == 0.0) continue;
        const double* wr = w + o * in;
        for (std::size_t i = 0; i < in; ++i) dprev[i] += dv * wr[i];
      }
      // ReLU gate: act[l] holds post-activation values of hidden layer l.
      for (std::size_t i = 0; i < in; ++i)
        if (a[i] <= 0.0) dprev[i] = 0.0;
    }
  }

 private:
  std::vector<std::size_t> sizes_;
  std::vector<std::size_t> weight_offset_;
  std::vector<std::size_t> bias_offset_;
  std::size_t param_count_ = 0;
};

}  // namespace arena
