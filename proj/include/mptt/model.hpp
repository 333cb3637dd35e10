#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mptt/linalg.hpp"

namespace mptt {

struct GruDims {
  std::size_t hidden = 0;  // H
  std::size_t input = 0;   // D_in as seen by the cell (augmented width, if any)
  std::size_t output = 0;  // K

  bool operator==(const GruDims&) const = default;
};

/// Single-layer GRU with a linear output head.
///   z_t = sigmoid(wz x_t + uz h_{t-1} + bz)
///   r_t = sigmoid(wr x_t + ur h_{t-1} + br)
///   g_t = tanh(wh x_t + uh (r_t .* h_{t-1}) + bh)
///   h_t = (1 - z_t) .* h_{t-1} + z_t .* g_t
///   y_t = w_out h_t + b_out
struct GruParams {
  GruDims dims;
  Mat wz, wr, wh;  // H x D_in
  Mat uz, ur, uh;  // H x H
  Vec bz, br, bh;  // H
  Mat w_out;       // K x H
  Vec b_out;       // K
};

/// Weights uniform in +-1/sqrt(fan_in), biases zero. Deterministic per seed.
GruParams init_gru(std::size_t hidden, std::size_t input, std::size_t output,
                   std::uint64_t seed);

GruParams zeros_like(const GruParams& p);

/// Fixed-order views over every parameter array; the order defines the
/// flattened layout used by the optimizer, finite differences and checkpoints.
std::vector<std::span<double>> param_spans(GruParams& p);
std::vector<std::span<const double>> param_spans(const GruParams& p);

struct NamedArray {
  std::string name;
  std::vector<std::size_t> shape;
  std::span<double> data;
};
std::vector<NamedArray> named_arrays(GruParams& p);

std::size_t param_count(const GruParams& p);

/// Everything the backward pass (and the state handoff logic) needs from a
/// forward run. Local steps are 1-based: hidden_state(t) is h_t for t in
/// [1, W], and hidden_state(0) returns the h0 the run started from.
struct ForwardTrace {
  std::size_t steps = 0;       // W
  std::size_t hidden_dim = 0;  // H
  Vec h0;
  Mat hidden;        // W x H
  Mat update_gate;   // W x H (z)
  Mat reset_gate;    // W x H (r)
  Mat candidate;     // W x H (g)
  Mat reset_hidden;  // W x H (r .* h_{t-1})
  Mat inputs;        // W x D_in, as actually consumed
  Mat outputs;       // W x K

  Vec hidden_state(std::size_t t) const;
};

/// Runs the recursion above from h0. Throws NumericError naming the step if a
/// hidden state goes non-finite.
ForwardTrace gru_forward(const GruParams& p, const Mat& inputs, const Vec& h0);

/// Exact gradients of the mean squared error over all W*K entries with
/// respect to every parameter. h0 is treated as a constant: no gradient
/// crosses the sequence boundary.
std::pair<GruParams, double> gru_backward(const GruParams& p, const ForwardTrace& trace,
                                          const Mat& targets);

/// Central-difference gradient of the same loss; the test oracle for
/// gru_backward. O(param_count) forward pairs, so keep instances small.
GruParams finite_diff_grad(const GruParams& p, const Mat& inputs, const Vec& h0,
                           const Mat& targets, double step);

std::pair<double, Mat> mse_loss(const Mat& pred, const Mat& target);

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  AdamConfig cfg;
  Vec m, v;               // first/second moments over the flattened parameters
  std::int64_t step = 0;  // t, incremented once per update

  AdamState() = default;
  explicit AdamState(std::size_t n, AdamConfig c = {}) : cfg(c), m(n, 0.0), v(n, 0.0) {}
};

/// Bias-corrected Adam update, in place. Throws NumericError on non-finite
/// gradients.
void adam_step(GruParams& params, const GruParams& grads, AdamState& state, double lr);

/// Versioned little-endian binary checkpoint of named arrays with shape
/// headers; round-trips bit-exactly.
void save_checkpoint(const GruParams& p, const std::string& path);
GruParams load_checkpoint(const std::string& path);

}  // namespace mptt
