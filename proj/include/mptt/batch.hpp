#pragma once

#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "mptt/model.hpp"

namespace mptt {

/// Per-sequence feedback wiring for response-augmented models. The cell input
/// is [x_t ; y-feed] where the feed at step t is:
///   t == 1 : init_feed (the sequence's boundary response, or an incoming
///            prediction when chaining sequences at inference time)
///   t >= 2 : targets row t-2 when use_observed[t-1] is set, otherwise the
///            model's own step t-1 output, computed online.
/// The fed value never carries gradients; the materialized inputs are stored
/// in the trace and the backward pass treats them as constants.
struct BatchFeedback {
  const Mat* observed = nullptr;          // W x K
  std::span<const double> init_feed;      // K
  std::span<const std::uint8_t> use_observed;  // length W, index t-1
};

/// Trace of a timestep-synchronous batched forward. Blocks are laid out
/// [t][i][b] with the batch index contiguous, which is what lets the kernel
/// vectorize across sequences.
struct BatchTrace {
  std::size_t steps = 0;      // W
  std::size_t batch = 0;      // B
  std::size_t hidden_dim = 0; // H
  std::size_t input_dim = 0;  // D_in
  std::size_t output_dim = 0; // K
  Vec h0;            // H x B
  Vec hidden;        // W x H x B
  Vec update_gate;   // W x H x B
  Vec reset_gate;    // W x H x B
  Vec candidate;     // W x H x B
  Vec reset_hidden;  // W x H x B
  Vec inputs;        // W x D_in x B
  Vec outputs;       // W x K x B

  /// h_t of one sequence, t in [0, W]; t = 0 returns the h0 it started from.
  Vec hidden_state(std::size_t t, std::size_t b) const;
  Vec output_row(std::size_t t, std::size_t b) const;  // y_t, t in [1, W]
};

/// Runs B independent sequences through the GRU in lockstep. Each sequence's
/// arithmetic is a bit-exact match of gru_forward on the same data; sequences
/// never interact, so threads split the batch into contiguous slices.
/// `inputs[b]` is W x D_in, or W x (D_in - K) when `feedback` is non-empty.
/// An empty h0 span means the zero vector.
BatchTrace gru_forward_batch(const GruParams& p,
                             std::span<const Mat* const> inputs,
                             std::span<const std::span<const double>> h0s,
                             std::span<const BatchFeedback> feedback,
                             int jobs);

/// Mean-over-sequences loss and its exact gradients. Per-sequence gradients
/// are computed independently (in parallel when jobs > 1) and reduced in
/// ascending slot order, so results are identical for any thread count.
std::pair<GruParams, double> gru_backward_batch(const GruParams& p, const BatchTrace& trace,
                                                std::span<const Mat* const> targets,
                                                int jobs);

}  // namespace mptt
