#pragma once

#include <map>
#include <string>
#include <vector>

#include "mptt/data.hpp"
#include "mptt/model.hpp"

namespace mptt {

enum class InferenceKind { iif, ssif, tfif, scif };

std::string to_string(InferenceKind k);
InferenceKind inference_from_string(const std::string& s);

struct PredictionSet {
  std::map<SequenceId, Mat> predictions;  // W x K per sequence
  InferenceKind kind = InferenceKind::iif;
  std::size_t gap_fallbacks = 0;  // ssif/tfif chains restarted across gaps
};

/// Independent inference: every sequence predicted from a zero initial state.
/// Order-invariant; parallel across sequences.
PredictionSet infer_iif(const GruParams& p, const std::vector<Sequence>& seqs, int jobs = 1);

/// Sequential stateful inference: per entity in temporal order, sequence j
/// starts from the hidden state its predecessor i produced at local step
/// T_j - T_i (the last state when windows are adjacent). Gaps larger than the
/// window fall back to a zero state with a warning count.
PredictionSet infer_ssif(const GruParams& p, const std::vector<Sequence>& seqs);

/// Closed-loop inference for teacher-forcing style models (input width D+K):
/// step t consumes [x_t ; y-feed] where the feed is the previous step's
/// prediction; the very first step of a chain feeds the observed boundary y0.
/// Hidden states and the feed are carried across sequence boundaries at the
/// T_j - T_i offset.
PredictionSet infer_tfif(const GruParams& p, const std::vector<Sequence>& seqs);

/// Sequential conditional inference for conditioned models (width D+K):
/// every sequence runs from a zero hidden state; its replicated condition is
/// the previous sequence's prediction at its final step (observed y0 for the
/// first sequence). Requires adjacent non-overlapping sequences.
PredictionSet infer_scif(const GruParams& p, const std::vector<Sequence>& seqs);

struct ReconstructedSeries {
  std::string entity;
  std::int64_t first_step = 0;  // absolute source step of row 0 (= T_0 + 1)
  Mat values;                   // L x K
  std::vector<int> doy;         // L
};

/// Stitches overlapping per-sequence predictions back into one series per
/// entity: the first sequence contributes all W steps, every later one only
/// its last `stride` steps (the overlap is discarded).
std::vector<ReconstructedSeries> reconstruct(const PredictionSet& preds,
                                             const std::vector<Sequence>& seqs);

/// Same stitching applied to the observed targets (the truth counterpart).
std::vector<ReconstructedSeries> reconstruct_targets(const std::vector<Sequence>& seqs);

}  // namespace mptt
