#include "mptt/inference.hpp"

#include <algorithm>
#include <functional>
#include <stdexcept>

#include "mptt/batch.hpp"
#include "mptt/errors.hpp"

namespace mptt {

std::string to_string(InferenceKind k) {
  switch (k) {
    case InferenceKind::iif: return "iif";
    case InferenceKind::ssif: return "ssif";
    case InferenceKind::tfif: return "tfif";
    case InferenceKind::scif: return "scif";
  }
  return "?";
}

InferenceKind inference_from_string(const std::string& s) {
  if (s == "iif") return InferenceKind::iif;
  if (s == "ssif") return InferenceKind::ssif;
  if (s == "tfif") return InferenceKind::tfif;
  if (s == "scif") return InferenceKind::scif;
  throw ConfigError("unknown inference strategy '" + s + "'");
}

namespace {

void check_plain_width(const GruParams& p, const std::vector<Sequence>& seqs, const char* who) {
  if (seqs.empty()) throw std::invalid_argument(std::string(who) + ": no sequences");
  if (p.dims.input != seqs[0].inputs.cols)
    throw std::invalid_argument(std::string(who) + ": input width mismatch (model expects " +
                                std::to_string(p.dims.input) + " channels, sequences have " +
                                std::to_string(seqs[0].inputs.cols) + ")");
}

void check_fed_width(const GruParams& p, const std::vector<Sequence>& seqs, const char* who) {
  if (seqs.empty()) throw std::invalid_argument(std::string(who) + ": no sequences");
  const std::size_t want = seqs[0].inputs.cols + seqs[0].targets.cols;
  if (p.dims.input != want)
    throw std::invalid_argument(std::string(who) + ": input width mismatch (model expects " +
                                std::to_string(p.dims.input) + " channels, need " +
                                std::to_string(want) + " = drivers + responses)");
}

/// Sequence indices grouped per entity, sorted by initial step.
std::vector<std::vector<std::size_t>> temporal_groups(const std::vector<Sequence>& seqs) {
  std::map<std::string, std::vector<std::size_t>> per_entity;
  for (std::size_t i = 0; i < seqs.size(); ++i) per_entity[seqs[i].entity_id].push_back(i);
  std::vector<std::vector<std::size_t>> groups;
  for (auto& [entity, idx] : per_entity) {
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
      return seqs[a].initial_step < seqs[b].initial_step;
    });
    for (std::size_t i = 1; i < idx.size(); ++i)
      if (seqs[idx[i]].initial_step == seqs[idx[i - 1]].initial_step)
        throw std::invalid_argument("inference: duplicate sequence ids");
    groups.push_back(std::move(idx));
  }
  return groups;
}

Mat outputs_of(const ForwardTrace& tr) { return tr.outputs; }

}  // namespace

PredictionSet infer_iif(const GruParams& p, const std::vector<Sequence>& seqs, int jobs) {
  check_plain_width(p, seqs, "infer_iif");
  PredictionSet out;
  out.kind = InferenceKind::iif;

  std::vector<const Mat*> inputs;
  std::vector<std::span<const double>> h0s(seqs.size());
  for (const auto& s : seqs) inputs.push_back(&s.inputs);
  const BatchTrace trace = gru_forward_batch(p, inputs, h0s, {}, jobs);

  const std::size_t w = trace.steps, k = trace.output_dim;
  for (std::size_t b = 0; b < seqs.size(); ++b) {
    Mat pred(w, k);
    for (std::size_t t = 1; t <= w; ++t) {
      const Vec y = trace.output_row(t, b);
      for (std::size_t j = 0; j < k; ++j) pred(t - 1, j) = y[j];
    }
    out.predictions.emplace(seqs[b].id(), std::move(pred));
  }
  return out;
}

PredictionSet infer_ssif(const GruParams& p, const std::vector<Sequence>& seqs) {
  check_plain_width(p, seqs, "infer_ssif");
  PredictionSet out;
  out.kind = InferenceKind::ssif;

  for (const auto& group : temporal_groups(seqs)) {
    Vec h0(p.dims.hidden, 0.0);
    ForwardTrace prev_trace;
    std::int64_t prev_step = 0;
    bool has_prev = false;
    for (const std::size_t i : group) {
      const Sequence& s = seqs[i];
      if (has_prev) {
        const std::int64_t offset = s.initial_step - prev_step;
        const auto window = static_cast<std::int64_t>(prev_trace.steps);
        if (offset >= 1 && offset <= window) {
          h0 = prev_trace.hidden_state(static_cast<std::size_t>(offset));
        } else {
          h0.assign(p.dims.hidden, 0.0);
          out.gap_fallbacks += 1;
        }
      }
      ForwardTrace trace = gru_forward(p, s.inputs, h0);
      out.predictions.emplace(s.id(), outputs_of(trace));
      prev_trace = std::move(trace);
      prev_step = s.initial_step;
      has_prev = true;
    }
  }
  return out;
}

PredictionSet infer_tfif(const GruParams& p, const std::vector<Sequence>& seqs) {
  check_fed_width(p, seqs, "infer_tfif");
  PredictionSet out;
  out.kind = InferenceKind::tfif;
  const std::size_t k = seqs[0].targets.cols;

  for (const auto& group : temporal_groups(seqs)) {
    Vec feed;
    BatchTrace prev;
    std::int64_t prev_step = 0;
    bool has_prev = false;
    for (const std::size_t i : group) {
      const Sequence& s = seqs[i];
      Vec h0_vec;
      if (has_prev) {
        const std::int64_t offset = s.initial_step - prev_step;
        const auto window = static_cast<std::int64_t>(prev.steps);
        if (offset >= 1 && offset <= window) {
          h0_vec = prev.hidden_state(static_cast<std::size_t>(offset), 0);
          feed = prev.output_row(static_cast<std::size_t>(offset), 0);
        } else {
          feed = s.y0;  // chain broken: restart from the observed boundary
          out.gap_fallbacks += 1;
        }
      } else {
        feed = s.y0;
      }

      const Mat* in = &s.inputs;
      BatchFeedback fb;
      fb.observed = &s.targets;  // unused: closed loop keeps every mask unset
      fb.init_feed = feed;
      const std::span<const double> h0_span =
          h0_vec.empty() ? std::span<const double>{} : std::span<const double>(h0_vec);
      BatchTrace trace =
          gru_forward_batch(p, std::span<const Mat* const>(&in, 1),
                            std::span<const std::span<const double>>(&h0_span, 1),
                            std::span<const BatchFeedback>(&fb, 1), 1);

      const std::size_t w = trace.steps;
      Mat pred(w, k);
      for (std::size_t t = 1; t <= w; ++t) {
        const Vec y = trace.output_row(t, 0);
        for (std::size_t j = 0; j < k; ++j) pred(t - 1, j) = y[j];
      }
      out.predictions.emplace(s.id(), std::move(pred));
      prev = std::move(trace);
      prev_step = s.initial_step;
      has_prev = true;
    }
  }
  return out;
}

PredictionSet infer_scif(const GruParams& p, const std::vector<Sequence>& seqs) {
  check_fed_width(p, seqs, "infer_scif");
  PredictionSet out;
  out.kind = InferenceKind::scif;
  const std::size_t k = seqs[0].targets.cols;

  for (const auto& group : temporal_groups(seqs)) {
    // The conditioning rule needs each sequence to start where the previous
    // one ended, so overlapping or gapped segments are rejected.
    const auto window = static_cast<std::int64_t>(seqs[group[0]].inputs.rows);
    for (std::size_t i = 1; i < group.size(); ++i)
      if (seqs[group[i]].initial_step - seqs[group[i - 1]].initial_step != window)
        throw std::invalid_argument(
            "infer_scif requires non-overlapping adjacent sequences (stride = window)");

    Vec condition;
    bool first = true;
    for (const std::size_t i : group) {
      const Sequence& s = seqs[i];
      if (first) condition = s.y0;
      const Mat augmented = [&] {
        Mat a(s.inputs.rows, s.inputs.cols + k);
        for (std::size_t t = 0; t < s.inputs.rows; ++t) {
          for (std::size_t c = 0; c < s.inputs.cols; ++c) a(t, c) = s.inputs(t, c);
          for (std::size_t c = 0; c < k; ++c) a(t, s.inputs.cols + c) = condition[c];
        }
        return a;
      }();
      const Vec h0(p.dims.hidden, 0.0);  // re-zeroed at every boundary
      ForwardTrace trace = gru_forward(p, augmented, h0);

      condition.assign(k, 0.0);
      for (std::size_t j = 0; j < k; ++j) condition[j] = trace.outputs(trace.steps - 1, j);
      out.predictions.emplace(s.id(), outputs_of(trace));
      first = false;
    }
  }
  return out;
}

namespace {

std::vector<ReconstructedSeries> stitch(const std::vector<Sequence>& seqs,
                                        const std::function<const Mat&(const Sequence&)>& rows) {
  std::vector<ReconstructedSeries> out;
  std::map<std::string, std::vector<std::size_t>> per_entity;
  for (std::size_t i = 0; i < seqs.size(); ++i) per_entity[seqs[i].entity_id].push_back(i);

  for (auto& [entity, idx] : per_entity) {
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
      return seqs[a].initial_step < seqs[b].initial_step;
    });
    const std::size_t w = seqs[idx[0]].inputs.rows;
    const std::size_t k = seqs[idx[0]].targets.cols;
    std::size_t stride = w;
    if (idx.size() > 1) {
      stride = static_cast<std::size_t>(seqs[idx[1]].initial_step - seqs[idx[0]].initial_step);
      if (stride == 0 || stride > w)
        throw std::invalid_argument("reconstruct: sequences must overlap by a constant stride");
      for (std::size_t i = 1; i < idx.size(); ++i)
        if (static_cast<std::size_t>(seqs[idx[i]].initial_step - seqs[idx[i - 1]].initial_step) !=
            stride)
          throw std::invalid_argument("reconstruct: inconsistent overlaps");
    }

    ReconstructedSeries series;
    series.entity = entity;
    series.first_step = seqs[idx[0]].initial_step + 1;
    const std::size_t total = w + (idx.size() - 1) * stride;
    series.values = Mat(total, k);
    series.doy.resize(total);

    std::size_t row = 0;
    for (std::size_t n = 0; n < idx.size(); ++n) {
      const Sequence& s = seqs[idx[n]];
      const Mat& source = rows(s);
      const std::size_t keep_from = (n == 0) ? 0 : w - stride;
      for (std::size_t t = keep_from; t < w; ++t, ++row) {
        for (std::size_t c = 0; c < k; ++c) series.values(row, c) = source(t, c);
        series.doy[row] = s.doy[t];
      }
    }
    out.push_back(std::move(series));
  }
  return out;
}

}  // namespace

std::vector<ReconstructedSeries> reconstruct(const PredictionSet& preds,
                                             const std::vector<Sequence>& seqs) {
  for (const auto& s : seqs)
    if (!preds.predictions.count(s.id()))
      throw std::invalid_argument("reconstruct: missing prediction for a sequence");
  return stitch(seqs, [&](const Sequence& s) -> const Mat& {
    return preds.predictions.at(s.id());
  });
}

std::vector<ReconstructedSeries> reconstruct_targets(const std::vector<Sequence>& seqs) {
  return stitch(seqs, [](const Sequence& s) -> const Mat& { return s.targets; });
}

}  // namespace mptt
