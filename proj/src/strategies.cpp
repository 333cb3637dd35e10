#include "mptt/strategies.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <stdexcept>

#include "mptt/errors.hpp"

namespace mptt {

std::string to_string(Strategy s) {
  switch (s) {
    case Strategy::rmb: return "rmb";
    case Strategy::smb: return "smb";
    case Strategy::ssmb: return "ssmb";
    case Strategy::tf: return "tf";
    case Strategy::sspl: return "sspl";
    case Strategy::cmb: return "cmb";
    case Strategy::mptt: return "mptt";
  }
  return "?";
}

Strategy strategy_from_string(const std::string& s) {
  if (s == "rmb") return Strategy::rmb;
  if (s == "smb") return Strategy::smb;
  if (s == "ssmb") return Strategy::ssmb;
  if (s == "tf") return Strategy::tf;
  if (s == "sspl") return Strategy::sspl;
  if (s == "cmb") return Strategy::cmb;
  if (s == "mptt") return Strategy::mptt;
  throw ConfigError("unknown training strategy '" + s + "'");
}

bool is_response_based(Strategy s) {
  return s == Strategy::tf || s == Strategy::sspl || s == Strategy::cmb;
}

Mat augment_tf(const Mat& inputs, const Mat& targets, const Vec& y0) {
  const std::size_t w = inputs.rows, d = inputs.cols, k = targets.cols;
  if (targets.rows != w) throw std::invalid_argument("augment_tf: shape mismatch");
  if (y0.size() != k) throw std::invalid_argument("augment_tf: y0 size mismatch");
  Mat out(w, d + k);
  for (std::size_t t = 0; t < w; ++t) {
    for (std::size_t c = 0; c < d; ++c) out(t, c) = inputs(t, c);
    for (std::size_t c = 0; c < k; ++c) out(t, d + c) = (t == 0) ? y0[c] : targets(t - 1, c);
  }
  return out;
}

Mat augment_cmb(const Mat& inputs, const Vec& y0) {
  const std::size_t w = inputs.rows, d = inputs.cols, k = y0.size();
  if (k == 0) throw std::invalid_argument("augment_cmb: y0 missing");
  Mat out(w, d + k);
  for (std::size_t t = 0; t < w; ++t) {
    for (std::size_t c = 0; c < d; ++c) out(t, c) = inputs(t, c);
    for (std::size_t c = 0; c < k; ++c) out(t, d + c) = y0[c];
  }
  return out;
}

double sspl_rate(std::size_t epoch, double alpha, double beta, std::size_t decay_epochs) {
  if (decay_epochs == 0) throw std::invalid_argument("sspl_rate: decay_epochs must be positive");
  if (epoch > decay_epochs) return 0.0;
  const double x = alpha * (static_cast<double>(epoch) / static_cast<double>(decay_epochs) - beta);
  return 1.0 / (1.0 + std::exp(x));
}

namespace {

std::vector<std::vector<std::size_t>> partition_shuffled(std::size_t count, std::size_t batch,
                                                         Rng& rng) {
  std::vector<std::size_t> perm(count);
  std::iota(perm.begin(), perm.end(), 0);
  rng.shuffle(perm);
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t at = 0; at < count; at += batch) {
    const std::size_t end = std::min(count, at + batch);
    batches.emplace_back(perm.begin() + static_cast<std::ptrdiff_t>(at),
                         perm.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return batches;
}

struct BatchBuffers {
  std::vector<const Mat*> inputs, targets;
  std::vector<std::span<const double>> h0s;
};

void gather(const std::vector<const Mat*>& all_inputs, const std::vector<const Mat*>& all_targets,
            const std::vector<std::size_t>& idx, BatchBuffers& buf) {
  buf.inputs.clear();
  buf.targets.clear();
  buf.h0s.clear();
  for (const std::size_t s : idx) {
    buf.inputs.push_back(all_inputs[s]);
    buf.targets.push_back(all_targets[s]);
    buf.h0s.emplace_back();  // zero initial state
  }
}

}  // namespace

double epoch_rmb(Trainer& tr, const std::vector<const Mat*>& inputs,
                 const std::vector<const Mat*>& targets, std::size_t batch, Rng& rng,
                 std::vector<double>* batch_losses) {
  const auto batches = partition_shuffled(inputs.size(), batch, rng);
  BatchBuffers buf;
  double loss_sum = 0.0;
  for (const auto& idx : batches) {
    gather(inputs, targets, idx, buf);
    const BatchTrace trace = gru_forward_batch(tr.params, buf.inputs, buf.h0s, {}, tr.jobs);
    auto [grads, loss] = gru_backward_batch(tr.params, trace, buf.targets, tr.jobs);
    adam_step(tr.params, grads, tr.adam, tr.lr);
    if (batch_losses) batch_losses->push_back(loss);
    loss_sum += loss * static_cast<double>(idx.size());
  }
  return loss_sum / static_cast<double>(inputs.size());
}

double epoch_mptt(Trainer& tr, const std::vector<const Mat*>& inputs,
                  const std::vector<const Mat*>& targets, const std::vector<SequenceId>& ids,
                  const KeyMap& key_map, StateMap& state_map, std::size_t batch, Rng& rng,
                  bool fresh_reads, std::vector<double>* batch_losses) {
  const std::size_t m = inputs.size();
  if (ids.size() != m) throw std::invalid_argument("epoch_mptt: id count mismatch");
  const std::size_t window = inputs.empty() ? 0 : inputs[0]->rows;

  // Messages are assembled once per epoch unless fresh reads are requested;
  // at epoch start every count is zero, so the message is exactly mu0.
  std::map<SequenceId, Vec> epoch_messages;
  if (!fresh_reads) {
    for (const SequenceId& id : ids)
      epoch_messages.emplace(id, read_message(state_map.entries.at(id), state_map.keeper));
  }

  const auto batches = partition_shuffled(m, batch, rng);
  std::vector<const Mat*> b_inputs, b_targets;
  std::vector<Vec> b_msgs;
  std::vector<std::span<const double>> b_h0s;
  double loss_sum = 0.0;

  for (const auto& idx : batches) {
    b_inputs.clear();
    b_targets.clear();
    b_msgs.clear();
    b_h0s.clear();
    for (const std::size_t s : idx) {
      b_inputs.push_back(inputs[s]);
      b_targets.push_back(targets[s]);
      b_msgs.push_back(fresh_reads ? read_message(state_map.entries.at(ids[s]), state_map.keeper)
                                   : epoch_messages.at(ids[s]));
    }
    for (const Vec& msg : b_msgs) b_h0s.emplace_back(msg);

    const BatchTrace trace = gru_forward_batch(tr.params, b_inputs, b_h0s, {}, tr.jobs);
    auto [grads, loss] = gru_backward_batch(tr.params, trace, b_targets, tr.jobs);
    adam_step(tr.params, grads, tr.adam, tr.lr);
    if (batch_losses) batch_losses->push_back(loss);
    loss_sum += loss * static_cast<double>(idx.size());

    // Write phase: ascending sequence id for a reproducible fold order.
    std::vector<std::size_t> slots(idx.size());
    std::iota(slots.begin(), slots.end(), 0);
    std::sort(slots.begin(), slots.end(),
              [&](std::size_t a, std::size_t b) { return ids[idx[a]] < ids[idx[b]]; });
    for (const std::size_t slot : slots) {
      const SequenceId& id_i = ids[idx[slot]];
      for (const SequenceId& id_j : key_map.at(id_i)) {
        const std::int64_t offset = id_j.initial_step - id_i.initial_step;
        if (offset < 1 || offset > static_cast<std::int64_t>(window))
          throw std::logic_error("epoch_mptt: key offset outside the window");
        write_state(state_map.entries.at(id_j),
                    trace.hidden_state(static_cast<std::size_t>(offset), slot));
      }
    }
  }
  return loss_sum / static_cast<double>(m);
}

SmbLayout build_smb_layout(const std::vector<Sequence>& seqs, std::size_t batch) {
  if (batch == 0) throw std::invalid_argument("build_smb_layout: batch must be positive");

  std::map<std::string, std::vector<std::size_t>> per_entity;
  for (std::size_t i = 0; i < seqs.size(); ++i) per_entity[seqs[i].entity_id].push_back(i);

  SmbLayout layout;
  std::vector<std::size_t> remainder_pool;
  for (auto& [entity, idx] : per_entity) {
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
      return seqs[a].initial_step < seqs[b].initial_step;
    });
    const std::size_t chain_len = idx.size() / batch;
    const std::size_t leftover = idx.size() - chain_len * batch;
    for (std::size_t i = 0; i < leftover; ++i) remainder_pool.push_back(idx[i]);
    if (chain_len == 0) continue;

    SmbLayout::Group group;
    group.batches.assign(chain_len, std::vector<std::size_t>(batch));
    for (std::size_t slot = 0; slot < batch; ++slot)
      for (std::size_t k = 0; k < chain_len; ++k)
        group.batches[k][slot] = idx[leftover + slot * chain_len + k];
    layout.groups.push_back(std::move(group));
  }
  for (std::size_t at = 0; at < remainder_pool.size(); at += batch) {
    const std::size_t end = std::min(remainder_pool.size(), at + batch);
    layout.remainder_batches.emplace_back(remainder_pool.begin() + static_cast<std::ptrdiff_t>(at),
                                          remainder_pool.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return layout;
}

double epoch_smb(Trainer& tr, const std::vector<const Mat*>& inputs,
                 const std::vector<const Mat*>& targets, const SmbLayout& layout) {
  BatchBuffers buf;
  double loss_sum = 0.0;
  std::size_t trained = 0;

  for (const auto& idx : layout.remainder_batches) {
    gather(inputs, targets, idx, buf);
    const BatchTrace trace = gru_forward_batch(tr.params, buf.inputs, buf.h0s, {}, tr.jobs);
    auto [grads, loss] = gru_backward_batch(tr.params, trace, buf.targets, tr.jobs);
    adam_step(tr.params, grads, tr.adam, tr.lr);
    loss_sum += loss * static_cast<double>(idx.size());
    trained += idx.size();
  }

  for (const auto& group : layout.groups) {
    const std::size_t slots = group.batches.front().size();
    const std::size_t window = inputs[group.batches[0][0]]->rows;
    std::vector<Vec> slot_states;  // detached handoff, empty on the first batch
    for (const auto& idx : group.batches) {
      buf.inputs.clear();
      buf.targets.clear();
      buf.h0s.clear();
      for (const std::size_t s : idx) {
        buf.inputs.push_back(inputs[s]);
        buf.targets.push_back(targets[s]);
      }
      if (slot_states.empty()) {
        buf.h0s.assign(slots, {});
      } else {
        for (const Vec& h : slot_states) buf.h0s.emplace_back(h);
      }
      const BatchTrace trace = gru_forward_batch(tr.params, buf.inputs, buf.h0s, {}, tr.jobs);
      auto [grads, loss] = gru_backward_batch(tr.params, trace, buf.targets, tr.jobs);
      adam_step(tr.params, grads, tr.adam, tr.lr);
      loss_sum += loss * static_cast<double>(idx.size());
      trained += idx.size();

      slot_states.resize(slots);
      for (std::size_t m = 0; m < slots; ++m) slot_states[m] = trace.hidden_state(window, m);
    }
  }
  return loss_sum / static_cast<double>(trained);
}

namespace {

void add_scaled_params(GruParams& acc, const GruParams& g, double scale) {
  auto a = param_spans(acc);
  auto b = param_spans(const_cast<GruParams&>(g));
  for (std::size_t s = 0; s < a.size(); ++s)
    for (std::size_t i = 0; i < a[s].size(); ++i) a[s][i] += scale * b[s][i];
}

}  // namespace

double epoch_ssmb(Trainer& tr, const std::vector<const Mat*>& inputs,
                  const std::vector<const Mat*>& targets,
                  const std::vector<std::vector<std::size_t>>& entity_chains, std::size_t batch) {
  GruParams acc = zeros_like(tr.params);
  std::size_t pending = 0;
  double loss_sum = 0.0;
  std::size_t trained = 0;

  auto flush = [&]() {
    if (pending == 0) return;
    GruParams mean = zeros_like(tr.params);
    add_scaled_params(mean, acc, 1.0 / static_cast<double>(pending));
    adam_step(tr.params, mean, tr.adam, tr.lr);
    acc = zeros_like(tr.params);
    pending = 0;
  };

  for (const auto& chain : entity_chains) {
    Vec carried;  // empty -> zero initial state at each entity start
    for (const std::size_t s : chain) {
      const Mat* in = inputs[s];
      const Mat* tg = targets[s];
      const std::span<const double> h0 =
          carried.empty() ? std::span<const double>{} : std::span<const double>(carried);
      const BatchTrace trace =
          gru_forward_batch(tr.params, std::span<const Mat* const>(&in, 1),
                            std::span<const std::span<const double>>(&h0, 1), {}, 1);
      auto [grads, loss] = gru_backward_batch(tr.params, trace, std::span<const Mat* const>(&tg, 1), 1);
      add_scaled_params(acc, grads, 1.0);
      loss_sum += loss;
      trained += 1;
      pending += 1;
      carried = trace.hidden_state(trace.steps, 0);  // detached boundary state
      if (pending == batch) flush();
    }
  }
  flush();
  return loss_sum / static_cast<double>(trained);
}

double epoch_sspl(Trainer& tr, const std::vector<const Mat*>& raw_inputs,
                  const std::vector<const Mat*>& targets, const std::vector<const Vec*>& y0s,
                  std::size_t batch, double epsilon, Rng& partition_rng, Rng& mask_rng) {
  const std::size_t m = raw_inputs.size();
  const auto batches = partition_shuffled(m, batch, partition_rng);
  double loss_sum = 0.0;

  std::vector<const Mat*> b_inputs, b_targets;
  std::vector<std::span<const double>> b_h0s;
  std::vector<std::vector<std::uint8_t>> masks;
  std::vector<BatchFeedback> feedback;

  for (const auto& idx : batches) {
    const std::size_t w = raw_inputs[idx[0]]->rows;
    b_inputs.clear();
    b_targets.clear();
    b_h0s.clear();
    masks.assign(idx.size(), std::vector<std::uint8_t>(w, 0));
    feedback.clear();

    // Masks are drawn serially (slot-major, step-major) so runs are
    // reproducible for any thread count. Step 1 always feeds y0.
    for (std::size_t slot = 0; slot < idx.size(); ++slot)
      for (std::size_t t = 2; t <= w; ++t)
        masks[slot][t - 1] = mask_rng.bernoulli(epsilon) ? 1 : 0;

    for (std::size_t slot = 0; slot < idx.size(); ++slot) {
      const std::size_t s = idx[slot];
      b_inputs.push_back(raw_inputs[s]);
      b_targets.push_back(targets[s]);
      b_h0s.emplace_back();
      feedback.push_back(BatchFeedback{targets[s], *y0s[s], masks[slot]});
    }

    const BatchTrace trace = gru_forward_batch(tr.params, b_inputs, b_h0s, feedback, tr.jobs);
    auto [grads, loss] = gru_backward_batch(tr.params, trace, b_targets, tr.jobs);
    adam_step(tr.params, grads, tr.adam, tr.lr);
    loss_sum += loss * static_cast<double>(idx.size());
  }
  return loss_sum / static_cast<double>(m);
}

namespace {

void check_uniform(const std::vector<Sequence>& seqs) {
  if (seqs.empty()) throw std::invalid_argument("train: no sequences");
  const std::size_t w = seqs[0].inputs.rows, d = seqs[0].inputs.cols, k = seqs[0].targets.cols;
  for (const auto& s : seqs)
    if (s.inputs.rows != w || s.inputs.cols != d || s.targets.cols != k ||
        s.targets.rows != w)
      throw std::invalid_argument("train: sequences must share window and channel shapes");
}

std::vector<std::vector<std::size_t>> adjacent_chains(const std::vector<Sequence>& seqs,
                                                      const char* who) {
  std::map<std::string, std::vector<std::size_t>> per_entity;
  for (std::size_t i = 0; i < seqs.size(); ++i) per_entity[seqs[i].entity_id].push_back(i);
  const auto w = static_cast<std::int64_t>(seqs[0].inputs.rows);
  std::vector<std::vector<std::size_t>> chains;
  for (auto& [entity, idx] : per_entity) {
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
      return seqs[a].initial_step < seqs[b].initial_step;
    });
    for (std::size_t i = 1; i < idx.size(); ++i) {
      const std::int64_t gap = seqs[idx[i]].initial_step - seqs[idx[i - 1]].initial_step;
      if (gap != w)
        throw std::invalid_argument(std::string(who) +
                                    " requires non-overlapping adjacent sequences (stride = window)");
    }
    chains.push_back(std::move(idx));
  }
  return chains;
}

}  // namespace

TrainResult train(const TrainConfig& config, const std::vector<Sequence>& train_seqs,
                  const Validator& validator, const EpochObserver& observer) {
  check_uniform(train_seqs);
  if (config.epochs == 0) throw std::invalid_argument("train: epochs must be positive");
  if (config.batch == 0) throw std::invalid_argument("train: batch must be positive");
  if (config.strategy == Strategy::mptt && config.keeper != 0 && config.keeper != 1)
    throw std::invalid_argument("train: message keeper must be 0 or 1");
  if (config.strategy == Strategy::smb && config.batch > train_seqs.size())
    throw std::invalid_argument("train: batch larger than the sequence count under SMB");

  const std::size_t d_raw = train_seqs[0].inputs.cols;
  const std::size_t k = train_seqs[0].targets.cols;
  const std::size_t window = train_seqs[0].inputs.rows;
  const bool fed = is_response_based(config.strategy);
  const std::size_t d_in = d_raw + (fed ? k : 0);

  // Prepared per-sequence model inputs (augmented where the strategy fixes
  // the extra channels up front).
  std::vector<Mat> prepared;
  prepared.reserve(train_seqs.size());
  for (const auto& s : train_seqs) {
    if (config.strategy == Strategy::tf)
      prepared.push_back(augment_tf(s.inputs, s.targets, s.y0));
    else if (config.strategy == Strategy::cmb)
      prepared.push_back(augment_cmb(s.inputs, s.y0));
    else
      prepared.push_back(s.inputs);
  }
  std::vector<const Mat*> inputs, targets;
  std::vector<const Vec*> y0s;
  for (std::size_t i = 0; i < train_seqs.size(); ++i) {
    inputs.push_back(&prepared[i]);
    targets.push_back(&train_seqs[i].targets);
    y0s.push_back(&train_seqs[i].y0);
  }

  Trainer tr(init_gru(config.hidden, d_in, k, config.seed), config.lr, config.jobs);
  Rng partition_rng(derive_seed(config.seed, "partition"));
  Rng mask_rng(derive_seed(config.seed, "sspl-mask"));

  // Strategy-specific fixtures.
  SmbLayout smb_layout;
  std::vector<std::vector<std::size_t>> ssmb_chains;
  std::vector<SequenceId> ids;
  KeyMap key_map;
  StateMap state_map;
  if (config.strategy == Strategy::smb) {
    adjacent_chains(train_seqs, "SMB");  // validates spacing
    smb_layout = build_smb_layout(train_seqs, config.batch);
  } else if (config.strategy == Strategy::ssmb) {
    ssmb_chains = adjacent_chains(train_seqs, "SSMB");
  } else if (config.strategy == Strategy::mptt) {
    for (const auto& s : train_seqs) ids.push_back(s.id());
    key_map = build_key_map(ids, window);
    state_map = init_state_map(ids, config.hidden, config.keeper);
  }

  std::size_t sspl_decay = config.sspl.decay_epochs;
  if (config.strategy == Strategy::sspl && sspl_decay == 0)
    sspl_decay = std::max<std::size_t>(1, (config.epochs * 4) / 5);

  TrainResult result{tr.params, {}};
  double best_val = std::numeric_limits<double>::infinity();
  GruParams best_params = tr.params;

  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    double loss = 0.0;
    switch (config.strategy) {
      case Strategy::rmb:
      case Strategy::tf:
      case Strategy::cmb:
        loss = epoch_rmb(tr, inputs, targets, config.batch, partition_rng);
        break;
      case Strategy::sspl: {
        const double eps = sspl_rate(epoch, config.sspl.alpha, config.sspl.beta, sspl_decay);
        loss = epoch_sspl(tr, inputs, targets, y0s, config.batch, eps, partition_rng, mask_rng);
        break;
      }
      case Strategy::smb:
        loss = epoch_smb(tr, inputs, targets, smb_layout);
        break;
      case Strategy::ssmb:
        loss = epoch_ssmb(tr, inputs, targets, ssmb_chains, config.batch);
        break;
      case Strategy::mptt:
        loss = epoch_mptt(tr, inputs, targets, ids, key_map, state_map, config.batch,
                          partition_rng, config.mptt_fresh_reads);
        break;
    }
    const auto t1 = std::chrono::steady_clock::now();

    EpochLog log;
    log.epoch = epoch;
    log.loss = loss;
    log.seconds = std::chrono::duration<double>(t1 - t0).count();
    if (validator) {
      const double val = validator(tr.params);
      log.val_rmse = val;
      if (config.keep_best && val < best_val) {
        best_val = val;
        best_params = tr.params;
      }
    }
    result.logs.push_back(log);
    if (observer)
      observer(epoch, config.strategy == Strategy::mptt ? &state_map : nullptr);
    if (config.strategy == Strategy::mptt) propagate_epoch(state_map);
  }

  result.params = (config.keep_best && validator) ? best_params : tr.params;
  return result;
}

}  // namespace mptt
