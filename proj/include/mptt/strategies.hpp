#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "mptt/batch.hpp"
#include "mptt/data.hpp"
#include "mptt/memory.hpp"
#include "mptt/model.hpp"
#include "mptt/rng.hpp"

namespace mptt {

enum class Strategy { rmb, smb, ssmb, tf, sspl, cmb, mptt };

std::string to_string(Strategy s);
Strategy strategy_from_string(const std::string& s);

/// True for strategies that widen the cell input with response channels
/// (teacher forcing, scheduled sampling, conditioning).
bool is_response_based(Strategy s);

struct SsplConfig {
  double alpha = 10.0;
  double beta = 0.5;
  std::size_t decay_epochs = 0;  // 0 -> defaults to 0.8 * epochs
};

struct TrainConfig {
  Strategy strategy = Strategy::rmb;
  int keeper = 1;  // message keeper delta (Strategy::mptt only)
  std::size_t hidden = 32;
  double lr = 0.01;
  std::size_t batch = 64;
  std::size_t epochs = 500;
  std::uint64_t seed = 0;
  SsplConfig sspl;
  /// When set, MPTT reads messages at each mini-batch start so same-epoch
  /// writes are visible immediately. Off by default: messages are fixed at
  /// epoch start, so each epoch trains against the state propagated from the
  /// previous one (and epoch 1 runs from all-zero messages, exactly like a
  /// zero-init run on the same partition).
  bool mptt_fresh_reads = false;
  int jobs = 1;
  bool keep_best = false;  // with a validator: return the best-validation params
};

struct EpochLog {
  std::size_t epoch = 0;
  double loss = 0.0;
  double seconds = 0.0;
  std::optional<double> val_rmse;
};

struct TrainResult {
  GruParams params;
  std::vector<EpochLog> logs;
};

/// Model + optimizer bundle the per-strategy epochs advance.
struct Trainer {
  GruParams params;
  AdamState adam;
  double lr = 0.01;
  int jobs = 1;

  Trainer(GruParams p, double lr_, int jobs_)
      : params(std::move(p)), adam(param_count(params)), lr(lr_), jobs(jobs_) {}
};

/// Teacher-forcing augmentation with every step observed: step t carries
/// [x_t ; y_{t-1}], with y0 at t = 1. Width becomes D + K.
Mat augment_tf(const Mat& inputs, const Mat& targets, const Vec& y0);

/// Conditioning augmentation: y0 replicated across every step.
Mat augment_cmb(const Mat& inputs, const Vec& y0);

/// Scheduled-sampling rate: 1 / (1 + exp(alpha * (e / decay_epochs - beta)))
/// for e <= decay_epochs, 0 afterwards.
double sspl_rate(std::size_t epoch, double alpha, double beta, std::size_t decay_epochs);

/// One epoch of shuffled zero-init mini-batches over prepared per-sequence
/// matrices (plain training, and teacher-forcing/conditioning training on
/// pre-augmented inputs). Returns the mean per-sequence loss.
double epoch_rmb(Trainer& tr, const std::vector<const Mat*>& inputs,
                 const std::vector<const Mat*>& targets, std::size_t batch, Rng& rng,
                 std::vector<double>* batch_losses = nullptr);

/// One epoch of message-passing training: read a message per sequence,
/// forward from it, update, then write the detached hidden state at offset
/// T_j - T_i to every key j. The caller runs propagate_epoch afterwards
/// (train() does this right after the epoch observer fires, so observers see
/// the write counts the epoch produced).
double epoch_mptt(Trainer& tr, const std::vector<const Mat*>& inputs,
                  const std::vector<const Mat*>& targets, const std::vector<SequenceId>& ids,
                  const KeyMap& key_map, StateMap& state_map, std::size_t batch, Rng& rng,
                  bool fresh_reads = false, std::vector<double>* batch_losses = nullptr);

/// Stateful layout: per entity, the earliest leftover sequences form zero-init
/// batches and the rest split into `batch` contiguous chunks; batch k holds
/// the k-th sequence of every chunk, so each slot is temporally contiguous
/// across batches and hands its last hidden state to the next batch.
struct SmbLayout {
  std::vector<std::vector<std::size_t>> remainder_batches;  // zero-init
  struct Group {
    std::vector<std::vector<std::size_t>> batches;  // batches[k][slot]
  };
  std::vector<Group> groups;  // one per entity with at least one full chunk
};

SmbLayout build_smb_layout(const std::vector<Sequence>& seqs, std::size_t batch);

double epoch_smb(Trainer& tr, const std::vector<const Mat*>& inputs,
                 const std::vector<const Mat*>& targets, const SmbLayout& layout);

/// Sequential stateful epoch: each entity's sequences are processed one at a
/// time in temporal order, the hidden state carried (detached) across every
/// boundary; gradients average over `batch` sequences per optimizer step.
double epoch_ssmb(Trainer& tr, const std::vector<const Mat*>& inputs,
                  const std::vector<const Mat*>& targets,
                  const std::vector<std::vector<std::size_t>>& entity_chains, std::size_t batch);

/// Scheduled-sampling epoch: per step and sequence, the fed-back response is
/// the observed value with probability epsilon, the model's own (detached)
/// prediction otherwise.
double epoch_sspl(Trainer& tr, const std::vector<const Mat*>& raw_inputs,
                  const std::vector<const Mat*>& targets, const std::vector<const Vec*>& y0s,
                  std::size_t batch, double epsilon, Rng& partition_rng, Rng& mask_rng);

using Validator = std::function<double(const GruParams&)>;
using EpochObserver = std::function<void(std::size_t epoch, const StateMap* state_map)>;

/// Runs the configured strategy for config.epochs epochs. Deterministic per
/// (config, data, seed). The optional validator is called after each epoch and
/// its value logged; the observer fires at each epoch end (for MPTT, before
/// the propagate step, so write counts are still visible).
TrainResult train(const TrainConfig& config, const std::vector<Sequence>& train_seqs,
                  const Validator& validator = nullptr, const EpochObserver& observer = nullptr);

}  // namespace mptt
