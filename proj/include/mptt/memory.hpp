#pragma once

#include <compare>
#include <cstdint>
#include <map>
#include <ostream>
#include <string>
#include <vector>

#include "mptt/linalg.hpp"

namespace mptt {

/// A training sequence is identified by its entity and initial step T (the
/// timestep one before its window). Ordering is (entity, T).
struct SequenceId {
  std::string entity;
  std::int64_t initial_step = 0;

  auto operator<=>(const SequenceId&) const = default;
};

std::ostream& operator<<(std::ostream& os, const SequenceId& id);

/// Static index from each sequence to the later sequences of the same entity
/// whose initial steps fall inside its window: j is listed under i iff
/// T_i < T_j <= T_i + W. Lists are sorted ascending by T.
using KeyMap = std::map<SequenceId, std::vector<SequenceId>>;

KeyMap build_key_map(const std::vector<SequenceId>& ids, std::size_t window);

/// Number of sequences whose key lists contain each id (its in-degree). After
/// a full training epoch this is exactly the write count c each entry holds.
std::map<SequenceId, std::size_t> in_degrees(const KeyMap& key_map);

/// Per-sequence message store: mu0 summarizes initial states from prior
/// epochs, hbar0 is the running mean of states written this epoch, c counts
/// them. mu_filled tracks whether mu0 has absorbed a propagation yet; the
/// first propagation replaces the zero placeholder outright instead of
/// averaging against it, which is what makes the iterated bookkeeping agree
/// with the closed-form expansion below.
struct StateEntry {
  Vec mu0;
  Vec hbar0;
  std::int64_t count = 0;
  bool mu_filled = false;
};

struct StateMap {
  std::map<SequenceId, StateEntry> entries;
  int keeper = 1;  // message keeper delta, 0 or 1
};

StateMap init_state_map(const std::vector<SequenceId>& ids, std::size_t hidden, int keeper);

/// Read policy: the message assembled for a sequence at mini-batch start.
///   delta = 0, c = 0  ->  mu0
///   otherwise         ->  (delta * mu0 + c * hbar0) / (delta + c)
Vec read_message(const StateEntry& entry, int keeper);

/// Write policy: fold one detached hidden state into the running mean.
///   hbar0 <- (c * hbar0 + h0) / (c + 1),  c <- c + 1
void write_state(StateEntry& entry, const Vec& h0);

/// Propagate policy, run at each epoch end. For entries with c >= 1:
///   mu0 <- (delta * mu0 + c * hbar0) / (delta + c),  hbar0 <- 0,  c <- 0
/// Entries that received no writes are left untouched.
void propagate_epoch(StateMap& map);

/// Closed form of mu0 at the start of epoch `epochs`, assuming the same write
/// count c every epoch. hbar_per_epoch[e-1] is the epoch-e running mean.
///   E = 1 -> 0,  E = 2 -> hbar<1>,
///   E > 2 -> delta^(E-2) hbar<1> / (delta+c)^(E-2)
///            + sum_{e=3..E} delta^(E-e) c hbar<e-1> / (delta+c)^(E-e+1)
/// (0^0 := 1, so delta = 0 keeps only the most recent epoch.)
Vec closed_form_mu0(const std::vector<Vec>& hbar_per_epoch, std::int64_t count, int keeper,
                    std::size_t epochs);

/// Debug dump, one row per entry: epoch,entity,T,c,norm_mu0,norm_hbar0
void dump_state_map(const StateMap& map, std::size_t epoch, std::ostream& os);

}  // namespace mptt
