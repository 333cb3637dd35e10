#include "mptt/memory.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "mptt/errors.hpp"

namespace mptt {

std::ostream& operator<<(std::ostream& os, const SequenceId& id) {
  return os << id.entity << ":" << id.initial_step;
}

KeyMap build_key_map(const std::vector<SequenceId>& ids, std::size_t window) {
  if (window == 0) throw std::invalid_argument("build_key_map: window must be positive");
  std::vector<SequenceId> sorted = ids;
  std::sort(sorted.begin(), sorted.end());
  if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end())
    throw std::invalid_argument("build_key_map: duplicate sequence ids");

  const auto w = static_cast<std::int64_t>(window);
  KeyMap km;
  for (std::size_t i = 0; i < sorted.size(); ++i) {
    std::vector<SequenceId> keys;
    for (std::size_t j = i + 1; j < sorted.size(); ++j) {
      if (sorted[j].entity != sorted[i].entity) break;
      const std::int64_t gap = sorted[j].initial_step - sorted[i].initial_step;
      if (gap <= 0) continue;
      if (gap > w) break;
      keys.push_back(sorted[j]);
    }
    km.emplace(sorted[i], std::move(keys));
  }
  return km;
}

std::map<SequenceId, std::size_t> in_degrees(const KeyMap& key_map) {
  std::map<SequenceId, std::size_t> deg;
  for (const auto& [id, keys] : key_map) deg.emplace(id, 0);
  for (const auto& [id, keys] : key_map)
    for (const SequenceId& j : keys) deg[j] += 1;
  return deg;
}

StateMap init_state_map(const std::vector<SequenceId>& ids, std::size_t hidden, int keeper) {
  if (hidden == 0) throw std::invalid_argument("init_state_map: hidden size must be positive");
  if (keeper != 0 && keeper != 1)
    throw std::invalid_argument("init_state_map: message keeper must be 0 or 1");
  StateMap map;
  map.keeper = keeper;
  for (const SequenceId& id : ids) {
    StateEntry entry;
    entry.mu0.assign(hidden, 0.0);
    entry.hbar0.assign(hidden, 0.0);
    if (!map.entries.emplace(id, std::move(entry)).second)
      throw std::invalid_argument("init_state_map: duplicate sequence ids");
  }
  return map;
}

Vec read_message(const StateEntry& entry, int keeper) {
  if (keeper == 0 && entry.count == 0) return entry.mu0;
  const double d = static_cast<double>(keeper);
  const double c = static_cast<double>(entry.count);
  const double denom = d + c;
  Vec msg(entry.mu0.size());
  for (std::size_t i = 0; i < msg.size(); ++i)
    msg[i] = (d * entry.mu0[i] + c * entry.hbar0[i]) / denom;
  return msg;
}

void write_state(StateEntry& entry, const Vec& h0) {
  if (h0.size() != entry.hbar0.size())
    throw std::invalid_argument("write_state: hidden size mismatch");
  if (!all_finite(h0)) throw NumericError("write_state: non-finite hidden state");
  const double c = static_cast<double>(entry.count);
  for (std::size_t i = 0; i < h0.size(); ++i)
    entry.hbar0[i] = (c * entry.hbar0[i] + h0[i]) / (c + 1.0);
  entry.count += 1;
}

void propagate_epoch(StateMap& map) {
  for (auto& [id, entry] : map.entries) {
    if (entry.count < 1) continue;
    // The zero placeholder carries no information, so it gets weight 0 the
    // first time around; afterwards mu0 weighs in with the keeper value.
    const double d = entry.mu_filled ? static_cast<double>(map.keeper) : 0.0;
    const double c = static_cast<double>(entry.count);
    for (std::size_t i = 0; i < entry.mu0.size(); ++i)
      entry.mu0[i] = (d * entry.mu0[i] + c * entry.hbar0[i]) / (d + c);
    std::fill(entry.hbar0.begin(), entry.hbar0.end(), 0.0);
    entry.count = 0;
    entry.mu_filled = true;
  }
}

Vec closed_form_mu0(const std::vector<Vec>& hbar_per_epoch, std::int64_t count, int keeper,
                    std::size_t epochs) {
  if (epochs < 1) throw std::invalid_argument("closed_form_mu0: epochs must be >= 1");
  if (keeper != 0 && keeper != 1)
    throw std::invalid_argument("closed_form_mu0: message keeper must be 0 or 1");
  if (epochs >= 2 && hbar_per_epoch.size() < epochs - 1)
    throw std::invalid_argument("closed_form_mu0: need an hbar vector per completed epoch");

  const std::size_t h = hbar_per_epoch.empty() ? 0 : hbar_per_epoch[0].size();
  if (epochs == 1) return Vec(h, 0.0);
  if (epochs == 2) return hbar_per_epoch[0];

  const double d = static_cast<double>(keeper);
  const double c = static_cast<double>(count);
  const double e2 = static_cast<double>(epochs - 2);
  Vec mu(h, 0.0);
  const double lead = std::pow(d, e2) / std::pow(d + c, e2);
  for (std::size_t i = 0; i < h; ++i) mu[i] = lead * hbar_per_epoch[0][i];
  for (std::size_t e = 3; e <= epochs; ++e) {
    const double expo = static_cast<double>(epochs - e);
    const double coef = std::pow(d, expo) * c / std::pow(d + c, expo + 1.0);
    const Vec& hb = hbar_per_epoch[e - 2];
    for (std::size_t i = 0; i < h; ++i) mu[i] += coef * hb[i];
  }
  return mu;
}

void dump_state_map(const StateMap& map, std::size_t epoch, std::ostream& os) {
  for (const auto& [id, entry] : map.entries) {
    os << epoch << "," << id.entity << "," << id.initial_step << "," << entry.count << ","
       << norm2(entry.mu0) << "," << norm2(entry.hbar0) << "\n";
  }
}

}  // namespace mptt
