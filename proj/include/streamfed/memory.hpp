#pragma once

#include "streamfed/model.hpp"

#include <cstdint>
#include <map>
#include <set>
#include <span>
#include <string>
#include <vector>

namespace streamfed {

enum class MemoryRule {
  FIFO,        // evict oldest by (arrival round, global index)
  ReplaceAll,  // contents become the incoming batch
  KeepAll,     // admit while below capacity, never evict
};

/// What an update rule is allowed to see about a cached sample.
struct SlotMeta {
  std::int64_t global_index = 0;
  int arrival_round = 0;
  int residence = 0;  // consecutive rounds present so far
};

struct MemorySlot {
  Example example;
  int residence = 0;
};

/// A client's bounded cache M_m^(t).
struct MemoryState {
  int capacity = 1;
  std::vector<MemorySlot> contents;  // insertion order, oldest first

  explicit MemoryState(int capacity_ = 1);
  std::size_t size() const noexcept { return contents.size(); }
  bool empty() const noexcept { return contents.empty(); }
};

/// Applies one round of the rule. Throws if the batch exceeds capacity.
MemoryState update(const MemoryState& state, MemoryRule rule,
                   std::span<const Example> batch);

/// I_m^(t): global indices currently cached.
std::set<std::int64_t> index_set(const MemoryState& state);

/// Metadata-only core of every rule: given the current slots and the
/// incoming batch (both as metadata), returns the retained global indices in
/// insertion order. Contents never reach this function.
std::vector<std::int64_t> retained_indices(MemoryRule rule, int capacity,
                                           std::span<const SlotMeta> current,
                                           std::span<const SlotMeta> incoming);

/// Replays the rule on an arrival schedule (batch sizes for rounds 1..T,
/// global indices assigned consecutively from 1) and returns, for every
/// sample that ever entered memory, the number of rounds it stays cached
/// within the horizon.
std::map<std::int64_t, int> plan_residence(MemoryRule rule, int capacity,
                                           std::span<const int> batch_sizes);

const char* to_string(MemoryRule rule);
MemoryRule memory_rule_from_string(const std::string& name);

}  // namespace streamfed
