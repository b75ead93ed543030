#include "streamfed/memory.hpp"

#include "streamfed/error.hpp"

#include <algorithm>
#include <string>
#include <tuple>
#include <unordered_map>

namespace streamfed {
namespace {

bool older(const SlotMeta& a, const SlotMeta& b) {
  return std::tie(a.arrival_round, a.global_index) <
         std::tie(b.arrival_round, b.global_index);
}

}  // namespace

MemoryState::MemoryState(int capacity_) : capacity(capacity_) {
  if (capacity < 1) throw InvalidArgument("memory capacity must be >= 1");
}

std::vector<std::int64_t> retained_indices(MemoryRule rule, int capacity,
                                           std::span<const SlotMeta> current,
                                           std::span<const SlotMeta> incoming) {
  if (incoming.size() > static_cast<std::size_t>(capacity)) {
    throw InvalidArgument("batch of " + std::to_string(incoming.size()) +
                          " exceeds memory capacity " +
                          std::to_string(capacity));
  }
  std::vector<SlotMeta> arrivals(incoming.begin(), incoming.end());
  std::sort(arrivals.begin(), arrivals.end(), older);

  std::vector<std::int64_t> kept;
  switch (rule) {
    case MemoryRule::ReplaceAll:
      for (const auto& s : arrivals) kept.push_back(s.global_index);
      break;
    case MemoryRule::KeepAll: {
      for (const auto& s : current) kept.push_back(s.global_index);
      for (const auto& s : arrivals) {
        if (kept.size() >= static_cast<std::size_t>(capacity)) break;
        kept.push_back(s.global_index);
      }
      break;
    }
    case MemoryRule::FIFO: {
      std::vector<SlotMeta> all(current.begin(), current.end());
      all.insert(all.end(), arrivals.begin(), arrivals.end());
      std::stable_sort(all.begin(), all.end(), older);
      const std::size_t drop =
          all.size() > static_cast<std::size_t>(capacity)
              ? all.size() - static_cast<std::size_t>(capacity)
              : 0;
      for (std::size_t k = drop; k < all.size(); ++k) {
        kept.push_back(all[k].global_index);
      }
      break;
    }
  }
  return kept;
}

MemoryState update(const MemoryState& state, MemoryRule rule,
                   std::span<const Example> batch) {
  std::vector<SlotMeta> current;
  current.reserve(state.contents.size());
  for (const auto& slot : state.contents) {
    current.push_back({slot.example.global_index, slot.example.arrival_round,
                       slot.residence});
  }
  std::vector<SlotMeta> incoming;
  incoming.reserve(batch.size());
  for (const auto& z : batch) {
    incoming.push_back({z.global_index, z.arrival_round, 0});
  }

  const auto kept = retained_indices(rule, state.capacity, current, incoming);

  std::unordered_map<std::int64_t, const MemorySlot*> old_slots;
  for (const auto& slot : state.contents) {
    old_slots.emplace(slot.example.global_index, &slot);
  }
  std::unordered_map<std::int64_t, const Example*> new_examples;
  for (const auto& z : batch) {
    if (!new_examples.emplace(z.global_index, &z).second ||
        old_slots.count(z.global_index) != 0) {
      throw InvalidArgument("duplicate global index " +
                            std::to_string(z.global_index) + " in memory update");
    }
  }

  MemoryState next(state.capacity);
  next.contents.reserve(kept.size());
  for (const auto idx : kept) {
    if (auto it = old_slots.find(idx); it != old_slots.end()) {
      next.contents.push_back({it->second->example, it->second->residence + 1});
    } else {
      next.contents.push_back({*new_examples.at(idx), 1});
    }
  }
  return next;
}

std::set<std::int64_t> index_set(const MemoryState& state) {
  std::set<std::int64_t> out;
  for (const auto& slot : state.contents) out.insert(slot.example.global_index);
  return out;
}

std::map<std::int64_t, int> plan_residence(MemoryRule rule, int capacity,
                                           std::span<const int> batch_sizes) {
  std::map<std::int64_t, int> rounds_cached;
  std::vector<SlotMeta> current;
  std::int64_t next_index = 1;
  int round = 0;
  for (const int b : batch_sizes) {
    ++round;
    std::vector<SlotMeta> incoming;
    for (int k = 0; k < b; ++k) incoming.push_back({next_index++, round, 0});
    const auto kept = retained_indices(rule, capacity, current, incoming);
    std::unordered_map<std::int64_t, const SlotMeta*> previous;
    for (const auto& s : current) previous.emplace(s.global_index, &s);
    std::vector<SlotMeta> next;
    next.reserve(kept.size());
    for (const auto idx : kept) {
      ++rounds_cached[idx];
      if (auto it = previous.find(idx); it != previous.end()) {
        next.push_back({idx, it->second->arrival_round, it->second->residence + 1});
      } else {
        next.push_back({idx, round, 1});
      }
    }
    current = std::move(next);
  }
  return rounds_cached;
}

const char* to_string(MemoryRule rule) {
  switch (rule) {
    case MemoryRule::FIFO: return "FIFO";
    case MemoryRule::ReplaceAll: return "ReplaceAll";
    case MemoryRule::KeepAll: return "KeepAll";
  }
  return "?";
}

MemoryRule memory_rule_from_string(const std::string& name) {
  if (name == "FIFO") return MemoryRule::FIFO;
  if (name == "ReplaceAll") return MemoryRule::ReplaceAll;
  if (name == "KeepAll") return MemoryRule::KeepAll;
  throw InvalidArgument("unknown memory rule '" + name + "'");
}

}  // namespace streamfed
