#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "cycletrack/cycle_prop.hpp"
#include "cycletrack/error.hpp"
#include "cycletrack/types.hpp"

namespace cycletrack {

struct MemoryEntry {
  std::vector<float> embedding;
  std::uint16_t object_id = 0;
  int frame_of_origin = 0;
  std::uint64_t utilization = 0;
};

/// Capacity-bounded store of labeled reference patches. After frame 0 the
/// bank IS the reference set for propagation. Entries from the initial frame
/// are never evicted; entries inserted for a frame are protected while that
/// insertion runs; everything else is discarded by lowest utilization first.
///
/// Single-writer: a bank belongs to one tracking session. reference_view()
/// returns an immutable snapshot.
class MemoryBank {
public:
  /// Seeds the bank with every non-background patch of the first frame.
  MemoryBank(const EmbeddingGrid& first_frame, const LabelMask& labels, std::size_t capacity,
             int frame_index = 0)
      : capacity_(capacity), initial_frame_(frame_index), latest_frame_(frame_index) {
    if (labels.height != first_frame.height() || labels.width != first_frame.width()) {
      raise(ErrorCode::dimension_mismatch, "label mask does not match first frame");
    }
    dim_ = first_frame.dim();
    const int n = first_frame.patch_count();
    for (int i = 0; i < n; ++i) {
      const std::uint16_t id = labels.labels[static_cast<std::size_t>(i)];
      if (id == 0) continue;  // background is never stored
      const auto patch = first_frame.patch(i);
      entries_.push_back({{patch.begin(), patch.end()}, id, frame_index, 0});
    }
    if (entries_.size() > capacity_) {
      raise(ErrorCode::capacity_too_small,
            std::to_string(entries_.size()) + " first-frame object patches exceed capacity " +
                std::to_string(capacity_));
    }
  }

  std::size_t size() const { return entries_.size(); }
  std::size_t capacity() const { return capacity_; }
  int dim() const { return dim_; }
  int initial_frame() const { return initial_frame_; }
  int latest_frame() const { return latest_frame_; }
  const std::vector<MemoryEntry>& entries() const { return entries_; }

  /// +1 per occurrence: an entry serving as the reference endpoint of two
  /// pairs in one frame gains 2.
  void record_utilization(std::span<const std::size_t> used_ref_indices) {
    for (std::size_t index : used_ref_indices) {
      if (index >= entries_.size()) {
        raise(ErrorCode::index_out_of_range,
              "utilization index " + std::to_string(index) + " of " +
                  std::to_string(entries_.size()));
      }
      ++entries_[index].utilization;
    }
  }

  /// Admits the current-frame endpoint of each object-assigned pair that
  /// lies inside that object's predicted mask, evicting as needed first.
  /// Candidates are deduplicated per (object, patch): mutual pairs are
  /// one-to-one anyway, and duplicate endpoints from the argmax baseline
  /// would only burn capacity. Returns the number of entries added.
  std::size_t insert_frame(int frame_index, const EmbeddingGrid& current,
                           const std::map<std::uint16_t, std::vector<CyclePair>>& pairs_by_object,
                           const std::map<std::uint16_t, BinaryMask>& predicted_masks) {
    if (frame_index <= latest_frame_) {
      raise(ErrorCode::index_out_of_range,
            "insert_frame(" + std::to_string(frame_index) + ") not after latest frame " +
                std::to_string(latest_frame_));
    }

    std::vector<std::pair<std::uint16_t, std::size_t>> candidates;  // (object, patch index)
    std::set<std::pair<std::uint16_t, std::size_t>> seen;
    for (const auto& [object_id, pairs] : pairs_by_object) {
      const auto mask_it = predicted_masks.find(object_id);
      if (mask_it == predicted_masks.end()) continue;
      const BinaryMask& mask = mask_it->second;
      for (const CyclePair& pair : pairs) {
        if (!mask.at_index(pair.cur_index)) continue;
        if (seen.insert({object_id, pair.cur_index}).second) {
          candidates.push_back({object_id, pair.cur_index});
        }
      }
    }

    const std::size_t initial_count = count_frame(initial_frame_);
    if (initial_count + candidates.size() > capacity_) {
      raise(ErrorCode::insertion_overflow,
            "initial frame (" + std::to_string(initial_count) + ") plus frame " +
                std::to_string(frame_index) + " candidates (" +
                std::to_string(candidates.size()) + ") exceed capacity " +
                std::to_string(capacity_));
    }
    if (entries_.size() + candidates.size() > capacity_) {
      // The new frame's entries are not materialized yet, so only initial
      // patches need shielding here; previous frames compete normally.
      evict_internal(entries_.size() + candidates.size() - capacity_, std::nullopt);
    }

    for (const auto& [object_id, patch_index] : candidates) {
      const auto patch = current.patch(static_cast<int>(patch_index));
      entries_.push_back({{patch.begin(), patch.end()}, object_id, frame_index, 0});
    }
    latest_frame_ = frame_index;
    return candidates.size();
  }

  /// Directly admits one object's mask patches, used when re-detection
  /// births a tracklet mid-sequence and its patches must be referenceable
  /// from the very next frame. The new entries count as the latest frame.
  std::size_t seed_object(int frame_index, const EmbeddingGrid& grid, const BinaryMask& mask,
                          std::uint16_t object_id) {
    if (frame_index < latest_frame_) {
      raise(ErrorCode::index_out_of_range, "seed_object into a past frame");
    }
    std::vector<std::size_t> patches;
    for (std::size_t i = 0; i < mask.cells.size(); ++i) {
      if (mask.cells[i]) patches.push_back(i);
    }
    const std::size_t initial_count = count_frame(initial_frame_);
    if (initial_count + patches.size() > capacity_) {
      raise(ErrorCode::insertion_overflow, "seeded object does not fit beside initial frame");
    }
    if (entries_.size() + patches.size() > capacity_) {
      std::optional<int> protect;
      if (frame_index == latest_frame_) protect = latest_frame_;  // same-frame inserts stay
      evict_internal(entries_.size() + patches.size() - capacity_, protect);
    }
    for (std::size_t i : patches) {
      const auto patch = grid.patch(static_cast<int>(i));
      entries_.push_back({{patch.begin(), patch.end()}, object_id, frame_index, 0});
    }
    latest_frame_ = frame_index;
    return patches.size();
  }

  /// Removes exactly needed_slots entries in eviction order (utilization
  /// asc, frame asc, insertion order asc), skipping initial-frame and
  /// latest-frame entries. Returns the removed entries.
  std::vector<MemoryEntry> evict(std::size_t needed_slots) {
    return evict_internal(needed_slots, latest_frame_);
  }

  /// Stable snapshot usable as the propagation reference; index i of the
  /// view corresponds to entry i for utilization recording.
  ReferenceSet reference_view() const {
    if (entries_.empty()) raise(ErrorCode::empty_bank, "reference_view on empty bank");
    ReferenceSet ref;
    ref.dim = dim_;
    ref.embeddings.reserve(entries_.size() * static_cast<std::size_t>(dim_));
    ref.labels.reserve(entries_.size());
    for (const MemoryEntry& e : entries_) {
      ref.push_back(e.embedding, e.object_id);
    }
    return ref;
  }

private:
  std::size_t count_frame(int frame) const {
    return static_cast<std::size_t>(
        std::count_if(entries_.begin(), entries_.end(),
                      [&](const MemoryEntry& e) { return e.frame_of_origin == frame; }));
  }

  std::vector<MemoryEntry> evict_internal(std::size_t needed_slots,
                                          std::optional<int> protected_frame) {
    std::vector<std::size_t> evictable;
    for (std::size_t i = 0; i < entries_.size(); ++i) {
      const MemoryEntry& e = entries_[i];
      if (e.frame_of_origin == initial_frame_) continue;
      if (protected_frame && e.frame_of_origin == *protected_frame) continue;
      evictable.push_back(i);
    }
    if (needed_slots > evictable.size()) {
      raise(ErrorCode::nothing_evictable,
            "need " + std::to_string(needed_slots) + " slots but only " +
                std::to_string(evictable.size()) + " entries are evictable");
    }
    std::sort(evictable.begin(), evictable.end(), [&](std::size_t a, std::size_t b) {
      const MemoryEntry& ea = entries_[a];
      const MemoryEntry& eb = entries_[b];
      if (ea.utilization != eb.utilization) return ea.utilization < eb.utilization;
      if (ea.frame_of_origin != eb.frame_of_origin) return ea.frame_of_origin < eb.frame_of_origin;
      return a < b;
    });
    evictable.resize(needed_slots);

    std::vector<MemoryEntry> removed;
    removed.reserve(needed_slots);
    for (std::size_t i : evictable) removed.push_back(entries_[i]);

    std::sort(evictable.begin(), evictable.end());
    for (auto it = evictable.rbegin(); it != evictable.rend(); ++it) {
      entries_.erase(entries_.begin() + static_cast<std::ptrdiff_t>(*it));
    }
    return removed;
  }

  std::size_t capacity_ = 0;
  int dim_ = 0;
  int initial_frame_ = 0;
  int latest_frame_ = 0;
  std::vector<MemoryEntry> entries_;
};

}  // namespace cycletrack
