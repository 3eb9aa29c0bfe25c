#pragma once

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "cycletrack/cycle_prop.hpp"
#include "cycletrack/error.hpp"
#include "cycletrack/memory_bank.hpp"
#include "cycletrack/segmenter.hpp"
#include "cycletrack/sim_kernel.hpp"
#include "cycletrack/types.hpp"

namespace cycletrack {

/// Persistent identity record of one tracked object.
struct Tracklet {
  std::uint16_t id = 0;
  ObjectState state;
  std::map<int, BinaryMask> masks;  // frame -> resolved mask; absent frame = miss
  int out_counter = 0;
  bool alive = true;
  int birth_frame = 0;
  int death_frame = -1;  // -1 while alive
};

struct TrackerConfig {
  int k_points = 1;            // prompt points per object
  int redetect_interval = 5;   // frames between object-in sweeps
  int out_limit = 10;          // consecutive out-frames before permanent removal
  float new_object_iou = 0.5f; // strictly-below threshold for admitting proposals
  std::size_t memory_capacity = 0;  // 0 -> 8 x patches per frame
  int grid_side = 32;
  float q_min = 0.5f;
  float s_min = 0.8f;
  float nms_iou = 0.7f;
  int min_mask_patches = 2;
  float min_pair_similarity = 0.0f;
  std::string segmenter = "toy";
  SegmenterConfig segmenter_config;
  int workers = 0;

  // Ablation switches.
  bool disable_memory = false;
  bool disable_cycle_pairs = false;
  bool disable_object_state = false;
};

inline void validate_config(const TrackerConfig& c) {
  if (c.k_points < 1 || c.k_points > 5) {
    raise(ErrorCode::config_error, "k_points must be in 1..5");
  }
  if (c.redetect_interval < 1 || c.out_limit < 1 || c.grid_side < 1) {
    raise(ErrorCode::config_error, "intervals and grid_side must be positive");
  }
  if (!(c.new_object_iou > 0.0f && c.new_object_iou < 1.0f)) {
    raise(ErrorCode::config_error, "new_object_iou must be inside (0, 1)");
  }
  if (!(c.segmenter_config.default_tau > 0.0f && c.segmenter_config.default_tau <= 1.0f)) {
    raise(ErrorCode::config_error, "default_tau must be inside (0, 1]");
  }
}

struct FrameStats {
  int frame = 0;
  double millis = 0.0;
  std::size_t pairs = 0;
  std::size_t inserted = 0;
  std::size_t alive = 0;
};

/// A re-detection proposal becomes a tracklet only when its best IoU against
/// every propagated mask is strictly below the threshold.
inline bool object_in_admits(float max_iou, float threshold) { return max_iou < threshold; }

struct SequenceResult {
  std::vector<LabelMask> labels;                 // one per frame
  std::vector<Tracklet> tracklets;
  std::vector<std::string> frame_errors;         // "" when the frame was clean
  bool no_objects_detected = false;
  std::vector<FrameStats> stats;
};

/// Per-sequence orchestration: detect on the first frame (or adopt given
/// masks), then per frame propagate -> segment -> resolve overlaps ->
/// update memory -> object-out -> periodic object-in.
///
/// Strictly sequential over frames; distinct sessions are independent.
class TrackerSession {
public:
  TrackerSession(const EmbeddingGrid& frame0, const TrackerConfig& config)
      : TrackerSession(frame0, std::nullopt, config) {}

  TrackerSession(const EmbeddingGrid& frame0, const std::optional<LabelMask>& first_labels,
                 const TrackerConfig& config)
      : config_(config) {
    validate_config(config_);
    if (config_.memory_capacity == 0) {
      config_.memory_capacity = static_cast<std::size_t>(frame0.patch_count()) * 8;
    }
    segmenter_ = make_segmenter(config_.segmenter, config_.segmenter_config);

    LabelMask label0;
    if (first_labels) {
      // Semi-supervised start: adopt the given objects, skip detection.
      label0 = *first_labels;
      if (label0.height != frame0.height() || label0.width != frame0.width()) {
        raise(ErrorCode::dimension_mismatch, "first-frame labels do not match the frame");
      }
      for (std::uint16_t id : label0.object_ids()) {
        Tracklet t;
        t.id = id;
        const BinaryMask mask = object_mask(label0, id);
        t.state = state_from_mask(frame0, mask, config_.segmenter_config);
        t.masks[0] = mask;
        tracklets_.push_back(std::move(t));
        next_id_ = std::max<int>(next_id_, id + 1);
      }
    } else {
      const DetectConfig detect{config_.grid_side, config_.q_min, config_.s_min,
                                config_.nms_iou, config_.min_mask_patches};
      std::vector<MaskProposal> proposals = grid_detect(frame0, *segmenter_, detect);
      std::vector<std::uint16_t> ids;
      std::vector<BinaryMask> raw;
      std::vector<ObjectState> states;
      for (MaskProposal& p : proposals) {
        ids.push_back(static_cast<std::uint16_t>(next_id_++));
        raw.push_back(std::move(p.mask));
        states.push_back(std::move(p.state));
      }
      label0 = resolve_overlaps(frame0, ids, raw, states);
      for (std::size_t i = 0; i < ids.size(); ++i) {
        const BinaryMask resolved = object_mask(label0, ids[i]);
        if (resolved.empty_mask()) continue;  // fully shadowed by a better proposal
        Tracklet t;
        t.id = ids[i];
        t.state = states[i];
        t.masks[0] = resolved;
        tracklets_.push_back(std::move(t));
      }
    }

    no_objects_detected_ = tracklets_.empty();
    if (!config_.disable_memory) {
      memory_.emplace(frame0, label0, config_.memory_capacity, 0);
    }
    prev_grid_ = frame0;
    labels_.push_back(std::move(label0));
  }

  int frame_count() const { return static_cast<int>(labels_.size()); }
  bool no_objects_detected() const { return no_objects_detected_; }
  const std::vector<Tracklet>& tracklets() const { return tracklets_; }
  const std::vector<LabelMask>& labels() const { return labels_; }
  const std::vector<std::string>& frame_errors() const { return frame_errors_; }
  const std::vector<FrameStats>& stats() const { return stats_; }
  const MemoryBank* memory() const { return memory_ ? &*memory_ : nullptr; }

  /// Advances one frame and returns its resolved label map.
  const LabelMask& step(const EmbeddingGrid& frame) {
    const auto t0 = std::chrono::steady_clock::now();
    const int frame_index = frame_count();
    if (frame.height() != prev_grid_.height() || frame.width() != prev_grid_.width() ||
        frame.dim() != prev_grid_.dim()) {
      raise(ErrorCode::dimension_mismatch, "frame geometry changed mid-sequence");
    }
    std::string error;
    FrameStats stats;
    stats.frame = frame_index;
    LabelMask label(frame.height(), frame.width());

    // A frame failure is recorded and the run continues; state from the
    // phases that completed stands.
    try {
      // (1) Propagate position prompts from the reference.
      const ReferenceSet reference = build_reference();
      std::optional<PropagationResult> prop;
      if (reference.count() > 0) {
        PropagationConfig pc;
        pc.k_points = config_.k_points;
        pc.min_similarity = config_.min_pair_similarity;
        pc.mutual = !config_.disable_cycle_pairs;
        pc.workers = config_.workers;
        prop = propagate(reference, frame, pc);
        stats.pairs = prop->pairs.size();
      }

      // (2) Segment every alive tracklet that got a prompt.
      std::vector<std::uint16_t> ids;
      std::vector<BinaryMask> raw;
      std::vector<ObjectState> states;
      std::vector<Tracklet*> processed;
      for (Tracklet& t : tracklets_) {
        if (!t.alive) continue;
        processed.push_back(&t);
        if (!prop) continue;
        const auto it = prop->prompts.find(t.id);
        if (it == prop->prompts.end()) continue;  // miss: no pairs this frame
        const ObjectState* state = config_.disable_object_state ? nullptr : &t.state;
        std::optional<MaskProposal> out =
            segmenter_->segment(frame, it->second.points, state);
        if (!out) continue;  // miss: nothing cleared the granularity threshold
        t.state = out->state;
        ids.push_back(t.id);
        raw.push_back(std::move(out->mask));
        states.push_back(t.state);
      }

      // (3) Contested patches go to the most similar signature.
      label = resolve_overlaps(frame, ids, raw, states);
      std::map<std::uint16_t, BinaryMask> resolved;
      for (std::uint16_t id : ids) {
        BinaryMask mask = object_mask(label, id);
        if (mask.empty_mask()) continue;  // fully ceded its claim: a miss
        resolved.emplace(id, std::move(mask));
      }
      for (Tracklet* t : processed) {
        const auto it = resolved.find(t->id);
        if (it != resolved.end()) t->masks[frame_index] = it->second;
      }

      // (4) Utilization bookkeeping and memory insertion.
      if (memory_ && prop) {
        std::vector<std::size_t> used;
        std::map<std::uint16_t, std::vector<CyclePair>> alive_pairs;
        for (const auto& [id, pairs] : prop->grouped.by_object) {
          if (!is_alive(id)) continue;  // stale entries of removed objects
          alive_pairs.emplace(id, pairs);
          for (const CyclePair& p : pairs) used.push_back(p.ref_index);
        }
        memory_->record_utilization(used);
        try {
          stats.inserted = memory_->insert_frame(frame_index, frame, alive_pairs, resolved);
        } catch (const Error& e) {
          error = e.what();
        }
      }

      // (5) Object-out: automatic for missing masks, otherwise pooled-token
      // mutual matching against every tracklet token.
      run_object_out(frame, frame_index, processed, resolved);

      // (6) Object-in on re-detection frames.
      if (frame_index % config_.redetect_interval == 0) {
        run_object_in(frame, frame_index, label, resolved, error);
      }
    } catch (const Error& e) {
      error = e.what();
    }

    prev_grid_ = frame;
    labels_.push_back(std::move(label));
    for (const Tracklet& t : tracklets_) stats.alive += t.alive ? 1 : 0;
    stats.millis =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    stats_.push_back(stats);
    frame_errors_.push_back(error);
    return labels_.back();
  }

  SequenceResult result() const {
    SequenceResult r;
    r.labels = labels_;
    r.tracklets = tracklets_;
    r.frame_errors = frame_errors_;
    r.no_objects_detected = no_objects_detected_;
    r.stats = stats_;
    return r;
  }

private:
  bool is_alive(std::uint16_t id) const {
    for (const Tracklet& t : tracklets_) {
      if (t.id == id) return t.alive;
    }
    return false;
  }

  ReferenceSet build_reference() const {
    if (!config_.disable_memory) {
      if (memory_ && memory_->size() > 0) return memory_->reference_view();
      return {};
    }
    // Memory ablation: the previous frame's tracked objects are the whole
    // reference, so anything lost once is lost for good.
    return reference_from_frame(prev_grid_, labels_.back(), /*objects_only=*/true);
  }

  // ids arrive in ascending order, so keeping strict > on similarity hands
  // ties to the lower object id.
  LabelMask resolve_overlaps(const EmbeddingGrid& frame, const std::vector<std::uint16_t>& ids,
                             const std::vector<BinaryMask>& masks,
                             const std::vector<ObjectState>& states) const {
    LabelMask label(frame.height(), frame.width());
    const std::size_t cells = label.labels.size();
    for (std::size_t cell = 0; cell < cells; ++cell) {
      std::vector<std::size_t> claimants;
      for (std::size_t k = 0; k < ids.size(); ++k) {
        if (masks[k].cells[cell]) claimants.push_back(k);
      }
      if (claimants.empty()) continue;
      std::size_t winner = claimants.front();
      if (claimants.size() > 1) {
        double best = patch_signature_sim(frame, cell, states[winner]);
        for (std::size_t i = 1; i < claimants.size(); ++i) {
          const double sim = patch_signature_sim(frame, cell, states[claimants[i]]);
          if (sim > best) {
            best = sim;
            winner = claimants[i];
          }
        }
      }
      label.labels[cell] = ids[winner];
    }
    return label;
  }

  static double patch_signature_sim(const EmbeddingGrid& frame, std::size_t cell,
                                    const ObjectState& state) {
    return kernel_detail::dot_f64(frame.patch(static_cast<int>(cell)).data(),
                                  state.signature.data(), frame.dim());
  }

  std::optional<std::vector<float>> pooled_token(const EmbeddingGrid& grid,
                                                 const BinaryMask& mask) const {
    std::vector<std::size_t> members;
    for (std::size_t i = 0; i < mask.cells.size(); ++i) {
      if (mask.cells[i]) members.push_back(i);
    }
    if (members.empty()) return std::nullopt;
    std::vector<float> mean = seg_detail::mean_embedding(grid, members);
    return seg_detail::normalized_or_throw(std::move(mean));
  }

  std::optional<std::vector<float>> tracklet_token(std::uint16_t id) const {
    std::vector<float> mean(static_cast<std::size_t>(prev_grid_.dim()), 0.0f);
    std::size_t count = 0;
    if (memory_) {
      for (const MemoryEntry& e : memory_->entries()) {
        if (e.object_id != id) continue;
        for (std::size_t c = 0; c < mean.size(); ++c) mean[c] += e.embedding[c];
        ++count;
      }
    } else {
      const LabelMask& prev = labels_.back();
      for (int i = 0; i < prev_grid_.patch_count(); ++i) {
        if (prev.labels[static_cast<std::size_t>(i)] != id) continue;
        const auto patch = prev_grid_.patch(i);
        for (int c = 0; c < prev_grid_.dim(); ++c) mean[static_cast<std::size_t>(c)] += patch[c];
        ++count;
      }
    }
    if (count == 0) return std::nullopt;
    return seg_detail::normalized_or_throw(std::move(mean));
  }

  void run_object_out(const EmbeddingGrid& frame, int frame_index,
                      const std::vector<Tracklet*>& processed,
                      const std::map<std::uint16_t, BinaryMask>& resolved) {
    std::vector<std::uint16_t> column_ids;
    std::vector<float> columns;
    for (Tracklet* t : processed) {
      if (auto token = tracklet_token(t->id)) {
        column_ids.push_back(t->id);
        columns.insert(columns.end(), token->begin(), token->end());
      }
    }

    for (Tracklet* t : processed) {
      bool out = true;
      const auto mask_it = resolved.find(t->id);
      if (mask_it != resolved.end() && !column_ids.empty()) {
        if (const auto token = pooled_token(frame, mask_it->second)) {
          std::size_t best = 0;
          double best_sim = -2.0;
          for (std::size_t c = 0; c < column_ids.size(); ++c) {
            const double sim = kernel_detail::dot_f64(
                token->data(), columns.data() + c * static_cast<std::size_t>(frame.dim()),
                frame.dim());
            if (sim > best_sim) {
              best_sim = sim;
              best = c;
            }
          }
          out = column_ids[best] != t->id;
        }
      }
      if (out) {
        if (++t->out_counter >= config_.out_limit) {
          t->alive = false;
          t->death_frame = frame_index;
        }
      } else {
        t->out_counter = 0;
      }
    }
  }

  void run_object_in(const EmbeddingGrid& frame, int frame_index, LabelMask& label,
                     std::map<std::uint16_t, BinaryMask>& resolved, std::string& error) {
    const DetectConfig detect{config_.grid_side, config_.q_min, config_.s_min,
                              config_.nms_iou, config_.min_mask_patches};
    std::vector<MaskProposal> proposals = grid_detect(frame, *segmenter_, detect);
    for (MaskProposal& p : proposals) {
      float max_iou = 0.0f;
      for (const auto& [id, mask] : resolved) {
        max_iou = std::max(max_iou, mask_iou(p.mask, mask));
      }
      if (!object_in_admits(max_iou, config_.new_object_iou)) continue;

      // Existing masks keep their patches; the newcomer claims the rest.
      BinaryMask claim = p.mask;
      for (std::size_t cell = 0; cell < claim.cells.size(); ++cell) {
        if (label.labels[cell] != 0) claim.cells[cell] = 0;
      }
      if (claim.empty_mask()) continue;

      Tracklet t;
      t.id = static_cast<std::uint16_t>(next_id_++);
      t.state = p.state;
      t.birth_frame = frame_index;
      t.masks[frame_index] = claim;
      for (std::size_t cell = 0; cell < claim.cells.size(); ++cell) {
        if (claim.cells[cell]) label.labels[cell] = t.id;
      }
      if (memory_) {
        try {
          memory_->seed_object(frame_index, frame, claim, t.id);
        } catch (const Error& e) {
          // the newcomer stays, it just cannot be referenced until re-seen
          error = e.what();
        }
      }
      resolved.emplace(t.id, std::move(claim));
      tracklets_.push_back(std::move(t));
    }
  }

  TrackerConfig config_;
  std::unique_ptr<Segmenter> segmenter_;
  std::optional<MemoryBank> memory_;
  std::vector<Tracklet> tracklets_;
  std::vector<LabelMask> labels_;
  std::vector<std::string> frame_errors_ = {""};  // frame 0 never fails
  std::vector<FrameStats> stats_;
  EmbeddingGrid prev_grid_;
  int next_id_ = 1;
  bool no_objects_detected_ = false;
};

/// Runs a whole in-memory sequence. Per-frame failures are recorded and the
/// run continues; identical inputs and config produce identical results.
inline SequenceResult run_frames(const std::vector<EmbeddingGrid>& frames,
                                 const std::optional<LabelMask>& first_labels,
                                 const TrackerConfig& config) {
  if (frames.empty()) raise(ErrorCode::config_error, "sequence needs at least one frame");
  TrackerSession session(frames.front(), first_labels, config);
  for (std::size_t i = 1; i < frames.size(); ++i) {
    session.step(frames[i]);
  }
  return session.result();
}

}  // namespace cycletrack
