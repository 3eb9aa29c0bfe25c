#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cycletrack/error.hpp"
#include "cycletrack/sim_kernel.hpp"
#include "cycletrack/types.hpp"

namespace cycletrack {

/// Per-object state carried frame to frame. The signature pins the object's
/// appearance, tau pins the granularity level the mask is grown at, and
/// area_ema smooths the mask size for diagnostics.
struct ObjectState {
  std::vector<float> signature;
  float tau = 0.85f;
  float area_ema = 0.0f;
};

struct MaskProposal {
  BinaryMask mask;
  float quality = 0.0f;    // predicted-IoU proxy in [0, 1]
  float stability = 0.0f;  // threshold-offset agreement in [0, 1]
  ObjectState state;
};

struct SegmenterConfig {
  float default_tau = 0.85f;
  float signature_keep = 0.7f;  // EMA weight on the previous signature
  float area_keep = 0.8f;
  float stability_delta = 0.05f;
};

namespace seg_detail {

inline std::vector<float> patch_similarities(const EmbeddingGrid& grid,
                                             std::span<const float> signature) {
  const int n = grid.patch_count();
  std::vector<float> sims(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    const double dot =
        kernel_detail::dot_f64(grid.patch(i).data(), signature.data(), grid.dim());
    sims[static_cast<std::size_t>(i)] =
        static_cast<float>(std::clamp(dot, -1.0, 1.0));
  }
  return sims;
}

inline std::vector<float> normalized_or_throw(std::vector<float> v) {
  double sq = 0.0;
  for (float x : v) sq += static_cast<double>(x) * x;
  const double norm = std::sqrt(sq);
  if (norm < kZeroNormFloor) {
    raise(ErrorCode::zero_vector, "degenerate signature (prompt embeddings cancel out)");
  }
  const float inv = static_cast<float>(1.0 / norm);
  for (float& x : v) x *= inv;
  return v;
}

inline std::vector<float> mean_embedding(const EmbeddingGrid& grid,
                                         std::span<const std::size_t> patch_indices) {
  std::vector<float> mean(static_cast<std::size_t>(grid.dim()), 0.0f);
  for (std::size_t index : patch_indices) {
    const auto patch = grid.patch(static_cast<int>(index));
    for (int c = 0; c < grid.dim(); ++c) mean[static_cast<std::size_t>(c)] += patch[c];
  }
  return mean;
}

// 4-neighborhood BFS over patches whose similarity clears tau, seeded at the
// prompt points. Seeds below tau do not enter.
inline BinaryMask grow_region(const EmbeddingGrid& grid, const std::vector<float>& sims,
                              std::span<const GridPoint> seeds, float tau) {
  BinaryMask mask(grid.height(), grid.width());
  std::deque<GridPoint> queue;
  for (const GridPoint& p : seeds) {
    const std::size_t index = static_cast<std::size_t>(grid.patch_index(p));
    if (sims[index] >= tau && !mask.cells[index]) {
      mask.cells[index] = 1;
      queue.push_back(p);
    }
  }
  while (!queue.empty()) {
    const GridPoint p = queue.front();
    queue.pop_front();
    constexpr int dr[] = {-1, 1, 0, 0};
    constexpr int dc[] = {0, 0, -1, 1};
    for (int k = 0; k < 4; ++k) {
      const GridPoint q{p.row + dr[k], p.col + dc[k]};
      if (!grid.in_bounds(q)) continue;
      const std::size_t index = static_cast<std::size_t>(grid.patch_index(q));
      if (mask.cells[index] || sims[index] < tau) continue;
      mask.cells[index] = 1;
      queue.push_back(q);
    }
  }
  return mask;
}

}  // namespace seg_detail

/// IoU between the global threshold sets at tau-delta and tau+delta against
/// the given signature (no connectivity, mirroring offset-threshold mask
/// comparison). Empty/empty counts as 1.0. Offsets are clamped into (0, 1].
inline float stability_score(const EmbeddingGrid& grid, std::span<const float> signature,
                             float tau, float delta) {
  const std::vector<float> sims = seg_detail::patch_similarities(grid, signature);
  const float lo = std::max(tau - delta, 1e-6f);
  const float hi = std::min(tau + delta, 1.0f);
  std::size_t in_lo = 0, in_hi = 0;
  for (float s : sims) {
    if (s >= lo) ++in_lo;
    if (s >= hi) ++in_hi;
  }
  if (in_lo == 0) return 1.0f;  // hi set is a subset, so both are empty
  return static_cast<float>(in_hi) / static_cast<float>(in_lo);
}

inline float mask_iou(const BinaryMask& a, const BinaryMask& b) {
  if (a.height != b.height || a.width != b.width) {
    raise(ErrorCode::dimension_mismatch, "mask_iou on masks of different dims");
  }
  std::size_t inter = 0, uni = 0;
  for (std::size_t i = 0; i < a.cells.size(); ++i) {
    const bool in_a = a.cells[i] != 0;
    const bool in_b = b.cells[i] != 0;
    inter += (in_a && in_b) ? 1 : 0;
    uni += (in_a || in_b) ? 1 : 0;
  }
  if (uni == 0) return 1.0f;
  return static_cast<float>(inter) / static_cast<float>(uni);
}

/// Decoder boundary. A neural decoder can be plugged in behind this; the
/// reference implementation below grows masks in embedding space. Returns
/// nullopt when no patch clears the granularity threshold (a per-frame
/// segmentation failure, handled by the tracker as a miss).
class Segmenter {
public:
  virtual ~Segmenter() = default;

  virtual std::optional<MaskProposal> segment(const EmbeddingGrid& grid,
                                              std::span<const GridPoint> points,
                                              const ObjectState* state) const = 0;
};

class ToySegmenter final : public Segmenter {
public:
  explicit ToySegmenter(const SegmenterConfig& config = {}) : config_(config) {}

  const SegmenterConfig& config() const { return config_; }

  std::optional<MaskProposal> segment(const EmbeddingGrid& grid,
                                      std::span<const GridPoint> points,
                                      const ObjectState* state) const override {
    if (points.empty()) {
      raise(ErrorCode::out_of_bounds, "segment needs at least one prompt point");
    }
    for (const GridPoint& p : points) {
      if (!grid.in_bounds(p)) {
        raise(ErrorCode::out_of_bounds,
              "prompt (" + std::to_string(p.row) + "," + std::to_string(p.col) +
                  ") outside " + std::to_string(grid.height()) + "x" +
                  std::to_string(grid.width()));
      }
    }

    std::vector<float> signature;
    float tau;
    float prev_area;
    if (state != nullptr) {
      signature = state->signature;
      tau = state->tau;
      prev_area = state->area_ema;
    } else {
      std::vector<float> mean(static_cast<std::size_t>(grid.dim()), 0.0f);
      for (const GridPoint& p : points) {
        const auto patch = grid.patch(p);
        for (int c = 0; c < grid.dim(); ++c) mean[static_cast<std::size_t>(c)] += patch[c];
      }
      signature = seg_detail::normalized_or_throw(std::move(mean));
      tau = config_.default_tau;
      prev_area = -1.0f;  // seeded from the first observation below
    }

    const std::vector<float> sims = seg_detail::patch_similarities(grid, signature);
    BinaryMask mask = seg_detail::grow_region(grid, sims, points, tau);

    std::vector<std::size_t> members;
    for (std::size_t i = 0; i < mask.cells.size(); ++i) {
      if (mask.cells[i]) members.push_back(i);
    }
    if (members.empty()) return std::nullopt;

    double member_sim_sum = 0.0;
    for (std::size_t i : members) member_sim_sum += sims[i];
    const float mean_sim = static_cast<float>(member_sim_sum / static_cast<double>(members.size()));

    MaskProposal proposal;
    proposal.quality = tau >= 1.0f ? 1.0f
                                   : std::clamp((mean_sim - tau) / (1.0f - tau), 0.0f, 1.0f);
    // mask members all cleared tau, so a non-empty mask never scores 0
    proposal.quality = std::max(proposal.quality, 1e-6f);
    proposal.stability = stability_score(grid, signature, tau, config_.stability_delta);

    std::vector<float> mask_mean =
        seg_detail::normalized_or_throw(seg_detail::mean_embedding(grid, members));
    std::vector<float> next_signature(signature.size());
    for (std::size_t c = 0; c < signature.size(); ++c) {
      next_signature[c] = config_.signature_keep * signature[c] +
                          (1.0f - config_.signature_keep) * mask_mean[c];
    }
    proposal.state.signature = seg_detail::normalized_or_throw(std::move(next_signature));
    proposal.state.tau = tau;
    const float area = static_cast<float>(members.size());
    proposal.state.area_ema =
        prev_area < 0.0f ? area : config_.area_keep * prev_area + (1.0f - config_.area_keep) * area;
    proposal.mask = std::move(mask);
    return proposal;
  }

private:
  SegmenterConfig config_;
};

inline std::unique_ptr<Segmenter> make_segmenter(const std::string& name,
                                                 const SegmenterConfig& config = {}) {
  if (name == "toy") return std::make_unique<ToySegmenter>(config);
  raise(ErrorCode::config_error, "unknown segmenter '" + name + "'");
}

/// Greedy NMS: proposals sorted by (quality desc, area desc, arrival asc);
/// a proposal survives iff its IoU with every kept one is below the
/// threshold.
inline std::vector<MaskProposal> mask_nms(std::vector<MaskProposal> proposals,
                                          float iou_threshold = 0.7f) {
  std::vector<std::size_t> order(proposals.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::vector<int> areas(proposals.size());
  for (std::size_t i = 0; i < proposals.size(); ++i) areas[i] = proposals[i].mask.area();
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (proposals[a].quality != proposals[b].quality)
      return proposals[a].quality > proposals[b].quality;
    if (areas[a] != areas[b]) return areas[a] > areas[b];
    return a < b;
  });

  std::vector<MaskProposal> kept;
  for (std::size_t i : order) {
    bool suppressed = false;
    for (const MaskProposal& k : kept) {
      if (mask_iou(proposals[i].mask, k.mask) >= iou_threshold) {
        suppressed = true;
        break;
      }
    }
    if (!suppressed) kept.push_back(std::move(proposals[i]));
  }
  return kept;
}

struct DetectConfig {
  int grid_side = 32;
  float q_min = 0.5f;
  float s_min = 0.8f;
  float nms_iou = 0.7f;
  // Singleton masks score a near-perfect quality against their own seed,
  // so unstructured noise needs an area floor to yield zero proposals.
  int min_mask_patches = 2;
};

/// Whole-frame proposal generation: a grid_side x grid_side lattice of
/// stateless single-point prompts, quality/stability filtering, then NMS.
inline std::vector<MaskProposal> grid_detect(const EmbeddingGrid& grid,
                                             const Segmenter& segmenter,
                                             const DetectConfig& config = {}) {
  const int g_h = std::min(config.grid_side, grid.height());
  const int g_w = std::min(config.grid_side, grid.width());
  std::vector<MaskProposal> proposals;
  for (int i = 0; i < g_h; ++i) {
    const int row = static_cast<int>((static_cast<double>(i) + 0.5) * grid.height() / g_h);
    for (int j = 0; j < g_w; ++j) {
      const int col = static_cast<int>((static_cast<double>(j) + 0.5) * grid.width() / g_w);
      const GridPoint point{row, col};
      std::optional<MaskProposal> proposal = segmenter.segment(grid, {&point, 1}, nullptr);
      if (!proposal) continue;
      if (proposal->quality < config.q_min || proposal->stability < config.s_min) continue;
      if (proposal->mask.area() < config.min_mask_patches) continue;
      proposals.push_back(std::move(*proposal));
    }
  }
  return mask_nms(std::move(proposals), config.nms_iou);
}

/// Builds a carried state from a known mask (semi-supervised start, cycle
/// seeding). tau is placed midway between the weakest in-mask similarity and
/// the strongest outside similarity so the grown mask reproduces the given
/// granularity; when the two overlap the in-mask minimum wins.
inline ObjectState state_from_mask(const EmbeddingGrid& grid, const BinaryMask& mask,
                                   const SegmenterConfig& config = {}) {
  if (mask.height != grid.height() || mask.width != grid.width()) {
    raise(ErrorCode::dimension_mismatch, "state_from_mask dims do not match grid");
  }
  std::vector<std::size_t> members;
  for (std::size_t i = 0; i < mask.cells.size(); ++i) {
    if (mask.cells[i]) members.push_back(i);
  }
  if (members.empty()) raise(ErrorCode::no_pairs, "state_from_mask on an empty mask");

  ObjectState state;
  state.signature = seg_detail::normalized_or_throw(seg_detail::mean_embedding(grid, members));
  const std::vector<float> sims = seg_detail::patch_similarities(grid, state.signature);

  float min_inside = 1.0f;
  float max_outside = -1.0f;
  for (std::size_t i = 0; i < sims.size(); ++i) {
    if (mask.cells[i]) {
      min_inside = std::min(min_inside, sims[i]);
    } else {
      max_outside = std::max(max_outside, sims[i]);
    }
  }
  float tau = max_outside < min_inside ? 0.5f * (min_inside + max_outside) : min_inside;
  state.tau = std::clamp(tau, 0.05f, 0.999f);
  state.area_ema = static_cast<float>(members.size());
  return state;
}

}  // namespace cycletrack
