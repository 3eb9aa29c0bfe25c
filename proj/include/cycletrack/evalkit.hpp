#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <limits>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "cycletrack/error.hpp"
#include "cycletrack/segmenter.hpp"
#include "cycletrack/tensor_io.hpp"
#include "cycletrack/tracker.hpp"
#include "cycletrack/types.hpp"

namespace cycletrack {

/// One synthetic object: a rectangle of patches sharing a signature, moving
/// with constant velocity, optionally morphing in embedding space along a
/// fixed drift direction (the "deformation"), optionally visible only for a
/// window of frames, optionally deriving its signature from another object
/// (nested parts, decoys).
struct ObjectSpec {
  std::uint16_t label = 0;  // 0 = unlabeled texture
  int top = -1;             // -1 = auto-place
  int left = -1;
  int height = 4;
  int width = 4;
  double vel_row = 0.0;
  double vel_col = 0.0;
  double deform_amplitude = 0.0;
  int deform_period = 24;
  int visible_from = 0;
  int visible_until = std::numeric_limits<int>::max();           // exclusive
  std::vector<std::pair<int, int>> hidden;                       // occlusion windows [from, until)
  std::optional<std::size_t> derive_from;
  double derive_epsilon = 0.48432;  // cosine ~0.9 to the base signature
  std::optional<std::size_t> inside_of;
};

struct SynthSpec {
  int height = 0;
  int width = 0;
  int dim = 0;
  int frames = 0;
  std::uint64_t seed = 0;
  double noise_sigma = 0.0;
  double max_signature_cosine = 0.3;
  double fps = 10.0;
  std::string name = "synthetic";
  std::vector<ObjectSpec> objects;
};

struct SynthFrame {
  EmbeddingGrid grid;
  LabelMask labels;
};

namespace synth_detail {

// Box-Muller over the standardized mt19937_64 stream: std::normal_distribution
// is implementation-defined, this is not.
class Gaussian {
public:
  explicit Gaussian(std::mt19937_64& rng) : rng_(rng) {}

  double next() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = 0.0;
    do {
      u1 = uniform();
    } while (u1 <= 1e-300);
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * 3.14159265358979323846 * u2;
    spare_ = r * std::sin(theta);
    have_spare_ = true;
    return r * std::cos(theta);
  }

private:
  double uniform() {
    return static_cast<double>(rng_() >> 11) * 0x1.0p-53;
  }
  std::mt19937_64& rng_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

inline std::vector<float> random_unit(int dim, Gaussian& g) {
  std::vector<float> v(static_cast<std::size_t>(dim));
  double sq = 0.0;
  for (auto& x : v) {
    const double value = g.next();
    x = static_cast<float>(value);
    sq += value * value;
  }
  if (sq < 1e-20) return random_unit(dim, g);
  const float inv = static_cast<float>(1.0 / std::sqrt(sq));
  for (auto& x : v) x *= inv;
  return v;
}

inline double cosine(const std::vector<float>& a, const std::vector<float>& b) {
  double dot = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) dot += static_cast<double>(a[i]) * b[i];
  return dot;
}

inline std::vector<float> orthogonal_unit(const std::vector<float>& base, Gaussian& g) {
  for (int attempt = 0; attempt < 64; ++attempt) {
    std::vector<float> v = random_unit(static_cast<int>(base.size()), g);
    const double along = cosine(v, base);
    double sq = 0.0;
    for (std::size_t i = 0; i < v.size(); ++i) {
      v[i] -= static_cast<float>(along * base[i]);
      sq += static_cast<double>(v[i]) * v[i];
    }
    if (sq > 1e-12) {
      const float inv = static_cast<float>(1.0 / std::sqrt(sq));
      for (auto& x : v) x *= inv;
      return v;
    }
  }
  raise(ErrorCode::infeasible_spec, "cannot build an orthogonal direction (dim too small?)");
}

struct Rect {
  int top, left, height, width;
  bool contains(const Rect& other) const {
    return other.top >= top && other.left >= left && other.top + other.height <= top + height &&
           other.left + other.width <= left + width;
  }
  bool intersects(const Rect& other) const {
    return top < other.top + other.height && other.top < top + height &&
           left < other.left + other.width && other.left < left + width;
  }
};

inline Rect rect_at(const ObjectSpec& o, int resolved_top, int resolved_left, int frame) {
  return {resolved_top + static_cast<int>(std::llround(o.vel_row * frame)),
          resolved_left + static_cast<int>(std::llround(o.vel_col * frame)),
          o.height, o.width};
}

inline bool visible_at(const ObjectSpec& o, int frame) {
  if (frame < o.visible_from || frame >= o.visible_until) return false;
  for (const auto& [from, until] : o.hidden) {
    if (frame >= from && frame < until) return false;
  }
  return true;
}

}  // namespace synth_detail

/// Deterministic synthetic sequence: labeled moving rectangles over a
/// coherent background texture, Gaussian per-patch noise, ground-truth label
/// masks. The seed fully determines the output.
inline std::vector<SynthFrame> generate(const SynthSpec& spec) {
  using namespace synth_detail;
  if (spec.height <= 0 || spec.width <= 0 || spec.dim <= 0 || spec.frames <= 0) {
    raise(ErrorCode::infeasible_spec, "grid dims and frame count must be positive");
  }
  std::mt19937_64 rng(spec.seed);
  Gaussian gauss(rng);

  // Signatures: background first, then objects in declaration order.
  // Derived signatures sit at a controlled cosine to their base and skip the
  // separation constraint; everything else is rejection-sampled apart.
  const std::vector<float> background = random_unit(spec.dim, gauss);
  std::vector<std::vector<float>> signatures;
  for (std::size_t i = 0; i < spec.objects.size(); ++i) {
    const ObjectSpec& o = spec.objects[i];
    if (o.height <= 0 || o.width <= 0) {
      raise(ErrorCode::infeasible_spec, "object " + std::to_string(i) + " has empty extent");
    }
    if (o.derive_from) {
      if (*o.derive_from >= i) {
        raise(ErrorCode::infeasible_spec, "derive_from must reference an earlier object");
      }
      const std::vector<float>& base = signatures[*o.derive_from];
      const std::vector<float> u = orthogonal_unit(base, gauss);
      std::vector<float> sig(base.size());
      for (std::size_t c = 0; c < sig.size(); ++c) {
        sig[c] = base[c] + static_cast<float>(o.derive_epsilon) * u[c];
      }
      const double norm = std::sqrt(cosine(sig, sig));
      for (auto& x : sig) x = static_cast<float>(x / norm);
      signatures.push_back(std::move(sig));
      continue;
    }
    bool accepted = false;
    for (int attempt = 0; attempt < 10000 && !accepted; ++attempt) {
      std::vector<float> candidate = random_unit(spec.dim, gauss);
      bool separated = std::abs(cosine(candidate, background)) <= spec.max_signature_cosine;
      for (std::size_t j = 0; j < signatures.size() && separated; ++j) {
        if (spec.objects[j].derive_from) continue;
        separated = std::abs(cosine(candidate, signatures[j])) <= spec.max_signature_cosine;
      }
      if (separated) {
        signatures.push_back(std::move(candidate));
        accepted = true;
      }
    }
    if (!accepted) {
      raise(ErrorCode::infeasible_spec,
            "cannot satisfy signature separation " + std::to_string(spec.max_signature_cosine));
    }
  }

  std::vector<std::vector<float>> drift(spec.objects.size());
  for (std::size_t i = 0; i < spec.objects.size(); ++i) {
    if (spec.objects[i].deform_amplitude != 0.0) {
      drift[i] = orthogonal_unit(signatures[i], gauss);
    }
  }

  // Placement: explicit rects as given; auto rects sampled to stay in
  // bounds and clear of other objects over their whole visible span.
  std::vector<int> top(spec.objects.size()), left(spec.objects.size());
  auto feasible = [&](std::size_t i) {
    const ObjectSpec& o = spec.objects[i];
    for (int t = 0; t < spec.frames; ++t) {
      if (!visible_at(o, t)) continue;
      const Rect r = rect_at(o, top[i], left[i], t);
      if (r.top < 0 || r.left < 0 || r.top + r.height > spec.height ||
          r.left + r.width > spec.width) {
        return false;
      }
      for (std::size_t j = 0; j < i; ++j) {
        if (!visible_at(spec.objects[j], t)) continue;
        const Rect other = rect_at(spec.objects[j], top[j], left[j], t);
        const bool nested = (spec.objects[i].inside_of && *spec.objects[i].inside_of == j) ||
                            (spec.objects[j].inside_of && *spec.objects[j].inside_of == i);
        if (nested) {
          if (spec.objects[i].inside_of && *spec.objects[i].inside_of == j &&
              !other.contains(r)) {
            return false;
          }
          if (spec.objects[j].inside_of && *spec.objects[j].inside_of == i &&
              !r.contains(other)) {
            return false;
          }
        } else if (r.intersects(other)) {
          return false;
        }
      }
    }
    return true;
  };
  for (std::size_t i = 0; i < spec.objects.size(); ++i) {
    const ObjectSpec& o = spec.objects[i];
    if (o.top >= 0 && o.left >= 0) {
      top[i] = o.top;
      left[i] = o.left;
      if (!feasible(i)) {
        raise(ErrorCode::infeasible_spec,
              "object " + std::to_string(i) + " leaves the grid or collides");
      }
      continue;
    }
    bool placed = false;
    for (int attempt = 0; attempt < 1000 && !placed; ++attempt) {
      top[i] = static_cast<int>(rng() % static_cast<std::uint64_t>(
                                            std::max(1, spec.height - o.height + 1)));
      left[i] = static_cast<int>(rng() % static_cast<std::uint64_t>(
                                             std::max(1, spec.width - o.width + 1)));
      placed = feasible(i);
    }
    if (!placed) {
      raise(ErrorCode::infeasible_spec, "cannot auto-place object " + std::to_string(i));
    }
  }

  std::vector<SynthFrame> out;
  out.reserve(static_cast<std::size_t>(spec.frames));
  const std::size_t cells = static_cast<std::size_t>(spec.height) * spec.width;
  for (int t = 0; t < spec.frames; ++t) {
    std::vector<int> owner(cells, -1);
    LabelMask labels(spec.height, spec.width);
    for (std::size_t i = 0; i < spec.objects.size(); ++i) {
      const ObjectSpec& o = spec.objects[i];
      if (!visible_at(o, t)) continue;
      const Rect r = rect_at(o, top[i], left[i], t);
      for (int row = r.top; row < r.top + r.height; ++row) {
        for (int col = r.left; col < r.left + r.width; ++col) {
          const std::size_t cell = static_cast<std::size_t>(row) * spec.width + col;
          owner[cell] = static_cast<int>(i);  // later objects overwrite (nested parts)
          labels.labels[cell] = o.label;
        }
      }
    }

    std::vector<float> data(cells * static_cast<std::size_t>(spec.dim));
    for (std::size_t cell = 0; cell < cells; ++cell) {
      float* v = data.data() + cell * static_cast<std::size_t>(spec.dim);
      const int o = owner[cell];
      const std::vector<float>& sig = o < 0 ? background : signatures[static_cast<std::size_t>(o)];
      double beta = 0.0;
      if (o >= 0 && spec.objects[static_cast<std::size_t>(o)].deform_amplitude != 0.0) {
        const ObjectSpec& os = spec.objects[static_cast<std::size_t>(o)];
        beta = os.deform_amplitude *
               std::sin(2.0 * 3.14159265358979323846 * t / std::max(1, os.deform_period));
      }
      for (int c = 0; c < spec.dim; ++c) {
        double value = sig[static_cast<std::size_t>(c)];
        if (beta != 0.0) value += beta * drift[static_cast<std::size_t>(o)][static_cast<std::size_t>(c)];
        if (spec.noise_sigma > 0.0) value += spec.noise_sigma * gauss.next();
        v[c] = static_cast<float>(value);
      }
    }
    EmbeddingGrid grid(spec.height, spec.width, spec.dim, std::move(data), false);
    grid.normalize_patches();
    out.push_back({std::move(grid), std::move(labels)});
  }
  return out;
}

/// Writes a generated sequence as .egr/.lmk frames plus a manifest.
inline std::string write_sequence(const std::vector<SynthFrame>& frames,
                                  const std::string& directory, double fps = 10.0,
                                  const std::string& name = "synthetic") {
  namespace fs = std::filesystem;
  fs::create_directories(directory);
  SequenceManifest manifest;
  manifest.fps = fps;
  manifest.name = name;
  char buffer[32];
  for (std::size_t i = 0; i < frames.size(); ++i) {
    std::snprintf(buffer, sizeof(buffer), "frame_%04zu", i);
    const std::string stem(buffer);
    write_embedding_grid(frames[i].grid, (fs::path(directory) / (stem + ".egr")).string());
    write_label_mask(frames[i].labels, (fs::path(directory) / (stem + ".lmk")).string());
    manifest.frames.push_back({stem + ".egr", stem + ".lmk"});
  }
  const std::string manifest_path = (fs::path(directory) / "manifest.json").string();
  write_manifest(manifest, manifest_path);
  return manifest_path;
}

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

/// Spatio-temporal IoU of two frame-aligned mask tracks:
/// sum_t |a_t & b_t| / sum_t |a_t | b_t|. Frames empty on both sides
/// contribute nothing; two entirely empty tracks count as identical.
inline double st_iou(const std::vector<BinaryMask>& pred, const std::vector<BinaryMask>& gt) {
  if (pred.size() != gt.size()) {
    raise(ErrorCode::dimension_mismatch, "st_iou needs frame-aligned tracks");
  }
  std::uint64_t inter = 0, uni = 0;
  for (std::size_t t = 0; t < pred.size(); ++t) {
    if (pred[t].cells.size() != gt[t].cells.size()) {
      raise(ErrorCode::dimension_mismatch, "st_iou frame dims differ");
    }
    for (std::size_t i = 0; i < pred[t].cells.size(); ++i) {
      const bool a = pred[t].cells[i] != 0;
      const bool b = gt[t].cells[i] != 0;
      inter += (a && b) ? 1 : 0;
      uni += (a || b) ? 1 : 0;
    }
  }
  if (uni == 0) return 1.0;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

using TrackMap = std::map<std::uint16_t, std::vector<BinaryMask>>;

inline TrackMap tracks_from_labels(const std::vector<LabelMask>& labels) {
  TrackMap tracks;
  std::vector<std::uint16_t> ids;
  for (const LabelMask& frame : labels) {
    for (std::uint16_t id : frame.object_ids()) {
      if (!tracks.contains(id)) {
        tracks.emplace(id, std::vector<BinaryMask>());
      }
    }
  }
  for (auto& [id, masks] : tracks) {
    masks.reserve(labels.size());
    for (const LabelMask& frame : labels) {
      masks.push_back(object_mask(frame, id));
    }
  }
  return tracks;
}

inline std::vector<double> default_iou_thresholds() {
  std::vector<double> t;
  for (int i = 0; i < 10; ++i) t.push_back(0.5 + 0.05 * i);
  return t;
}

/// Class-agnostic average recall: greedy one-to-one matching of the top-n
/// predicted tracks (ranked by total area, a confidence stand-in) against
/// ground truth by st_iou, recall averaged over the IoU thresholds.
inline double ar_at_n(const TrackMap& pred, const TrackMap& gt, std::size_t n,
                      const std::vector<double>& thresholds = default_iou_thresholds()) {
  if (gt.empty()) return 1.0;
  if (pred.empty() || n == 0) return 0.0;

  std::vector<std::uint16_t> pred_ids;
  std::vector<std::uint64_t> pred_area;
  for (const auto& [id, masks] : pred) {
    pred_ids.push_back(id);
    std::uint64_t area = 0;
    for (const BinaryMask& m : masks) area += static_cast<std::uint64_t>(m.area());
    pred_area.push_back(area);
  }
  std::vector<std::size_t> order(pred_ids.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (pred_area[a] != pred_area[b]) return pred_area[a] > pred_area[b];
    return pred_ids[a] < pred_ids[b];
  });
  if (order.size() > n) order.resize(n);

  std::vector<std::uint16_t> gt_ids;
  for (const auto& [id, masks] : gt) gt_ids.push_back(id);

  std::vector<std::vector<double>> iou(order.size(), std::vector<double>(gt_ids.size(), 0.0));
  for (std::size_t p = 0; p < order.size(); ++p) {
    const auto& pred_masks = pred.at(pred_ids[order[p]]);
    for (std::size_t g = 0; g < gt_ids.size(); ++g) {
      iou[p][g] = st_iou(pred_masks, gt.at(gt_ids[g]));
    }
  }

  double recall_sum = 0.0;
  for (double threshold : thresholds) {
    std::vector<bool> taken(gt_ids.size(), false);
    std::size_t matched = 0;
    for (std::size_t p = 0; p < order.size(); ++p) {
      int best = -1;
      double best_iou = threshold;
      for (std::size_t g = 0; g < gt_ids.size(); ++g) {
        if (taken[g]) continue;
        if (iou[p][g] >= best_iou && (best < 0 || iou[p][g] > best_iou)) {
          best = static_cast<int>(g);
          best_iou = iou[p][g];
        }
      }
      if (best >= 0) {
        taken[static_cast<std::size_t>(best)] = true;
        ++matched;
      }
    }
    recall_sum += static_cast<double>(matched) / static_cast<double>(gt_ids.size());
  }
  return recall_sum / static_cast<double>(thresholds.size());
}

/// Counts frames where a ground-truth object's best-overlapping predicted id
/// (frame IoU >= 0.5) differs from its last assigned id. Frames without a
/// qualified overlap leave the assignment unchanged.
inline int id_switches(const TrackMap& pred, const TrackMap& gt) {
  int switches = 0;
  for (const auto& [gt_id, gt_masks] : gt) {
    int assigned = -1;
    for (std::size_t t = 0; t < gt_masks.size(); ++t) {
      int best = -1;
      float best_iou = 0.5f;
      for (const auto& [pred_id, pred_masks] : pred) {
        if (t >= pred_masks.size()) continue;
        const float iou = mask_iou(pred_masks[t], gt_masks[t]);
        if (iou >= best_iou && (best < 0 || iou > best_iou)) {
          best = pred_id;
          best_iou = iou;
        }
      }
      if (best < 0) continue;
      if (assigned >= 0 && best != assigned) ++switches;
      assigned = best;
    }
  }
  return switches;
}

struct CycleReport {
  double mean_iou = 0.0;
  std::vector<std::uint16_t> evaluated;  // ids compared at frame 0
  std::vector<std::uint16_t> excluded;   // ids lost before the last frame
};

/// Forward-backward diagnostic: reruns the tracker over the reversed frames,
/// seeded with the forward run's last-frame masks, and compares the backward
/// run's final masks against the forward run's first-frame masks.
inline CycleReport cycle_consistency(const std::vector<EmbeddingGrid>& frames,
                                     const std::vector<LabelMask>& forward_labels,
                                     const TrackerConfig& config) {
  if (frames.size() != forward_labels.size() || frames.empty()) {
    raise(ErrorCode::dimension_mismatch, "cycle_consistency needs the forward run's frames");
  }
  CycleReport report;
  const LabelMask& first = forward_labels.front();
  const LabelMask& last = forward_labels.back();
  const auto last_ids = last.object_ids();
  for (std::uint16_t id : first.object_ids()) {
    if (std::find(last_ids.begin(), last_ids.end(), id) != last_ids.end()) {
      report.evaluated.push_back(id);
    } else {
      report.excluded.push_back(id);
    }
  }
  if (report.evaluated.empty()) return report;

  std::vector<EmbeddingGrid> reversed(frames.rbegin(), frames.rend());
  const SequenceResult backward = run_frames(reversed, last, config);
  const LabelMask& back_final = backward.labels.back();

  double sum = 0.0;
  for (std::uint16_t id : report.evaluated) {
    sum += mask_iou(object_mask(back_final, id), object_mask(first, id));
  }
  report.mean_iou = sum / static_cast<double>(report.evaluated.size());
  return report;
}

struct EvalReport {
  std::map<std::uint16_t, double> per_object_iou;     // gt id -> mean frame IoU
  std::map<std::uint16_t, double> per_object_st_iou;  // gt id -> st_iou of matched pred
  std::map<std::uint16_t, int> matched_pred;          // gt id -> pred id (-1 = none)
  double mean_st_iou = 0.0;
  double ar = 0.0;
  std::size_t ar_n = 100;
  int id_switch_count = 0;
  std::optional<double> cycle_consistency_iou;
};

/// Matches predictions to ground truth greedily by st_iou (one-to-one) and
/// aggregates the metric suite over the matched pairs.
inline EvalReport evaluate(const std::vector<LabelMask>& pred_labels,
                           const std::vector<LabelMask>& gt_labels, std::size_t ar_n = 100) {
  if (pred_labels.size() != gt_labels.size()) {
    raise(ErrorCode::dimension_mismatch, "prediction and ground truth frame counts differ");
  }
  const TrackMap pred = tracks_from_labels(pred_labels);
  const TrackMap gt = tracks_from_labels(gt_labels);

  struct Candidate {
    double iou;
    std::uint16_t gt_id;
    std::uint16_t pred_id;
  };
  std::vector<Candidate> candidates;
  for (const auto& [gt_id, gt_masks] : gt) {
    for (const auto& [pred_id, pred_masks] : pred) {
      candidates.push_back({st_iou(pred_masks, gt_masks), gt_id, pred_id});
    }
  }
  std::sort(candidates.begin(), candidates.end(), [](const Candidate& a, const Candidate& b) {
    if (a.iou != b.iou) return a.iou > b.iou;
    if (a.gt_id != b.gt_id) return a.gt_id < b.gt_id;
    return a.pred_id < b.pred_id;
  });

  EvalReport report;
  report.ar_n = ar_n;
  std::map<std::uint16_t, std::uint16_t> match;
  std::vector<std::uint16_t> used_pred;
  for (const Candidate& c : candidates) {
    if (c.iou <= 0.0) break;
    if (match.contains(c.gt_id)) continue;
    if (std::find(used_pred.begin(), used_pred.end(), c.pred_id) != used_pred.end()) continue;
    match.emplace(c.gt_id, c.pred_id);
    used_pred.push_back(c.pred_id);
  }

  double st_sum = 0.0;
  for (const auto& [gt_id, gt_masks] : gt) {
    const auto it = match.find(gt_id);
    if (it == match.end()) {
      report.per_object_iou[gt_id] = 0.0;
      report.per_object_st_iou[gt_id] = 0.0;
      report.matched_pred[gt_id] = -1;
      continue;
    }
    const auto& pred_masks = pred.at(it->second);
    report.matched_pred[gt_id] = it->second;
    report.per_object_st_iou[gt_id] = st_iou(pred_masks, gt_masks);
    st_sum += report.per_object_st_iou[gt_id];

    double iou_sum = 0.0;
    std::size_t counted = 0;
    for (std::size_t t = 0; t < gt_masks.size(); ++t) {
      const bool any = !gt_masks[t].empty_mask() || !pred_masks[t].empty_mask();
      if (!any) continue;
      iou_sum += mask_iou(pred_masks[t], gt_masks[t]);
      ++counted;
    }
    report.per_object_iou[gt_id] = counted == 0 ? 1.0 : iou_sum / static_cast<double>(counted);
  }
  report.mean_st_iou = gt.empty() ? 1.0 : st_sum / static_cast<double>(gt.size());
  report.ar = ar_at_n(pred, gt, ar_n);
  report.id_switch_count = id_switches(pred, gt);
  return report;
}

}  // namespace cycletrack
