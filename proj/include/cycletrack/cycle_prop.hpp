#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "cycletrack/error.hpp"
#include "cycletrack/sim_kernel.hpp"
#include "cycletrack/types.hpp"

namespace cycletrack {

/// A mutually confirmed (reference patch, current patch) match: the current
/// patch is the reference row's argmax and the reference patch is the
/// current column's argmax.
struct CyclePair {
  std::size_t ref_index = 0;
  std::size_t cur_index = 0;
  float similarity = 0.0f;

  friend bool operator==(const CyclePair&, const CyclePair&) = default;
};

/// Up to k point coordinates prompting one object in the current frame.
struct PositionPrompt {
  std::uint16_t object_id = 0;
  std::vector<GridPoint> points;
  int k_config = 1;
};

/// Exactly {(i, j) : row_argmax(S)[i] == j and col_argmax(S)[j] == i} under
/// the lowest-index tie rule, sorted by ref_index. The result is a partial
/// matching: each row and each column appears at most once.
inline std::vector<CyclePair> mutual_pairs(const SimilarityMatrix& s) {
  const std::vector<std::size_t> best_col = row_argmax(s);
  const std::vector<std::size_t> best_row = col_argmax(s);
  std::vector<CyclePair> pairs;
  for (std::size_t i = 0; i < s.rows; ++i) {
    const std::size_t j = best_col[i];
    if (best_row[j] == i) {
      pairs.push_back({i, j, s.at(i, j)});
    }
  }
  return pairs;
}

/// One point per reference row: its best current patch, with no backward
/// confirmation. This is the max-similarity propagation baseline; duplicate
/// current points are kept so pile-ups weight the selection.
inline std::vector<CyclePair> argmax_pairs(const SimilarityMatrix& s) {
  const std::vector<std::size_t> best_col = row_argmax(s);
  std::vector<CyclePair> pairs;
  pairs.reserve(s.rows);
  for (std::size_t i = 0; i < s.rows; ++i) {
    pairs.push_back({i, best_col[i], s.at(i, best_col[i])});
  }
  return pairs;
}

struct ObjectPairs {
  std::map<std::uint16_t, std::vector<CyclePair>> by_object;
  std::vector<CyclePair> background;
};

/// A pair belongs to the object whose reference mask contains its reference
/// endpoint; label-0 pairs land in the background bucket.
inline ObjectPairs assign_pairs_to_objects(std::span<const CyclePair> pairs,
                                           std::span<const std::uint16_t> ref_labels) {
  ObjectPairs out;
  for (const CyclePair& p : pairs) {
    if (p.ref_index >= ref_labels.size()) {
      raise(ErrorCode::index_out_of_range,
            "pair references patch " + std::to_string(p.ref_index) + " of " +
                std::to_string(ref_labels.size()));
    }
    const std::uint16_t id = ref_labels[p.ref_index];
    if (id == 0) {
      out.background.push_back(p);
    } else {
      out.by_object[id].push_back(p);
    }
  }
  return out;
}

/// Picks the k most central current-frame points of one object's pairs.
/// Centrality is the mean Euclidean distance to all other points (0 for a
/// singleton); ties break on (centrality, cur_index).
inline PositionPrompt select_prompt(std::span<const CyclePair> pairs_for_object,
                                    int grid_width, int k, std::uint16_t object_id = 0) {
  if (pairs_for_object.empty()) {
    raise(ErrorCode::no_pairs, "object " + std::to_string(object_id) +
                                   " has no pairs in the current frame");
  }
  std::vector<GridPoint> points;
  points.reserve(pairs_for_object.size());
  for (const CyclePair& p : pairs_for_object) {
    points.push_back({static_cast<int>(p.cur_index) / grid_width,
                      static_cast<int>(p.cur_index) % grid_width});
  }

  const std::vector<double> dist = pairwise_euclidean(points);
  const std::size_t n = points.size();
  std::vector<double> centrality(n, 0.0);
  if (n > 1) {
    for (std::size_t i = 0; i < n; ++i) {
      double sum = 0.0;
      for (std::size_t j = 0; j < n; ++j) sum += dist[i * n + j];
      centrality[i] = sum / static_cast<double>(n - 1);
    }
  }

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (centrality[a] != centrality[b]) return centrality[a] < centrality[b];
    return pairs_for_object[a].cur_index < pairs_for_object[b].cur_index;
  });

  PositionPrompt prompt;
  prompt.object_id = object_id;
  prompt.k_config = k;
  for (std::size_t i = 0; i < n && static_cast<int>(prompt.points.size()) < k; ++i) {
    prompt.points.push_back(points[order[i]]);
  }
  return prompt;
}

struct PropagationConfig {
  int k_points = 1;
  // Pairs with similarity strictly below the floor are discarded. 0 keeps
  // everything non-negative.
  float min_similarity = 0.0f;
  bool mutual = true;
  int workers = 0;
};

struct PropagationResult {
  std::vector<CyclePair> pairs;  // all surviving pairs, sorted by ref_index
  ObjectPairs grouped;
  std::map<std::uint16_t, PositionPrompt> prompts;
  std::vector<std::uint16_t> missed;  // reference object ids with zero pairs
};

/// mutual_pairs -> assign -> select, against an arbitrary reference set
/// (one frame's object patches or a memory snapshot). Objects present in the
/// reference labels that end up with zero pairs are reported as misses.
inline PropagationResult propagate(const ReferenceSet& reference, const EmbeddingGrid& current,
                                   const PropagationConfig& config = {}) {
  if (reference.count() == 0) {
    raise(ErrorCode::empty_matrix, "propagation needs a non-empty reference");
  }
  const SimilarityMatrix s =
      cosine_similarity_matrix(reference.view(), VectorSetView::of(current), config.workers);

  std::vector<CyclePair> pairs = config.mutual ? mutual_pairs(s) : argmax_pairs(s);
  if (config.min_similarity > -1.0f) {
    std::erase_if(pairs, [&](const CyclePair& p) { return p.similarity < config.min_similarity; });
  }

  PropagationResult result;
  result.pairs = std::move(pairs);
  result.grouped = assign_pairs_to_objects(result.pairs, reference.labels);

  for (const auto& [id, object_pairs] : result.grouped.by_object) {
    result.prompts.emplace(
        id, select_prompt(object_pairs, current.width(), config.k_points, id));
  }

  std::vector<std::uint16_t> known(reference.labels.begin(), reference.labels.end());
  std::sort(known.begin(), known.end());
  known.erase(std::unique(known.begin(), known.end()), known.end());
  for (std::uint16_t id : known) {
    if (id != 0 && !result.grouped.by_object.contains(id)) {
      result.missed.push_back(id);
    }
  }
  return result;
}

}  // namespace cycletrack
