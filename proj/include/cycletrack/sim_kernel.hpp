#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <span>
#include <thread>
#include <vector>

#include "cycletrack/error.hpp"
#include "cycletrack/types.hpp"

#ifndef CYCLETRACK_SIM_TILE
#define CYCLETRACK_SIM_TILE 64
#endif

namespace cycletrack {

/// Dense cosine similarity matrix between a reference set (rows) and the
/// current frame's patches (columns). Values are float32 in [-1, 1].
struct SimilarityMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<float> values;

  float at(std::size_t r, std::size_t c) const { return values[r * cols + c]; }
};

inline int effective_workers(int requested) {
  if (requested > 0) return requested;
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : static_cast<int>(hw);
}

namespace kernel_detail {

// Fixed summation order: four strided f64 accumulators folded pairwise.
// The order depends only on d, never on which argument is ref vs cur, so
// cos(a, b) == cos(b, a) bitwise and results are schedule-independent.
inline double dot_f64(const float* a, const float* b, int d) {
  double acc0 = 0.0, acc1 = 0.0, acc2 = 0.0, acc3 = 0.0;
  int i = 0;
  for (; i + 4 <= d; i += 4) {
    acc0 += static_cast<double>(a[i]) * static_cast<double>(b[i]);
    acc1 += static_cast<double>(a[i + 1]) * static_cast<double>(b[i + 1]);
    acc2 += static_cast<double>(a[i + 2]) * static_cast<double>(b[i + 2]);
    acc3 += static_cast<double>(a[i + 3]) * static_cast<double>(b[i + 3]);
  }
  for (; i < d; ++i) acc0 += static_cast<double>(a[i]) * static_cast<double>(b[i]);
  return (acc0 + acc1) + (acc2 + acc3);
}

// Runs fn(begin, end) over [0, n) split into contiguous chunks, one per
// worker. Chunk boundaries depend only on (n, workers); each chunk writes a
// disjoint output range, so any worker count produces identical bits.
template <typename Fn>
void parallel_ranges(std::size_t n, int workers, Fn&& fn) {
  const int w = std::min<std::size_t>(std::max(workers, 1), std::max<std::size_t>(n, 1));
  if (w <= 1 || n == 0) {
    fn(std::size_t{0}, n);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(w));
  const std::size_t chunk = (n + w - 1) / w;
  for (int t = 0; t < w; ++t) {
    const std::size_t begin = static_cast<std::size_t>(t) * chunk;
    const std::size_t end = std::min(n, begin + chunk);
    if (begin >= end) break;
    pool.emplace_back([&fn, begin, end] { fn(begin, end); });
  }
  for (auto& th : pool) th.join();
}

}  // namespace kernel_detail

/// S[i][j] = dot(ref_i, cur_j). Inputs must already be unit vectors (grids
/// normalize on ingest). Blocked over rows/columns for cache reuse;
/// accumulation is f64 with a fixed order, stored as f32.
inline SimilarityMatrix cosine_similarity_matrix(VectorSetView ref, VectorSetView cur,
                                                 int workers = 0) {
  if (ref.dim != cur.dim) {
    raise(ErrorCode::dimension_mismatch,
          "reference dim " + std::to_string(ref.dim) + " != current dim " +
              std::to_string(cur.dim));
  }
  SimilarityMatrix s;
  s.rows = ref.count;
  s.cols = cur.count;
  s.values.assign(s.rows * s.cols, 0.0f);
  if (s.rows == 0 || s.cols == 0) return s;

  constexpr std::size_t tile = CYCLETRACK_SIM_TILE;
  const int d = ref.dim;
  const std::size_t row_tiles = (s.rows + tile - 1) / tile;

  kernel_detail::parallel_ranges(
      row_tiles, effective_workers(workers), [&](std::size_t tb, std::size_t te) {
        for (std::size_t rt = tb; rt < te; ++rt) {
          const std::size_t r0 = rt * tile;
          const std::size_t r1 = std::min(s.rows, r0 + tile);
          for (std::size_t c0 = 0; c0 < s.cols; c0 += tile) {
            const std::size_t c1 = std::min(s.cols, c0 + tile);
            for (std::size_t r = r0; r < r1; ++r) {
              const float* a = ref.data + r * static_cast<std::size_t>(d);
              float* out = s.values.data() + r * s.cols;
              for (std::size_t c = c0; c < c1; ++c) {
                out[c] = static_cast<float>(
                    kernel_detail::dot_f64(a, cur.data + c * static_cast<std::size_t>(d), d));
              }
            }
          }
        }
      });
  return s;
}

inline SimilarityMatrix transpose(const SimilarityMatrix& s) {
  SimilarityMatrix t;
  t.rows = s.cols;
  t.cols = s.rows;
  t.values.resize(s.values.size());
  for (std::size_t r = 0; r < s.rows; ++r) {
    for (std::size_t c = 0; c < s.cols; ++c) {
      t.values[c * t.cols + r] = s.values[r * s.cols + c];
    }
  }
  return t;
}

/// Index of the best column per row; ties go to the lowest index.
inline std::vector<std::size_t> row_argmax(const SimilarityMatrix& s) {
  if (s.rows == 0 || s.cols == 0) raise(ErrorCode::empty_matrix, "row_argmax on empty matrix");
  std::vector<std::size_t> best(s.rows, 0);
  for (std::size_t r = 0; r < s.rows; ++r) {
    const float* row = s.values.data() + r * s.cols;
    std::size_t arg = 0;
    float value = row[0];
    for (std::size_t c = 1; c < s.cols; ++c) {
      if (row[c] > value) {
        value = row[c];
        arg = c;
      }
    }
    best[r] = arg;
  }
  return best;
}

/// Index of the best row per column; ties go to the lowest index.
inline std::vector<std::size_t> col_argmax(const SimilarityMatrix& s) {
  if (s.rows == 0 || s.cols == 0) raise(ErrorCode::empty_matrix, "col_argmax on empty matrix");
  std::vector<std::size_t> best(s.cols, 0);
  std::vector<float> value(s.values.begin(), s.values.begin() + static_cast<std::ptrdiff_t>(s.cols));
  for (std::size_t r = 1; r < s.rows; ++r) {
    const float* row = s.values.data() + r * s.cols;
    for (std::size_t c = 0; c < s.cols; ++c) {
      if (row[c] > value[c]) {
        value[c] = row[c];
        best[c] = r;
      }
    }
  }
  return best;
}

/// Symmetric Euclidean distance matrix over integer grid coordinates,
/// row-major n x n.
inline std::vector<double> pairwise_euclidean(std::span<const GridPoint> points) {
  const std::size_t n = points.size();
  std::vector<double> d(n * n, 0.0);
  for (std::size_t a = 0; a < n; ++a) {
    for (std::size_t b = a + 1; b < n; ++b) {
      const double dr = points[a].row - points[b].row;
      const double dc = points[a].col - points[b].col;
      const double dist = std::sqrt(dr * dr + dc * dc);
      d[a * n + b] = dist;
      d[b * n + a] = dist;
    }
  }
  return d;
}

/// Indices of the k smallest scores, ordered by (score asc, index asc).
/// Returns everything if fewer than k scores exist.
inline std::vector<std::size_t> top_k_min(std::span<const double> scores, std::size_t k) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (scores[a] != scores[b]) return scores[a] < scores[b];
    return a < b;
  });
  if (order.size() > k) order.resize(k);
  return order;
}

}  // namespace cycletrack
