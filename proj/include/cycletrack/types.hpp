#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "cycletrack/error.hpp"

namespace cycletrack {

constexpr double kZeroNormFloor = 1e-12;
constexpr double kUnitNormTolerance = 1e-5;

struct GridPoint {
  int row = 0;
  int col = 0;

  friend bool operator==(const GridPoint&, const GridPoint&) = default;
  friend auto operator<=>(const GridPoint&, const GridPoint&) = default;
};

/// H x W grid of d-dimensional patch embeddings for one frame.
/// Data is row-major, patch-major then channel. Vectors are expected to be
/// unit-norm once `normalized()` is true; ingest enforces that.
class EmbeddingGrid {
public:
  EmbeddingGrid() = default;

  EmbeddingGrid(int height, int width, int dim, std::vector<float> data,
                bool normalized = false)
      : height_(height), width_(width), dim_(dim), normalized_(normalized),
        data_(std::move(data)) {
    if (height_ <= 0 || width_ <= 0 || dim_ <= 0) {
      raise(ErrorCode::dimension_mismatch, "grid dimensions must be positive");
    }
    if (data_.size() != static_cast<std::size_t>(height_) * width_ * dim_) {
      raise(ErrorCode::dimension_mismatch,
            "data length " + std::to_string(data_.size()) + " != " +
                std::to_string(height_) + "x" + std::to_string(width_) + "x" +
                std::to_string(dim_));
    }
  }

  int height() const { return height_; }
  int width() const { return width_; }
  int dim() const { return dim_; }
  int patch_count() const { return height_ * width_; }
  bool normalized() const { return normalized_; }

  bool in_bounds(GridPoint p) const {
    return p.row >= 0 && p.row < height_ && p.col >= 0 && p.col < width_;
  }

  int patch_index(GridPoint p) const { return p.row * width_ + p.col; }
  GridPoint patch_point(int index) const { return {index / width_, index % width_}; }

  std::span<const float> patch(int index) const {
    return {data_.data() + static_cast<std::size_t>(index) * dim_,
            static_cast<std::size_t>(dim_)};
  }
  std::span<const float> patch(GridPoint p) const { return patch(patch_index(p)); }

  const std::vector<float>& data() const { return data_; }
  std::vector<float>& mutable_data() { return data_; }

  /// Rescales every patch to unit norm. Vectors with norm below the floor
  /// are rejected: cosine similarity is undefined on them.
  void normalize_patches() {
    const int n = patch_count();
    for (int i = 0; i < n; ++i) {
      float* v = data_.data() + static_cast<std::size_t>(i) * dim_;
      double sq = 0.0;
      for (int c = 0; c < dim_; ++c) sq += static_cast<double>(v[c]) * v[c];
      const double norm = std::sqrt(sq);
      if (norm < kZeroNormFloor) {
        raise(ErrorCode::zero_vector,
              "patch " + std::to_string(i) + " has near-zero norm");
      }
      if (std::abs(norm - 1.0) > kUnitNormTolerance) {
        const float inv = static_cast<float>(1.0 / norm);
        for (int c = 0; c < dim_; ++c) v[c] *= inv;
      }
    }
    normalized_ = true;
  }

private:
  int height_ = 0;
  int width_ = 0;
  int dim_ = 0;
  bool normalized_ = false;
  std::vector<float> data_;
};

/// Per-cell object ids; 0 is background. Ids need not be contiguous.
struct LabelMask {
  int height = 0;
  int width = 0;
  std::vector<std::uint16_t> labels;

  LabelMask() = default;
  LabelMask(int h, int w) : height(h), width(w), labels(static_cast<std::size_t>(h) * w, 0) {}
  LabelMask(int h, int w, std::vector<std::uint16_t> values)
      : height(h), width(w), labels(std::move(values)) {
    if (labels.size() != static_cast<std::size_t>(h) * w) {
      raise(ErrorCode::dimension_mismatch, "label payload does not match declared dims");
    }
  }

  std::uint16_t at(int row, int col) const {
    return labels[static_cast<std::size_t>(row) * width + col];
  }
  void set(int row, int col, std::uint16_t id) {
    labels[static_cast<std::size_t>(row) * width + col] = id;
  }

  std::vector<std::uint16_t> object_ids() const {
    std::vector<std::uint16_t> ids(labels.begin(), labels.end());
    std::sort(ids.begin(), ids.end());
    ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
    std::erase(ids, std::uint16_t{0});
    return ids;
  }

  friend bool operator==(const LabelMask&, const LabelMask&) = default;
};

/// Binary patch mask with the same geometry as its grid.
struct BinaryMask {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> cells;

  BinaryMask() = default;
  BinaryMask(int h, int w) : height(h), width(w), cells(static_cast<std::size_t>(h) * w, 0) {}

  bool at(int row, int col) const {
    return cells[static_cast<std::size_t>(row) * width + col] != 0;
  }
  bool at_index(std::size_t index) const { return cells[index] != 0; }
  void set(int row, int col, bool v = true) {
    cells[static_cast<std::size_t>(row) * width + col] = v ? 1 : 0;
  }

  int area() const {
    return static_cast<int>(std::count_if(cells.begin(), cells.end(),
                                          [](std::uint8_t c) { return c != 0; }));
  }
  bool empty_mask() const {
    return std::all_of(cells.begin(), cells.end(), [](std::uint8_t c) { return c == 0; });
  }

  friend bool operator==(const BinaryMask&, const BinaryMask&) = default;
};

inline BinaryMask object_mask(const LabelMask& labels, std::uint16_t id) {
  BinaryMask m(labels.height, labels.width);
  for (std::size_t i = 0; i < labels.labels.size(); ++i) {
    m.cells[i] = labels.labels[i] == id ? 1 : 0;
  }
  return m;
}

/// Non-owning view over a flat list of equally sized vectors.
struct VectorSetView {
  const float* data = nullptr;
  std::size_t count = 0;
  int dim = 0;

  std::span<const float> vec(std::size_t i) const {
    return {data + i * static_cast<std::size_t>(dim), static_cast<std::size_t>(dim)};
  }

  static VectorSetView of(const EmbeddingGrid& grid) {
    return {grid.data().data(), static_cast<std::size_t>(grid.patch_count()), grid.dim()};
  }
};

/// Flattened reference patches with an object label per patch. This is the
/// `reference` argument of propagation: either one frame's patches or a
/// memory snapshot.
struct ReferenceSet {
  int dim = 0;
  std::vector<float> embeddings;
  std::vector<std::uint16_t> labels;

  std::size_t count() const { return labels.size(); }
  VectorSetView view() const { return {embeddings.data(), labels.size(), dim}; }

  void push_back(std::span<const float> embedding, std::uint16_t label) {
    embeddings.insert(embeddings.end(), embedding.begin(), embedding.end());
    labels.push_back(label);
  }
};

inline ReferenceSet reference_from_frame(const EmbeddingGrid& grid, const LabelMask& labels,
                                         bool objects_only = true) {
  if (labels.height != grid.height() || labels.width != grid.width()) {
    raise(ErrorCode::dimension_mismatch, "label mask dims do not match grid");
  }
  ReferenceSet ref;
  ref.dim = grid.dim();
  const int n = grid.patch_count();
  for (int i = 0; i < n; ++i) {
    const std::uint16_t id = labels.labels[static_cast<std::size_t>(i)];
    if (objects_only && id == 0) continue;
    ref.push_back(grid.patch(i), id);
  }
  return ref;
}

}  // namespace cycletrack
