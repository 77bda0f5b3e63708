#pragma once

// Coarse-to-fine feature assembling: target-frame window partition and the
// per-window context token sets pooled from every frame of the clip.

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "cffm/autograd.hpp"
#include "cffm/rng.hpp"

namespace cffm {

/// One row of the schedule: which frame (frames before the target), how far
/// it reaches (r, in full-resolution feature cells) and how coarsely it is
/// pooled (p).
struct ScheduleEntry {
  std::size_t offset = 0;
  std::size_t r = 1;
  std::size_t p = 1;

  std::size_t tokens() const { return (r / p) * (r / p); }
  friend bool operator==(const ScheduleEntry&, const ScheduleEntry&) = default;
};

/// Ordered farthest frame first. The first offset-0 entry is the target's
/// own set; any further offset-0 entries are extra target sets.
struct ContextSchedule {
  std::size_t s = 7;
  std::vector<ScheduleEntry> entries;

  /// Throws ContractError on a hard violation; returns soft warnings
  /// (receptive fields that grow toward the target).
  std::vector<std::string> validate() const;

  /// m: total tokens per window.
  std::size_t token_count() const;

  /// Distinct non-zero offsets, largest first.
  std::vector<std::size_t> reference_offsets() const;
  std::size_t max_offset() const;

  /// Least common multiple of s and every p; padded extents must be
  /// multiples of this.
  std::size_t alignment() const;

  /// Same entries with every reference frame removed (single-frame ablation).
  ContextSchedule target_only() const;

  /// s=7 with offsets {9,6,3}, r={49,20,6,7}, p={7,4,2,1} and the extra
  /// target set r'=35, p'=5.
  static ContextSchedule defaults();

  /// The four-frame illustration used for 20x20 features:
  /// r={20,12,6,4}, p={4,3,2,1} at offsets {9,6,3,0}, s=5.
  static ContextSchedule four_frame_demo();

  friend bool operator==(const ContextSchedule&, const ContextSchedule&) = default;
};

/// Target features cut into (h/s)*(w/s) windows of s*s rows each, in
/// row-major window order; rows inside a window are row-major too.
template <typename T>
struct WindowGrid {
  std::vector<Var<T>> windows;
  std::size_t h = 0, w = 0, c = 0, s = 0;

  std::size_t grid_rows() const { return h / s; }
  std::size_t grid_cols() const { return w / s; }
};

template <typename T>
struct PooledFrame {
  Var<T> grid;  // [h/p x w/p x c]
  std::size_t offset = 0;
  std::size_t p = 1;
};

/// Per-entry reduction weights: (c*p*p) -> c.
template <typename T>
struct PoolProjection {
  Parameter<T> weight;
  Parameter<T> bias;

  static PoolProjection init(std::size_t c, std::size_t p, Rng& rng, const std::string& name);
  static PoolProjection identity(std::size_t c);
};

struct TokenSegment {
  std::size_t entry = 0;
  std::size_t offset = 0;
  std::size_t begin = 0;
  std::size_t count = 0;
};

template <typename T>
struct ContextTokenSet {
  std::vector<Var<T>> tokens;  // one [m x c] matrix per window
  std::size_t m = 0;
  std::vector<TokenSegment> segments;
};

template <typename T>
struct FrameFeature {
  std::size_t offset = 0;
  Var<T> features;  // [h x w x c]
};

template <typename T>
WindowGrid<T> partition_windows(const Var<T>& f, std::size_t s);

/// Inverse of partition_windows.
template <typename T>
Var<T> merge_windows(const WindowGrid<T>& grid);

template <typename T>
PooledFrame<T> pool_reduce(const Var<T>& f, std::size_t p, Parameter<T>& proj, Parameter<T>& bias,
                           std::size_t offset = 0);

/// Context tokens of one window from one pooled frame. The window centre
/// (row s*wr + s/2, col s*wc + s/2) maps to pooled cell (row/p, col/p) and the
/// (r/p)^2 neighbourhood around it is returned, clamped at the border.
template <typename T>
Var<T> gather_context(const PooledFrame<T>& e, std::size_t window_index, std::size_t grid_rows,
                      std::size_t grid_cols, std::size_t s, std::size_t r);

/// `pool` holds one projection per schedule entry, in schedule order.
template <typename T>
ContextTokenSet<T> assemble_context(std::span<const FrameFeature<T>> frames,
                                    const ContextSchedule& schedule,
                                    std::span<PoolProjection<T>> pool);

}  // namespace cffm
