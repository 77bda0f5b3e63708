#include "cffm/cffa.hpp"

#include <algorithm>
#include <numeric>
#include <set>

namespace cffm {

std::vector<std::string> ContextSchedule::validate() const {
  if (s == 0) throw ContractError("schedule: window size must be >= 1");
  if (entries.empty()) throw ContractError("schedule: no entries");
  std::vector<std::string> warnings;
  bool seen_target = false;
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const auto& e = entries[i];
    const std::string where = "schedule entry " + std::to_string(i);
    if (e.p == 0 || e.r < e.p) throw ContractError(where + ": need r >= p >= 1");
    if (e.r % e.p != 0) throw ContractError(where + ": r must be a multiple of p");
    if (i == 0) {
      seen_target = e.offset == 0;
      continue;
    }
    const auto& prev = entries[i - 1];
    if (e.offset > prev.offset) throw ContractError(where + ": offsets must not increase");
    // Coarse-to-fine ordering applies up to the target's own set; extra
    // target sets that follow it are unconstrained.
    if (!seen_target) {
      if (e.p > prev.p) throw ContractError(where + ": pooling kernels must not grow toward the target");
      if (e.r > prev.r) {
        warnings.push_back(where + ": receptive field " + std::to_string(e.r) + " exceeds the farther frame's " +
                           std::to_string(prev.r));
      }
    }
    if (e.offset == 0) seen_target = true;
  }
  if (!seen_target) throw ContractError("schedule: no entry for the target frame (offset 0)");
  return warnings;
}

std::size_t ContextSchedule::token_count() const {
  std::size_t m = 0;
  for (const auto& e : entries) m += e.tokens();
  return m;
}

std::vector<std::size_t> ContextSchedule::reference_offsets() const {
  std::set<std::size_t, std::greater<>> offsets;
  for (const auto& e : entries)
    if (e.offset > 0) offsets.insert(e.offset);
  return {offsets.begin(), offsets.end()};
}

std::size_t ContextSchedule::max_offset() const {
  std::size_t mx = 0;
  for (const auto& e : entries) mx = std::max(mx, e.offset);
  return mx;
}

std::size_t ContextSchedule::alignment() const {
  std::size_t a = std::max<std::size_t>(s, 1);
  for (const auto& e : entries) a = std::lcm(a, std::max<std::size_t>(e.p, 1));
  return a;
}

ContextSchedule ContextSchedule::target_only() const {
  ContextSchedule out;
  out.s = s;
  for (const auto& e : entries)
    if (e.offset == 0) out.entries.push_back(e);
  return out;
}

ContextSchedule ContextSchedule::defaults() {
  return ContextSchedule{7, {{9, 49, 7}, {6, 20, 4}, {3, 6, 2}, {0, 7, 1}, {0, 35, 5}}};
}

ContextSchedule ContextSchedule::four_frame_demo() {
  return ContextSchedule{5, {{9, 20, 4}, {6, 12, 3}, {3, 6, 2}, {0, 4, 1}}};
}

// ---------------------------------------------------------------------------

template <typename T>
PoolProjection<T> PoolProjection<T>::init(std::size_t c, std::size_t p, Rng& rng, const std::string& name) {
  Tensor<T> w(Shape{c * p * p, c});
  for (auto& v : w.data()) v = static_cast<T>(rng.truncated_normal(0.02));
  return {Parameter<T>(name + ".weight", std::move(w)), Parameter<T>(name + ".bias", Tensor<T>(Shape{c}))};
}

template <typename T>
PoolProjection<T> PoolProjection<T>::identity(std::size_t c) {
  Tensor<T> w(Shape{c, c});
  for (std::size_t i = 0; i < c; ++i) w[i * c + i] = T(1);
  return {Parameter<T>("pool.weight", std::move(w)), Parameter<T>("pool.bias", Tensor<T>(Shape{c}))};
}

namespace {

void require_hwc(const Shape& s, const char* what) {
  if (s.size() != 3) throw DimensionError(std::string(what) + ": expected HxWxC features, got " + shape_str(s));
}

}  // namespace

template <typename T>
WindowGrid<T> partition_windows(const Var<T>& f, std::size_t s) {
  require_hwc(f.shape(), "partition_windows");
  const std::size_t h = f.shape()[0], w = f.shape()[1], c = f.shape()[2];
  if (s == 0 || h % s != 0 || w % s != 0) {
    throw DimensionError("partition_windows: window " + std::to_string(s) + " does not divide " +
                         shape_str(f.shape()));
  }
  WindowGrid<T> grid{{}, h, w, c, s};
  const std::size_t gr = h / s, gc = w / s;
  grid.windows.reserve(gr * gc);
  std::vector<std::ptrdiff_t> idx(s * s);
  for (std::size_t wr = 0; wr < gr; ++wr) {
    for (std::size_t wc = 0; wc < gc; ++wc) {
      for (std::size_t a = 0; a < s; ++a)
        for (std::size_t b = 0; b < s; ++b)
          idx[a * s + b] = static_cast<std::ptrdiff_t>((wr * s + a) * w + wc * s + b);
      grid.windows.push_back(gather_rows(f, std::span<const std::ptrdiff_t>(idx)));
    }
  }
  return grid;
}

template <typename T>
Var<T> merge_windows(const WindowGrid<T>& grid) {
  const std::size_t s = grid.s, w = grid.w, gc = grid.grid_cols();
  if (grid.windows.size() != grid.grid_rows() * gc) {
    throw ContractError("merge_windows: window count does not match the grid");
  }
  auto stacked = concat_rows(std::span<const Var<T>>(grid.windows));
  // row of pixel (y, x) inside the stacked window rows
  std::vector<std::ptrdiff_t> idx(grid.h * w);
  for (std::size_t y = 0; y < grid.h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      const std::size_t window = (y / s) * gc + x / s;
      idx[y * w + x] = static_cast<std::ptrdiff_t>(window * s * s + (y % s) * s + x % s);
    }
  return reshape(gather_rows(stacked, std::span<const std::ptrdiff_t>(idx)), Shape{grid.h, w, grid.c});
}

template <typename T>
PooledFrame<T> pool_reduce(const Var<T>& f, std::size_t p, Parameter<T>& proj, Parameter<T>& bias,
                           std::size_t offset) {
  require_hwc(f.shape(), "pool_reduce");
  const std::size_t c = f.shape()[2];
  if (proj.value.rank() != 2 || proj.value.dim(0) != c * p * p) {
    throw DimensionError("pool_reduce: projection " + shape_str(proj.value.shape()) + " cannot reduce " +
                         std::to_string(c * p * p) + " channels");
  }
  auto patches = space_to_depth(f, p);
  auto grid = linear(patches, Var<T>::param(proj), Var<T>::param(bias));
  return {std::move(grid), offset, p};
}

template <typename T>
Var<T> gather_context(const PooledFrame<T>& e, std::size_t window_index, std::size_t grid_rows,
                      std::size_t grid_cols, std::size_t s, std::size_t r) {
  if (e.p == 0 || r % e.p != 0) {
    throw ContractError("gather_context: r=" + std::to_string(r) + " is not a multiple of p=" + std::to_string(e.p));
  }
  if (window_index >= grid_rows * grid_cols) {
    throw RangeError("gather_context: window " + std::to_string(window_index) + " outside a " +
                     std::to_string(grid_rows) + "x" + std::to_string(grid_cols) + " grid");
  }
  const auto& gs = e.grid.shape();
  require_hwc(gs, "gather_context");
  const std::size_t wr = window_index / grid_cols, wc = window_index % grid_cols;
  const auto row = static_cast<std::ptrdiff_t>((wr * s + s / 2) / e.p);
  const auto col = static_cast<std::ptrdiff_t>((wc * s + s / 2) / e.p);
  const auto cells = neighborhood_indices(gs[0], gs[1], row, col, r / e.p);
  std::vector<std::ptrdiff_t> idx(cells.begin(), cells.end());
  return gather_rows(e.grid, std::span<const std::ptrdiff_t>(idx));
}

template <typename T>
ContextTokenSet<T> assemble_context(std::span<const FrameFeature<T>> frames,
                                    const ContextSchedule& schedule,
                                    std::span<PoolProjection<T>> pool) {
  schedule.validate();
  if (pool.size() != schedule.entries.size()) {
    throw ContractError("assemble_context: " + std::to_string(pool.size()) + " projections for " +
                        std::to_string(schedule.entries.size()) + " schedule entries");
  }
  if (frames.empty()) throw ContractError("assemble_context: no frames");
  const Shape shape = frames[0].features.shape();
  require_hwc(shape, "assemble_context");
  for (std::size_t i = 0; i < frames.size(); ++i) {
    if (frames[i].features.shape() != shape) {
      throw ContractError("assemble_context: frame shapes differ (" + shape_str(shape) + " vs " +
                          shape_str(frames[i].features.shape()) + ")");
    }
    for (std::size_t j = 0; j < i; ++j)
      if (frames[j].offset == frames[i].offset) throw ContractError("assemble_context: duplicate frame offset");
  }
  const std::size_t h = shape[0], w = shape[1], s = schedule.s;
  if (h % s != 0 || w % s != 0) {
    throw DimensionError("assemble_context: window " + std::to_string(s) + " does not divide " + shape_str(shape));
  }

  auto find = [&](std::size_t offset) -> const Var<T>& {
    for (const auto& f : frames)
      if (f.offset == offset) return f.features;
    throw ContractError("assemble_context: missing features for offset " + std::to_string(offset));
  };

  std::vector<PooledFrame<T>> pooled;
  pooled.reserve(schedule.entries.size());
  for (std::size_t j = 0; j < schedule.entries.size(); ++j) {
    const auto& e = schedule.entries[j];
    pooled.push_back(pool_reduce(find(e.offset), e.p, pool[j].weight, pool[j].bias, e.offset));
  }

  ContextTokenSet<T> out;
  out.m = schedule.token_count();
  std::size_t begin = 0;
  for (std::size_t j = 0; j < schedule.entries.size(); ++j) {
    const auto& e = schedule.entries[j];
    out.segments.push_back({j, e.offset, begin, e.tokens()});
    begin += e.tokens();
  }

  const std::size_t gr = h / s, gc = w / s;
  out.tokens.reserve(gr * gc);
  std::vector<Var<T>> parts(schedule.entries.size());
  for (std::size_t i = 0; i < gr * gc; ++i) {
    for (std::size_t j = 0; j < schedule.entries.size(); ++j) {
      parts[j] = gather_context(pooled[j], i, gr, gc, s, schedule.entries[j].r);
    }
    out.tokens.push_back(concat_rows(std::span<const Var<T>>(parts)));
  }
  return out;
}

#define CFFM_INSTANTIATE(T)                                                                               \
  template struct PoolProjection<T>;                                                                      \
  template WindowGrid<T> partition_windows(const Var<T>&, std::size_t);                                   \
  template Var<T> merge_windows(const WindowGrid<T>&);                                                    \
  template PooledFrame<T> pool_reduce(const Var<T>&, std::size_t, Parameter<T>&, Parameter<T>&,           \
                                      std::size_t);                                                       \
  template Var<T> gather_context(const PooledFrame<T>&, std::size_t, std::size_t, std::size_t,            \
                                 std::size_t, std::size_t);                                               \
  template ContextTokenSet<T> assemble_context(std::span<const FrameFeature<T>>, const ContextSchedule&,  \
                                               std::span<PoolProjection<T>>);

CFFM_INSTANTIATE(float)
CFFM_INSTANTIATE(double)

#undef CFFM_INSTANTIATE

}  // namespace cffm
