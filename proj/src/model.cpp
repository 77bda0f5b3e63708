#include "cffm/model.hpp"

#include <cmath>

namespace cffm {

namespace {

template <typename T>
Tensor<T> random_weight(Shape shape, double sigma, Rng& rng) {
  Tensor<T> w(std::move(shape));
  for (auto& v : w.data()) v = static_cast<T>(rng.truncated_normal(sigma));
  return w;
}

}  // namespace

template <typename T>
ToyEncoder<T> ToyEncoder<T>::init(std::size_t patch, std::size_t channels, Rng& rng) {
  ToyEncoder e;
  e.patch = patch;
  e.channels = channels;
  const std::size_t din = 3 * patch * patch;
  e.embed_weight = {"encoder.embed.weight", random_weight<T>({din, channels}, std::sqrt(1.0 / din), rng)};
  e.embed_bias = {"encoder.embed.bias", Tensor<T>(Shape{channels})};
  e.mix_weight = {"encoder.mix.weight",
                  random_weight<T>({9 * channels, channels}, std::sqrt(1.0 / (9 * channels)), rng)};
  e.mix_bias = {"encoder.mix.bias", Tensor<T>(Shape{channels})};
  return e;
}

template <typename T>
std::vector<Parameter<T>*> ToyEncoder<T>::parameters() {
  return {&embed_weight, &embed_bias, &mix_weight, &mix_bias};
}

template <typename T>
Var<T> toy_encode(ToyEncoder<T>& enc, const Var<T>& image) {
  const auto& s = image.shape();
  if (s.size() != 3 || s[2] != 3) throw DimensionError("toy_encode: expected HxWx3 image, got " + shape_str(s));
  if (s[0] % enc.patch != 0 || s[1] % enc.patch != 0) {
    throw DimensionError("toy_encode: patch " + std::to_string(enc.patch) + " does not divide " + shape_str(s));
  }
  const std::size_t h = s[0] / enc.patch, w = s[1] / enc.patch, c = enc.channels;
  auto embedded = linear(space_to_depth(image, enc.patch), Var<T>::param(enc.embed_weight),
                         Var<T>::param(enc.embed_bias));

  std::vector<std::ptrdiff_t> idx;
  idx.reserve(h * w * 9);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx) {
          const auto yy = static_cast<std::ptrdiff_t>(y) + dy;
          const auto xx = static_cast<std::ptrdiff_t>(x) + dx;
          const bool inside = yy >= 0 && xx >= 0 && yy < static_cast<std::ptrdiff_t>(h) &&
                              xx < static_cast<std::ptrdiff_t>(w);
          idx.push_back(inside ? yy * static_cast<std::ptrdiff_t>(w) + xx : -1);
        }
  auto cols = reshape(gather_rows(embedded, std::span<const std::ptrdiff_t>(idx)), Shape{h, w, 9 * c});
  auto mixed = gelu(linear(cols, Var<T>::param(enc.mix_weight), Var<T>::param(enc.mix_bias)));
  return add(embedded, mixed);
}

PadPlan PadPlan::make(std::size_t h, std::size_t w, std::size_t multiple) {
  if (h == 0 || w == 0 || multiple == 0) throw ContractError("pad plan: extents must be >= 1");
  PadPlan p;
  p.h = h;
  p.w = w;
  p.padded_h = (h + multiple - 1) / multiple * multiple;
  p.padded_w = (w + multiple - 1) / multiple * multiple;
  p.top = (p.padded_h - h) / 2;
  p.left = (p.padded_w - w) / 2;
  return p;
}

template <typename T>
Var<T> pad(const Var<T>& x, const PadPlan& plan) {
  const auto& s = x.shape();
  if (s.size() != 3 || s[0] != plan.h || s[1] != plan.w) {
    throw DimensionError("pad: input " + shape_str(s) + " does not match the plan");
  }
  if (plan.trivial()) return x;
  std::vector<std::ptrdiff_t> idx(plan.padded_h * plan.padded_w, -1);
  for (std::size_t y = 0; y < plan.h; ++y)
    for (std::size_t xx = 0; xx < plan.w; ++xx)
      idx[(y + plan.top) * plan.padded_w + xx + plan.left] = static_cast<std::ptrdiff_t>(y * plan.w + xx);
  return reshape(gather_rows(x, std::span<const std::ptrdiff_t>(idx)), Shape{plan.padded_h, plan.padded_w, s[2]});
}

template <typename T>
Var<T> crop(const Var<T>& x, const PadPlan& plan) {
  const auto& s = x.shape();
  if (s.size() != 3 || s[0] != plan.padded_h || s[1] != plan.padded_w) {
    throw DimensionError("crop: input " + shape_str(s) + " does not match the plan");
  }
  if (plan.trivial()) return x;
  std::vector<std::ptrdiff_t> idx(plan.h * plan.w);
  for (std::size_t y = 0; y < plan.h; ++y)
    for (std::size_t xx = 0; xx < plan.w; ++xx)
      idx[y * plan.w + xx] = static_cast<std::ptrdiff_t>((y + plan.top) * plan.padded_w + xx + plan.left);
  return reshape(gather_rows(x, std::span<const std::ptrdiff_t>(idx)), Shape{plan.h, plan.w, s[2]});
}

template <typename T>
SegModel<T> SegModel<T>::init(const RunConfig& config) {
  config.validate();
  SegModel m;
  m.config = config;
  Rng root(config.seed);
  Rng enc_rng = root.fork(1), pool_rng = root.fork(2), stack_rng = root.fork(3);
  m.encoder = ToyEncoder<T>::init(config.patch, config.channels, enc_rng);
  const auto& entries = config.schedule.entries;
  for (std::size_t j = 0; j < entries.size(); ++j) {
    m.pool.push_back(
        PoolProjection<T>::init(config.channels, entries[j].p, pool_rng, "cffa.pool" + std::to_string(j)));
  }
  const AttentionShape shape{config.channels, config.schedule.s, config.schedule.token_count(), config.heads};
  m.stack = CFMStack<T>::init(shape, config.layers, config.classes, stack_rng);
  return m;
}

template <typename T>
std::vector<Parameter<T>*> SegModel<T>::parameters() {
  auto out = encoder.parameters();
  for (auto& p : pool) {
    out.push_back(&p.weight);
    out.push_back(&p.bias);
  }
  for (auto* p : stack.parameters()) out.push_back(p);
  return out;
}

template <typename T>
PadPlan SegModel<T>::plan(std::size_t image_h, std::size_t image_w) const {
  return PadPlan::make(image_h, image_w, config.patch * config.schedule.alignment());
}

template <typename T>
Var<T> SegModel<T>::encode(const Tensor<float>& image) {
  if (image.rank() != 3) throw DimensionError("encode: expected HxWx3 image, got " + shape_str(image.shape()));
  const auto p = plan(image.dim(0), image.dim(1));
  ++encoder_calls;
  return toy_encode(encoder, pad(Var<T>(image.cast<T>()), p));
}

template <typename T>
SegOutput<T> SegModel<T>::predict(std::span<const FrameFeature<T>> frames, const PadPlan& plan, bool with_aux) {
  const FrameFeature<T>* target = nullptr;
  for (const auto& f : frames)
    if (f.offset == 0) target = &f;
  if (!target) throw ContractError("predict: no target features (offset 0)");

  auto context = assemble_context(frames, config.schedule, std::span<PoolProjection<T>>(pool));
  const auto grid = partition_windows(target->features, config.schedule.s);
  const auto mined = merge_windows(mine(stack, grid, context));

  SegOutput<T> out;
  out.logits = crop(upsample_bilinear(segment_head(stack, mined, target->features), config.patch), plan);
  if (with_aux) out.aux = crop(upsample_bilinear(aux_head(stack, target->features), config.patch), plan);
  return out;
}

template <typename T>
std::vector<std::int32_t> argmax_labels(const Tensor<T>& logits) {
  const std::size_t k = logits.cols(), rows = logits.rows();
  std::vector<std::int32_t> out(rows);
  const T* x = logits.data().data();
  for (std::size_t r = 0; r < rows; ++r, x += k) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < k; ++j)
      if (x[j] > x[best]) best = j;
    out[r] = static_cast<std::int32_t>(best);
  }
  return out;
}

#define CFFM_INSTANTIATE(T)                                                  \
  template struct ToyEncoder<T>;                                             \
  template Var<T> toy_encode<T>(ToyEncoder<T>&, const Var<T>&);              \
  template Var<T> pad<T>(const Var<T>&, const PadPlan&);                     \
  template Var<T> crop<T>(const Var<T>&, const PadPlan&);                    \
  template struct SegModel<T>;                                               \
  template std::vector<std::int32_t> argmax_labels<T>(const Tensor<T>&);

CFFM_INSTANTIATE(float)
CFFM_INSTANTIATE(double)
#undef CFFM_INSTANTIATE

}  // namespace cffm
