#include "cffm/synth.hpp"

#include <algorithm>
#include <array>
#include <cstdlib>
#include <string>

#include "cffm/rng.hpp"

namespace cffm {

void SynthClipSpec::validate() const {
  if (frames == 0 || height == 0 || width == 0) throw ContractError("synthetic clip extents must be >= 1");
  if (classes < 2 || classes > 255) throw ContractError("synthetic clips need 2..255 classes");
  if (objects > 0 && classes <= background_classes()) throw ContractError("no label left for objects");
  if (object_size == 0) throw ContractError("object size must be >= 1");
  const std::size_t travel_x = std::abs(velocity_x) * (frames - 1);
  const std::size_t travel_y = std::abs(velocity_y) * (frames - 1);
  if (objects > 0 && (object_size + travel_x > width || object_size + travel_y > height)) {
    throw ContractError("objects of size " + std::to_string(object_size) + " moving (" + std::to_string(velocity_x) +
                        ", " + std::to_string(velocity_y) + ") per frame do not fit a " + std::to_string(height) +
                        "x" + std::to_string(width) + " frame for " + std::to_string(frames) + " frames");
  }
}

namespace {

// Fixed colour per label; neighbouring labels differ in every channel.
std::array<float, 3> palette(std::size_t label) {
  static constexpr std::array<std::array<float, 3>, 8> base{{{0.15f, 0.35f, 0.80f},
                                                            {0.45f, 0.70f, 0.20f},
                                                            {0.90f, 0.20f, 0.20f},
                                                            {0.95f, 0.85f, 0.15f},
                                                            {0.60f, 0.25f, 0.75f},
                                                            {0.10f, 0.80f, 0.80f},
                                                            {0.95f, 0.55f, 0.10f},
                                                            {0.50f, 0.50f, 0.50f}}};
  auto c = base[label % base.size()];
  const float shift = 0.05f * static_cast<float>(label / base.size());
  for (auto& v : c) v = std::clamp(v - shift, 0.0f, 1.0f);
  return c;
}

// Number of start positions that keep the square inside for every frame;
// `lo` is the smallest one.
std::size_t start_range(std::size_t extent, std::size_t size, std::ptrdiff_t v, std::size_t frames,
                        std::size_t& lo) {
  const std::size_t travel = std::abs(v) * (frames - 1);
  lo = v < 0 ? travel : 0;
  return extent - size - travel + 1;
}

}  // namespace

Clip gen_clip(const SynthClipSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);
  const std::size_t H = spec.height, W = spec.width;

  // Background: horizontal bands with a random split row.
  std::vector<std::int32_t> background(H * W);
  const std::size_t bands = spec.background_classes();
  const std::size_t split = bands > 1 ? H / 4 + rng.below(H / 2 + 1) : H;
  for (std::size_t y = 0; y < H; ++y)
    for (std::size_t x = 0; x < W; ++x) background[y * W + x] = y < split ? 0 : static_cast<std::int32_t>(bands - 1);

  struct Square {
    std::size_t x0, y0;
    std::int32_t label;
  };
  std::vector<Square> squares;
  for (std::size_t o = 0; o < spec.objects; ++o) {
    std::size_t lox = 0, loy = 0;
    const std::size_t nx = start_range(W, spec.object_size, spec.velocity_x, spec.frames, lox);
    const std::size_t ny = start_range(H, spec.object_size, spec.velocity_y, spec.frames, loy);
    Square sq;
    sq.x0 = lox + rng.below(nx);
    sq.y0 = loy + rng.below(ny);
    sq.label = static_cast<std::int32_t>(bands + rng.below(spec.classes - bands));
    squares.push_back(sq);
  }

  Clip clip;
  clip.gt.h = H;
  clip.gt.w = W;
  clip.gt.classes = spec.classes;
  for (std::size_t f = 0; f < spec.frames; ++f) {
    std::vector<std::int32_t> mask = background;
    const auto shift_x = static_cast<std::ptrdiff_t>(f) * spec.velocity_x;
    const auto shift_y = static_cast<std::ptrdiff_t>(f) * spec.velocity_y;
    for (const auto& sq : squares) {
      const std::size_t x0 = static_cast<std::size_t>(static_cast<std::ptrdiff_t>(sq.x0) + shift_x);
      const std::size_t y0 = static_cast<std::size_t>(static_cast<std::ptrdiff_t>(sq.y0) + shift_y);
      for (std::size_t y = y0; y < y0 + spec.object_size; ++y)
        for (std::size_t x = x0; x < x0 + spec.object_size; ++x) mask[y * W + x] = sq.label;
    }
    Tensor<float> image({H, W, 3});
    auto px = image.data();
    for (std::size_t i = 0; i < H * W; ++i) {
      const auto colour = palette(static_cast<std::size_t>(mask[i]));
      for (std::size_t ch = 0; ch < 3; ++ch) {
        const double n = spec.noise > 0 ? rng.uniform(-spec.noise, spec.noise) : 0.0;
        px[i * 3 + ch] = static_cast<float>(colour[ch] + n);
      }
    }
    clip.images.push_back(std::move(image));
    clip.gt.frames.push_back(std::move(mask));
  }
  return clip;
}

std::vector<Clip> gen_clips(const SynthClipSpec& spec, std::size_t count) {
  std::vector<Clip> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    auto s = spec;
    s.seed = spec.seed + i;
    out.push_back(gen_clip(s));
  }
  return out;
}

void to_json(nlohmann::json& j, const SynthClipSpec& s) {
  j = {{"frames", s.frames},         {"height", s.height},   {"width", s.width},
       {"classes", s.classes},       {"objects", s.objects}, {"object_size", s.object_size},
       {"velocity", {s.velocity_x, s.velocity_y}}, {"noise", s.noise}, {"seed", s.seed}};
}

void from_json(const nlohmann::json& j, SynthClipSpec& s) {
  SynthClipSpec d;
  s.frames = j.value("frames", d.frames);
  s.height = j.value("height", d.height);
  s.width = j.value("width", d.width);
  s.classes = j.value("classes", d.classes);
  s.objects = j.value("objects", d.objects);
  s.object_size = j.value("object_size", d.object_size);
  if (j.contains("velocity")) {
    const auto& v = j.at("velocity");
    if (!v.is_array() || v.size() != 2) throw ContractError("velocity must be [x, y]");
    s.velocity_x = v[0].get<std::ptrdiff_t>();
    s.velocity_y = v[1].get<std::ptrdiff_t>();
  } else {
    s.velocity_x = d.velocity_x;
    s.velocity_y = d.velocity_y;
  }
  s.noise = j.value("noise", d.noise);
  s.seed = j.value("seed", d.seed);
}

}  // namespace cffm
