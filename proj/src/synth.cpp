#include "akhcr/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <vector>

#include "akhcr/errors.hpp"
#include "akhcr/rng.hpp"

namespace fs = std::filesystem;

namespace akhcr {

namespace {

struct Segment {
  double x0, y0, x1, y1;
};

double point_segment_distance(double px, double py, const Segment& s) {
  const double dx = s.x1 - s.x0, dy = s.y1 - s.y0;
  const double len_sq = dx * dx + dy * dy;
  double t = 0.0;
  if (len_sq > 0.0)
    t = std::clamp(((px - s.x0) * dx + (py - s.y0) * dy) / len_sq, 0.0, 1.0);
  const double cx = s.x0 + t * dx, cy = s.y0 + t * dy;
  return std::hypot(px - cx, py - cy);
}

// 4x4 anchor grid on [0.2, 0.8]
double anchor(int i) { return 0.2 + 0.2 * i; }

// The glyph is keyed by the class id only, so every seed draws the same
// shapes. A base-4 zigzag through the anchor rows makes classes pairwise
// distinct by construction; a couple of extra strokes add visual variety.
std::vector<Segment> class_glyph(int class_id) {
  std::vector<Segment> segs;
  int digits[4];
  int v = class_id;
  for (int r = 0; r < 4; ++r) {
    digits[r] = v % 4;
    v /= 4;
  }
  for (int r = 0; r < 3; ++r)
    segs.push_back({anchor(digits[r]), anchor(r), anchor(digits[r + 1]), anchor(r + 1)});

  Rng deco(mix_seed(0xA11CE5u, static_cast<std::uint64_t>(class_id)));
  const int extra = 1 + static_cast<int>(deco.below(2));
  for (int i = 0; i < extra; ++i) {
    const int ax = static_cast<int>(deco.below(4)), ay = static_cast<int>(deco.below(4));
    int bx = static_cast<int>(deco.below(4)), by = static_cast<int>(deco.below(4));
    if (ax == bx && ay == by) bx = (bx + 1) % 4;
    segs.push_back({anchor(ax), anchor(ay), anchor(bx), anchor(by)});
  }
  return segs;
}

void render_sample(const std::vector<Segment>& glyph, Rng& rng, double thickness,
                   std::vector<std::uint8_t>& pixels) {
  constexpr int size = kSynthImageSize;
  constexpr double soft_edge = 0.03;

  const double angle = (rng.uniform() * 2.0 - 1.0) * (10.0 * 3.14159265358979323846 / 180.0);
  const double scale = 1.0 + (rng.uniform() * 2.0 - 1.0) * 0.1;
  const double tx = (rng.uniform() * 2.0 - 1.0) * 0.1;
  const double ty = (rng.uniform() * 2.0 - 1.0) * 0.1;
  const double cos_a = std::cos(-angle), sin_a = std::sin(-angle);

  pixels.assign(static_cast<std::size_t>(size) * size, 0);
  for (int py = 0; py < size; ++py) {
    for (int px = 0; px < size; ++px) {
      const double qx = (px + 0.5) / size - 0.5 - tx;
      const double qy = (py + 0.5) / size - 0.5 - ty;
      const double ux = (cos_a * qx - sin_a * qy) / scale + 0.5;
      const double uy = (sin_a * qx + cos_a * qy) / scale + 0.5;

      double ink = 0.0;
      for (const auto& seg : glyph) {
        const double d = point_segment_distance(ux, uy, seg);
        double cov = 0.0;
        if (d <= thickness)
          cov = 1.0;
        else if (d < thickness + soft_edge)
          cov = (thickness + soft_edge - d) / soft_edge;
        ink = std::max(ink, cov);
        if (ink >= 1.0) break;
      }
      double value = 1.0 - 0.85 * ink + 0.03 * rng.normal();
      value = std::clamp(value, 0.0, 1.0);
      pixels[static_cast<std::size_t>(py) * size + px] =
          static_cast<std::uint8_t>(std::lround(value * 255.0));
    }
  }
}

}  // namespace

void synth_dataset(const std::string& out_dir, int classes, int per_class,
                   std::uint64_t seed, const Logger& log) {
  if (classes < 1 || classes > 256)
    throw RangeError("synth: classes must be in [1, 256], got " + std::to_string(classes));
  if (per_class < 2)
    throw DataError("synth: per_class must be >= 2 (the split needs two samples per class), got " +
                    std::to_string(per_class));

  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create output directory: " + out_dir);

  std::vector<std::uint8_t> pixels;
  for (int c = 0; c < classes; ++c) {
    const fs::path class_dir = fs::path(out_dir) / std::to_string(c + 1);
    fs::create_directories(class_dir, ec);
    if (ec) throw IoError("cannot create class directory: " + class_dir.string());
    const auto glyph = class_glyph(c);
    // per-class stroke weight, fixed across seeds like the glyph itself
    Rng weight_rng(mix_seed(0xB01D5u, static_cast<std::uint64_t>(c)));
    const double thickness = 0.05 + 0.02 * weight_rng.uniform();
    for (int s = 0; s < per_class; ++s) {
      Rng rng(mix_seed(mix_seed(seed, static_cast<std::uint64_t>(c)),
                       static_cast<std::uint64_t>(s)));
      render_sample(glyph, rng, thickness, pixels);
      char name[32];
      std::snprintf(name, sizeof(name), "img_%04d.png", s);
      encode_png_gray((class_dir / name).string(), kSynthImageSize, kSynthImageSize,
                      pixels.data());
    }
  }
  log("synth: wrote " + std::to_string(static_cast<long long>(classes) * per_class) +
      " images (" + std::to_string(classes) + " classes x " + std::to_string(per_class) +
      ") under " + out_dir);
}

}  // namespace akhcr
