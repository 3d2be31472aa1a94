// Deterministic billboard rasterizer: procedural backgrounds, articulated
// stick-figure sprites, multiplicative lighting, back-to-front compositing.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <vector>

#include "imposters/image.hpp"
#include "imposters/scene.hpp"

namespace imposters {

// Appearance knobs that differ between the source and target toy domains.
struct RenderStyle {
  bool texturedSprites = false;  // striped shirt variant
  int noiseAmplitude = 0;        // additive per-pixel sensor noise, 0 = off
};

namespace detail {

inline std::uint64_t hash3(std::uint64_t a, std::uint64_t b, std::uint64_t c) {
  std::uint64_t s = a * 0x9e3779b97f4a7c15ull + b * 0xbf58476d1ce4e5b9ull +
                    c * 0x94d049bb133111ebull + 0x2545f4914f6cdd1dull;
  return splitmix64(s);
}

struct Rgb {
  std::uint8_t r, g, b;
};

inline Rgb palette_color(std::uint64_t h) {
  return {static_cast<std::uint8_t>(48 + (h & 0x7f)),
          static_cast<std::uint8_t>(48 + ((h >> 8) & 0x7f)),
          static_cast<std::uint8_t>(48 + ((h >> 16) & 0x7f))};
}

inline double dist_to_segment(double px, double py, double ax, double ay, double bx,
                              double by) {
  const double dx = bx - ax, dy = by - ay;
  const double len2 = dx * dx + dy * dy;
  double t = len2 > 0 ? ((px - ax) * dx + (py - ay) * dy) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  const double ex = ax + t * dx - px, ey = ay + t * dy - py;
  return std::sqrt(ex * ex + ey * ey);
}

constexpr double kDegToRad = 0.017453292519943295;

// Joint configuration of one sprite, all coordinates in body-height units
// with x = 0 on the spine.
struct Pose {
  double armSwing;   // radians, left arm leads
  double legSwing;   // radians
  double lean;       // forward lean of the torso
  double shear;      // lateral shear from the z rotation
  double widthScale; // silhouette narrowing from the y rotation
  bool flip;
};

inline Pose sprite_pose(const ModelInstance& inst) {
  std::uint64_t h = hash3(static_cast<std::uint64_t>(inst.avatarId),
                          static_cast<std::uint64_t>(inst.animationId), 11);
  const double amp = 0.25 + 0.65 * static_cast<double>(h & 0xff) / 255.0;
  const double phase = 6.283185307179586 * static_cast<double>((h >> 8) & 0xff) / 255.0;
  Pose p;
  p.armSwing = amp * std::sin(6.283185307179586 * inst.animationTime + phase);
  p.legSwing = 0.8 * amp * std::sin(6.283185307179586 * inst.animationTime + phase + 1.3);
  p.lean = 0.35 * std::sin(inst.angleX * kDegToRad);
  p.shear = 0.30 * std::sin(inst.angleZ * kDegToRad);
  const double cy = std::cos(inst.angleY * kDegToRad);
  p.widthScale = std::max(0.35, std::abs(cy));
  p.flip = cy < 0;
  return p;
}

}  // namespace detail

struct Sprite {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> rgba;  // alpha 0 or 255

  std::uint8_t* at(int x, int y) {
    return rgba.data() + (static_cast<std::size_t>(y) * width + x) * 4;
  }
  const std::uint8_t* at(int x, int y) const {
    return rgba.data() + (static_cast<std::size_t>(y) * width + x) * 4;
  }
};

// Rasterize the sprite for one instance at the given pixel size. Pure in all
// arguments; alpha is binary.
inline Sprite make_sprite(const ModelInstance& inst, int width, int height,
                          const RenderStyle& style = {}) {
  using namespace detail;
  Sprite sp;
  sp.width = width;
  sp.height = height;
  sp.rgba.assign(static_cast<std::size_t>(width) * height * 4, 0);
  if (width <= 0 || height <= 0) return sp;

  const Pose pose = sprite_pose(inst);
  const double aspect = avatar_aspect(inst.avatarId);
  const PersonType cls = avatar_class(inst.avatarId);
  const std::uint64_t ha = hash3(static_cast<std::uint64_t>(inst.avatarId), 5, 7);
  Rgb shirt = palette_color(ha);
  Rgb pants = palette_color(ha >> 21);
  const Rgb skin{214, 178, 148};
  const Rgb wheel{40, 40, 44};
  Rgb shirtDark{static_cast<std::uint8_t>(shirt.r * 2 / 3),
                static_cast<std::uint8_t>(shirt.g * 2 / 3),
                static_cast<std::uint8_t>(shirt.b * 2 / 3)};

  const bool riding = cls != PersonType::pedestrian;
  // Body landmarks (x, y) in height units; riders sit lower and lean forward.
  const double headY = riding ? 0.16 : 0.09;
  const double headR = 0.065;
  const double neckY = headY + headR + 0.01;
  const double hipY = riding ? 0.62 : 0.52;
  const double baseLean = pose.lean + (riding ? 0.35 : 0.0);

  const double armLen = 0.30, legLen = riding ? 0.30 : 0.46;
  const double torsoTopX = std::sin(baseLean) * (hipY - neckY);

  auto limb_end = [](double x0, double y0, double len, double angle, double* x1,
                     double* y1) {
    *x1 = x0 + len * std::sin(angle);
    *y1 = y0 + len * std::cos(angle);
  };

  double lArmX, lArmY, rArmX, rArmY, lLegX, lLegY, rLegX, rLegY;
  limb_end(torsoTopX, neckY + 0.04, armLen, pose.armSwing + baseLean, &lArmX, &lArmY);
  limb_end(torsoTopX, neckY + 0.04, armLen, -pose.armSwing + baseLean, &rArmX, &rArmY);
  limb_end(0, hipY, legLen, pose.legSwing + (riding ? 0.9 : 0.0), &lLegX, &lLegY);
  limb_end(0, hipY, legLen, -pose.legSwing + (riding ? 0.5 : 0.0), &rLegX, &rLegY);

  for (int py = 0; py < height; ++py) {
    const double v = (py + 0.5) / height;
    for (int px = 0; px < width; ++px) {
      double u = (px + 0.5) / width;
      if (pose.flip) u = 1.0 - u;
      // Isotropic body-frame coordinates, x widened back by the aspect.
      double x = (u - 0.5) * aspect / pose.widthScale - pose.shear * (v - 0.5);
      const double y = v;

      const Rgb* color = nullptr;
      if (riding) {
        // Wheels first so the rider draws on top of them.
        const double w1 = std::hypot(x + 0.22, y - 0.84);
        const double w2 = std::hypot(x - 0.22, y - 0.84);
        const double wr = cls == PersonType::cyclist ? 0.15 : 0.13;
        const double rim = cls == PersonType::cyclist ? 0.035 : 0.065;
        if (std::abs(w1 - wr) < rim || std::abs(w2 - wr) < rim) color = &wheel;
        if (cls == PersonType::motorcyclist &&
            dist_to_segment(x, y, -0.22, 0.80, 0.22, 0.80) < 0.10)
          color = &wheel;
        else if (cls == PersonType::cyclist &&
                 dist_to_segment(x, y, -0.22, 0.84, 0.22, 0.84) < 0.02)
          color = &wheel;
      }
      if (dist_to_segment(x, y, 0, hipY, lLegX, lLegY) < 0.045 ||
          dist_to_segment(x, y, 0, hipY, rLegX, rLegY) < 0.045)
        color = &pants;
      if (dist_to_segment(x, y, torsoTopX, neckY + 0.04, lArmX, lArmY) < 0.035 ||
          dist_to_segment(x, y, torsoTopX, neckY + 0.04, rArmX, rArmY) < 0.035)
        color = &skin;
      if (dist_to_segment(x, y, torsoTopX, neckY, 0, hipY) < 0.085) {
        color = &shirt;
        if (style.texturedSprites && (py / 2) % 2 == 0) color = &shirtDark;
      }
      if (std::hypot(x - torsoTopX, y - headY) < headR) color = &skin;

      if (color) {
        auto* t = sp.at(px, py);
        t[0] = color->r;
        t[1] = color->g;
        t[2] = color->b;
        t[3] = 255;
      }
    }
  }
  return sp;
}

// Procedural background: per-id gradient palette plus blocky value noise.
inline ImageBuffer make_background(int backgroundId, int width, int height) {
  using namespace detail;
  ImageBuffer img(width, height);
  const std::uint64_t h = hash3(static_cast<std::uint64_t>(backgroundId), 3, 1);
  const Rgb top = palette_color(h | 0x404040);  // bias skyward colors brighter
  const Rgb bottom = palette_color(h >> 24);
  for (int y = 0; y < height; ++y) {
    const int wy = y * 256 / height;
    for (int x = 0; x < width; ++x) {
      const std::uint64_t n =
          hash3(static_cast<std::uint64_t>(x >> 3), static_cast<std::uint64_t>(y >> 3),
                static_cast<std::uint64_t>(backgroundId) + 17);
      const int noise = static_cast<int>(n & 31) - 16;
      auto* p = img.at(x, y);
      p[0] = static_cast<std::uint8_t>(
          std::clamp((top.r * (256 - wy) + bottom.r * wy) / 256 + noise, 0, 255));
      p[1] = static_cast<std::uint8_t>(
          std::clamp((top.g * (256 - wy) + bottom.g * wy) / 256 + noise, 0, 255));
      p[2] = static_cast<std::uint8_t>(
          std::clamp((top.b * (256 - wy) + bottom.b * wy) / 256 + noise, 0, 255));
    }
  }
  return img;
}

// G(z): renders a validated SceneParams to an image. Byte-identical output
// for identical inputs.
inline ImageBuffer render(const SceneParams& params, const CameraModel& camera,
                          const RenderStyle& style = {}) {
  if (params.backgroundId < 0)
    throw std::out_of_range("render: backgroundId out of range");
  ImageBuffer img = make_background(params.backgroundId, camera.imageWidth,
                                    camera.imageHeight);

  // Lighting: fixed-point multiplier, lateral/vertical gradients from the
  // light angles applied on top of the global intensity.
  const double ax = std::sin(params.lightAngleX * detail::kDegToRad);
  const double ay = std::sin(params.lightAngleY * detail::kDegToRad);
  auto light_scale = [&](int px, int py) {
    const double lx = 1.0 + 0.25 * ay * (2.0 * px / camera.imageWidth - 1.0);
    const double ly = 1.0 + 0.15 * ax * (2.0 * py / camera.imageHeight - 1.0);
    return static_cast<int>(std::lround(params.lightIntensity * lx * ly * 256.0));
  };

  // Painter's algorithm: far instances first.
  std::vector<std::size_t> order(params.instances.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return params.instances[a].posZ > params.instances[b].posZ;
  });

  for (std::size_t idx : order) {
    const ModelInstance& inst = params.instances[idx];
    const BBox box = project_instance(camera, inst);
    const int x0 = static_cast<int>(std::floor(box.x));
    const int y0 = static_cast<int>(std::floor(box.y));
    const int w = std::max(1, static_cast<int>(std::lround(box.w)));
    const int h = std::max(1, static_cast<int>(std::lround(box.h)));
    const Sprite sp = make_sprite(inst, w, h, style);
    for (int sy = 0; sy < h; ++sy) {
      const int py = y0 + sy;
      if (py < 0 || py >= camera.imageHeight) continue;
      for (int sx = 0; sx < w; ++sx) {
        const int px = x0 + sx;
        if (px < 0 || px >= camera.imageWidth) continue;
        const auto* t = sp.at(sx, sy);
        if (t[3] == 0) continue;
        const int scale = light_scale(px, py);
        auto* d = img.at(px, py);
        d[0] = static_cast<std::uint8_t>(std::min(255, t[0] * scale >> 8));
        d[1] = static_cast<std::uint8_t>(std::min(255, t[1] * scale >> 8));
        d[2] = static_cast<std::uint8_t>(std::min(255, t[2] * scale >> 8));
      }
    }
  }

  if (style.noiseAmplitude > 0) {
    for (int y = 0; y < camera.imageHeight; ++y) {
      for (int x = 0; x < camera.imageWidth; ++x) {
        const std::uint64_t n = detail::hash3(static_cast<std::uint64_t>(x),
                                              static_cast<std::uint64_t>(y),
                                              params.seed ^ 0xabcdef12345ull);
        const int amp = style.noiseAmplitude;
        const int noise = static_cast<int>(n % (2 * amp + 1)) - amp;
        auto* p = img.at(x, y);
        for (int ch = 0; ch < 3; ++ch)
          p[ch] = static_cast<std::uint8_t>(std::clamp(p[ch] + noise, 0, 255));
      }
    }
  }
  return img;
}

}  // namespace imposters
