// RGB raster type, PPM (P6) I/O, isotropic rescale with padding, and the
// discriminator-resolution downsample.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <utility>
#include <vector>

#include "imposters/geometry.hpp"
#include "imposters/util.hpp"

namespace imposters {

struct ImageBuffer {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;  // row-major RGB

  ImageBuffer() = default;
  ImageBuffer(int w, int h) : width(w), height(h), pixels(static_cast<std::size_t>(w) * h * 3, 0) {}

  std::uint8_t* at(int x, int y) {
    return pixels.data() + (static_cast<std::size_t>(y) * width + x) * 3;
  }
  const std::uint8_t* at(int x, int y) const {
    return pixels.data() + (static_cast<std::size_t>(y) * width + x) * 3;
  }

  bool operator==(const ImageBuffer&) const = default;
};

inline void write_ppm(const ImageBuffer& img, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write image: " + path.string());
  out << "P6\n" << img.width << " " << img.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(img.pixels.data()),
            static_cast<std::streamsize>(img.pixels.size()));
}

inline ImageBuffer read_ppm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read image: " + path.string());
  std::string magic;
  int w = 0, h = 0, maxval = 0;
  in >> magic >> w >> h >> maxval;
  if (magic != "P6" || maxval != 255 || w <= 0 || h <= 0)
    throw ConfigError("unsupported PPM file: " + path.string());
  in.get();  // single whitespace after maxval
  ImageBuffer img(w, h);
  in.read(reinterpret_cast<char*>(img.pixels.data()),
          static_cast<std::streamsize>(img.pixels.size()));
  if (!in) throw ConfigError("truncated PPM file: " + path.string());
  return img;
}

inline ImageBuffer resize_bilinear(const ImageBuffer& src, int dstW, int dstH) {
  if (dstW <= 0 || dstH <= 0) throw std::domain_error("resize: non-positive target size");
  if (dstW == src.width && dstH == src.height) return src;
  ImageBuffer dst(dstW, dstH);
  const double sx = static_cast<double>(src.width) / dstW;
  const double sy = static_cast<double>(src.height) / dstH;
  for (int y = 0; y < dstH; ++y) {
    const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, src.height - 1.0);
    const int y0 = static_cast<int>(fy);
    const int y1 = std::min(y0 + 1, src.height - 1);
    const double wy = fy - y0;
    for (int x = 0; x < dstW; ++x) {
      const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, src.width - 1.0);
      const int x0 = static_cast<int>(fx);
      const int x1 = std::min(x0 + 1, src.width - 1);
      const double wx = fx - x0;
      for (int ch = 0; ch < 3; ++ch) {
        const double top = src.at(x0, y0)[ch] * (1 - wx) + src.at(x1, y0)[ch] * wx;
        const double bot = src.at(x0, y1)[ch] * (1 - wx) + src.at(x1, y1)[ch] * wx;
        dst.at(x, y)[ch] = static_cast<std::uint8_t>(std::lround(top * (1 - wy) + bot * wy));
      }
    }
  }
  return dst;
}

// Isotropic rescale to (targetW, targetH) with black padding at right/bottom.
// Boxes are mapped by the same scale factor, preserving aspect ratios.
inline std::pair<ImageBuffer, std::vector<BBox>> preprocess(const ImageBuffer& image,
                                                            const std::vector<BBox>& boxes,
                                                            int targetW = 960,
                                                            int targetH = 720) {
  if (targetW <= 0 || targetH <= 0)
    throw std::domain_error("preprocess: non-positive target size");
  if (image.width <= 0 || image.height <= 0)
    throw std::domain_error("preprocess: empty image");
  const double s = std::min(static_cast<double>(targetW) / image.width,
                            static_cast<double>(targetH) / image.height);
  const int scaledW = std::min(targetW, static_cast<int>(std::lround(image.width * s)));
  const int scaledH = std::min(targetH, static_cast<int>(std::lround(image.height * s)));
  ImageBuffer scaled = resize_bilinear(image, scaledW, scaledH);
  ImageBuffer out(targetW, targetH);
  for (int y = 0; y < scaledH; ++y)
    std::copy_n(scaled.at(0, y), static_cast<std::size_t>(scaledW) * 3, out.at(0, y));
  std::vector<BBox> mapped;
  mapped.reserve(boxes.size());
  for (const auto& b : boxes) mapped.push_back({b.x * s, b.y * s, b.w * s, b.h * s});
  return {std::move(out), std::move(mapped)};
}

inline ImageBuffer downsample_for_discriminator(const ImageBuffer& image, int dstW = 96,
                                                int dstH = 72) {
  return resize_bilinear(image, dstW, dstH);
}

inline double mean_luminance(const ImageBuffer& img) {
  double sum = 0;
  for (std::size_t i = 0; i + 2 < img.pixels.size(); i += 3)
    sum += 0.299 * img.pixels[i] + 0.587 * img.pixels[i + 1] + 0.114 * img.pixels[i + 2];
  return sum / (static_cast<double>(img.width) * img.height);
}

}  // namespace imposters
