// Axis-aligned boxes, IoU, and the fixed-viewpoint pinhole camera.
#pragma once

#include <algorithm>
#include <stdexcept>

namespace imposters {

struct BBox {
  double x = 0;  // top-left corner, pixels
  double y = 0;
  double w = 0;
  double h = 0;

  double x2() const { return x + w; }
  double y2() const { return y + h; }
  double area() const { return w * h; }
  double cx() const { return x + w / 2; }
  double cy() const { return y + h / 2; }

  static BBox from_center(double cx, double cy, double w, double h) {
    return {cx - w / 2, cy - h / 2, w, h};
  }

  bool operator==(const BBox&) const = default;
};

inline double iou(const BBox& a, const BBox& b) {
  if (a.w <= 0 || a.h <= 0 || b.w <= 0 || b.h <= 0)
    throw std::domain_error("iou: boxes must have positive size");
  const double ix = std::max(0.0, std::min(a.x2(), b.x2()) - std::max(a.x, b.x));
  const double iy = std::max(0.0, std::min(a.y2(), b.y2()) - std::max(a.y, b.y));
  const double inter = ix * iy;
  if (inter <= 0) return 0.0;
  return inter / (a.area() + b.area() - inter);
}

inline BBox clip_box(const BBox& b, int width, int height) {
  const double x1 = std::clamp(b.x, 0.0, static_cast<double>(width));
  const double y1 = std::clamp(b.y, 0.0, static_cast<double>(height));
  const double x2 = std::clamp(b.x2(), 0.0, static_cast<double>(width));
  const double y2 = std::clamp(b.y2(), 0.0, static_cast<double>(height));
  return {x1, y1, x2 - x1, y2 - y1};
}

// Camera looking down the +Z axis from a fixed height above the ground plane.
struct CameraModel {
  double focalLengthPx = 800.0;
  double cx = 480.0;
  double cy = 360.0;
  double cameraHeight = 1.6;  // meters
  int imageWidth = 960;
  int imageHeight = 720;

  CameraModel scaled(int width, int height) const {
    CameraModel c = *this;
    const double s = static_cast<double>(width) / imageWidth;
    c.focalLengthPx = focalLengthPx * s;
    c.cx = width / 2.0;
    c.cy = height / 2.0;
    c.imageWidth = width;
    c.imageHeight = height;
    return c;
  }
};

}  // namespace imposters
