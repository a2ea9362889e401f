#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "sarscout/error.hpp"

namespace sarscout {

// ============================================================================
// PixelBox - axis-aligned box in image pixels (origin top-left, y down)
// ============================================================================
struct PixelBox {
  double x1{0.0};
  double y1{0.0};
  double x2{0.0};
  double y2{0.0};
  double confidence{1.0};
  int class_id{0};  ///< always 0 ("ship")

  [[nodiscard]] double width() const noexcept { return x2 - x1; }
  [[nodiscard]] double height() const noexcept { return y2 - y1; }
  [[nodiscard]] double area() const noexcept { return width() * height(); }
  [[nodiscard]] double center_x() const noexcept { return 0.5 * (x1 + x2); }
  [[nodiscard]] double center_y() const noexcept { return 0.5 * (y1 + y2); }

  [[nodiscard]] bool valid() const noexcept {
    return std::isfinite(x1) && std::isfinite(y1) && std::isfinite(x2) &&
           std::isfinite(y2) && x1 <= x2 && y1 <= y2 && confidence >= 0.0 &&
           confidence <= 1.0;
  }

  friend bool operator==(const PixelBox&, const PixelBox&) = default;
};

struct ImageDims {
  int width{0};
  int height{0};
  friend bool operator==(const ImageDims&, const ImageDims&) = default;
};

inline PixelBox box_from_center(double cx, double cy, double w, double h,
                                double confidence = 1.0) {
  return PixelBox{cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h, confidence, 0};
}

/// Intersection over union. Zero-area boxes contribute no intersection and a
/// zero union yields 0.
inline double iou(const PixelBox& a, const PixelBox& b) noexcept {
  const double iw = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
  const double ih = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
  const double inter = (iw > 0.0 && ih > 0.0) ? iw * ih : 0.0;
  const double uni = a.area() + b.area() - inter;
  if (uni <= 0.0) return 0.0;
  return inter / uni;
}

/// Indices of `boxes` ordered by confidence descending; equal confidences keep
/// their original order.
inline std::vector<std::size_t> confidence_order(std::span<const PixelBox> boxes) {
  std::vector<std::size_t> order(boxes.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t l, std::size_t r) {
    return boxes[l].confidence > boxes[r].confidence;
  });
  return order;
}

/// Greedy non-maximum suppression. A box survives iff its IoU with every
/// higher-ranked survivor is <= iou_threshold. Output is confidence-descending.
inline std::vector<PixelBox> nms(std::span<const PixelBox> boxes, double iou_threshold) {
  if (!(iou_threshold >= 0.0 && iou_threshold <= 1.0)) {
    fail(ErrorKind::invalid_argument, "nms: iou_threshold must lie in [0,1]");
  }
  std::vector<PixelBox> kept;
  for (const std::size_t idx : confidence_order(boxes)) {
    const PixelBox& candidate = boxes[idx];
    const bool suppressed = std::any_of(kept.begin(), kept.end(), [&](const PixelBox& k) {
      return iou(candidate, k) > iou_threshold;
    });
    if (!suppressed) kept.push_back(candidate);
  }
  return kept;
}

inline PixelBox clamp_box(PixelBox b, double width, double height) noexcept {
  b.x1 = std::clamp(b.x1, 0.0, width);
  b.x2 = std::clamp(b.x2, 0.0, width);
  b.y1 = std::clamp(b.y1, 0.0, height);
  b.y2 = std::clamp(b.y2, 0.0, height);
  return b;
}

// ============================================================================
// Letterbox - aspect-preserving resize into a fixed model input with padding
// ============================================================================
struct LetterboxTransform {
  double scale{1.0};
  double pad_x{0.0};
  double pad_y{0.0};
  int src_w{0};
  int src_h{0};
  int dst_w{0};
  int dst_h{0};
};

inline LetterboxTransform make_letterbox(int src_w, int src_h, int dst_w, int dst_h) {
  if (src_w <= 0 || src_h <= 0 || dst_w <= 0 || dst_h <= 0) {
    fail(ErrorKind::invalid_argument,
         "make_letterbox: dimensions must be positive (got src " + std::to_string(src_w) + "x" +
             std::to_string(src_h) + ", dst " + std::to_string(dst_w) + "x" +
             std::to_string(dst_h) + ")");
  }
  LetterboxTransform t;
  t.src_w = src_w;
  t.src_h = src_h;
  t.dst_w = dst_w;
  t.dst_h = dst_h;
  t.scale = std::min(static_cast<double>(dst_w) / src_w, static_cast<double>(dst_h) / src_h);
  t.pad_x = (dst_w - t.scale * src_w) / 2.0;
  t.pad_y = (dst_h - t.scale * src_h) / 2.0;
  return t;
}

/// Source-image space -> model-input space.
inline PixelBox map_box(PixelBox b, const LetterboxTransform& t) noexcept {
  b.x1 = b.x1 * t.scale + t.pad_x;
  b.x2 = b.x2 * t.scale + t.pad_x;
  b.y1 = b.y1 * t.scale + t.pad_y;
  b.y2 = b.y2 * t.scale + t.pad_y;
  return b;
}

/// Model-input space -> source-image space, clamped to the source bounds.
inline PixelBox unmap_box(PixelBox b, const LetterboxTransform& t) noexcept {
  b.x1 = (b.x1 - t.pad_x) / t.scale;
  b.x2 = (b.x2 - t.pad_x) / t.scale;
  b.y1 = (b.y1 - t.pad_y) / t.scale;
  b.y2 = (b.y2 - t.pad_y) / t.scale;
  return clamp_box(b, t.src_w, t.src_h);
}

}  // namespace sarscout
