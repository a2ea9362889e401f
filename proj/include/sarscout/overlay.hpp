#pragma once

#include <cstdint>
#include <cstdio>
#include <span>
#include <vector>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "sarscout/error.hpp"
#include "sarscout/geometry.hpp"
#include "sarscout/grounding.hpp"

namespace sarscout {

/// The one style table for overlays. Colors are BGR.
struct OverlayStyle {
  cv::Scalar detection_color{0, 255, 0};
  int detection_thickness{2};
  bool captions{true};
  double caption_scale{0.4};
  cv::Scalar region_color{0, 0, 255};
  double region_alpha{0.3};
  int region_border{1};
  int point_radius{5};
};

inline cv::Mat draw_overlay(const cv::Mat& input, std::span<const PixelBox> detections,
                            std::span<const AnswerRegion> regions, const OverlayStyle& style = {}) {
  if (detections.empty() && regions.empty()) return input.clone();
  cv::Mat canvas;
  if (input.channels() == 1) {
    cv::cvtColor(input, canvas, cv::COLOR_GRAY2BGR);
  } else if (input.channels() == 4) {
    cv::cvtColor(input, canvas, cv::COLOR_BGRA2BGR);
  } else {
    canvas = input.clone();
  }
  if (canvas.depth() != CV_8U) canvas.convertTo(canvas, CV_8U);

  if (!regions.empty()) {
    cv::Mat fill = canvas.clone();
    const int w = canvas.cols, h = canvas.rows;
    for (const AnswerRegion& r : regions) {
      if (r.kind == AnswerRegion::Kind::point) {
        const cv::Point c(static_cast<int>(std::lround(r.x_min.value_or(0))),
                          static_cast<int>(std::lround(r.y_min.value_or(0))));
        cv::circle(fill, c, style.point_radius, style.region_color, cv::FILLED);
        continue;
      }
      const cv::Point p1(static_cast<int>(std::lround(r.x_min.value_or(0))),
                         static_cast<int>(std::lround(r.y_min.value_or(0))));
      const cv::Point p2(static_cast<int>(std::lround(r.x_max.value_or(w))),
                         static_cast<int>(std::lround(r.y_max.value_or(h))));
      cv::rectangle(fill, p1, p2, style.region_color, cv::FILLED);
    }
    cv::addWeighted(fill, style.region_alpha, canvas, 1.0 - style.region_alpha, 0.0, canvas);
    for (const AnswerRegion& r : regions) {
      if (r.kind == AnswerRegion::Kind::point) continue;
      const cv::Point p1(static_cast<int>(std::lround(r.x_min.value_or(0))),
                         static_cast<int>(std::lround(r.y_min.value_or(0))));
      const cv::Point p2(static_cast<int>(std::lround(r.x_max.value_or(w))),
                         static_cast<int>(std::lround(r.y_max.value_or(h))));
      cv::rectangle(canvas, p1, p2, style.region_color, style.region_border);
    }
  }

  for (const PixelBox& b : detections) {
    const cv::Point p1(static_cast<int>(std::lround(b.x1)), static_cast<int>(std::lround(b.y1)));
    const cv::Point p2(static_cast<int>(std::lround(b.x2)), static_cast<int>(std::lround(b.y2)));
    cv::rectangle(canvas, p1, p2, style.detection_color, style.detection_thickness);
    if (style.captions) {
      char caption[16];
      std::snprintf(caption, sizeof caption, "%.2f", b.confidence);
      const cv::Point org(p1.x, std::max(p1.y - 4, 10));
      cv::putText(canvas, caption, org, cv::FONT_HERSHEY_SIMPLEX, style.caption_scale,
                  style.detection_color, 1, cv::LINE_8);
    }
  }
  return canvas;
}

inline std::vector<std::uint8_t> encode_png(const cv::Mat& image) {
  std::vector<std::uint8_t> out;
  if (!cv::imencode(".png", image, out)) fail(ErrorKind::input, "PNG encoding failed");
  return out;
}

/// Decodes `image_bytes`, draws detections and answer regions, returns PNG.
/// Output dimensions equal the input's.
inline std::vector<std::uint8_t> render_overlay(std::span<const std::uint8_t> image_bytes,
                                                std::span<const PixelBox> detections,
                                                std::span<const AnswerRegion> regions,
                                                const OverlayStyle& style = {}) {
  cv::Mat decoded;
  if (!image_bytes.empty()) {
    const cv::Mat raw(1, static_cast<int>(image_bytes.size()), CV_8UC1,
                      const_cast<std::uint8_t*>(image_bytes.data()));
    decoded = cv::imdecode(raw, cv::IMREAD_UNCHANGED);
  }
  if (decoded.empty()) fail(ErrorKind::input, "overlay: image is not decodable");
  return encode_png(draw_overlay(decoded, detections, regions, style));
}

}  // namespace sarscout
