#pragma once

#include <algorithm>
#include <array>
#include <cctype>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <vector>

#include <json.hpp>
#include <opencv2/core.hpp>
#include <opencv2/dnn.hpp>
#include <opencv2/imgproc.hpp>

#include "sarscout/detections.hpp"
#include "sarscout/error.hpp"
#include "sarscout/geometry.hpp"
#include "sarscout/image.hpp"

namespace sarscout {

// ============================================================================
// Raw YOLOv8-style head output: (1, 4 + C, A), rows cx, cy, w, h, score_0..C-1
// ============================================================================
struct RawHeadOutput {
  std::array<int, 3> shape{0, 0, 0};
  std::vector<float> values;  ///< row-major, shape[0] * shape[1] * shape[2]

  [[nodiscard]] float at(int row, int anchor) const {
    return values[static_cast<std::size_t>(row) * shape[2] + anchor];
  }
};

inline std::string shape_string(const std::array<int, 3>& s) {
  return "(" + std::to_string(s[0]) + ", " + std::to_string(s[1]) + ", " + std::to_string(s[2]) +
         ")";
}

/// Candidates in model-input space, one per anchor whose best class score
/// reaches `conf_threshold`. NMS is not applied here.
inline std::vector<PixelBox> decode_head(const RawHeadOutput& raw, double conf_threshold,
                                         int num_classes = 1) {
  const int rows = 4 + num_classes;
  const std::size_t expected_values =
      static_cast<std::size_t>(std::max(raw.shape[0], 0)) * std::max(raw.shape[1], 0) *
      std::max(raw.shape[2], 0);
  if (raw.shape[0] != 1 || raw.shape[1] != rows || raw.shape[2] <= 0 ||
      raw.values.size() != expected_values) {
    fail(ErrorKind::decode, "decode_head: expected shape (1, " + std::to_string(rows) +
                                ", A>0), got " + shape_string(raw.shape) + " with " +
                                std::to_string(raw.values.size()) + " values");
  }
  std::vector<PixelBox> out;
  for (int a = 0; a < raw.shape[2]; ++a) {
    float best = raw.at(4, a);
    for (int c = 1; c < num_classes; ++c) best = std::max(best, raw.at(4 + c, a));
    if (best < conf_threshold) continue;
    PixelBox b = box_from_center(raw.at(0, a), raw.at(1, a), raw.at(2, a), raw.at(3, a),
                                 std::clamp(static_cast<double>(best), 0.0, 1.0));
    out.push_back(b);
  }
  return out;
}

// ============================================================================
// Backends
// ============================================================================
class DetectorBackend {
 public:
  virtual ~DetectorBackend() = default;
  [[nodiscard]] virtual std::string name() const = 0;
  /// Configuration the backend applies when the caller has no preference.
  [[nodiscard]] virtual DetectorConfig default_config() const { return {}; }
  [[nodiscard]] virtual DetectionSet detect(const Image& image,
                                            const DetectorConfig& config) const = 0;
  [[nodiscard]] DetectionSet detect(const Image& image) const {
    return detect(image, default_config());
  }
};

/// Test double: returns scripted boxes per image id (or a default list), or
/// fails with a backend error when told to.
class StubBackend final : public DetectorBackend {
 public:
  using DetectorBackend::detect;
  StubBackend() = default;
  explicit StubBackend(std::vector<PixelBox> default_boxes)
      : default_boxes_(std::move(default_boxes)) {}

  StubBackend& script(const std::string& image_id, std::vector<PixelBox> boxes) {
    per_image_[image_id] = std::move(boxes);
    return *this;
  }
  StubBackend& fail_with(std::string message) {
    failure_ = std::move(message);
    return *this;
  }

  [[nodiscard]] std::string name() const override { return "stub"; }

  [[nodiscard]] DetectionSet detect(const Image& image,
                                    const DetectorConfig& config) const override {
    if (!failure_.empty()) fail(ErrorKind::backend, "detector 'stub': " + failure_);
    const auto it = per_image_.find(image.id);
    const auto& boxes = it != per_image_.end() ? it->second : default_boxes_;
    return make_detection_set(image.id, image.width(), image.height(), boxes, name(), config);
  }

 private:
  std::vector<PixelBox> default_boxes_;
  std::map<std::string, std::vector<PixelBox>> per_image_;
  std::string failure_;
};

/// Precomputed detections from a JSONL file, keyed by image id (file stem).
class FileBackend final : public DetectorBackend {
 public:
  using DetectorBackend::detect;
  explicit FileBackend(const std::filesystem::path& path,
                       MissingImagePolicy policy = MissingImagePolicy::empty)
      : policy_(policy) {
    try {
      index_ = load_detections_index(path);
    } catch (const Error& e) {
      fail(ErrorKind::backend, "detector 'file': " + std::string(e.what()));
    }
  }

  [[nodiscard]] std::string name() const override { return "file"; }

  [[nodiscard]] DetectionSet detect(const Image& image,
                                    const DetectorConfig& config) const override {
    return detections_for_image(index_, image.id, image.width(), image.height(), config, policy_,
                                name());
  }

 private:
  DetectionIndex index_;
  MissingImagePolicy policy_;
};

/// Sidecar JSON that travels with an exported model.
struct ModelSidecar {
  std::string name{"yolov8n-onnx"};
  int input_size{640};
  double conf_threshold{0.25};
  double nms_threshold{0.45};
  double pixel_scale{1.0 / 255.0};
  std::array<double, 3> mean{0.0, 0.0, 0.0};
  std::array<double, 3> std{1.0, 1.0, 1.0};
  bool rgb{true};
  int pad_value{114};
};

inline ModelSidecar parse_model_sidecar(const nlohmann::json& j) {
  ModelSidecar s;
  s.name = j.value("name", s.name);
  s.input_size = j.value("input_size", s.input_size);
  s.conf_threshold = j.value("conf_threshold", s.conf_threshold);
  s.nms_threshold = j.value("nms_threshold", s.nms_threshold);
  s.pad_value = j.value("pad_value", s.pad_value);
  std::string order = j.value("channel_order", std::string("rgb"));
  std::transform(order.begin(), order.end(), order.begin(), [](unsigned char c) { return std::tolower(c); });
  if (order != "rgb" && order != "bgr") fail(ErrorKind::validation, "sidecar: channel_order must be rgb or bgr");
  s.rgb = order == "rgb";
  if (j.contains("normalization")) {
    const auto& n = j.at("normalization");
    s.pixel_scale = n.value("scale", s.pixel_scale);
    if (n.contains("mean")) s.mean = n.at("mean").get<std::array<double, 3>>();
    if (n.contains("std")) s.std = n.at("std").get<std::array<double, 3>>();
  }
  if (s.input_size <= 0) fail(ErrorKind::validation, "sidecar: input_size must be positive");
  for (double v : s.std) {
    if (v == 0.0) fail(ErrorKind::validation, "sidecar: normalization std must be non-zero");
  }
  return s;
}

inline ModelSidecar load_model_sidecar(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::not_found, "cannot open model sidecar " + path.string());
  try {
    return parse_model_sidecar(nlohmann::json::parse(in));
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::parse, "sidecar " + path.string() + ": " + e.what());
  }
}

/// Letterboxes a BGR image into a square model input filled with `pad_value`.
inline cv::Mat letterbox_image(const cv::Mat& bgr, const LetterboxTransform& t, int pad_value) {
  cv::Mat canvas(t.dst_h, t.dst_w, CV_8UC3, cv::Scalar::all(pad_value));
  const int new_w = std::clamp(static_cast<int>(std::lround(t.src_w * t.scale)), 1, t.dst_w);
  const int new_h = std::clamp(static_cast<int>(std::lround(t.src_h * t.scale)), 1, t.dst_h);
  cv::Mat resized;
  cv::resize(bgr, resized, cv::Size(new_w, new_h), 0, 0, cv::INTER_LINEAR);
  const int left = std::clamp(static_cast<int>(std::floor(t.pad_x)), 0, t.dst_w - new_w);
  const int top = std::clamp(static_cast<int>(std::floor(t.pad_y)), 0, t.dst_h - new_h);
  resized.copyTo(canvas(cv::Rect(left, top, new_w, new_h)));
  return canvas;
}

/// ONNX-exported single-class YOLOv8-family model run through OpenCV DNN.
class OnnxBackend final : public DetectorBackend {
 public:
  using DetectorBackend::detect;
  OnnxBackend(const std::filesystem::path& model_path, ModelSidecar sidecar)
      : sidecar_(std::move(sidecar)) {
    if (!std::filesystem::exists(model_path)) {
      fail(ErrorKind::backend,
           "detector '" + sidecar_.name + "': model file not found: " + model_path.string());
    }
    try {
      net_ = cv::dnn::readNetFromONNX(model_path.string());
    } catch (const cv::Exception& e) {
      fail(ErrorKind::backend, "detector '" + sidecar_.name + "': " + e.what());
    }
    if (net_.empty()) fail(ErrorKind::backend, "detector '" + sidecar_.name + "': empty network");
  }

  OnnxBackend(const std::filesystem::path& model_path, const std::filesystem::path& sidecar_path)
      : OnnxBackend(model_path, load_model_sidecar(sidecar_path)) {}

  [[nodiscard]] std::string name() const override { return sidecar_.name; }
  [[nodiscard]] const ModelSidecar& sidecar() const noexcept { return sidecar_; }

  [[nodiscard]] DetectorConfig default_config() const override {
    return {sidecar_.conf_threshold, sidecar_.nms_threshold};
  }

  [[nodiscard]] cv::Mat preprocess(const Image& image, const LetterboxTransform& t) const {
    cv::Mat boxed = letterbox_image(image.pixels, t, sidecar_.pad_value);
    if (sidecar_.rgb) cv::cvtColor(boxed, boxed, cv::COLOR_BGR2RGB);
    cv::Mat f;
    boxed.convertTo(f, CV_32FC3, sidecar_.pixel_scale);
    f -= cv::Scalar(sidecar_.mean[0], sidecar_.mean[1], sidecar_.mean[2]);
    cv::divide(f, cv::Scalar(sidecar_.std[0], sidecar_.std[1], sidecar_.std[2]), f);
    return cv::dnn::blobFromImage(f);
  }

  [[nodiscard]] RawHeadOutput infer(const cv::Mat& blob) const {
    cv::Mat out;
    {
      // cv::dnn::Net::forward mutates internal buffers.
      std::lock_guard<std::mutex> lock(mutex_);
      try {
        net_.setInput(blob);
        out = net_.forward().clone();
      } catch (const cv::Exception& e) {
        fail(ErrorKind::backend, "detector '" + sidecar_.name + "': inference failed: " + e.what());
      }
    }
    RawHeadOutput raw;
    if (out.dims != 3 || out.type() != CV_32F) {
      fail(ErrorKind::decode, "detector '" + sidecar_.name + "': expected a rank-3 float output, got rank " +
                                  std::to_string(out.dims));
    }
    raw.shape = {out.size[0], out.size[1], out.size[2]};
    const float* data = out.ptr<float>();
    raw.values.assign(data, data + out.total());
    return raw;
  }

  [[nodiscard]] DetectionSet detect(const Image& image,
                                    const DetectorConfig& config) const override {
    const LetterboxTransform t =
        make_letterbox(image.width(), image.height(), sidecar_.input_size, sidecar_.input_size);
    const RawHeadOutput raw = infer(preprocess(image, t));
    std::vector<PixelBox> boxes = nms(decode_head(raw, config.conf_threshold), config.nms_threshold);
    for (PixelBox& b : boxes) b = unmap_box(b, t);
    return make_detection_set(image.id, image.width(), image.height(), std::move(boxes), name(),
                              config);
  }

 private:
  ModelSidecar sidecar_;
  mutable cv::dnn::Net net_;
  mutable std::mutex mutex_;
};

}  // namespace sarscout
