#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "sarscout/error.hpp"
#include "sarscout/geometry.hpp"

namespace sarscout {

struct DetectorConfig {
  double conf_threshold{0.25};
  double nms_threshold{0.45};
};

struct DetectionSet {
  std::string image_id;
  int image_w{0};
  int image_h{0};
  std::vector<PixelBox> boxes;
  std::string detector_name;
  double conf_threshold{0.25};
  double nms_threshold{0.45};

  friend bool operator==(const DetectionSet&, const DetectionSet&) = default;
};

/// Throws validation error describing the first broken invariant.
inline void check_invariants(const DetectionSet& set) {
  const auto where = [&](std::size_t i) {
    return "detections for '" + set.image_id + "', box " + std::to_string(i) + ": ";
  };
  for (std::size_t i = 0; i < set.boxes.size(); ++i) {
    const PixelBox& b = set.boxes[i];
    if (!b.valid()) fail(ErrorKind::validation, where(i) + "invalid box");
    if (b.x1 < 0 || b.y1 < 0 || b.x2 > set.image_w || b.y2 > set.image_h) {
      fail(ErrorKind::validation, where(i) + "outside image bounds");
    }
    if (b.confidence < set.conf_threshold) {
      fail(ErrorKind::validation, where(i) + "confidence below threshold");
    }
    if (i > 0 && set.boxes[i - 1].confidence < b.confidence) {
      fail(ErrorKind::validation, where(i) + "not sorted by confidence");
    }
  }
}

/// Validates raw boxes, clamps them to the image, drops those under the
/// confidence threshold and orders the rest by confidence (stable).
inline DetectionSet make_detection_set(std::string image_id, int image_w, int image_h,
                                       std::vector<PixelBox> boxes, std::string detector_name,
                                       const DetectorConfig& config) {
  DetectionSet set;
  set.image_id = std::move(image_id);
  set.image_w = image_w;
  set.image_h = image_h;
  set.detector_name = std::move(detector_name);
  set.conf_threshold = config.conf_threshold;
  set.nms_threshold = config.nms_threshold;
  for (PixelBox& b : boxes) {
    if (!b.valid()) {
      fail(ErrorKind::validation, "detections for '" + set.image_id +
                                      "': box violates x1<=x2, y1<=y2 or confidence in [0,1]");
    }
    if (b.confidence < config.conf_threshold) continue;
    b.class_id = 0;
    set.boxes.push_back(clamp_box(b, image_w, image_h));
  }
  std::stable_sort(set.boxes.begin(), set.boxes.end(),
                   [](const PixelBox& l, const PixelBox& r) { return l.confidence > r.confidence; });
  return set;
}

// ----------------------------------------------------------------------------
// Detections JSONL: one object per box
//   {"image_id":"s1","x1":10,"y1":20,"x2":50,"y2":60,"conf":0.97}
// ----------------------------------------------------------------------------

using DetectionIndex = std::map<std::string, std::vector<PixelBox>>;

inline PixelBox parse_detection_line(const nlohmann::json& obj, std::string& image_id) {
  if (!obj.is_object()) throw std::invalid_argument("expected a JSON object");
  image_id = obj.at("image_id").get<std::string>();
  PixelBox b;
  b.x1 = obj.at("x1").get<double>();
  b.y1 = obj.at("y1").get<double>();
  b.x2 = obj.at("x2").get<double>();
  b.y2 = obj.at("y2").get<double>();
  b.confidence = obj.at("conf").get<double>();
  return b;
}

inline DetectionIndex parse_detections_jsonl(std::istream& in, const std::string& source) {
  DetectionIndex index;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    std::string image_id;
    PixelBox box;
    try {
      box = parse_detection_line(nlohmann::json::parse(line), image_id);
    } catch (const std::exception& e) {
      fail(ErrorKind::parse, source + ":" + std::to_string(line_no) + ": " + e.what());
    }
    if (!box.valid()) {
      fail(ErrorKind::validation, source + ":" + std::to_string(line_no) +
                                      ": box violates x1<=x2, y1<=y2 or conf in [0,1]");
    }
    index[image_id].push_back(box);
  }
  return index;
}

inline DetectionIndex load_detections_index(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::not_found, "cannot open detections file " + path.string());
  return parse_detections_jsonl(in, path.string());
}

enum class MissingImagePolicy {
  empty,   ///< an image without lines has zero ships
  strict,  ///< an image without lines is reported as not found
};

inline DetectionSet detections_for_image(const DetectionIndex& index, const std::string& image_id,
                                         int image_w, int image_h, const DetectorConfig& config,
                                         MissingImagePolicy policy = MissingImagePolicy::empty,
                                         const std::string& detector_name = "file") {
  const auto it = index.find(image_id);
  if (it == index.end()) {
    if (policy == MissingImagePolicy::strict) {
      fail(ErrorKind::not_found, "no detections listed for image_id '" + image_id + "'");
    }
    return make_detection_set(image_id, image_w, image_h, {}, detector_name, config);
  }
  return make_detection_set(image_id, image_w, image_h, it->second, detector_name, config);
}

inline DetectionSet load_detections_file(const std::filesystem::path& path,
                                         const std::string& image_id, int image_w, int image_h,
                                         const DetectorConfig& config = {},
                                         MissingImagePolicy policy = MissingImagePolicy::empty) {
  return detections_for_image(load_detections_index(path), image_id, image_w, image_h, config,
                              policy);
}

inline std::string to_jsonl(const DetectionSet& set) {
  std::string out;
  for (const PixelBox& b : set.boxes) {
    nlohmann::ordered_json line;
    line["image_id"] = set.image_id;
    line["x1"] = b.x1;
    line["y1"] = b.y1;
    line["x2"] = b.x2;
    line["y2"] = b.y2;
    line["conf"] = b.confidence;
    out += line.dump();
    out += '\n';
  }
  return out;
}

inline nlohmann::ordered_json box_to_json(const PixelBox& b) {
  nlohmann::ordered_json j;
  j["x1"] = b.x1;
  j["y1"] = b.y1;
  j["x2"] = b.x2;
  j["y2"] = b.y2;
  j["conf"] = b.confidence;
  j["class_id"] = b.class_id;
  return j;
}

inline PixelBox box_from_json(const nlohmann::ordered_json& j) {
  PixelBox b;
  b.x1 = j.at("x1").get<double>();
  b.y1 = j.at("y1").get<double>();
  b.x2 = j.at("x2").get<double>();
  b.y2 = j.at("y2").get<double>();
  b.confidence = j.at("conf").get<double>();
  b.class_id = j.value("class_id", 0);
  return b;
}

inline nlohmann::ordered_json to_json(const DetectionSet& set) {
  nlohmann::ordered_json j;
  j["image_id"] = set.image_id;
  j["image_w"] = set.image_w;
  j["image_h"] = set.image_h;
  j["detector_name"] = set.detector_name;
  j["conf_threshold"] = set.conf_threshold;
  j["nms_threshold"] = set.nms_threshold;
  j["boxes"] = nlohmann::ordered_json::array();
  for (const PixelBox& b : set.boxes) j["boxes"].push_back(box_to_json(b));
  return j;
}

inline DetectionSet detection_set_from_json(const nlohmann::ordered_json& j) {
  DetectionSet set;
  set.image_id = j.at("image_id").get<std::string>();
  set.image_w = j.at("image_w").get<int>();
  set.image_h = j.at("image_h").get<int>();
  set.detector_name = j.at("detector_name").get<std::string>();
  set.conf_threshold = j.at("conf_threshold").get<double>();
  set.nms_threshold = j.at("nms_threshold").get<double>();
  for (const auto& b : j.at("boxes")) set.boxes.push_back(box_from_json(b));
  return set;
}

}  // namespace sarscout
