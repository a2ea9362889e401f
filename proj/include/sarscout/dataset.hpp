#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "sarscout/error.hpp"
#include "sarscout/geometry.hpp"

namespace sarscout {

struct GroundTruthSet {
  std::string image_id;
  int image_w{0};
  int image_h{0};
  std::vector<PixelBox> boxes;  ///< confidence fixed at 1.0

  friend bool operator==(const GroundTruthSet&, const GroundTruthSet&) = default;
};

using GroundTruthIndex = std::map<std::string, GroundTruthSet>;
using DimsIndex = std::map<std::string, ImageDims>;

namespace detail {

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

inline std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream in(s);
  while (std::getline(in, cur, sep)) out.push_back(trim(cur));
  return out;
}

inline bool parse_double(const std::string& s, double& out) {
  try {
    std::size_t used = 0;
    out = std::stod(s, &used);
    return used == s.size() && std::isfinite(out);
  } catch (...) {
    return false;
  }
}

}  // namespace detail

// ----------------------------------------------------------------------------
// Dims index CSV: image_id,width,height (header line optional)
// ----------------------------------------------------------------------------
inline DimsIndex parse_dims_index(std::istream& in, const std::string& source) {
  DimsIndex dims;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string t = detail::trim(line);
    if (t.empty() || t.front() == '#') continue;
    const auto cols = detail::split(t, ',');
    if (line_no == 1 && cols.size() == 3 && cols[1] == "width") continue;
    double w = 0, h = 0;
    if (cols.size() != 3 || !detail::parse_double(cols[1], w) ||
        !detail::parse_double(cols[2], h) || w <= 0 || h <= 0 || w != std::floor(w) ||
        h != std::floor(h)) {
      fail(ErrorKind::parse, source + ":" + std::to_string(line_no) +
                                 ": expected 'image_id,width,height' with positive integers");
    }
    dims[cols[0]] = ImageDims{static_cast<int>(w), static_cast<int>(h)};
  }
  return dims;
}

inline DimsIndex load_dims_index(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::not_found, "cannot open dims index " + path.string());
  return parse_dims_index(in, path.string());
}

// ----------------------------------------------------------------------------
// YOLO-txt labels: "class cx cy w h" normalized to [0,1], one file per image
// ----------------------------------------------------------------------------
inline GroundTruthSet parse_yolo_labels(std::istream& in, const std::string& image_id,
                                        const ImageDims& dims, const std::string& source) {
  GroundTruthSet gt{image_id, dims.width, dims.height, {}};
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string t = detail::trim(line);
    if (t.empty()) continue;
    const auto where = source + ":" + std::to_string(line_no) + ": ";
    std::istringstream fields(t);
    std::vector<std::string> tok;
    for (std::string f; fields >> f;) tok.push_back(f);
    if (tok.size() != 5) fail(ErrorKind::parse, where + "expected 'class cx cy w h'");
    if (tok[0] != "0") fail(ErrorKind::parse, where + "unsupported class '" + tok[0] + "'");
    double v[4];
    for (int i = 0; i < 4; ++i) {
      if (!detail::parse_double(tok[i + 1], v[i]) || v[i] < 0.0 || v[i] > 1.0) {
        fail(ErrorKind::parse, where + "value '" + tok[i + 1] + "' outside [0,1]");
      }
    }
    const double cx = v[0] * dims.width, cy = v[1] * dims.height;
    const double w = v[2] * dims.width, h = v[3] * dims.height;
    const PixelBox b{cx - w / 2.0, cy - h / 2.0, cx + w / 2.0, cy + h / 2.0, 1.0, 0};
    gt.boxes.push_back(clamp_box(b, dims.width, dims.height));
  }
  return gt;
}

/// Every `*.txt` in `label_dir` becomes one GroundTruthSet keyed by file stem.
inline GroundTruthIndex load_yolo_annotations(const std::filesystem::path& label_dir,
                                              const DimsIndex& dims) {
  std::error_code ec;
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::directory_iterator(label_dir, ec)) {
    if (entry.is_regular_file() && entry.path().extension() == ".txt") files.push_back(entry.path());
  }
  if (ec) fail(ErrorKind::not_found, "cannot list label directory " + label_dir.string());
  std::sort(files.begin(), files.end());

  GroundTruthIndex out;
  for (const auto& file : files) {
    const std::string id = file.stem().string();
    const auto d = dims.find(id);
    if (d == dims.end()) fail(ErrorKind::not_found, "no image dimensions for '" + id + "'");
    std::ifstream in(file);
    if (!in) fail(ErrorKind::not_found, "cannot open " + file.string());
    out[id] = parse_yolo_labels(in, id, d->second, file.string());
  }
  return out;
}

// ----------------------------------------------------------------------------
// COCO subset: images[] {id, width, height, file_name}, annotations[]
// {image_id, bbox [x, y, w, h]}. Ids are mapped to file stems.
// ----------------------------------------------------------------------------
inline GroundTruthIndex parse_coco_annotations(const nlohmann::json& doc,
                                               const std::string& source) {
  GroundTruthIndex out;
  std::map<std::int64_t, std::string> stem_by_id;
  try {
    for (const auto& img : doc.at("images")) {
      const auto id = img.at("id").get<std::int64_t>();
      const std::string stem =
          std::filesystem::path(img.at("file_name").get<std::string>()).stem().string();
      out[stem] = GroundTruthSet{stem, img.at("width").get<int>(), img.at("height").get<int>(), {}};
      stem_by_id[id] = stem;
    }
    for (const auto& ann : doc.at("annotations")) {
      const auto image_id = ann.at("image_id").get<std::int64_t>();
      const auto it = stem_by_id.find(image_id);
      if (it == stem_by_id.end()) {
        fail(ErrorKind::integrity, source + ": annotation references unknown image id " +
                                       std::to_string(image_id));
      }
      const auto bbox = ann.at("bbox").get<std::vector<double>>();
      if (bbox.size() != 4 || bbox[2] < 0 || bbox[3] < 0) {
        fail(ErrorKind::parse, source + ": bbox must be [x, y, w, h] with w, h >= 0");
      }
      GroundTruthSet& gt = out[it->second];
      const PixelBox b{bbox[0], bbox[1], bbox[0] + bbox[2], bbox[1] + bbox[3], 1.0, 0};
      gt.boxes.push_back(clamp_box(b, gt.image_w, gt.image_h));
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::parse, source + ": " + e.what());
  }
  return out;
}

inline GroundTruthIndex load_coco_annotations(const std::filesystem::path& json_path) {
  std::ifstream in(json_path);
  if (!in) fail(ErrorKind::not_found, "cannot open " + json_path.string());
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::parse, json_path.string() + ": " + e.what());
  }
  return parse_coco_annotations(doc, json_path.string());
}

/// Inverse of parse_coco_annotations. Images get sequential ids in key order
/// and a ".png" file name.
inline nlohmann::ordered_json to_coco(const GroundTruthIndex& gts) {
  nlohmann::ordered_json doc;
  doc["images"] = nlohmann::ordered_json::array();
  doc["annotations"] = nlohmann::ordered_json::array();
  std::int64_t image_id = 1, ann_id = 1;
  for (const auto& [stem, gt] : gts) {
    doc["images"].push_back({{"id", image_id},
                             {"width", gt.image_w},
                             {"height", gt.image_h},
                             {"file_name", stem + ".png"}});
    for (const PixelBox& b : gt.boxes) {
      doc["annotations"].push_back({{"id", ann_id++},
                                    {"image_id", image_id},
                                    {"category_id", 1},
                                    {"bbox", {b.x1, b.y1, b.width(), b.height()}}});
    }
    ++image_id;
  }
  return doc;
}

// ----------------------------------------------------------------------------
// Split manifests: plain text, one image_id per line, one file per split
// ----------------------------------------------------------------------------
struct SplitManifest {
  std::string dataset_name;
  std::vector<std::string> train_ids;
  std::vector<std::string> test_ids;
};

inline std::vector<std::string> parse_id_list(std::istream& in) {
  std::vector<std::string> ids;
  for (std::string line; std::getline(in, line);) {
    std::string t = detail::trim(line);
    if (!t.empty() && t.front() != '#') ids.push_back(std::move(t));
  }
  return ids;
}

inline SplitManifest load_split_manifest(std::string dataset_name,
                                         const std::filesystem::path& train_file,
                                         const std::filesystem::path& test_file) {
  SplitManifest m{std::move(dataset_name), {}, {}};
  std::ifstream train(train_file), test(test_file);
  if (!train) fail(ErrorKind::not_found, "cannot open " + train_file.string());
  if (!test) fail(ErrorKind::not_found, "cannot open " + test_file.string());
  m.train_ids = parse_id_list(train);
  m.test_ids = parse_id_list(test);
  return m;
}

struct SplitReport {
  std::string dataset_name;
  std::size_t train_count{0};
  std::size_t test_count{0};
  std::vector<std::string> missing_train;  ///< listed but without annotations
  std::vector<std::string> missing_test;
  std::vector<std::string> duplicate_ids;  ///< repeated within one list
  std::vector<std::string> overlapping_ids;  ///< present in both lists

  [[nodiscard]] bool ok() const noexcept {
    return missing_train.empty() && missing_test.empty() && duplicate_ids.empty() &&
           overlapping_ids.empty();
  }
};

inline SplitReport validate_split(const SplitManifest& manifest,
                                  const GroundTruthIndex& annotations) {
  SplitReport r;
  r.dataset_name = manifest.dataset_name;
  r.train_count = manifest.train_ids.size();
  r.test_count = manifest.test_ids.size();
  const auto scan = [&](const std::vector<std::string>& ids, std::vector<std::string>& missing) {
    std::set<std::string> seen;
    for (const auto& id : ids) {
      if (!seen.insert(id).second) r.duplicate_ids.push_back(id);
      if (!annotations.contains(id)) missing.push_back(id);
    }
    return seen;
  };
  const auto train = scan(manifest.train_ids, r.missing_train);
  const auto test = scan(manifest.test_ids, r.missing_test);
  std::set_intersection(train.begin(), train.end(), test.begin(), test.end(),
                        std::back_inserter(r.overlapping_ids));
  return r;
}

}  // namespace sarscout
