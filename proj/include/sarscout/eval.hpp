#pragma once

#include <algorithm>
#include <array>
#include <cstdio>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "sarscout/dataset.hpp"
#include "sarscout/detections.hpp"
#include "sarscout/error.hpp"
#include "sarscout/geometry.hpp"

namespace sarscout {

/// IoU thresholds 0.50, 0.55, ..., 0.95.
inline constexpr std::array<double, 10> kIouThresholds{0.50, 0.55, 0.60, 0.65, 0.70,
                                                       0.75, 0.80, 0.85, 0.90, 0.95};

enum class Interpolation { coco101, all_points };

struct MatchRecord {
  std::string image_id;
  double det_conf{0.0};
  bool is_tp{false};
  double iou_threshold{0.5};
  std::size_t order{0};  ///< position of the detection within its image's list
};

/// Greedy matching in confidence order. A detection is a TP iff the unmatched
/// GT with the highest IoU (lowest index on ties) reaches the threshold.
inline std::vector<MatchRecord> match_detections(const DetectionSet& dets,
                                                 const GroundTruthSet& gts,
                                                 double iou_threshold) {
  std::vector<MatchRecord> records;
  records.reserve(dets.boxes.size());
  std::vector<bool> taken(gts.boxes.size(), false);
  for (const std::size_t d : confidence_order(dets.boxes)) {
    const PixelBox& det = dets.boxes[d];
    double best_iou = -1.0;
    std::size_t best = gts.boxes.size();
    for (std::size_t g = 0; g < gts.boxes.size(); ++g) {
      if (taken[g]) continue;
      const double v = iou(det, gts.boxes[g]);
      if (v > best_iou) {
        best_iou = v;
        best = g;
      }
    }
    MatchRecord rec{dets.image_id, det.confidence, false, iou_threshold, d};
    if (best < gts.boxes.size() && best_iou >= iou_threshold) {
      taken[best] = true;
      rec.is_tp = true;
    }
    records.push_back(std::move(rec));
  }
  return records;
}

struct ApResult {
  double ap{0.0};
  bool undefined{false};  ///< no ground truth: AP reported as 0
};

/// Pooled ranking: confidence descending, then image_id, then per-image order.
inline void rank_records(std::vector<MatchRecord>& records) {
  std::stable_sort(records.begin(), records.end(), [](const MatchRecord& l, const MatchRecord& r) {
    if (l.det_conf != r.det_conf) return l.det_conf > r.det_conf;
    if (l.image_id != r.image_id) return l.image_id < r.image_id;
    return l.order < r.order;
  });
}

inline ApResult average_precision(std::vector<MatchRecord> records, std::size_t total_gt,
                                  Interpolation interp = Interpolation::coco101) {
  if (total_gt == 0) return {0.0, true};
  rank_records(records);

  const std::size_t n = records.size();
  std::vector<double> precision(n), recall(n);
  std::size_t tp = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (records[i].is_tp) ++tp;
    precision[i] = static_cast<double>(tp) / static_cast<double>(i + 1);
    recall[i] = static_cast<double>(tp) / static_cast<double>(total_gt);
  }
  // precision envelope: max precision at any rank at or below i
  for (std::size_t i = n; i-- > 1;) precision[i - 1] = std::max(precision[i - 1], precision[i]);

  double ap = 0.0;
  if (interp == Interpolation::coco101) {
    for (int k = 0; k <= 100; ++k) {
      const double r = k / 100.0;
      const auto it = std::lower_bound(recall.begin(), recall.end(), r);
      if (it != recall.end()) ap += precision[static_cast<std::size_t>(it - recall.begin())];
    }
    ap /= 101.0;
  } else {
    double prev_recall = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      ap += (recall[i] - prev_recall) * precision[i];
      prev_recall = recall[i];
    }
  }
  return {ap, false};
}

struct EvalCounts {
  std::size_t images{0};
  std::size_t gts{0};
  std::size_t dets{0};
};

struct EvalReport {
  std::string detector_name;
  std::string dataset_name;
  std::vector<std::pair<double, double>> ap_by_threshold;  ///< (threshold, AP), ascending
  double map50{0.0};
  double map5095{0.0};
  EvalCounts counts;
  Interpolation interpolation{Interpolation::coco101};
  std::vector<std::string> warnings;

  [[nodiscard]] double ap_at(double threshold) const {
    for (const auto& [t, ap] : ap_by_threshold) {
      if (t == threshold) return ap;
    }
    fail(ErrorKind::not_found, "no AP recorded at IoU " + std::to_string(threshold));
  }
};

struct EvalOptions {
  std::string detector_name{"detector"};
  std::string dataset_name{"dataset"};
  Interpolation interpolation{Interpolation::coco101};
};

/// Evaluates over the ground-truth keyspace; images without detections count
/// as zero boxes, detections for ids outside the keyspace are ignored.
inline EvalReport evaluate(const std::map<std::string, DetectionSet>& dets,
                           const GroundTruthIndex& gts, const EvalOptions& options = {}) {
  EvalReport report;
  report.detector_name = options.detector_name;
  report.dataset_name = options.dataset_name;
  report.interpolation = options.interpolation;
  report.counts.images = gts.size();

  std::size_t ignored = 0;
  for (const auto& [id, set] : dets) {
    const auto it = gts.find(id);
    if (it == gts.end()) {
      ++ignored;
      continue;
    }
    if (set.image_w != it->second.image_w || set.image_h != it->second.image_h) {
      fail(ErrorKind::integrity, "image '" + id + "': detections are " +
                                     std::to_string(set.image_w) + "x" + std::to_string(set.image_h) +
                                     " but ground truth is " + std::to_string(it->second.image_w) +
                                     "x" + std::to_string(it->second.image_h));
    }
    report.counts.dets += set.boxes.size();
  }
  if (ignored > 0) {
    report.warnings.push_back(std::to_string(ignored) +
                              " detection image(s) outside the ground-truth keyspace were ignored");
  }
  for (const auto& [id, gt] : gts) report.counts.gts += gt.boxes.size();

  const DetectionSet empty_set;
  bool undefined = false;
  for (const double thr : kIouThresholds) {
    std::vector<MatchRecord> pooled;
    for (const auto& [id, gt] : gts) {
      const auto it = dets.find(id);
      DetectionSet none = empty_set;
      none.image_id = id;
      auto recs = match_detections(it != dets.end() ? it->second : none, gt, thr);
      pooled.insert(pooled.end(), std::make_move_iterator(recs.begin()),
                    std::make_move_iterator(recs.end()));
    }
    const ApResult ap = average_precision(std::move(pooled), report.counts.gts, options.interpolation);
    undefined = undefined || ap.undefined;
    report.ap_by_threshold.emplace_back(thr, ap.ap);
  }
  if (undefined) report.warnings.push_back("no ground-truth boxes: AP reported as 0");

  report.map50 = report.ap_by_threshold.front().second;
  double sum = 0.0;
  for (const auto& [t, ap] : report.ap_by_threshold) sum += ap;
  report.map5095 = sum / static_cast<double>(report.ap_by_threshold.size());
  return report;
}

// ----------------------------------------------------------------------------
// Report emitters
// ----------------------------------------------------------------------------
inline std::string threshold_key(double t) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%.2f", t);
  return buf;
}

inline nlohmann::ordered_json to_json(const EvalReport& r) {
  nlohmann::ordered_json j;
  j["detector_name"] = r.detector_name;
  j["dataset_name"] = r.dataset_name;
  j["interpolation"] = r.interpolation == Interpolation::coco101 ? "101-point" : "all-points";
  nlohmann::ordered_json aps = nlohmann::ordered_json::object();
  for (const auto& [t, ap] : r.ap_by_threshold) aps[threshold_key(t)] = ap;
  j["ap_by_threshold"] = aps;
  j["map50"] = r.map50;
  j["map5095"] = r.map5095;
  j["counts"] = {{"images", r.counts.images}, {"gts", r.counts.gts}, {"dets", r.counts.dets}};
  j["warnings"] = r.warnings;
  return j;
}

inline std::string percent1(double ratio) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.1f", ratio * 100.0);
  return buf;
}

/// Detector x dataset comparison of mAP.50 and mAP.50:.95 in percent.
/// Rows keep insertion order of detectors, columns insertion order of datasets.
class ComparisonTable {
 public:
  void add(const std::string& detector, const std::string& dataset, double map50, double map5095) {
    if (std::find(detectors_.begin(), detectors_.end(), detector) == detectors_.end()) {
      detectors_.push_back(detector);
    }
    if (std::find(datasets_.begin(), datasets_.end(), dataset) == datasets_.end()) {
      datasets_.push_back(dataset);
    }
    cells_[{detector, dataset}] = {map50, map5095};
  }
  void add(const EvalReport& r) { add(r.detector_name, r.dataset_name, r.map50, r.map5095); }

  [[nodiscard]] std::string markdown() const {
    std::ostringstream out;
    out << "| Method |";
    for (const auto& ds : datasets_) out << ' ' << ds << " mAP.50 (%) | " << ds << " mAP.50:.95 (%) |";
    out << "\n|---|";
    for (std::size_t i = 0; i < datasets_.size(); ++i) out << "---:|---:|";
    out << '\n';
    for (const auto& det : detectors_) {
      out << "| " << det << " |";
      for (const auto& ds : datasets_) {
        const auto [a, b] = cell(det, ds);
        out << ' ' << a << " | " << b << " |";
      }
      out << '\n';
    }
    return out.str();
  }

  [[nodiscard]] std::string csv() const {
    std::ostringstream out;
    out << "method";
    for (const auto& ds : datasets_) out << ',' << ds << "_map50," << ds << "_map50_95";
    out << '\n';
    for (const auto& det : detectors_) {
      out << det;
      for (const auto& ds : datasets_) {
        const auto [a, b] = cell(det, ds);
        out << ',' << a << ',' << b;
      }
      out << '\n';
    }
    return out.str();
  }

  /// Plain-text layout: one column per dataset holding "mAP.50 / mAP.50:.95".
  [[nodiscard]] std::string text() const {
    std::size_t name_w = std::string("Method").size();
    for (const auto& d : detectors_) name_w = std::max(name_w, d.size());
    const std::string sub = "mAP.50 / mAP.50:.95 (%)";
    std::size_t col_w = sub.size();
    for (const auto& ds : datasets_) col_w = std::max(col_w, ds.size());

    const auto pad = [](const std::string& s, std::size_t w) {
      return s + std::string(w > s.size() ? w - s.size() : 0, ' ');
    };
    std::ostringstream out;
    out << pad("Method", name_w);
    for (const auto& ds : datasets_) out << "  " << pad(ds, col_w);
    out << '\n' << pad("", name_w);
    for (std::size_t i = 0; i < datasets_.size(); ++i) out << "  " << pad(sub, col_w);
    out << '\n';
    for (const auto& det : detectors_) {
      out << pad(det, name_w);
      for (const auto& ds : datasets_) {
        const auto [a, b] = cell(det, ds);
        out << "  " << pad(a + " / " + b, col_w);
      }
      out << '\n';
    }
    std::string s = out.str();
    // strip trailing spaces per line
    std::string clean;
    std::istringstream lines(s);
    for (std::string line; std::getline(lines, line);) {
      line.erase(line.find_last_not_of(' ') + 1);
      clean += line + '\n';
    }
    return clean;
  }

 private:
  [[nodiscard]] std::pair<std::string, std::string> cell(const std::string& det,
                                                         const std::string& ds) const {
    const auto it = cells_.find({det, ds});
    if (it == cells_.end()) return {"-", "-"};
    return {percent1(it->second.first), percent1(it->second.second)};
  }

  std::vector<std::string> detectors_;
  std::vector<std::string> datasets_;
  std::map<std::pair<std::string, std::string>, std::pair<double, double>> cells_;
};

}  // namespace sarscout
