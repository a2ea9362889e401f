#pragma once
// Brute-force reference implementations used to check the library. They
// share no code with include/sarscout beyond the plain data types.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "sarscout/dataset.hpp"
#include "sarscout/detections.hpp"
#include "sarscout/geometry.hpp"
#include "sarscout/grounding.hpp"

namespace oracle {

using sarscout::PixelBox;

// ----------------------------------------------------------------------------
// IoU by counting unit cells. Exact for integer corner coordinates.
// ----------------------------------------------------------------------------
inline double raster_iou(const PixelBox& a, const PixelBox& b) {
  const int x0 = static_cast<int>(std::floor(std::min(a.x1, b.x1)));
  const int x1 = static_cast<int>(std::ceil(std::max(a.x2, b.x2)));
  const int y0 = static_cast<int>(std::floor(std::min(a.y1, b.y1)));
  const int y1 = static_cast<int>(std::ceil(std::max(a.y2, b.y2)));
  long inter = 0, uni = 0;
  for (int y = y0; y < y1; ++y) {
    for (int x = x0; x < x1; ++x) {
      const double cx = x + 0.5, cy = y + 0.5;
      const bool in_a = cx > a.x1 && cx < a.x2 && cy > a.y1 && cy < a.y2;
      const bool in_b = cx > b.x1 && cx < b.x2 && cy > b.y1 && cy < b.y2;
      inter += in_a && in_b;
      uni += in_a || in_b;
    }
  }
  return uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

/// Overlap from interval lengths; used where coordinates are not integral.
inline double interval_iou(const PixelBox& a, const PixelBox& b) {
  const double ox = std::max(0.0, std::min(a.x2, b.x2) - std::max(a.x1, b.x1));
  const double oy = std::max(0.0, std::min(a.y2, b.y2) - std::max(a.y1, b.y1));
  const double inter = ox * oy;
  const double uni = (a.x2 - a.x1) * (a.y2 - a.y1) + (b.x2 - b.x1) * (b.y2 - b.y1) - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

// ----------------------------------------------------------------------------
// NMS by exhaustive search over subsets: the kept set is the unique S where a
// box belongs to S iff no higher-ranked member of S overlaps it beyond thr.
// Returns nullopt when zero or several subsets qualify.
// ----------------------------------------------------------------------------
inline std::optional<std::vector<PixelBox>> exhaustive_nms(const std::vector<PixelBox>& boxes, double thr) {
  const std::size_t n = boxes.size();
  // rank: confidence descending, input order on ties
  std::vector<std::size_t> rank(n);
  for (std::size_t i = 0; i < n; ++i) rank[i] = i;
  std::stable_sort(rank.begin(), rank.end(),
                   [&](std::size_t l, std::size_t r) { return boxes[l].confidence > boxes[r].confidence; });
  std::vector<std::size_t> pos(n);
  for (std::size_t r = 0; r < n; ++r) pos[rank[r]] = r;

  std::optional<std::uint32_t> found;
  int solutions = 0;
  for (std::uint32_t mask = 0; mask < (1u << n); ++mask) {
    bool consistent = true;
    for (std::size_t i = 0; i < n && consistent; ++i) {
      bool blocked = false;
      for (std::size_t j = 0; j < n; ++j) {
        if ((mask >> j & 1u) && pos[j] < pos[i] && interval_iou(boxes[i], boxes[j]) > thr) blocked = true;
      }
      const bool member = mask >> i & 1u;
      if (member == blocked) consistent = false;
    }
    if (consistent) {
      ++solutions;
      found = mask;
    }
  }
  if (solutions != 1) return std::nullopt;
  std::vector<PixelBox> kept;
  for (std::size_t r = 0; r < n; ++r) {
    if (*found >> rank[r] & 1u) kept.push_back(boxes[rank[r]]);
  }
  return kept;
}

// ----------------------------------------------------------------------------
// mAP: explicit greedy matching, explicit precision/recall sweep, and the
// interpolated precision at each recall point found by scanning every rank.
// ----------------------------------------------------------------------------
struct Instance {
  std::map<std::string, std::vector<PixelBox>> dets;  ///< raw, any order
  std::map<std::string, std::vector<PixelBox>> gts;
  std::map<std::string, std::pair<int, int>> dims;
};

struct Hit {
  double conf;
  std::string image;
  std::size_t order;  ///< index within its image's confidence-sorted list
  bool tp;
};

inline std::vector<Hit> match_all(const Instance& inst, double thr) {
  std::vector<Hit> hits;
  for (const auto& [id, gt] : inst.gts) {
    auto it = inst.dets.find(id);
    if (it == inst.dets.end()) continue;
    std::vector<std::size_t> order(it->second.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(), [&](std::size_t l, std::size_t r) {
      return it->second[l].confidence > it->second[r].confidence;
    });
    std::vector<char> used(gt.size(), 0);
    for (const std::size_t d : order) {
      std::optional<std::size_t> pick;
      double best = 0.0;
      for (std::size_t g = 0; g < gt.size(); ++g) {
        if (used[g]) continue;
        const double v = interval_iou(it->second[d], gt[g]);
        if (v >= thr && (!pick || v > best)) {
          pick = g;
          best = v;
        }
      }
      if (pick) used[*pick] = 1;
      hits.push_back({it->second[d].confidence, id, d, pick.has_value()});
    }
  }
  return hits;
}

inline double average_precision_101(std::vector<Hit> hits, std::size_t total_gt) {
  if (total_gt == 0) return 0.0;
  std::sort(hits.begin(), hits.end(), [](const Hit& l, const Hit& r) {
    if (l.conf != r.conf) return l.conf > r.conf;
    if (l.image != r.image) return l.image < r.image;
    return l.order < r.order;
  });
  std::vector<double> prec, rec;
  std::size_t tp = 0;
  for (std::size_t i = 0; i < hits.size(); ++i) {
    tp += hits[i].tp;
    prec.push_back(static_cast<double>(tp) / static_cast<double>(i + 1));
    rec.push_back(static_cast<double>(tp) / static_cast<double>(total_gt));
  }
  double sum = 0.0;
  for (int k = 0; k <= 100; ++k) {
    const double r = k / 100.0;
    double p = 0.0;
    for (std::size_t i = 0; i < rec.size(); ++i) {
      if (rec[i] >= r) p = std::max(p, prec[i]);
    }
    sum += p;
  }
  return sum / 101.0;
}

struct MapResult {
  std::vector<double> ap;  ///< one per threshold 0.50..0.95
  double map50;
  double map5095;
};

inline MapResult brute_force_map(const Instance& inst) {
  MapResult out;
  std::size_t total = 0;
  for (const auto& [id, g] : inst.gts) total += g.size();
  double sum = 0.0;
  for (int step = 0; step < 10; ++step) {
    const double thr = 0.5 + 0.05 * step;
    out.ap.push_back(average_precision_101(match_all(inst, thr), total));
    sum += out.ap.back();
  }
  out.map50 = out.ap[0];
  out.map5095 = sum / 10.0;
  return out;
}

/// Random instance: up to `max_images` images of random size, up to
/// `max_boxes` GT boxes each, detections jittered from GTs plus stray boxes.
inline Instance random_instance(std::mt19937& rng, int max_images = 10, int max_boxes = 5) {
  std::uniform_int_distribution<int> n_images(1, max_images), n_boxes(0, max_boxes), dim(64, 512);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  Instance inst;
  const int images = n_images(rng);
  for (int i = 0; i < images; ++i) {
    const std::string id = "img" + std::to_string(i);
    const int w = dim(rng), h = dim(rng);
    inst.dims[id] = {w, h};
    auto& gts = inst.gts[id];
    auto& dets = inst.dets[id];
    const auto random_box = [&](double conf) {
      const double bw = 4.0 + unit(rng) * w / 3.0, bh = 4.0 + unit(rng) * h / 3.0;
      const double x = unit(rng) * (w - bw), y = unit(rng) * (h - bh);
      return PixelBox{x, y, x + bw, y + bh, conf};
    };
    const int ng = n_boxes(rng);
    for (int g = 0; g < ng; ++g) {
      PixelBox b = random_box(1.0);
      gts.push_back(b);
      if (unit(rng) < 0.8) {
        // jittered detection; sometimes a duplicate on the same object
        const int copies = unit(rng) < 0.2 ? 2 : 1;
        for (int c = 0; c < copies; ++c) {
          const double jx = (unit(rng) - 0.5) * 0.4 * b.width(), jy = (unit(rng) - 0.5) * 0.4 * b.height();
          PixelBox d{b.x1 + jx, b.y1 + jy, b.x2 + jx * unit(rng), b.y2 + jy * unit(rng), unit(rng)};
          d = sarscout::clamp_box(d, w, h);
          if (d.x2 > d.x1 && d.y2 > d.y1) dets.push_back(d);
        }
      }
    }
    const int strays = n_boxes(rng) / 2;
    for (int s = 0; s < strays; ++s) dets.push_back(random_box(unit(rng)));
    // occasional confidence ties across and within images
    if (!dets.empty() && unit(rng) < 0.3) dets.back().confidence = 0.5;
  }
  return inst;
}

inline std::map<std::string, sarscout::DetectionSet> detection_sets(const Instance& inst) {
  std::map<std::string, sarscout::DetectionSet> out;
  for (const auto& [id, boxes] : inst.dets) {
    const auto [w, h] = inst.dims.at(id);
    out[id] = sarscout::make_detection_set(id, w, h, boxes, "oracle", {0.0, 1.0});
  }
  return out;
}

inline sarscout::GroundTruthIndex ground_truth(const Instance& inst) {
  sarscout::GroundTruthIndex out;
  for (const auto& [id, boxes] : inst.gts) {
    const auto [w, h] = inst.dims.at(id);
    out[id] = sarscout::GroundTruthSet{id, w, h, boxes};
  }
  return out;
}

// ----------------------------------------------------------------------------
// Grounding coverage by counting box centers against each region's bounds.
// ----------------------------------------------------------------------------
inline std::size_t covered_boxes(const std::vector<sarscout::AnswerRegion>& regions,
                                 const std::vector<PixelBox>& boxes) {
  std::size_t count = 0;
  for (const PixelBox& b : boxes) {
    const double cx = 0.5 * (b.x1 + b.x2), cy = 0.5 * (b.y1 + b.y2);
    bool hit = false;
    for (const auto& r : regions) {
      const double lo_x = r.x_min.value_or(-1e300), hi_x = r.x_max.value_or(1e300);
      const double lo_y = r.y_min.value_or(-1e300), hi_y = r.y_max.value_or(1e300);
      if (r.kind == sarscout::AnswerRegion::Kind::point) {
        hit = hit || (lo_x >= b.x1 && lo_x <= b.x2 && lo_y >= b.y1 && lo_y <= b.y2);
      } else {
        hit = hit || (cx >= lo_x && cx <= hi_x && cy >= lo_y && cy <= hi_y);
      }
    }
    count += hit;
  }
  return count;
}

}  // namespace oracle
