#pragma once
// Random answers with known coordinate content, for checking extraction and
// coverage end to end.

#include <algorithm>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "oracles.hpp"
#include "sarscout/geometry.hpp"
#include "sarscout/grounding.hpp"

namespace oracle {

struct GroundingCase {
  std::string text;
  int image_w{500};
  int image_h{375};
  std::vector<sarscout::AnswerRegion> expected;
  std::vector<sarscout::PixelBox> boxes;
};

inline GroundingCase random_grounding_case(std::mt19937& rng) {
  using sarscout::AnswerRegion;
  std::uniform_int_distribution<int> n_regions(0, 3), n_boxes(0, 6), form(0, 5), coord_x(0, 540),
      coord_y(0, 400);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  GroundingCase c;
  const std::vector<std::string> fillers = {"A ship is visible. ", "Sea clutter dominates. ", ""};
  const int regions = n_regions(rng);
  for (int r = 0; r < regions; ++r) {
    int x0 = coord_x(rng), x1 = coord_x(rng), y0 = coord_y(rng), y1 = coord_y(rng);
    AnswerRegion reg;
    bool has_x = true, has_y = true;
    std::string sentence;
    const auto n = [](int v) { return std::to_string(v); };
    switch (form(rng)) {
      case 0:
        sentence = "Ships are at x: " + n(x0) + "-" + n(x1) + ", y: " + n(y0) + "-" + n(y1) + ".";
        break;
      case 1:
        sentence = "A vessel lies at x from " + n(x0) + " to " + n(x1) + " and y from " + n(y0) + " to " + n(y1) + ".";
        break;
      case 2:
        sentence = "Look between x " + n(x0) + " and " + n(x1) + ".";
        has_y = false;
        break;
      case 3:
        sentence = "The y coordinates range from " + n(y0) + " to " + n(y1) + " px.";
        has_x = false;
        break;
      case 4:
        sentence = "A ship sits at (" + n(x0) + ", " + n(y0) + ").";
        reg.kind = AnswerRegion::Kind::point;
        x1 = x0;
        y1 = y0;
        break;
      default:
        sentence = "Box (" + n(x0) + ", " + n(y0) + ", " + n(x1) + ", " + n(y1) + ") is occupied.";
        break;
    }
    if (has_x) {
      reg.x_min = std::clamp<double>(std::min(x0, x1), 0, c.image_w);
      reg.x_max = std::clamp<double>(std::max(x0, x1), 0, c.image_w);
    }
    if (has_y) {
      reg.y_min = std::clamp<double>(std::min(y0, y1), 0, c.image_h);
      reg.y_max = std::clamp<double>(std::max(y0, y1), 0, c.image_h);
    }
    c.text += fillers[static_cast<std::size_t>(r) % fillers.size()] + sentence + " ";
    const bool dup = std::any_of(c.expected.begin(), c.expected.end(),
                                 [&](const AnswerRegion& o) { return o.same_extent(reg); });
    if (!dup) c.expected.push_back(reg);
  }
  const int boxes = n_boxes(rng);
  for (int b = 0; b < boxes; ++b) {
    const double x = unit(rng) * 470, y = unit(rng) * 345;
    c.boxes.push_back({x, y, x + 4 + unit(rng) * 26, y + 4 + unit(rng) * 26, 0.5 + unit(rng) * 0.5});
  }
  return c;
}

inline std::string describe(const std::vector<sarscout::AnswerRegion>& rs) {
  std::string s;
  for (const auto& r : rs) s += sarscout::to_json(r).dump() + " ";
  return s;
}

/// Mismatches between extract_regions and the expected regions of each
/// corpus entry; empty when every case matches.
inline std::vector<std::string> corpus_failures(const nlohmann::json& corpus) {
  using sarscout::AnswerRegion;
  const auto opt = [](const nlohmann::json& v) -> std::optional<double> {
    if (v.is_null()) return std::nullopt;
    return v.get<double>();
  };
  std::vector<std::string> failures;
  for (const auto& c : corpus) {
    const std::string text = c.at("text");
    const auto got = sarscout::extract_regions(text, c.at("image_w"), c.at("image_h"));
    const auto& want = c.at("regions");
    bool ok = got.size() == want.size();
    for (std::size_t i = 0; ok && i < got.size(); ++i) {
      AnswerRegion w;
      w.kind = want[i].at("kind") == "point" ? AnswerRegion::Kind::point : AnswerRegion::Kind::range;
      w.x_min = opt(want[i].at("x_min"));
      w.x_max = opt(want[i].at("x_max"));
      w.y_min = opt(want[i].at("y_min"));
      w.y_max = opt(want[i].at("y_max"));
      ok = got[i].same_extent(w);
    }
    if (ok && c.contains("span")) {
      ok = !got.empty() &&
           text.substr(got[0].span_begin, got[0].span_end - got[0].span_begin) == c.at("span").get<std::string>();
    }
    if (!ok) failures.push_back("'" + text + "' -> " + describe(got));
  }
  return failures;
}

/// Runs `cases` random answers through extraction and scoring and compares
/// both with the generator's ground truth and the center-count oracle.
inline std::vector<std::string> random_grounding_failures(int cases, unsigned seed) {
  std::mt19937 rng(seed);
  std::vector<std::string> failures;
  for (int n = 0; n < cases; ++n) {
    const auto c = random_grounding_case(rng);
    const auto got = sarscout::extract_regions(c.text, c.image_w, c.image_h);
    bool ok = got.size() == c.expected.size();
    for (std::size_t i = 0; ok && i < got.size(); ++i) ok = got[i].same_extent(c.expected[i]);
    const auto score = sarscout::score_grounding(got, c.boxes);
    ok = ok && score.boxes_covered == covered_boxes(c.expected, c.boxes) &&
         score.reference_boxes == c.boxes.size();
    if (!ok) failures.push_back("case " + std::to_string(n) + " '" + c.text + "' -> " + describe(got));
  }
  return failures;
}

}  // namespace oracle
