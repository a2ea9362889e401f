#pragma once

#include <algorithm>
#include <cctype>
#include <cstdlib>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "sarscout/geometry.hpp"

namespace sarscout {

// ============================================================================
// Coordinate regions cited in VLM answers
// ============================================================================
struct AnswerRegion {
  enum class Kind { range, point };
  Kind kind{Kind::range};
  // Unset sides are unbounded (the answer named only one axis).
  std::optional<double> x_min, x_max, y_min, y_max;
  std::size_t span_begin{0};  ///< byte offsets into the answer, [begin, end)
  std::size_t span_end{0};
  double raw_area{0.0};     ///< area before clamping (unbounded sides span the image)
  double inside_area{0.0};  ///< part of raw_area inside the image

  [[nodiscard]] bool same_extent(const AnswerRegion& o) const noexcept {
    return kind == o.kind && x_min == o.x_min && x_max == o.x_max && y_min == o.y_min &&
           y_max == o.y_max;
  }
};

namespace grammar {

struct Token {
  enum class Type { number, word, punct, sentence_end };
  Type type;
  double number{0.0};
  std::string text;  ///< lowercased word or punct character ("-" for all dashes)
  std::size_t begin{0};
  std::size_t end{0};
};

/// Splits text into numbers, ASCII words, and the punctuation the grammar
/// uses. Sentences end at '.', '!', '?' and newlines. Other bytes (including
/// whole UTF-8 sequences) are skipped.
inline std::vector<Token> tokenize(std::string_view s) {
  std::vector<Token> out;
  std::size_t i = 0;
  const auto is_digit = [&](std::size_t k) {
    return k < s.size() && std::isdigit(static_cast<unsigned char>(s[k]));
  };
  while (i < s.size()) {
    const unsigned char c = static_cast<unsigned char>(s[i]);
    if (std::isdigit(c)) {
      const std::size_t b = i;
      while (is_digit(i)) ++i;
      if (i + 1 < s.size() && s[i] == '.' && is_digit(i + 1)) {
        ++i;
        while (is_digit(i)) ++i;
      }
      Token t{Token::Type::number, 0.0, std::string(s.substr(b, i - b)), b, i};
      t.number = std::strtod(t.text.c_str(), nullptr);
      out.push_back(std::move(t));
    } else if (std::isalpha(c)) {
      const std::size_t b = i;
      std::string w;
      while (i < s.size() && std::isalpha(static_cast<unsigned char>(s[i]))) {
        w += static_cast<char>(std::tolower(static_cast<unsigned char>(s[i])));
        ++i;
      }
      out.push_back({Token::Type::word, 0.0, std::move(w), b, i});
    } else if (c == '.' || c == '!' || c == '?' || c == '\n') {
      out.push_back({Token::Type::sentence_end, 0.0, std::string(1, static_cast<char>(c)), i, i + 1});
      ++i;
    } else if (std::string_view("()[],:=-~").find(static_cast<char>(c)) != std::string_view::npos) {
      out.push_back({Token::Type::punct, 0.0, std::string(1, static_cast<char>(c)), i, i + 1});
      ++i;
    } else if (c == 0xE2 && i + 2 < s.size() &&
               ((s[i + 1] == '\x80' && (s[i + 2] == '\x93' || s[i + 2] == '\x94')) ||
                (s[i + 1] == '\x88' && s[i + 2] == '\x92'))) {
      // en dash, em dash, minus sign
      out.push_back({Token::Type::punct, 0.0, "-", i, i + 3});
      i += 3;
    } else if (c >= 0x80) {
      // skip one UTF-8 sequence
      std::size_t len = 1;
      if ((c & 0xE0) == 0xC0) len = 2;
      else if ((c & 0xF0) == 0xE0) len = 3;
      else if ((c & 0xF8) == 0xF0) len = 4;
      i += std::min(len, s.size() - i);
    } else {
      ++i;
    }
  }
  return out;
}

struct AxisRange {
  char axis;
  double lo, hi;
  std::size_t begin, end;
};

struct Tuple {
  std::vector<double> values;
  std::size_t begin, end;
};

class SentenceParser {
 public:
  explicit SentenceParser(std::span<const Token> toks) : t_(toks) {}

  void run() {
    std::size_t i = 0;
    while (i < t_.size()) {
      if (auto n = tuple_at(i)) {
        i = *n;
      } else if (auto m = axis_range_at(i)) {
        i = *m;
      } else {
        ++i;
      }
    }
  }

  std::vector<AxisRange> ranges;
  std::vector<Tuple> tuples;

 private:
  [[nodiscard]] bool is_punct(std::size_t i, const char* p) const {
    return i < t_.size() && t_[i].type == Token::Type::punct && t_[i].text == p;
  }
  [[nodiscard]] bool is_word(std::size_t i, std::initializer_list<std::string_view> words) const {
    if (i >= t_.size() || t_[i].type != Token::Type::word) return false;
    return std::find(words.begin(), words.end(), t_[i].text) != words.end();
  }
  [[nodiscard]] bool is_number(std::size_t i) const {
    return i < t_.size() && t_[i].type == Token::Type::number;
  }
  [[nodiscard]] std::size_t skip_unit(std::size_t i) const {
    return is_word(i, {"px", "pixel", "pixels"}) ? i + 1 : i;
  }

  // "(" NUM ("," NUM){1|3} ")"  or the same with brackets
  std::optional<std::size_t> tuple_at(std::size_t i) {
    const bool paren = is_punct(i, "(");
    if (!paren && !is_punct(i, "[")) return std::nullopt;
    const char* close = paren ? ")" : "]";
    Tuple tup{{}, t_[i].begin, 0};
    std::size_t j = i + 1;
    while (true) {
      if (!is_number(j)) return std::nullopt;
      tup.values.push_back(t_[j].number);
      j = skip_unit(j + 1);
      if (is_punct(j, ",")) {
        ++j;
        continue;
      }
      if (is_punct(j, close)) break;
      return std::nullopt;
    }
    if (tup.values.size() != 2 && tup.values.size() != 4) return std::nullopt;
    tup.end = t_[j].end;
    tuples.push_back(std::move(tup));
    return j + 1;
  }

  // AXIS [-axis|axis|coordinate(s)] FILLER* NUM [px] CONNECTOR NUM [px]
  std::optional<std::size_t> axis_range_at(std::size_t i) {
    if (!is_word(i, {"x", "y"})) return std::nullopt;
    const char axis = t_[i].text[0];
    std::size_t j = i + 1;
    const auto suffix = {std::string_view("axis"), std::string_view("coordinate"),
                         std::string_view("coordinates"), std::string_view("coord"),
                         std::string_view("coords"), std::string_view("values"),
                         std::string_view("value")};
    if (is_punct(j, "-") && is_word(j + 1, suffix)) j += 2;
    else if (is_word(j, suffix)) j += 1;
    for (int guard = 0; guard < 4; ++guard) {
      if (is_punct(j, ":") || is_punct(j, "=") ||
          is_word(j, {"from", "between", "range", "ranges", "ranging", "of", "in", "is", "are",
                      "spans", "spanning", "within", "roughly", "approximately", "about", "around",
                      "approx"})) {
        ++j;
      } else {
        break;
      }
    }
    if (!is_number(j)) return std::nullopt;
    const double a = t_[j].number;
    j = skip_unit(j + 1);
    if (!(is_punct(j, "-") || is_punct(j, "~") || is_word(j, {"to", "and", "through"}))) {
      return std::nullopt;
    }
    ++j;
    if (!is_number(j)) return std::nullopt;
    const double b = t_[j].number;
    const std::size_t end = t_[j].end;
    j = skip_unit(j + 1);
    ranges.push_back({axis, std::min(a, b), std::max(a, b), t_[i].begin, end});
    return j;
  }

  std::span<const Token> t_;
};

}  // namespace grammar

namespace detail {

inline void finish_region(AnswerRegion& r, double w, double h) {
  const auto raw = [](const std::optional<double>& v, double fallback) { return v.value_or(fallback); };
  const double rx0 = raw(r.x_min, 0.0), rx1 = raw(r.x_max, w);
  const double ry0 = raw(r.y_min, 0.0), ry1 = raw(r.y_max, h);
  r.raw_area = r.kind == AnswerRegion::Kind::point ? 0.0 : (rx1 - rx0) * (ry1 - ry0);
  const auto clampv = [](std::optional<double>& v, double hi) {
    if (v) v = std::clamp(*v, 0.0, hi);
  };
  clampv(r.x_min, w);
  clampv(r.x_max, w);
  clampv(r.y_min, h);
  clampv(r.y_max, h);
  r.inside_area = r.kind == AnswerRegion::Kind::point
                      ? 0.0
                      : (raw(r.x_max, w) - raw(r.x_min, 0.0)) * (raw(r.y_max, h) - raw(r.y_min, 0.0));
}

}  // namespace detail

/// Coordinate references in an answer: axis ranges ("x: 100-300",
/// "x from 100 to 300", "x between 100 and 300"), points "(120, 340)" and box
/// tuples "(x1, y1, x2, y2)". An x-range and a y-range in the same sentence
/// merge into one region. Never throws on any input.
inline std::vector<AnswerRegion> extract_regions(std::string_view answer, int image_w, int image_h) {
  std::vector<AnswerRegion> out;
  try {
    const auto tokens = grammar::tokenize(answer);
    std::size_t start = 0;
    std::vector<AnswerRegion> found;
    const auto flush = [&](std::size_t end) {
      grammar::SentenceParser p(std::span<const grammar::Token>(tokens).subspan(start, end - start));
      p.run();
      std::vector<grammar::AxisRange> xs, ys;
      for (const auto& r : p.ranges) (r.axis == 'x' ? xs : ys).push_back(r);
      std::vector<AnswerRegion> local;
      for (std::size_t k = 0; k < std::max(xs.size(), ys.size()); ++k) {
        AnswerRegion r;
        r.kind = AnswerRegion::Kind::range;
        std::size_t b = std::string_view::npos, e = 0;
        if (k < xs.size()) {
          r.x_min = xs[k].lo;
          r.x_max = xs[k].hi;
          b = std::min(b, xs[k].begin);
          e = std::max(e, xs[k].end);
        }
        if (k < ys.size()) {
          r.y_min = ys[k].lo;
          r.y_max = ys[k].hi;
          b = std::min(b, ys[k].begin);
          e = std::max(e, ys[k].end);
        }
        r.span_begin = b;
        r.span_end = e;
        local.push_back(r);
      }
      for (const auto& t : p.tuples) {
        AnswerRegion r;
        if (t.values.size() == 2) {
          r.kind = AnswerRegion::Kind::point;
          r.x_min = r.x_max = t.values[0];
          r.y_min = r.y_max = t.values[1];
        } else {
          r.kind = AnswerRegion::Kind::range;
          r.x_min = std::min(t.values[0], t.values[2]);
          r.x_max = std::max(t.values[0], t.values[2]);
          r.y_min = std::min(t.values[1], t.values[3]);
          r.y_max = std::max(t.values[1], t.values[3]);
        }
        r.span_begin = t.begin;
        r.span_end = t.end;
        local.push_back(r);
      }
      std::stable_sort(local.begin(), local.end(), [](const AnswerRegion& a, const AnswerRegion& b) {
        return a.span_begin < b.span_begin;
      });
      found.insert(found.end(), local.begin(), local.end());
    };
    for (std::size_t i = 0; i < tokens.size(); ++i) {
      if (tokens[i].type == grammar::Token::Type::sentence_end) {
        flush(i);
        start = i + 1;
      }
    }
    flush(tokens.size());

    for (AnswerRegion& r : found) {
      detail::finish_region(r, image_w, image_h);
      const bool dup = std::any_of(out.begin(), out.end(), [&](const AnswerRegion& o) { return o.same_extent(r); });
      if (!dup) out.push_back(r);
    }
  } catch (...) {
    // total by contract: unparseable input yields no regions
    out.clear();
  }
  return out;
}

inline bool region_covers(const AnswerRegion& r, const PixelBox& box) noexcept {
  if (r.kind == AnswerRegion::Kind::point) {
    const double px = r.x_min.value_or(0.0), py = r.y_min.value_or(0.0);
    return px >= box.x1 && px <= box.x2 && py >= box.y1 && py <= box.y2;
  }
  const double cx = box.center_x(), cy = box.center_y();
  if (r.x_min && cx < *r.x_min) return false;
  if (r.x_max && cx > *r.x_max) return false;
  if (r.y_min && cy < *r.y_min) return false;
  if (r.y_max && cy > *r.y_max) return false;
  return true;
}

struct GroundingScore {
  std::size_t regions{0};
  std::size_t boxes_covered{0};
  std::size_t reference_boxes{0};
  double coverage{0.0};
  double spurious_area_ratio{0.0};
  bool no_reference{false};
};

/// Coverage: fraction of reference boxes whose center lies in at least one
/// range region (points cover a box they fall inside).
inline GroundingScore score_grounding(std::span<const AnswerRegion> regions,
                                      std::span<const PixelBox> reference) {
  GroundingScore s;
  s.regions = regions.size();
  s.reference_boxes = reference.size();
  for (const PixelBox& b : reference) {
    if (std::any_of(regions.begin(), regions.end(), [&](const AnswerRegion& r) { return region_covers(r, b); })) {
      ++s.boxes_covered;
    }
  }
  if (reference.empty()) {
    s.no_reference = true;
  } else {
    s.coverage = static_cast<double>(s.boxes_covered) / static_cast<double>(reference.size());
  }
  double raw = 0.0, inside = 0.0;
  for (const auto& r : regions) {
    raw += r.raw_area;
    inside += r.inside_area;
  }
  s.spurious_area_ratio = raw > 0.0 ? std::clamp((raw - inside) / raw, 0.0, 1.0) : 0.0;
  return s;
}

inline nlohmann::ordered_json to_json(const AnswerRegion& r) {
  const auto opt = [](const std::optional<double>& v) {
    return v ? nlohmann::ordered_json(*v) : nlohmann::ordered_json(nullptr);
  };
  nlohmann::ordered_json j;
  j["kind"] = r.kind == AnswerRegion::Kind::point ? "point" : "range";
  j["x_min"] = opt(r.x_min);
  j["x_max"] = opt(r.x_max);
  j["y_min"] = opt(r.y_min);
  j["y_max"] = opt(r.y_max);
  j["source_span"] = {r.span_begin, r.span_end};
  return j;
}

inline nlohmann::ordered_json to_json(const GroundingScore& s) {
  nlohmann::ordered_json j;
  j["regions"] = s.regions;
  j["boxes_covered"] = s.boxes_covered;
  j["reference_boxes"] = s.reference_boxes;
  j["coverage"] = s.coverage;
  j["spurious_area_ratio"] = s.spurious_area_ratio;
  j["no_reference"] = s.no_reference;
  return j;
}

inline nlohmann::ordered_json grounding_report(const std::string& session_id, std::size_t turn_index,
                                               std::span<const AnswerRegion> regions,
                                               const GroundingScore& score) {
  nlohmann::ordered_json j;
  j["session_id"] = session_id;
  j["turn_index"] = turn_index;
  j["regions"] = nlohmann::ordered_json::array();
  for (const auto& r : regions) j["regions"].push_back(to_json(r));
  j["score"] = to_json(score);
  return j;
}

}  // namespace sarscout
