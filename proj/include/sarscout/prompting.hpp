#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "sarscout/detections.hpp"
#include "sarscout/error.hpp"
#include "sarscout/geometry.hpp"

namespace sarscout {

enum class PromptMode { with_boxes, without_boxes };

inline std::string to_string(PromptMode m) {
  return m == PromptMode::with_boxes ? "with_boxes" : "without_boxes";
}

inline PromptMode parse_prompt_mode(const std::string& s) {
  if (s == "with_boxes" || s == "with") return PromptMode::with_boxes;
  if (s == "without_boxes" || s == "without") return PromptMode::without_boxes;
  fail(ErrorKind::invalid_argument, "unknown mode '" + s + "' (expected with|without)");
}

struct SceneContext {
  int image_w{0};
  int image_h{0};
  std::vector<PixelBox> detections;
  std::string detector_name;

  [[nodiscard]] std::size_t ship_count() const noexcept { return detections.size(); }

  static SceneContext from(const DetectionSet& set) {
    return {set.image_w, set.image_h, set.boxes, set.detector_name};
  }
};

struct PromptBundle {
  std::string system_text;
  std::string scene_block;  ///< empty unless boxes_included
  std::string user_text;
  bool boxes_included{false};
  std::string template_version;

  /// Text of the user chat message: scene block (if any) followed by the question.
  [[nodiscard]] std::string user_message() const {
    if (scene_block.empty()) return user_text;
    return scene_block + "\n\n" + user_text;
  }

  friend bool operator==(const PromptBundle&, const PromptBundle&) = default;
};

// ----------------------------------------------------------------------------
// Templates. Placeholders: {image_w} {image_h} {ship_count} {ship_lines}
// {question}. Ship placeholders are only legal in the scene template.
// ----------------------------------------------------------------------------
struct PromptTemplates {
  std::string version;
  std::string system;
  std::string scene;
  std::string user;
  std::string opening;

  static PromptTemplates builtin();
  static PromptTemplates from_directory(const std::filesystem::path& dir);
};

namespace detail {

inline const std::set<std::string>& known_placeholders() {
  static const std::set<std::string> names{"image_w", "image_h", "ship_count", "ship_lines",
                                           "question"};
  return names;
}

/// Names of `{identifier}` placeholders appearing in `text`.
inline std::vector<std::string> placeholders_in(const std::string& text) {
  std::vector<std::string> names;
  for (std::size_t i = text.find('{'); i != std::string::npos; i = text.find('{', i + 1)) {
    const std::size_t close = text.find('}', i);
    if (close == std::string::npos) break;
    const std::string name = text.substr(i + 1, close - i - 1);
    const bool ident = !name.empty() && std::all_of(name.begin(), name.end(), [](char c) {
      return std::isalnum(static_cast<unsigned char>(c)) || c == '_';
    });
    if (ident) names.push_back(name);
  }
  return names;
}

inline std::string fill(const std::string& text, const std::map<std::string, std::string>& values) {
  std::string out;
  out.reserve(text.size());
  std::size_t i = 0;
  while (i < text.size()) {
    if (text[i] == '{') {
      const std::size_t close = text.find('}', i);
      if (close != std::string::npos) {
        const auto it = values.find(text.substr(i + 1, close - i - 1));
        if (it != values.end()) {
          out += it->second;
          i = close + 1;
          continue;
        }
      }
    }
    out += text[i++];
  }
  return out;
}

inline std::uint64_t fnv1a(const std::string& s, std::uint64_t h = 14695981039346656037ull) {
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

inline std::string trim_copy(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

inline std::string rstrip(std::string s) {
  while (!s.empty() && (s.back() == ' ' || s.back() == '\n' || s.back() == '\r' || s.back() == '\t'))
    s.pop_back();
  return s;
}

inline void check_template(const std::string& name, const std::string& text, bool allow_ships) {
  for (const auto& p : placeholders_in(text)) {
    if (!known_placeholders().contains(p)) {
      fail(ErrorKind::invalid_argument, "template '" + name + "': unknown placeholder {" + p + "}");
    }
    if (!allow_ships && (p == "ship_count" || p == "ship_lines")) {
      fail(ErrorKind::invalid_argument,
           "template '" + name + "': {" + p + "} is only allowed in the scene template");
    }
  }
}

}  // namespace detail

inline PromptTemplates PromptTemplates::builtin() {
  PromptTemplates t;
  t.version = "builtin-1";
  t.system =
      "You are a maritime analysis assistant for synthetic aperture radar (SAR) imagery. "
      "You answer questions about ships, their locations, sizes, density and possible risk "
      "behaviour. All coordinates are in pixels with the origin at the top-left corner of the "
      "image; x increases to the right and y increases downward. When ship detections are "
      "provided, base your answer on them and cite pixel coordinates when you refer to specific "
      "ships or areas.";
  t.scene =
      "Scene context (pixels, origin top-left, x right, y down)\n"
      "Image size: {image_w} x {image_h} px\n"
      "{ship_count} ships detected\n"
      "{ship_lines}";
  t.user = "{question}";
  t.opening =
      "Please describe this SAR image: where are the ships located, how are they distributed, "
      "and what kind of scene is shown?";
  return t;
}

/// Reads system.txt, scene.txt, user.txt and opening.txt from `dir`; missing
/// files fall back to the built-in text. VERSION names the set, otherwise the
/// version is a content hash.
inline PromptTemplates PromptTemplates::from_directory(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) {
    fail(ErrorKind::not_found, "template directory not found: " + dir.string());
  }
  PromptTemplates t = builtin();
  const auto read = [&](const char* file, std::string& slot) {
    std::ifstream in(dir / file, std::ios::binary);
    if (!in) return false;
    std::ostringstream ss;
    ss << in.rdbuf();
    slot = detail::rstrip(ss.str());
    return true;
  };
  read("system.txt", t.system);
  read("scene.txt", t.scene);
  read("user.txt", t.user);
  read("opening.txt", t.opening);
  std::string version;
  if (read("VERSION", version) && !detail::trim_copy(version).empty()) {
    t.version = detail::trim_copy(version);
  } else {
    std::uint64_t h = detail::fnv1a(t.system);
    for (const auto* part : {&t.scene, &t.user, &t.opening}) h = detail::fnv1a("\x1f" + *part, h);
    char buf[32];
    std::snprintf(buf, sizeof buf, "fnv1a-%016llx", static_cast<unsigned long long>(h));
    t.version = buf;
  }
  detail::check_template("system", t.system, false);
  detail::check_template("scene", t.scene, true);
  detail::check_template("user", t.user, false);
  detail::check_template("opening", t.opening, false);
  if (t.user.find("{question}") == std::string::npos) {
    fail(ErrorKind::invalid_argument, "template 'user' must contain {question}");
  }
  return t;
}

// ----------------------------------------------------------------------------
// Rendering
// ----------------------------------------------------------------------------
struct RoundedBox {
  long x1, y1, x2, y2;
};

inline RoundedBox round_box(const PixelBox& b) {
  return {std::lround(b.x1), std::lround(b.y1), std::lround(b.x2), std::lround(b.y2)};
}

/// "(x1,y1,x2,y2)" with integer pixel coordinates.
inline std::string box_tuple(const PixelBox& b) {
  const RoundedBox r = round_box(b);
  return "(" + std::to_string(r.x1) + "," + std::to_string(r.y1) + "," + std::to_string(r.x2) +
         "," + std::to_string(r.y2) + ")";
}

inline std::string ship_line(std::size_t k, const PixelBox& b) {
  const RoundedBox r = round_box(b);
  char conf[16];
  std::snprintf(conf, sizeof conf, "%.2f", b.confidence);
  return "Ship " + std::to_string(k) + ": bbox=" + box_tuple(b) + ", size=(" +
         std::to_string(r.x2 - r.x1) + " x " + std::to_string(r.y2 - r.y1) +
         ") px, confidence=" + conf;
}

inline std::map<std::string, std::string> base_values(const SceneContext& ctx) {
  return {{"image_w", std::to_string(ctx.image_w)}, {"image_h", std::to_string(ctx.image_h)}};
}

inline std::string render_scene_block(const SceneContext& ctx,
                                      const PromptTemplates& templates = PromptTemplates::builtin()) {
  std::string lines;
  std::size_t k = 1;
  for (const std::size_t idx : confidence_order(ctx.detections)) {
    if (!lines.empty()) lines += '\n';
    lines += ship_line(k++, ctx.detections[idx]);
  }
  auto values = base_values(ctx);
  values["ship_count"] = std::to_string(ctx.ship_count());
  values["ship_lines"] = lines;
  return detail::rstrip(detail::fill(templates.scene, values));
}

inline PromptBundle compose(const SceneContext& ctx, const std::string& question, PromptMode mode,
                            const PromptTemplates& templates = PromptTemplates::builtin()) {
  const std::string q = detail::trim_copy(question);
  if (q.empty()) fail(ErrorKind::invalid_argument, "question must not be empty");
  auto values = base_values(ctx);
  PromptBundle bundle;
  bundle.template_version = templates.version;
  bundle.system_text = detail::fill(templates.system, values);
  values["question"] = q;
  bundle.user_text = detail::fill(templates.user, values);
  bundle.boxes_included = mode == PromptMode::with_boxes;
  if (bundle.boxes_included) bundle.scene_block = render_scene_block(ctx, templates);
  return bundle;
}

/// Opening exchange: the scene-description guide question, composed like any
/// other turn.
inline PromptBundle turn_zero_guide(const SceneContext& ctx, PromptMode mode,
                                    const PromptTemplates& templates = PromptTemplates::builtin()) {
  return compose(ctx, templates.opening, mode, templates);
}

}  // namespace sarscout
