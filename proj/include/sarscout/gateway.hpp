#pragma once

#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <httplib.h>
#include <json.hpp>

#include "sarscout/dataset.hpp"
#include "sarscout/detector.hpp"
#include "sarscout/error.hpp"
#include "sarscout/grounding.hpp"
#include "sarscout/image.hpp"
#include "sarscout/overlay.hpp"
#include "sarscout/prompting.hpp"
#include "sarscout/session.hpp"
#include "sarscout/vlm_client.hpp"

namespace sarscout {

// ============================================================================
// Service configuration
// ============================================================================
struct ServiceConfig {
  std::string host{"127.0.0.1"};
  int port{8080};
  std::filesystem::path store_dir{"sessions"};

  std::string detector_backend{"stub"};  ///< stub | file | onnx
  std::filesystem::path detections_file;  ///< file backend
  std::filesystem::path model_path;       ///< onnx backend
  std::filesystem::path sidecar_path;     ///< onnx backend

  std::string vlm_backend{"http"};  ///< http | mock
  std::string vlm_base_url;
  std::string vlm_api_key;
  std::string vlm_model{"qwen2-vl-72b-instruct"};
  std::filesystem::path mock_script;
  int retry_budget{2};
  int vlm_max_concurrency{4};

  std::filesystem::path templates_dir;  ///< empty: built-in templates
  PromptMode default_mode{PromptMode::with_boxes};
  bool scene_block_every_turn{true};

  std::size_t max_image_bytes{kDefaultMaxImageBytes};
  std::size_t max_sessions{1000};
  int request_timeout_ms{60000};

  std::string cors_origin;  ///< empty: no CORS headers
};

namespace detail {

inline std::string strip_comment(const std::string& line) {
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    if (line[i] == '"') quoted = !quoted;
    if (line[i] == '#' && !quoted) return line.substr(0, i);
  }
  return line;
}

inline std::string unquote(std::string v) {
  if (v.size() >= 2 && v.front() == '"' && v.back() == '"') return v.substr(1, v.size() - 2);
  return v;
}

inline long long parse_int_value(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const long long n = std::stoll(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return n;
  } catch (const std::exception&) {
    fail(ErrorKind::parse, "config key '" + key + "': expected an integer, got '" + v + "'");
  }
}

inline bool parse_bool_value(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  fail(ErrorKind::parse, "config key '" + key + "': expected true|false, got '" + v + "'");
}

}  // namespace detail

/// Flat `key = value` pairs. `[section]` headers prefix keys with "section.".
inline std::map<std::string, std::string> parse_key_values(std::istream& in, const std::string& source) {
  std::map<std::string, std::string> kv;
  std::string line, section;
  for (std::size_t n = 1; std::getline(in, line); ++n) {
    line = detail::trim(detail::strip_comment(line));
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') fail(ErrorKind::parse, source + ":" + std::to_string(n) + ": bad section header");
      section = detail::trim(line.substr(1, line.size() - 2));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      fail(ErrorKind::parse, source + ":" + std::to_string(n) + ": expected key = value");
    }
    std::string key = detail::trim(line.substr(0, eq));
    if (key.empty()) fail(ErrorKind::parse, source + ":" + std::to_string(n) + ": empty key");
    if (!section.empty()) key = section + "." + key;
    kv[key] = detail::unquote(detail::trim(line.substr(eq + 1)));
  }
  return kv;
}

/// "vlm.base_url" -> "SARSCOUT_VLM_BASE_URL"
inline std::string env_name_for(const std::string& key) {
  std::string out = "SARSCOUT_";
  for (char c : key) out += (c == '.' || c == '-') ? '_' : static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  return out;
}

inline const std::vector<std::string>& config_keys() {
  static const std::vector<std::string> keys{
      "server.host",          "server.port",           "server.store_dir",     "server.cors_origin",
      "detector.backend",     "detector.detections",   "detector.model",       "detector.sidecar",
      "vlm.backend",          "vlm.base_url",          "vlm.api_key",          "vlm.model",
      "vlm.mock_script",      "vlm.retry_budget",      "vlm.max_concurrency",  "prompt.templates_dir",
      "prompt.default_mode",  "prompt.scene_block_every_turn", "limits.max_image_bytes",
      "limits.max_sessions",  "limits.request_timeout_ms"};
  return keys;
}

using EnvLookup = std::function<std::optional<std::string>(const std::string&)>;

inline EnvLookup process_env() {
  return [](const std::string& name) -> std::optional<std::string> {
    const char* v = std::getenv(name.c_str());
    if (!v) return std::nullopt;
    return std::string(v);
  };
}

/// Parses a config document and applies SARSCOUT_* overrides. Relative paths
/// resolve against `base_dir`. Does not validate; see validate_config.
inline ServiceConfig parse_service_config(std::istream& in, const std::string& source,
                                          const std::filesystem::path& base_dir = {},
                                          const EnvLookup& env = process_env()) {
  auto kv = parse_key_values(in, source);
  const auto& known = config_keys();
  for (const auto& [k, v] : kv) {
    if (std::find(known.begin(), known.end(), k) == known.end()) {
      fail(ErrorKind::parse, source + ": unknown config key '" + k + "'");
    }
  }
  for (const auto& k : known) {
    if (auto v = env(env_name_for(k))) kv[k] = *v;
  }
  const auto path = [&](const std::string& v) {
    std::filesystem::path p(v);
    return (p.is_relative() && !base_dir.empty()) ? base_dir / p : p;
  };
  const auto size_value = [&](const std::string& k, const std::string& v) {
    const long long n = detail::parse_int_value(k, v);
    if (n <= 0) fail(ErrorKind::validation, "config key '" + k + "' must be positive");
    return static_cast<std::size_t>(n);
  };

  ServiceConfig c;
  for (const auto& [k, v] : kv) {
    if (k == "server.host") c.host = v;
    else if (k == "server.port") c.port = static_cast<int>(detail::parse_int_value(k, v));
    else if (k == "server.store_dir") c.store_dir = path(v);
    else if (k == "server.cors_origin") c.cors_origin = v;
    else if (k == "detector.backend") c.detector_backend = v;
    else if (k == "detector.detections") c.detections_file = path(v);
    else if (k == "detector.model") c.model_path = path(v);
    else if (k == "detector.sidecar") c.sidecar_path = path(v);
    else if (k == "vlm.backend") c.vlm_backend = v;
    else if (k == "vlm.base_url") c.vlm_base_url = v;
    else if (k == "vlm.api_key") c.vlm_api_key = v;
    else if (k == "vlm.model") c.vlm_model = v;
    else if (k == "vlm.mock_script") c.mock_script = path(v);
    else if (k == "vlm.retry_budget") c.retry_budget = static_cast<int>(detail::parse_int_value(k, v));
    else if (k == "vlm.max_concurrency") c.vlm_max_concurrency = static_cast<int>(detail::parse_int_value(k, v));
    else if (k == "prompt.templates_dir") c.templates_dir = path(v);
    else if (k == "prompt.default_mode") c.default_mode = parse_prompt_mode(v);
    else if (k == "prompt.scene_block_every_turn") c.scene_block_every_turn = detail::parse_bool_value(k, v);
    else if (k == "limits.max_image_bytes") c.max_image_bytes = size_value(k, v);
    else if (k == "limits.max_sessions") c.max_sessions = size_value(k, v);
    else if (k == "limits.request_timeout_ms") c.request_timeout_ms = static_cast<int>(size_value(k, v));
  }
  return c;
}

inline ServiceConfig load_service_config(const std::filesystem::path& path,
                                         const EnvLookup& env = process_env()) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::not_found, "cannot open config " + path.string());
  return parse_service_config(in, path.string(), path.parent_path(), env);
}

/// Startup checks: referenced paths exist, limits positive, backend names known.
/// The store directory is created if absent.
inline void validate_config(const ServiceConfig& c) {
  const auto bad = [](const std::string& why) { fail(ErrorKind::validation, "config: " + why); };
  const auto must_exist = [&](const std::filesystem::path& p, const std::string& what) {
    if (p.empty()) bad(what + " is required");
    if (!std::filesystem::exists(p)) bad(what + " does not exist: " + p.string());
  };
  if (c.port < 0 || c.port > 65535) bad("port out of range");
  if (c.max_image_bytes == 0 || c.max_sessions == 0 || c.request_timeout_ms <= 0) bad("limits must be positive");
  if (c.retry_budget < 0) bad("vlm.retry_budget must be >= 0");
  if (c.vlm_max_concurrency <= 0) bad("vlm.max_concurrency must be positive");
  if (c.detector_backend == "file") {
    must_exist(c.detections_file, "detector.detections");
  } else if (c.detector_backend == "onnx") {
    must_exist(c.model_path, "detector.model");
    must_exist(c.sidecar_path, "detector.sidecar");
  } else if (c.detector_backend != "stub") {
    bad("unknown detector.backend '" + c.detector_backend + "'");
  }
  if (c.vlm_backend == "mock") {
    must_exist(c.mock_script, "vlm.mock_script");
  } else if (c.vlm_backend == "http") {
    if (c.vlm_base_url.empty()) bad("vlm.base_url is required for the http backend");
  } else {
    bad("unknown vlm.backend '" + c.vlm_backend + "'");
  }
  if (!c.templates_dir.empty()) must_exist(c.templates_dir, "prompt.templates_dir");
  std::error_code ec;
  std::filesystem::create_directories(c.store_dir, ec);
  if (!std::filesystem::is_directory(c.store_dir)) bad("server.store_dir is not a directory: " + c.store_dir.string());
}

inline std::shared_ptr<const DetectorBackend> make_detector(const ServiceConfig& c) {
  if (c.detector_backend == "file") return std::make_shared<FileBackend>(c.detections_file);
  if (c.detector_backend == "onnx") return std::make_shared<OnnxBackend>(c.model_path, c.sidecar_path);
  return std::make_shared<StubBackend>();
}

inline std::shared_ptr<VlmTransport> make_transport(const ServiceConfig& c) {
  if (c.vlm_backend == "mock") return MockTransport::from_file(c.mock_script);
  return std::make_shared<HttpTransport>(HttpEndpoint{c.vlm_base_url, c.vlm_api_key, c.vlm_model});
}

// ============================================================================
// JSON schemas for 2xx bodies, plus a validator for the subset they use:
// type, properties, required, items, enum, minimum.
// ============================================================================
namespace detail {

inline bool json_type_matches(const nlohmann::json& v, const std::string& type) {
  if (type == "object") return v.is_object();
  if (type == "array") return v.is_array();
  if (type == "string") return v.is_string();
  if (type == "integer") return v.is_number_integer();
  if (type == "number") return v.is_number();
  if (type == "boolean") return v.is_boolean();
  if (type == "null") return v.is_null();
  return false;
}

inline void validate_schema(const nlohmann::json& v, const nlohmann::json& schema, const std::string& where,
                            std::vector<std::string>& errors) {
  if (schema.contains("type")) {
    const auto& t = schema.at("type");
    bool ok = false;
    if (t.is_string()) {
      ok = json_type_matches(v, t.get<std::string>());
    } else {
      for (const auto& alt : t) ok = ok || json_type_matches(v, alt.get<std::string>());
    }
    if (!ok) {
      errors.push_back(where + ": expected type " + t.dump());
      return;
    }
  }
  if (schema.contains("enum")) {
    const auto& e = schema.at("enum");
    if (std::find(e.begin(), e.end(), v) == e.end()) errors.push_back(where + ": value not in enum");
  }
  if (schema.contains("minimum") && v.is_number() && v.get<double>() < schema.at("minimum").get<double>()) {
    errors.push_back(where + ": below minimum");
  }
  if (v.is_object()) {
    if (schema.contains("required")) {
      for (const auto& key : schema.at("required")) {
        if (!v.contains(key.get<std::string>())) errors.push_back(where + ": missing '" + key.get<std::string>() + "'");
      }
    }
    if (schema.contains("properties")) {
      for (const auto& [key, sub] : schema.at("properties").items()) {
        if (v.contains(key)) validate_schema(v.at(key), sub, where + "." + key, errors);
      }
    }
  }
  if (v.is_array() && schema.contains("items")) {
    for (std::size_t i = 0; i < v.size(); ++i) {
      validate_schema(v.at(i), schema.at("items"), where + "[" + std::to_string(i) + "]", errors);
    }
  }
}

}  // namespace detail

inline std::vector<std::string> validate_against_schema(const nlohmann::json& value, const nlohmann::json& schema) {
  std::vector<std::string> errors;
  detail::validate_schema(value, schema, "$", errors);
  return errors;
}

inline const nlohmann::json& api_schemas() {
  using nlohmann::json;
  static const json schemas = [] {
    const json num = {{"type", "number"}};
    const json str = {{"type", "string"}};
    const json box = {{"type", "object"},
                      {"required", {"x1", "y1", "x2", "y2", "conf"}},
                      {"properties", {{"x1", num}, {"y1", num}, {"x2", num}, {"y2", num},
                                      {"conf", {{"type", "number"}, {"minimum", 0}}}}}};
    const json detection_set = {
        {"type", "object"},
        {"required", {"image_id", "image_w", "image_h", "detector_name", "boxes"}},
        {"properties", {{"image_id", str},
                        {"image_w", {{"type", "integer"}, {"minimum", 1}}},
                        {"image_h", {{"type", "integer"}, {"minimum", 1}}},
                        {"detector_name", str},
                        {"boxes", {{"type", "array"}, {"items", box}}}}}};
    const json turn = {
        {"type", "object"},
        {"required", {"index", "question", "user_text", "system_text", "scene_block", "boxes_included",
                      "answer_text", "model_name", "latency_ms"}},
        {"properties", {{"index", {{"type", "integer"}, {"minimum", 0}}},
                        {"question", str},
                        {"user_text", str},
                        {"system_text", str},
                        {"scene_block", str},
                        {"boxes_included", {{"type", "boolean"}}},
                        {"answer_text", str},
                        {"model_name", str},
                        {"latency_ms", {{"type", "integer"}, {"minimum", 0}}},
                        {"token_usage", {{"type", {"object", "null"}}}}}}};
    const json image = {{"type", "object"},
                        {"required", {"id", "w", "h"}},
                        {"properties", {{"id", str}, {"w", {{"type", "integer"}}}, {"h", {{"type", "integer"}}}}}};
    const json mode = {{"type", "string"}, {"enum", {"with_boxes", "without_boxes"}}};
    const json transcript = {
        {"type", "object"},
        {"required", {"session_id", "created_at", "image", "detector_name", "mode", "template_version", "turns"}},
        {"properties", {{"session_id", str},
                        {"created_at", str},
                        {"image", image},
                        {"detector_name", str},
                        {"mode", mode},
                        {"template_version", str},
                        {"scene_block_every_turn", {{"type", "boolean"}}},
                        {"turns", {{"type", "array"}, {"items", turn}}}}}};
    const json session_created = {
        {"type", "object"},
        {"required", {"session_id", "mode", "image", "detections", "turn0"}},
        {"properties", {{"session_id", str}, {"mode", mode}, {"image", image},
                        {"detections", detection_set}, {"turn0", turn}}}};
    const json region = {{"type", "object"},
                         {"required", {"kind", "x_min", "x_max", "y_min", "y_max", "source_span"}},
                         {"properties", {{"kind", {{"type", "string"}, {"enum", {"range", "point"}}}},
                                         {"x_min", {{"type", {"number", "null"}}}},
                                         {"x_max", {{"type", {"number", "null"}}}},
                                         {"y_min", {{"type", {"number", "null"}}}},
                                         {"y_max", {{"type", {"number", "null"}}}},
                                         {"source_span", {{"type", "array"}, {"items", {{"type", "integer"}}}}}}}};
    const json grounding = {
        {"type", "object"},
        {"required", {"session_id", "turn_index", "regions", "score"}},
        {"properties", {{"session_id", str},
                        {"turn_index", {{"type", "integer"}, {"minimum", 0}}},
                        {"regions", {{"type", "array"}, {"items", region}}},
                        {"score", {{"type", "object"},
                                   {"required", {"boxes_covered", "reference_boxes", "coverage",
                                                 "spurious_area_ratio", "no_reference"}}}}}}};
    const json health = {{"type", "object"},
                         {"required", {"status", "detector", "sessions"}},
                         {"properties", {{"status", {{"type", "string"}, {"enum", {"ok"}}}},
                                         {"detector", str},
                                         {"sessions", {{"type", "integer"}, {"minimum", 0}}}}}};
    const json error = {{"type", "object"},
                        {"required", {"error"}},
                        {"properties", {{"error", {{"type", "object"},
                                                   {"required", {"kind", "message"}},
                                                   {"properties", {{"kind", str}, {"message", str}}}}}}}};
    return json{{"health", health},
                {"session_created", session_created},
                {"turn", turn},
                {"transcript", transcript},
                {"detection_set", detection_set},
                {"grounding_report", grounding},
                {"error", error}};
  }();
  return schemas;
}

// ============================================================================
// HTTP gateway
// ============================================================================
inline int http_status_for(ErrorKind k) {
  switch (k) {
    case ErrorKind::not_found: return 404;
    case ErrorKind::invalid_argument:
    case ErrorKind::input:
    case ErrorKind::parse:
    case ErrorKind::validation:
    case ErrorKind::unsupported_format: return 400;
    case ErrorKind::oversize: return 413;
    case ErrorKind::limit: return 503;
    case ErrorKind::backend:
    case ErrorKind::decode:
    case ErrorKind::timeout:
    case ErrorKind::request:
    case ErrorKind::protocol:
    case ErrorKind::transport:
    case ErrorKind::upstream: return 502;
    case ErrorKind::integrity: return 500;
  }
  return 500;
}

inline std::string error_body(const std::string& kind, const std::string& message) {
  nlohmann::ordered_json j;
  j["error"] = {{"kind", kind}, {"message", message}};
  return j.dump();
}

class Gateway {
 public:
  Gateway(ServiceConfig config, std::shared_ptr<const DetectorBackend> detector,
          std::shared_ptr<VlmClient> vlm, PromptTemplates templates = PromptTemplates::builtin(),
          SessionClock clock = SessionClock::system(), IdGenerator ids = random_session_ids())
      : config_(std::move(config)), detector_(std::move(detector)) {
    SessionOptions opts;
    opts.model_name = config_.vlm_model;
    opts.scene_block_every_turn = config_.scene_block_every_turn;
    opts.timeout_ms = config_.request_timeout_ms;
    opts.max_sessions = config_.max_sessions;
    opts.max_image_bytes = config_.max_image_bytes;
    store_ = std::make_shared<DirectorySessionStore>(config_.store_dir);
    sessions_ = std::make_shared<SessionManager>(store_, detector_, std::move(vlm), std::move(templates),
                                                 opts, std::move(clock), std::move(ids));
    install_routes();
  }

  /// Builds every component from a validated config.
  static std::unique_ptr<Gateway> from_config(const ServiceConfig& c) {
    validate_config(c);
    auto vlm = std::make_shared<VlmClient>(make_transport(c), RetryPolicy{c.retry_budget}, c.vlm_max_concurrency);
    PromptTemplates t = c.templates_dir.empty() ? PromptTemplates::builtin()
                                                : PromptTemplates::from_directory(c.templates_dir);
    return std::make_unique<Gateway>(c, make_detector(c), std::move(vlm), std::move(t));
  }

  Gateway(const Gateway&) = delete;
  Gateway& operator=(const Gateway&) = delete;
  ~Gateway() { stop(); }

  /// Blocks serving on the configured address.
  bool listen() { return server_.listen(config_.host, config_.port); }

  /// Binds an ephemeral port on the configured host and serves on a
  /// background thread. Returns the port.
  int start_background() {
    const int port = server_.bind_to_any_port(config_.host);
    if (port < 0) fail(ErrorKind::transport, "cannot bind " + config_.host);
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
    return port;
  }

  void stop() {
    server_.stop();
    if (thread_.joinable()) thread_.join();
  }

  [[nodiscard]] SessionManager& sessions() noexcept { return *sessions_; }
  [[nodiscard]] const ServiceConfig& config() const noexcept { return config_; }

 private:
  using Req = httplib::Request;
  using Res = httplib::Response;

  static void send_json(Res& res, int status, const std::string& body) {
    res.status = status;
    res.set_content(body, "application/json");
  }

  template <typename F>
  httplib::Server::Handler guarded(F f) {
    return [f = std::move(f)](const Req& req, Res& res) {
      try {
        f(req, res);
      } catch (const Error& e) {
        send_json(res, http_status_for(e.kind()), error_body(std::string(e.kind_name()), e.what()));
      } catch (const std::exception& e) {
        send_json(res, 500, error_body("internal", e.what()));
      }
    };
  }

  /// Upload from multipart field `image`, or a raw image body.
  [[nodiscard]] Image read_upload(const Req& req) const {
    std::string data, filename;
    if (req.is_multipart_form_data()) {
      if (!req.has_file("image")) fail(ErrorKind::input, "multipart field 'image' is required");
      const auto f = req.get_file_value("image");
      data = f.content;
      filename = f.filename;
    } else {
      data = req.body;
    }
    if (data.empty()) fail(ErrorKind::input, "image upload is empty");
    if (data.size() > config_.max_image_bytes) {
      fail(ErrorKind::oversize, "image is " + std::to_string(data.size()) + " bytes; limit is " +
                                    std::to_string(config_.max_image_bytes));
    }
    std::vector<std::uint8_t> bytes(data.begin(), data.end());
    const std::string type = sniff_image_type(bytes);
    if (type != "image/png" && type != "image/jpeg") {
      fail(ErrorKind::unsupported_format, "unsupported image type " + type + "; expected PNG or JPEG");
    }
    std::string id = filename.empty() ? "upload" : std::filesystem::path(filename).stem().string();
    if (id.empty()) id = "upload";
    return decode_image(std::move(id), std::move(bytes));
  }

  static std::string form_value(const Req& req, const std::string& name) {
    if (req.is_multipart_form_data() && req.has_file(name)) return req.get_file_value(name).content;
    if (req.has_param(name)) return req.get_param_value(name);
    return {};
  }

  [[nodiscard]] std::optional<std::size_t> turn_param(const Req& req) const {
    if (!req.has_param("turn")) return std::nullopt;
    const std::string v = req.get_param_value("turn");
    if (v.empty() || !std::all_of(v.begin(), v.end(), [](char c) { return c >= '0' && c <= '9'; }) || v.size() > 9) {
      fail(ErrorKind::invalid_argument, "query parameter 'turn' must be a non-negative integer");
    }
    return static_cast<std::size_t>(std::stoul(v));
  }

  static const Turn& turn_of(const ChatSession& s, std::size_t k) {
    if (k >= s.turns.size()) {
      fail(ErrorKind::not_found, "session '" + s.session_id + "' has no turn " + std::to_string(k));
    }
    return s.turns[k];
  }

  void install_routes() {
    server_.set_payload_max_length(config_.max_image_bytes * 2 + (1u << 20));
    server_.set_read_timeout(std::chrono::milliseconds(config_.request_timeout_ms));
    if (!config_.cors_origin.empty()) {
      server_.set_default_headers({{"Access-Control-Allow-Origin", config_.cors_origin},
                                   {"Access-Control-Allow-Methods", "GET, POST, OPTIONS"},
                                   {"Access-Control-Allow-Headers", "Content-Type"}});
      server_.Options(R"(/v1/.*)", [](const Req&, Res& res) { res.status = 204; });
    }

    server_.Get("/v1/health", guarded([this](const Req&, Res& res) {
      nlohmann::ordered_json j;
      j["status"] = "ok";
      j["detector"] = detector_->name();
      j["sessions"] = store_->size();
      send_json(res, 200, j.dump());
    }));

    server_.Get("/v1/schema", guarded([](const Req&, Res& res) { send_json(res, 200, api_schemas().dump(2)); }));

    server_.Post("/v1/sessions", guarded([this](const Req& req, Res& res) {
      const std::string mode_text = form_value(req, "mode");
      const PromptMode mode = mode_text.empty() ? config_.default_mode : parse_prompt_mode(mode_text);
      const std::string opening = form_value(req, "opening");
      const Image image = read_upload(req);
      const ChatSession s = sessions_->start_session(
          image, mode, opening.empty() ? std::nullopt : std::optional<std::string>(opening));
      nlohmann::ordered_json j;
      j["session_id"] = s.session_id;
      j["mode"] = to_string(s.mode);
      j["image"] = {{"id", s.image.id}, {"w", s.image.width}, {"h", s.image.height}};
      j["detections"] = to_json(s.detections);
      j["turn0"] = turn_to_json(s.turns.at(0));
      res.set_header("Location", "/v1/sessions/" + s.session_id);
      send_json(res, 201, j.dump());
    }));

    server_.Post(R"(/v1/sessions/([^/]+)/turns)", guarded([this](const Req& req, Res& res) {
      const std::string id = req.matches[1];
      if (!is_valid_session_id(id)) fail(ErrorKind::not_found, "unknown session '" + id + "'");
      std::string question;
      const auto body = nlohmann::json::parse(req.body, nullptr, false);
      if (body.is_discarded() || !body.is_object() || !body.contains("question") ||
          !body.at("question").is_string()) {
        fail(ErrorKind::input, "body must be a JSON object with a string 'question'");
      }
      question = body.at("question").get<std::string>();
      (void)sessions_->get(id);  // unknown id reports 404 before question validation
      const Turn t = sessions_->ask(id, question);
      send_json(res, 200, turn_to_json(t).dump());
    }));

    server_.Get(R"(/v1/sessions/([^/]+))", guarded([this](const Req& req, Res& res) {
      const std::string id = req.matches[1];
      if (!is_valid_session_id(id)) fail(ErrorKind::not_found, "unknown session '" + id + "'");
      send_json(res, 200, sessions_->export_transcript(id));
    }));

    server_.Get(R"(/v1/sessions/([^/]+)/overlay)", guarded([this](const Req& req, Res& res) {
      const std::string id = req.matches[1];
      if (!is_valid_session_id(id)) fail(ErrorKind::not_found, "unknown session '" + id + "'");
      const auto k = turn_param(req);
      const ChatSession s = sessions_->get(id);
      if (!s.image_bytes) fail(ErrorKind::not_found, "session '" + id + "' has no stored image");
      std::vector<AnswerRegion> regions;
      if (k) regions = extract_regions(turn_of(s, *k).answer_text, s.image.width, s.image.height);
      const auto png = render_overlay(*s.image_bytes, s.detections.boxes, regions);
      res.status = 200;
      res.set_content(std::string(png.begin(), png.end()), "image/png");
    }));

    server_.Get(R"(/v1/sessions/([^/]+)/grounding)", guarded([this](const Req& req, Res& res) {
      const std::string id = req.matches[1];
      if (!is_valid_session_id(id)) fail(ErrorKind::not_found, "unknown session '" + id + "'");
      const ChatSession s = sessions_->get(id);
      const std::size_t k = turn_param(req).value_or(s.turns.size() - 1);
      const Turn& t = turn_of(s, k);
      const auto regions = extract_regions(t.answer_text, s.image.width, s.image.height);
      const auto score = score_grounding(regions, s.detections.boxes);
      send_json(res, 200, grounding_report(id, k, regions, score).dump());
    }));

    server_.Post("/v1/detect", guarded([this](const Req& req, Res& res) {
      const Image image = read_upload(req);
      send_json(res, 200, to_json(detector_->detect(image)).dump());
    }));
  }

  ServiceConfig config_;
  std::shared_ptr<const DetectorBackend> detector_;
  std::shared_ptr<DirectorySessionStore> store_;
  std::shared_ptr<SessionManager> sessions_;
  httplib::Server server_;
  std::thread thread_;
};

}  // namespace sarscout
