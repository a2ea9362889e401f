#pragma once

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include <httplib.h>
#include <json.hpp>

#include "sarscout/base64.hpp"
#include "sarscout/error.hpp"

namespace sarscout {

// ============================================================================
// Wire types (OpenAI-compatible chat completions)
// ============================================================================
enum class Role { system, user, assistant };

inline std::string to_string(Role r) {
  switch (r) {
    case Role::system: return "system";
    case Role::user: return "user";
    case Role::assistant: return "assistant";
  }
  return "user";
}

inline Role parse_role(const std::string& s) {
  if (s == "system") return Role::system;
  if (s == "user") return Role::user;
  if (s == "assistant") return Role::assistant;
  fail(ErrorKind::protocol, "unknown role '" + s + "'");
}

struct ContentPart {
  enum class Kind { text, image };
  Kind kind{Kind::text};
  std::string text;       ///< kind == text
  std::string image_url;  ///< kind == image; usually a data: URI

  static ContentPart of_text(std::string t) { return {Kind::text, std::move(t), {}}; }
  static ContentPart of_image(std::string url) { return {Kind::image, {}, std::move(url)}; }
  friend bool operator==(const ContentPart&, const ContentPart&) = default;
};

struct ChatMessage {
  Role role{Role::user};
  std::vector<ContentPart> parts;

  [[nodiscard]] std::string text() const {
    std::string out;
    for (const auto& p : parts) {
      if (p.kind != ContentPart::Kind::text) continue;
      if (!out.empty()) out += '\n';
      out += p.text;
    }
    return out;
  }
  friend bool operator==(const ChatMessage&, const ChatMessage&) = default;
};

struct ChatRequest {
  std::string model_name;
  std::vector<ChatMessage> messages;
  double temperature{0.0};
  int max_tokens{1024};
  int timeout_ms{60000};

  friend bool operator==(const ChatRequest&, const ChatRequest&) = default;
};

struct TokenUsage {
  std::int64_t prompt{0};
  std::int64_t completion{0};
  friend bool operator==(const TokenUsage&, const TokenUsage&) = default;
};

struct ChatResponse {
  std::string answer_text;
  std::string model_name;
  std::optional<TokenUsage> usage;
  std::string finish_reason;
  int attempts{1};
};

/// Local precondition check; nothing is sent when this throws.
inline void validate_request(const ChatRequest& req) {
  const auto reject = [](const std::string& why) {
    fail(ErrorKind::invalid_argument, "chat request rejected: " + why);
  };
  if (req.model_name.empty()) reject("model_name is empty");
  if (req.max_tokens <= 0) reject("max_tokens must be positive");
  if (req.timeout_ms <= 0) reject("timeout_ms must be positive");
  if (!(req.temperature >= 0.0)) reject("temperature must be >= 0");
  if (req.messages.size() < 2) reject("need a system message followed by a user message");
  if (req.messages.front().role != Role::system) reject("first message must be the system message");
  for (std::size_t i = 0; i < req.messages.size(); ++i) {
    const ChatMessage& m = req.messages[i];
    if (m.parts.empty()) reject("message " + std::to_string(i) + " has no content");
    if (i > 0) {
      const Role expected = (i % 2 == 1) ? Role::user : Role::assistant;
      if (m.role == Role::system) reject("more than one system message");
      if (m.role != expected) reject("roles must alternate user/assistant (message " + std::to_string(i) + ")");
    }
    for (const auto& p : m.parts) {
      if (p.kind == ContentPart::Kind::image && m.role != Role::user) {
        reject("images are only allowed in user messages");
      }
    }
  }
  if (req.messages.back().role != Role::user) reject("last message must come from the user");
}

inline nlohmann::ordered_json to_wire(const ChatRequest& req) {
  nlohmann::ordered_json j;
  j["model"] = req.model_name;
  j["messages"] = nlohmann::ordered_json::array();
  for (const auto& m : req.messages) {
    nlohmann::ordered_json msg;
    msg["role"] = to_string(m.role);
    const bool plain = m.role != Role::user && m.parts.size() == 1 &&
                       m.parts.front().kind == ContentPart::Kind::text;
    if (!plain) {
      nlohmann::ordered_json parts = nlohmann::ordered_json::array();
      for (const auto& p : m.parts) {
        if (p.kind == ContentPart::Kind::text) {
          parts.push_back({{"type", "text"}, {"text", p.text}});
        } else {
          parts.push_back({{"type", "image_url"}, {"image_url", {{"url", p.image_url}}}});
        }
      }
      msg["content"] = parts;
    } else {
      msg["content"] = m.parts.front().text;
    }
    j["messages"].push_back(msg);
  }
  j["temperature"] = req.temperature;
  j["max_tokens"] = req.max_tokens;
  j["stream"] = false;
  return j;
}

inline ChatRequest request_from_wire(const nlohmann::json& j) {
  try {
    ChatRequest req;
    req.model_name = j.at("model").get<std::string>();
    req.temperature = j.value("temperature", 0.0);
    req.max_tokens = j.value("max_tokens", 1024);
    for (const auto& m : j.at("messages")) {
      ChatMessage msg;
      msg.role = parse_role(m.at("role").get<std::string>());
      const auto& content = m.at("content");
      if (content.is_string()) {
        msg.parts.push_back(ContentPart::of_text(content.get<std::string>()));
      } else {
        for (const auto& p : content) {
          const std::string type = p.at("type").get<std::string>();
          if (type == "text") {
            msg.parts.push_back(ContentPart::of_text(p.at("text").get<std::string>()));
          } else if (type == "image_url") {
            msg.parts.push_back(ContentPart::of_image(p.at("image_url").at("url").get<std::string>()));
          } else {
            fail(ErrorKind::protocol, "unsupported content part type '" + type + "'");
          }
        }
      }
      req.messages.push_back(std::move(msg));
    }
    return req;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::protocol, std::string("malformed chat request: ") + e.what());
  }
}

inline ChatResponse parse_response(const std::string& body) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(body);
  } catch (const nlohmann::json::exception&) {
    fail(ErrorKind::protocol, "response body is not JSON");
  }
  try {
    ChatResponse r;
    const auto& choice = j.at("choices").at(0);
    const auto& content = choice.at("message").at("content");
    if (content.is_string()) {
      r.answer_text = content.get<std::string>();
    } else if (content.is_array()) {
      for (const auto& p : content) {
        if (p.value("type", "") == "text") r.answer_text += p.at("text").get<std::string>();
      }
    }
    if (r.answer_text.empty()) fail(ErrorKind::protocol, "response carries no answer text");
    r.model_name = j.value("model", "");
    if (choice.contains("finish_reason") && choice.at("finish_reason").is_string()) {
      r.finish_reason = choice.at("finish_reason").get<std::string>();
    }
    if (j.contains("usage") && j.at("usage").is_object()) {
      const auto& u = j.at("usage");
      r.usage = TokenUsage{u.value("prompt_tokens", std::int64_t{0}),
                           u.value("completion_tokens", std::int64_t{0})};
    }
    return r;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::protocol, std::string("malformed response: ") + e.what());
  }
}

// ============================================================================
// Image payloads
// ============================================================================
inline constexpr std::size_t kDefaultMaxImageBytes = 10u * 1024u * 1024u;

/// Media type of a PNG/JPEG buffer, or a short name for anything else
/// ("gif", "bmp", "webp", "tiff", "unknown").
inline std::string sniff_image_type(std::span<const std::uint8_t> b) {
  const auto starts = [&](std::initializer_list<int> sig) {
    if (b.size() < sig.size()) return false;
    std::size_t i = 0;
    for (int v : sig) {
      if (v >= 0 && b[i] != v) return false;
      ++i;
    }
    return true;
  };
  if (starts({0x89, 'P', 'N', 'G', 0x0D, 0x0A, 0x1A, 0x0A})) return "image/png";
  if (starts({0xFF, 0xD8, 0xFF})) return "image/jpeg";
  if (starts({'G', 'I', 'F', '8'})) return "gif";
  if (starts({'B', 'M'})) return "bmp";
  if (starts({'R', 'I', 'F', 'F', -1, -1, -1, -1, 'W', 'E', 'B', 'P'})) return "webp";
  if (starts({'I', 'I', 0x2A, 0x00}) || starts({'M', 'M', 0x00, 0x2A})) return "tiff";
  return "unknown";
}

struct ImagePayload {
  std::string media_type;
  std::string data_uri;
};

inline ImagePayload encode_image(std::span<const std::uint8_t> bytes,
                                 std::size_t max_bytes = kDefaultMaxImageBytes) {
  const std::string type = sniff_image_type(bytes);
  if (type != "image/png" && type != "image/jpeg") {
    fail(ErrorKind::unsupported_format,
         "unsupported image format '" + type + "' (expected PNG or JPEG)");
  }
  if (bytes.size() > max_bytes) {
    fail(ErrorKind::oversize, "image is " + std::to_string(bytes.size()) + " bytes; limit is " +
                                  std::to_string(max_bytes) + " bytes");
  }
  return {type, "data:" + type + ";base64," + base64_encode(bytes)};
}

inline std::optional<std::vector<std::uint8_t>> decode_data_uri(const std::string& uri) {
  const auto comma = uri.find(',');
  if (uri.rfind("data:", 0) != 0 || comma == std::string::npos ||
      uri.substr(0, comma).find(";base64") == std::string::npos) {
    return std::nullopt;
  }
  return base64_decode(std::string_view(uri).substr(comma + 1));
}

// ============================================================================
// Transports
// ============================================================================
class VlmTransport {
 public:
  virtual ~VlmTransport() = default;
  /// One network attempt. Throws transport/timeout (retryable), request,
  /// upstream or protocol errors.
  virtual ChatResponse send(const ChatRequest& req) = 0;
};

struct HttpEndpoint {
  std::string base_url;  ///< e.g. http://127.0.0.1:8000/v1
  std::string api_key;
  std::string model;

  /// VLM_BASE_URL, VLM_API_KEY, VLM_MODEL.
  static std::optional<HttpEndpoint> from_env() {
    const char* url = std::getenv("VLM_BASE_URL");
    if (url == nullptr || *url == '\0') return std::nullopt;
    HttpEndpoint e;
    e.base_url = url;
    if (const char* key = std::getenv("VLM_API_KEY")) e.api_key = key;
    if (const char* model = std::getenv("VLM_MODEL")) e.model = model;
    return e;
  }
};

class HttpTransport final : public VlmTransport {
 public:
  explicit HttpTransport(HttpEndpoint endpoint) : endpoint_(std::move(endpoint)) {
    const std::string& url = endpoint_.base_url;
    if (url.rfind("http://", 0) != 0) {
      fail(ErrorKind::invalid_argument, "VLM base URL must start with http:// (got '" + url + "')");
    }
    const auto path_start = url.find('/', 7);
    host_port_ = path_start == std::string::npos ? url : url.substr(0, path_start);
    prefix_ = path_start == std::string::npos ? "" : url.substr(path_start);
    while (!prefix_.empty() && prefix_.back() == '/') prefix_.pop_back();
  }

  ChatResponse send(const ChatRequest& req) override {
    httplib::Client client(host_port_);
    const auto timeout = std::chrono::milliseconds(req.timeout_ms);
    client.set_connection_timeout(timeout);
    client.set_read_timeout(timeout);
    client.set_write_timeout(timeout);
    httplib::Headers headers;
    if (!endpoint_.api_key.empty()) headers.emplace("Authorization", "Bearer " + endpoint_.api_key);

    const auto started = std::chrono::steady_clock::now();
    auto res = client.Post(prefix_ + "/chat/completions", headers, to_wire(req).dump(),
                           "application/json");
    const auto elapsed = std::chrono::duration_cast<std::chrono::milliseconds>(
                             std::chrono::steady_clock::now() - started)
                             .count();
    if (!res) {
      const auto err = res.error();
      if (err == httplib::Error::ConnectionTimeout ||
          (err == httplib::Error::Read && elapsed * 10 >= req.timeout_ms * 9)) {
        fail(ErrorKind::timeout, "VLM request timed out after " + std::to_string(elapsed) + " ms");
      }
      fail(ErrorKind::transport, "VLM transport error: " + httplib::to_string(err));
    }
    if (res->status >= 200 && res->status < 300) {
      ChatResponse r = parse_response(res->body);
      if (r.model_name.empty()) r.model_name = req.model_name;
      return r;
    }
    const std::string message = provider_message(res->body);
    if (res->status >= 400 && res->status < 500) {
      fail(ErrorKind::request, "VLM rejected request (HTTP " + std::to_string(res->status) +
                                   "): " + message);
    }
    if (looks_like_error_document(res->body)) {
      fail(ErrorKind::upstream, "VLM server error (HTTP " + std::to_string(res->status) + "): " + message);
    }
    fail(ErrorKind::transport, "VLM endpoint returned HTTP " + std::to_string(res->status));
  }

 private:
  static bool looks_like_error_document(const std::string& body) {
    try {
      const auto j = nlohmann::json::parse(body);
      return j.is_object() && j.contains("error");
    } catch (...) {
      return false;
    }
  }

  static std::string provider_message(const std::string& body) {
    try {
      const auto j = nlohmann::json::parse(body);
      if (j.contains("error")) {
        const auto& e = j.at("error");
        if (e.is_string()) return e.get<std::string>();
        if (e.is_object() && e.contains("message")) return e.at("message").get<std::string>();
      }
    } catch (...) {
    }
    return body.substr(0, 200);
  }

  HttpEndpoint endpoint_;
  std::string host_port_;
  std::string prefix_;
};

/// Scripted stand-in for a VLM endpoint.
///
/// Entries are scanned in order for each request. An entry with `match`
/// applies when the match text occurs in the last user message and may answer
/// any number of times; an entry without `match` answers once, in script
/// order. `fail_times` makes the entry throw that many transport errors before
/// answering.
class MockTransport final : public VlmTransport {
 public:
  struct Entry {
    std::optional<std::string> match;
    std::string answer;
    int fail_times{0};
  };

  explicit MockTransport(std::vector<Entry> script) {
    for (auto& e : script) slots_.push_back({std::move(e), false});
  }

  static std::vector<Entry> parse_script(const nlohmann::json& j) {
    if (!j.is_array()) fail(ErrorKind::parse, "mock script must be a JSON array");
    std::vector<Entry> entries;
    try {
      for (const auto& item : j) {
        Entry e;
        if (item.contains("match") && !item.at("match").is_null()) e.match = item.at("match").get<std::string>();
        e.answer = item.at("answer").get<std::string>();
        e.fail_times = item.value("fail_times", 0);
        entries.push_back(std::move(e));
      }
    } catch (const nlohmann::json::exception& ex) {
      fail(ErrorKind::parse, std::string("mock script: ") + ex.what());
    }
    return entries;
  }

  static std::shared_ptr<MockTransport> from_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) fail(ErrorKind::not_found, "cannot open mock script " + path.string());
    try {
      return std::make_shared<MockTransport>(parse_script(nlohmann::json::parse(in)));
    } catch (const nlohmann::json::parse_error& e) {
      fail(ErrorKind::parse, path.string() + ": " + e.what());
    }
  }

  ChatResponse send(const ChatRequest& req) override {
    std::lock_guard<std::mutex> lock(mutex_);
    requests_.push_back(req);
    const std::string last_user = req.messages.empty() ? "" : req.messages.back().text();
    for (auto& slot : slots_) {
      if (slot.used) continue;
      if (slot.entry.match && last_user.find(*slot.entry.match) == std::string::npos) continue;
      if (slot.entry.fail_times > 0) {
        --slot.entry.fail_times;
        fail(ErrorKind::transport, "mock: injected transport failure");
      }
      if (slot.entry.answer.empty()) fail(ErrorKind::protocol, "mock: scripted answer is empty");
      if (!slot.entry.match) slot.used = true;
      ChatResponse r;
      r.answer_text = slot.entry.answer;
      r.model_name = req.model_name;
      r.finish_reason = "stop";
      return r;
    }
    fail(ErrorKind::protocol, "mock: script has no answer for this request");
  }

  [[nodiscard]] std::vector<ChatRequest> requests() const {
    std::lock_guard<std::mutex> lock(mutex_);
    return requests_;
  }

 private:
  struct Slot {
    Entry entry;
    bool used;
  };
  mutable std::mutex mutex_;
  std::vector<Slot> slots_;
  std::vector<ChatRequest> requests_;
};

// ============================================================================
// Client: validation, retries with backoff, concurrency ceiling
// ============================================================================
struct RetryPolicy {
  int retry_budget{2};
  int initial_backoff_ms{200};
  double backoff_multiplier{2.0};
  int max_backoff_ms{5000};
};

class VlmClient {
 public:
  using Sleeper = std::function<void(std::chrono::milliseconds)>;

  explicit VlmClient(std::shared_ptr<VlmTransport> transport, RetryPolicy policy = {},
                     int max_concurrency = 4, Sleeper sleeper = nullptr)
      : transport_(std::move(transport)),
        policy_(policy),
        max_concurrency_(max_concurrency),
        sleeper_(sleeper ? std::move(sleeper)
                         : Sleeper([](std::chrono::milliseconds d) { std::this_thread::sleep_for(d); })) {
    if (!transport_) fail(ErrorKind::invalid_argument, "VlmClient needs a transport");
    if (policy_.retry_budget < 0) fail(ErrorKind::invalid_argument, "retry budget must be >= 0");
    if (max_concurrency_ <= 0) fail(ErrorKind::invalid_argument, "max concurrency must be positive");
  }

  ChatResponse chat(const ChatRequest& req) {
    validate_request(req);
    Slot slot(*this);
    double backoff = policy_.initial_backoff_ms;
    for (int attempt = 1;; ++attempt) {
      attempts_.fetch_add(1, std::memory_order_relaxed);
      try {
        ChatResponse r = transport_->send(req);
        if (r.answer_text.empty()) fail(ErrorKind::protocol, "empty answer");
        r.attempts = attempt;
        return r;
      } catch (const Error& e) {
        const bool retryable = e.kind() == ErrorKind::transport || e.kind() == ErrorKind::timeout;
        if (!retryable || attempt > policy_.retry_budget) throw;
      }
      sleeper_(std::chrono::milliseconds(static_cast<std::int64_t>(backoff)));
      backoff = std::min(backoff * policy_.backoff_multiplier, static_cast<double>(policy_.max_backoff_ms));
    }
  }

  /// Network attempts made across all calls.
  [[nodiscard]] std::int64_t attempts_made() const noexcept { return attempts_.load(); }
  [[nodiscard]] int in_flight_peak() const noexcept { return peak_.load(); }

 private:
  class Slot {
   public:
    explicit Slot(VlmClient& c) : c_(c) {
      std::unique_lock<std::mutex> lock(c_.mutex_);
      c_.cv_.wait(lock, [&] { return c_.in_flight_ < c_.max_concurrency_; });
      ++c_.in_flight_;
      c_.peak_.store(std::max(c_.peak_.load(), c_.in_flight_));
    }
    ~Slot() {
      {
        std::lock_guard<std::mutex> lock(c_.mutex_);
        --c_.in_flight_;
      }
      c_.cv_.notify_one();
    }
    Slot(const Slot&) = delete;
    Slot& operator=(const Slot&) = delete;

   private:
    VlmClient& c_;
  };

  std::shared_ptr<VlmTransport> transport_;
  RetryPolicy policy_;
  int max_concurrency_;
  Sleeper sleeper_;
  std::mutex mutex_;
  std::condition_variable cv_;
  int in_flight_{0};
  std::atomic<int> peak_{0};
  std::atomic<std::int64_t> attempts_{0};
};

}  // namespace sarscout
