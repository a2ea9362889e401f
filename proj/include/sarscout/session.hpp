#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "sarscout/detections.hpp"
#include "sarscout/detector.hpp"
#include "sarscout/error.hpp"
#include "sarscout/image.hpp"
#include "sarscout/prompting.hpp"
#include "sarscout/vlm_client.hpp"

namespace sarscout {

// ============================================================================
// Session state
// ============================================================================
struct Turn {
  std::size_t index{0};
  std::string question;  ///< raw question (turn 0: the opening guide text)
  PromptBundle prompt;
  std::string answer_text;
  std::string model_name;
  std::int64_t latency_ms{0};
  std::optional<TokenUsage> token_usage;
  std::string finish_reason;
};

struct ImageInfo {
  std::string id;
  int width{0};
  int height{0};
  std::string media_type;
};

struct ChatSession {
  std::string session_id;
  std::string created_at;
  ImageInfo image;
  std::shared_ptr<const std::vector<std::uint8_t>> image_bytes;  ///< null after a bare import
  DetectionSet detections;
  PromptMode mode{PromptMode::with_boxes};
  bool scene_block_every_turn{true};
  std::string template_version;
  std::vector<Turn> turns;

  /// Mode used to compose turn `index`.
  [[nodiscard]] PromptMode mode_for_turn(std::size_t index) const noexcept {
    if (index == 0 || scene_block_every_turn) return mode;
    return PromptMode::without_boxes;
  }
};

inline bool is_valid_session_id(const std::string& id) {
  if (id.empty() || id.size() > 64) return false;
  return std::all_of(id.begin(), id.end(), [](char c) {
    return std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_';
  });
}

// ----------------------------------------------------------------------------
// Transcript document
// ----------------------------------------------------------------------------
inline nlohmann::ordered_json turn_to_json(const Turn& t) {
  nlohmann::ordered_json j;
  j["index"] = t.index;
  j["question"] = t.question;
  j["user_text"] = t.prompt.user_text;
  j["system_text"] = t.prompt.system_text;
  j["scene_block"] = t.prompt.scene_block;
  j["boxes_included"] = t.prompt.boxes_included;
  j["answer_text"] = t.answer_text;
  j["model_name"] = t.model_name;
  j["latency_ms"] = t.latency_ms;
  if (t.token_usage) {
    j["token_usage"] = {{"prompt", t.token_usage->prompt}, {"completion", t.token_usage->completion}};
  } else {
    j["token_usage"] = nullptr;
  }
  j["finish_reason"] = t.finish_reason;
  return j;
}

inline nlohmann::ordered_json transcript_json(const ChatSession& s) {
  nlohmann::ordered_json j;
  j["session_id"] = s.session_id;
  j["created_at"] = s.created_at;
  j["image"] = {{"id", s.image.id},
                {"w", s.image.width},
                {"h", s.image.height},
                {"media_type", s.image.media_type}};
  j["detector_name"] = s.detections.detector_name;
  j["mode"] = to_string(s.mode);
  j["template_version"] = s.template_version;
  j["scene_block_every_turn"] = s.scene_block_every_turn;
  nlohmann::ordered_json det;
  det["conf_threshold"] = s.detections.conf_threshold;
  det["nms_threshold"] = s.detections.nms_threshold;
  det["boxes"] = nlohmann::ordered_json::array();
  for (const auto& b : s.detections.boxes) det["boxes"].push_back(box_to_json(b));
  j["detections"] = det;
  j["turns"] = nlohmann::ordered_json::array();
  for (const auto& t : s.turns) j["turns"].push_back(turn_to_json(t));
  return j;
}

inline std::string export_transcript(const ChatSession& s) {
  return transcript_json(s).dump(2) + "\n";
}

inline ChatSession import_transcript(const std::string& document) {
  try {
    const auto j = nlohmann::ordered_json::parse(document);
    ChatSession s;
    s.session_id = j.at("session_id").get<std::string>();
    s.created_at = j.at("created_at").get<std::string>();
    const auto& img = j.at("image");
    s.image = ImageInfo{img.at("id").get<std::string>(), img.at("w").get<int>(),
                        img.at("h").get<int>(), img.value("media_type", "")};
    s.mode = parse_prompt_mode(j.at("mode").get<std::string>());
    s.template_version = j.at("template_version").get<std::string>();
    s.scene_block_every_turn = j.value("scene_block_every_turn", true);
    const auto& det = j.at("detections");
    s.detections.image_id = s.image.id;
    s.detections.image_w = s.image.width;
    s.detections.image_h = s.image.height;
    s.detections.detector_name = j.at("detector_name").get<std::string>();
    s.detections.conf_threshold = det.at("conf_threshold").get<double>();
    s.detections.nms_threshold = det.at("nms_threshold").get<double>();
    for (const auto& b : det.at("boxes")) s.detections.boxes.push_back(box_from_json(b));
    for (const auto& tj : j.at("turns")) {
      Turn t;
      t.index = tj.at("index").get<std::size_t>();
      t.question = tj.at("question").get<std::string>();
      t.prompt.user_text = tj.at("user_text").get<std::string>();
      t.prompt.system_text = tj.at("system_text").get<std::string>();
      t.prompt.scene_block = tj.at("scene_block").get<std::string>();
      t.prompt.boxes_included = tj.at("boxes_included").get<bool>();
      t.prompt.template_version = s.template_version;
      t.answer_text = tj.at("answer_text").get<std::string>();
      t.model_name = tj.at("model_name").get<std::string>();
      t.latency_ms = tj.at("latency_ms").get<std::int64_t>();
      if (tj.contains("token_usage") && !tj.at("token_usage").is_null()) {
        t.token_usage = TokenUsage{tj.at("token_usage").at("prompt").get<std::int64_t>(),
                                   tj.at("token_usage").at("completion").get<std::int64_t>()};
      }
      t.finish_reason = tj.value("finish_reason", "");
      if (t.index != s.turns.size()) {
        fail(ErrorKind::integrity, "transcript turn indices must be 0..n-1 without gaps");
      }
      s.turns.push_back(std::move(t));
    }
    return s;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::parse, std::string("malformed transcript: ") + e.what());
  }
}

/// Indices of turns whose stored prompt differs from a fresh composition with
/// `templates`.
inline std::vector<std::size_t> replay_mismatches(const ChatSession& s,
                                                  const PromptTemplates& templates) {
  if (templates.version != s.template_version) {
    fail(ErrorKind::validation, "transcript was composed with templates '" + s.template_version +
                                    "', current templates are '" + templates.version + "'");
  }
  const SceneContext ctx = SceneContext::from(s.detections);
  std::vector<std::size_t> bad;
  for (const Turn& t : s.turns) {
    if (compose(ctx, t.question, s.mode_for_turn(t.index), templates) != t.prompt) {
      bad.push_back(t.index);
    }
  }
  return bad;
}

// ============================================================================
// Stores
// ============================================================================
class SessionStore {
 public:
  virtual ~SessionStore() = default;
  virtual void save(const ChatSession& s) = 0;
  [[nodiscard]] virtual std::optional<ChatSession> load(const std::string& id) const = 0;
  [[nodiscard]] virtual std::vector<std::string> list() const = 0;
  [[nodiscard]] virtual std::size_t size() const { return list().size(); }
};

class MemorySessionStore final : public SessionStore {
 public:
  void save(const ChatSession& s) override {
    std::lock_guard<std::mutex> lock(mutex_);
    sessions_[s.session_id] = s;
  }
  [[nodiscard]] std::optional<ChatSession> load(const std::string& id) const override {
    std::lock_guard<std::mutex> lock(mutex_);
    const auto it = sessions_.find(id);
    if (it == sessions_.end()) return std::nullopt;
    return it->second;
  }
  [[nodiscard]] std::vector<std::string> list() const override {
    std::lock_guard<std::mutex> lock(mutex_);
    std::vector<std::string> ids;
    for (const auto& [id, s] : sessions_) ids.push_back(id);
    return ids;
  }
  [[nodiscard]] std::size_t size() const override {
    std::lock_guard<std::mutex> lock(mutex_);
    return sessions_.size();
  }

 private:
  mutable std::mutex mutex_;
  std::map<std::string, ChatSession> sessions_;
};

/// One `<id>.json` transcript plus one `<id>.image` blob per session.
class DirectorySessionStore final : public SessionStore {
 public:
  explicit DirectorySessionStore(std::filesystem::path dir) : dir_(std::move(dir)) {
    std::error_code ec;
    std::filesystem::create_directories(dir_, ec);
    if (!std::filesystem::is_directory(dir_)) {
      fail(ErrorKind::not_found, "session store directory unavailable: " + dir_.string());
    }
  }

  void save(const ChatSession& s) override {
    if (!is_valid_session_id(s.session_id)) {
      fail(ErrorKind::invalid_argument, "invalid session id '" + s.session_id + "'");
    }
    std::lock_guard<std::mutex> lock(mutex_);
    const auto image_path = dir_ / (s.session_id + ".image");
    if (s.image_bytes && !std::filesystem::exists(image_path)) {
      write_atomically(image_path, std::string(s.image_bytes->begin(), s.image_bytes->end()));
    }
    write_atomically(dir_ / (s.session_id + ".json"), export_transcript(s));
  }

  [[nodiscard]] std::optional<ChatSession> load(const std::string& id) const override {
    if (!is_valid_session_id(id)) return std::nullopt;
    std::lock_guard<std::mutex> lock(mutex_);
    std::ifstream in(dir_ / (id + ".json"), std::ios::binary);
    if (!in) return std::nullopt;
    std::ostringstream doc;
    doc << in.rdbuf();
    ChatSession s = import_transcript(doc.str());
    std::ifstream img(dir_ / (id + ".image"), std::ios::binary);
    if (img) {
      s.image_bytes = std::make_shared<const std::vector<std::uint8_t>>(
          std::istreambuf_iterator<char>(img), std::istreambuf_iterator<char>());
    }
    return s;
  }

  [[nodiscard]] std::vector<std::string> list() const override {
    std::lock_guard<std::mutex> lock(mutex_);
    std::vector<std::string> ids;
    for (const auto& e : std::filesystem::directory_iterator(dir_)) {
      if (e.path().extension() == ".json") ids.push_back(e.path().stem().string());
    }
    std::sort(ids.begin(), ids.end());
    return ids;
  }

  [[nodiscard]] const std::filesystem::path& directory() const noexcept { return dir_; }

 private:
  static void write_atomically(const std::filesystem::path& path, const std::string& data) {
    auto tmp = path;
    tmp += ".tmp";
    {
      std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
      if (!out) fail(ErrorKind::backend, "cannot write " + tmp.string());
      out << data;
      if (!out) fail(ErrorKind::backend, "short write to " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
  }

  std::filesystem::path dir_;
  mutable std::mutex mutex_;
};

// ============================================================================
// Session manager
// ============================================================================
struct SessionClock {
  std::function<std::string()> wall;        ///< ISO-8601 UTC timestamp
  std::function<std::int64_t()> monotonic;  ///< milliseconds

  static SessionClock system() {
    return {[] {
              const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
              std::tm tm{};
              gmtime_r(&now, &tm);
              char buf[32];
              std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
              return std::string(buf);
            },
            [] {
              return std::chrono::duration_cast<std::chrono::milliseconds>(
                         std::chrono::steady_clock::now().time_since_epoch())
                  .count();
            }};
  }
};

using IdGenerator = std::function<std::string()>;

inline IdGenerator random_session_ids() {
  struct State {
    std::mutex mutex;
    std::mt19937_64 rng{std::random_device{}()};
  };
  auto state = std::make_shared<State>();
  return [state] {
    std::lock_guard<std::mutex> lock(state->mutex);
    char buf[33];
    std::snprintf(buf, sizeof buf, "%016llx%016llx", static_cast<unsigned long long>(state->rng()),
                  static_cast<unsigned long long>(state->rng()));
    return std::string(buf);
  };
}

struct SessionOptions {
  std::string model_name{"qwen2-vl-72b-instruct"};
  std::optional<DetectorConfig> detector;  ///< unset: backend defaults
  bool scene_block_every_turn{true};
  double temperature{0.0};
  int max_tokens{1024};
  int timeout_ms{60000};
  std::size_t max_sessions{0};  ///< 0 = unlimited
  std::size_t max_image_bytes{kDefaultMaxImageBytes};
};

class SessionManager {
 public:
  SessionManager(std::shared_ptr<SessionStore> store, std::shared_ptr<const DetectorBackend> detector,
                 std::shared_ptr<VlmClient> vlm, PromptTemplates templates = PromptTemplates::builtin(),
                 SessionOptions options = {}, SessionClock clock = SessionClock::system(),
                 IdGenerator ids = random_session_ids())
      : store_(std::move(store)),
        detector_(std::move(detector)),
        vlm_(std::move(vlm)),
        templates_(std::move(templates)),
        options_(std::move(options)),
        clock_(std::move(clock)),
        ids_(std::move(ids)) {
    if (!store_ || !detector_ || !vlm_) {
      fail(ErrorKind::invalid_argument, "SessionManager needs a store, a detector and a VLM client");
    }
  }

  /// Runs the detector once, sends the turn-0 guide and persists the session.
  /// Nothing is stored when detection or the VLM call fails.
  ChatSession start_session(const Image& image, PromptMode mode,
                            const std::optional<std::string>& opening = std::nullopt) {
    Reservation reservation(*this);
    const ImagePayload payload = encode_image(image.bytes, options_.max_image_bytes);

    ChatSession s;
    s.detections = detector_->detect(image, options_.detector.value_or(detector_->default_config()));
    s.session_id = ids_();
    s.created_at = clock_.wall();
    s.image = ImageInfo{image.id, image.width(), image.height(), payload.media_type};
    s.image_bytes = std::make_shared<const std::vector<std::uint8_t>>(image.bytes);
    s.mode = mode;
    s.scene_block_every_turn = options_.scene_block_every_turn;
    s.template_version = templates_.version;

    const SceneContext ctx = SceneContext::from(s.detections);
    const std::string question = opening.value_or(templates_.opening);
    PromptBundle bundle = compose(ctx, question, s.mode_for_turn(0), templates_);
    s.turns.push_back(run_turn(s, question, std::move(bundle)));
    store_->save(s);
    return s;
  }

  /// Appends one turn. The whole prior dialogue is resent as context. On VLM
  /// failure the session is left unchanged.
  Turn ask(const std::string& session_id, const std::string& question) {
    const auto lease = lease_for(session_id);
    std::lock_guard<std::mutex> hold(*lease);
    ChatSession s = get(session_id);
    const SceneContext ctx = SceneContext::from(s.detections);
    PromptBundle bundle = compose(ctx, question, s.mode_for_turn(s.turns.size()), templates_);
    Turn t = run_turn(s, question, std::move(bundle));
    s.turns.push_back(t);
    store_->save(s);
    return t;
  }

  [[nodiscard]] ChatSession get(const std::string& session_id) const {
    auto s = store_->load(session_id);
    if (!s) fail(ErrorKind::not_found, "unknown session '" + session_id + "'");
    return std::move(*s);
  }

  [[nodiscard]] std::string export_transcript(const std::string& session_id) const {
    return sarscout::export_transcript(get(session_id));
  }

  [[nodiscard]] const PromptTemplates& templates() const noexcept { return templates_; }
  [[nodiscard]] const SessionOptions& options() const noexcept { return options_; }
  [[nodiscard]] const DetectorBackend& detector() const noexcept { return *detector_; }

  /// Chat request for the next turn: system prompt, every completed turn as a
  /// user/assistant pair (the image rides on the first user message), then
  /// the new user message.
  [[nodiscard]] ChatRequest build_request(const ChatSession& s, const PromptBundle& next) const {
    ChatRequest req;
    req.model_name = options_.model_name;
    req.temperature = options_.temperature;
    req.max_tokens = options_.max_tokens;
    req.timeout_ms = options_.timeout_ms;
    req.messages.push_back({Role::system, {ContentPart::of_text(next.system_text)}});
    std::optional<std::string> image_uri;
    if (s.image_bytes && !s.image_bytes->empty()) {
      image_uri = encode_image(*s.image_bytes, options_.max_image_bytes).data_uri;
    }
    const auto user_message = [&](const PromptBundle& b, bool first) {
      ChatMessage m{Role::user, {}};
      if (first && image_uri) m.parts.push_back(ContentPart::of_image(*image_uri));
      m.parts.push_back(ContentPart::of_text(b.user_message()));
      return m;
    };
    for (const Turn& t : s.turns) {
      req.messages.push_back(user_message(t.prompt, t.index == 0));
      req.messages.push_back({Role::assistant, {ContentPart::of_text(t.answer_text)}});
    }
    req.messages.push_back(user_message(next, s.turns.empty()));
    return req;
  }

 private:
  Turn run_turn(const ChatSession& s, const std::string& question, PromptBundle bundle) {
    const ChatRequest req = build_request(s, bundle);
    const std::int64_t started = clock_.monotonic();
    ChatResponse resp = vlm_->chat(req);
    Turn t;
    t.index = s.turns.size();
    t.question = detail::trim_copy(question);
    t.prompt = std::move(bundle);
    t.answer_text = std::move(resp.answer_text);
    t.model_name = resp.model_name.empty() ? options_.model_name : resp.model_name;
    t.latency_ms = clock_.monotonic() - started;
    t.token_usage = resp.usage;
    t.finish_reason = resp.finish_reason;
    return t;
  }

  std::shared_ptr<std::mutex> lease_for(const std::string& id) {
    std::lock_guard<std::mutex> lock(leases_mutex_);
    auto& slot = leases_[id];
    if (!slot) slot = std::make_shared<std::mutex>();
    return slot;
  }

  class Reservation {
   public:
    explicit Reservation(SessionManager& m) : m_(m) {
      std::lock_guard<std::mutex> lock(m_.leases_mutex_);
      if (m_.options_.max_sessions > 0 && m_.store_->size() + m_.pending_ >= m_.options_.max_sessions) {
        fail(ErrorKind::limit, "session limit reached (" + std::to_string(m_.options_.max_sessions) + ")");
      }
      ++m_.pending_;
    }
    ~Reservation() {
      std::lock_guard<std::mutex> lock(m_.leases_mutex_);
      --m_.pending_;
    }
    Reservation(const Reservation&) = delete;
    Reservation& operator=(const Reservation&) = delete;

   private:
    SessionManager& m_;
  };

  std::shared_ptr<SessionStore> store_;
  std::shared_ptr<const DetectorBackend> detector_;
  std::shared_ptr<VlmClient> vlm_;
  PromptTemplates templates_;
  SessionOptions options_;
  SessionClock clock_;
  IdGenerator ids_;
  std::mutex leases_mutex_;
  std::map<std::string, std::shared_ptr<std::mutex>> leases_;
  std::size_t pending_{0};
};

}  // namespace sarscout
