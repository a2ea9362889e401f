#pragma once

#include <atomic>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <memory>
#include <random>
#include <sstream>
#include <string>

#include <gtest/gtest.h>

#include "sarscout/detector.hpp"
#include "sarscout/image.hpp"
#include "sarscout/session.hpp"
#include "sarscout/vlm_client.hpp"

namespace testing_support {

namespace fs = std::filesystem;

inline fs::path fixture(const std::string& relative) { return fs::path(SARSCOUT_FIXTURES) / relative; }

inline std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void spit(const fs::path& p, const std::string& data) {
  fs::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out << data;
}

/// Compares `actual` with a checked-in golden file. With
/// SARSCOUT_UPDATE_GOLDENS=1 the file is rewritten instead.
inline void expect_golden(const std::string& relative, const std::string& actual) {
  const fs::path path = fixture(relative);
  const char* update = std::getenv("SARSCOUT_UPDATE_GOLDENS");
  if (update && std::string(update) == "1") {
    spit(path, actual);
    GTEST_SKIP() << "golden rewritten: " << path;
  }
  ASSERT_TRUE(fs::exists(path)) << "missing golden " << path;
  EXPECT_EQ(slurp(path), actual) << "golden mismatch: " << path;
}

/// Fresh directory under the build tree, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static std::atomic<int> counter{0};
    std::random_device rd;
    path_ = fs::temp_directory_path() /
            ("sarscout-" + tag + "-" + std::to_string(rd()) + "-" + std::to_string(counter++));
    fs::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  [[nodiscard]] const fs::path& path() const noexcept { return path_; }

 private:
  fs::path path_;
};

/// Wall clock frozen at one instant; monotonic clock advances 100 ms per call.
inline sarscout::SessionClock fixed_clock(std::string wall = "2026-01-01T00:00:00Z") {
  auto ticks = std::make_shared<std::atomic<std::int64_t>>(0);
  return {[wall] { return wall; }, [ticks] { return ticks->fetch_add(100); }};
}

inline sarscout::IdGenerator sequential_ids(std::string prefix) {
  auto n = std::make_shared<std::atomic<int>>(0);
  return [prefix, n] { return prefix + "-" + std::to_string(n->fetch_add(1)); };
}

inline sarscout::Image scene_image() { return sarscout::load_image(fixture("scenes/sar_scene.png")); }
inline sarscout::Image two_ship_image() { return sarscout::load_image(fixture("scenes/sar_two_ships.png")); }

inline std::shared_ptr<sarscout::FileBackend> scene_detector() {
  return std::make_shared<sarscout::FileBackend>(fixture("scenes/detections.jsonl"));
}

inline std::shared_ptr<sarscout::MockTransport> dialogue_script() {
  return sarscout::MockTransport::from_file(fixture("dialogue/script.json"));
}

/// Client with no real sleeping between retries.
inline std::shared_ptr<sarscout::VlmClient> instant_client(std::shared_ptr<sarscout::VlmTransport> t,
                                                            int concurrency = 4) {
  return std::make_shared<sarscout::VlmClient>(std::move(t), sarscout::RetryPolicy{}, concurrency,
                                               [](std::chrono::milliseconds) {});
}

inline std::vector<std::string> dialogue_questions() {
  std::vector<std::string> qs;
  std::istringstream in(slurp(fixture("dialogue/questions.txt")));
  for (std::string line; std::getline(in, line);) {
    if (!line.empty()) qs.push_back(line);
  }
  return qs;
}

}  // namespace testing_support

/// Expects `stmt` to throw sarscout::Error of the given kind.
#define EXPECT_ERROR_KIND(stmt, expected_kind)                                          \
  do {                                                                                  \
    try {                                                                               \
      (void)(stmt);                                                                     \
      ADD_FAILURE() << "expected " << sarscout::to_string(expected_kind) << " error";  \
    } catch (const sarscout::Error& e_) {                                               \
      EXPECT_EQ(e_.kind(), expected_kind) << e_.what();                                 \
    }                                                                                   \
  } while (0)
