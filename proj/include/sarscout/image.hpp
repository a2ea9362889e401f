#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <map>
#include <string>
#include <vector>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

#include "sarscout/error.hpp"
#include "sarscout/geometry.hpp"

namespace sarscout {

/// A decoded input image. `bytes` keeps the original encoding so it can be
/// forwarded untouched to the VLM; `pixels` is the decoded 3-channel BGR view.
struct Image {
  std::string id;
  std::vector<std::uint8_t> bytes;
  cv::Mat pixels;

  [[nodiscard]] int width() const noexcept { return pixels.cols; }
  [[nodiscard]] int height() const noexcept { return pixels.rows; }
};

inline Image decode_image(std::string id, std::vector<std::uint8_t> bytes) {
  Image img;
  img.id = std::move(id);
  if (!bytes.empty()) {
    img.pixels = cv::imdecode(cv::Mat(1, static_cast<int>(bytes.size()), CV_8UC1, bytes.data()),
                              cv::IMREAD_COLOR);
  }
  if (img.pixels.empty()) fail(ErrorKind::input, "image '" + img.id + "' is not decodable");
  img.bytes = std::move(bytes);
  return img;
}

inline std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::input, "cannot read " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

/// image_id is the file stem.
inline Image load_image(const std::filesystem::path& path) {
  return decode_image(path.stem().string(), read_file_bytes(path));
}

/// Builds an id -> dims index by decoding every raster in `image_dir`.
inline std::map<std::string, ImageDims> scan_image_dims(const std::filesystem::path& image_dir) {
  std::map<std::string, ImageDims> dims;
  std::error_code ec;
  for (const auto& entry : std::filesystem::directory_iterator(image_dir, ec)) {
    if (!entry.is_regular_file()) continue;
    const cv::Mat m = cv::imread(entry.path().string(), cv::IMREAD_UNCHANGED);
    if (m.empty()) continue;
    dims[entry.path().stem().string()] = ImageDims{m.cols, m.rows};
  }
  if (ec) fail(ErrorKind::not_found, "cannot list image directory " + image_dir.string());
  return dims;
}

}  // namespace sarscout
