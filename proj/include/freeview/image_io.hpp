#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "freeview/datamodel.hpp"

namespace freeview {

class ImageIoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Decoded 8-bit image with interleaved RGB channels.
struct RgbImage {
  int width = 0, height = 0;
  std::vector<std::uint8_t> rgb;
};

/// Any PNG color type is converted to 8-bit RGB (alpha composited onto white).
RgbImage decode_png(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> encode_png(const RgbImage& img);

RgbImage read_png(const std::filesystem::path& path);
void write_png(const std::filesystem::path& path, const RgbImage& img);

/// Quantizes to 8 bits per channel.
RgbImage to_rgb(const ImageSample& img);
/// Square images only; throws ImageIoError otherwise.
ImageSample from_rgb(const RgbImage& img, ItemRef ref);

/// Area-averaging resize to size x size.
RgbImage resize(const RgbImage& img, int size);

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);

}  // namespace freeview
