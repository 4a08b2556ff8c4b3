#pragma once

#include <unistd.h>

#include <atomic>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "freeview/datamodel.hpp"
#include "freeview/model.hpp"

namespace testsupport {

namespace fs = std::filesystem;

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static std::atomic<int> counter{0};
    path_ = fs::temp_directory_path() /
            ("freeview_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  const fs::path& path() const { return path_; }

 private:
  fs::path path_;
};

inline std::vector<double> random_vector(std::mt19937_64& rng, std::size_t d, double scale = 1.0) {
  std::normal_distribution<double> dist(0.0, scale);
  std::vector<double> v(d);
  for (auto& x : v) x = dist(rng);
  return v;
}

inline freeview::EmbeddingPair random_pair(std::mt19937_64& rng, std::size_t d, double scale = 1.0) {
  return {random_vector(rng, d, scale), random_vector(rng, d, scale)};
}

/// Returns a fixed embedding for every image and counts images encoded.
class FixedEncoder final : public freeview::ImageEncoder {
 public:
  FixedEncoder(freeview::EmbeddingPair e, int img_size) : e_(std::move(e)), img_size_(img_size) {}
  std::vector<freeview::EmbeddingPair> encode(std::span<const freeview::ImageSample> images) const override {
    calls_ += images.size();
    return std::vector<freeview::EmbeddingPair>(images.size(), e_);
  }
  int img_size() const override { return img_size_; }
  std::size_t dim() const override { return e_.dim(); }
  std::size_t images_encoded() const { return calls_.load(); }

 private:
  freeview::EmbeddingPair e_;
  int img_size_;
  mutable std::atomic<std::size_t> calls_{0};
};

/// Deterministic features from image statistics: channel means and a few
/// spatial moments, so distinct images map to distinct embeddings.
class PixelStatsEncoder final : public freeview::ImageEncoder {
 public:
  explicit PixelStatsEncoder(int img_size, std::size_t dim = 4) : img_size_(img_size), dim_(dim) {}
  std::vector<freeview::EmbeddingPair> encode(std::span<const freeview::ImageSample> images) const override {
    std::vector<freeview::EmbeddingPair> out;
    for (const auto& img : images) {
      freeview::EmbeddingPair e{std::vector<double>(dim_, 0.0), std::vector<double>(dim_, 0.0)};
      const std::size_t plane = img.plane();
      for (std::size_t i = 0; i < img.pixels.size(); ++i) {
        const std::size_t k = (i / plane + i % plane) % dim_;
        e.content[k] += img.pixels[i] / static_cast<double>(plane);
        e.view[(k + 1) % dim_] += img.pixels[i] * static_cast<double>(i % img.size) / static_cast<double>(plane * img.size);
      }
      out.push_back(std::move(e));
    }
    calls_ += images.size();
    return out;
  }
  int img_size() const override { return img_size_; }
  std::size_t dim() const override { return dim_; }
  std::size_t images_encoded() const { return calls_.load(); }

 private:
  int img_size_;
  std::size_t dim_;
  mutable std::atomic<std::size_t> calls_{0};
};

/// Small network configuration for fast model tests.
inline freeview::EncoderConfig tiny_config(int img_size = 16, int dim = 8) {
  freeview::EncoderConfig cfg;
  cfg.img_size = img_size;
  cfg.embed_dim = dim;
  cfg.conv_widths = {4, 8};
  cfg.decoder_width = 8;
  cfg.init_seed = 3;
  return cfg;
}

inline freeview::ImageSample random_image(std::mt19937_64& rng, int size, freeview::ItemRef ref = {}) {
  freeview::ImageSample img(ref, size);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  for (auto& p : img.pixels) p = u(rng);
  return img;
}

}  // namespace testsupport
