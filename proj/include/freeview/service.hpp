#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "freeview/datamodel.hpp"
#include "freeview/model.hpp"

namespace freeview {

struct HttpReply {
  int status = 200;
  std::string content_type = "application/json";
  std::string body;
};

/// Sketch preprocessing for uploaded canvases: resize to img_size, then
/// luminance < 0.5 becomes black ink and everything else white.
ImageSample preprocess_sketch(std::span<const std::uint8_t> png_bytes, int img_size);

/// Request handling behind the HTTP routes. Starts in the loading state until
/// load() installs the encoder, index and gallery image paths, which are then
/// read-only for the service's lifetime.
class RetrievalService {
 public:
  RetrievalService() = default;

  void load(std::shared_ptr<const ImageEncoder> encoder, std::shared_ptr<const GalleryIndex> index,
            std::vector<std::filesystem::path> image_paths = {});
  bool ready() const;

  HttpReply health() const;
  /// Body: {"image": base64 PNG, "mode": "view_agnostic" | "view_specific", "k": 12}.
  HttpReply retrieve(const std::string& body) const;
  HttpReply gallery(std::uint32_t instance_id, int view_deg) const;

 private:
  struct Loaded {
    std::shared_ptr<const ImageEncoder> encoder;
    std::shared_ptr<const GalleryIndex> index;
    std::vector<std::filesystem::path> image_paths;
  };
  std::shared_ptr<const Loaded> snapshot() const;

  mutable std::mutex mutex_;
  std::shared_ptr<const Loaded> loaded_;
};

/// HTTP front end. start() binds and serves on a background thread.
class HttpServer {
 public:
  explicit HttpServer(RetrievalService& service);
  ~HttpServer();
  HttpServer(const HttpServer&) = delete;
  HttpServer& operator=(const HttpServer&) = delete;

  /// Port 0 picks a free port. Returns the bound port; throws std::runtime_error when binding fails.
  int start(const std::string& host, int port);
  /// Blocks in the calling thread until stop().
  void listen(const std::string& host, int port);
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace freeview
