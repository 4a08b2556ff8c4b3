#include "freeview/service.hpp"

#include <algorithm>
#include <chrono>
#include <thread>

#include <boost/beast/core/detail/base64.hpp>
#include <httplib.h>
#include <json.hpp>

#include "freeview/image_io.hpp"
#include "freeview/retrieval.hpp"

namespace freeview {

namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;

namespace {

HttpReply json_reply(int status, const ojson& body) { return {status, "application/json", body.dump()}; }

HttpReply error_reply(int status, const std::string& message) { return json_reply(status, ojson{{"error", message}}); }

std::vector<std::uint8_t> decode_base64(std::string_view text) {
  // Accept data URLs as produced by canvas.toDataURL().
  if (text.starts_with("data:")) {
    const auto comma = text.find(',');
    if (comma == std::string_view::npos) throw std::invalid_argument("malformed data URL");
    text.remove_prefix(comma + 1);
  }
  std::string clean;
  clean.reserve(text.size());
  for (char c : text) {
    if (c == '\n' || c == '\r' || c == ' ') continue;
    const bool ok = std::isalnum(static_cast<unsigned char>(c)) || c == '+' || c == '/' || c == '=';
    if (!ok) throw std::invalid_argument("image is not valid base64");
    clean.push_back(c);
  }
  if (clean.empty() || clean.size() % 4 != 0) throw std::invalid_argument("image is not valid base64");
  std::vector<std::uint8_t> out(boost::beast::detail::base64::decoded_size(clean.size()));
  const auto [written, read] = boost::beast::detail::base64::decode(out.data(), clean.data(), clean.size());
  out.resize(written);
  return out;
}

}  // namespace

ImageSample preprocess_sketch(std::span<const std::uint8_t> png_bytes, int img_size) {
  RgbImage rgb = decode_png(png_bytes);
  if (rgb.width != img_size || rgb.height != img_size) {
    if (rgb.width != rgb.height) {
      // Pad onto a white square canvas, centered.
      const int side = std::max(rgb.width, rgb.height);
      RgbImage sq{side, side, std::vector<std::uint8_t>(static_cast<std::size_t>(side) * side * 3, 255)};
      const int ox = (side - rgb.width) / 2, oy = (side - rgb.height) / 2;
      for (int y = 0; y < rgb.height; ++y)
        std::copy_n(&rgb.rgb[static_cast<std::size_t>(y) * rgb.width * 3], rgb.width * 3,
                    &sq.rgb[(static_cast<std::size_t>(y + oy) * side + ox) * 3]);
      rgb = std::move(sq);
    }
    rgb = resize(rgb, img_size);
  }
  ImageSample out(ItemRef{0, Modality::sketch, ViewAngle::unknown(), Split::test}, img_size);
  const std::size_t plane = out.plane();
  for (std::size_t i = 0; i < plane; ++i) {
    const double lum = (0.299 * rgb.rgb[3 * i] + 0.587 * rgb.rgb[3 * i + 1] + 0.114 * rgb.rgb[3 * i + 2]) / 255.0;
    const float v = lum < 0.5 ? 0.0f : 1.0f;
    out.pixels[i] = out.pixels[plane + i] = out.pixels[2 * plane + i] = v;
  }
  return out;
}

void RetrievalService::load(std::shared_ptr<const ImageEncoder> encoder, std::shared_ptr<const GalleryIndex> index,
                            std::vector<fs::path> image_paths) {
  if (!encoder || !index) throw std::invalid_argument("RetrievalService::load: encoder and index required");
  if (encoder->dim() != index->dim()) throw DimensionError("encoder dim does not match index dim");
  if (!image_paths.empty() && image_paths.size() != index->size())
    throw std::invalid_argument("RetrievalService::load: one image path per gallery entry required");
  auto loaded = std::make_shared<Loaded>(Loaded{std::move(encoder), std::move(index), std::move(image_paths)});
  std::lock_guard lock(mutex_);
  loaded_ = std::move(loaded);
}

std::shared_ptr<const RetrievalService::Loaded> RetrievalService::snapshot() const {
  std::lock_guard lock(mutex_);
  return loaded_;
}

bool RetrievalService::ready() const { return snapshot() != nullptr; }

HttpReply RetrievalService::health() const {
  const auto s = snapshot();
  if (!s) return json_reply(200, ojson{{"status", "loading"}, {"model_step", 0}, {"gallery_size", 0}, {"dim", 0}});
  return json_reply(200, ojson{{"status", "ok"},
                               {"model_step", s->encoder->model_step()},
                               {"gallery_size", s->index->size()},
                               {"dim", s->index->dim()},
                               {"img_size", s->encoder->img_size()}});
}

HttpReply RetrievalService::retrieve(const std::string& body) const {
  const auto start = std::chrono::steady_clock::now();
  const auto s = snapshot();
  if (!s) return error_reply(503, "index not loaded");

  RetrievalMode mode;
  int k = 12;
  std::vector<std::uint8_t> png;
  try {
    const auto j = ojson::parse(body);
    if (!j.is_object()) return error_reply(400, "request body must be a JSON object");
    if (!j.contains("image") || !j["image"].is_string()) return error_reply(400, "missing image");
    if (!j.contains("mode") || !j["mode"].is_string()) return error_reply(400, "missing mode");
    const auto mode_str = j["mode"].get<std::string>();
    if (mode_str == "view_agnostic") mode = RetrievalMode::view_agnostic;
    else if (mode_str == "view_specific") mode = RetrievalMode::view_specific;
    else return error_reply(400, "unknown mode: " + mode_str);
    if (j.contains("k")) {
      if (!j["k"].is_number_integer()) return error_reply(400, "k must be an integer");
      k = j["k"].get<int>();
      if (k < 1) return error_reply(400, "k must be >= 1");
    }
    png = decode_base64(j["image"].get<std::string>());
  } catch (const nlohmann::json::exception& e) {
    return error_reply(400, std::string("malformed JSON: ") + e.what());
  } catch (const std::invalid_argument& e) {
    return error_reply(400, e.what());
  }

  ImageSample sketch;
  try {
    sketch = preprocess_sketch(png, s->encoder->img_size());
  } catch (const ImageIoError& e) {
    return error_reply(400, std::string("undecodable image: ") + e.what());
  }

  const RankedResult result = query(*s->index, *s->encoder, sketch, mode, k);
  ojson results = ojson::array();
  for (const auto& item : result.ranking)
    results.push_back({{"instance_id", item.ref.instance_id},
                       {"view_deg", item.ref.view.raw()},
                       {"distance", item.distance},
                       {"image_url", "/gallery/" + std::to_string(item.ref.instance_id) + "/" +
                                         std::to_string(item.ref.view.raw())}});
  const double latency =
      std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
  return json_reply(200, ojson{{"mode", std::string(to_string(mode))}, {"results", results}, {"latency_ms", latency}});
}

HttpReply RetrievalService::gallery(std::uint32_t instance_id, int view_deg) const {
  const auto s = snapshot();
  if (!s) return error_reply(503, "index not loaded");
  for (std::size_t i = 0; i < s->index->size(); ++i) {
    const auto& ref = (*s->index)[i].ref;
    if (ref.instance_id != instance_id || ref.view.raw() != view_deg) continue;
    if (s->image_paths.empty() || s->image_paths[i].empty()) break;
    try {
      const auto bytes = read_file(s->image_paths[i]);
      return {200, "image/png", std::string(bytes.begin(), bytes.end())};
    } catch (const ImageIoError&) {
      return error_reply(404, "gallery image missing on disk");
    }
  }
  return error_reply(404, "no gallery entry " + std::to_string(instance_id) + "/" + std::to_string(view_deg));
}

struct HttpServer::Impl {
  RetrievalService& service;
  httplib::Server server;
  std::thread thread;
};

HttpServer::HttpServer(RetrievalService& service) : impl_(std::make_unique<Impl>(service)) {
  auto& srv = impl_->server;
  auto& svc = impl_->service;
  const auto send = [](httplib::Response& res, const HttpReply& reply) {
    res.status = reply.status;
    res.set_content(reply.body, reply.content_type);
  };
  srv.set_default_headers({{"Access-Control-Allow-Origin", "*"},
                           {"Access-Control-Allow-Methods", "GET, POST, OPTIONS"},
                           {"Access-Control-Allow-Headers", "Content-Type"}});
  srv.Options(R"(.*)", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });
  srv.Get("/health", [&svc, send](const httplib::Request&, httplib::Response& res) { send(res, svc.health()); });
  srv.Post("/retrieve",
           [&svc, send](const httplib::Request& req, httplib::Response& res) { send(res, svc.retrieve(req.body)); });
  srv.Get(R"(/gallery/(\d+)/(\d+))", [&svc, send](const httplib::Request& req, httplib::Response& res) {
    try {
      const auto id = static_cast<std::uint32_t>(std::stoul(req.matches[1].str()));
      const int view = std::stoi(req.matches[2].str());
      send(res, svc.gallery(id, view));
    } catch (const std::out_of_range&) {
      send(res, error_reply(404, "no such gallery entry"));
    }
  });
  srv.set_exception_handler([send](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
    std::string what = "internal error";
    try {
      std::rethrow_exception(ep);
    } catch (const std::exception& e) {
      what = e.what();
    } catch (...) {
    }
    send(res, error_reply(500, what));
  });
}

HttpServer::~HttpServer() { stop(); }

int HttpServer::start(const std::string& host, int port) {
  auto& srv = impl_->server;
  const int bound = port == 0 ? srv.bind_to_any_port(host) : (srv.bind_to_port(host, port) ? port : -1);
  if (bound < 0) throw std::runtime_error("cannot bind " + host + ":" + std::to_string(port));
  impl_->thread = std::thread([&srv] { srv.listen_after_bind(); });
  srv.wait_until_ready();
  return bound;
}

void HttpServer::listen(const std::string& host, int port) {
  if (!impl_->server.listen(host, port)) throw std::runtime_error("cannot listen on " + host + ":" + std::to_string(port));
}

void HttpServer::stop() {
  impl_->server.stop();
  if (impl_->thread.joinable()) impl_->thread.join();
}

}  // namespace freeview
