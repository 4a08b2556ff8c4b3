#include "freeview/retrieval.hpp"

#include <algorithm>
#include <atomic>
#include <bit>
#include <cstring>
#include <fstream>

#include <json.hpp>

namespace freeview {

namespace fs = std::filesystem;

namespace {

std::atomic<std::size_t> g_content_only{0};
std::atomic<std::size_t> g_combined{0};

constexpr char kIndexMagic[] = "FREEVIEW-IDX-1";
constexpr std::size_t kIndexMagicLen = sizeof(kIndexMagic) - 1;
constexpr std::uint16_t kUnknownView = 0xFFFF;

static_assert(std::endian::native == std::endian::little, "index files are written in host order");

template <typename U>
void put(std::ostream& os, U v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename U>
U get(std::istream& is, const fs::path& path) {
  U v{};
  if (!is.read(reinterpret_cast<char*>(&v), sizeof v)) throw IndexFormatError("truncated index file " + path.string());
  return v;
}

}  // namespace

std::vector<double> select_feature(const EmbeddingPair& e, RetrievalMode mode) {
  if (mode == RetrievalMode::view_agnostic) {
    g_content_only.fetch_add(1, std::memory_order_relaxed);
    return e.content;
  }
  g_combined.fetch_add(1, std::memory_order_relaxed);
  return view_specific_feature(e);
}

FeatureSelectorCounts feature_selector_counts() { return {g_content_only.load(), g_combined.load()}; }

void reset_feature_selector_counts() {
  g_content_only = 0;
  g_combined = 0;
}

GalleryIndex build_index(const ImageEncoder& encoder, std::span<const ImageSample> photos) {
  if (photos.empty()) throw std::invalid_argument("build_index: empty gallery");
  for (const auto& p : photos)
    if (p.ref.modality != Modality::photo) throw std::invalid_argument("build_index: " + describe(p.ref) + " is not a photo");
  const auto emb = encoder.encode(photos);
  GalleryIndex index(encoder.dim());
  for (std::size_t i = 0; i < photos.size(); ++i) index.append(photos[i].ref, emb[i]);
  index.freeze();
  return index;
}

RankedResult rank(const GalleryIndex& index, const ItemRef& query_ref, const EmbeddingPair& query_embedding,
                  RetrievalMode mode, std::size_t k) {
  if (query_embedding.dim() != index.dim())
    throw DimensionError("query dim " + std::to_string(query_embedding.dim()) + " != index dim " +
                         std::to_string(index.dim()));
  const auto q = select_feature(query_embedding, mode);
  RankedResult out{query_ref, mode, {}};
  out.ranking.reserve(index.size());
  for (std::size_t i = 0; i < index.size(); ++i) {
    const auto g = select_feature(index[i].embedding, mode);
    out.ranking.push_back({index[i].ref, l2_distance(q, g), i});
  }
  std::sort(out.ranking.begin(), out.ranking.end(), [](const ScoredItem& a, const ScoredItem& b) {
    return a.distance != b.distance ? a.distance < b.distance : a.gallery_pos < b.gallery_pos;
  });
  if (k > 0 && k < out.ranking.size()) out.ranking.resize(k);
  return out;
}

RankedResult query(const GalleryIndex& index, const ImageEncoder& encoder, const ImageSample& sketch,
                   RetrievalMode mode, int k) {
  if (k < 1) throw std::invalid_argument("query: k must be >= 1");
  if (encoder.dim() != index.dim()) throw DimensionError("encoder dim does not match index dim");
  const auto emb = encoder.encode(std::span<const ImageSample>(&sketch, 1));
  return rank(index, sketch.ref, emb.at(0), mode, static_cast<std::size_t>(k));
}

void save_index(const GalleryIndex& index, const fs::path& path, std::span<const std::string> image_paths) {
  if (!image_paths.empty() && image_paths.size() != index.size())
    throw std::invalid_argument("save_index: one image path per entry required");
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IndexFormatError("cannot write index " + path.string());
  os.write(kIndexMagic, kIndexMagicLen);
  put<std::uint32_t>(os, static_cast<std::uint32_t>(index.dim()));
  put<std::uint32_t>(os, static_cast<std::uint32_t>(index.size()));
  for (const auto& e : index.entries()) {
    put<std::uint32_t>(os, e.ref.instance_id);
    put<std::uint8_t>(os, static_cast<std::uint8_t>(e.ref.modality));
    put<std::uint16_t>(os, e.ref.view.known() ? static_cast<std::uint16_t>(e.ref.view.deg()) : kUnknownView);
    put<std::uint8_t>(os, static_cast<std::uint8_t>(e.ref.split));
    for (const auto* vec : {&e.embedding.content, &e.embedding.view})
      for (double x : *vec) put<float>(os, static_cast<float>(x));
  }
  if (!os) throw IndexFormatError("failed writing index " + path.string());

  nlohmann::ordered_json side;
  side["dim"] = index.dim();
  side["size"] = index.size();
  side["entries"] = nlohmann::ordered_json::array();
  for (std::size_t i = 0; i < index.size(); ++i) {
    const auto& ref = index[i].ref;
    side["entries"].push_back({{"instance_id", ref.instance_id},
                               {"view_deg", ref.view.raw()},
                               {"path", image_paths.empty() ? std::string() : image_paths[i]}});
  }
  std::ofstream(path.string() + ".json", std::ios::binary | std::ios::trunc) << side.dump(2) << "\n";
}

GalleryIndex load_index(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IndexFormatError("cannot read index " + path.string());
  char magic[kIndexMagicLen];
  if (!is.read(magic, kIndexMagicLen) || std::memcmp(magic, kIndexMagic, kIndexMagicLen) != 0)
    throw IndexFormatError(path.string() + " is not a FREEVIEW-IDX-1 file");
  const auto d = get<std::uint32_t>(is, path);
  const auto n = get<std::uint32_t>(is, path);
  if (d == 0) throw IndexFormatError("index dim is zero");
  GalleryIndex index(d);
  for (std::uint32_t i = 0; i < n; ++i) {
    ItemRef ref;
    ref.instance_id = get<std::uint32_t>(is, path);
    const auto modality = get<std::uint8_t>(is, path);
    const auto view = get<std::uint16_t>(is, path);
    const auto split = get<std::uint8_t>(is, path);
    if (modality > 1 || split > 1 || (view != kUnknownView && view >= 360))
      throw IndexFormatError("corrupt record " + std::to_string(i) + " in " + path.string());
    ref.modality = static_cast<Modality>(modality);
    ref.split = static_cast<Split>(split);
    ref.view = view == kUnknownView ? ViewAngle::unknown() : ViewAngle::degrees(view);
    EmbeddingPair e;
    e.content.resize(d);
    e.view.resize(d);
    for (auto* vec : {&e.content, &e.view})
      for (auto& x : *vec) x = get<float>(is, path);
    index.append(ref, std::move(e));
  }
  if (is.peek() != std::char_traits<char>::eof()) throw IndexFormatError("trailing bytes in " + path.string());
  index.freeze();
  return index;
}

std::vector<fs::path> load_index_image_paths(const fs::path& path) {
  std::ifstream is(path.string() + ".json", std::ios::binary);
  if (!is) throw IndexFormatError("missing index sidecar " + path.string() + ".json");
  std::vector<fs::path> out;
  try {
    const auto j = nlohmann::json::parse(is);
    for (const auto& e : j.at("entries")) {
      const auto p = e.at("path").get<std::string>();
      out.push_back(p.empty() ? fs::path() : path.parent_path() / p);
    }
  } catch (const nlohmann::json::exception& e) {
    throw IndexFormatError(std::string("malformed index sidecar: ") + e.what());
  }
  return out;
}

}  // namespace freeview
