#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "freeview/datamodel.hpp"
#include "freeview/model.hpp"

namespace freeview {

/// f_c for view-agnostic, f_c + f_v for view-specific. Every call is counted.
std::vector<double> select_feature(const EmbeddingPair& e, RetrievalMode mode);

struct FeatureSelectorCounts {
  std::size_t content_only = 0;
  std::size_t combined = 0;
};
FeatureSelectorCounts feature_selector_counts();
void reset_feature_selector_counts();

/// Encodes every photo once and stores both features. Throws on an empty list or a non-photo.
GalleryIndex build_index(const ImageEncoder& encoder, std::span<const ImageSample> photos);

/// Ranks the whole gallery (or its first k) against an already encoded query.
/// Distances ascending; ties keep gallery order.
RankedResult rank(const GalleryIndex& index, const ItemRef& query, const EmbeddingPair& query_embedding,
                  RetrievalMode mode, std::size_t k = 0);

/// Encodes the sketch once and ranks. k < 1 is an error; k beyond the gallery returns it all.
RankedResult query(const GalleryIndex& index, const ImageEncoder& encoder, const ImageSample& sketch,
                   RetrievalMode mode, int k);

class IndexFormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Binary index plus a `<path>.json` sidecar listing each entry's image path
/// (empty strings when image_paths is empty).
void save_index(const GalleryIndex& index, const std::filesystem::path& path,
                std::span<const std::string> image_paths = {});
GalleryIndex load_index(const std::filesystem::path& path);
/// Image paths from the sidecar, resolved against the index file's directory.
std::vector<std::filesystem::path> load_index_image_paths(const std::filesystem::path& path);

}  // namespace freeview
