#pragma once

#include <compare>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace freeview {

class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

enum class Modality : std::uint8_t { sketch = 0, photo = 1 };
enum class Split : std::uint8_t { train = 0, test = 1 };
enum class RetrievalMode : std::uint8_t { view_agnostic = 0, view_specific = 1 };

std::string_view to_string(Modality m);
std::string_view to_string(Split s);
std::string_view to_string(RetrievalMode m);
Modality parse_modality(std::string_view s);
Split parse_split(std::string_view s);
/// Accepts "view_agnostic"/"va" and "view_specific"/"vs".
RetrievalMode parse_mode(std::string_view s);

/// Whole-degree azimuth in [0, 360), or unknown.
class ViewAngle {
 public:
  constexpr ViewAngle() = default;
  /// Normalizes any integer into [0, 360).
  static ViewAngle degrees(int deg);
  static constexpr ViewAngle unknown() { return ViewAngle{}; }

  bool known() const { return deg_ >= 0; }
  int deg() const;
  /// Raw value, -1 when unknown.
  int raw() const { return deg_; }

  auto operator<=>(const ViewAngle&) const = default;

 private:
  explicit constexpr ViewAngle(int d) : deg_(d) {}
  int deg_ = -1;
};

struct ItemRef {
  std::uint32_t instance_id = 0;
  Modality modality = Modality::photo;
  ViewAngle view;
  Split split = Split::train;

  auto operator<=>(const ItemRef&) const = default;
};

std::string describe(const ItemRef& ref);

/// Square RGB image in CHW layout with channel values in [0, 1].
struct ImageSample {
  ItemRef ref;
  int size = 0;
  std::vector<float> pixels;

  ImageSample() = default;
  ImageSample(ItemRef r, int img_size);

  float& at(int channel, int y, int x) { return pixels[(static_cast<std::size_t>(channel) * size + y) * size + x]; }
  float at(int channel, int y, int x) const { return pixels[(static_cast<std::size_t>(channel) * size + y) * size + x]; }
  std::size_t plane() const { return static_cast<std::size_t>(size) * size; }
  /// Throws std::invalid_argument if a pixel leaves [0, 1] or the buffer is mis-sized.
  void validate() const;
};

/// Disentangled content (f_c) and view (f_v) features of one image.
struct EmbeddingPair {
  std::vector<double> content;
  std::vector<double> view;

  std::size_t dim() const { return content.size(); }
  void validate() const;
  bool operator==(const EmbeddingPair&) const = default;
};

/// Euclidean distance; throws DimensionError on length mismatch.
double l2_distance(std::span<const double> a, std::span<const double> b);

struct GalleryEntry {
  ItemRef ref;
  EmbeddingPair embedding;
};

/// Photo gallery with precomputed features. Append during build, then freeze.
class GalleryIndex {
 public:
  explicit GalleryIndex(std::size_t dim) : dim_(dim) {}

  void append(ItemRef ref, EmbeddingPair embedding);
  void freeze() { frozen_ = true; }
  bool frozen() const { return frozen_; }

  std::size_t dim() const { return dim_; }
  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  const std::vector<GalleryEntry>& entries() const { return entries_; }
  const GalleryEntry& operator[](std::size_t i) const { return entries_[i]; }

 private:
  std::size_t dim_;
  std::vector<GalleryEntry> entries_;
  bool frozen_ = false;
};

struct ScoredItem {
  ItemRef ref;
  double distance = 0.0;
  std::size_t gallery_pos = 0;
};

struct RankedResult {
  ItemRef query;
  RetrievalMode mode = RetrievalMode::view_agnostic;
  std::vector<ScoredItem> ranking;

  std::vector<ItemRef> refs() const;
};

}  // namespace freeview
