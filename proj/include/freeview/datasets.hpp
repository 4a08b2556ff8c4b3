#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "freeview/datamodel.hpp"

namespace freeview {

/// splitmix64 of (base, stream): independent seeds for per-instance and per-step streams.
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream);

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class SamplingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ManifestError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ManifestFile {
  Modality modality = Modality::photo;
  int view_deg = 0;
  std::string path;  ///< relative to the manifest's directory
  bool operator==(const ManifestFile&) const = default;
};

struct ManifestInstance {
  std::uint32_t instance_id = 0;
  Split split = Split::train;
  std::vector<ManifestFile> files;
  bool operator==(const ManifestInstance&) const = default;
};

struct DatasetManifest {
  std::string name;
  int img_size = 64;
  std::vector<int> view_grid;
  std::vector<int> sketch_views;
  std::vector<ManifestInstance> instances;
  /// Directory the relative paths resolve against; not serialized.
  std::filesystem::path root;

  std::size_t count(Split split, Modality modality) const;
  /// Checks sketch_views ⊆ view_grid and, when check_files, that every file exists.
  void validate(bool check_files = true) const;
  bool operator==(const DatasetManifest& o) const {
    return name == o.name && img_size == o.img_size && view_grid == o.view_grid && sketch_views == o.sketch_views &&
           instances == o.instances;
  }
};

std::string manifest_to_json(const DatasetManifest& m);
DatasetManifest manifest_from_json(const std::string& text, const std::filesystem::path& root = {});
void save_manifest(const DatasetManifest& m, const std::filesystem::path& path);
DatasetManifest load_manifest(const std::filesystem::path& path);

/// Decodes every file of the manifest (optionally filtered) into ImageSamples, in manifest order.
std::vector<ImageSample> load_images(const DatasetManifest& m);
std::vector<ImageSample> load_images(const DatasetManifest& m, Split split);

/// `inst{id:05}_{modality}_v{view:03}.png`
std::string image_file_name(const ItemRef& ref);

struct CorpusConfig {
  int n_train = 40;
  int n_test = 12;
  int img_size = 64;
  std::vector<int> view_grid{0, 30, 75, 105, 135, 180, 225, 270, 315};
  std::vector<int> sketch_views{0, 30, 75};
  double jitter_px = 0.7;
  double dropout_frac = 0.15;
  std::uint64_t seed = 0;

  void validate() const;
};

struct Corpora {
  DatasetManifest dcm;
  DatasetManifest d2d;
};

/// Renders shapes, derives sketches and writes PNGs under out_dir/images plus
/// out_dir/dcm.json and out_dir/d2d.json. Train instances take ids [0, n_train),
/// test instances [n_train, n_train + n_test).
Corpora build_corpora(const CorpusConfig& cfg, const std::filesystem::path& out_dir);

struct ColorAugmentParams {
  double hue_shift = 0.0;  ///< fraction of a full turn, [0, 1)
  double sat_scale = 1.0;  ///< [0.5, 1.5]
  double val_scale = 1.0;  ///< [0.8, 1.2]
  bool is_identity() const { return hue_shift == 0.0 && sat_scale == 1.0 && val_scale == 1.0; }
};

ColorAugmentParams sample_color_params(std::uint64_t seed);
/// HSV jitter applied to non-background (not pure white) pixels; the background
/// and hence the foreground mask are left unchanged.
ImageSample color_augment(const ImageSample& img, const ColorAugmentParams& params);
ImageSample color_augment(const ImageSample& img, std::uint64_t seed);

struct TripletBatch {
  std::vector<ImageSample> anchors;
  std::vector<ImageSample> positives;
  std::vector<ImageSample> negatives;
  std::size_t size() const { return anchors.size(); }
};

struct ViewPairBatch {
  std::vector<std::pair<ImageSample, ImageSample>> pairs;
  /// Instances passed over for having fewer than two views.
  std::vector<std::uint32_t> skipped_instances;
};

/// images: D_CM samples (sketches and their same-view photos). Anchor instances are
/// drawn without replacement while possible; each negative is a photo of a
/// uniformly drawn other instance. With match_negative_view that instance is drawn
/// from those with a photo at the anchor's view (all others when none has one) and
/// the negative is its photo at that view.
TripletBatch sample_triplets(std::span<const ImageSample> images, int batch, std::uint64_t seed,
                             bool match_negative_view = false);

/// images: D_2D photos. Picks `batch` instances, then min(pairs_per_instance, C(M,2))
/// distinct unordered view pairs from each; the (a, b) order within a pair is random.
ViewPairBatch sample_view_pairs(std::span<const ImageSample> images, int batch, int pairs_per_instance,
                                std::uint64_t seed);

}  // namespace freeview
