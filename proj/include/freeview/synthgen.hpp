#pragma once

#include <array>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "freeview/datamodel.hpp"

namespace freeview {

using Vec3 = std::array<double, 3>;

struct Cuboid {
  Vec3 center{};
  Vec3 size{};  ///< full extents along x (left-right), y (up), z (front-back); all > 0
  bool operator==(const Cuboid&) const = default;
};

/// Procedural chair: seat slab, back slab, four legs, optional pair of armrests.
struct ShapeSpec {
  std::int64_t shape_id = 0;
  std::vector<Cuboid> cuboids;
  std::array<double, 3> tint{};  ///< RGB in [0, 1], saturation >= 0.35
  bool operator==(const ShapeSpec&) const = default;
};

struct ViewSpec {
  int azimuth_deg = 0;
  int elevation_deg = 20;
};

class RenderError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Deterministic for a given seed; 6 cuboids, or 8 with armrests.
ShapeSpec make_shape(std::uint64_t seed);

/// Orthographic render of the shape rotated to the view's azimuth (normalized into
/// [0, 360)) and tilted by its elevation. Faces are flat-shaded in the shape's tint
/// on a white background, with darkened edges. Returns a photo with view = azimuth.
/// Throws RenderError for a zero-extent shape, std::invalid_argument for img_size < 16.
ImageSample render_view(const ShapeSpec& shape, const ViewSpec& view, int img_size, ItemRef ref = {});

/// Edge map of a photo: foreground pixels on the darker side of a luminance step above the threshold.
std::vector<std::uint8_t> edge_map(const ImageSample& photo, double threshold = 0.08);

/// Synthetic sketch: edge strokes grouped into 4x4-pixel segments, each segment
/// shifted by Gaussian jitter (sigma jitter_px), dropout_frac of segments removed,
/// drawn black on white. Keeps instance_id/view/split and sets modality = sketch.
ImageSample sketchify(const ImageSample& photo, double jitter_px, double dropout_frac, std::uint64_t seed);

/// Number of non-white pixels.
std::size_t ink_pixels(const ImageSample& img);

}  // namespace freeview
