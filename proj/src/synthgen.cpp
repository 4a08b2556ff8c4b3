#include "freeview/synthgen.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <random>

namespace freeview {
namespace {

struct SinCos {
  double s, c;
};

// Exact values on quadrant angles so that mirrored views stay bit-exact mirrors.
SinCos sincos_deg(int deg) {
  switch (((deg % 360) + 360) % 360) {
    case 0: return {0.0, 1.0};
    case 90: return {1.0, 0.0};
    case 180: return {0.0, -1.0};
    case 270: return {-1.0, 0.0};
    default: {
      const double r = deg * std::numbers::pi / 180.0;
      return {std::sin(r), std::cos(r)};
    }
  }
}

std::array<double, 3> hsv_to_rgb(double h, double s, double v) {
  const double hh = std::fmod(h, 1.0) * 6.0;
  const int i = static_cast<int>(std::floor(hh));
  const double f = hh - i;
  const double p = v * (1 - s), q = v * (1 - s * f), t = v * (1 - s * (1 - f));
  switch (i % 6) {
    case 0: return {v, t, p};
    case 1: return {q, v, p};
    case 2: return {p, v, t};
    case 3: return {p, q, v};
    case 4: return {t, p, v};
    default: return {v, p, q};
  }
}

struct Projected {
  double u, v, depth;
};

double edge_fn(const Projected& a, const Projected& b, double px, double py) {
  return (px - a.u) * (b.v - a.v) - (py - a.v) * (b.u - a.u);
}

double dist_to_segment(const Projected& a, const Projected& b, double px, double py) {
  const double dx = b.u - a.u, dy = b.v - a.v;
  const double len2 = dx * dx + dy * dy;
  double t = len2 > 0 ? ((px - a.u) * dx + (py - a.v) * dy) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  const double ex = a.u + t * dx - px, ey = a.v + t * dy - py;
  return std::sqrt(ex * ex + ey * ey);
}

// Corner ordering of the six faces of a cuboid, as indices into its 8 corners
// (bit 0 = +x, bit 1 = +y, bit 2 = +z). Each list walks the face boundary.
constexpr int kFaces[6][4] = {
    {0, 2, 6, 4},  // -x
    {1, 3, 7, 5},  // +x
    {0, 1, 5, 4},  // -y
    {2, 3, 7, 6},  // +y
    {0, 1, 3, 2},  // -z
    {4, 5, 7, 6},  // +z
};
constexpr int kFaceAxis[6] = {0, 0, 1, 1, 2, 2};
constexpr double kFaceSign[6] = {-1, 1, -1, 1, -1, 1};

}  // namespace

ShapeSpec make_shape(std::uint64_t seed) {
  std::mt19937_64 rng(seed * 0x9E3779B97F4A7C15ULL + 0x2545F4914F6CDD1DULL);
  auto uni = [&](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); };

  ShapeSpec s;
  s.shape_id = static_cast<std::int64_t>(seed);
  const double width = uni(0.8, 1.3);
  const double depth = uni(0.7, 1.2);
  const double seat_t = uni(0.08, 0.2);
  const double height = uni(0.55, 1.1);
  const double leg_t = uni(0.06, 0.16);
  const double inset = uni(0.0, 0.12);
  const double back_h = uni(0.5, 1.3);
  const double back_t = uni(0.06, 0.18);
  const double back_w = width * uni(0.6, 1.0);
  const bool arms = uni(0.0, 1.0) < 0.5;

  const double lx = width / 2 - leg_t / 2 - inset;
  const double lz = depth / 2 - leg_t / 2 - inset;
  for (double sx : {-1.0, 1.0})
    for (double sz : {-1.0, 1.0}) s.cuboids.push_back({{sx * lx, height / 2, sz * lz}, {leg_t, height, leg_t}});
  s.cuboids.push_back({{0.0, height + seat_t / 2, 0.0}, {width, seat_t, depth}});
  s.cuboids.push_back({{0.0, height + seat_t + back_h / 2, -depth / 2 + back_t / 2}, {back_w, back_h, back_t}});
  if (arms) {
    const double arm_t = uni(0.05, 0.12);
    const double arm_h = uni(0.15, 0.35);
    const double arm_d = depth * uni(0.6, 0.95);
    for (double sx : {-1.0, 1.0})
      s.cuboids.push_back({{sx * (width / 2 - arm_t / 2), height + seat_t + arm_h, -depth / 2 + arm_d / 2},
                           {arm_t, arm_t, arm_d}});
  }
  s.tint = hsv_to_rgb(uni(0.0, 1.0), uni(0.35, 0.9), uni(0.55, 0.95));
  return s;
}

ImageSample render_view(const ShapeSpec& shape, const ViewSpec& view, int img_size, ItemRef ref) {
  if (img_size < 16) throw std::invalid_argument("render_view: img_size must be >= 16");
  const ViewAngle az = ViewAngle::degrees(view.azimuth_deg);
  ref.modality = Modality::photo;
  ref.view = az;
  ImageSample img(ref, img_size);
  std::fill(img.pixels.begin(), img.pixels.end(), 1.0f);

  // Bounding box center and radius are rotation invariant, so every view shares one scale.
  Vec3 lo{std::numeric_limits<double>::max(), std::numeric_limits<double>::max(), std::numeric_limits<double>::max()};
  Vec3 hi{-lo[0], -lo[1], -lo[2]};
  for (const auto& c : shape.cuboids)
    for (int k = 0; k < 3; ++k) {
      lo[k] = std::min(lo[k], c.center[k] - c.size[k] / 2);
      hi[k] = std::max(hi[k], c.center[k] + c.size[k] / 2);
    }
  if (shape.cuboids.empty()) throw RenderError("render_view: shape has no cuboids");
  const Vec3 mid{(lo[0] + hi[0]) / 2, (lo[1] + hi[1]) / 2, (lo[2] + hi[2]) / 2};
  double radius = 0.0;
  for (const auto& c : shape.cuboids)
    for (int corner = 0; corner < 8; ++corner) {
      double r2 = 0;
      for (int k = 0; k < 3; ++k) {
        const double p = c.center[k] + ((corner >> k) & 1 ? 0.5 : -0.5) * c.size[k] - mid[k];
        r2 += p * p;
      }
      radius = std::max(radius, std::sqrt(r2));
    }
  if (!(radius > 0.0)) throw RenderError("render_view: zero-extent projection");

  const SinCos a = sincos_deg(az.deg());
  const SinCos e = sincos_deg(view.elevation_deg);
  const double scale = 0.45 * img_size / radius;
  const double center = img_size / 2.0;
  const auto to_camera = [&](const Vec3& p) -> Vec3 {
    const double x = p[0] - mid[0], y = p[1] - mid[1], z = p[2] - mid[2];
    const double xr = a.c * x + a.s * z;
    const double zr = -a.s * x + a.c * z;
    return {xr, e.c * y - e.s * zr, e.s * y + e.c * zr};
  };
  // Light direction in camera space: from above and in front, left-right symmetric.
  constexpr double kLight[3] = {0.0, 0.6, 0.8};

  std::vector<double> zbuf(static_cast<std::size_t>(img_size) * img_size, -std::numeric_limits<double>::infinity());
  for (const auto& c : shape.cuboids) {
    Projected corners[8];
    for (int corner = 0; corner < 8; ++corner) {
      Vec3 p;
      for (int k = 0; k < 3; ++k) p[k] = c.center[k] + ((corner >> k) & 1 ? 0.5 : -0.5) * c.size[k];
      const Vec3 q = to_camera(p);
      corners[corner] = {center + scale * q[0], center - scale * q[1], q[2]};
    }
    for (int f = 0; f < 6; ++f) {
      Vec3 n{0, 0, 0};
      n[kFaceAxis[f]] = kFaceSign[f];
      const Vec3 nc = to_camera(Vec3{mid[0] + n[0], mid[1] + n[1], mid[2] + n[2]});
      double shade_dot = nc[0] * kLight[0] + nc[1] * kLight[1] + nc[2] * kLight[2];
      if (nc[2] < 0) shade_dot = -shade_dot;
      const double shade = 0.45 + 0.55 * std::max(0.0, shade_dot);
      const Projected quad[4] = {corners[kFaces[f][0]], corners[kFaces[f][1]], corners[kFaces[f][2]],
                                 corners[kFaces[f][3]]};
      double umin = quad[0].u, umax = quad[0].u, vmin = quad[0].v, vmax = quad[0].v;
      for (const auto& p : quad) {
        umin = std::min(umin, p.u); umax = std::max(umax, p.u);
        vmin = std::min(vmin, p.v); vmax = std::max(vmax, p.v);
      }
      const int x0 = std::max(0, static_cast<int>(std::floor(umin - 1))), x1 = std::min(img_size - 1, static_cast<int>(std::ceil(umax + 1)));
      const int y0 = std::max(0, static_cast<int>(std::floor(vmin - 1))), y1 = std::min(img_size - 1, static_cast<int>(std::ceil(vmax + 1)));
      for (int tri = 0; tri < 2; ++tri) {
        const Projected& p0 = quad[0];
        const Projected& p1 = quad[tri + 1];
        const Projected& p2 = quad[tri + 2];
        const double area = edge_fn(p0, p1, p2.u, p2.v);
        if (area == 0.0) continue;
        for (int y = y0; y <= y1; ++y)
          for (int x = x0; x <= x1; ++x) {
            const double px = x + 0.5, py = y + 0.5;
            const double w0 = edge_fn(p1, p2, px, py);
            const double w1 = edge_fn(p2, p0, px, py);
            const double w2 = edge_fn(p0, p1, px, py);
            const bool inside = (w0 >= 0 && w1 >= 0 && w2 >= 0) || (w0 <= 0 && w1 <= 0 && w2 <= 0);
            if (!inside) continue;
            const double depth = (w0 * p0.depth + w1 * p1.depth + w2 * p2.depth) / area;
            const std::size_t idx = static_cast<std::size_t>(y) * img_size + x;
            if (!(depth > zbuf[idx])) continue;
            zbuf[idx] = depth;
            double edge_dist = std::numeric_limits<double>::max();
            for (int k = 0; k < 4; ++k) edge_dist = std::min(edge_dist, dist_to_segment(quad[k], quad[(k + 1) % 4], px, py));
            const double tone = shade * (edge_dist < 0.6 ? 0.35 : 1.0);
            for (int ch = 0; ch < 3; ++ch) img.at(ch, y, x) = static_cast<float>(shape.tint[ch] * tone);
          }
      }
    }
  }
  return img;
}

namespace {

double luminance(const ImageSample& img, int y, int x) {
  return 0.299 * img.at(0, y, x) + 0.587 * img.at(1, y, x) + 0.114 * img.at(2, y, x);
}

}  // namespace

std::vector<std::uint8_t> edge_map(const ImageSample& photo, double threshold) {
  const int n = photo.size;
  std::vector<std::uint8_t> edges(static_cast<std::size_t>(n) * n, 0);
  constexpr int dx[4] = {1, -1, 0, 0};
  constexpr int dy[4] = {0, 0, 1, -1};
  for (int y = 0; y < n; ++y)
    for (int x = 0; x < n; ++x) {
      const double l = luminance(photo, y, x);
      bool edge = false;
      for (int k = 0; k < 4 && !edge; ++k) {
        const int yy = y + dy[k], xx = x + dx[k];
        // Off-canvas neighbours read as background.
        const double ln = (yy < 0 || yy >= n || xx < 0 || xx >= n) ? 1.0 : luminance(photo, yy, xx);
        edge = ln - l > threshold;
      }
      edges[static_cast<std::size_t>(y) * n + x] = edge ? 1 : 0;
    }
  return edges;
}

ImageSample sketchify(const ImageSample& photo, double jitter_px, double dropout_frac, std::uint64_t seed) {
  if (photo.ref.modality != Modality::photo) throw std::invalid_argument("sketchify expects a photo");
  if (!(dropout_frac >= 0.0 && dropout_frac < 1.0)) throw std::invalid_argument("dropout_frac must lie in [0, 1)");
  constexpr int kTile = 4;
  const int n = photo.size;
  const auto edges = edge_map(photo);

  // Segments: edge pixels bucketed by 4x4 tile, in row-major tile order.
  const int tiles_per_row = (n + kTile - 1) / kTile;
  std::vector<std::vector<std::pair<int, int>>> segments(static_cast<std::size_t>(tiles_per_row) * tiles_per_row);
  for (int y = 0; y < n; ++y)
    for (int x = 0; x < n; ++x)
      if (edges[static_cast<std::size_t>(y) * n + x]) segments[(y / kTile) * tiles_per_row + x / kTile].emplace_back(x, y);
  std::erase_if(segments, [](const auto& s) { return s.empty(); });

  std::mt19937_64 rng(seed);
  std::vector<std::size_t> order(segments.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::shuffle(order.begin(), order.end(), rng);
  const auto drop = static_cast<std::size_t>(std::llround(dropout_frac * static_cast<double>(segments.size())));
  std::vector<bool> keep(segments.size(), true);
  for (std::size_t i = 0; i < drop; ++i) keep[order[i]] = false;

  ItemRef ref = photo.ref;
  ref.modality = Modality::sketch;
  ImageSample out(ref, n);
  std::fill(out.pixels.begin(), out.pixels.end(), 1.0f);
  std::normal_distribution<double> jitter(0.0, 1.0);
  for (std::size_t s = 0; s < segments.size(); ++s) {
    const double ox = jitter_px * jitter(rng);
    const double oy = jitter_px * jitter(rng);
    if (!keep[s]) continue;
    const int sx = static_cast<int>(std::lround(ox));
    const int sy = static_cast<int>(std::lround(oy));
    for (const auto& [x, y] : segments[s]) {
      const int xx = x + sx, yy = y + sy;
      if (xx < 0 || xx >= n || yy < 0 || yy >= n) continue;
      for (int c = 0; c < 3; ++c) out.at(c, yy, xx) = 0.0f;
    }
  }
  return out;
}

std::size_t ink_pixels(const ImageSample& img) {
  std::size_t count = 0;
  for (int y = 0; y < img.size; ++y)
    for (int x = 0; x < img.size; ++x)
      if (img.at(0, y, x) < 1.0f || img.at(1, y, x) < 1.0f || img.at(2, y, x) < 1.0f) ++count;
  return count;
}

}  // namespace freeview
