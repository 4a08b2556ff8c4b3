#include <doctest.h>

#include <cmath>
#include <fstream>
#include <map>
#include <set>

#include "freeview/datasets.hpp"
#include "freeview/image_io.hpp"
#include "freeview/synthgen.hpp"
#include "support.hpp"

using namespace freeview;

namespace {

ImageSample tiny(std::uint32_t id, Modality m, int view) {
  ImageSample img(ItemRef{id, m, ViewAngle::degrees(view), Split::train}, 4);
  std::fill(img.pixels.begin(), img.pixels.end(), 0.5f);
  img.pixels[0] = static_cast<float>(id % 10) / 10.0f;
  return img;
}

std::vector<ImageSample> dcm_pool(int n) {
  std::vector<ImageSample> out;
  for (int i = 0; i < n; ++i) {
    const int view = (i % 3) * 30;
    out.push_back(tiny(static_cast<std::uint32_t>(i), Modality::sketch, view));
    out.push_back(tiny(static_cast<std::uint32_t>(i), Modality::photo, view));
  }
  return out;
}

std::vector<ImageSample> d2d_pool(int n, int views) {
  std::vector<ImageSample> out;
  for (int i = 0; i < n; ++i)
    for (int v = 0; v < views; ++v) out.push_back(tiny(static_cast<std::uint32_t>(i), Modality::photo, v * 40));
  return out;
}

std::vector<std::uint8_t> file_bytes(const std::filesystem::path& p) {
  std::ifstream is(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(is), {}};
}

}  // namespace

TEST_SUITE("datasets") {

TEST_CASE("derive_seed separates streams") {
  CHECK(derive_seed(1, 2) == derive_seed(1, 2));
  CHECK(derive_seed(1, 2) != derive_seed(1, 3));
  CHECK(derive_seed(1, 2) != derive_seed(2, 2));
}

TEST_CASE("corpus counts and the view-exclusion rule") {
  testsupport::TempDir dir("corpus");
  CorpusConfig cfg;
  cfg.n_train = 5;
  cfg.n_test = 3;
  cfg.img_size = 32;
  const auto c = build_corpora(cfg, dir.path());
  const std::set<int> sketch_views(cfg.sketch_views.begin(), cfg.sketch_views.end());

  CHECK(c.dcm.count(Split::train, Modality::sketch) == 5);
  CHECK(c.dcm.count(Split::train, Modality::photo) == 5);
  CHECK(c.d2d.count(Split::train, Modality::photo) == 5 * 6);
  CHECK(c.d2d.count(Split::train, Modality::sketch) == 0);
  CHECK(c.d2d.count(Split::test, Modality::photo) == 3 * 9);
  CHECK(c.d2d.count(Split::test, Modality::sketch) == 3 * 3);

  for (const auto& inst : c.dcm.instances) {
    CHECK(inst.instance_id < 5);
    REQUIRE(inst.files.size() == 2);
    CHECK(inst.files[0].view_deg == inst.files[1].view_deg);
    CHECK(sketch_views.count(inst.files[0].view_deg) == 1);
  }
  for (const auto& inst : c.d2d.instances) {
    if (inst.split != Split::train) {
      CHECK(inst.instance_id >= 5);
      continue;
    }
    for (const auto& f : inst.files) CHECK(sketch_views.count(f.view_deg) == 0);
  }
  CHECK_NOTHROW(c.dcm.validate(true));
}

TEST_CASE("manifests round-trip and load the written images") {
  testsupport::TempDir dir("manifest");
  CorpusConfig cfg;
  cfg.n_train = 3;
  cfg.n_test = 2;
  cfg.img_size = 32;
  const auto c = build_corpora(cfg, dir.path());
  const auto dcm = load_manifest(dir.path() / "dcm.json");
  const auto d2d = load_manifest(dir.path() / "d2d.json");
  CHECK(dcm == c.dcm);
  CHECK(d2d == c.d2d);
  CHECK(manifest_from_json(manifest_to_json(d2d)) == d2d);

  const auto test = load_images(d2d, Split::test);
  CHECK(test.size() == 2 * 9 + 2 * 3);
  const auto train = load_images(dcm);
  REQUIRE(train.size() == 6);
  CHECK(train[0].ref.modality == Modality::sketch);
  CHECK(train[0].size == 32);

  // Pixels survive the PNG round-trip to 8-bit precision.
  const auto shape = make_shape(derive_seed(cfg.seed, train[1].ref.instance_id));
  const auto rendered = render_view(shape, {train[1].ref.view.deg(), 20}, 32);
  for (std::size_t i = 0; i < rendered.pixels.size(); ++i)
    REQUIRE(std::abs(rendered.pixels[i] - train[1].pixels[i]) <= 0.5f / 255.0f + 1e-6f);

  std::filesystem::remove(dir.path() / dcm.instances[0].files[0].path);
  CHECK_THROWS_AS(load_manifest(dir.path() / "dcm.json"), ManifestError);
}

TEST_CASE("corpus generation is byte-deterministic") {
  testsupport::TempDir a("det_a"), b("det_b");
  CorpusConfig cfg;
  cfg.n_train = 2;
  cfg.n_test = 1;
  cfg.img_size = 32;
  cfg.seed = 9;
  build_corpora(cfg, a.path());
  build_corpora(cfg, b.path());
  for (const auto& entry : std::filesystem::recursive_directory_iterator(a.path())) {
    if (!entry.is_regular_file()) continue;
    const auto rel = std::filesystem::relative(entry.path(), a.path());
    CAPTURE(rel.string());
    CHECK(file_bytes(entry.path()) == file_bytes(b.path() / rel));
  }
}

TEST_CASE("invalid corpus configs are rejected") {
  CorpusConfig cfg;
  cfg.sketch_views = {0, 45};
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = CorpusConfig{};
  cfg.view_grid = {0, 30, 30};
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = CorpusConfig{};
  cfg.dropout_frac = 1.0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = CorpusConfig{};
  cfg.n_train = 0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = CorpusConfig{};
  cfg.sketch_views = cfg.view_grid;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("color augmentation keeps the background and the foreground mask") {
  const auto photo = render_view(make_shape(3), {30, 20}, 64);
  CHECK(color_augment(photo, ColorAugmentParams{}).pixels == photo.pixels);
  const std::size_t plane = photo.plane();
  const auto white = [&](const ImageSample& img, std::size_t i) {
    return img.pixels[i] == 1.0f && img.pixels[plane + i] == 1.0f && img.pixels[2 * plane + i] == 1.0f;
  };
  int changed = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto aug = color_augment(photo, seed);
    CHECK_NOTHROW(aug.validate());
    for (std::size_t i = 0; i < plane; ++i) REQUIRE(white(photo, i) == white(aug, i));
    changed += aug.pixels != photo.pixels;
  }
  CHECK(changed == 20);
  ImageSample sketch = photo;
  sketch.ref.modality = Modality::sketch;
  CHECK_THROWS_AS(color_augment(sketch, 1), std::invalid_argument);
}

TEST_CASE("color augmentation parameters stay in range and average near identity") {
  double hue = 0, sat = 0, val = 0;
  const int n = 2000;
  for (int i = 0; i < n; ++i) {
    const auto p = sample_color_params(static_cast<std::uint64_t>(i));
    REQUIRE(p.hue_shift >= 0.0);
    REQUIRE(p.hue_shift < 1.0);
    REQUIRE(p.sat_scale >= 0.5);
    REQUIRE(p.sat_scale <= 1.5);
    REQUIRE(p.val_scale >= 0.8);
    REQUIRE(p.val_scale <= 1.2);
    hue += p.hue_shift;
    sat += p.sat_scale;
    val += p.val_scale;
  }
  CHECK(hue / n == doctest::Approx(0.5).epsilon(0.05));
  CHECK(sat / n == doctest::Approx(1.0).epsilon(0.03));
  CHECK(val / n == doctest::Approx(1.0).epsilon(0.01));
}

TEST_CASE("triplets pair a sketch with its same-view photo and another instance") {
  const auto pool = dcm_pool(10);
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const auto t = sample_triplets(pool, 16, seed);
    REQUIRE(t.size() == 16);
    std::set<std::uint32_t> first_ten;
    for (std::size_t i = 0; i < t.size(); ++i) {
      CHECK(t.anchors[i].ref.modality == Modality::sketch);
      CHECK(t.positives[i].ref.modality == Modality::photo);
      CHECK(t.negatives[i].ref.modality == Modality::photo);
      CHECK(t.positives[i].ref.instance_id == t.anchors[i].ref.instance_id);
      CHECK(t.positives[i].ref.view == t.anchors[i].ref.view);
      CHECK(t.negatives[i].ref.instance_id != t.anchors[i].ref.instance_id);
      if (i < 10) first_ten.insert(t.anchors[i].ref.instance_id);
    }
    CHECK(first_ten.size() == 10);
  }
  const auto a = sample_triplets(pool, 8, 3);
  const auto b = sample_triplets(pool, 8, 3);
  for (std::size_t i = 0; i < 8; ++i) {
    CHECK(a.anchors[i].ref == b.anchors[i].ref);
    CHECK(a.negatives[i].ref == b.negatives[i].ref);
  }
}

TEST_CASE("negative instances are uniform over the other instances") {
  const auto pool = dcm_pool(10);
  std::map<std::uint32_t, int> counts;
  int total = 0;
  for (std::uint64_t seed = 0; seed < 1000; ++seed) {
    const auto t = sample_triplets(pool, 10, seed);
    for (std::size_t i = 0; i < t.size(); ++i) {
      // Each anchor appears once per batch, so every instance has 9 equally likely negatives.
      ++counts[t.negatives[i].ref.instance_id];
      ++total;
    }
  }
  double chi2 = 0;
  const double expected = total / 10.0;
  for (const auto& [id, c] : counts) chi2 += (c - expected) * (c - expected) / expected;
  CHECK(counts.size() == 10);
  // 99.9th percentile of chi-square with 9 degrees of freedom.
  CHECK(chi2 < 27.88);
}

TEST_CASE("view-matched negatives come from other instances at the anchor's view") {
  // dcm_pool gives instance i a single pair at view (i % 3) * 30.
  const auto pool = dcm_pool(10);
  int mixed_views = 0;
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const auto plain = sample_triplets(pool, 16, seed);
    const auto matched = sample_triplets(pool, 16, seed, true);
    for (std::size_t i = 0; i < matched.size(); ++i) {
      CHECK(matched.anchors[i].ref == plain.anchors[i].ref);
      CHECK(matched.negatives[i].ref.instance_id != matched.anchors[i].ref.instance_id);
      CHECK(matched.negatives[i].ref.view == matched.anchors[i].ref.view);
      mixed_views += plain.negatives[i].ref.view != plain.anchors[i].ref.view;
    }
  }
  CHECK(mixed_views > 0);

  // Views 30 and 60 belong to one instance each here, so their anchors fall back to any other instance.
  const auto small = dcm_pool(4);
  std::set<std::uint32_t> fallback_negatives;
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const auto t = sample_triplets(small, 4, seed, true);
    for (std::size_t i = 0; i < t.size(); ++i) {
      CHECK(t.negatives[i].ref.instance_id != t.anchors[i].ref.instance_id);
      if (t.anchors[i].ref.instance_id == 1) fallback_negatives.insert(t.negatives[i].ref.instance_id);
      if (t.anchors[i].ref.instance_id == 0) CHECK(t.negatives[i].ref.instance_id == 3);
    }
  }
  CHECK(fallback_negatives == std::set<std::uint32_t>{0, 2, 3});
}

TEST_CASE("triplet sampling needs two instances") {
  CHECK_THROWS_AS(sample_triplets(dcm_pool(1), 4, 0), SamplingError);
  CHECK_THROWS_AS(sample_triplets(dcm_pool(3), 0, 0), SamplingError);
}

TEST_CASE("view pairs are distinct views of one instance, clamped to all pairs") {
  const auto pool = d2d_pool(4, 6);
  const auto batch = sample_view_pairs(pool, 4, 100, 7);
  CHECK(batch.pairs.size() == 4 * 15);
  std::map<std::uint32_t, std::set<std::pair<int, int>>> seen;
  bool swapped = false;
  for (const auto& [a, b] : batch.pairs) {
    CHECK(a.ref.instance_id == b.ref.instance_id);
    CHECK(a.ref.view != b.ref.view);
    swapped |= a.ref.view > b.ref.view;
    const int lo = std::min(a.ref.view.deg(), b.ref.view.deg()), hi = std::max(a.ref.view.deg(), b.ref.view.deg());
    CHECK(seen[a.ref.instance_id].insert({lo, hi}).second);
  }
  CHECK(swapped);
  CHECK(sample_view_pairs(pool, 3, 2, 7).pairs.size() == 6);
}

TEST_CASE("instances with fewer than two views are skipped") {
  auto pool = d2d_pool(3, 4);
  pool.push_back(tiny(99, Modality::photo, 0));
  const auto batch = sample_view_pairs(pool, 8, 1, 1);
  CHECK(batch.skipped_instances == std::vector<std::uint32_t>{99});
  for (const auto& [a, b] : batch.pairs) CHECK(a.ref.instance_id != 99);
  CHECK_THROWS_AS(sample_view_pairs(d2d_pool(3, 1), 2, 1, 1), SamplingError);
}

TEST_CASE("image file names") {
  CHECK(image_file_name(ItemRef{7, Modality::sketch, ViewAngle::degrees(30), Split::train}) == "inst00007_sketch_v030.png");
  CHECK(image_file_name(ItemRef{12345, Modality::photo, ViewAngle::degrees(315), Split::test}) == "inst12345_photo_v315.png");
}

}
