#include "freeview/datasets.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <random>
#include <set>

#include <json.hpp>

#include "freeview/image_io.hpp"
#include "freeview/synthgen.hpp"

namespace freeview {

namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream) {
  std::uint64_t z = base + 0x9E3779B97F4A7C15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

std::size_t DatasetManifest::count(Split split, Modality modality) const {
  std::size_t n = 0;
  for (const auto& inst : instances)
    if (inst.split == split)
      for (const auto& f : inst.files) n += f.modality == modality;
  return n;
}

void DatasetManifest::validate(bool check_files) const {
  if (img_size < 16) throw ManifestError("manifest " + name + ": img_size must be >= 16");
  for (int v : sketch_views)
    if (std::find(view_grid.begin(), view_grid.end(), v) == view_grid.end())
      throw ManifestError("manifest " + name + ": sketch view " + std::to_string(v) + " not in view_grid");
  std::set<std::uint32_t> ids;
  for (const auto& inst : instances) {
    if (!ids.insert(inst.instance_id).second)
      throw ManifestError("manifest " + name + ": duplicate instance " + std::to_string(inst.instance_id));
    for (const auto& f : inst.files) {
      if (f.view_deg < 0 || f.view_deg >= 360) throw ManifestError("manifest " + name + ": view out of range");
      if (check_files && !fs::exists(root / f.path)) throw ManifestError("manifest " + name + ": missing file " + f.path);
    }
  }
}

std::string manifest_to_json(const DatasetManifest& m) {
  ojson j;
  j["name"] = m.name;
  j["img_size"] = m.img_size;
  j["view_grid"] = m.view_grid;
  j["sketch_views"] = m.sketch_views;
  j["instances"] = ojson::array();
  for (const auto& inst : m.instances) {
    ojson ji;
    ji["instance_id"] = inst.instance_id;
    ji["split"] = std::string(to_string(inst.split));
    ji["files"] = ojson::array();
    for (const auto& f : inst.files)
      ji["files"].push_back({{"modality", std::string(to_string(f.modality))}, {"view_deg", f.view_deg}, {"path", f.path}});
    j["instances"].push_back(std::move(ji));
  }
  return j.dump(2) + "\n";
}

DatasetManifest manifest_from_json(const std::string& text, const fs::path& root) {
  DatasetManifest m;
  try {
    const auto j = ojson::parse(text);
    m.name = j.at("name").get<std::string>();
    m.img_size = j.at("img_size").get<int>();
    m.view_grid = j.at("view_grid").get<std::vector<int>>();
    m.sketch_views = j.at("sketch_views").get<std::vector<int>>();
    for (const auto& ji : j.at("instances")) {
      ManifestInstance inst;
      inst.instance_id = ji.at("instance_id").get<std::uint32_t>();
      inst.split = parse_split(ji.at("split").get<std::string>());
      for (const auto& jf : ji.at("files"))
        inst.files.push_back({parse_modality(jf.at("modality").get<std::string>()), jf.at("view_deg").get<int>(),
                              jf.at("path").get<std::string>()});
      m.instances.push_back(std::move(inst));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ManifestError(std::string("malformed manifest: ") + e.what());
  }
  m.root = root;
  return m;
}

void save_manifest(const DatasetManifest& m, const fs::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ManifestError("cannot write manifest " + path.string());
  out << manifest_to_json(m);
}

DatasetManifest load_manifest(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ManifestError("cannot read manifest " + path.string());
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  auto m = manifest_from_json(text, path.parent_path());
  m.validate(true);
  return m;
}

namespace {

std::vector<ImageSample> load_filtered(const DatasetManifest& m, const Split* split) {
  std::vector<ImageSample> out;
  for (const auto& inst : m.instances) {
    if (split && inst.split != *split) continue;
    for (const auto& f : inst.files) {
      const ItemRef ref{inst.instance_id, f.modality, ViewAngle::degrees(f.view_deg), inst.split};
      auto rgb = read_png(m.root / f.path);
      if (rgb.width != m.img_size || rgb.height != m.img_size) rgb = resize(rgb, m.img_size);
      out.push_back(from_rgb(rgb, ref));
    }
  }
  return out;
}

}  // namespace

std::vector<ImageSample> load_images(const DatasetManifest& m) { return load_filtered(m, nullptr); }
std::vector<ImageSample> load_images(const DatasetManifest& m, Split split) { return load_filtered(m, &split); }

std::string image_file_name(const ItemRef& ref) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "inst%05u_%s_v%03d.png", ref.instance_id, std::string(to_string(ref.modality)).c_str(),
                ref.view.deg());
  return buf;
}

void CorpusConfig::validate() const {
  if (n_train < 1 || n_test < 1) throw ConfigError("n_train and n_test must be >= 1");
  if (img_size < 16) throw ConfigError("img_size must be >= 16");
  if (view_grid.empty()) throw ConfigError("view_grid is empty");
  std::set<int> grid;
  for (int v : view_grid) {
    if (v < 0 || v >= 360) throw ConfigError("view " + std::to_string(v) + " outside [0, 360)");
    if (!grid.insert(v).second) throw ConfigError("duplicate view " + std::to_string(v));
  }
  if (sketch_views.empty()) throw ConfigError("sketch_views is empty");
  for (int v : sketch_views)
    if (!grid.count(v)) throw ConfigError("sketch view " + std::to_string(v) + " is not in view_grid");
  if (sketch_views.size() >= view_grid.size()) throw ConfigError("sketch_views must be a proper subset of view_grid");
  if (!(jitter_px >= 0.0)) throw ConfigError("jitter_px must be >= 0");
  if (!(dropout_frac >= 0.0 && dropout_frac < 1.0)) throw ConfigError("dropout_frac must lie in [0, 1)");
}

Corpora build_corpora(const CorpusConfig& cfg, const fs::path& out_dir) {
  cfg.validate();
  const fs::path image_dir = out_dir / "images";
  std::error_code ec;
  fs::create_directories(image_dir, ec);
  if (ec) throw ConfigError("cannot create " + image_dir.string() + ": " + ec.message());

  Corpora c;
  for (auto* m : {&c.dcm, &c.d2d}) {
    m->img_size = cfg.img_size;
    m->view_grid = cfg.view_grid;
    m->sketch_views = cfg.sketch_views;
    m->root = out_dir;
  }
  c.dcm.name = "dcm";
  c.d2d.name = "d2d";

  const std::set<int> sketch_set(cfg.sketch_views.begin(), cfg.sketch_views.end());
  auto emit = [&](const ImageSample& img) {
    const std::string rel = "images/" + image_file_name(img.ref);
    write_png(out_dir / rel, to_rgb(img));
    return ManifestFile{img.ref.modality, img.ref.view.deg(), rel};
  };

  const int total = cfg.n_train + cfg.n_test;
  for (int id = 0; id < total; ++id) {
    const auto uid = static_cast<std::uint32_t>(id);
    const Split split = id < cfg.n_train ? Split::train : Split::test;
    const std::uint64_t inst_seed = derive_seed(cfg.seed, uid);
    const ShapeSpec shape = make_shape(inst_seed);
    auto photo_at = [&](int view) {
      return render_view(shape, ViewSpec{view, 20}, cfg.img_size, ItemRef{uid, Modality::photo, {}, split});
    };
    auto sketch_of = [&](const ImageSample& photo) {
      return sketchify(photo, cfg.jitter_px, cfg.dropout_frac, derive_seed(inst_seed, 1000 + photo.ref.view.deg()));
    };

    if (split == Split::train) {
      std::mt19937_64 rng(derive_seed(inst_seed, 1));
      const int view = cfg.sketch_views[std::uniform_int_distribution<std::size_t>(0, cfg.sketch_views.size() - 1)(rng)];
      const ImageSample photo = photo_at(view);
      ManifestInstance dcm_inst{uid, split, {}};
      dcm_inst.files.push_back(emit(sketch_of(photo)));
      dcm_inst.files.push_back(emit(photo));
      c.dcm.instances.push_back(std::move(dcm_inst));

      ManifestInstance d2d_inst{uid, split, {}};
      for (int v : cfg.view_grid)
        if (!sketch_set.count(v)) d2d_inst.files.push_back(emit(photo_at(v)));
      c.d2d.instances.push_back(std::move(d2d_inst));
    } else {
      ManifestInstance d2d_inst{uid, split, {}};
      for (int v : cfg.view_grid) {
        const ImageSample photo = photo_at(v);
        d2d_inst.files.push_back(emit(photo));
        if (sketch_set.count(v)) d2d_inst.files.push_back(emit(sketch_of(photo)));
      }
      c.d2d.instances.push_back(std::move(d2d_inst));
    }
  }
  save_manifest(c.dcm, out_dir / "dcm.json");
  save_manifest(c.d2d, out_dir / "d2d.json");
  return c;
}

namespace {

void rgb_to_hsv(double r, double g, double b, double& h, double& s, double& v) {
  const double mx = std::max({r, g, b}), mn = std::min({r, g, b});
  const double delta = mx - mn;
  v = mx;
  s = mx > 0 ? delta / mx : 0.0;
  if (delta <= 0) {
    h = 0;
    return;
  }
  if (mx == r) h = (g - b) / delta;
  else if (mx == g) h = 2.0 + (b - r) / delta;
  else h = 4.0 + (r - g) / delta;
  h /= 6.0;
  if (h < 0) h += 1.0;
}

void hsv_to_rgb(double h, double s, double v, double& r, double& g, double& b) {
  h = h - std::floor(h);
  const double hh = h * 6.0;
  const int i = static_cast<int>(hh) % 6;
  const double f = hh - std::floor(hh);
  const double p = v * (1 - s), q = v * (1 - s * f), t = v * (1 - s * (1 - f));
  switch (i) {
    case 0: r = v, g = t, b = p; break;
    case 1: r = q, g = v, b = p; break;
    case 2: r = p, g = v, b = t; break;
    case 3: r = p, g = q, b = v; break;
    case 4: r = t, g = p, b = v; break;
    default: r = v, g = p, b = q; break;
  }
}

}  // namespace

ColorAugmentParams sample_color_params(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  ColorAugmentParams p;
  p.hue_shift = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
  p.sat_scale = std::uniform_real_distribution<double>(0.5, 1.5)(rng);
  p.val_scale = std::uniform_real_distribution<double>(0.8, 1.2)(rng);
  return p;
}

ImageSample color_augment(const ImageSample& img, const ColorAugmentParams& params) {
  if (img.ref.modality != Modality::photo) throw std::invalid_argument("color_augment expects a photo");
  if (params.is_identity()) return img;
  ImageSample out = img;
  const std::size_t plane = img.plane();
  constexpr float kNearWhite = 254.0f / 255.0f;
  for (std::size_t i = 0; i < plane; ++i) {
    const float r0 = img.pixels[i], g0 = img.pixels[plane + i], b0 = img.pixels[2 * plane + i];
    if (r0 >= 1.0f && g0 >= 1.0f && b0 >= 1.0f) continue;
    double h, s, v, r, g, b;
    rgb_to_hsv(r0, g0, b0, h, s, v);
    hsv_to_rgb(h + params.hue_shift, std::clamp(s * params.sat_scale, 0.0, 1.0), std::clamp(v * params.val_scale, 0.0, 1.0),
               r, g, b);
    float rf = static_cast<float>(r), gf = static_cast<float>(g), bf = static_cast<float>(b);
    // A foreground pixel must not turn into background.
    if (rf >= 1.0f && gf >= 1.0f && bf >= 1.0f) rf = gf = bf = kNearWhite;
    out.pixels[i] = rf;
    out.pixels[plane + i] = gf;
    out.pixels[2 * plane + i] = bf;
  }
  return out;
}

ImageSample color_augment(const ImageSample& img, std::uint64_t seed) {
  return color_augment(img, sample_color_params(seed));
}

namespace {

/// Picks `count` indices from [0, n): a permutation prefix while count <= n, uniform draws after that.
std::vector<std::size_t> pick_instances(std::size_t n, std::size_t count, std::mt19937_64& rng) {
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < count; ++i)
    out.push_back(i < n ? order[i] : std::uniform_int_distribution<std::size_t>(0, n - 1)(rng));
  return out;
}

}  // namespace

TripletBatch sample_triplets(std::span<const ImageSample> images, int batch, std::uint64_t seed,
                             bool match_negative_view) {
  if (batch < 1) throw SamplingError("batch must be >= 1");
  std::map<std::uint32_t, std::vector<const ImageSample*>> sketches, photos;
  for (const auto& img : images) (img.ref.modality == Modality::sketch ? sketches : photos)[img.ref.instance_id].push_back(&img);
  std::vector<std::uint32_t> anchor_ids, photo_ids;
  for (const auto& [id, _] : sketches) anchor_ids.push_back(id);
  for (const auto& [id, _] : photos) photo_ids.push_back(id);
  if (anchor_ids.size() < 2 || photo_ids.size() < 2) throw SamplingError("triplet sampling needs at least 2 instances");

  std::mt19937_64 rng(seed);
  TripletBatch out;
  for (std::size_t pick : pick_instances(anchor_ids.size(), static_cast<std::size_t>(batch), rng)) {
    const std::uint32_t id = anchor_ids[pick];
    const auto& cand = sketches[id];
    const ImageSample* anchor = cand[std::uniform_int_distribution<std::size_t>(0, cand.size() - 1)(rng)];
    const ImageSample* positive = nullptr;
    for (const auto* p : photos[id])
      if (p->ref.view == anchor->ref.view) positive = p;
    if (!positive) throw SamplingError("no same-view photo for sketch " + describe(anchor->ref));

    const auto has_view = [&](std::uint32_t pid) {
      return std::any_of(photos[pid].begin(), photos[pid].end(), [&](const auto* p) { return p->ref.view == anchor->ref.view; });
    };
    std::vector<std::uint32_t> others, same_view;
    for (auto pid : photo_ids) {
      if (pid == id) continue;
      others.push_back(pid);
      if (match_negative_view && has_view(pid)) same_view.push_back(pid);
    }
    if (!same_view.empty()) others = same_view;
    std::vector<const ImageSample*> neg_pool = photos[others[std::uniform_int_distribution<std::size_t>(0, others.size() - 1)(rng)]];
    if (!same_view.empty())
      std::erase_if(neg_pool, [&](const auto* p) { return p->ref.view != anchor->ref.view; });
    const ImageSample* negative = neg_pool[std::uniform_int_distribution<std::size_t>(0, neg_pool.size() - 1)(rng)];
    out.anchors.push_back(*anchor);
    out.positives.push_back(*positive);
    out.negatives.push_back(*negative);
  }
  return out;
}

ViewPairBatch sample_view_pairs(std::span<const ImageSample> images, int batch, int pairs_per_instance,
                                std::uint64_t seed) {
  if (batch < 1 || pairs_per_instance < 1) throw SamplingError("batch and pairs_per_instance must be >= 1");
  std::map<std::uint32_t, std::vector<const ImageSample*>> by_instance;
  for (const auto& img : images)
    if (img.ref.modality == Modality::photo) by_instance[img.ref.instance_id].push_back(&img);

  ViewPairBatch out;
  std::vector<std::uint32_t> usable;
  for (const auto& [id, views] : by_instance) {
    std::set<ViewAngle> distinct;
    for (const auto* v : views) distinct.insert(v->ref.view);
    if (distinct.size() < 2) out.skipped_instances.push_back(id);
    else usable.push_back(id);
  }
  if (usable.empty()) throw SamplingError("no instance has two or more views");

  std::mt19937_64 rng(seed);
  for (std::size_t pick : pick_instances(usable.size(), static_cast<std::size_t>(batch), rng)) {
    const auto& views = by_instance[usable[pick]];
    std::vector<std::pair<std::size_t, std::size_t>> all;
    for (std::size_t a = 0; a < views.size(); ++a)
      for (std::size_t b = a + 1; b < views.size(); ++b)
        if (views[a]->ref.view != views[b]->ref.view) all.emplace_back(a, b);
    std::shuffle(all.begin(), all.end(), rng);
    const std::size_t take = std::min(all.size(), static_cast<std::size_t>(pairs_per_instance));
    for (std::size_t i = 0; i < take; ++i) {
      auto [a, b] = all[i];
      if (std::bernoulli_distribution(0.5)(rng)) std::swap(a, b);
      out.pairs.emplace_back(*views[a], *views[b]);
    }
  }
  return out;
}

}  // namespace freeview
