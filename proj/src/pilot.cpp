#include "freeview/pilot.hpp"

#include <algorithm>
#include <set>
#include <stdexcept>

#include <json.hpp>

#include "freeview/metrics.hpp"
#include "freeview/retrieval.hpp"

namespace freeview {

std::vector<ImageSample> pilot_gallery(std::span<const ImageSample> photos, std::span<const int> sketch_views) {
  std::vector<ImageSample> out;
  for (const auto& p : photos) {
    if (p.ref.modality != Modality::photo) continue;
    if (std::find(sketch_views.begin(), sketch_views.end(), p.ref.view.raw()) == sketch_views.end()) out.push_back(p);
  }
  return out;
}

PilotReport run_pilot_single(const std::string& name, const ImageEncoder& encoder, std::span<const ImageSample> test_images,
                             std::span<const int> sketch_views) {
  std::vector<ImageSample> photos, sketches;
  for (const auto& img : test_images) (img.ref.modality == Modality::photo ? photos : sketches).push_back(img);
  if (photos.empty() || sketches.empty()) throw std::invalid_argument("run_pilot: test set needs photos and sketches");
  const auto reduced = pilot_gallery(photos, sketch_views);

  std::set<std::uint32_t> covered;
  for (const auto& p : reduced) covered.insert(p.ref.instance_id);
  for (const auto& s : sketches)
    if (!covered.count(s.ref.instance_id))
      throw std::invalid_argument("run_pilot: pilot gallery has no photo of instance " + std::to_string(s.ref.instance_id));

  // Photos are encoded once; the pilot index reuses the full gallery's embeddings.
  const GalleryIndex full = build_index(encoder, photos);
  GalleryIndex pilot(full.dim());
  for (const auto& e : full.entries())
    if (std::find(sketch_views.begin(), sketch_views.end(), e.ref.view.raw()) == sketch_views.end())
      pilot.append(e.ref, e.embedding);
  pilot.freeze();

  const auto emb = encoder.encode(sketches);
  std::vector<RankedResult> existing_results, pilot_results;
  for (std::size_t i = 0; i < sketches.size(); ++i) {
    existing_results.push_back(rank(full, sketches[i].ref, emb[i], RetrievalMode::view_agnostic, 1));
    pilot_results.push_back(rank(pilot, sketches[i].ref, emb[i], RetrievalMode::view_agnostic, 1));
  }
  PilotReport r;
  r.model_name = name;
  r.acc1_existing = instance_acc_at_1(existing_results);
  r.acc1_pilot = instance_acc_at_1(pilot_results);
  r.drop = r.acc1_existing - r.acc1_pilot;
  r.instance_acc1_pilot = r.acc1_pilot;
  r.existing_gallery_size = full.size();
  r.pilot_gallery_size = pilot.size();
  return r;
}

std::pair<PilotReport, PilotReport> run_pilot(const ImageEncoder& baseline, const ImageEncoder& viewaware,
                                              std::span<const ImageSample> test_images,
                                              std::span<const int> sketch_views) {
  return {run_pilot_single("baseline", baseline, test_images, sketch_views),
          run_pilot_single("viewaware", viewaware, test_images, sketch_views)};
}

std::string to_json(const std::pair<PilotReport, PilotReport>& reports) {
  using ojson = nlohmann::ordered_json;
  ojson arr = ojson::array();
  for (const auto* r : {&reports.first, &reports.second})
    arr.push_back({{"model_name", r->model_name},
                   {"acc1_existing", r->acc1_existing},
                   {"acc1_pilot", r->acc1_pilot},
                   {"drop", r->drop},
                   {"instance_acc1_pilot", r->instance_acc1_pilot},
                   {"existing_gallery_size", r->existing_gallery_size},
                   {"pilot_gallery_size", r->pilot_gallery_size}});
  return ojson{{"reports", arr}}.dump(2) + "\n";
}

}  // namespace freeview
