#pragma once

#include <span>
#include <string>
#include <utility>
#include <vector>

#include "freeview/datamodel.hpp"
#include "freeview/model.hpp"

namespace freeview {

struct PilotReport {
  std::string model_name;
  double acc1_existing = 0;  ///< instance-level Acc@1, gallery with every view
  double acc1_pilot = 0;     ///< instance-level Acc@1, sketch-view photos removed
  double drop = 0;           ///< acc1_existing - acc1_pilot
  double instance_acc1_pilot = 0;
  std::size_t existing_gallery_size = 0;
  std::size_t pilot_gallery_size = 0;
};

/// Photos whose view is not one of the sketch views.
std::vector<ImageSample> pilot_gallery(std::span<const ImageSample> photos, std::span<const int> sketch_views);

/// Instance-level Acc@1 of one model on the full and the pilot gallery, ranked by f_c.
PilotReport run_pilot_single(const std::string& name, const ImageEncoder& encoder, std::span<const ImageSample> test_images,
                             std::span<const int> sketch_views);

/// Reports for (baseline, view-aware). test_images holds the test photos and sketches.
std::pair<PilotReport, PilotReport> run_pilot(const ImageEncoder& baseline, const ImageEncoder& viewaware,
                                              std::span<const ImageSample> test_images,
                                              std::span<const int> sketch_views);

std::string to_json(const std::pair<PilotReport, PilotReport>& reports);

}  // namespace freeview
