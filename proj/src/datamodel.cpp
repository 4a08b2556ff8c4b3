#include "freeview/datamodel.hpp"

#include <cmath>
#include <sstream>

namespace freeview {

std::string_view to_string(Modality m) { return m == Modality::sketch ? "sketch" : "photo"; }

std::string_view to_string(Split s) { return s == Split::train ? "train" : "test"; }

std::string_view to_string(RetrievalMode m) {
  return m == RetrievalMode::view_agnostic ? "view_agnostic" : "view_specific";
}

Modality parse_modality(std::string_view s) {
  if (s == "sketch") return Modality::sketch;
  if (s == "photo") return Modality::photo;
  throw std::invalid_argument("unknown modality: " + std::string(s));
}

Split parse_split(std::string_view s) {
  if (s == "train") return Split::train;
  if (s == "test") return Split::test;
  throw std::invalid_argument("unknown split: " + std::string(s));
}

RetrievalMode parse_mode(std::string_view s) {
  if (s == "view_agnostic" || s == "va") return RetrievalMode::view_agnostic;
  if (s == "view_specific" || s == "vs") return RetrievalMode::view_specific;
  throw std::invalid_argument("unknown retrieval mode: " + std::string(s));
}

ViewAngle ViewAngle::degrees(int deg) {
  int d = deg % 360;
  if (d < 0) d += 360;
  return ViewAngle{d};
}

int ViewAngle::deg() const {
  if (!known()) throw std::logic_error("view angle is unknown");
  return deg_;
}

std::string describe(const ItemRef& ref) {
  std::ostringstream os;
  os << "inst" << ref.instance_id << '/' << to_string(ref.modality) << '/';
  if (ref.view.known())
    os << 'v' << ref.view.deg();
  else
    os << "v?";
  os << '/' << to_string(ref.split);
  return os.str();
}

ImageSample::ImageSample(ItemRef r, int img_size)
    : ref(r), size(img_size), pixels(3 * static_cast<std::size_t>(img_size) * img_size, 0.0f) {}

void ImageSample::validate() const {
  if (size <= 0 || pixels.size() != 3 * plane())
    throw std::invalid_argument("image buffer does not match its size");
  for (float v : pixels)
    if (!(v >= 0.0f && v <= 1.0f)) throw std::invalid_argument("pixel value outside [0, 1]");
}

void EmbeddingPair::validate() const {
  if (content.size() != view.size()) throw DimensionError("content and view dims differ");
  for (double v : content)
    if (!std::isfinite(v)) throw std::invalid_argument("non-finite content feature");
  for (double v : view)
    if (!std::isfinite(v)) throw std::invalid_argument("non-finite view feature");
}

double l2_distance(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size())
    throw DimensionError("l2_distance: length " + std::to_string(a.size()) + " vs " + std::to_string(b.size()));
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    acc += d * d;
  }
  return std::sqrt(acc);
}

void GalleryIndex::append(ItemRef ref, EmbeddingPair embedding) {
  if (frozen_) throw std::logic_error("gallery index is frozen");
  if (ref.modality != Modality::photo) throw std::invalid_argument("gallery entries must be photos");
  if (embedding.content.size() != dim_ || embedding.view.size() != dim_)
    throw DimensionError("gallery embedding dim mismatch");
  entries_.push_back({ref, std::move(embedding)});
}

std::vector<ItemRef> RankedResult::refs() const {
  std::vector<ItemRef> out;
  out.reserve(ranking.size());
  for (const auto& s : ranking) out.push_back(s.ref);
  return out;
}

}  // namespace freeview
