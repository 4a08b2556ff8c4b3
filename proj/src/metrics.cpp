#include "freeview/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include <json.hpp>

#include "freeview/retrieval.hpp"

namespace freeview {

std::set<ItemRef> relevant_set(const ItemRef& query, std::span<const ItemRef> gallery, RetrievalMode mode) {
  std::set<ItemRef> out;
  for (const auto& g : gallery) {
    if (g.instance_id != query.instance_id || g.modality != Modality::photo) continue;
    if (mode == RetrievalMode::view_specific && g.view != query.view) continue;
    out.insert(g);
  }
  return out;
}

double average_precision(std::span<const ItemRef> ranking, const std::set<ItemRef>& relevant) {
  if (relevant.empty()) throw MetricError("average_precision: empty relevant set");
  double sum = 0.0;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < ranking.size(); ++i)
    if (relevant.count(ranking[i])) {
      ++hits;
      sum += static_cast<double>(hits) / static_cast<double>(i + 1);
    }
  return sum / static_cast<double>(relevant.size());
}

double precision_at_k(std::span<const ItemRef> ranking, const std::set<ItemRef>& relevant, int k) {
  if (k < 1) throw MetricError("precision_at_k: k must be >= 1");
  const std::size_t n = std::min(static_cast<std::size_t>(k), ranking.size());
  if (n == 0) return 0.0;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < n; ++i) hits += relevant.count(ranking[i]);
  return static_cast<double>(hits) / static_cast<double>(n);
}

std::size_t exact_match_rank(const RankedResult& result) {
  for (std::size_t i = 0; i < result.ranking.size(); ++i) {
    const auto& r = result.ranking[i].ref;
    if (r.modality == Modality::photo && r.instance_id == result.query.instance_id && r.view == result.query.view)
      return i + 1;
  }
  return 0;
}

double acc_at_q(std::span<const RankedResult> results, int q, std::size_t* missing) {
  if (q < 1) throw MetricError("acc_at_q: q must be >= 1");
  if (results.empty()) throw MetricError("acc_at_q: no results");
  std::size_t hits = 0, absent = 0;
  for (const auto& r : results) {
    const std::size_t rank = exact_match_rank(r);
    if (rank == 0) ++absent;
    else if (rank <= static_cast<std::size_t>(q)) ++hits;
  }
  if (missing) *missing = absent;
  return static_cast<double>(hits) / static_cast<double>(results.size());
}

double instance_acc_at_1(std::span<const RankedResult> results) {
  if (results.empty()) throw MetricError("instance_acc_at_1: no results");
  std::size_t hits = 0;
  for (const auto& r : results) hits += !r.ranking.empty() && r.ranking.front().ref.instance_id == r.query.instance_id;
  return static_cast<double>(hits) / static_cast<double>(results.size());
}

EvalReport summarize(std::span<const RankedResult> results, std::span<const ItemRef> gallery, RetrievalMode mode) {
  if (results.empty()) throw MetricError("evaluate: no queries");
  EvalReport rep;
  rep.mode = mode;
  rep.gallery_size = gallery.size();
  rep.queries = results.size();
  std::map<int, std::vector<const RankedResult*>> by_view;
  double map_sum = 0, p_sum = 0;
  for (const auto& r : results) {
    const auto refs = r.refs();
    const auto rel = relevant_set(r.query, gallery, mode);
    QueryDetail qd;
    qd.query = r.query;
    qd.ap = rel.empty() ? 0.0 : average_precision(refs, rel);
    qd.p_at_100 = precision_at_k(refs, rel, 100);
    qd.exact_rank = exact_match_rank(r);
    if (!r.ranking.empty()) qd.top1 = r.ranking.front().ref;
    map_sum += qd.ap;
    p_sum += qd.p_at_100;
    rep.per_query.push_back(qd);
    by_view[r.query.view.raw()].push_back(&r);
  }
  rep.mAP_at_all = map_sum / static_cast<double>(results.size());
  rep.P_at_100 = p_sum / static_cast<double>(results.size());
  for (int q : {1, 5, 10}) rep.acc_at[q] = acc_at_q(results, q, &rep.missing_exact);

  for (const auto& [view, list] : by_view) {
    ViewBreakdown vb;
    vb.queries = list.size();
    std::vector<RankedResult> subset;
    for (const auto* r : list) {
      subset.push_back(*r);
      const auto rel = relevant_set(r->query, gallery, mode);
      if (!rel.empty()) vb.mAP += average_precision(r->refs(), rel);
    }
    vb.mAP /= static_cast<double>(list.size());
    vb.acc_at_1 = acc_at_q(subset, 1);
    vb.acc_at_10 = acc_at_q(subset, 10);
    rep.per_view[view] = vb;
  }
  return rep;
}

EvalReport evaluate(const ImageEncoder& encoder, std::span<const ImageSample> test_images, RetrievalMode mode) {
  std::vector<ImageSample> photos;
  std::vector<ImageSample> sketches;
  for (const auto& img : test_images) (img.ref.modality == Modality::photo ? photos : sketches).push_back(img);
  if (photos.empty() || sketches.empty()) throw MetricError("evaluate: empty test set");
  const GalleryIndex index = build_index(encoder, photos);
  const auto sketch_emb = encoder.encode(sketches);
  std::vector<RankedResult> results;
  results.reserve(sketches.size());
  for (std::size_t i = 0; i < sketches.size(); ++i) results.push_back(rank(index, sketches[i].ref, sketch_emb[i], mode));
  std::vector<ItemRef> gallery;
  for (const auto& e : index.entries()) gallery.push_back(e.ref);
  return summarize(results, gallery, mode);
}

std::string to_json(const EvalReport& r, bool detail) {
  using ojson = nlohmann::ordered_json;
  ojson j;
  j["mode"] = std::string(to_string(r.mode));
  j["gallery_size"] = r.gallery_size;
  j["queries"] = r.queries;
  j["mAP_at_all"] = r.mAP_at_all;
  j["P_at_100"] = r.P_at_100;
  ojson acc = ojson::object();
  for (const auto& [q, v] : r.acc_at) acc[std::to_string(q)] = v;
  j["acc_at"] = acc;
  j["missing_exact"] = r.missing_exact;
  ojson views = ojson::object();
  for (const auto& [v, b] : r.per_view)
    views[std::to_string(v)] = {{"queries", b.queries}, {"mAP", b.mAP}, {"acc_at_1", b.acc_at_1}, {"acc_at_10", b.acc_at_10}};
  j["per_view"] = views;
  if (detail) {
    j["per_query"] = ojson::array();
    for (const auto& q : r.per_query)
      j["per_query"].push_back({{"instance_id", q.query.instance_id},
                                {"view_deg", q.query.view.raw()},
                                {"ap", q.ap},
                                {"p_at_100", q.p_at_100},
                                {"exact_rank", q.exact_rank},
                                {"top1_instance", q.top1.instance_id},
                                {"top1_view", q.top1.view.raw()}});
  }
  return j.dump(2) + "\n";
}

ChanceLevel chance_map(std::span<const ItemRef> queries, std::span<const ItemRef> gallery, RetrievalMode mode,
                       int trials, std::uint64_t seed) {
  if (trials < 2) throw MetricError("chance_map: need at least 2 trials");
  std::mt19937_64 rng(seed);
  std::vector<ItemRef> perm(gallery.begin(), gallery.end());
  std::vector<std::set<ItemRef>> rel;
  for (const auto& q : queries) rel.push_back(relevant_set(q, gallery, mode));
  double sum = 0, sum_sq = 0;
  for (int t = 0; t < trials; ++t) {
    double trial_map = 0;
    for (std::size_t i = 0; i < queries.size(); ++i) {
      std::shuffle(perm.begin(), perm.end(), rng);
      if (!rel[i].empty()) trial_map += average_precision(perm, rel[i]);
    }
    trial_map /= static_cast<double>(queries.size());
    sum += trial_map;
    sum_sq += trial_map * trial_map;
  }
  const double mean = sum / trials;
  const double var = std::max(0.0, (sum_sq - trials * mean * mean) / (trials - 1));
  return {mean, std::sqrt(var / trials)};
}

}  // namespace freeview
