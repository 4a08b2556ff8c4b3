#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "freeview/datamodel.hpp"
#include "freeview/model.hpp"

namespace freeview {

class MetricError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Gallery photos relevant to a query: every photo of its instance (view-agnostic)
/// or the one photo of its instance at its view (view-specific).
std::set<ItemRef> relevant_set(const ItemRef& query, std::span<const ItemRef> gallery, RetrievalMode mode);

/// Non-interpolated AP over the full ranking. Throws MetricError on an empty relevant set.
double average_precision(std::span<const ItemRef> ranking, const std::set<ItemRef>& relevant);
/// (#relevant in top min(k, N)) / min(k, N).
double precision_at_k(std::span<const ItemRef> ranking, const std::set<ItemRef>& relevant, int k = 100);

/// 1-based rank of the photo matching the query's instance and view; 0 when absent.
std::size_t exact_match_rank(const RankedResult& result);
/// Fraction of results whose exact-view photo sits at rank <= q. Absent matches count as misses
/// and are reported through `missing` when given.
double acc_at_q(std::span<const RankedResult> results, int q, std::size_t* missing = nullptr);
/// Fraction of results whose rank-1 item belongs to the query's instance.
double instance_acc_at_1(std::span<const RankedResult> results);

struct QueryDetail {
  ItemRef query;
  double ap = 0;
  double p_at_100 = 0;
  std::size_t exact_rank = 0;
  ItemRef top1;
};

struct ViewBreakdown {
  std::size_t queries = 0;
  double mAP = 0;
  double acc_at_1 = 0;
  double acc_at_10 = 0;
};

struct EvalReport {
  RetrievalMode mode = RetrievalMode::view_agnostic;
  std::size_t gallery_size = 0;
  std::size_t queries = 0;
  double mAP_at_all = 0;
  double P_at_100 = 0;
  std::map<int, double> acc_at;  ///< exact-view accuracy at q = 1, 5, 10
  std::size_t missing_exact = 0;
  std::map<int, ViewBreakdown> per_view;
  std::vector<QueryDetail> per_query;
};

/// Metrics over precomputed rankings; relevance follows each result's mode.
EvalReport summarize(std::span<const RankedResult> results, std::span<const ItemRef> gallery, RetrievalMode mode);

/// Encodes the test photos into a gallery and ranks every test sketch with the mode's feature.
EvalReport evaluate(const ImageEncoder& encoder, std::span<const ImageSample> test_images, RetrievalMode mode);

/// JSON; `detail` adds the per-query list.
std::string to_json(const EvalReport& report, bool detail = true);

struct ChanceLevel {
  double mean = 0;
  double stderr_ = 0;
};

/// Monte-Carlo mAP of uniformly random rankings of the gallery for the given queries.
ChanceLevel chance_map(std::span<const ItemRef> queries, std::span<const ItemRef> gallery, RetrievalMode mode,
                       int trials, std::uint64_t seed);

}  // namespace freeview
