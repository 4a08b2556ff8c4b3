#pragma once

#include <set>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "freeview/datamodel.hpp"
#include "freeview/model.hpp"

namespace freeview {

enum class LossTerm { VA, VS, VC, IC, VR };

std::string_view to_string(LossTerm t);
/// Accepts "VA", "VS", "VC", "IC", "VR" (case-insensitive).
LossTerm parse_loss_term(std::string_view s);

enum class VrNorm {
  frobenius,         ///< ||p_b' - p_b||_2 over every pixel and channel
  root_mean_square,  ///< the same norm divided by sqrt(#elements)
};

struct LossConfig {
  double mu_c = 0.5;      ///< content triplet margin
  double mu_vs = 0.45;    ///< view-specific triplet margin
  double mu_base = 0.3;   ///< margin of the single-feature baseline
  double lambda1 = 0.5;
  double lambda2 = 0.7;
  std::set<LossTerm> toggles{LossTerm::VA, LossTerm::VS, LossTerm::VC, LossTerm::IC, LossTerm::VR};
  VrNorm vr_norm = VrNorm::frobenius;
  /// Also reconstruct p_a from (f_c of p_b + f_v of p_a).
  bool symmetric_vr = false;

  bool enabled(LossTerm t) const { return toggles.count(t) != 0; }
  void validate() const;

  /// Content triplet only, on fixed-view pairs, with margin mu_base.
  static LossConfig pilot_baseline();
};

class LossError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TripletIndex {
  std::size_t s, p, n;
};

struct IndexPair {
  std::size_t a, b;
};

/// Receives weight * dL/d(embedding) added into grads[i] for each embedding i.
struct GradSink {
  std::span<EmbeddingPair> grads;
  double weight = 1.0;
};

/// Allocates zeroed gradient slots shaped like `emb`.
std::vector<EmbeddingPair> zero_grads_like(std::span<const EmbeddingPair> emb);

/// max{0, mu + δ(a,p) − δ(a,n)}.
double triplet_hinge(std::span<const double> a, std::span<const double> p, std::span<const double> n, double mu);

struct HingeGradient {
  double value = 0.0;
  std::vector<double> grad_a, grad_p, grad_n;
};
HingeGradient triplet_hinge_gradient(std::span<const double> a, std::span<const double> p,
                                     std::span<const double> n, double mu);

/// Mean content-feature triplet hinge.
double loss_tri_va(std::span<const EmbeddingPair> emb, std::span<const TripletIndex> triplets, double mu_c,
                   GradSink* sink = nullptr);
/// Mean triplet hinge on f_vs = f_c + f_v.
double loss_tri_vs(std::span<const EmbeddingPair> emb, std::span<const TripletIndex> triplets, double mu_vs,
                   GradSink* sink = nullptr);
/// Mean over pairs of ||f_c^a − f_c^b||.
double loss_ic(std::span<const EmbeddingPair> emb, std::span<const IndexPair> pairs, GradSink* sink = nullptr);
/// Per group (instance): mean over all C(M,2) pairs; then mean over groups.
double loss_ic_exact(std::span<const EmbeddingPair> emb, std::span<const std::vector<std::size_t>> groups,
                     GradSink* sink = nullptr);
/// Mean over matched (sketch, photo) pairs of ||f_v^s − f_v^p||.
double loss_vc(std::span<const EmbeddingPair> emb, std::span<const IndexPair> matched, GradSink* sink = nullptr);

/// Residual norm between a reconstruction and its target. Writes d/d(recon) into grad when non-empty.
double reconstruction_distance(std::span<const double> recon, std::span<const double> target, VrNorm norm,
                               std::span<double> grad = {});

/// All unordered pairs (a < b) of a group, in lexicographic order.
std::vector<IndexPair> all_pairs(std::span<const std::size_t> group);

struct VrOptions {
  VrNorm norm = VrNorm::frobenius;
  bool symmetric = false;
  bool training = true;
};

/// Cross-view reconstruction: for each (a, b), decode f_c[a] + f_v[b] and
/// compare with targets[b] (pixels in [-1, 1]); mean over reconstructions.
/// Decoder parameter gradients are accumulated with the sink's weight.
template <typename T>
double loss_vr(Decoder<T>& decoder, std::span<const EmbeddingPair> emb, std::span<const IndexPair> pairs,
               const Tensor<T>& targets, const VrOptions& opts, GradSink* sink = nullptr);

/// Exact mode: every C(M,2) pair of each group; per-group mean, then mean over groups.
template <typename T>
double loss_vr_exact(Decoder<T>& decoder, std::span<const EmbeddingPair> emb,
                     std::span<const std::vector<std::size_t>> groups, const Tensor<T>& targets,
                     const VrOptions& opts, GradSink* sink = nullptr);

struct LossTerms {
  double va = 0, vs = 0, vc = 0, ic = 0, vr = 0;
};

struct LossReport {
  double l_va = 0, l_vs = 0, l_vc = 0, l_ic = 0, l_vr = 0;
  double total = 0;
};

/// total = L_VA + λ1 L_VS + λ2 (L_VC + L_IC + L_VR) over enabled terms; disabled terms report 0.
/// Throws LossError naming the first non-finite enabled term.
LossReport loss_total(const LossTerms& terms, const LossConfig& cfg);

/// `{"step": n, "L_va": ..., "L_vs": ..., "L_vc": ..., "L_ic": ..., "L_vr": ..., "total": ...}`
std::string to_json_line(std::int64_t step, const LossReport& report);

}  // namespace freeview
