#include "freeview/losses.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <json.hpp>

namespace freeview {
namespace {

void check_same_dim(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw DimensionError("vector lengths differ: " + std::to_string(a.size()) + " vs " + std::to_string(b.size()));
}

// d||a - b|| / da, zero at the kink.
void add_norm_grad(std::span<const double> a, std::span<const double> b, double dist, double scale,
                   std::span<double> ga, std::span<double> gb) {
  if (dist <= 0.0) return;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double g = scale * (a[i] - b[i]) / dist;
    if (!ga.empty()) ga[i] += g;
    if (!gb.empty()) gb[i] -= g;
  }
}

void check_index(std::size_t i, std::size_t n) {
  if (i >= n) throw std::out_of_range("embedding index " + std::to_string(i) + " out of range " + std::to_string(n));
}

double weighted_ic(std::span<const EmbeddingPair> emb, std::span<const IndexPair> pairs,
                   std::span<const double> weights, GradSink* sink) {
  double total = 0.0;
  for (std::size_t k = 0; k < pairs.size(); ++k) {
    const auto [a, b] = pairs[k];
    check_index(a, emb.size());
    check_index(b, emb.size());
    check_same_dim(emb[a].content, emb[b].content);
    const double d = l2_distance(emb[a].content, emb[b].content);
    total += weights[k] * d;
    if (sink) add_norm_grad(emb[a].content, emb[b].content, d, sink->weight * weights[k], sink->grads[a].content, sink->grads[b].content);
  }
  return total;
}

struct Reconstruction {
  std::size_t content_from, view_from;
  double weight;
};

template <typename T>
double run_reconstructions(Decoder<T>& decoder, std::span<const EmbeddingPair> emb,
                           const std::vector<Reconstruction>& recs, const Tensor<T>& targets, const VrOptions& opts,
                           GradSink* sink) {
  if (recs.empty()) throw LossError("L_VR needs at least one pair");
  const int d = decoder.embed_dim();
  if (targets.n != static_cast<int>(emb.size()))
    throw LossError("L_VR: " + std::to_string(targets.n) + " targets for " + std::to_string(emb.size()) + " embeddings");
  if (targets.c != 3 || targets.h != decoder.img_size() || targets.w != decoder.img_size())
    throw LossError("L_VR: target shape " + targets.shape_string() + " does not match decoder output");
  Tensor<T> features(static_cast<int>(recs.size()), d, 1, 1);
  for (std::size_t r = 0; r < recs.size(); ++r) {
    const auto& c = emb[recs[r].content_from].content;
    const auto& v = emb[recs[r].view_from].view;
    if (static_cast<int>(c.size()) != d || static_cast<int>(v.size()) != d)
      throw DimensionError("L_VR: embedding dim does not match decoder input");
    for (int i = 0; i < d; ++i) features.sample(static_cast<int>(r))[i] = static_cast<T>(c[i] + v[i]);
  }
  const Tensor<T>& recon = decoder.forward(features, opts.training);
  const std::size_t numel = recon.sample_size();
  Tensor<T> grad_recon;
  if (sink) grad_recon.resize(recon.n, recon.c, recon.h, recon.w);
  std::vector<double> r_buf(numel), t_buf(numel), g_buf(numel);
  double total = 0.0;
  for (std::size_t r = 0; r < recs.size(); ++r) {
    const T* out = recon.sample(static_cast<int>(r));
    const T* tgt = targets.sample(static_cast<int>(recs[r].view_from));
    for (std::size_t i = 0; i < numel; ++i) {
      r_buf[i] = out[i];
      t_buf[i] = tgt[i];
    }
    std::fill(g_buf.begin(), g_buf.end(), 0.0);
    const double dist = reconstruction_distance(r_buf, t_buf, opts.norm, sink ? std::span<double>(g_buf) : std::span<double>{});
    total += recs[r].weight * dist;
    if (sink) {
      T* g = grad_recon.sample(static_cast<int>(r));
      const double scale = sink->weight * recs[r].weight;
      for (std::size_t i = 0; i < numel; ++i) g[i] = static_cast<T>(scale * g_buf[i]);
    }
  }
  if (sink) {
    Tensor<T> grad_features;
    decoder.backward(grad_recon, &grad_features);
    for (std::size_t r = 0; r < recs.size(); ++r) {
      auto& gc = sink->grads[recs[r].content_from].content;
      auto& gv = sink->grads[recs[r].view_from].view;
      const T* gf = grad_features.sample(static_cast<int>(r));
      for (int i = 0; i < d; ++i) {
        gc[i] += gf[i];
        gv[i] += gf[i];
      }
    }
  }
  return total;
}

void add_roles(std::vector<Reconstruction>& recs, IndexPair p, double weight, bool symmetric) {
  if (symmetric) {
    recs.push_back({p.a, p.b, weight / 2});
    recs.push_back({p.b, p.a, weight / 2});
  } else {
    recs.push_back({p.a, p.b, weight});
  }
}

}  // namespace

std::string_view to_string(LossTerm t) {
  switch (t) {
    case LossTerm::VA: return "VA";
    case LossTerm::VS: return "VS";
    case LossTerm::VC: return "VC";
    case LossTerm::IC: return "IC";
    case LossTerm::VR: return "VR";
  }
  return "?";
}

LossTerm parse_loss_term(std::string_view s) {
  std::string up(s);
  std::transform(up.begin(), up.end(), up.begin(), [](unsigned char c) { return static_cast<char>(std::toupper(c)); });
  for (auto t : {LossTerm::VA, LossTerm::VS, LossTerm::VC, LossTerm::IC, LossTerm::VR})
    if (up == to_string(t)) return t;
  throw std::invalid_argument("unknown loss term: " + std::string(s));
}

void LossConfig::validate() const {
  if (mu_c < 0 || mu_vs < 0 || mu_base < 0) throw std::invalid_argument("margins must be non-negative");
  if (lambda1 < 0 || lambda2 < 0) throw std::invalid_argument("loss weights must be non-negative");
}

LossConfig LossConfig::pilot_baseline() {
  LossConfig cfg;
  cfg.toggles = {LossTerm::VA};
  cfg.mu_c = cfg.mu_base;
  return cfg;
}

std::vector<EmbeddingPair> zero_grads_like(std::span<const EmbeddingPair> emb) {
  std::vector<EmbeddingPair> out(emb.size());
  for (std::size_t i = 0; i < emb.size(); ++i) {
    out[i].content.assign(emb[i].content.size(), 0.0);
    out[i].view.assign(emb[i].view.size(), 0.0);
  }
  return out;
}

double triplet_hinge(std::span<const double> a, std::span<const double> p, std::span<const double> n, double mu) {
  check_same_dim(a, p);
  check_same_dim(a, n);
  return std::max(0.0, mu + l2_distance(a, p) - l2_distance(a, n));
}

HingeGradient triplet_hinge_gradient(std::span<const double> a, std::span<const double> p,
                                     std::span<const double> n, double mu) {
  check_same_dim(a, p);
  check_same_dim(a, n);
  HingeGradient g;
  g.grad_a.assign(a.size(), 0.0);
  g.grad_p.assign(a.size(), 0.0);
  g.grad_n.assign(a.size(), 0.0);
  const double dp = l2_distance(a, p);
  const double dn = l2_distance(a, n);
  const double raw = mu + dp - dn;
  if (raw <= 0.0) return g;
  g.value = raw;
  add_norm_grad(a, p, dp, 1.0, g.grad_a, g.grad_p);
  add_norm_grad(a, n, dn, -1.0, g.grad_a, g.grad_n);
  return g;
}

double loss_tri_va(std::span<const EmbeddingPair> emb, std::span<const TripletIndex> triplets, double mu_c,
                   GradSink* sink) {
  if (triplets.empty()) throw LossError("L_Tri^VA: empty batch");
  const double inv = 1.0 / static_cast<double>(triplets.size());
  double total = 0.0;
  for (const auto& t : triplets) {
    check_index(t.s, emb.size());
    check_index(t.p, emb.size());
    check_index(t.n, emb.size());
    auto g = triplet_hinge_gradient(emb[t.s].content, emb[t.p].content, emb[t.n].content, mu_c);
    total += g.value;
    if (sink && g.value > 0) {
      const double w = sink->weight * inv;
      for (std::size_t i = 0; i < g.grad_a.size(); ++i) {
        sink->grads[t.s].content[i] += w * g.grad_a[i];
        sink->grads[t.p].content[i] += w * g.grad_p[i];
        sink->grads[t.n].content[i] += w * g.grad_n[i];
      }
    }
  }
  return total * inv;
}

double loss_tri_vs(std::span<const EmbeddingPair> emb, std::span<const TripletIndex> triplets, double mu_vs,
                   GradSink* sink) {
  if (triplets.empty()) throw LossError("L_Tri^VS: empty batch");
  const double inv = 1.0 / static_cast<double>(triplets.size());
  double total = 0.0;
  for (const auto& t : triplets) {
    check_index(t.s, emb.size());
    check_index(t.p, emb.size());
    check_index(t.n, emb.size());
    const auto s = view_specific_feature(emb[t.s]);
    const auto p = view_specific_feature(emb[t.p]);
    const auto n = view_specific_feature(emb[t.n]);
    auto g = triplet_hinge_gradient(s, p, n, mu_vs);
    total += g.value;
    if (sink && g.value > 0) {
      const double w = sink->weight * inv;
      for (std::size_t i = 0; i < g.grad_a.size(); ++i) {
        sink->grads[t.s].content[i] += w * g.grad_a[i];
        sink->grads[t.s].view[i] += w * g.grad_a[i];
        sink->grads[t.p].content[i] += w * g.grad_p[i];
        sink->grads[t.p].view[i] += w * g.grad_p[i];
        sink->grads[t.n].content[i] += w * g.grad_n[i];
        sink->grads[t.n].view[i] += w * g.grad_n[i];
      }
    }
  }
  return total * inv;
}

double loss_ic(std::span<const EmbeddingPair> emb, std::span<const IndexPair> pairs, GradSink* sink) {
  if (pairs.empty()) throw LossError("L_IC: no view pairs");
  const std::vector<double> weights(pairs.size(), 1.0 / static_cast<double>(pairs.size()));
  return weighted_ic(emb, pairs, weights, sink);
}

std::vector<IndexPair> all_pairs(std::span<const std::size_t> group) {
  std::vector<IndexPair> out;
  for (std::size_t i = 0; i + 1 < group.size(); ++i)
    for (std::size_t j = i + 1; j < group.size(); ++j) out.push_back({group[i], group[j]});
  return out;
}

double loss_ic_exact(std::span<const EmbeddingPair> emb, std::span<const std::vector<std::size_t>> groups,
                     GradSink* sink) {
  std::vector<IndexPair> pairs;
  std::vector<double> weights;
  std::size_t used = 0;
  for (const auto& g : groups)
    if (g.size() >= 2) ++used;
  if (used == 0) throw LossError("L_IC: no group with two or more views");
  for (const auto& g : groups) {
    if (g.size() < 2) continue;
    const auto ps = all_pairs(g);
    for (const auto& p : ps) {
      pairs.push_back(p);
      weights.push_back(1.0 / (static_cast<double>(used) * static_cast<double>(ps.size())));
    }
  }
  return weighted_ic(emb, pairs, weights, sink);
}

double loss_vc(std::span<const EmbeddingPair> emb, std::span<const IndexPair> matched, GradSink* sink) {
  if (matched.empty()) throw LossError("L_VC: empty batch");
  const double inv = 1.0 / static_cast<double>(matched.size());
  double total = 0.0;
  for (const auto [s, p] : matched) {
    check_index(s, emb.size());
    check_index(p, emb.size());
    check_same_dim(emb[s].view, emb[p].view);
    const double d = l2_distance(emb[s].view, emb[p].view);
    total += d;
    if (sink) add_norm_grad(emb[s].view, emb[p].view, d, sink->weight * inv, sink->grads[s].view, sink->grads[p].view);
  }
  return total * inv;
}

double reconstruction_distance(std::span<const double> recon, std::span<const double> target, VrNorm norm,
                               std::span<double> grad) {
  check_same_dim(recon, target);
  const double dist = l2_distance(recon, target);
  const double scale = norm == VrNorm::frobenius ? 1.0 : 1.0 / std::sqrt(static_cast<double>(recon.size()));
  if (!grad.empty() && dist > 0.0)
    for (std::size_t i = 0; i < recon.size(); ++i) grad[i] += scale * (recon[i] - target[i]) / dist;
  return scale * dist;
}

template <typename T>
double loss_vr(Decoder<T>& decoder, std::span<const EmbeddingPair> emb, std::span<const IndexPair> pairs,
               const Tensor<T>& targets, const VrOptions& opts, GradSink* sink) {
  if (pairs.empty()) throw LossError("L_VR: no view pairs");
  std::vector<Reconstruction> recs;
  const double w = 1.0 / static_cast<double>(pairs.size());
  for (const auto& p : pairs) {
    check_index(p.a, emb.size());
    check_index(p.b, emb.size());
    add_roles(recs, p, w, opts.symmetric);
  }
  return run_reconstructions(decoder, emb, recs, targets, opts, sink);
}

template <typename T>
double loss_vr_exact(Decoder<T>& decoder, std::span<const EmbeddingPair> emb,
                     std::span<const std::vector<std::size_t>> groups, const Tensor<T>& targets,
                     const VrOptions& opts, GradSink* sink) {
  std::size_t used = 0;
  for (const auto& g : groups)
    if (g.size() >= 2) ++used;
  if (used == 0) throw LossError("L_VR: no group with two or more views");
  std::vector<Reconstruction> recs;
  for (const auto& g : groups) {
    if (g.size() < 2) continue;
    const auto ps = all_pairs(g);
    const double w = 1.0 / (static_cast<double>(used) * static_cast<double>(ps.size()));
    for (const auto& p : ps) {
      check_index(p.a, emb.size());
      check_index(p.b, emb.size());
      add_roles(recs, p, w, opts.symmetric);
    }
  }
  return run_reconstructions(decoder, emb, recs, targets, opts, sink);
}

template double loss_vr<float>(Decoder<float>&, std::span<const EmbeddingPair>, std::span<const IndexPair>,
                               const Tensor<float>&, const VrOptions&, GradSink*);
template double loss_vr<double>(Decoder<double>&, std::span<const EmbeddingPair>, std::span<const IndexPair>,
                                const Tensor<double>&, const VrOptions&, GradSink*);
template double loss_vr_exact<float>(Decoder<float>&, std::span<const EmbeddingPair>,
                                     std::span<const std::vector<std::size_t>>, const Tensor<float>&,
                                     const VrOptions&, GradSink*);
template double loss_vr_exact<double>(Decoder<double>&, std::span<const EmbeddingPair>,
                                      std::span<const std::vector<std::size_t>>, const Tensor<double>&,
                                      const VrOptions&, GradSink*);

LossReport loss_total(const LossTerms& terms, const LossConfig& cfg) {
  LossReport r;
  const auto take = [&](LossTerm t, double v, const char* name) {
    if (!cfg.enabled(t)) return 0.0;
    if (!std::isfinite(v)) throw LossError(std::string("non-finite loss term ") + name);
    return v;
  };
  r.l_va = take(LossTerm::VA, terms.va, "L_Tri^VA");
  r.l_vs = take(LossTerm::VS, terms.vs, "L_Tri^VS");
  r.l_vc = take(LossTerm::VC, terms.vc, "L_VC");
  r.l_ic = take(LossTerm::IC, terms.ic, "L_IC");
  r.l_vr = take(LossTerm::VR, terms.vr, "L_VR");
  r.total = r.l_va + cfg.lambda1 * r.l_vs + cfg.lambda2 * (r.l_vc + r.l_ic + r.l_vr);
  return r;
}

std::string to_json_line(std::int64_t step, const LossReport& report) {
  nlohmann::ordered_json j;
  j["step"] = step;
  j["L_va"] = report.l_va;
  j["L_vs"] = report.l_vs;
  j["L_vc"] = report.l_vc;
  j["L_ic"] = report.l_ic;
  j["L_vr"] = report.l_vr;
  j["total"] = report.total;
  return j.dump();
}

}  // namespace freeview
