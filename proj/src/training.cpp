#include "freeview/training.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>

#include <json.hpp>

namespace freeview {

namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;

void TrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  if (batch_size < 2) throw ConfigError("batch_size must be >= 2");
  if (!(lr > 0.0) || !std::isfinite(lr)) throw ConfigError("lr must be > 0");
  if (pairs_per_instance < 1) throw ConfigError("pairs_per_instance must be >= 1");
  if (view_instances < 0 || steps_per_epoch < 0 || checkpoint_every < 0)
    throw ConfigError("view_instances, steps_per_epoch and checkpoint_every must be >= 0");
  loss.validate();
}

int TrainConfig::effective_view_instances() const {
  return view_instances > 0 ? view_instances : std::max(1, batch_size / pairs_per_instance);
}

TrainConfig TrainConfig::paper_profile() {
  TrainConfig cfg;
  cfg.lr = 1e-4;
  cfg.batch_size = 64;
  cfg.epochs = 250;
  return cfg;
}

std::string train_config_to_json(const TrainConfig& cfg) {
  ojson loss;
  loss["mu_c"] = cfg.loss.mu_c;
  loss["mu_vs"] = cfg.loss.mu_vs;
  loss["mu_base"] = cfg.loss.mu_base;
  loss["lambda1"] = cfg.loss.lambda1;
  loss["lambda2"] = cfg.loss.lambda2;
  loss["toggles"] = ojson::array();
  for (auto t : cfg.loss.toggles) loss["toggles"].push_back(std::string(to_string(t)));
  loss["vr_norm"] = cfg.loss.vr_norm == VrNorm::frobenius ? "frobenius" : "rms";
  loss["symmetric_vr"] = cfg.loss.symmetric_vr;
  ojson j;
  j["epochs"] = cfg.epochs;
  j["batch_size"] = cfg.batch_size;
  j["lr"] = cfg.lr;
  j["loss"] = loss;
  j["pairs_per_instance"] = cfg.pairs_per_instance;
  j["view_instances"] = cfg.view_instances;
  j["steps_per_epoch"] = cfg.steps_per_epoch;
  j["seed"] = cfg.seed;
  j["augment"] = cfg.augment;
  j["match_negative_view"] = cfg.match_negative_view;
  j["checkpoint_every"] = cfg.checkpoint_every;
  return j.dump(2) + "\n";
}

TrainConfig train_config_from_json(const std::string& text) {
  TrainConfig cfg;
  try {
    const auto j = ojson::parse(text);
    cfg.epochs = j.at("epochs").get<int>();
    cfg.batch_size = j.at("batch_size").get<int>();
    cfg.lr = j.at("lr").get<double>();
    const auto& l = j.at("loss");
    cfg.loss.mu_c = l.at("mu_c").get<double>();
    cfg.loss.mu_vs = l.at("mu_vs").get<double>();
    cfg.loss.mu_base = l.at("mu_base").get<double>();
    cfg.loss.lambda1 = l.at("lambda1").get<double>();
    cfg.loss.lambda2 = l.at("lambda2").get<double>();
    cfg.loss.toggles.clear();
    for (const auto& t : l.at("toggles")) cfg.loss.toggles.insert(parse_loss_term(t.get<std::string>()));
    cfg.loss.vr_norm = l.at("vr_norm").get<std::string>() == "rms" ? VrNorm::root_mean_square : VrNorm::frobenius;
    cfg.loss.symmetric_vr = l.at("symmetric_vr").get<bool>();
    cfg.pairs_per_instance = j.at("pairs_per_instance").get<int>();
    cfg.view_instances = j.at("view_instances").get<int>();
    cfg.steps_per_epoch = j.at("steps_per_epoch").get<int>();
    cfg.seed = j.at("seed").get<std::uint64_t>();
    cfg.augment = j.at("augment").get<bool>();
    cfg.match_negative_view = j.value("match_negative_view", false);
    cfg.checkpoint_every = j.at("checkpoint_every").get<int>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed training config: ") + e.what());
  }
  cfg.validate();
  return cfg;
}

TrainConfig ablate(const TrainConfig& cfg, LossTerm strip) {
  TrainConfig out = cfg;
  out.loss.toggles.erase(strip);
  return out;
}

TrainConfig ablate(const TrainConfig& cfg, std::string_view strip) { return ablate(cfg, parse_loss_term(strip)); }

namespace {

bool needs_view_pairs(const LossConfig& loss) { return loss.enabled(LossTerm::IC) || loss.enabled(LossTerm::VR); }

}  // namespace

LossReport train_step(ModelState& model, Adam& optimizer, const TripletBatch& triplets, const ViewPairBatch& view_pairs,
                      const LossConfig& loss) {
  const std::size_t b = triplets.size();
  if (b == 0) throw TrainingError("empty triplet batch");
  const bool use_pairs = needs_view_pairs(loss);
  if (use_pairs && view_pairs.pairs.empty()) throw TrainingError("empty view-pair batch");

  // Layout: anchors, positives, negatives, then (p_a, p_b) for each view pair.
  std::vector<ImageSample> images;
  images.reserve(3 * b + (use_pairs ? 2 * view_pairs.pairs.size() : 0));
  for (const auto* part : {&triplets.anchors, &triplets.positives, &triplets.negatives})
    images.insert(images.end(), part->begin(), part->end());
  if (use_pairs)
    for (const auto& [pa, pb] : view_pairs.pairs) {
      images.push_back(pa);
      images.push_back(pb);
    }

  const int s = model.config.img_size;
  const Tensor<float> batch = pack_images(images, s);
  Tensor<float> content, view;
  model.zero_grad();
  model.encoder.forward(batch, content, view, true);
  const auto emb = unpack_embeddings(content, view);
  auto grads = zero_grads_like(emb);

  std::vector<TripletIndex> trip(b);
  std::vector<IndexPair> matched(b);
  for (std::size_t i = 0; i < b; ++i) {
    trip[i] = {i, b + i, 2 * b + i};
    matched[i] = {i, b + i};
  }
  std::vector<IndexPair> pairs;
  if (use_pairs)
    for (std::size_t k = 0; k < view_pairs.pairs.size(); ++k) pairs.push_back({3 * b + 2 * k, 3 * b + 2 * k + 1});

  LossTerms terms;
  if (loss.enabled(LossTerm::VA)) {
    GradSink sink{grads, 1.0};
    terms.va = loss_tri_va(emb, trip, loss.mu_c, &sink);
  }
  if (loss.enabled(LossTerm::VS)) {
    GradSink sink{grads, loss.lambda1};
    terms.vs = loss_tri_vs(emb, trip, loss.mu_vs, &sink);
  }
  if (loss.enabled(LossTerm::VC)) {
    GradSink sink{grads, loss.lambda2};
    terms.vc = loss_vc(emb, matched, &sink);
  }
  if (loss.enabled(LossTerm::IC)) {
    GradSink sink{grads, loss.lambda2};
    terms.ic = loss_ic(emb, pairs, &sink);
  }
  if (loss.enabled(LossTerm::VR)) {
    GradSink sink{grads, loss.lambda2};
    const Tensor<float> targets = pack_targets(images, s);
    terms.vr = loss_vr(model.decoder, emb, pairs, targets, VrOptions{loss.vr_norm, loss.symmetric_vr, true}, &sink);
  }
  // Throws on a non-finite term before any parameter is touched.
  const LossReport report = loss_total(terms, loss);

  const int d = model.config.embed_dim;
  Tensor<float> grad_content(content.n, d, 1, 1), grad_view(view.n, d, 1, 1);
  for (std::size_t i = 0; i < grads.size(); ++i)
    for (int k = 0; k < d; ++k) {
      grad_content.sample(static_cast<int>(i))[k] = static_cast<float>(grads[i].content[k]);
      grad_view.sample(static_cast<int>(i))[k] = static_cast<float>(grads[i].view[k]);
    }
  model.encoder.backward(grad_content, grad_view);
  optimizer.step();
  ++model.step;
  return report;
}

TrainResult train(ModelState& model, std::span<const ImageSample> dcm, std::span<const ImageSample> d2d,
                  const TrainConfig& cfg, const std::optional<fs::path>& run_dir, const TrainHooks& hooks) {
  cfg.validate();
  if (dcm.empty()) throw TrainingError("D_CM has no training images");
  if (needs_view_pairs(cfg.loss) && d2d.empty()) throw TrainingError("D_2D has no training images");
  for (const auto* set : {&dcm, &d2d})
    for (const auto& img : *set)
      if (img.size != model.config.img_size)
        throw TrainingError("image " + describe(img.ref) + " has size " + std::to_string(img.size) + ", model expects " +
                            std::to_string(model.config.img_size));

  std::size_t dcm_instances = 0;
  {
    std::set<std::uint32_t> ids;
    for (const auto& img : dcm) ids.insert(img.ref.instance_id);
    dcm_instances = ids.size();
  }
  const int steps_per_epoch = cfg.steps_per_epoch > 0
                                  ? cfg.steps_per_epoch
                                  : static_cast<int>((dcm_instances + cfg.batch_size - 1) / cfg.batch_size);

  std::ofstream log;
  if (run_dir) {
    fs::create_directories(*run_dir);
    std::ofstream(*run_dir / "config.json", std::ios::binary) << train_config_to_json(cfg);
    std::ofstream(*run_dir / "model.json", std::ios::binary) << config_to_json(model.config) << "\n";
    log.open(*run_dir / "log.jsonl", std::ios::binary | std::ios::trunc);
    if (!log) throw TrainingError("cannot write training log in " + run_dir->string());
  }

  Adam optimizer(model.parameters(), AdamConfig{.lr = cfg.lr});
  TrainResult result;
  const int view_instances = cfg.effective_view_instances();
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    for (int k = 0; k < steps_per_epoch; ++k) {
      const auto step = static_cast<std::uint64_t>(result.steps);
      const std::uint64_t step_seed = derive_seed(cfg.seed, step);
      TripletBatch triplets = sample_triplets(dcm, cfg.batch_size, derive_seed(step_seed, 0), cfg.match_negative_view);
      ViewPairBatch pairs;
      if (needs_view_pairs(cfg.loss))
        pairs = sample_view_pairs(d2d, view_instances, cfg.pairs_per_instance, derive_seed(step_seed, 1));
      if (cfg.augment) {
        std::uint64_t stream = 100;
        auto aug = [&](ImageSample& img) { img = color_augment(img, derive_seed(step_seed, stream++)); };
        for (auto& img : triplets.positives) aug(img);
        for (auto& img : triplets.negatives) aug(img);
        for (auto& [pa, pb] : pairs.pairs) {
          aug(pa);
          aug(pb);
        }
      }
      LossReport report;
      try {
        report = train_step(model, optimizer, triplets, pairs, cfg.loss);
      } catch (const LossError& e) {
        throw TrainingError("training aborted at step " + std::to_string(result.steps) + " (epoch " +
                            std::to_string(epoch) + "): " + e.what());
      }
      ++result.steps;
      result.log.push_back(report);
      if (log) log << to_json_line(model.step, report) << "\n";
      if (hooks.on_step) hooks.on_step(model.step, epoch, report);
    }
    const bool periodic = cfg.checkpoint_every > 0 && epoch % cfg.checkpoint_every == 0;
    if (run_dir && (periodic || epoch == cfg.epochs)) {
      char name[32];
      std::snprintf(name, sizeof name, "ckpt_ep%04d.bin", epoch);
      save_checkpoint(model, *run_dir / name);
      result.checkpoints.push_back(*run_dir / name);
    }
  }
  if (log) log.flush();
  return result;
}

TrainResult train(ModelState& model, const DatasetManifest& dcm, const DatasetManifest& d2d, const TrainConfig& cfg,
                  const std::optional<fs::path>& run_dir, const TrainHooks& hooks) {
  if (dcm.instances.empty() || d2d.instances.empty()) throw TrainingError("empty manifest");
  if (dcm.img_size != model.config.img_size)
    throw TrainingError("manifest img_size " + std::to_string(dcm.img_size) + " does not match model img_size " +
                        std::to_string(model.config.img_size));
  const auto dcm_images = load_images(dcm, Split::train);
  std::vector<ImageSample> d2d_images;
  for (auto& img : load_images(d2d, Split::train))
    if (img.ref.modality == Modality::photo) d2d_images.push_back(std::move(img));
  return train(model, dcm_images, d2d_images, cfg, run_dir, hooks);
}

}  // namespace freeview
