#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "freeview/datasets.hpp"
#include "freeview/losses.hpp"
#include "freeview/model.hpp"
#include "freeview/optimizer.hpp"

namespace freeview {

struct TrainConfig {
  int epochs = 30;
  int batch_size = 16;
  double lr = 1e-4;
  LossConfig loss;
  /// View pairs drawn per selected D_2D instance (clamped to C(M, 2)).
  int pairs_per_instance = 2;
  /// D_2D instances per step; 0 means batch_size / pairs_per_instance so both halves carry equal counts.
  int view_instances = 0;
  /// Optimizer steps per epoch; 0 means ceil(#D_CM instances / batch_size).
  int steps_per_epoch = 0;
  std::uint64_t seed = 0;
  bool augment = true;
  /// Take each negative at the anchor's view (see sample_triplets).
  bool match_negative_view = false;
  /// Checkpoint period in epochs; the final epoch is always checkpointed. 0 disables periodic ones.
  int checkpoint_every = 10;

  void validate() const;
  int effective_view_instances() const;

  static TrainConfig desk_profile() { return {}; }
  /// lr 1e-4, batch 64, 250 epochs.
  static TrainConfig paper_profile();
};

std::string train_config_to_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(const std::string& text);

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TrainResult {
  std::vector<LossReport> log;  ///< one report per optimizer step
  std::int64_t steps = 0;
  std::vector<std::filesystem::path> checkpoints;
};

struct TrainHooks {
  /// Called after every optimizer step.
  std::function<void(std::int64_t step, int epoch, const LossReport&)> on_step;
};

/// Trains in place. dcm: D_CM train images (sketches + same-view photos); d2d: D_2D
/// train photos. When run_dir is set, writes config.json, log.jsonl and
/// ckpt_ep{epoch:04}.bin files there.
TrainResult train(ModelState& model, std::span<const ImageSample> dcm, std::span<const ImageSample> d2d,
                  const TrainConfig& cfg, const std::optional<std::filesystem::path>& run_dir = std::nullopt,
                  const TrainHooks& hooks = {});

/// Loads the train split of both manifests, then trains.
TrainResult train(ModelState& model, const DatasetManifest& dcm, const DatasetManifest& d2d, const TrainConfig& cfg,
                  const std::optional<std::filesystem::path>& run_dir = std::nullopt, const TrainHooks& hooks = {});

/// One optimizer step on the given batches; returns the step's loss report.
LossReport train_step(ModelState& model, Adam& optimizer, const TripletBatch& triplets,
                      const ViewPairBatch& view_pairs, const LossConfig& loss);

/// cfg with `strip` removed from the loss toggles; everything else unchanged.
TrainConfig ablate(const TrainConfig& cfg, LossTerm strip);
TrainConfig ablate(const TrainConfig& cfg, std::string_view strip);

}  // namespace freeview
