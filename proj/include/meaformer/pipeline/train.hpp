#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "meaformer/data/augment.hpp"
#include "meaformer/losses/losses.hpp"
#include "meaformer/model/checkpoint.hpp"
#include "meaformer/model/meaformer.hpp"
#include "meaformer/pipeline/samples.hpp"

namespace meaformer::pipeline {

enum class Variant { Step1, Step2 };

std::string to_string(Variant v);
Variant variant_from_string(const std::string& s);

class TrainingDiverged : public std::runtime_error {
 public:
  TrainingDiverged(int64_t step, const std::string& what) : std::runtime_error(what), step_(step) {}
  int64_t step() const { return step_; }

 private:
  int64_t step_;
};

/// Schedule is counted in optimizer steps; `milestones` multiply the rate by
/// `lr_decay` once each.
struct TrainConfig {
  Variant variant = Variant::Step2;
  model::ModelConfig model = model::ModelConfig::step2();
  int64_t steps = 2000;
  int batch_size = 8;
  double lr = 1e-3;
  std::vector<int64_t> milestones{1000, 1500};
  double lr_decay = 0.1;
  uint64_t seed = 0;
  loss::LossWeights weights;
  bool augment = true;
  data::AugmentationConfig augmentation;
  bool consistency = true;       // step 2 only
  bool train_step1_seg = true;   // step 1 only
  double loi_jitter = 0.1;       // step 2: LOI built from a box jittered by this fraction of its size
  int64_t log_every = 10;
  int64_t val_every = 100;       // 0 disables validation

  void validate() const;
  double lr_at(int64_t step) const;

  /// Desk defaults; milestones at 50% and 75% of `steps`.
  static TrainConfig desk(Variant variant, int64_t steps = 2000);
  /// Published schedule (200 epochs, decay at 100 and 150, batch 16);
  /// here one unit of `steps` stands for one epoch.
  static TrainConfig paper();
};

struct ValidationMetrics {
  double dice = 0.0;         // mean over cases, view space
  double keypoint_px = 0.0;  // mean final-layer keypoint error, view pixels
};

struct TrainResult {
  model::Checkpoint checkpoint;
  std::vector<std::string> log;  // one JSON object per line
  std::optional<ValidationMetrics> final_validation;
  double final_loss = 0.0;
};

/// Fixed validation examples: a deterministic click per phantom and, at
/// step 2, the LOI of the ground-truth box.
std::vector<Example> validation_examples(const std::vector<data::Phantom>& phantoms, Variant variant, int size,
                                         uint64_t seed);

ValidationMetrics validate_model(const model::MeaFormer<float>& model, const std::vector<Example>& examples);

/// Trains `model` in place. Log records go to `log_sink` (if set) as they
/// are produced, and are also returned. Throws TrainingDiverged on a
/// non-finite loss.
TrainResult train_model(model::MeaFormer<float>& model, const std::vector<data::Phantom>& train_set,
                        const std::vector<data::Phantom>& val_set, const TrainConfig& cfg,
                        std::ostream* log_sink = nullptr);

/// Builds a fresh model from cfg.model (seeded by cfg.seed) and trains it.
TrainResult train(const std::vector<data::Phantom>& train_set, const std::vector<data::Phantom>& val_set,
                  const TrainConfig& cfg, std::ostream* log_sink = nullptr);

/// Large-block allocator settings for the training loop (glibc only).
void tune_allocator();

}  // namespace meaformer::pipeline
