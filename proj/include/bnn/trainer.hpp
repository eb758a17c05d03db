#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "bnn/dataset.hpp"
#include "bnn/losses.hpp"
#include "bnn/model.hpp"
#include "bnn/optimizer.hpp"
#include "bnn/soft_targets.hpp"

namespace bnn {

struct LrSchedule {
  enum class Kind { constant, step };
  Kind kind = Kind::constant;
  double factor = 0.1;
  std::size_t every_n_epochs = 1;

  /// Multiplier applied to base_lr during `epoch` (0-based).
  double multiplier(std::size_t epoch) const;
};

std::string_view to_string(LrSchedule::Kind kind);
LrSchedule::Kind parse_lr_schedule(std::string_view name);

struct TrainConfig {
  double base_lr = 1e-3;
  std::size_t batch_size = 64;
  std::size_t epochs = 1;
  OptimizerConfig optimizer;
  std::uint64_t seed = 1;
  LrSchedule schedule;
  std::size_t top_k = 5;
  double saturation_threshold = 0.9;
  std::size_t eval_batch = 256;

  void validate() const;
};

struct LayerSaturation {
  std::string layer;
  double fraction = 0.0;
};

struct EpochMetrics {
  std::size_t epoch = 0;  // 1-based
  std::string phase;
  double train_loss = 0.0;
  double train_acc = 0.0;
  double val_top1 = 0.0;
  double val_topk = 0.0;
  double wall_s = 0.0;
  std::vector<LayerSaturation> saturation;
};

/// Source of teacher logits for the soft term: a cache aligned with the
/// training set or a live model.
struct TeacherSignal {
  const SoftTargetCache* cache = nullptr;
  const Model* model = nullptr;

  bool present() const noexcept { return cache != nullptr || model != nullptr; }
};

using EpochCallback = std::function<void(const EpochMetrics&, const Model&)>;

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct EvalResult {
  double top1 = 0.0;
  double topk = 0.0;
  std::size_t samples = 0;
};

/// Top-1 and top-k accuracy of inference-mode predictions. A sample counts
/// for top-k when fewer than k logits are strictly larger than its label's.
EvalResult evaluate(const Model& model, const Dataset& data, std::size_t top_k = 5, std::size_t batch_size = 256);

std::vector<std::size_t> predict(const Model& model, const Dataset& data, std::size_t batch_size = 256);

/// Fraction of elements with |w| > threshold.
double saturation_fraction(std::span<const float> values, double threshold);
std::vector<LayerSaturation> saturation_snapshot(const Model& model, double threshold);

/// Shuffled minibatch training for config.epochs epochs with the loss chosen
/// by distill.phase. `val` may be null (validation columns are then 0).
/// Throws TrainingError naming the first non-finite layer on a NaN/inf loss.
std::vector<EpochMetrics> train(Model& model, const Dataset& train_set, const Dataset* val,
                                const TrainConfig& config, const DistillConfig& distill = {},
                                TeacherSignal teacher = {}, const EpochCallback& on_epoch = {});

struct TeacherResult {
  Model model;
  std::vector<EpochMetrics> metrics;
};

/// Builds `spec` (normally all real weights) from config.seed and trains it on hard labels.
TeacherResult train_teacher(const ArchSpec& spec, const Dataset& train_set, const Dataset* val,
                            const TrainConfig& config);

struct DistillRecipeConfig {
  TrainConfig hard;      // phase 1: hard-label baseline from scratch
  TrainConfig soft;      // phase 2: soft-target pretraining from scratch
  TrainConfig combined;  // phase 3: combined loss, continues phase 2
  double temperature = 4.0;
  double alpha = 0.5;
};

struct DistillRecipeResult {
  Model baseline;
  Model student;
  std::vector<EpochMetrics> hard, soft, combined;
  EvalResult baseline_eval, student_eval;
};

/// Hard baseline, then soft-only pretraining, then combined fine-tuning of the
/// pretrained student. Both models are built from the same initialization.
DistillRecipeResult run_distillation_recipe(const ArchSpec& spec, const Dataset& train_set, const Dataset& val,
                                            TeacherSignal teacher, const DistillRecipeConfig& config,
                                            const EpochCallback& on_epoch = {});

}  // namespace bnn
