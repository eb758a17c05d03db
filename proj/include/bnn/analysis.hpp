#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "bnn/dataset.hpp"
#include "bnn/model.hpp"
#include "bnn/trainer.hpp"

namespace bnn {

struct WeightHistogram {
  std::string layer;
  std::vector<double> edges;  // bins + 1 values, -1 to 1
  std::vector<std::size_t> counts;
  std::size_t epoch = 0;
  double saturation_fraction = 0.0;
};

/// Bins [e_i, e_i+1) with the last bin closed; values outside [-1, 1] are
/// clamped into the end bins.
WeightHistogram weight_histogram(std::span<const float> values, std::size_t bins, double saturation_threshold = 0.9);

/// Histogram of one latent layer ("layers.<i>").
WeightHistogram weight_histogram(const Model& model, const std::string& layer, std::size_t bins,
                                 double saturation_threshold = 0.9, std::size_t epoch = 0);

/// One histogram per latent layer, in layer order.
std::vector<WeightHistogram> latent_histograms(const Model& model, std::size_t bins, double saturation_threshold,
                                               std::size_t epoch);

inline constexpr const char* kMetricsCsvHeader = "epoch,phase,train_loss,train_acc,val_top1,val_topk,wall_s";
inline constexpr const char* kHistogramCsvHeader = "layer,edge_lo,edge_hi,count";

void write_metrics_csv(std::ostream& out, const std::vector<EpochMetrics>& metrics);
/// Parses the output of write_metrics_csv (saturation snapshots are not stored).
std::vector<EpochMetrics> read_metrics_csv(std::istream& in);

void write_histogram_csv(std::ostream& out, const std::vector<WeightHistogram>& histograms);

struct SweepConfig {
  std::vector<double> learning_rates{0.001, 0.01};
  std::vector<std::uint64_t> seeds{1, 2, 3};
  TrainConfig train;  // base_lr and seed are overridden per run
  std::size_t bins = 20;
};

struct SweepRun {
  double lr = 0.0;
  std::uint64_t seed = 0;
  std::vector<EpochMetrics> metrics;
  std::vector<WeightHistogram> histograms;  // after epoch 1
  double mean_saturation = 0.0;             // mean over latent layers, after epoch 1
};

struct SweepReport {
  std::vector<SweepRun> runs;
  double low_lr = 0.0, high_lr = 0.0;
  std::size_t seeds = 0;
  /// Seeds where saturation(high) > saturation(low) after epoch 1.
  std::size_t saturation_wins = 0;
  /// Seeds where final val_top1(low) > final val_top1(high).
  std::size_t convergence_wins = 0;

  bool saturation_replicates() const noexcept { return 2 * saturation_wins > seeds; }
  bool convergence_replicates() const noexcept { return 2 * convergence_wins > seeds; }
  std::string summary() const;
};

/// Trains a fresh model per (lr, seed) cell and compares the smallest and
/// largest learning rates.
SweepReport lr_sweep_experiment(const ArchSpec& spec, const Dataset& train_set, const Dataset& val,
                                const SweepConfig& config);

/// sweep_metrics.csv (lr, seed + metrics columns), hist_lr<lr>_seed<seed>.csv
/// per run and summary.txt.
void write_sweep_outputs(const SweepReport& report, const std::filesystem::path& dir);

}  // namespace bnn
