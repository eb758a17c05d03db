#include "bnn/analysis.hpp"

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <stdexcept>

namespace bnn {

WeightHistogram weight_histogram(std::span<const float> values, std::size_t bins, double saturation_threshold) {
  if (bins == 0) throw std::invalid_argument("histogram needs at least one bin");
  WeightHistogram h;
  h.edges.resize(bins + 1);
  for (std::size_t i = 0; i <= bins; ++i) h.edges[i] = -1.0 + 2.0 * static_cast<double>(i) / static_cast<double>(bins);
  h.counts.assign(bins, 0);
  for (float v : values) {
    const auto it = std::upper_bound(h.edges.begin(), h.edges.end(), static_cast<double>(v));
    const auto pos = static_cast<std::ptrdiff_t>(it - h.edges.begin()) - 1;
    ++h.counts[static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(pos, 0, static_cast<std::ptrdiff_t>(bins) - 1))];
  }
  h.saturation_fraction = saturation_fraction(values, saturation_threshold);
  return h;
}

WeightHistogram weight_histogram(const Model& model, const std::string& layer, std::size_t bins,
                                 double saturation_threshold, std::size_t epoch) {
  for (const LatentView& v : model.latent_weights()) {
    if (layer_label(v.layer) == layer || v.name == layer) {
      WeightHistogram h = weight_histogram(v.weight->value().data(), bins, saturation_threshold);
      h.layer = layer_label(v.layer);
      h.epoch = epoch;
      return h;
    }
  }
  throw std::invalid_argument("no latent layer named '" + layer + "'");
}

std::vector<WeightHistogram> latent_histograms(const Model& model, std::size_t bins, double saturation_threshold,
                                               std::size_t epoch) {
  std::vector<WeightHistogram> out;
  for (const LatentView& v : model.latent_weights()) {
    out.push_back(weight_histogram(model, layer_label(v.layer), bins, saturation_threshold, epoch));
  }
  return out;
}

namespace {

void write_metrics_row(std::ostream& out, const EpochMetrics& m) {
  out << m.epoch << ',' << m.phase << ',' << m.train_loss << ',' << m.train_acc << ',' << m.val_top1 << ','
      << m.val_topk << ',' << m.wall_s << '\n';
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  return out;
}

}  // namespace

void write_metrics_csv(std::ostream& out, const std::vector<EpochMetrics>& metrics) {
  const auto old = out.precision(17);
  out << kMetricsCsvHeader << '\n';
  for (const EpochMetrics& m : metrics) write_metrics_row(out, m);
  out.precision(old);
}

std::vector<EpochMetrics> read_metrics_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != kMetricsCsvHeader) {
    throw std::invalid_argument("metrics CSV must start with '" + std::string(kMetricsCsvHeader) + "'");
  }
  std::vector<EpochMetrics> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto cells = split_csv(line);
    if (cells.size() != 7) throw std::invalid_argument("metrics CSV row has " + std::to_string(cells.size()) + " cells");
    EpochMetrics m;
    m.epoch = std::stoul(cells[0]);
    m.phase = cells[1];
    m.train_loss = std::stod(cells[2]);
    m.train_acc = std::stod(cells[3]);
    m.val_top1 = std::stod(cells[4]);
    m.val_topk = std::stod(cells[5]);
    m.wall_s = std::stod(cells[6]);
    out.push_back(std::move(m));
  }
  return out;
}

void write_histogram_csv(std::ostream& out, const std::vector<WeightHistogram>& histograms) {
  const auto old = out.precision(17);
  out << kHistogramCsvHeader << '\n';
  for (const WeightHistogram& h : histograms) {
    for (std::size_t i = 0; i < h.counts.size(); ++i) {
      out << h.layer << ',' << h.edges[i] << ',' << h.edges[i + 1] << ',' << h.counts[i] << '\n';
    }
  }
  out.precision(old);
}

SweepReport lr_sweep_experiment(const ArchSpec& spec, const Dataset& train_set, const Dataset& val,
                                const SweepConfig& config) {
  if (config.learning_rates.size() < 2) throw std::invalid_argument("sweep needs at least two learning rates");
  if (config.seeds.empty()) throw std::invalid_argument("sweep needs at least one seed");
  SweepReport report;
  report.low_lr = *std::min_element(config.learning_rates.begin(), config.learning_rates.end());
  report.high_lr = *std::max_element(config.learning_rates.begin(), config.learning_rates.end());
  report.seeds = config.seeds.size();

  for (double lr : config.learning_rates) {
    for (std::uint64_t seed : config.seeds) {
      SweepRun run;
      run.lr = lr;
      run.seed = seed;
      TrainConfig tc = config.train;
      tc.base_lr = lr;
      tc.seed = seed;
      Rng init(seed);
      Model model = Model::build(spec, init);
      run.metrics = train(model, train_set, &val, tc, {}, {}, [&](const EpochMetrics& m, const Model& snapshot) {
        if (m.epoch != 1) return;
        run.histograms = latent_histograms(snapshot, config.bins, tc.saturation_threshold, m.epoch);
        double sum = 0.0;
        for (const auto& h : run.histograms) sum += h.saturation_fraction;
        run.mean_saturation = run.histograms.empty() ? 0.0 : sum / static_cast<double>(run.histograms.size());
      });
      report.runs.push_back(std::move(run));
    }
  }

  const auto find = [&](double lr, std::uint64_t seed) -> const SweepRun& {
    for (const SweepRun& r : report.runs)
      if (r.lr == lr && r.seed == seed) return r;
    throw std::logic_error("sweep run missing");
  };
  for (std::uint64_t seed : config.seeds) {
    const SweepRun& lo = find(report.low_lr, seed);
    const SweepRun& hi = find(report.high_lr, seed);
    if (hi.mean_saturation > lo.mean_saturation) ++report.saturation_wins;
    if (!lo.metrics.empty() && !hi.metrics.empty() && lo.metrics.back().val_top1 > hi.metrics.back().val_top1) {
      ++report.convergence_wins;
    }
  }
  return report;
}

std::string SweepReport::summary() const {
  std::ostringstream s;
  s << "learning rates: low " << low_lr << ", high " << high_lr << '\n';
  for (const SweepRun& r : runs) {
    s << "lr " << r.lr << " seed " << r.seed << ": epoch-1 mean saturation " << r.mean_saturation;
    if (!r.metrics.empty()) s << ", final val_top1 " << r.metrics.back().val_top1;
    s << '\n';
  }
  s << "saturation ordering (high > low after epoch 1): " << saturation_wins << "/" << seeds << " seeds, "
    << (saturation_replicates() ? "replicates" : "does not replicate") << '\n';
  s << "convergence ordering (low > high final accuracy): " << convergence_wins << "/" << seeds << " seeds, "
    << (convergence_replicates() ? "replicates" : "does not replicate") << '\n';
  return s.str();
}

void write_sweep_outputs(const SweepReport& report, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::ofstream metrics(dir / "sweep_metrics.csv");
  metrics.precision(17);
  metrics << "lr,seed," << kMetricsCsvHeader << '\n';
  for (const SweepRun& r : report.runs) {
    for (const EpochMetrics& m : r.metrics) {
      metrics << r.lr << ',' << r.seed << ',';
      write_metrics_row(metrics, m);
    }
    std::ostringstream name;
    name << "hist_lr" << r.lr << "_seed" << r.seed << ".csv";
    std::ofstream hist(dir / name.str());
    write_histogram_csv(hist, r.histograms);
  }
  std::ofstream(dir / "summary.txt") << report.summary();
  if (!metrics) throw std::runtime_error("failed writing " + (dir / "sweep_metrics.csv").string());
}

}  // namespace bnn
