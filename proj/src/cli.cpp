#include "bnn/cli.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <fstream>
#include <iomanip>
#include <iostream>
#include <numeric>
#include <optional>
#include <sstream>

#include "bnn/analysis.hpp"
#include "bnn/bench.hpp"
#include "bnn/deploy.hpp"
#include "bnn/serialize.hpp"
#include "bnn/trainer.hpp"

namespace bnn {

namespace {

using nlohmann::json;

/// Flat JSON object of option values for the active subcommand; nested
/// objects address subcommands by name. Keys may use '_' for '-'.
class JsonConfig : public CLI::Config {
 public:
  explicit JsonConfig(const CLI::App* root) : root_(root) {}

  std::string to_config(const CLI::App* app, bool default_also, bool, std::string) const override {
    json j = json::object();
    for (const CLI::Option* opt : app->get_options()) {
      if (opt->get_lnames().empty() || !opt->get_configurable()) continue;
      const std::string& name = opt->get_lnames().front();
      if (opt->count() > 0) {
        const auto& res = opt->results();
        j[name] = res.size() == 1 ? json(res.front()) : json(res);
      } else if (default_also && !opt->get_default_str().empty()) {
        j[name] = opt->get_default_str();
      }
    }
    return j.dump(2) + "\n";
  }

  std::vector<CLI::ConfigItem> from_config(std::istream& in) const override {
    json j;
    try {
      j = json::parse(in);
    } catch (const json::parse_error& e) {
      throw CLI::ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    if (!j.is_object()) throw CLI::ConfigError("config must be a JSON object");
    std::vector<std::string> parents;
    for (const CLI::App* sub : root_->get_subcommands()) parents.push_back(sub->get_name());
    std::vector<CLI::ConfigItem> items;
    collect(j, parents, items);
    return items;
  }

 private:
  static std::string scalar(const json& v) {
    if (v.is_string()) return v.get<std::string>();
    if (v.is_boolean()) return v.get<bool>() ? "true" : "false";
    return v.dump();
  }

  static void collect(const json& obj, const std::vector<std::string>& parents, std::vector<CLI::ConfigItem>& out) {
    for (const auto& [key, value] : obj.items()) {
      std::string name = key;
      std::replace(name.begin(), name.end(), '_', '-');
      if (value.is_object()) {
        collect(value, {name}, out);
        continue;
      }
      CLI::ConfigItem item;
      item.parents = parents;
      item.name = name;
      if (value.is_array()) {
        for (const json& v : value) item.inputs.push_back(scalar(v));
      } else {
        item.inputs.push_back(scalar(value));
      }
      out.push_back(std::move(item));
    }
  }

  const CLI::App* root_;
};

// ---------------------------------------------------------------------------
// Shared option groups

struct DataArgs {
  std::string format = "idx";
  std::string train_images, train_labels, val_images, val_labels;
  std::vector<std::string> train_batches, val_batches;
  std::size_t synthetic_train = 10000, synthetic_val = 2000;
  std::uint64_t synthetic_seed = 1;
  double synthetic_noise = SyntheticImageOptions{}.noise;
  std::size_t holdout = 0;
  std::size_t limit = 0;

  void add(CLI::App* app) {
    app->add_option("--format", format, "Dataset format")
        ->check(CLI::IsMember({"idx", "cifar", "synthetic"}))
        ->capture_default_str();
    app->add_option("--train-images", train_images, "IDX training images");
    app->add_option("--train-labels", train_labels, "IDX training labels");
    app->add_option("--val-images", val_images, "IDX validation images");
    app->add_option("--val-labels", val_labels, "IDX validation labels");
    app->add_option("--train-batch", train_batches, "CIFAR-10 training batch file (repeatable)");
    app->add_option("--val-batch", val_batches, "CIFAR-10 validation batch file (repeatable)");
    app->add_option("--synthetic-train", synthetic_train, "Synthetic training samples")->capture_default_str();
    app->add_option("--synthetic-val", synthetic_val, "Synthetic validation samples")->capture_default_str();
    app->add_option("--synthetic-seed", synthetic_seed, "Synthetic sample seed")->capture_default_str();
    app->add_option("--synthetic-noise", synthetic_noise, "Synthetic pixel noise standard deviation")
        ->check(CLI::NonNegativeNumber)
        ->capture_default_str();
    app->add_option("--holdout", holdout, "Use the last N training samples as validation when no validation files are given");
    app->add_option("--limit", limit, "Keep only the first N training samples");
  }

  struct Loaded {
    Dataset train;
    std::optional<Dataset> val;
  };

  Loaded load() const {
    Loaded r;
    std::optional<Dataset> all_train;
    if (format == "idx") {
      if (train_images.empty() || train_labels.empty()) {
        throw std::invalid_argument("--train-images and --train-labels are required for idx data");
      }
      all_train = load_idx(train_images, train_labels, "train");
      if (!val_images.empty()) r.val = load_idx(val_images, val_labels, "val");
    } else if (format == "cifar") {
      if (train_batches.empty()) throw std::invalid_argument("--train-batch is required for cifar data");
      std::vector<std::filesystem::path> tp(train_batches.begin(), train_batches.end());
      all_train = load_cifar10(tp, "train");
      if (!val_batches.empty()) {
        std::vector<std::filesystem::path> vp(val_batches.begin(), val_batches.end());
        r.val = load_cifar10(vp, "val");
      }
    } else {
      SyntheticImageOptions o;
      o.samples = synthetic_train;
      o.seed = synthetic_seed;
      o.noise = synthetic_noise;
      all_train = make_synthetic_images(o, "train");
      o.samples = synthetic_val;
      o.seed = synthetic_seed + 1000003;
      r.val = make_synthetic_images(o, "val");
    }
    Dataset train = std::move(*all_train);
    if (!r.val && holdout > 0) {
      if (holdout >= train.size()) throw std::invalid_argument("--holdout leaves no training samples");
      r.val = subset(train, train.size() - holdout, holdout, "val");
      train = subset(train, 0, train.size() - holdout, "train");
    }
    if (limit > 0 && limit < train.size()) train = subset(train, 0, limit, "train");
    return {std::move(train), std::move(r.val)};
  }
};

struct SpecArgs {
  std::string arch = "table1";
  std::string spec_file;
  double width = 1.0 / 16.0;
  double scaling = 1.0;
  double dropout = -1.0;
  std::vector<std::size_t> hidden{256, 256};

  void add(CLI::App* app) {
    app->add_option("--arch", arch, "Architecture builder")
        ->check(CLI::IsMember({"table1", "alexnet", "teacher", "mlp"}))
        ->capture_default_str();
    app->add_option("--spec", spec_file, "Architecture JSON file (overrides --arch)");
    app->add_option("--width", width, "Channel width multiplier")->capture_default_str();
    app->add_option("--scaling", scaling, "Scaling-layer factor")->capture_default_str();
    app->add_option("--dropout", dropout, "Dropout ratio (builder default when negative)");
    app->add_option("--hidden", hidden, "Hidden widths for --arch mlp");
  }

  ArchSpec build(const Dataset& data) const {
    ArchSpec spec;
    if (!spec_file.empty()) {
      std::ifstream in(spec_file);
      if (!in) throw std::invalid_argument("cannot open " + spec_file);
      std::stringstream ss;
      ss << in.rdbuf();
      spec = arch_from_json(ss.str());
    } else {
      const Shape s = data.sample_shape();
      if (s[1] != s[2]) throw std::invalid_argument("builders need square inputs");
      const std::size_t res = s[1], ch = s[0], k = data.num_classes;
      if (arch == "table1") {
        spec = table1_spec(res, k, width, ch, dropout < 0 ? 0.2 : dropout, scaling);
      } else if (arch == "alexnet") {
        spec = alexnet_like_spec(res, k, width, ch, dropout < 0 ? 0.5 : dropout, scaling);
      } else if (arch == "teacher") {
        spec = float_teacher_spec(res, k, ch, width);
      } else {
        spec = binary_mlp_spec(s[0] * s[1] * s[2], hidden, k);
      }
    }
    validate(spec);
    return spec;
  }
};

struct TrainArgs {
  TrainConfig cfg;
  std::string optimizer = "adam";
  std::string schedule = "constant";

  void add(CLI::App* app) {
    app->add_option("--base-lr", cfg.base_lr, "Base learning rate")->capture_default_str();
    app->add_option("--batch-size", cfg.batch_size, "Minibatch size")->capture_default_str();
    app->add_option("--epochs", cfg.epochs, "Epochs")->capture_default_str();
    app->add_option("--optimizer", optimizer, "Optimizer")->check(CLI::IsMember({"adam", "sgd"}))->capture_default_str();
    app->add_option("--beta1", cfg.optimizer.beta1, "Adam beta1")->capture_default_str();
    app->add_option("--beta2", cfg.optimizer.beta2, "Adam beta2")->capture_default_str();
    app->add_option("--adam-epsilon", cfg.optimizer.epsilon, "Adam epsilon")->capture_default_str();
    app->add_option("--momentum", cfg.optimizer.momentum, "SGD momentum")->capture_default_str();
    app->add_option("--seed", cfg.seed, "Seed for initialization, shuffling and dropout")->capture_default_str();
    app->add_option("--lr-schedule", schedule, "Learning-rate schedule")
        ->check(CLI::IsMember({"constant", "step"}))
        ->capture_default_str();
    app->add_option("--lr-step-factor", cfg.schedule.factor, "Step schedule factor")->capture_default_str();
    app->add_option("--lr-step-every", cfg.schedule.every_n_epochs, "Step schedule period in epochs")
        ->capture_default_str();
    app->add_option("--top-k", cfg.top_k, "k for top-k accuracy")->capture_default_str();
    app->add_option("--saturation-threshold", cfg.saturation_threshold, "|w| above which a latent weight is saturated")
        ->capture_default_str();
    app->add_option("--eval-batch", cfg.eval_batch, "Evaluation batch size")->capture_default_str();
  }

  TrainConfig resolve() const {
    TrainConfig c = cfg;
    c.optimizer.kind = parse_optimizer_kind(optimizer);
    c.schedule.kind = parse_lr_schedule(schedule);
    c.validate();
    return c;
  }
};

struct DistillArgs {
  DistillConfig cfg;
  std::string phase = "hard_only";
  std::string teacher_model;

  void add(CLI::App* app, bool with_phase) {
    app->add_option("--temperature", cfg.temperature, "Distillation temperature")->capture_default_str();
    app->add_option("--alpha", cfg.alpha, "Soft-loss weight in the combined phase")->capture_default_str();
    if (with_phase) {
      app->add_option("--phase", phase, "Loss phase")
          ->check(CLI::IsMember({"hard_only", "soft_only", "combined"}))
          ->capture_default_str();
    }
    app->add_option("--teacher-cache", cfg.teacher_cache, "Soft-target cache file");
    app->add_option("--teacher", teacher_model, "Live teacher model (BNNM)");
  }

  DistillConfig resolve() const {
    DistillConfig c = cfg;
    c.phase = parse_distill_phase(phase);
    c.validate();
    return c;
  }
};

/// Teacher signal storage for the lifetime of a command.
struct TeacherHolder {
  std::optional<SoftTargetCache> cache;
  std::optional<Model> model;

  TeacherSignal load(const DistillArgs& args, const Dataset& train_set) {
    if (!args.cfg.teacher_cache.empty()) cache = load_soft_targets(args.cfg.teacher_cache, train_set);
    if (!args.teacher_model.empty()) model = load_model(args.teacher_model);
    return {cache ? &*cache : nullptr, model ? &*model : nullptr};
  }
};

void write_file(const std::string& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << text;
}

std::string metrics_csv(const std::vector<EpochMetrics>& metrics) {
  std::ostringstream s;
  write_metrics_csv(s, metrics);
  return s.str();
}

void print_epoch(std::ostream& out, const EpochMetrics& m) {
  out << std::setprecision(6) << "[" << m.phase << "] epoch " << m.epoch << ": loss " << m.train_loss << ", train acc "
      << m.train_acc << ", val top1 " << m.val_top1 << ", val topk " << m.val_topk << ", " << m.wall_s << " s\n";
  out.flush();
}

const Dataset& val_or_train(const DataArgs::Loaded& d) { return d.val ? *d.val : d.train; }

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Binarized network training, distillation and XNOR inference", "bnn"};
  app.require_subcommand(1);
  app.fallthrough();
  app.set_config("--config", "", "JSON config file; command-line flags take precedence");
  app.config_formatter(std::make_shared<JsonConfig>(&app));
  app.allow_config_extras(CLI::config_extras_mode::error);

  // train
  auto* train_cmd = app.add_subcommand("train", "Train a model from an architecture spec");
  DataArgs train_data;
  SpecArgs train_spec;
  TrainArgs train_args;
  DistillArgs train_distill;
  std::string train_out = "model.bnnm", train_metrics, train_init, train_hist_dir;
  std::size_t train_bins = 20;
  train_data.add(train_cmd);
  train_spec.add(train_cmd);
  train_args.add(train_cmd);
  train_distill.add(train_cmd, true);
  train_cmd->add_option("--out", train_out, "Output model (BNNM)")->capture_default_str();
  train_cmd->add_option("--metrics", train_metrics, "Metrics CSV");
  train_cmd->add_option("--init", train_init, "Continue from this model instead of a fresh one");
  train_cmd->add_option("--hist-dir", train_hist_dir, "Write per-epoch latent weight histograms here");
  train_cmd->add_option("--bins", train_bins, "Histogram bins")->capture_default_str();

  // teach
  auto* teach_cmd = app.add_subcommand("teach", "Train a float teacher network");
  DataArgs teach_data;
  TrainArgs teach_args;
  double teach_width = 1.0;
  std::string teach_out = "teacher.bnnm", teach_metrics;
  teach_data.add(teach_cmd);
  teach_args.add(teach_cmd);
  teach_cmd->add_option("--width", teach_width, "Teacher width multiplier")->capture_default_str();
  teach_cmd->add_option("--out", teach_out, "Output teacher model")->capture_default_str();
  teach_cmd->add_option("--metrics", teach_metrics, "Metrics CSV");

  // soften
  auto* soften_cmd = app.add_subcommand("soften", "Cache teacher logits for a training set");
  DataArgs soften_data;
  std::string soften_teacher, soften_out = "soft_targets.bin";
  soften_data.add(soften_cmd);
  soften_cmd->add_option("--teacher", soften_teacher, "Teacher model (BNNM)")->required();
  soften_cmd->add_option("--out", soften_out, "Output cache file")->capture_default_str();

  // distill
  auto* distill_cmd = app.add_subcommand("distill", "Hard baseline, soft pretraining, combined fine-tuning");
  DataArgs distill_data;
  SpecArgs distill_spec;
  TrainArgs distill_args;
  DistillArgs distill_distill;
  std::size_t hard_epochs = 3, soft_epochs = 3, combined_epochs = 2;
  double combined_lr_factor = 1.0;
  std::string distill_out = "distill";
  distill_data.add(distill_cmd);
  distill_spec.add(distill_cmd);
  distill_args.add(distill_cmd);
  distill_distill.add(distill_cmd, false);
  distill_cmd->add_option("--hard-epochs", hard_epochs, "Baseline epochs")->capture_default_str();
  distill_cmd->add_option("--soft-epochs", soft_epochs, "Soft-only epochs")->capture_default_str();
  distill_cmd->add_option("--combined-epochs", combined_epochs, "Combined fine-tuning epochs")->capture_default_str();
  distill_cmd->add_option("--combined-lr-factor", combined_lr_factor, "Fine-tuning LR relative to --base-lr")
      ->capture_default_str();
  distill_cmd->add_option("--out-dir", distill_out, "Output directory")->capture_default_str();

  // eval
  auto* eval_cmd = app.add_subcommand("eval", "Top-1 / top-k accuracy of a model");
  DataArgs eval_data;
  std::string eval_model;
  std::size_t eval_k = 5;
  eval_data.add(eval_cmd);
  eval_cmd->add_option("--model", eval_model, "Model (BNNM)")->required();
  eval_cmd->add_option("--top-k", eval_k, "k for top-k accuracy")->capture_default_str();

  // export
  auto* export_cmd = app.add_subcommand("export", "Convert a BNNM model to the BNNX deployment format");
  std::string export_in, export_out = "model.bnnx";
  export_cmd->add_option("--model", export_in, "Model (BNNM)")->required();
  export_cmd->add_option("--out", export_out, "Output deployment file")->capture_default_str();

  // infer
  auto* infer_cmd = app.add_subcommand("infer", "Run the XNOR deployment model over a dataset");
  DataArgs infer_data;
  std::string infer_model, infer_reference, infer_predictions;
  infer_data.add(infer_cmd);
  infer_cmd->add_option("--deployed", infer_model, "Deployment model (BNNX)")->required();
  infer_cmd->add_option("--reference", infer_reference, "Float model (BNNM) for the agreement check");
  infer_cmd->add_option("--predictions", infer_predictions, "Write index,label,prediction CSV");

  // bench
  auto* bench_cmd = app.add_subcommand("bench", "XNOR versus float kernel benchmarks");
  std::string bench_csv;
  double bench_seconds = 0.2;
  bench_cmd->add_option("--csv", bench_csv, "Also write the CSV here");
  bench_cmd->add_option("--min-seconds", bench_seconds, "Minimum timing window per path")->capture_default_str();

  // sweep
  auto* sweep_cmd = app.add_subcommand("sweep", "Learning-rate sweep with weight-distribution snapshots");
  DataArgs sweep_data;
  SpecArgs sweep_spec;
  TrainArgs sweep_args;
  std::vector<double> sweep_lrs{0.001, 0.01};
  std::vector<std::uint64_t> sweep_seeds{1, 2, 3};
  std::size_t sweep_bins = 20;
  std::string sweep_out = "sweep";
  sweep_data.add(sweep_cmd);
  sweep_spec.add(sweep_cmd);
  sweep_args.add(sweep_cmd);
  sweep_cmd->add_option("--lr", sweep_lrs, "Learning rates")->capture_default_str();
  sweep_cmd->add_option("--seeds", sweep_seeds, "Seeds")->capture_default_str();
  sweep_cmd->add_option("--bins", sweep_bins, "Histogram bins")->capture_default_str();
  sweep_cmd->add_option("--out-dir", sweep_out, "Output directory")->capture_default_str();

  // hist
  auto* hist_cmd = app.add_subcommand("hist", "Latent weight histograms of a model");
  std::string hist_model, hist_layer, hist_out;
  std::size_t hist_bins = 20;
  double hist_threshold = 0.9;
  hist_cmd->add_option("--model", hist_model, "Model (BNNM)")->required();
  hist_cmd->add_option("--layer", hist_layer, "Layer id (layers.<i>); all latent layers when omitted");
  hist_cmd->add_option("--bins", hist_bins, "Bins")->capture_default_str();
  hist_cmd->add_option("--saturation-threshold", hist_threshold, "Saturation threshold")->capture_default_str();
  hist_cmd->add_option("--out", hist_out, "Write the CSV here instead of stdout");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << (app.get_subcommands().empty() ? app.help() : app.get_subcommands().front()->help());
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: usage: " << e.what() << "\n" << app.help();
    return 2;
  }

  try {
    if (train_cmd->parsed()) {
      const auto data = train_data.load();
      const TrainConfig cfg = train_args.resolve();
      const DistillConfig dcfg = train_distill.resolve();
      std::optional<Model> model;
      if (!train_init.empty()) {
        model = load_model(train_init);
      } else {
        Rng init(cfg.seed);
        model = Model::build(train_spec.build(data.train), init);
      }
      TeacherHolder teacher;
      const TeacherSignal signal = teacher.load(train_distill, data.train);
      if (!train_hist_dir.empty()) std::filesystem::create_directories(train_hist_dir);
      const auto metrics = train(*model, data.train, data.val ? &*data.val : nullptr, cfg, dcfg, signal,
                                 [&](const EpochMetrics& m, const Model& snapshot) {
                                   print_epoch(out, m);
                                   if (train_hist_dir.empty()) return;
                                   std::ofstream h(std::filesystem::path(train_hist_dir) /
                                                   ("hist_epoch" + std::to_string(m.epoch) + ".csv"));
                                   write_histogram_csv(
                                       h, latent_histograms(snapshot, train_bins, cfg.saturation_threshold, m.epoch));
                                 });
      save_model(*model, train_out);
      if (!train_metrics.empty()) write_file(train_metrics, metrics_csv(metrics));
      out << "saved " << train_out << " (" << model->parameter_count() << " parameters)\n";
    } else if (teach_cmd->parsed()) {
      const auto data = teach_data.load();
      const Shape s = data.train.sample_shape();
      const ArchSpec spec = float_teacher_spec(s[1], data.train.num_classes, s[0], teach_width);
      TeacherResult r = train_teacher(spec, data.train, data.val ? &*data.val : nullptr, teach_args.resolve());
      for (const auto& m : r.metrics) print_epoch(out, m);
      save_model(r.model, teach_out);
      if (!teach_metrics.empty()) write_file(teach_metrics, metrics_csv(r.metrics));
      out << "saved " << teach_out << "\n";
    } else if (soften_cmd->parsed()) {
      const auto data = soften_data.load();
      const Model teacher = load_model(soften_teacher);
      const SoftTargetCache cache = generate_soft_targets(teacher, data.train);
      save_soft_targets(cache, soften_out);
      out << "saved " << soften_out << ": " << cache.samples << " x " << cache.classes << " logits, dataset "
          << to_hex(cache.checksum) << "\n";
    } else if (distill_cmd->parsed()) {
      const auto data = distill_data.load();
      if (!data.val) throw std::invalid_argument("distill needs validation data (files or --holdout)");
      const ArchSpec spec = distill_spec.build(data.train);
      TeacherHolder teacher;
      const TeacherSignal signal = teacher.load(distill_distill, data.train);
      DistillRecipeConfig rc;
      rc.hard = rc.soft = rc.combined = distill_args.resolve();
      rc.hard.epochs = hard_epochs;
      rc.soft.epochs = soft_epochs;
      rc.combined.epochs = combined_epochs;
      rc.combined.base_lr *= combined_lr_factor;
      rc.temperature = distill_distill.cfg.temperature;
      rc.alpha = distill_distill.cfg.alpha;
      DistillRecipeResult r = run_distillation_recipe(spec, data.train, *data.val, signal, rc,
                                                      [&](const EpochMetrics& m, const Model&) { print_epoch(out, m); });
      std::filesystem::create_directories(distill_out);
      const std::filesystem::path dir(distill_out);
      save_model(r.baseline, dir / "baseline.bnnm");
      save_model(r.student, dir / "student.bnnm");
      std::vector<EpochMetrics> all = r.hard;
      all.insert(all.end(), r.soft.begin(), r.soft.end());
      all.insert(all.end(), r.combined.begin(), r.combined.end());
      write_file((dir / "metrics.csv").string(), metrics_csv(all));
      out << std::setprecision(17) << "baseline_top1=" << r.baseline_eval.top1 << " student_top1=" << r.student_eval.top1
          << " delta=" << r.student_eval.top1 - r.baseline_eval.top1 << "\n";
    } else if (eval_cmd->parsed()) {
      const auto data = eval_data.load();
      const Model model = load_model(eval_model);
      const EvalResult e = evaluate(model, val_or_train(data), eval_k);
      out << std::setprecision(17) << "top1=" << e.top1 << " topk=" << e.topk << " k=" << eval_k
          << " samples=" << e.samples << "\n";
    } else if (export_cmd->parsed()) {
      const DeployedModel d = export_model(load_model(export_in));
      save_deployed(d, export_out);
      out << "saved " << export_out << " (" << d.xnor_layer_count() << " xnor layers)\n";
    } else if (infer_cmd->parsed()) {
      const auto data = infer_data.load();
      const Dataset& set = val_or_train(data);
      const DeployedModel d = load_deployed(infer_model);
      std::optional<Model> reference;
      if (!infer_reference.empty()) reference = load_model(infer_reference);
      std::vector<std::size_t> pred, ref_pred;
      std::vector<std::size_t> idx;
      for (std::size_t begin = 0; begin < set.size(); begin += 256) {
        idx.resize(std::min<std::size_t>(256, set.size() - begin));
        std::iota(idx.begin(), idx.end(), begin);
        const Tensor x = gather_images(set, idx);
        const auto p = argmax_rows(run_inference(d, x));
        pred.insert(pred.end(), p.begin(), p.end());
        if (reference) {
          const auto q = argmax_rows(reference_inference(*reference, x));
          ref_pred.insert(ref_pred.end(), q.begin(), q.end());
        }
      }
      std::size_t correct = 0, agree = 0;
      for (std::size_t i = 0; i < pred.size(); ++i) {
        correct += pred[i] == set.labels[i];
        if (reference) agree += pred[i] == ref_pred[i];
      }
      if (!infer_predictions.empty()) {
        std::ofstream p(infer_predictions);
        p << "index,label,prediction\n";
        for (std::size_t i = 0; i < pred.size(); ++i) p << i << ',' << set.labels[i] << ',' << pred[i] << '\n';
      }
      out << std::setprecision(17) << "samples=" << pred.size()
          << " top1=" << static_cast<double>(correct) / static_cast<double>(pred.size());
      if (reference) {
        out << " agreement=" << static_cast<double>(agree) / static_cast<double>(pred.size());
      }
      out << "\n";
      if (reference && agree != pred.size()) {
        err << "error: agreement: xnor and float predictions differ on " << pred.size() - agree << " samples\n";
        return 1;
      }
    } else if (bench_cmd->parsed()) {
      BenchOptions o;
      o.min_seconds = bench_seconds;
      std::vector<BenchRow> rows;
      for (const auto& s : default_gemm_shapes()) rows.push_back(bench_gemm(s, o));
      for (const auto& s : default_conv_shapes()) rows.push_back(bench_conv(s, o));
      write_bench_csv(out, rows);
      if (!bench_csv.empty()) {
        std::ofstream f(bench_csv);
        write_bench_csv(f, rows);
      }
    } else if (sweep_cmd->parsed()) {
      const auto data = sweep_data.load();
      if (!data.val) throw std::invalid_argument("sweep needs validation data (files or --holdout)");
      SweepConfig sc;
      sc.learning_rates = sweep_lrs;
      sc.seeds = sweep_seeds;
      sc.train = sweep_args.resolve();
      sc.bins = sweep_bins;
      const SweepReport report = lr_sweep_experiment(sweep_spec.build(data.train), data.train, *data.val, sc);
      write_sweep_outputs(report, sweep_out);
      out << report.summary();
    } else if (hist_cmd->parsed()) {
      const Model model = load_model(hist_model);
      std::vector<WeightHistogram> hs;
      if (hist_layer.empty()) {
        hs = latent_histograms(model, hist_bins, hist_threshold, 0);
      } else {
        hs.push_back(weight_histogram(model, hist_layer, hist_bins, hist_threshold));
      }
      if (hist_out.empty()) {
        write_histogram_csv(out, hs);
      } else {
        std::ofstream f(hist_out);
        write_histogram_csv(f, hs);
      }
    }
  } catch (const FormatError& e) {
    err << "error: format: " << e.what() << "\n";
    return 1;
  } catch (const DatasetError& e) {
    err << "error: dataset: " << e.what() << "\n";
    return 1;
  } catch (const SpecError& e) {
    err << "error: spec: " << e.what() << "\n";
    return 1;
  } catch (const TrainingError& e) {
    err << "error: training: " << e.what() << "\n";
    return 1;
  } catch (const std::invalid_argument& e) {
    err << "error: argument: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    err << "error: runtime: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

}  // namespace bnn
