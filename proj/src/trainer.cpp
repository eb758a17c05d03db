#include "bnn/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>

namespace bnn {

double LrSchedule::multiplier(std::size_t epoch) const {
  if (kind == Kind::constant) return 1.0;
  return std::pow(factor, static_cast<double>(epoch / every_n_epochs));
}

std::string_view to_string(LrSchedule::Kind kind) {
  return kind == LrSchedule::Kind::constant ? "constant" : "step";
}

LrSchedule::Kind parse_lr_schedule(std::string_view name) {
  if (name == "constant") return LrSchedule::Kind::constant;
  if (name == "step") return LrSchedule::Kind::step;
  throw std::invalid_argument("unknown lr schedule '" + std::string(name) + "'");
}

void TrainConfig::validate() const {
  if (!(base_lr > 0.0) || !std::isfinite(base_lr)) throw std::invalid_argument("base_lr must be positive");
  if (batch_size == 0) throw std::invalid_argument("batch_size must be positive");
  if (top_k == 0) throw std::invalid_argument("top_k must be positive");
  if (eval_batch == 0) throw std::invalid_argument("eval_batch must be positive");
  if (schedule.kind == LrSchedule::Kind::step && (schedule.every_n_epochs == 0 || !(schedule.factor > 0.0))) {
    throw std::invalid_argument("step schedule needs every_n_epochs > 0 and factor > 0");
  }
  optimizer.validate();
}

namespace {

void check_input(const Model& model, const Dataset& data) {
  const InputShape& in = model.spec().input;
  const Shape want{in.channels, in.height, in.width};
  if (!accepts_sample_shape(model.spec(), data.sample_shape())) {
    throw std::invalid_argument("dataset samples are " + shape_str(data.sample_shape()) + ", model expects " +
                                shape_str(want));
  }
  if (data.num_classes > model.spec().num_classes) {
    throw std::invalid_argument("dataset has more classes than the model outputs");
  }
}

std::size_t argmax_row(const float* row, std::size_t n) {
  return static_cast<std::size_t>(std::max_element(row, row + n) - row);
}

}  // namespace

std::vector<std::size_t> predict(const Model& model, const Dataset& data, std::size_t batch_size) {
  check_input(model, data);
  const std::size_t k = model.spec().num_classes;
  std::vector<std::size_t> out(data.size()), idx;
  for (std::size_t begin = 0; begin < data.size(); begin += batch_size) {
    const std::size_t n = std::min(batch_size, data.size() - begin);
    idx.resize(n);
    std::iota(idx.begin(), idx.end(), begin);
    const Tensor logits = model.infer_logits(gather_images(data, idx));
    for (std::size_t i = 0; i < n; ++i) out[begin + i] = argmax_row(logits.raw() + i * k, k);
  }
  return out;
}

EvalResult evaluate(const Model& model, const Dataset& data, std::size_t top_k, std::size_t batch_size) {
  check_input(model, data);
  const std::size_t k = model.spec().num_classes;
  std::size_t hit1 = 0, hitk = 0;
  std::vector<std::size_t> idx;
  for (std::size_t begin = 0; begin < data.size(); begin += batch_size) {
    const std::size_t n = std::min(batch_size, data.size() - begin);
    idx.resize(n);
    std::iota(idx.begin(), idx.end(), begin);
    const Tensor logits = model.infer_logits(gather_images(data, idx));
    for (std::size_t i = 0; i < n; ++i) {
      const float* row = logits.raw() + i * k;
      const std::size_t label = data.labels[begin + i];
      if (argmax_row(row, k) == label) ++hit1;
      const auto above = static_cast<std::size_t>(
          std::count_if(row, row + k, [&](float v) { return v > row[label]; }));
      if (above < top_k) ++hitk;
    }
  }
  const double total = static_cast<double>(data.size());
  return {static_cast<double>(hit1) / total, static_cast<double>(hitk) / total, data.size()};
}

double saturation_fraction(std::span<const float> values, double threshold) {
  if (values.empty()) return 0.0;
  const auto n = std::count_if(values.begin(), values.end(), [&](float v) { return std::fabs(v) > threshold; });
  return static_cast<double>(n) / static_cast<double>(values.size());
}

std::vector<LayerSaturation> saturation_snapshot(const Model& model, double threshold) {
  std::vector<LayerSaturation> out;
  for (const LatentView& v : model.latent_weights()) {
    out.push_back({layer_label(v.layer), saturation_fraction(v.weight->value().data(), threshold)});
  }
  return out;
}

std::vector<EpochMetrics> train(Model& model, const Dataset& train_set, const Dataset* val,
                                const TrainConfig& config, const DistillConfig& distill, TeacherSignal teacher,
                                const EpochCallback& on_epoch) {
  config.validate();
  distill.validate();
  check_input(model, train_set);
  if (val != nullptr) check_input(model, *val);
  const bool needs_teacher = distill.effective_alpha() > 0.0;
  if (needs_teacher && !teacher.present()) {
    throw std::invalid_argument("phase " + std::string(to_string(distill.phase)) + " needs a teacher signal");
  }
  if (needs_teacher && teacher.cache != nullptr) {
    if (teacher.cache->checksum != train_set.checksum || teacher.cache->samples != train_set.size()) {
      throw std::invalid_argument("soft-target cache does not belong to the training set");
    }
    if (teacher.cache->classes != model.spec().num_classes) {
      throw std::invalid_argument("soft-target cache class count differs from the model");
    }
  }

  Rng rng(config.seed);
  Optimizer optimizer(config.optimizer);
  const float scaling = static_cast<float>(model.spec().scaling_factor);
  const std::size_t k = model.spec().num_classes;
  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  std::vector<EpochMetrics> history;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    std::shuffle(order.begin(), order.end(), rng);
    const double lr = config.base_lr * config.schedule.multiplier(epoch);
    double loss_sum = 0.0;
    std::size_t correct = 0;

    for (std::size_t begin = 0, batch = 0; begin < order.size(); begin += config.batch_size, ++batch) {
      const std::size_t n = std::min(config.batch_size, order.size() - begin);
      const std::span<const std::size_t> idx(order.data() + begin, n);
      const Tensor x = gather_images(train_set, idx);
      const std::vector<std::size_t> y = gather_labels(train_set, idx);

      const Tensor logits = model.forward(x, Mode::train, rng);
      std::optional<Tensor> teacher_logits;
      if (needs_teacher) {
        teacher_logits = teacher.cache != nullptr ? teacher.cache->rows(idx) : teacher.model->infer_logits(x);
      }
      const LossResult<float> loss =
          combined_loss(logits, teacher_logits ? &*teacher_logits : nullptr, y, scaling, distill);
      if (!std::isfinite(loss.loss) || model.first_nonfinite_layer()) {
        const auto& layer = model.first_nonfinite_layer();
        throw TrainingError("non-finite loss at epoch " + std::to_string(epoch + 1) + ", batch " +
                            std::to_string(batch) + "; first non-finite layer: " +
                            (layer ? *layer : std::string("loss")));
      }
      loss_sum += static_cast<double>(loss.loss) * static_cast<double>(n);
      for (std::size_t i = 0; i < n; ++i) correct += argmax_row(logits.raw() + i * k, k) == y[i];

      model.backward(loss.grad);
      const std::vector<ParamRef> params = model.parameters();
      optimizer.step(params, lr);
#ifndef NDEBUG
      for (const LatentView& v : model.latent_weights()) {
        if (!latent_in_range(v.weight->value())) throw std::logic_error(v.name + " left [-1, 1] after a step");
      }
#endif
    }

    EpochMetrics m;
    m.epoch = epoch + 1;
    m.phase = std::string(to_string(distill.phase));
    m.train_loss = loss_sum / static_cast<double>(train_set.size());
    m.train_acc = static_cast<double>(correct) / static_cast<double>(train_set.size());
    if (val != nullptr) {
      const EvalResult e = evaluate(model, *val, config.top_k, config.eval_batch);
      m.val_top1 = e.top1;
      m.val_topk = e.topk;
    }
    m.saturation = saturation_snapshot(model, config.saturation_threshold);
    m.wall_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    history.push_back(m);
    if (on_epoch) on_epoch(history.back(), model);
  }
  return history;
}

TeacherResult train_teacher(const ArchSpec& spec, const Dataset& train_set, const Dataset* val,
                            const TrainConfig& config) {
  Rng init(config.seed);
  TeacherResult result{Model::build(spec, init), {}};
  result.metrics = train(result.model, train_set, val, config);
  return result;
}

DistillRecipeResult run_distillation_recipe(const ArchSpec& spec, const Dataset& train_set, const Dataset& val,
                                            TeacherSignal teacher, const DistillRecipeConfig& config,
                                            const EpochCallback& on_epoch) {
  if (!teacher.present()) throw std::invalid_argument("distillation recipe needs a teacher signal");
  Rng init(config.hard.seed);
  const Model initial = Model::build(spec, init);
  DistillRecipeResult r{initial, initial, {}, {}, {}, {}, {}};

  DistillConfig d;
  d.temperature = config.temperature;
  d.alpha = config.alpha;

  d.phase = DistillPhase::hard_only;
  r.hard = train(r.baseline, train_set, &val, config.hard, d, teacher, on_epoch);

  d.phase = DistillPhase::soft_only;
  r.soft = train(r.student, train_set, &val, config.soft, d, teacher, on_epoch);

  d.phase = DistillPhase::combined;
  r.combined = train(r.student, train_set, &val, config.combined, d, teacher, on_epoch);

  r.baseline_eval = evaluate(r.baseline, val, config.hard.top_k, config.hard.eval_batch);
  r.student_eval = evaluate(r.student, val, config.combined.top_k, config.combined.eval_batch);
  return r;
}

}  // namespace bnn
