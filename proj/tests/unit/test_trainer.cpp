#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <numeric>
#include <random>

#include "bnn/losses.hpp"
#include "bnn/optimizer.hpp"
#include "bnn/serialize.hpp"
#include "bnn/soft_targets.hpp"
#include "bnn/trainer.hpp"
#include "oracles.hpp"

using namespace bnn;

namespace {

// Points in [0,1]^d labelled by a random hyperplane through the centre, with
// a margin band removed.
Dataset separable_set(std::size_t n, std::size_t d, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::mt19937_64 plane_rng(99);
  const TensorD w = oracle::random_tensor({d}, plane_rng);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  Tensor images({n, d, 1, 1});
  std::vector<std::size_t> labels;
  for (std::size_t i = 0; i < n;) {
    double s = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      images[i * d + j] = u(rng);
      s += w[j] * (images[i * d + j] - 0.5);
    }
    if (std::fabs(s) < 0.1) continue;
    labels.push_back(s > 0 ? 1 : 0);
    ++i;
  }
  return make_dataset(std::move(images), std::move(labels), 2, "toy");
}

Dataset toy_images(std::size_t n, std::uint64_t seed, std::string split) {
  SyntheticImageOptions o;
  o.samples = n;
  o.channels = 1;
  o.resolution = 16;
  o.seed = seed;
  o.max_shift = 1;
  o.noise = 0.1;
  return make_synthetic_images(o, std::move(split));
}

double entropy(const TensorD& p) {
  double h = 0.0;
  for (double v : p.data()) h -= v > 0 ? v * std::log(v) : 0.0;
  return h;
}

std::filesystem::path temp_path(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("bnn_trainer_" + name);
}

}  // namespace

TEST_CASE("first Adam step moves by the learning rate against the gradient") {
  Tensor value({1}, 0.0f);
  std::vector<float> grad{1.0f};
  const ParamRef p{"x", value.data(), grad, 1.0, nullptr};
  Optimizer opt;
  opt.step(std::span<const ParamRef>(&p, 1), 0.01);
  CHECK(value[0] == doctest::Approx(-0.01).epsilon(1e-6));
  CHECK(opt.step_count() == 1);

  Tensor scaled({1}, 0.0f);
  const ParamRef q{"y", scaled.data(), grad, 3.0, nullptr};
  Optimizer opt2;
  opt2.step(std::span<const ParamRef>(&q, 1), 0.01);
  CHECK(scaled[0] == doctest::Approx(-0.03).epsilon(1e-6));
}

TEST_CASE("zero gradients leave parameters unchanged") {
  std::mt19937_64 rng(1);
  Tensor value = oracle::random_tensor({20}, rng).cast<float>();
  const Tensor before = value;
  std::vector<float> grad(20, 0.0f);
  for (OptimizerKind kind : {OptimizerKind::adam, OptimizerKind::sgd}) {
    OptimizerConfig cfg;
    cfg.kind = kind;
    Optimizer opt(cfg);
    const ParamRef p{"x", value.data(), grad, 1.0, nullptr};
    for (int i = 0; i < 5; ++i) opt.step(std::span<const ParamRef>(&p, 1), 0.1);
    CHECK(value == before);
  }
}

TEST_CASE("latent parameters are clamped after a large step; real ones are not") {
  LatentWeight w(Tensor({1}, 0.999f), 1, 1, 1.0);
  Tensor real({1}, 0.999f);
  std::vector<float> grad{-5.0f};
  const ParamRef ps[] = {{"w", w.value().data(), grad, 1.0, &w}, {"r", real.data(), grad, 1.0, nullptr}};
  Optimizer opt;
  opt.step(ps, 0.5);
  CHECK(w.value()[0] == 1.0f);
  CHECK(real[0] > 1.0f);
}

TEST_CASE("sgd with momentum follows the textbook recurrence") {
  OptimizerConfig cfg;
  cfg.kind = OptimizerKind::sgd;
  cfg.momentum = 0.5;
  Optimizer opt(cfg);
  Tensor v({1}, 0.0f);
  std::vector<float> g{2.0f};
  const ParamRef p{"x", v.data(), g, 1.0, nullptr};
  opt.step(std::span<const ParamRef>(&p, 1), 0.1);
  CHECK(v[0] == doctest::Approx(-0.2));
  opt.step(std::span<const ParamRef>(&p, 1), 0.1);
  CHECK(v[0] == doctest::Approx(-0.2 - 0.1 * (0.5 * 2.0 + 2.0)));
}

TEST_CASE("optimizer config validation") {
  OptimizerConfig cfg;
  cfg.beta1 = 1.0;
  CHECK_THROWS(cfg.validate());
  cfg = {};
  cfg.beta2 = 0.0;
  CHECK_THROWS(cfg.validate());
  CHECK(parse_optimizer_kind("sgd") == OptimizerKind::sgd);
  CHECK_THROWS(parse_optimizer_kind("rmsprop"));
}

TEST_CASE("hard loss examples") {
  const std::vector<std::size_t> zero{0};
  CHECK(hard_loss(TensorD({1, 2}), zero, 1.0).loss == doctest::Approx(std::log(2.0)).epsilon(1e-12));

  std::mt19937_64 rng(2);
  for (int i = 0; i < 20; ++i) {
    const std::size_t n = oracle::randint(rng, 1, 6), k = oracle::randint(rng, 2, 8);
    TensorD z = oracle::random_tensor({n, k}, rng, -3, 3);
    std::vector<std::size_t> labels(n);
    for (auto& l : labels) l = oracle::randint(rng, 0, k - 1);
    const double f = std::uniform_real_distribution<double>(0.2, 5.0)(rng);
    const LossResult<double> h = hard_loss(z, labels, f);
    const LossResult<double> ref = softmax_xent(scale_layer(z, f), labels);
    CHECK(h.loss == doctest::Approx(ref.loss).epsilon(1e-12));
    for (std::size_t j = 0; j < z.size(); ++j) CHECK(h.grad[j] == doctest::Approx(f * ref.grad[j]).epsilon(1e-12));
    CHECK(oracle::max_gradient_error([&] { return hard_loss(z, labels, f).loss; }, z, h.grad) < 1e-4);
    // The gradient is the scaled-logit gradient times f, so its sign pattern
    // and ordering are independent of f.
    const LossResult<double> one = hard_loss(z, labels, 1.0);
    for (std::size_t r = 0; r < n; ++r) {
      CHECK(h.grad(r, labels[r]) < 0.0);
      CHECK(one.grad(r, labels[r]) < 0.0);
    }
  }
}

TEST_CASE("soft loss examples") {
  const TensorD z({1, 2});
  const LossResult<double> s = soft_loss(z, z, 2.0);
  CHECK(s.loss == doctest::Approx(2.772589).epsilon(1e-6));
  for (double g : s.grad.data()) CHECK(std::fabs(g) < 1e-15);

  std::mt19937_64 rng(3);
  for (int i = 0; i < 20; ++i) {
    const double t = std::uniform_real_distribution<double>(1.0, 8.0)(rng);
    const TensorD zz = oracle::random_tensor({1, 6}, rng, -4, 4);
    const double h = entropy(softmax(scale_layer(zz, 1.0 / t)));
    CHECK(std::fabs(soft_loss(zz, zz, t).loss - t * t * h) < 1e-6);

    TensorD student = oracle::random_tensor({3, 5}, rng, -4, 4);
    const TensorD teacher = oracle::random_tensor({3, 5}, rng, -4, 4);
    const LossResult<double> r = soft_loss(student, teacher, t);
    CHECK(oracle::max_gradient_error([&] { return soft_loss(student, teacher, t).loss; }, student, r.grad) < 1e-4);
  }
  CHECK_THROWS(soft_loss(TensorD({2, 3}), TensorD({2, 4}), 2.0));
}

TEST_CASE("combined loss is the alpha blend of its endpoints") {
  std::mt19937_64 rng(4);
  for (int i = 0; i < 20; ++i) {
    TensorD s = oracle::random_tensor({4, 6}, rng, -3, 3);
    const TensorD t = oracle::random_tensor({4, 6}, rng, -3, 3);
    std::vector<std::size_t> labels(4);
    for (auto& l : labels) l = oracle::randint(rng, 0, 5);
    DistillConfig cfg;
    cfg.phase = DistillPhase::combined;
    cfg.temperature = 3.0;
    const double f = 2.0;

    cfg.alpha = 0.0;
    const LossResult<double> a0 = combined_loss(s, &t, labels, f, cfg);
    const LossResult<double> hard = hard_loss(s, labels, f);
    CHECK(a0.loss == hard.loss);
    CHECK(a0.grad == hard.grad);

    cfg.alpha = 1.0;
    const LossResult<double> a1 = combined_loss(s, &t, labels, f, cfg);
    const LossResult<double> soft = soft_loss(s, t, 3.0);
    CHECK(a1.loss == soft.loss);
    CHECK(a1.grad == soft.grad);

    cfg.alpha = 0.5;
    CHECK(std::fabs(combined_loss(s, &t, labels, f, cfg).loss - 0.5 * (hard.loss + soft.loss)) < 1e-7);

    const double alpha = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
    cfg.alpha = alpha;
    const LossResult<double> mix = combined_loss(s, &t, labels, f, cfg);
    CHECK(std::fabs(mix.loss - (alpha * soft.loss + (1 - alpha) * hard.loss)) < 1e-12);
    CHECK(oracle::max_gradient_error([&] { return combined_loss(s, &t, labels, f, cfg).loss; }, s, mix.grad) < 1e-4);
  }
}

TEST_CASE("distill config phases fix alpha") {
  DistillConfig cfg;
  cfg.alpha = 0.3;
  cfg.phase = DistillPhase::hard_only;
  CHECK(cfg.effective_alpha() == 0.0);
  cfg.phase = DistillPhase::soft_only;
  CHECK(cfg.effective_alpha() == 1.0);
  cfg.phase = DistillPhase::combined;
  CHECK(cfg.effective_alpha() == 0.3);
  cfg.temperature = 0.5;
  CHECK_THROWS(cfg.validate());
  cfg.temperature = 2.0;
  cfg.alpha = 1.5;
  CHECK_THROWS(cfg.validate());
  CHECK(parse_distill_phase("soft_only") == DistillPhase::soft_only);

  const std::vector<std::size_t> labels{1};
  DistillConfig hard;
  CHECK_NOTHROW(combined_loss<double>(TensorD({1, 3}), nullptr, labels, 1.0, hard));
  DistillConfig soft;
  soft.phase = DistillPhase::soft_only;
  CHECK_THROWS(combined_loss<double>(TensorD({1, 3}), nullptr, labels, 1.0, soft));
}

TEST_CASE("step schedule multiplies by factor every n epochs") {
  LrSchedule s;
  CHECK(s.multiplier(7) == 1.0);
  s.kind = LrSchedule::Kind::step;
  s.factor = 0.5;
  s.every_n_epochs = 2;
  CHECK(s.multiplier(0) == 1.0);
  CHECK(s.multiplier(1) == 1.0);
  CHECK(s.multiplier(2) == 0.5);
  CHECK(s.multiplier(5) == 0.25);
}

TEST_CASE("zero epochs returns no metrics and leaves the model untouched") {
  const Dataset data = separable_set(64, 6, 1);
  Rng init(1);
  Model m = Model::build(binary_mlp_spec(6, {16}, 2), init);
  const auto before = encode_model(m);
  TrainConfig cfg;
  cfg.epochs = 0;
  CHECK(train(m, data, nullptr, cfg).empty());
  CHECK(encode_model(m) == before);
}

TEST_CASE("training is deterministic for a fixed seed") {
  const Dataset data = separable_set(200, 6, 2);
  TrainConfig cfg;
  cfg.epochs = 3;
  cfg.batch_size = 32;
  cfg.seed = 5;
  const auto run = [&] {
    Rng init(7);
    Model m = Model::build(binary_mlp_spec(6, {16, 16}, 2), init);
    auto metrics = train(m, data, &data, cfg);
    return std::make_pair(std::move(metrics), encode_model(m));
  };
  const auto a = run(), b = run();
  REQUIRE(a.first.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(a.first[i].epoch == i + 1);
    CHECK(a.first[i].train_loss == b.first[i].train_loss);
    CHECK(a.first[i].train_acc == b.first[i].train_acc);
    CHECK(a.first[i].val_top1 == b.first[i].val_top1);
    CHECK(a.first[i].val_top1 >= 0.0);
    CHECK(a.first[i].val_top1 <= 1.0);
  }
  CHECK(a.second == b.second);
}

TEST_CASE("a tiny binary MLP separates a linearly separable toy set") {
  for (std::uint64_t seed : {1, 2, 3}) {
    const Dataset data = separable_set(512, 8, seed);
    Rng init(seed);
    Model m = Model::build(binary_mlp_spec(8, {32, 32}, 2), init);
    TrainConfig cfg;
    cfg.epochs = 10;
    cfg.batch_size = 32;
    cfg.base_lr = 0.01;
    cfg.seed = seed;
    cfg.top_k = 1;
    const auto metrics = train(m, data, &data, cfg);
    REQUIRE(metrics.size() == 10);
    double best = 0.0;
    for (const auto& e : metrics) best = std::max(best, e.train_acc);
    CHECK_MESSAGE(best >= 0.95, "seed " << seed << " best train accuracy " << best);
    for (const auto& e : metrics)
      for (const auto& s : e.saturation) CHECK((s.fraction >= 0.0 && s.fraction <= 1.0));
  }
}

TEST_CASE("epoch callback sees a snapshot per epoch and the clip invariant holds") {
  const Dataset data = separable_set(128, 6, 4);
  Rng init(4);
  Model m = Model::build(binary_mlp_spec(6, {16, 16}, 2), init);
  TrainConfig cfg;
  cfg.epochs = 4;
  cfg.base_lr = 0.5;
  std::size_t calls = 0;
  train(m, data, nullptr, cfg, {}, {}, [&](const EpochMetrics& e, const Model& snap) {
    ++calls;
    CHECK(e.epoch == calls);
    for (const LatentView& v : snap.latent_weights()) CHECK(latent_in_range(v.weight->value()));
  });
  CHECK(calls == 4);
}

TEST_CASE("non-finite loss aborts with the offending layer named") {
  const Dataset data = separable_set(64, 6, 5);
  Rng init(5);
  Model m = Model::build(binary_mlp_spec(6, {16}, 2), init);
  for (const NamedTensorView& t : m.named_tensors()) {
    if (t.name == "layers.0.bn.beta") t.data[0] = std::numeric_limits<float>::quiet_NaN();
  }
  TrainConfig cfg;
  try {
    train(m, data, nullptr, cfg);
    FAIL("expected TrainingError");
  } catch (const TrainingError& e) {
    CHECK(std::string(e.what()).find("layers.0") != std::string::npos);
  }
}

TEST_CASE("teacher beats a binary student at equal epochs and its loss drops") {
  const Dataset train_set = toy_images(600, 1, "train");
  const Dataset val = toy_images(300, 2, "val");
  TrainConfig cfg;
  cfg.epochs = 3;
  cfg.batch_size = 32;
  cfg.base_lr = 0.003;
  const TeacherResult teacher = train_teacher(float_teacher_spec(16, 10, 1, 0.5), train_set, &val, cfg);
  REQUIRE(teacher.metrics.size() == 3);

  Rng init(cfg.seed);
  Model untrained = Model::build(float_teacher_spec(16, 10, 1, 0.5), init);
  double init_loss = 0.0;
  {
    std::vector<std::size_t> all(train_set.size());
    std::iota(all.begin(), all.end(), 0);
    const Tensor logits = untrained.infer_logits(gather_images(train_set, all));
    init_loss = hard_loss(logits, train_set.labels, 1.0f).loss;
  }
  CHECK(teacher.metrics.front().train_loss < init_loss);

  Rng sinit(cfg.seed);
  Model student = Model::build(table1_spec(16, 10, 1.0 / 16, 1, 0.0), sinit);
  const auto smetrics = train(student, train_set, &val, cfg);
  CHECK_MESSAGE(teacher.metrics.back().val_top1 > smetrics.back().val_top1,
                "teacher " << teacher.metrics.back().val_top1 << " student " << smetrics.back().val_top1);

  const TeacherResult again = train_teacher(float_teacher_spec(16, 10, 1, 0.5), train_set, &val, cfg);
  CHECK(again.metrics.back().train_loss == teacher.metrics.back().train_loss);
}

TEST_CASE("soft target cache") {
  const Dataset data = toy_images(100, 3, "train");
  Rng init(3);
  const Model teacher = Model::build(float_teacher_spec(16, 10, 1, 0.25), init);
  const SoftTargetCache cache = generate_soft_targets(teacher, data, 32);
  CHECK(cache.samples == data.size());
  CHECK(cache.classes == 10);
  CHECK(cache.logits.size() == 1000);
  CHECK(cache.checksum == data.checksum);

  const auto path = temp_path("cache.soft");
  save_soft_targets(cache, path);
  const SoftTargetCache back = load_soft_targets(path, data);
  CHECK(back == cache);

  std::vector<std::size_t> all(data.size());
  std::iota(all.begin(), all.end(), 0);
  const Tensor probs = softmax(back.rows(all));
  const std::vector<std::size_t> predicted = predict(teacher, data);
  for (std::size_t i = 0; i < data.size(); ++i) {
    const float* row = probs.raw() + i * 10;
    CHECK(static_cast<std::size_t>(std::max_element(row, row + 10) - row) == predicted[i]);
  }

  Dataset altered = data;
  altered.images[0] = altered.images[0] > 0.5f ? 0.0f : 1.0f;
  altered.checksum = dataset_checksum(altered.images, altered.labels);
  try {
    load_soft_targets(path, altered);
    FAIL("expected checksum mismatch");
  } catch (const FormatError& e) {
    CHECK(e.code() == FormatErrc::checksum_mismatch);
  }
  std::filesystem::remove(path);
}

TEST_CASE("training with a cached teacher signal in every phase") {
  const Dataset data = toy_images(96, 4, "train");
  Rng init(4);
  const Model teacher = Model::build(float_teacher_spec(16, 10, 1, 0.25), init);
  const SoftTargetCache cache = generate_soft_targets(teacher, data);
  TrainConfig cfg;
  cfg.epochs = 1;
  cfg.batch_size = 32;
  for (DistillPhase phase : {DistillPhase::hard_only, DistillPhase::soft_only, DistillPhase::combined}) {
    Rng sinit(1);
    Model student = Model::build(table1_spec(16, 10, 1.0 / 16, 1, 0.0), sinit);
    DistillConfig d;
    d.phase = phase;
    const auto metrics = train(student, data, nullptr, cfg, d, TeacherSignal{&cache, nullptr});
    REQUIRE(metrics.size() == 1);
    CHECK(metrics[0].phase == std::string(to_string(phase)));
    CHECK(std::isfinite(metrics[0].train_loss));
  }
  DistillConfig soft;
  soft.phase = DistillPhase::soft_only;
  Rng sinit(1);
  Model student = Model::build(table1_spec(16, 10, 1.0 / 16, 1, 0.0), sinit);
  CHECK_THROWS(train(student, data, nullptr, cfg, soft, {}));
}
