#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "bnn/analysis.hpp"
#include "bnn/cli.hpp"
#include "bnn/dataset.hpp"
#include "bnn/deploy.hpp"
#include "bnn/serialize.hpp"
#include "oracles.hpp"

using namespace bnn;
namespace fs = std::filesystem;

namespace {

const fs::path kData = BNN_DATA_DIR;
const fs::path kMnistImages = kData / "mnist10k-images-idx3-ubyte";
const fs::path kMnistLabels = kData / "mnist10k-labels-idx1-ubyte";

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "bnn_analysis_cli";
  fs::create_directories(dir);
  return dir / name;
}

void put_be32(std::vector<unsigned char>& b, std::uint32_t v) {
  for (int s = 24; s >= 0; s -= 8) b.push_back(static_cast<unsigned char>(v >> s));
}

void write_bytes(const fs::path& p, const std::vector<unsigned char>& b) {
  std::ofstream(p, std::ios::binary).write(reinterpret_cast<const char*>(b.data()), static_cast<std::streamsize>(b.size()));
}

std::vector<unsigned char> idx_images(std::uint32_t n, std::uint32_t rows, std::uint32_t cols, unsigned char fill) {
  std::vector<unsigned char> b;
  put_be32(b, 0x00000803);
  put_be32(b, n);
  put_be32(b, rows);
  put_be32(b, cols);
  b.insert(b.end(), static_cast<std::size_t>(n) * rows * cols, fill);
  return b;
}

std::vector<unsigned char> idx_labels(std::uint32_t n) {
  std::vector<unsigned char> b;
  put_be32(b, 0x00000801);
  put_be32(b, n);
  for (std::uint32_t i = 0; i < n; ++i) b.push_back(static_cast<unsigned char>(i % 10));
  return b;
}

DatasetErrc dataset_error(const std::function<void()>& f) {
  try {
    f();
  } catch (const DatasetError& e) {
    return e.code();
  }
  FAIL("no DatasetError");
  return DatasetErrc::io;
}

struct CliResult {
  int code = 0;
  std::string out, err;
};

CliResult cli(std::vector<std::string> args) {
  args.insert(args.begin(), "bnn");
  std::vector<const char*> argv;
  for (const std::string& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

std::vector<std::string> mnist_args(std::size_t limit, std::size_t holdout) {
  return {"--format",      "idx", "--train-images",     kMnistImages.string(), "--train-labels", kMnistLabels.string(),
          "--limit",       std::to_string(limit), "--holdout", std::to_string(holdout)};
}

std::vector<std::string> concat(std::vector<std::string> a, const std::vector<std::string>& b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

double field(const std::string& text, const std::string& key) {
  const auto pos = text.find(key + "=");
  REQUIRE(pos != std::string::npos);
  return std::stod(text.substr(pos + key.size() + 1));
}

}  // namespace

TEST_CASE("bundled IDX test pair") {
  const Dataset d = load_idx(kMnistImages, kMnistLabels, "test");
  CHECK(d.size() == 10000);
  CHECK(d.sample_shape() == Shape{1, 28, 28});
  CHECK(d.num_classes == 10);
  float lo = 1, hi = 0;
  for (float v : d.images.data()) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  CHECK(lo == 0.0f);
  CHECK(hi == 1.0f);
  CHECK(load_idx(kMnistImages, kMnistLabels, "again").checksum == d.checksum);
}

TEST_CASE("IDX loader scaling and errors") {
  const fs::path img = scratch("img.idx"), lbl = scratch("lbl.idx");
  write_bytes(img, idx_images(3, 2, 2, 255));
  write_bytes(lbl, idx_labels(3));
  const Dataset d = load_idx(img, lbl);
  for (float v : d.images.data()) CHECK(v == 1.0f);
  CHECK(d.labels == std::vector<std::size_t>{0, 1, 2});

  write_bytes(lbl, idx_labels(2));
  CHECK(dataset_error([&] { load_idx(img, lbl); }) == DatasetErrc::count_mismatch);

  auto bad = idx_labels(3);
  bad[3] = 0x02;
  write_bytes(lbl, bad);
  CHECK(dataset_error([&] { load_idx(img, lbl); }) == DatasetErrc::bad_magic);

  write_bytes(lbl, idx_labels(3));
  auto cut = idx_images(3, 2, 2, 7);
  cut.resize(cut.size() - 1);
  write_bytes(img, cut);
  CHECK(dataset_error([&] { load_idx(img, lbl); }) == DatasetErrc::truncated);

  CHECK(dataset_error([&] { load_idx(scratch("missing"), lbl); }) == DatasetErrc::io);
}

TEST_CASE("CIFAR-10 binary batches") {
  const fs::path batch = scratch("data_batch.bin");
  {
    std::vector<unsigned char> b;
    b.reserve(10000 * 3073);
    for (std::size_t i = 0; i < 10000; ++i) {
      b.push_back(static_cast<unsigned char>(i == 0 ? 9 : i % 10));
      for (std::size_t p = 0; p < 3072; ++p) b.push_back(static_cast<unsigned char>(p < 1024 ? 255 : p % 256));
    }
    write_bytes(batch, b);
  }
  const fs::path files[] = {batch};
  const Dataset d = load_cifar10(files);
  CHECK(d.size() == 10000);
  CHECK(d.sample_shape() == Shape{3, 32, 32});
  CHECK(d.labels[0] == 9);
  CHECK(d.images(0, 0, 31, 31) == 1.0f);
  CHECK(d.images(0, 1, 0, 1) == doctest::Approx(1.0 / 255));

  std::vector<unsigned char> odd(3073 * 2 + 5, 0);
  write_bytes(batch, odd);
  CHECK(dataset_error([&] { load_cifar10(files); }) == DatasetErrc::format);
  fs::remove(batch);
}

TEST_CASE("dataset writers round-trip through the loaders") {
  SyntheticImageOptions o;
  o.samples = 50;
  o.resolution = 32;
  const Dataset d = make_synthetic_images(o, "s");
  write_cifar10(d, scratch("w.bin"));
  const fs::path files[] = {scratch("w.bin")};
  const Dataset back = load_cifar10(files, "s");
  CHECK(back.checksum == d.checksum);

  o.channels = 1;
  o.resolution = 12;
  const Dataset g = make_synthetic_images(o, "g");
  write_idx(g, scratch("g-img"), scratch("g-lbl"));
  CHECK(load_idx(scratch("g-img"), scratch("g-lbl"), "g").checksum == g.checksum);
}

TEST_CASE("synthetic images are deterministic, in range and class balanced enough") {
  SyntheticImageOptions o;
  o.samples = 400;
  const Dataset a = make_synthetic_images(o, "a"), b = make_synthetic_images(o, "b");
  CHECK(a.checksum == b.checksum);
  o.seed = 2;
  CHECK(make_synthetic_images(o, "c").checksum != a.checksum);
  for (float v : a.images.data()) REQUIRE((v >= 0.0f && v <= 1.0f));
  std::vector<std::size_t> counts(10);
  for (std::size_t l : a.labels) ++counts[l];
  for (std::size_t c : counts) CHECK(c > 10);
}

TEST_CASE("histogram examples") {
  const std::vector<float> w{-1.0f, -0.5f, 0.0f, 0.5f, 1.0f};
  const WeightHistogram h = weight_histogram(w, 2, 0.9);
  CHECK(h.counts == std::vector<std::size_t>{2, 3});
  CHECK(h.edges == std::vector<double>{-1.0, 0.0, 1.0});

  const std::vector<float> s{-1.0f, 0.95f, 0.2f};
  CHECK(weight_histogram(s, 4, 0.9).saturation_fraction == doctest::Approx(2.0 / 3.0));
}

TEST_CASE("histogram counts conserve every latent weight") {
  std::mt19937_64 rng(1);
  Rng init(1);
  const Model m = Model::build(table1_spec(32, 10, 1.0 / 16), init);
  for (const LatentView& v : m.latent_weights()) {
    const std::size_t bins = oracle::randint(rng, 1, 50);
    const WeightHistogram h = weight_histogram(m, layer_label(v.layer), bins, 0.9, 1);
    std::size_t total = 0;
    for (std::size_t c : h.counts) total += c;
    CHECK(total == v.weight->value().size());
    for (std::size_t i = 0; i + 1 < h.edges.size(); ++i) CHECK(h.edges[i] < h.edges[i + 1]);
    CHECK(h.edges.front() == -1.0);
    CHECK(h.edges.back() == 1.0);
    CHECK(h.epoch == 1);
  }
  CHECK_THROWS(weight_histogram(m, "layers.999", 10, 0.9));
  CHECK(latent_histograms(m, 10, 0.9, 0).size() == m.latent_weights().size());
}

TEST_CASE("metrics CSV round-trips") {
  std::vector<EpochMetrics> ms(3);
  for (std::size_t i = 0; i < 3; ++i) {
    ms[i].epoch = i + 1;
    ms[i].phase = "combined";
    ms[i].train_loss = 1.0 / 3.0 + static_cast<double>(i);
    ms[i].train_acc = 0.1 * static_cast<double>(i);
    ms[i].val_top1 = 0.123456789012345678;
    ms[i].val_topk = 0.9;
    ms[i].wall_s = 1e-3;
  }
  std::stringstream s;
  write_metrics_csv(s, ms);
  CHECK(s.str().rfind(std::string(kMetricsCsvHeader) + "\n", 0) == 0);
  const auto back = read_metrics_csv(s);
  REQUIRE(back.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(back[i].epoch == ms[i].epoch);
    CHECK(back[i].phase == ms[i].phase);
    CHECK(back[i].train_loss == ms[i].train_loss);
    CHECK(back[i].val_top1 == ms[i].val_top1);
    CHECK(back[i].wall_s == ms[i].wall_s);
  }
  std::istringstream bad("epoch,loss\n1,2\n");
  CHECK_THROWS(read_metrics_csv(bad));
}

TEST_CASE("learning-rate sweep structure and determinism") {
  SyntheticImageOptions o;
  o.samples = 120;
  o.resolution = 32;
  const Dataset train_set = make_synthetic_images(o, "train");
  o.samples = 60;
  o.seed = 2;
  const Dataset val = make_synthetic_images(o, "val");
  SweepConfig cfg;
  cfg.learning_rates = {0.001, 0.01};
  cfg.seeds = {1, 2};
  cfg.train.epochs = 2;
  cfg.train.batch_size = 32;
  cfg.bins = 8;
  const ArchSpec spec = alexnet_like_spec(32, 10, 1.0 / 8);
  const SweepReport a = lr_sweep_experiment(spec, train_set, val, cfg);
  REQUIRE(a.runs.size() == 4);
  Rng init(1);
  const std::size_t binary_layers = Model::build(spec, init).latent_weights().size();
  for (const SweepRun& r : a.runs) {
    CHECK(r.metrics.size() == 2);
    CHECK(r.histograms.size() == binary_layers);
    for (const auto& h : r.histograms) CHECK(h.epoch == 1);
  }
  CHECK(a.low_lr == 0.001);
  CHECK(a.high_lr == 0.01);
  CHECK(a.saturation_wins <= 2);

  const SweepReport b = lr_sweep_experiment(spec, train_set, val, cfg);
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(a.runs[i].mean_saturation == b.runs[i].mean_saturation);
    CHECK(a.runs[i].metrics.back().val_top1 == b.runs[i].metrics.back().val_top1);
    CHECK(a.runs[i].metrics.back().train_loss == b.runs[i].metrics.back().train_loss);
  }
  CHECK(a.summary() == b.summary());

  const fs::path dir = scratch("sweep");
  write_sweep_outputs(a, dir);
  CHECK(fs::exists(dir / "sweep_metrics.csv"));
  CHECK(fs::exists(dir / "summary.txt"));
  std::size_t hist_files = 0;
  for (const auto& e : fs::directory_iterator(dir)) hist_files += e.path().filename().string().rfind("hist_", 0) == 0;
  CHECK(hist_files == 4);
}

TEST_CASE("cli rejects unknown subcommands with usage") {
  const CliResult r = cli({"frobnicate"});
  CHECK(r.code != 0);
  CHECK(r.err.rfind("error: ", 0) == 0);
  CHECK(r.err.find("Usage") != std::string::npos);
  CHECK(cli({}).code != 0);
}

TEST_CASE("cli reports runtime failures on one machine-parseable line") {
  const CliResult r = cli({"eval", "--model", scratch("nope.bnnm").string(), "--format", "synthetic",
                           "--synthetic-train", "10", "--synthetic-val", "10"});
  CHECK(r.code == 1);
  CHECK(r.err.rfind("error: format: ", 0) == 0);
}

TEST_CASE("cli train, eval, export and infer agree") {
  const fs::path model = scratch("cli.bnnm"), metrics = scratch("cli_metrics.csv"), deployed = scratch("cli.bnnx");
  const auto data = mnist_args(600, 200);
  const CliResult t = cli(concat({"train", "--arch", "table1", "--width", "0.0625", "--epochs", "2", "--batch-size",
                                  "32", "--seed", "3", "--out", model.string(), "--metrics", metrics.string()},
                                 data));
  REQUIRE_MESSAGE(t.code == 0, t.err);
  std::ifstream mf(metrics);
  const auto ms = read_metrics_csv(mf);
  REQUIRE(ms.size() == 2);

  const CliResult e = cli(concat({"eval", "--model", model.string()}, data));
  REQUIRE_MESSAGE(e.code == 0, e.err);
  CHECK(field(e.out, "top1") == ms.back().val_top1);
  CHECK(field(e.out, "samples") == 200);

  const CliResult x = cli({"export", "--model", model.string(), "--out", deployed.string()});
  REQUIRE_MESSAGE(x.code == 0, x.err);
  const CliResult i = cli(concat({"infer", "--deployed", deployed.string(), "--reference", model.string()}, data));
  REQUIRE_MESSAGE(i.code == 0, i.err);
  CHECK(field(i.out, "agreement") == 1.0);
  CHECK(field(i.out, "top1") == ms.back().val_top1);

  const CliResult h = cli({"hist", "--model", model.string(), "--layer", "layers.2", "--bins", "4"});
  REQUIRE_MESSAGE(h.code == 0, h.err);
  CHECK(h.out.rfind(std::string(kHistogramCsvHeader) + "\n", 0) == 0);
}

TEST_CASE("cli JSON config fills options and flags win") {
  const fs::path cfg = scratch("cfg.json"), metrics = scratch("cfg_metrics.csv"), model = scratch("cfg.bnnm");
  std::ofstream(cfg) << R"({"epochs": 3, "batch_size": 64, "arch": "mlp", "hidden": [16], "metrics": ")"
                     << metrics.string() << R"(", "out": ")" << model.string() << R"("})";
  const CliResult r = cli(concat({"train", "--config", cfg.string(), "--epochs", "1"}, mnist_args(200, 50)));
  REQUIRE_MESSAGE(r.code == 0, r.err);
  std::ifstream mf(metrics);
  CHECK(read_metrics_csv(mf).size() == 1);
  CHECK(load_model(model).spec().name == "binary_mlp");

  std::ofstream(cfg) << R"({"train": {"epochs": 2, "arch": "mlp", "hidden": [8], "metrics": ")" << metrics.string()
                     << R"(", "out": ")" << model.string() << R"("}})";
  const CliResult nested = cli(concat({"train", "--config", cfg.string()}, mnist_args(200, 50)));
  REQUIRE_MESSAGE(nested.code == 0, nested.err);
  std::ifstream mf2(metrics);
  CHECK(read_metrics_csv(mf2).size() == 2);

  std::ofstream(cfg) << R"({"no_such_option": 1})";
  CHECK(cli(concat({"train", "--config", cfg.string()}, mnist_args(200, 50))).code != 0);
}
