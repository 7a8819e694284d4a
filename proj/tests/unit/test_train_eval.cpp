#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <set>

#include <nlohmann/json.hpp>

#include "dsnet/error.hpp"
#include "dsnet/train_eval.hpp"
#include "oracles.hpp"

namespace dsnet {
namespace {

namespace fs = std::filesystem;

ModelConfig toy_config(int classes = 4) {
  ModelConfig cfg;
  cfg.variant = Variant::custom;
  cfg.base_channels = 4;
  cfg.stem_downsample = 4;
  cfg.schedule = parse_schedule("d2x2+d3x2+d5x2");
  cfg.spatial_depth = 3;
  cfg.spaspp_channels = 8;
  cfg.spaspp_rates = {2, 4};
  cfg.head_channels = 8;
  cfg.num_classes = classes;
  cfg.grids = {1, 2, 4};
  return cfg;
}

TrainConfig quick_train(int iterations) {
  TrainConfig t;
  t.iterations = iterations;
  t.batch_size = 2;
  t.crop_h = 32;
  t.crop_w = 32;
  return t;
}

fs::path temp_dir(const std::string& name) {
  auto dir = fs::temp_directory_path() / ("dsnet_test_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

SegSample random_sample(int h, int w, int classes, std::uint64_t seed) {
  torch::manual_seed(seed);
  SegSample s;
  s.image = torch::randn({3, h, w});
  s.mask = torch::randint(0, classes, {h, w}, torch::kLong);
  s.mask.masked_fill_(torch::rand({h, w}) < 0.1, kIgnoreLabel);
  return s;
}

TEST(PolyLR, Endpoints) {
  TrainConfig cfg;
  cfg.iterations = 1000;
  EXPECT_DOUBLE_EQ(poly_lr(0, cfg), 0.01);
  EXPECT_DOUBLE_EQ(poly_lr(1000, cfg), 0.0);
  EXPECT_NEAR(poly_lr(500, cfg), 0.005359, 1e-6);
  EXPECT_THROW(poly_lr(1001, cfg), ValidationError);
}

TEST(TrainConfig, Validation) {
  TrainConfig cfg;
  EXPECT_NO_THROW(cfg.validate());
  cfg.iterations = 0;
  EXPECT_THROW(cfg.validate(), ValidationError);
  cfg = TrainConfig{};
  cfg.scale_min = 2.0;
  EXPECT_THROW(cfg.validate(), ValidationError);
  cfg.scale_min = 0.0;
  EXPECT_THROW(cfg.validate(), ValidationError);
}

TEST(Augment, IdentityAtUnitScale) {
  const auto s = random_sample(24, 24, 4, 1);
  const auto out = apply_augment(s, AugmentParams{false, 1.0, 0, 0}, 24, 24);
  EXPECT_TRUE(torch::equal(out.image, s.image));
  EXPECT_TRUE(torch::equal(out.mask, s.mask));
}

// Single-precision bilinear source coordinates at a few hundred pixels.
constexpr double kImageTolerance = 1e-4;

TEST(Augment, DownscaleIsPaddedWithIgnore) {
  auto s = random_sample(512, 512, 5, 2);
  s.mask.masked_fill_(s.mask == kIgnoreLabel, 0);
  s.image = s.image.to(torch::kDouble);
  const AugmentParams p{false, 0.4, 0, 0};
  const auto out = apply_augment(s, p, 512, 512);
  EXPECT_EQ(out.image.sizes(), (std::vector<int64_t>{3, 512, 512}));
  const auto content = out.mask.ne(kIgnoreLabel);
  EXPECT_EQ(content.sum().item<int64_t>(), 204 * 204);
  EXPECT_TRUE(content.slice(0, 0, 204).slice(1, 0, 204).all().item<bool>());
  EXPECT_EQ(out.image.slice(1, 204).abs().sum().item<double>(), 0.0);
  const auto ref = oracle::augment(s, p, 512, 512);
  EXPECT_TRUE(torch::equal(out.mask, ref.mask));
  EXPECT_LT((out.image - ref.image).abs().max().item<double>(), 1e-9);
}

TEST(Augment, MatchesLoopOracleOverRandomParameters) {
  std::mt19937_64 rng(8);
  TrainConfig cfg;
  cfg.crop_h = 40;
  cfg.crop_w = 36;
  for (int trial = 0; trial < 25; ++trial) {
    const auto s = random_sample(30 + trial, 50 - trial, 6, static_cast<std::uint64_t>(trial));
    const auto p = sample_augment(s, cfg, rng);
    const auto out = apply_augment(s, p, cfg.crop_h, cfg.crop_w);
    const auto ref = oracle::augment(s, p, cfg.crop_h, cfg.crop_w);
    EXPECT_TRUE(torch::equal(out.mask, ref.mask)) << trial;
    EXPECT_LT((out.image.to(torch::kDouble) - ref.image).abs().max().item<double>(), kImageTolerance) << trial;
  }
}

TEST(Augment, DeterministicAndLabelPreserving) {
  const auto s = random_sample(48, 48, 7, 3);
  TrainConfig cfg;
  cfg.crop_h = 48;
  cfg.crop_w = 48;
  std::set<int64_t> source;
  for (auto v : std::vector<int64_t>(s.mask.data_ptr<int64_t>(), s.mask.data_ptr<int64_t>() + s.mask.numel())) {
    source.insert(v);
  }
  source.insert(kIgnoreLabel);
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    std::mt19937_64 a(seed);
    std::mt19937_64 b(seed);
    const auto x = augment(s, cfg, a);
    const auto y = augment(s, cfg, b);
    EXPECT_TRUE(torch::equal(x.image, y.image));
    EXPECT_TRUE(torch::equal(x.mask, y.mask));
    auto values = std::get<0>(torch::_unique(x.mask));
    for (int64_t i = 0; i < values.numel(); ++i) EXPECT_TRUE(source.count(values[i].item<int64_t>()));
  }
}

TEST(Confusion, HandComputedIoU) {
  ConfusionMatrix cm(2);
  cm.add(0, 0, 3);
  cm.add(0, 1, 1);
  cm.add(1, 0, 1);
  cm.add(1, 1, 4);
  const auto r = summarize(cm);
  EXPECT_NEAR(*r.per_class_iou[0], 0.6, 1e-12);
  EXPECT_NEAR(*r.per_class_iou[1], 4.0 / 6.0, 1e-12);
  EXPECT_NEAR(r.miou, 0.633333, 1e-6);
  EXPECT_NEAR(r.pixel_accuracy, 7.0 / 9.0, 1e-12);
}

TEST(Confusion, PerfectAbsentAndIgnored) {
  auto gt = torch::tensor({0, 1, 1, 255}, torch::kLong);
  ConfusionMatrix cm(3);
  cm.update(gt, torch::tensor({0, 1, 1, 2}, torch::kLong));
  const auto r = summarize(cm);
  EXPECT_DOUBLE_EQ(r.miou, 1.0);
  EXPECT_FALSE(r.per_class_iou[2].has_value());
  EXPECT_EQ(cm.total(), 3);

  ConfusionMatrix empty(3);
  empty.update(torch::full({4, 4}, 255, torch::kLong), torch::zeros({4, 4}, torch::kLong));
  try {
    summarize(empty);
    FAIL() << "expected ValidationError";
  } catch (const ValidationError& e) {
    EXPECT_EQ(std::string(e.what()), "no labeled pixels");
  }
  EXPECT_THROW(cm.update(torch::tensor({3}, torch::kLong), torch::tensor({0}, torch::kLong)), ValidationError);
  EXPECT_THROW(cm.update(gt, torch::tensor({0, 1}, torch::kLong)), ShapeError);
}

TEST(Confusion, MatchesPerPixelRecount) {
  torch::manual_seed(4);
  for (int trial = 0; trial < 20; ++trial) {
    const int k = 2 + trial % 5;
    auto gt = torch::randint(0, k, {16, 16}, torch::kLong);
    gt.masked_fill_(torch::rand({16, 16}) < 0.2, kIgnoreLabel);
    const auto pred = torch::randint(0, k, {16, 16}, torch::kLong);
    ConfusionMatrix cm(k);
    cm.update(gt, pred);
    EXPECT_EQ(cm.counts(), oracle::confusion(gt, pred, k));
    EXPECT_EQ(cm.total(), gt.ne(kIgnoreLabel).sum().item<int64_t>());
  }
}

TEST(Synthetic, GeneratorProperties) {
  const auto a = generate_synthetic(4, 64, 4, 9);
  const auto b = generate_synthetic(4, 64, 4, 9);
  ASSERT_EQ(a.size(), 4u);
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].image.pixels, b[i].image.pixels);
    EXPECT_EQ(a[i].mask.pixels, b[i].mask.pixels);
    std::set<int> classes;
    for (int y = 0; y < 64; ++y) {
      for (int x = 0; x < 64; ++x) {
        const int v = a[i].mask.pixels[static_cast<std::size_t>(y * 64 + x)];
        const bool border = y < 2 || x < 2 || y >= 62 || x >= 62;
        if (border) {
          EXPECT_EQ(v, kIgnoreLabel);
        } else {
          classes.insert(v);
        }
      }
    }
    EXPECT_GE(classes.size(), 2u);
  }
  EXPECT_NE(generate_synthetic(1, 64, 4, 10)[0].mask.pixels, a[0].mask.pixels);
  EXPECT_THROW(generate_synthetic(2, 64, 1, 0), ValidationError);
}

TEST(Dataset, SyntheticRoundTripAndPairing) {
  const auto root = temp_dir("dataset");
  make_synthetic(4, 32, 3, 5, root);
  const auto data = load_dataset(root, 3);
  ASSERT_EQ(data.size(), 4u);
  const auto generated = generate_synthetic(4, 32, 3, 5);
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_EQ(data.samples[i].name, generated[i].name);
    EXPECT_TRUE(torch::equal(data.samples[i].mask, mask_to_tensor(generated[i].mask)));
    EXPECT_TRUE(torch::equal(data.samples[i].image, image_to_tensor(generated[i].image)));
  }
  EXPECT_THROW(load_dataset(root, 2), ValidationError);

  fs::remove(root / "masks" / "sample_0002.png");
  try {
    load_dataset(root, 3);
    FAIL() << "expected IoError";
  } catch (const IoError& e) {
    EXPECT_NE(std::string(e.what()).find("sample_0002"), std::string::npos);
  }
  EXPECT_THROW(load_dataset(root / "absent", 3), IoError);
  fs::remove_all(root);
}

TEST(Train, OneIterationMovesParametersAndTracesLr) {
  const auto data = synthetic_dataset(2, 32, 4, 1);
  auto model = build_seeded_model(toy_config(), 0);
  std::vector<torch::Tensor> before;
  for (const auto& p : model->parameters()) before.push_back(p.detach().clone());
  const auto result = train(model, data, quick_train(1));
  double delta = 0.0;
  const auto after = model->parameters();
  for (std::size_t i = 0; i < before.size(); ++i) delta += (after[i] - before[i]).norm().item<double>();
  EXPECT_GT(delta, 0.0);
  ASSERT_EQ(result.loss_trace.size(), 1u);

  auto cfg = quick_train(7);
  auto model2 = build_seeded_model(toy_config(), 0);
  const auto trace = train(model2, data, cfg);
  EXPECT_DOUBLE_EQ(trace.lr_trace.front(), poly_lr(0, cfg));
  EXPECT_DOUBLE_EQ(trace.lr_trace.back(), poly_lr(6, cfg));
}

TEST(Train, ErrorsOnEmptyDatasetAndNonFiniteLoss) {
  auto model = build_seeded_model(toy_config(), 0);
  EXPECT_THROW(train(model, Dataset{{}, 4}, quick_train(1)), ValidationError);
  auto data = synthetic_dataset(2, 32, 4, 1);
  data.samples[0].image.fill_(std::numeric_limits<float>::quiet_NaN());
  data.samples[1].image.fill_(std::numeric_limits<float>::quiet_NaN());
  try {
    train(model, data, quick_train(2));
    FAIL() << "expected RuntimeFailure";
  } catch (const RuntimeFailure& e) {
    EXPECT_NE(std::string(e.what()).find("iteration 0"), std::string::npos);
  }
}

TEST(Train, BitwiseDeterministicInDoublePrecision) {
  const auto data = synthetic_dataset(3, 32, 4, 2);
  auto run = [&] {
    auto model = build_seeded_model(toy_config(), 7);
    model->to(torch::kDouble);
    auto cfg = quick_train(6);
    cfg.seed = 7;
    return train(model, data, cfg).loss_trace;
  };
  EXPECT_EQ(run(), run());
}

TEST(Train, WritesMetricsLogAndCheckpoint) {
  const auto dir = temp_dir("train_out");
  auto model = build_seeded_model(toy_config(), 0);
  TrainHooks hooks;
  hooks.metrics_log = dir / "metrics.jsonl";
  hooks.checkpoint = dir / "model.ckpt";
  int calls = 0;
  hooks.on_iteration = [&](int, double, double) { ++calls; };
  train(model, synthetic_dataset(2, 32, 4, 1), quick_train(3), hooks);
  EXPECT_EQ(calls, 3);
  std::ifstream log(hooks.metrics_log);
  std::string line;
  int lines = 0;
  while (std::getline(log, line)) {
    const auto j = nlohmann::json::parse(line);
    EXPECT_EQ(j["iter"], lines);
    EXPECT_TRUE(j.contains("lr") && j.contains("loss"));
    ++lines;
  }
  EXPECT_EQ(lines, 3);
  EXPECT_EQ(load_checkpoint(hooks.checkpoint)->config(), toy_config());
  fs::remove_all(dir);
}

TEST(Evaluate, OrderInvariantAndConsistent) {
  auto data = synthetic_dataset(4, 32, 4, 3);
  auto model = build_seeded_model(toy_config(), 1);
  const auto a = evaluate(model, data);
  std::reverse(data.samples.begin(), data.samples.end());
  const auto b = evaluate(model, data);
  EXPECT_EQ(a.confusion.counts(), b.confusion.counts());
  EXPECT_DOUBLE_EQ(a.miou, b.miou);
  std::int64_t labelled = 0;
  for (const auto& s : data.samples) labelled += s.mask.ne(kIgnoreLabel).sum().item<int64_t>();
  EXPECT_EQ(a.confusion.total(), labelled);
  EXPECT_THROW(evaluate(model, Dataset{{}, 4}), ValidationError);
}

TEST(Predict, PadsIndivisibleImages) {
  auto model = build_seeded_model(toy_config(), 1);
  const auto pred = predict(model, torch::randn({3, 30, 45}));
  EXPECT_EQ(pred.sizes(), (std::vector<int64_t>{30, 45}));
  EXPECT_EQ(pred.scalar_type(), torch::kLong);
}

TEST(Ablation, TableSchemaAndDeterminism) {
  const auto data = synthetic_dataset(3, 32, 4, 4);
  const auto cfg = quick_train(3);
  const auto table = run_ablation(toy_config(), {{"msaf", "{}"}, {"add", R"({"fusion_mode": "add"})"}}, cfg, data, data,
                                  {0});
  ASSERT_EQ(table.runs.size(), 2u);
  for (const auto& r : table.runs) {
    EXPECT_GE(r.miou, 0.0);
    EXPECT_LE(r.miou, 1.0);
  }
  EXPECT_NE(table.format().find("add"), std::string::npos);

  const auto same = run_ablation(toy_config(), {{"a", "{}"}, {"b", "{}"}}, cfg, data, data, {5});
  EXPECT_EQ(same.runs[0].miou, same.runs[1].miou);
  EXPECT_EQ(same.runs[0].final_loss, same.runs[1].final_loss);

  const auto ctx = run_ablation(toy_config(), {{"spaspp", "{}"}, {"none", R"({"context_module": "none"})"}}, cfg,
                                data, data, {0});
  EXPECT_EQ(ctx.runs.size(), 2u);
  EXPECT_THROW(with_overrides(toy_config(), R"({"colour": 3})"), ValidationError);
  EXPECT_THROW(with_overrides(toy_config(), "[1]"), ValidationError);
}

TEST(Ablation, LoadsVariantFiles) {
  const auto variants =
      load_variants(fs::path(DSNET_SOURCE_DIR) / "configs" / "variants" / "fusion_and_context.json");
  ASSERT_EQ(variants.size(), 3u);
  EXPECT_EQ(variants[1].name, "add");
  EXPECT_EQ(with_overrides(dsnet_config(), variants[1].overrides).fusion_mode, FusionMode::add);
  EXPECT_THROW(load_variants("/nonexistent.json"), IoError);
}

}  // namespace
}  // namespace dsnet
