#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <random>
#include <set>

#include "dsnet/backbone.hpp"
#include "dsnet/config.hpp"
#include "dsnet/error.hpp"

namespace dsnet {
namespace {

constexpr std::int64_t kDsnetParams = 7116547;
constexpr std::int64_t kDsnetBaseParams = 39626307;
constexpr std::int64_t kDsnetMacs2048 = 225098983424;

ModelConfig toy_config() {
  ModelConfig cfg;
  cfg.variant = Variant::custom;
  cfg.base_channels = 8;
  cfg.stem_downsample = 4;
  cfg.schedule = parse_schedule("d2x3+d3x3+d5x2");
  cfg.spatial_depth = 3;
  cfg.spaspp_channels = 16;
  cfg.spaspp_rates = {2, 4};
  cfg.head_channels = 16;
  cfg.num_classes = 4;
  cfg.grids = {1, 2, 4};
  return cfg;
}

TEST(ConvLayerSpec, GeometryAndValidation) {
  ConvLayerSpec s{3, 2, 1, 32, 64};
  EXPECT_EQ(s.extent(), 5);
  EXPECT_EQ(s.padding(), 2);
  EXPECT_EQ(s.output_size(64), 64);
  ConvLayerSpec stem{3, 1, 2, 3, 32};
  EXPECT_EQ(stem.output_size(224), 112);
  EXPECT_EQ((ConvLayerSpec{3, 15, 1, 1, 1}).extent(), 31);
  EXPECT_THROW((ConvLayerSpec{4, 1, 1, 1, 1}).validate(), ValidationError);
  EXPECT_THROW((ConvLayerSpec{3, 0, 1, 1, 1}).validate(), ValidationError);
  EXPECT_THROW((ConvLayerSpec{3, 1, 0, 1, 1}).validate(), ValidationError);
  EXPECT_THROW((ConvLayerSpec{3, 1, 1, 0, 1}).validate(), ValidationError);
}

TEST(Schedule, ParsesTableNotation) {
  const auto s = parse_schedule("d2x6+d3x6+d5x4");
  EXPECT_EQ(s.groups, (std::vector<RateGroup>{{2, 6}, {3, 6}, {5, 4}}));
  EXPECT_EQ(s.total_layers(), 16);
  EXPECT_EQ(parse_schedule("d1x1").groups, (std::vector<RateGroup>{{1, 1}}));
  EXPECT_EQ(parse_schedule("d2x3+d3x3+d15x10").groups, (std::vector<RateGroup>{{2, 3}, {3, 3}, {15, 10}}));
  EXPECT_EQ(parse_schedule("d2×6+d3X6").groups, (std::vector<RateGroup>{{2, 6}, {3, 6}}));
}

TEST(Schedule, RejectsMalformedAndZero) {
  try {
    parse_schedule("d2x6+q3x6");
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find("q3x6"), std::string::npos);
  }
  EXPECT_THROW(parse_schedule(""), ParseError);
  EXPECT_THROW(parse_schedule("d2x"), ParseError);
  EXPECT_THROW(parse_schedule("d2x6+"), ParseError);
  EXPECT_THROW(parse_schedule("d0x3"), ValidationError);
  EXPECT_THROW(parse_schedule("d2x0"), ValidationError);
}

TEST(Schedule, RoundTripsRandomSchedules) {
  std::mt19937_64 rng(5);
  std::uniform_int_distribution<int> groups(1, 5);
  std::uniform_int_distribution<int> value(1, 40);
  for (int trial = 0; trial < 300; ++trial) {
    DilationSchedule s;
    const int n = groups(rng);
    for (int i = 0; i < n; ++i) s.groups.push_back({value(rng), value(rng)});
    EXPECT_EQ(parse_schedule(s.to_string()), s);
  }
}

TEST(Layout, SplitsGroupsIntoBlocks) {
  EXPECT_EQ(split_into_blocks(6, 3), (std::vector<int>{3, 3}));
  EXPECT_EQ(split_into_blocks(4, 3), (std::vector<int>{2, 2}));
  EXPECT_EQ(split_into_blocks(10, 3), (std::vector<int>{3, 3, 2, 2}));
  EXPECT_EQ(split_into_blocks(1, 3), (std::vector<int>{1}));
  const auto layout = context_layout(dsnet_config());
  ASSERT_EQ(layout.size(), 3u);
  EXPECT_EQ(layout[0].blocks.size(), 2u);
  EXPECT_EQ(layout[0].blocks[0].rates, (std::vector<int>{2, 2, 2}));
  EXPECT_EQ(layout[2].blocks[1].rates, (std::vector<int>{5, 5}));
  EXPECT_EQ(spatial_stage_depths(dsnet_config()), (std::vector<int>{2, 2, 2}));
}

TEST(CountParams, SingleConvWithBatchNorm) {
  PlannedOp conv{"m", "conv", OpKind::conv, ConvLayerSpec{3, 1, 1, 32, 32}, false, 1, 0};
  PlannedOp bn{"m", "bn", OpKind::batch_norm, ConvLayerSpec{1, 1, 1, 32, 32}, false, 1, 0};
  EXPECT_EQ(conv.params() + bn.params(), 9280);
  EXPECT_EQ(2 * conv.macs(64, 64), 75497472);
  EXPECT_EQ(conv.macs(128, 64), 2 * conv.macs(64, 64));
  EXPECT_EQ(bn.macs(64, 64), 0);
}

TEST(CountParams, HeadDeltaIsOneFilter) {
  auto a = dsnet_config(128, 1);
  auto b = dsnet_config(128, 2);
  EXPECT_EQ(count_params(b).total_params - count_params(a).total_params, 128 + 1);
}

TEST(CountParams, AdditiveOverModules) {
  for (const auto& cfg : {dsnet_config(), dsnet_base_config(), toy_config()}) {
    const auto r = count_params(cfg);
    std::int64_t sum = 0;
    for (const auto& [name, n] : r.per_module) sum += n;
    EXPECT_EQ(sum, r.total_params);
    std::int64_t ops = 0;
    for (const auto& op : r.ops) ops += op.params();
    EXPECT_EQ(ops, r.total_params);
  }
}

TEST(CountParams, FrozenGoldens) {
  const auto dsnet = count_params(dsnet_config());
  EXPECT_EQ(dsnet.total_params, kDsnetParams);
  EXPECT_NEAR(static_cast<double>(dsnet.total_params), 6.8e6, 0.2 * 6.8e6);
  EXPECT_EQ(dsnet.macs_at(1024, 2048), kDsnetMacs2048);
  const auto base = count_params(dsnet_base_config());
  EXPECT_EQ(base.total_params, kDsnetBaseParams);
  EXPECT_NEAR(static_cast<double>(base.total_params), 37.5e6, 0.2 * 37.5e6);
}

TEST(CountParams, PlanMatchesMaterializedTensors) {
  for (auto mode : {ModelMode::segmentation, ModelMode::classification}) {
    for (const auto& cfg : {dsnet_config(), toy_config()}) {
      auto model = build_model(cfg, mode);
      std::map<std::string, std::int64_t> tensors;
      for (const auto& p : model->named_parameters()) tensors[p.key()] = p.value().numel();
      std::set<std::string> seen;
      for (const auto& op : plan_model(cfg, mode)) {
        const auto full = op.module + "." + op.name;
        const auto weight = full + ".weight";
        ASSERT_TRUE(tensors.count(weight)) << weight;
        seen.insert(weight);
        std::int64_t n = tensors[weight];
        if (tensors.count(full + ".bias")) {
          n += tensors[full + ".bias"];
          seen.insert(full + ".bias");
        }
        EXPECT_EQ(n, op.params()) << full;
      }
      EXPECT_EQ(seen.size(), tensors.size());
      EXPECT_EQ(count_params(cfg, mode).total_params, materialized_params(*model));
    }
  }
}

TEST(CountParams, AnalyticFlopsMatchExecutedConvolutions) {
  auto toy = build_model(toy_config());
  EXPECT_EQ(measure_macs(toy, 64, 96), count_params(toy_config()).macs_at(64, 96));
  EXPECT_EQ(2 * measure_macs(toy, 64, 96), count_flops(toy, 64, 96));
  auto cls = build_model(toy_config(), ModelMode::classification);
  EXPECT_EQ(measure_macs(cls, 32, 32), count_params(toy_config(), ModelMode::classification).macs_at(32, 32));
  auto full = build_model(dsnet_config());
  EXPECT_EQ(measure_macs(full, 128, 256), count_params(dsnet_config()).macs_at(128, 256));
}

TEST(ModelConfig, ValidationRules) {
  auto cfg = dsnet_config();
  EXPECT_NO_THROW(cfg.validate());
  cfg.base_channels = 16;
  EXPECT_THROW(cfg.validate(), ValidationError);

  cfg = dsnet_config();
  cfg.fusion_points = {1, 3, 2};
  EXPECT_THROW(cfg.validate(), ValidationError);
  cfg.fusion_points = {1, 2, 4};
  EXPECT_THROW(cfg.validate(), ValidationError);
  cfg.fusion_points = {1, 3};
  EXPECT_THROW(cfg.validate(), ValidationError);

  cfg = dsnet_config();
  cfg.stem_downsample = 6;
  EXPECT_THROW(cfg.validate(), ValidationError);
  cfg = dsnet_config();
  cfg.context_multipliers = {4, 6};
  EXPECT_THROW(cfg.validate(), ValidationError);

  auto custom = toy_config();
  custom.fusion_points = {3};
  EXPECT_NO_THROW(custom.validate());
}

TEST(ConfigJson, DefaultFileMatchesBuiltin) {
  const auto cfg = load_config(std::filesystem::path(DSNET_SOURCE_DIR) / "configs" / "dsnet.json");
  EXPECT_EQ(cfg, dsnet_config());
  EXPECT_EQ(cfg.base_channels, 32);
  EXPECT_EQ(cfg.schedule.to_string(), "d2x6+d3x6+d5x4");
  EXPECT_EQ(cfg.fusion_mode, FusionMode::msaf);
  const auto base = load_config(std::filesystem::path(DSNET_SOURCE_DIR) / "configs" / "dsnet_base.json");
  EXPECT_EQ(base, dsnet_base_config());
}

TEST(ConfigJson, RoundTripsRandomValidConfigs) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    auto cfg = toy_config();
    cfg.base_channels = std::uniform_int_distribution<int>(1, 64)(rng);
    cfg.stem_downsample = 1 << std::uniform_int_distribution<int>(1, 4)(rng);
    cfg.spatial_depth = std::uniform_int_distribution<int>(0, 9)(rng);
    cfg.fusion_mode = trial % 2 ? FusionMode::add : FusionMode::msaf;
    cfg.context_module = trial % 3 ? ContextModule::spaspp : ContextModule::none;
    cfg.bidirectional_fusion = trial % 5 != 0;
    cfg.num_classes = std::uniform_int_distribution<int>(1, 200)(rng);
    cfg.fusion_points = trial % 2 ? std::vector<int>{3} : std::vector<int>{1, 2, 3};
    const auto text = config_to_json(cfg);
    EXPECT_EQ(config_from_json(text), cfg);

    const auto path = std::filesystem::temp_directory_path() / ("dsnet_cfg_" + std::to_string(trial) + ".json");
    save_config(cfg, path);
    EXPECT_EQ(load_config(path), cfg);
    std::filesystem::remove(path);
  }
}

TEST(ConfigJson, RejectsUnknownMissingAndBadValues) {
  auto text = config_to_json(dsnet_config());
  auto with = [&](const std::string& from, const std::string& to) {
    auto t = text;
    t.replace(t.find(from), from.size(), to);
    return t;
  };
  try {
    config_from_json(with("\"base_channels\"", "\"colour\": 1, \"base_channels\""));
    FAIL() << "expected ValidationError";
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("colour"), std::string::npos);
  }
  try {
    config_from_json(with("\"fusion_mode\": \"msaf\"", "\"fusion_mode\": \"blend\""));
    FAIL() << "expected ValidationError";
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("blend"), std::string::npos);
  }
  try {
    config_from_json(with("\"head_channels\": 128,", ""));
    FAIL() << "expected ValidationError";
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("head_channels"), std::string::npos);
  }
  EXPECT_THROW(config_from_json(with("\"base_channels\": 32", "\"base_channels\": \"wide\"")), ParseError);
  EXPECT_THROW(config_from_json(with("\"version\": 1", "\"version\": 7")), ValidationError);
  EXPECT_THROW(config_from_json("{not json"), ParseError);
  EXPECT_THROW(config_from_json("[1, 2]"), ParseError);
  EXPECT_THROW(load_config("/nonexistent/dsnet.json"), IoError);
}

TEST(ConfigJson, OptionalTogglesDefault) {
  auto text = config_to_json(dsnet_config());
  for (const std::string key : {"\"spaspp_global\": true,", "\"bidirectional_fusion\": true,"}) {
    text.replace(text.find(key), key.size(), "");
  }
  EXPECT_EQ(config_from_json(text), dsnet_config());
}

}  // namespace
}  // namespace dsnet
