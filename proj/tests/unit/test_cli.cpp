#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "cli.hpp"
#include "dsnet/train_eval.hpp"

namespace dsnet {
namespace {

namespace fs = std::filesystem;

struct Result {
  int code;
  std::string out;
  std::string err;
};

Result run(std::vector<std::string> args) {
  std::ostringstream out;
  std::ostringstream err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

std::string config(const std::string& name) { return (fs::path(DSNET_SOURCE_DIR) / "configs" / name).string(); }

fs::path temp_dir(const std::string& name) {
  auto dir = fs::temp_directory_path() / ("dsnet_cli_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

TEST(Cli, HelpOnEverySubcommand) {
  EXPECT_EQ(run({"--help"}).code, 0);
  for (const std::string sub : {"analyze", "lint", "train", "eval", "infer", "synth", "ablate"}) {
    const auto r = run({sub, "--help"});
    EXPECT_EQ(r.code, 0) << sub;
    EXPECT_NE(r.out.find("--"), std::string::npos) << sub;
  }
  const auto train_help = run({"train", "--help"}).out;
  for (const auto* flag : {"--iterations", "--lr", "--batch-size", "--crop", "--scale-min", "--seed", "--out-dir"}) {
    EXPECT_NE(train_help.find(flag), std::string::npos) << flag;
  }
  EXPECT_EQ(run({}).code, 1);
  EXPECT_EQ(run({"bogus"}).code, 1);
}

TEST(Cli, AnalyzeTableAndJson) {
  const auto table = run({"analyze", config("dsnet.json")});
  ASSERT_EQ(table.code, 0) << table.err;
  for (const auto* cell : {"5x5", "9x9", "13x13", "total", "GFLOPs"}) {
    EXPECT_NE(table.out.find(cell), std::string::npos) << cell;
  }
  const auto json = run({"analyze", config("dsnet.json"), "--format", "json-like", "--input-size", "512x1024"});
  ASSERT_EQ(json.code, 0);
  const auto doc = nlohmann::json::parse(json.out);
  EXPECT_EQ(doc["params"], 7116547);
  EXPECT_EQ(doc["receptive_fields"][0]["rf"], 5);
  EXPECT_EQ(doc["receptive_fields"][1]["rf"], 9);
  EXPECT_EQ(doc["receptive_fields"][2]["rf"], 13);
  EXPECT_EQ(run({"analyze", "/nonexistent.json"}).code, 1);
  EXPECT_EQ(run({"analyze", config("dsnet.json"), "--input-size", "abc"}).code, 1);
}

TEST(Cli, LintExitCodes) {
  EXPECT_EQ(run({"lint", config("dsnet.json")}).code, 0);
  const auto d15 = run({"lint", config("dsnet_d15.json")});
  EXPECT_EQ(d15.code, 1);
  EXPECT_NE(d15.out.find("disaster"), std::string::npos);
  const auto relaxed = run({"lint", config("dsnet_d15.json"), "--pretrain-size", "512", "--format", "json"});
  const auto strict = run({"lint", config("dsnet_d15.json"), "--format", "json"});
  EXPECT_LT(nlohmann::json::parse(relaxed.out)["disaster"].get<int>(),
            nlohmann::json::parse(strict.out)["disaster"].get<int>());
}

TEST(Cli, SynthTrainEvalInferPipeline) {
  const auto dir = temp_dir("pipeline");
  ASSERT_EQ(run({"synth", "data", "--n", "3", "--hw", "32", "--classes", "4", "--out-dir", dir.string()}).code, 0);

  const auto untrained = temp_dir("pipeline_untrained");
  auto model = build_seeded_model(load_config(config("toy.json")), 0);
  save_checkpoint(model, untrained / "model.ckpt");
  const auto chance = run({"eval", (untrained / "model.ckpt").string(), (dir / "data").string(), "--format", "json"});
  ASSERT_EQ(chance.code, 0) << chance.err;
  EXPECT_LT(nlohmann::json::parse(chance.out)["miou"].get<double>(), 0.5);

  const auto trained = run({"train", config("toy.json"), (dir / "data").string(), "--iterations", "5", "--crop",
                            "32x32", "--out-dir", (dir / "run").string()});
  ASSERT_EQ(trained.code, 0) << trained.err;
  EXPECT_TRUE(fs::exists(dir / "run" / "model.ckpt"));
  EXPECT_TRUE(fs::exists(dir / "run" / "metrics.jsonl"));

  const auto eval = run({"eval", (dir / "run" / "model.ckpt").string(), (dir / "data").string(), "--out-dir",
                         (dir / "run").string()});
  ASSERT_EQ(eval.code, 0) << eval.err;
  EXPECT_NE(eval.out.find("mIoU"), std::string::npos);
  EXPECT_TRUE(fs::exists(dir / "run" / "eval.txt"));

  const auto infer = run({"infer", (dir / "run" / "model.ckpt").string(),
                          (dir / "data" / "images" / "sample_0000.png").string(), "pred.png", "--out-dir",
                          (dir / "run").string()});
  ASSERT_EQ(infer.code, 0) << infer.err;
  const auto mask = read_png(dir / "run" / "pred.png", 1);
  EXPECT_EQ(mask.width, 32);
  EXPECT_EQ(mask.height, 32);

  const auto repeat = run({"eval", (dir / "run" / "model.ckpt").string(), (dir / "data").string()});
  EXPECT_EQ(repeat.out, eval.out);

  fs::remove(dir / "data" / "masks" / "sample_0001.png");
  EXPECT_EQ(run({"eval", (dir / "run" / "model.ckpt").string(), (dir / "data").string()}).code, 1);
  EXPECT_EQ(run({"train", config("toy.json"), (dir / "data").string()}).code, 1);
  fs::remove_all(dir);
  fs::remove_all(untrained);
}

TEST(Cli, AblateWritesTable) {
  const auto dir = temp_dir("ablate");
  ASSERT_EQ(run({"synth", (dir / "data").string(), "--n", "2", "--hw", "32"}).code, 0);
  const auto r = run({"ablate", config("toy.json"), config("variants/fusion_and_context.json"),
                      (dir / "data").string(), "--iterations", "2", "--crop", "32x32", "--seeds", "0", "--out-dir",
                      (dir / "out").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  for (const auto* name : {"msaf", "add", "no-spaspp"}) EXPECT_NE(r.out.find(name), std::string::npos);
  EXPECT_EQ(nlohmann::json::parse(std::ifstream(dir / "out" / "ablation.json")).size(), 3u);
  EXPECT_EQ(run({"ablate", config("toy.json"), config("variants/fusion_and_context.json"), (dir / "data").string(),
                 "--seeds", "x"})
                .code,
            1);
  fs::remove_all(dir);
}

TEST(Cli, RejectsUnknownDevice) {
  const auto dir = temp_dir("device");
  ASSERT_EQ(run({"synth", (dir / "data").string(), "--n", "1", "--hw", "32"}).code, 0);
  setenv("DSNET_DEVICE", "quantum", 1);
  EXPECT_EQ(run({"train", config("toy.json"), (dir / "data").string(), "--iterations", "1", "--out-dir",
                 (dir / "run").string()})
                .code,
            1);
  unsetenv("DSNET_DEVICE");
  fs::remove_all(dir);
}

}  // namespace
}  // namespace dsnet
