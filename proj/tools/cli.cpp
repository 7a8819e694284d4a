#include "cli.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include "dsnet/backbone.hpp"
#include "dsnet/config.hpp"
#include "dsnet/error.hpp"
#include "dsnet/rf_lint.hpp"
#include "dsnet/train_eval.hpp"

namespace dsnet::cli {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

struct Size2 {
  int height = 0;
  int width = 0;
};

/// Parses "HxW" (e.g. "1024x2048") or a single integer for a square size.
Size2 parse_size(const std::string& text) {
  const auto x = text.find_first_of("xX");
  try {
    std::size_t used = 0;
    if (x == std::string::npos) {
      const int v = std::stoi(text, &used);
      if (used != text.size() || v < 1) throw ValidationError("");
      return {v, v};
    }
    const int h = std::stoi(text.substr(0, x), &used);
    if (used != x) throw ValidationError("");
    const auto rest = text.substr(x + 1);
    const int w = std::stoi(rest, &used);
    if (used != rest.size() || h < 1 || w < 1) throw ValidationError("");
    return {h, w};
  } catch (const std::exception&) {
    throw ValidationError("invalid size '" + text + "' (expected HxW or N)");
  }
}

std::vector<std::uint64_t> parse_seeds(const std::string& text) {
  std::vector<std::uint64_t> seeds;
  std::stringstream in(text);
  std::string token;
  while (std::getline(in, token, ',')) {
    try {
      std::size_t used = 0;
      seeds.push_back(std::stoull(token, &used));
      if (used != token.size()) throw ValidationError("");
    } catch (const std::exception&) {
      throw ValidationError("invalid seed list '" + text + "'");
    }
  }
  if (seeds.empty()) throw ValidationError("empty seed list");
  return seeds;
}

/// Device named by DSNET_DEVICE ("cpu" when unset).
torch::Device default_device() {
  const char* env = std::getenv("DSNET_DEVICE");
  const std::string name = env && *env ? env : "cpu";
  std::optional<torch::Device> device;
  try {
    device.emplace(name);
  } catch (const std::exception&) {
    throw ValidationError("DSNET_DEVICE='" + name + "' is not a device name");
  }
  if (device->is_cuda() && !torch::cuda::is_available()) {
    throw ValidationError("DSNET_DEVICE='" + name + "' requested but CUDA is unavailable");
  }
  return *device;
}

fs::path under(const fs::path& out_dir, const fs::path& p) {
  return out_dir.empty() || p.is_absolute() ? p : out_dir / p;
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream f(path);
  if (!f) throw IoError("cannot write " + path.string());
  f << text;
}

bool is_json(const std::string& format) { return format == "json" || format == "json-like"; }

/// Flags shared by `train` and `ablate`.
struct TrainFlags {
  TrainConfig cfg;
  std::string crop = "64x64";
  bool no_augment = false;
  bool double_precision = false;

  void add_to(CLI::App* app) {
    app->add_option("--iterations", cfg.iterations, "Training iterations")->capture_default_str();
    app->add_option("--lr", cfg.base_lr, "Initial learning rate")->capture_default_str();
    app->add_option("--power", cfg.power, "Poly schedule power")->capture_default_str();
    app->add_option("--momentum", cfg.momentum, "SGD momentum")->capture_default_str();
    app->add_option("--weight-decay", cfg.weight_decay, "SGD weight decay")->capture_default_str();
    app->add_option("--batch-size", cfg.batch_size, "Images per iteration")->capture_default_str();
    app->add_option("--crop", crop, "Training crop HxW")->capture_default_str();
    app->add_option("--scale-min", cfg.scale_min, "Smallest random rescale factor")->capture_default_str();
    app->add_option("--scale-max", cfg.scale_max, "Largest random rescale factor")->capture_default_str();
    app->add_option("--seed", cfg.seed, "Seed for initialization, shuffling and augmentation")->capture_default_str();
    app->add_flag("--no-augment", no_augment, "Disable flip / rescale / random crop");
    app->add_flag("--double", double_precision, "Train in double precision");
  }

  TrainConfig resolve() const {
    TrainConfig out = cfg;
    const auto size = parse_size(crop);
    out.crop_h = size.height;
    out.crop_w = size.width;
    out.augment = !no_augment;
    out.validate();
    return out;
  }
};

// Subcommands.

int cmd_analyze(const std::string& config_path, const std::string& input_size, const std::string& format,
                const std::string& mode_name, const fs::path& out_dir, std::ostream& out) {
  const auto cfg = load_config(config_path);
  const auto size = parse_size(input_size);
  const auto mode = mode_name == "classification" ? ModelMode::classification : ModelMode::segmentation;
  const auto report = count_params(cfg, mode);
  const auto rows = context_rf_table(cfg);
  const auto macs = report.macs_at(size.height, size.width);

  std::ostringstream text;
  if (is_json(format)) {
    json doc;
    doc["config"] = json::parse(config_to_json(cfg));
    doc["mode"] = std::string(to_string(mode));
    doc["input_size"] = {size.height, size.width};
    doc["params"] = report.total_params;
    doc["params_per_module"] = report.per_module;
    doc["macs"] = macs;
    doc["flops"] = 2 * macs;
    doc["receptive_fields"] = json::parse(rf_table_to_json(rows));
    text << doc.dump(2) << "\n";
  } else {
    text << "context branch receptive fields (stem stride " << cfg.stem_downsample << ")\n";
    text << format_rf_table(rows) << "\n";
    text << "parameters (" << to_string(mode) << ")\n";
    for (const auto& [module, count] : report.per_module) {
      text << "  " << std::left << std::setw(10) << module << std::right << std::setw(12) << count << "\n";
    }
    text << "  " << std::left << std::setw(10) << "total" << std::right << std::setw(12) << report.total_params
         << "  (" << std::fixed << std::setprecision(2) << report.total_params / 1e6 << "M)\n";
    text << "compute at " << size.height << "x" << size.width << ": " << std::setprecision(1) << macs / 1e9
         << " GMACs, " << 2 * macs / 1e9 << " GFLOPs\n";
  }
  out << text.str();
  if (!out_dir.empty()) write_text(out_dir / (is_json(format) ? "analyze.json" : "analyze.txt"), text.str());
  return kExitOk;
}

int cmd_lint(const std::string& config_path, int pretrain_size, const LintThresholds& thresholds,
             const std::string& format, const fs::path& out_dir, std::ostream& out) {
  const auto cfg = load_config(config_path);
  const auto report = lint(cfg, pretrain_size, thresholds);
  const auto text = is_json(format) ? lint_report_to_json(report) + "\n" : format_lint_report(report);
  out << text;
  if (!out_dir.empty()) write_text(out_dir / (is_json(format) ? "lint.json" : "lint.txt"), text);
  return report.has_disaster() ? kExitValidation : kExitOk;
}

int cmd_train(const std::string& config_path, const fs::path& data_root, const TrainFlags& flags,
              const fs::path& out_dir, std::ostream& out) {
  const auto cfg = load_config(config_path);
  const auto tcfg = flags.resolve();
  const auto data = load_dataset(data_root, cfg.num_classes);
  auto model = build_seeded_model(cfg, tcfg.seed);
  if (flags.double_precision) model->to(torch::kFloat64);
  model->to(default_device());

  TrainHooks hooks;
  hooks.metrics_log = out_dir / "metrics.jsonl";
  hooks.checkpoint = out_dir / "model.ckpt";
  const int every = std::max(1, tcfg.iterations / 10);
  hooks.on_iteration = [&](int it, double lr, double loss) {
    if (it % every == 0 || it + 1 == tcfg.iterations) {
      out << "iter " << std::setw(6) << it << "  lr " << std::scientific << std::setprecision(3) << lr << "  loss "
          << std::fixed << std::setprecision(5) << loss << "\n";
    }
  };
  const auto result = train(model, data, tcfg, hooks);
  const auto eval = evaluate(model, data);
  out << std::fixed << std::setprecision(5) << "final loss " << result.loss_trace.back() << "\n"
      << "train mIoU " << eval.miou << "  pixel acc " << eval.pixel_accuracy << "\n"
      << "checkpoint " << hooks.checkpoint.string() << "\n"
      << "metrics " << hooks.metrics_log.string() << "\n";
  return kExitOk;
}

std::string format_eval(const EvalResult& r, const std::string& format) {
  std::ostringstream text;
  if (is_json(format)) {
    json doc;
    doc["miou"] = r.miou;
    doc["pixel_accuracy"] = r.pixel_accuracy;
    json ious = json::array();
    for (const auto& v : r.per_class_iou) ious.push_back(v ? json(*v) : json(nullptr));
    doc["per_class_iou"] = ious;
    json rows = json::array();
    for (int g = 0; g < r.confusion.num_classes(); ++g) {
      json row = json::array();
      for (int p = 0; p < r.confusion.num_classes(); ++p) row.push_back(r.confusion.at(g, p));
      rows.push_back(row);
    }
    doc["confusion"] = rows;
    text << doc.dump(2) << "\n";
  } else {
    text << std::fixed << std::setprecision(4) << "mIoU " << r.miou << "  pixel acc " << r.pixel_accuracy << "\n";
    for (std::size_t c = 0; c < r.per_class_iou.size(); ++c) {
      text << "  class " << std::setw(3) << c << "  IoU ";
      if (r.per_class_iou[c]) {
        text << *r.per_class_iou[c] << "\n";
      } else {
        text << "n/a\n";
      }
    }
  }
  return text.str();
}

int cmd_eval(const fs::path& checkpoint, const fs::path& data_root, const std::string& format, const fs::path& out_dir,
             std::ostream& out) {
  auto model = load_checkpoint(checkpoint);
  model->to(default_device());
  const auto data = load_dataset(data_root, model->config().num_classes);
  const auto text = format_eval(evaluate(model, data), format);
  out << text;
  if (!out_dir.empty()) write_text(out_dir / (is_json(format) ? "eval.json" : "eval.txt"), text);
  return kExitOk;
}

int cmd_infer(const fs::path& checkpoint, const fs::path& image_path, const fs::path& mask_path,
              const fs::path& out_dir, std::ostream& out) {
  auto model = load_checkpoint(checkpoint);
  model->to(default_device());
  const auto image = read_png(image_path, 3);
  const auto prediction = predict(model, image_to_tensor(image));
  const auto target = under(out_dir, mask_path);
  write_png(target, tensor_to_mask(prediction));
  out << "wrote " << target.string() << " (" << image.height << "x" << image.width << ")\n";
  return kExitOk;
}

int cmd_synth(int n, int hw, int classes, std::uint64_t seed, const fs::path& root, const fs::path& out_dir,
              std::ostream& out) {
  const auto target = under(out_dir, root);
  make_synthetic(n, hw, classes, seed, target);
  out << "wrote " << n << " samples (" << hw << "x" << hw << ", " << classes << " classes) to " << target.string()
      << "\n";
  return kExitOk;
}

int cmd_ablate(const std::string& config_path, const fs::path& variants_path, const fs::path& data_root,
               const std::string& eval_root, const std::string& seeds_text, const TrainFlags& flags,
               const fs::path& out_dir, std::ostream& out) {
  const auto base = load_config(config_path);
  const auto variants = load_variants(variants_path);
  const auto tcfg = flags.resolve();
  const auto seeds = parse_seeds(seeds_text);
  const auto train_data = load_dataset(data_root, base.num_classes);
  const auto eval_data = eval_root.empty() ? train_data : load_dataset(eval_root, base.num_classes);
  const auto table = run_ablation(base, variants, tcfg, train_data, eval_data, seeds);
  const auto text = table.format();
  out << text;
  if (!out_dir.empty()) {
    json runs = json::array();
    for (const auto& r : table.runs) {
      runs.push_back({{"variant", r.variant},
                      {"seed", r.seed},
                      {"miou", r.miou},
                      {"pixel_accuracy", r.pixel_accuracy},
                      {"final_loss", r.final_loss}});
    }
    write_text(out_dir / "ablation.txt", text);
    write_text(out_dir / "ablation.json", runs.dump(2) + "\n");
  }
  return kExitOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"DSNet toolkit: configuration analysis, atrous lint, training, evaluation and ablations", "dsnet"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "dsnet 0.1.0");

  std::string out_dir;
  std::string format = "table";
  const auto add_out_dir = [&](CLI::App* sub, bool required) {
    auto* opt = sub->add_option("--out-dir", out_dir, "Directory receiving every output of the command");
    if (required) opt->required();
  };
  const auto add_format = [&](CLI::App* sub) {
    sub->add_option("--format", format, "Report format")
        ->check(CLI::IsMember({"table", "json", "json-like"}))
        ->capture_default_str();
  };

  std::string config_path;
  std::string data_root;
  std::string checkpoint;

  auto* analyze = app.add_subcommand("analyze", "Receptive-field table, parameter and FLOP counts of a configuration");
  std::string input_size = "1024x2048";
  std::string mode_name = "segmentation";
  analyze->add_option("config", config_path, "Model configuration file")->required();
  analyze->add_option("--input-size", input_size, "Image size HxW used for FLOP counting")->capture_default_str();
  analyze->add_option("--mode", mode_name, "Network mode")
      ->check(CLI::IsMember({"segmentation", "classification"}))
      ->capture_default_str();
  add_format(analyze);
  add_out_dir(analyze, false);

  auto* lint_cmd = app.add_subcommand("lint", "Check a configuration against the atrous design guidelines");
  int pretrain_size = 224;
  LintThresholds thresholds;
  lint_cmd->add_option("config", config_path, "Model configuration file")->required();
  lint_cmd->add_option("--pretrain-size", pretrain_size, "Pretraining image size")->capture_default_str();
  lint_cmd->add_option("--warn-fraction", thresholds.warn_fraction, "Padding fraction raising a warning")
      ->capture_default_str();
  lint_cmd->add_option("--disaster-fraction", thresholds.disaster_fraction, "Padding fraction flagged as disaster")
      ->capture_default_str();
  add_format(lint_cmd);
  add_out_dir(lint_cmd, false);

  auto* train_cmd = app.add_subcommand("train", "Train a segmentation model; writes model.ckpt and metrics.jsonl");
  TrainFlags train_flags;
  train_cmd->add_option("config", config_path, "Model configuration file")->required();
  train_cmd->add_option("data", data_root, "Dataset root holding images/ and masks/")->required();
  train_flags.add_to(train_cmd);
  add_out_dir(train_cmd, true);

  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset (mIoU, per-class IoU)");
  eval_cmd->add_option("checkpoint", checkpoint, "Checkpoint file")->required();
  eval_cmd->add_option("data", data_root, "Dataset root holding images/ and masks/")->required();
  add_format(eval_cmd);
  add_out_dir(eval_cmd, false);

  auto* infer_cmd = app.add_subcommand("infer", "Predict a class-index mask for one PNG image");
  std::string image_path;
  std::string mask_path;
  infer_cmd->add_option("checkpoint", checkpoint, "Checkpoint file")->required();
  infer_cmd->add_option("image", image_path, "Input RGB PNG")->required();
  infer_cmd->add_option("mask", mask_path, "Output single-channel PNG (relative paths resolve under --out-dir)")
      ->required();
  add_out_dir(infer_cmd, false);

  auto* synth_cmd = app.add_subcommand("synth", "Write a synthetic shapes dataset");
  int n = 4;
  int hw = 64;
  int classes = 4;
  std::uint64_t synth_seed = 0;
  std::string synth_root;
  synth_cmd->add_option("root", synth_root, "Dataset root (relative paths resolve under --out-dir)")->required();
  synth_cmd->add_option("--n", n, "Number of samples")->capture_default_str();
  synth_cmd->add_option("--hw", hw, "Image side length")->capture_default_str();
  synth_cmd->add_option("--classes", classes, "Number of classes including background")->capture_default_str();
  synth_cmd->add_option("--seed", synth_seed, "Generator seed")->capture_default_str();
  add_out_dir(synth_cmd, false);

  auto* ablate_cmd = app.add_subcommand("ablate", "Train and evaluate configuration variants over several seeds");
  std::string variants_path;
  std::string eval_root;
  std::string seeds = "0,1,2";
  TrainFlags ablate_flags;
  ablate_cmd->add_option("config", config_path, "Base model configuration file")->required();
  ablate_cmd->add_option("variants", variants_path, "JSON array of {name, overrides}")->required();
  ablate_cmd->add_option("data", data_root, "Training dataset root")->required();
  ablate_cmd->add_option("--eval-data", eval_root, "Evaluation dataset root (defaults to the training set)");
  ablate_cmd->add_option("--seeds", seeds, "Comma-separated seeds")->capture_default_str();
  ablate_flags.add_to(ablate_cmd);
  add_out_dir(ablate_cmd, false);

  std::vector<const char*> argv{"dsnet"};
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitValidation;
  }

  try {
    if (analyze->parsed()) return cmd_analyze(config_path, input_size, format, mode_name, out_dir, out);
    if (lint_cmd->parsed()) return cmd_lint(config_path, pretrain_size, thresholds, format, out_dir, out);
    if (train_cmd->parsed()) return cmd_train(config_path, data_root, train_flags, out_dir, out);
    if (eval_cmd->parsed()) return cmd_eval(checkpoint, data_root, format, out_dir, out);
    if (infer_cmd->parsed()) return cmd_infer(checkpoint, image_path, mask_path, out_dir, out);
    if (synth_cmd->parsed()) return cmd_synth(n, hw, classes, synth_seed, synth_root, out_dir, out);
    if (ablate_cmd->parsed()) {
      return cmd_ablate(config_path, variants_path, data_root, eval_root, seeds, ablate_flags, out_dir, out);
    }
  } catch (const RuntimeFailure& e) {
    err << "error: " << e.what() << "\n";
    return kExitRuntime;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const fs::filesystem_error& e) {
    err << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitValidation;
}

}  // namespace dsnet::cli
