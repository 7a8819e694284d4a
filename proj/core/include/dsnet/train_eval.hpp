#pragma once

// Desk-scale training, evaluation and ablation harness.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "dsnet/backbone.hpp"
#include "dsnet/config.hpp"

namespace dsnet {

inline constexpr int kIgnoreLabel = 255;

struct TrainConfig {
  int iterations = 500;
  double base_lr = 0.01;
  double power = 0.9;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  int batch_size = 2;
  int crop_h = 64;
  int crop_w = 64;
  double scale_min = 0.4;
  double scale_max = 1.6;
  bool augment = true;  // flip + random scale + random crop; otherwise top-left crop/pad only
  std::uint64_t seed = 0;

  void validate() const;
};

/// image: (3, H, W) float32, normalized; mask: (H, W) int64 class ids or 255.
struct SegSample {
  torch::Tensor image;
  torch::Tensor mask;
  std::string name;
};

struct Dataset {
  std::vector<SegSample> samples;
  int num_classes = 0;

  std::size_t size() const { return samples.size(); }
  bool empty() const { return samples.empty(); }
};

/// base_lr * (1 - iter / iterations)^power.
double poly_lr(int iter, const TrainConfig& cfg);

struct AugmentParams {
  bool flip = false;
  double scale = 1.0;
  int crop_y = 0;
  int crop_x = 0;
};

/// Draws flip / scale / crop offsets for one sample from `rng`.
AugmentParams sample_augment(const SegSample& sample, const TrainConfig& cfg, std::mt19937_64& rng);
/// Flips, rescales (bilinear image, nearest mask) to floor(H * scale) x
/// floor(W * scale), pads to at least crop size (image with zeros, mask
/// with the ignore label) at the bottom / right, then crops at the offsets.
SegSample apply_augment(const SegSample& sample, const AugmentParams& params, int crop_h, int crop_w);
SegSample augment(const SegSample& sample, const TrainConfig& cfg, std::mt19937_64& rng);

/// Nearest-neighbour resize of an (H, W) integer mask: src = dst * in / out.
torch::Tensor resize_mask_nearest(const torch::Tensor& mask, int height, int width);

struct TrainResult {
  std::vector<double> loss_trace;
  std::vector<double> lr_trace;
};

struct TrainHooks {
  /// Called after every iteration with (iteration, lr, loss).
  std::function<void(int, double, double)> on_iteration;
  /// When set, a line-delimited JSON metrics log is written here.
  std::filesystem::path metrics_log;
  /// When set, a checkpoint is written here at the end of training.
  std::filesystem::path checkpoint;
};

/// SGD with momentum / weight decay, per-pixel cross-entropy ignoring label
/// 255 and the poly schedule. Throws ValidationError on an empty dataset and
/// RuntimeFailure on a non-finite loss.
TrainResult train(DSNet& model, const Dataset& data, const TrainConfig& cfg, const TrainHooks& hooks = {});

/// Rows are ground truth, columns prediction; ignore-labelled pixels are
/// skipped.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(int num_classes);

  /// gt and pred are integer tensors of identical shape.
  void update(const torch::Tensor& gt, const torch::Tensor& pred);
  void add(int gt, int pred, std::int64_t count = 1);

  int num_classes() const { return num_classes_; }
  std::int64_t at(int gt, int pred) const { return counts_[static_cast<std::size_t>(gt) * num_classes_ + pred]; }
  std::int64_t total() const;
  const std::vector<std::int64_t>& counts() const { return counts_; }

 private:
  int num_classes_;
  std::vector<std::int64_t> counts_;
};

struct EvalResult {
  double miou = 0.0;
  /// IoU per class; empty for classes absent from both ground truth and
  /// predictions (excluded from the mean).
  std::vector<std::optional<double>> per_class_iou;
  double pixel_accuracy = 0.0;
  ConfusionMatrix confusion{1};
};

/// IoU_c = TP / (TP + FP + FN). Throws ValidationError("no labeled pixels")
/// when the matrix is empty.
EvalResult summarize(const ConfusionMatrix& confusion);

/// Per-pixel argmax over full-image logits, accumulated over the dataset.
EvalResult evaluate(DSNet& model, const Dataset& data);
/// Scores precomputed class-index predictions against ground-truth masks.
EvalResult evaluate_predictions(const std::vector<torch::Tensor>& ground_truth,
                                const std::vector<torch::Tensor>& predictions, int num_classes);

/// (H, W) int64 class-index prediction for one normalized (3, H, W) image.
/// Inputs whose sides are not multiples of the stem stride are zero-padded.
torch::Tensor predict(DSNet& model, const torch::Tensor& image);

// Image files.

struct Image8 {
  int width = 0;
  int height = 0;
  int channels = 0;  // 1 or 3
  std::vector<std::uint8_t> pixels;
};

Image8 read_png(const std::filesystem::path& path, int channels);
void write_png(const std::filesystem::path& path, const Image8& image);

/// Normalizes an RGB image to a (3, H, W) float tensor.
torch::Tensor image_to_tensor(const Image8& rgb);
torch::Tensor mask_to_tensor(const Image8& gray);
Image8 tensor_to_mask(const torch::Tensor& mask);

/// Pairs images/<name>.png with masks/<name>.png in lexicographic order.
Dataset load_dataset(const std::filesystem::path& root, int num_classes);

struct SyntheticSample {
  std::string name;
  Image8 image;
  Image8 mask;
};

/// Colored rectangles and discs on a background; each class has its own
/// colour so masks are recoverable from pixels. A 2-pixel border band of
/// every mask carries the ignore label. Deterministic per seed.
std::vector<SyntheticSample> generate_synthetic(int n, int hw, int classes, std::uint64_t seed);
/// Writes generate_synthetic's output under root/images and root/masks.
void make_synthetic(int n, int hw, int classes, std::uint64_t seed, const std::filesystem::path& root);
Dataset synthetic_dataset(int n, int hw, int classes, std::uint64_t seed);

// Ablations.

struct AblationVariant {
  std::string name;
  std::string overrides;  // JSON object of config fields replacing the base values
};

struct AblationRun {
  std::string variant;
  std::uint64_t seed = 0;
  double miou = 0.0;
  double pixel_accuracy = 0.0;
  double final_loss = 0.0;
};

struct AblationTable {
  std::vector<AblationRun> runs;

  /// Mean mIoU of a variant over its seeds.
  double mean_miou(const std::string& variant) const;
  std::string format() const;
};

/// Merges a JSON object of overrides onto a configuration.
ModelConfig with_overrides(const ModelConfig& base, const std::string& overrides);
std::vector<AblationVariant> load_variants(const std::filesystem::path& path);

/// Trains every variant for every seed on identical data and evaluates it.
AblationTable run_ablation(const ModelConfig& base, const std::vector<AblationVariant>& variants,
                           const TrainConfig& train_cfg, const Dataset& train_data, const Dataset& eval_data,
                           const std::vector<std::uint64_t>& seeds);

/// Builds a model with parameters drawn from `seed`.
DSNet build_seeded_model(const ModelConfig& cfg, std::uint64_t seed, ModelMode mode = ModelMode::segmentation);

}  // namespace dsnet
