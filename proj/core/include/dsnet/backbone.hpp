#pragma once

// Dual-branch same-resolution network assembled from the blocks.

#include <cstdint>
#include <filesystem>
#include <utility>
#include <vector>

#include <torch/torch.h>

#include "dsnet/blocks.hpp"
#include "dsnet/config.hpp"

namespace dsnet {

/// Joins the two branches at one fusion point. The spatial map is projected
/// to the context width when they differ; the fused map continues the context
/// branch and, when `emit_spatial` is set, is projected back to continue the
/// spatial branch too.
class LateralFusionImpl : public torch::nn::Module {
 public:
  LateralFusionImpl(int context_channels, int spatial_channels, FusionMode mode, const MSAConfig& msa,
                    bool emit_spatial);

  /// Returns (next context input, next spatial input).
  std::pair<torch::Tensor, torch::Tensor> forward(const torch::Tensor& context, const torch::Tensor& spatial);

  ConvBNAct spatial_proj{nullptr};
  MSAF msaf{nullptr};
  ConvBNAct back_proj{nullptr};

 private:
  FusionMode mode_;
  bool emit_spatial_;
};
TORCH_MODULE(LateralFusion);

struct FusionTrace {
  std::vector<int64_t> context_shape;
  std::vector<int64_t> spatial_shape;
};

class DSNetImpl : public torch::nn::Module {
 public:
  DSNetImpl(const ModelConfig& cfg, ModelMode mode);

  /// Segmentation: (N, classes, H, W) logits. Classification: (N, classes).
  /// Throws ValidationError unless H and W are divisible by stem_downsample.
  torch::Tensor forward(const torch::Tensor& image);
  /// Branch shapes entering every fusion point for the given input.
  std::vector<FusionTrace> trace_fusions(const torch::Tensor& image);

  const ModelConfig& config() const { return cfg_; }
  ModelMode mode() const { return mode_; }

  torch::nn::Sequential stem{nullptr};
  torch::nn::ModuleList context{nullptr};  // groups of MFACB blocks
  torch::nn::ModuleList spatial{nullptr};  // stages of basic blocks
  torch::nn::ModuleList fusion{nullptr};
  SPASPP spaspp{nullptr};
  SegHead seg_head{nullptr};
  ClsHead cls_head{nullptr};

 private:
  torch::Tensor run(const torch::Tensor& image, std::vector<FusionTrace>* trace);
  ModelConfig cfg_;
  ModelMode mode_;
};
TORCH_MODULE(DSNet);

DSNet build_model(const ModelConfig& cfg, ModelMode mode = ModelMode::segmentation);

/// Number of learnable scalars of a materialized module.
std::int64_t materialized_params(const torch::nn::Module& module);

/// Analytic FLOPs (2 x multiply-accumulates of conv / linear nodes) for one
/// image of the given size.
std::int64_t count_flops(const DSNet& model, int height, int width);
/// Multiply-accumulates per image recorded while actually running the model
/// on a zero image of the given size.
std::int64_t measure_macs(DSNet& model, int height, int width);

// Checkpoints: versioned flat map of tensor name -> array (parameters and
// buffers) with the producing configuration embedded.

void save_checkpoint(DSNet& model, const std::filesystem::path& path);
/// Rebuilds the model described by the checkpoint and loads its tensors.
DSNet load_checkpoint(const std::filesystem::path& path);
/// Loads tensors into an existing model; throws ValidationError when the
/// embedded configuration or mode differs from the model's.
void load_checkpoint_into(DSNet& model, const std::filesystem::path& path);

}  // namespace dsnet
