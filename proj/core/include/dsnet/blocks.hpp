#pragma once

// Differentiable building blocks over (N, C, H, W) feature maps.

#include <cstdint>
#include <string_view>
#include <vector>

#include <torch/torch.h>

#include "dsnet/config.hpp"

namespace dsnet {

/// A real-valued (N, C, H, W) tensor. Blocks accept any floating dtype and
/// keep it.
using FeatureMap = torch::Tensor;

/// Throws ShapeError unless `x` is 4-D with non-empty dims and, when
/// `channels` > 0, exactly that many channels.
void check_feature_map(const torch::Tensor& x, int channels, std::string_view who);

/// Accumulates per-sample multiply-accumulates of every conv / linear node
/// executed on this thread while the counter is alive. Counters nest.
class MacCounter {
 public:
  MacCounter();
  ~MacCounter();
  MacCounter(const MacCounter&) = delete;
  MacCounter& operator=(const MacCounter&) = delete;

  std::int64_t macs() const { return macs_; }

  static void record(std::int64_t macs);

 private:
  std::int64_t macs_ = 0;
  MacCounter* previous_;
};

/// Convolution, batch normalization and (optionally) ReLU.
class ConvBNActImpl : public torch::nn::Module {
 public:
  explicit ConvBNActImpl(const ConvLayerSpec& spec, bool activation = true);

  torch::Tensor forward(const torch::Tensor& x);

  const ConvLayerSpec& spec() const { return spec_; }
  torch::nn::Conv2d conv{nullptr};
  torch::nn::BatchNorm2d bn{nullptr};

 private:
  ConvLayerSpec spec_;
  bool activation_;
};
TORCH_MODULE(ConvBNAct);

/// Pointwise channel compression / expansion: 1x1 conv C -> C/r, ReLU,
/// 1x1 conv C/r -> C.
class GonvImpl : public torch::nn::Module {
 public:
  GonvImpl(int channels, int hidden);
  torch::Tensor forward(const torch::Tensor& x);

  torch::nn::Conv2d squeeze{nullptr};
  torch::nn::Conv2d expand{nullptr};
};
TORCH_MODULE(Gonv);

/// Adaptive partition of `length` pixels into `cells` regions:
/// region i covers [floor(i*L/g), ceil((i+1)*L/g)).
struct RegionPartition {
  std::vector<int> begin;
  std::vector<int> end;
};
RegionPartition region_partition(int length, int cells);

/// Broadcasts each cell of a (N, C, g, g) map uniformly over its region of an
/// H x W map. Pixels covered by several overlapping regions receive the mean
/// of those cells.
torch::Tensor region_unpool(const torch::Tensor& cells, int height, int width);

/// Per-pixel attention logits, Gonv(F_fuse).
class PixelAttentionImpl : public torch::nn::Module {
 public:
  explicit PixelAttentionImpl(const MSAConfig& cfg);
  torch::Tensor forward(const torch::Tensor& f_fuse);

  Gonv gonv{nullptr};

 private:
  MSAConfig cfg_;
};
TORCH_MODULE(PixelAttention);

/// Region attention logits: sum over grids of UnPool(Gonv(AvgPool[g](F_fuse))).
/// Each grid owns its Gonv weights.
class RegionAttentionImpl : public torch::nn::Module {
 public:
  explicit RegionAttentionImpl(const MSAConfig& cfg);
  torch::Tensor forward(const torch::Tensor& f_fuse);

  torch::nn::ModuleList gonvs{nullptr};

 private:
  MSAConfig cfg_;
};
TORCH_MODULE(RegionAttention);

/// Multi-scale attention fusion of a context and a spatial feature map:
///   F_fuse = F_context + F_spatial
///   alpha  = sigmoid(pixel(F_fuse) + region(F_fuse))
///   F_out  = F_context * alpha + F_spatial * (1 - alpha)
class MSAFImpl : public torch::nn::Module {
 public:
  explicit MSAFImpl(const MSAConfig& cfg);

  torch::Tensor forward(const torch::Tensor& f_context, const torch::Tensor& f_spatial);
  /// The fusion weights for the given inputs, elementwise in (0, 1).
  torch::Tensor alpha(const torch::Tensor& f_context, const torch::Tensor& f_spatial);

  const MSAConfig& config() const { return cfg_; }
  PixelAttention pixel{nullptr};
  RegionAttention region{nullptr};

 private:
  void check_inputs(const torch::Tensor& f_context, const torch::Tensor& f_spatial) const;
  MSAConfig cfg_;
};
TORCH_MODULE(MSAF);

/// Element-wise sum baseline.
torch::Tensor add_fuse(const torch::Tensor& f_context, const torch::Tensor& f_spatial);

/// Multi-scale fusion atrous convolutional block: serial atrous ConvBNAct
/// taps, concatenation of every tap output (tap order), 1x1 ConvBN
/// compression to the last tap's width and a residual connection (1x1 ConvBN
/// projection when the widths differ).
class MFACBImpl : public torch::nn::Module {
 public:
  explicit MFACBImpl(const MFACBConfig& cfg);

  torch::Tensor forward(const torch::Tensor& x);
  /// Intermediate outputs of the taps, in order.
  std::vector<torch::Tensor> tap_outputs(const torch::Tensor& x);

  const MFACBConfig& config() const { return cfg_; }
  torch::nn::ModuleList taps{nullptr};
  ConvBNAct compress{nullptr};
  ConvBNAct project{nullptr};

 private:
  MFACBConfig cfg_;
};
TORCH_MODULE(MFACB);

/// Serial-parallel atrous spatial pyramid pooling. The concatenation order is
/// [input projection, tap 1 .. tap n, global branch]; a 1x1 ConvBN compresses
/// it back to the input width and the input is added residually.
class SPASPPImpl : public torch::nn::Module {
 public:
  explicit SPASPPImpl(const SPASPPConfig& cfg);

  torch::Tensor forward(const torch::Tensor& x);
  /// The tensors fed to the compression conv, in concatenation order.
  std::vector<torch::Tensor> branches(const torch::Tensor& x);

  const SPASPPConfig& config() const { return cfg_; }
  ConvBNAct input_proj{nullptr};
  torch::nn::ModuleList taps{nullptr};
  torch::nn::Conv2d global_conv{nullptr};
  ConvBNAct compress{nullptr};

 private:
  SPASPPConfig cfg_;
};
TORCH_MODULE(SPASPP);

/// Two 3x3 ConvBN layers with an identity shortcut.
class BasicBlockImpl : public torch::nn::Module {
 public:
  explicit BasicBlockImpl(int channels);
  torch::Tensor forward(const torch::Tensor& x);

  ConvBNAct conv1{nullptr};
  ConvBNAct conv2{nullptr};
};
TORCH_MODULE(BasicBlock);

/// 3x3 ConvBNAct to head_channels, 1x1 classifier, bilinear upsampling by
/// output_stride.
class SegHeadImpl : public torch::nn::Module {
 public:
  SegHeadImpl(int in_channels, int head_channels, int num_classes, int output_stride);
  torch::Tensor forward(const torch::Tensor& x);

  ConvBNAct conv{nullptr};
  torch::nn::Conv2d classifier{nullptr};

 private:
  int in_channels_;
  int output_stride_;
};
TORCH_MODULE(SegHead);

/// Global average pooling followed by a linear map; returns (N, classes).
class ClsHeadImpl : public torch::nn::Module {
 public:
  ClsHeadImpl(int in_channels, int num_classes);
  torch::Tensor forward(const torch::Tensor& x);

  torch::nn::Linear fc{nullptr};

 private:
  int in_channels_;
};
TORCH_MODULE(ClsHead);

/// Bilinear resize with half-pixel centres.
torch::Tensor upsample_bilinear(const torch::Tensor& x, int height, int width);

}  // namespace dsnet
