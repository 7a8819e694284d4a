#pragma once

// Declarative model description: convolution geometry, dilation schedules,
// the full network configuration and static parameter / FLOP accounting.
// Nothing in this header depends on libtorch.

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace dsnet {

enum class PaddingMode { same, valid };

/// Geometry of a single 2-D convolution.
struct ConvLayerSpec {
  int kernel = 3;
  int dilation = 1;
  int stride = 1;
  int in_channels = 1;
  int out_channels = 1;
  PaddingMode padding_mode = PaddingMode::same;

  /// Span of the dilated kernel, (kernel - 1) * dilation + 1.
  int extent() const { return (kernel - 1) * dilation + 1; }
  /// Zero padding applied on each side.
  int padding() const { return padding_mode == PaddingMode::same ? (extent() - 1) / 2 : 0; }
  /// Output length along one spatial axis for an input of `input` pixels.
  int output_size(int input) const;

  void validate() const;

  bool operator==(const ConvLayerSpec&) const = default;
};

struct RateGroup {
  int rate = 1;
  int count = 1;
  bool operator==(const RateGroup&) const = default;
};

/// Ordered atrous rates with multiplicities, written as "d2x6+d3x6+d5x4".
struct DilationSchedule {
  std::vector<RateGroup> groups;

  int total_layers() const;
  /// Canonical notation, e.g. "d2x6+d3x6+d5x4".
  std::string to_string() const;
  void validate() const;

  bool operator==(const DilationSchedule&) const = default;
};

/// Parses `d<int>x<int>('+'d<int>x<int>)*`. The multiplication sign U+00D7
/// and 'X' are accepted in place of 'x'.
/// Throws ParseError on a malformed token and ValidationError on zero values.
DilationSchedule parse_schedule(std::string_view text);

enum class FusionMode { msaf, add };
enum class ContextModule { spaspp, none };
enum class Variant { dsnet, dsnet_base, custom };
enum class ModelMode { segmentation, classification };

std::string_view to_string(FusionMode m);
std::string_view to_string(ContextModule m);
std::string_view to_string(Variant v);
std::string_view to_string(ModelMode m);

// Per-block configuration shared by the builders and the static planner.

struct MFACBConfig {
  int in_channels = 0;
  std::vector<int> channels;  // output width of each atrous tap
  std::vector<int> rates;     // atrous rate of each tap

  int out_channels() const { return channels.back(); }
  bool has_projection() const { return in_channels != out_channels(); }
  void validate() const;
};

struct MSAConfig {
  int channels = 0;
  std::vector<int> grids{1, 4, 8, 16};
  int reduction = 4;

  int hidden_channels() const;
  void validate() const;
};

struct SPASPPConfig {
  int channels = 0;
  int branch_channels = 0;
  std::vector<int> rates{6, 12, 18, 24};
  bool include_global = true;
  bool include_input_projection = true;

  /// Number of concatenated groups fed to the compression conv.
  int concat_groups() const;
  void validate() const;
};

/// Complete declarative description of a DSNet variant.
struct ModelConfig {
  static constexpr int kSchemaVersion = 1;

  Variant variant = Variant::dsnet;
  int base_channels = 32;
  int stem_downsample = 8;
  DilationSchedule schedule{{{2, 6}, {3, 6}, {5, 4}}};
  std::vector<int> context_multipliers{4, 6, 8};
  int taps_per_block = 3;
  int spatial_depth = 6;
  FusionMode fusion_mode = FusionMode::msaf;
  std::vector<int> fusion_points{1, 2, 3};
  bool bidirectional_fusion = true;
  ContextModule context_module = ContextModule::spaspp;
  std::vector<int> spaspp_rates{6, 12, 18, 24};
  int spaspp_channels = 128;
  bool spaspp_global = true;
  bool spaspp_input_projection = true;
  int head_channels = 128;
  int num_classes = 19;
  std::vector<int> grids{1, 4, 8, 16};
  int gonv_reduction = 4;

  void validate() const;

  int stem_channels() const { return 2 * base_channels; }
  int spatial_channels() const { return 2 * base_channels; }
  int group_channels(int group) const { return context_multipliers.at(group) * base_channels; }
  int context_out_channels() const { return group_channels(static_cast<int>(schedule.groups.size()) - 1); }

  bool operator==(const ModelConfig&) const = default;
};

/// DSNet (C = 32) with the given head width and class count.
ModelConfig dsnet_config(int head_channels = 128, int num_classes = 19);
/// DSNet-Base: doubled base width and schedule multiplicities.
ModelConfig dsnet_base_config(int head_channels = 256, int num_classes = 19);

std::string config_to_json(const ModelConfig& cfg);
ModelConfig config_from_json(std::string_view text);
ModelConfig load_config(const std::filesystem::path& path);
void save_config(const ModelConfig& cfg, const std::filesystem::path& path);

// Structural layout derived from the configuration.

/// Tap counts of each MFACB in a rate group of `layers` convolutions, as even
/// as possible with at most `taps_per_block` taps per block (6 -> 3+3,
/// 4 -> 2+2, 10 -> 3+3+2+2).
std::vector<int> split_into_blocks(int layers, int taps_per_block);

struct ContextGroupLayout {
  int rate = 1;
  int out_channels = 0;
  std::vector<MFACBConfig> blocks;
};

std::vector<ContextGroupLayout> context_layout(const ModelConfig& cfg);
/// Number of spatial residual blocks run before each fusion point.
std::vector<int> spatial_stage_depths(const ModelConfig& cfg);
MSAConfig msa_config(const ModelConfig& cfg, int channels);
SPASPPConfig spaspp_config(const ModelConfig& cfg);

// Static accounting.

enum class OpKind { conv, batch_norm, linear };

/// One learnable operator of the materialized network.
struct PlannedOp {
  std::string module;  // top-level module name, e.g. "context"
  std::string name;
  OpKind kind = OpKind::conv;
  ConvLayerSpec conv;  // for linear: in/out channels only
  bool bias = false;
  int downsample = 1;  // output stride relative to the image
  int grid = 0;        // > 0: fixed grid x grid output independent of image size

  std::int64_t params() const;
  std::int64_t macs(int image_h, int image_w) const;
};

struct ParamReport {
  std::int64_t total_params = 0;
  std::map<std::string, std::int64_t> per_module;
  std::vector<PlannedOp> ops;

  /// Multiply-accumulates of all conv / linear nodes at the given image size.
  std::int64_t macs_at(int image_h, int image_w) const;
  /// 2 * macs_at.
  std::int64_t flops_at(int image_h, int image_w) const { return 2 * macs_at(image_h, image_w); }
};

std::vector<PlannedOp> plan_model(const ModelConfig& cfg, ModelMode mode = ModelMode::segmentation);
ParamReport count_params(const ModelConfig& cfg, ModelMode mode = ModelMode::segmentation);

}  // namespace dsnet
