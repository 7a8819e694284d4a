#include "dsnet/blocks.hpp"

#include <string>

#include "dsnet/error.hpp"

namespace dsnet {

namespace {

thread_local MacCounter* active_counter = nullptr;

std::string shape_string(const torch::Tensor& x) {
  std::string s = "(";
  for (int64_t i = 0; i < x.dim(); ++i) s += (i ? "," : "") + std::to_string(x.size(i));
  return s + ")";
}

void record_conv(const torch::nn::Conv2d& conv, const torch::Tensor& out) {
  if (active_counter == nullptr) return;
  const auto& o = conv->options;
  const int64_t k = (*o.kernel_size())[0] * (*o.kernel_size())[1];
  MacCounter::record(out.size(2) * out.size(3) * o.out_channels() * (o.in_channels() / o.groups()) * k);
}

torch::Tensor run_conv(torch::nn::Conv2d& conv, const torch::Tensor& x) {
  auto out = conv->forward(x);
  record_conv(conv, out);
  return out;
}

torch::nn::Conv2d pointwise_conv(int in, int out, bool bias) {
  return torch::nn::Conv2d(torch::nn::Conv2dOptions(in, out, 1).bias(bias));
}

}  // namespace

void check_feature_map(const torch::Tensor& x, int channels, std::string_view who) {
  if (!x.defined() || x.dim() != 4)
    throw ShapeError(std::string(who) + ": expected an (N, C, H, W) feature map, got " +
                     (x.defined() ? shape_string(x) : std::string("undefined")));
  for (int64_t i = 0; i < 4; ++i)
    if (x.size(i) < 1) throw ShapeError(std::string(who) + ": empty dimension in " + shape_string(x));
  if (channels > 0 && x.size(1) != channels)
    throw ShapeError(std::string(who) + ": expected " + std::to_string(channels) + " channels, got " +
                     shape_string(x));
}

// ---------------------------------------------------------------------------

MacCounter::MacCounter() : previous_(active_counter) { active_counter = this; }

MacCounter::~MacCounter() {
  active_counter = previous_;
  if (previous_ != nullptr) previous_->macs_ += macs_;
}

void MacCounter::record(std::int64_t macs) {
  if (active_counter != nullptr) active_counter->macs_ += macs;
}

// ---------------------------------------------------------------------------

ConvBNActImpl::ConvBNActImpl(const ConvLayerSpec& spec, bool activation) : spec_(spec), activation_(activation) {
  spec.validate();
  conv = register_module("conv", torch::nn::Conv2d(torch::nn::Conv2dOptions(spec.in_channels, spec.out_channels,
                                                                            spec.kernel)
                                                       .stride(spec.stride)
                                                       .padding(spec.padding())
                                                       .dilation(spec.dilation)
                                                       .bias(false)));
  bn = register_module("bn", torch::nn::BatchNorm2d(
                                 torch::nn::BatchNorm2dOptions(spec.out_channels).momentum(0.1).eps(1e-5)));
}

torch::Tensor ConvBNActImpl::forward(const torch::Tensor& x) {
  check_feature_map(x, spec_.in_channels, "conv_bn_act");
  auto y = bn->forward(run_conv(conv, x));
  return activation_ ? torch::relu(y) : y;
}

GonvImpl::GonvImpl(int channels, int hidden) {
  squeeze = register_module("squeeze", pointwise_conv(channels, hidden, true));
  expand = register_module("expand", pointwise_conv(hidden, channels, true));
}

torch::Tensor GonvImpl::forward(const torch::Tensor& x) {
  return run_conv(expand, torch::relu(run_conv(squeeze, x)));
}

// ---------------------------------------------------------------------------

RegionPartition region_partition(int length, int cells) {
  if (length < 1 || cells < 1) throw ValidationError("region_partition needs positive sizes");
  RegionPartition p;
  for (int i = 0; i < cells; ++i) {
    p.begin.push_back(static_cast<int>((static_cast<int64_t>(i) * length) / cells));
    p.end.push_back(static_cast<int>(((static_cast<int64_t>(i) + 1) * length + cells - 1) / cells));
  }
  return p;
}

namespace {

// (length x cells) matrix spreading cell values over their regions.
torch::Tensor unpool_matrix(int length, int cells, const torch::TensorOptions& opts) {
  const auto p = region_partition(length, cells);
  std::vector<double> m(static_cast<std::size_t>(length) * cells, 0.0);
  std::vector<int> cover(length, 0);
  for (int c = 0; c < cells; ++c)
    for (int i = p.begin[c]; i < p.end[c]; ++i) ++cover[i];
  for (int c = 0; c < cells; ++c)
    for (int i = p.begin[c]; i < p.end[c]; ++i) m[static_cast<std::size_t>(i) * cells + c] = 1.0 / cover[i];
  return torch::tensor(m, torch::kFloat64).reshape({length, cells}).to(opts);
}

}  // namespace

torch::Tensor region_unpool(const torch::Tensor& cells, int height, int width) {
  check_feature_map(cells, 0, "region_unpool");
  const auto opts = cells.options().requires_grad(false);
  auto rows = unpool_matrix(height, static_cast<int>(cells.size(2)), opts);
  auto cols = unpool_matrix(width, static_cast<int>(cells.size(3)), opts);
  return torch::matmul(torch::matmul(rows, cells), cols.t());
}

// ---------------------------------------------------------------------------

PixelAttentionImpl::PixelAttentionImpl(const MSAConfig& cfg) : cfg_(cfg) {
  cfg.validate();
  gonv = register_module("gonv", Gonv(cfg.channels, cfg.hidden_channels()));
}

torch::Tensor PixelAttentionImpl::forward(const torch::Tensor& f_fuse) {
  check_feature_map(f_fuse, cfg_.channels, "msa_pixel_attention");
  return gonv->forward(f_fuse);
}

RegionAttentionImpl::RegionAttentionImpl(const MSAConfig& cfg) : cfg_(cfg) {
  cfg.validate();
  gonvs = register_module("gonvs", torch::nn::ModuleList());
  for (std::size_t i = 0; i < cfg.grids.size(); ++i) gonvs->push_back(Gonv(cfg.channels, cfg.hidden_channels()));
}

torch::Tensor RegionAttentionImpl::forward(const torch::Tensor& f_fuse) {
  check_feature_map(f_fuse, cfg_.channels, "msa_region_attention");
  const int h = static_cast<int>(f_fuse.size(2));
  const int w = static_cast<int>(f_fuse.size(3));
  torch::Tensor logits;
  for (std::size_t i = 0; i < cfg_.grids.size(); ++i) {
    const int g = cfg_.grids[i];
    auto pooled = torch::adaptive_avg_pool2d(f_fuse, {g, g});
    auto cell_logits = gonvs[i]->as<GonvImpl>()->forward(pooled);
    auto spread = region_unpool(cell_logits, h, w);
    logits = logits.defined() ? logits + spread : spread;
  }
  return logits;
}

MSAFImpl::MSAFImpl(const MSAConfig& cfg) : cfg_(cfg) {
  pixel = register_module("pixel", PixelAttention(cfg));
  region = register_module("region", RegionAttention(cfg));
}

void MSAFImpl::check_inputs(const torch::Tensor& f_context, const torch::Tensor& f_spatial) const {
  check_feature_map(f_context, cfg_.channels, "msaf_fuse(context)");
  check_feature_map(f_spatial, cfg_.channels, "msaf_fuse(spatial)");
  if (f_context.sizes() != f_spatial.sizes())
    throw ShapeError("msaf_fuse: branch shapes differ, " + shape_string(f_context) + " vs " +
                     shape_string(f_spatial));
}

torch::Tensor MSAFImpl::alpha(const torch::Tensor& f_context, const torch::Tensor& f_spatial) {
  check_inputs(f_context, f_spatial);
  auto f_fuse = f_context + f_spatial;
  return torch::sigmoid(pixel->forward(f_fuse) + region->forward(f_fuse));
}

torch::Tensor MSAFImpl::forward(const torch::Tensor& f_context, const torch::Tensor& f_spatial) {
  auto a = alpha(f_context, f_spatial);
  return f_context * a + f_spatial * (1.0 - a);
}

torch::Tensor add_fuse(const torch::Tensor& f_context, const torch::Tensor& f_spatial) {
  check_feature_map(f_context, 0, "add_fuse(context)");
  check_feature_map(f_spatial, static_cast<int>(f_context.size(1)), "add_fuse(spatial)");
  if (f_context.sizes() != f_spatial.sizes())
    throw ShapeError("add_fuse: branch shapes differ, " + shape_string(f_context) + " vs " +
                     shape_string(f_spatial));
  return f_context + f_spatial;
}

// ---------------------------------------------------------------------------

MFACBImpl::MFACBImpl(const MFACBConfig& cfg) : cfg_(cfg) {
  cfg.validate();
  taps = register_module("taps", torch::nn::ModuleList());
  int in = cfg.in_channels;
  int concat = 0;
  for (std::size_t t = 0; t < cfg.channels.size(); ++t) {
    taps->push_back(ConvBNAct(ConvLayerSpec{3, cfg.rates[t], 1, in, cfg.channels[t], PaddingMode::same}));
    in = cfg.channels[t];
    concat += in;
  }
  compress = register_module(
      "compress", ConvBNAct(ConvLayerSpec{1, 1, 1, concat, cfg.out_channels(), PaddingMode::same}, false));
  if (cfg.has_projection()) {
    project = register_module(
        "project",
        ConvBNAct(ConvLayerSpec{1, 1, 1, cfg.in_channels, cfg.out_channels(), PaddingMode::same}, false));
  }
}

std::vector<torch::Tensor> MFACBImpl::tap_outputs(const torch::Tensor& x) {
  check_feature_map(x, cfg_.in_channels, "mfacb");
  std::vector<torch::Tensor> outs;
  auto t = x;
  for (const auto& tap : *taps) {
    t = tap->as<ConvBNActImpl>()->forward(t);
    outs.push_back(t);
  }
  return outs;
}

torch::Tensor MFACBImpl::forward(const torch::Tensor& x) {
  auto fused = compress->forward(torch::cat(tap_outputs(x), 1));
  return fused + (project ? project->forward(x) : x);
}

// ---------------------------------------------------------------------------

SPASPPImpl::SPASPPImpl(const SPASPPConfig& cfg) : cfg_(cfg) {
  cfg.validate();
  const int bc = cfg.branch_channels;
  if (cfg.include_input_projection)
    input_proj =
        register_module("input_proj", ConvBNAct(ConvLayerSpec{1, 1, 1, cfg.channels, bc, PaddingMode::same}));
  taps = register_module("taps", torch::nn::ModuleList());
  int in = cfg.channels;
  for (int rate : cfg.rates) {
    taps->push_back(ConvBNAct(ConvLayerSpec{3, rate, 1, in, bc, PaddingMode::same}));
    in = bc;
  }
  if (cfg.include_global) global_conv = register_module("global_conv", pointwise_conv(cfg.channels, bc, true));
  compress = register_module(
      "compress",
      ConvBNAct(ConvLayerSpec{1, 1, 1, cfg.concat_groups() * bc, cfg.channels, PaddingMode::same}, false));
}

std::vector<torch::Tensor> SPASPPImpl::branches(const torch::Tensor& x) {
  check_feature_map(x, cfg_.channels, "spaspp");
  std::vector<torch::Tensor> parts;
  if (input_proj) parts.push_back(input_proj->forward(x));
  auto t = x;
  for (const auto& tap : *taps) {
    t = tap->as<ConvBNActImpl>()->forward(t);
    parts.push_back(t);
  }
  if (global_conv) {
    auto pooled = torch::relu(run_conv(global_conv, x.mean({2, 3}, /*keepdim=*/true)));
    parts.push_back(pooled.expand({-1, -1, x.size(2), x.size(3)}));
  }
  return parts;
}

torch::Tensor SPASPPImpl::forward(const torch::Tensor& x) {
  return x + compress->forward(torch::cat(branches(x), 1));
}

// ---------------------------------------------------------------------------

BasicBlockImpl::BasicBlockImpl(int channels) {
  conv1 = register_module("conv1", ConvBNAct(ConvLayerSpec{3, 1, 1, channels, channels, PaddingMode::same}));
  conv2 = register_module("conv2",
                          ConvBNAct(ConvLayerSpec{3, 1, 1, channels, channels, PaddingMode::same}, false));
}

torch::Tensor BasicBlockImpl::forward(const torch::Tensor& x) {
  return torch::relu(x + conv2->forward(conv1->forward(x)));
}

SegHeadImpl::SegHeadImpl(int in_channels, int head_channels, int num_classes, int output_stride)
    : in_channels_(in_channels), output_stride_(output_stride) {
  if (output_stride < 1) throw ValidationError("output_stride must be >= 1");
  conv = register_module("conv",
                         ConvBNAct(ConvLayerSpec{3, 1, 1, in_channels, head_channels, PaddingMode::same}));
  classifier = register_module("classifier", pointwise_conv(head_channels, num_classes, true));
}

torch::Tensor SegHeadImpl::forward(const torch::Tensor& x) {
  check_feature_map(x, in_channels_, "seg_head");
  auto logits = run_conv(classifier, conv->forward(x));
  if (output_stride_ == 1) return logits;
  return upsample_bilinear(logits, static_cast<int>(x.size(2)) * output_stride_,
                           static_cast<int>(x.size(3)) * output_stride_);
}

ClsHeadImpl::ClsHeadImpl(int in_channels, int num_classes) : in_channels_(in_channels) {
  fc = register_module("fc", torch::nn::Linear(in_channels, num_classes));
}

torch::Tensor ClsHeadImpl::forward(const torch::Tensor& x) {
  check_feature_map(x, in_channels_, "cls_head");
  MacCounter::record(static_cast<int64_t>(fc->options.in_features()) * fc->options.out_features());
  return fc->forward(x.mean({2, 3}));
}

torch::Tensor upsample_bilinear(const torch::Tensor& x, int height, int width) {
  namespace F = torch::nn::functional;
  return F::interpolate(x, F::InterpolateFuncOptions()
                               .size(std::vector<int64_t>{height, width})
                               .mode(torch::kBilinear)
                               .align_corners(false));
}

}  // namespace dsnet
