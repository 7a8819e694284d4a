#include "dsnet/backbone.hpp"

#include <cstring>
#include <fstream>
#include <map>

#include "dsnet/error.hpp"

namespace dsnet {

LateralFusionImpl::LateralFusionImpl(int context_channels, int spatial_channels, FusionMode mode,
                                     const MSAConfig& msa_cfg, bool emit_spatial)
    : mode_(mode), emit_spatial_(emit_spatial) {
  if (context_channels != spatial_channels) {
    spatial_proj = register_module(
        "spatial_proj",
        ConvBNAct(ConvLayerSpec{1, 1, 1, spatial_channels, context_channels, PaddingMode::same}, false));
  }
  if (mode == FusionMode::msaf) msaf = register_module("msaf", MSAF(msa_cfg));
  if (emit_spatial && context_channels != spatial_channels) {
    back_proj = register_module(
        "back_proj",
        ConvBNAct(ConvLayerSpec{1, 1, 1, context_channels, spatial_channels, PaddingMode::same}, false));
  }
}

std::pair<torch::Tensor, torch::Tensor> LateralFusionImpl::forward(const torch::Tensor& context,
                                                                   const torch::Tensor& spatial) {
  auto sp = spatial_proj ? spatial_proj->forward(spatial) : spatial;
  auto fused = mode_ == FusionMode::msaf ? msaf->forward(context, sp) : add_fuse(context, sp);
  if (!emit_spatial_) return {fused, spatial};
  return {fused, back_proj ? back_proj->forward(fused) : fused};
}

// ---------------------------------------------------------------------------

DSNetImpl::DSNetImpl(const ModelConfig& cfg, ModelMode mode) : cfg_(cfg), mode_(mode) {
  cfg.validate();

  stem = register_module("stem", torch::nn::Sequential());
  int in = 3;
  for (int s = cfg.stem_downsample; s > 1; s /= 2) {
    const int out = s == 2 ? cfg.stem_channels() : cfg.base_channels;
    stem->push_back(ConvBNAct(ConvLayerSpec{3, 1, 2, in, out, PaddingMode::same}));
    in = out;
  }

  context = register_module("context", torch::nn::ModuleList());
  for (const auto& group : context_layout(cfg)) {
    torch::nn::ModuleList blocks;
    for (const auto& block : group.blocks) blocks->push_back(MFACB(block));
    context->push_back(blocks);
  }

  const int ws = cfg.spatial_channels();
  spatial = register_module("spatial", torch::nn::ModuleList());
  for (int depth : spatial_stage_depths(cfg)) {
    torch::nn::Sequential stage;
    for (int b = 0; b < depth; ++b) stage->push_back(BasicBlock(ws));
    spatial->push_back(stage);
  }

  fusion = register_module("fusion", torch::nn::ModuleList());
  for (std::size_t f = 0; f < cfg.fusion_points.size(); ++f) {
    const int wc = cfg.group_channels(cfg.fusion_points[f] - 1);
    const bool last = f + 1 == cfg.fusion_points.size();
    fusion->push_back(LateralFusion(wc, ws, cfg.fusion_mode, msa_config(cfg, wc), !last && cfg.bidirectional_fusion));
  }

  const int wout = cfg.context_out_channels();
  if (mode == ModelMode::segmentation) {
    if (cfg.context_module == ContextModule::spaspp) spaspp = register_module("spaspp", SPASPP(spaspp_config(cfg)));
    seg_head = register_module("head", SegHead(wout, cfg.head_channels, cfg.num_classes, cfg.stem_downsample));
  } else {
    cls_head = register_module("head", ClsHead(wout, cfg.num_classes));
  }
}

torch::Tensor DSNetImpl::run(const torch::Tensor& image, std::vector<FusionTrace>* trace) {
  check_feature_map(image, 3, "dsnet");
  const int S = cfg_.stem_downsample;
  if (image.size(2) % S != 0 || image.size(3) % S != 0)
    throw ValidationError("input size " + std::to_string(image.size(2)) + "x" + std::to_string(image.size(3)) +
                          " must be divisible by " + std::to_string(S) + " in both dimensions");

  auto x = stem->forward(image);
  auto ctx = x;
  auto sp = x;
  int next_group = 0;
  for (std::size_t f = 0; f < cfg_.fusion_points.size(); ++f) {
    for (; next_group < cfg_.fusion_points[f]; ++next_group)
      for (const auto& block : *context[next_group]->as<torch::nn::ModuleListImpl>())
        ctx = block->as<MFACBImpl>()->forward(ctx);
    sp = spatial[f]->as<torch::nn::SequentialImpl>()->forward(sp);

    const bool last = f + 1 == cfg_.fusion_points.size();
    if (last && spaspp) ctx = spaspp->forward(ctx);
    if (trace) trace->push_back(FusionTrace{ctx.sizes().vec(), sp.sizes().vec()});
    if (ctx.size(2) != sp.size(2) || ctx.size(3) != sp.size(3))
      throw ShapeError("branch resolutions differ at fusion point " + std::to_string(f + 1));
    std::tie(ctx, sp) = fusion[f]->as<LateralFusionImpl>()->forward(ctx, sp);
  }
  return mode_ == ModelMode::segmentation ? seg_head->forward(ctx) : cls_head->forward(ctx);
}

torch::Tensor DSNetImpl::forward(const torch::Tensor& image) { return run(image, nullptr); }

std::vector<FusionTrace> DSNetImpl::trace_fusions(const torch::Tensor& image) {
  std::vector<FusionTrace> trace;
  run(image, &trace);
  return trace;
}

DSNet build_model(const ModelConfig& cfg, ModelMode mode) { return DSNet(cfg, mode); }

std::int64_t materialized_params(const torch::nn::Module& module) {
  std::int64_t n = 0;
  for (const auto& p : module.parameters()) n += p.numel();
  return n;
}

std::int64_t count_flops(const DSNet& model, int height, int width) {
  return count_params(model->config(), model->mode()).flops_at(height, width);
}

std::int64_t measure_macs(DSNet& model, int height, int width) {
  torch::NoGradGuard no_grad;
  const bool was_training = model->is_training();
  model->eval();
  const auto reference = model->parameters().front();
  MacCounter counter;
  model->forward(torch::zeros({1, 3, height, width}, reference.options().requires_grad(false)));
  model->train(was_training);
  return counter.macs();
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

constexpr char kMagic[8] = {'D', 'S', 'N', 'E', 'T', 'C', 'K', 'P'};
constexpr std::uint32_t kCheckpointVersion = 1;

template <typename T>
void write_pod(std::ostream& out, T value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T read_pod(std::istream& in) {
  T value{};
  in.read(reinterpret_cast<char*>(&value), sizeof(T));
  if (!in) throw IoError("truncated checkpoint");
  return value;
}

void write_string(std::ostream& out, const std::string& s) {
  write_pod<std::uint64_t>(out, s.size());
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string read_string(std::istream& in) {
  const auto n = read_pod<std::uint64_t>(in);
  if (n > (1ull << 32)) throw IoError("corrupt checkpoint string length");
  std::string s(n, '\0');
  in.read(s.data(), static_cast<std::streamsize>(n));
  if (!in) throw IoError("truncated checkpoint");
  return s;
}

std::uint8_t dtype_code(torch::ScalarType t) {
  switch (t) {
    case torch::kFloat32: return 0;
    case torch::kFloat64: return 1;
    case torch::kInt64: return 2;
    default: throw ValidationError("unsupported tensor dtype in checkpoint");
  }
}

torch::ScalarType dtype_from_code(std::uint8_t c) {
  switch (c) {
    case 0: return torch::kFloat32;
    case 1: return torch::kFloat64;
    case 2: return torch::kInt64;
    default: throw IoError("unknown dtype code in checkpoint");
  }
}

std::map<std::string, torch::Tensor> named_state(DSNet& model) {
  std::map<std::string, torch::Tensor> state;
  for (const auto& p : model->named_parameters()) {
    if (p.value().defined()) state[p.key()] = p.value();
  }
  for (const auto& b : model->named_buffers()) {
    if (b.value().defined()) state[b.key()] = b.value();
  }
  return state;
}

struct CheckpointHeader {
  ModelConfig cfg;
  ModelMode mode;
  torch::ScalarType dtype;
};

CheckpointHeader read_header(std::istream& in, const std::filesystem::path& path) {
  char magic[8];
  in.read(magic, sizeof magic);
  if (!in || std::memcmp(magic, kMagic, sizeof magic) != 0) throw IoError(path.string() + " is not a checkpoint");
  const auto version = read_pod<std::uint32_t>(in);
  if (version != kCheckpointVersion)
    throw ValidationError("unsupported checkpoint version " + std::to_string(version));
  const auto mode = read_pod<std::uint32_t>(in);
  if (mode > 1) throw IoError("corrupt checkpoint mode");
  const auto dtype = dtype_from_code(read_pod<std::uint8_t>(in));
  return {config_from_json(read_string(in)), mode == 0 ? ModelMode::segmentation : ModelMode::classification,
          dtype};
}

void read_tensors(std::istream& in, DSNet& model) {
  auto state = named_state(model);
  const auto count = read_pod<std::uint64_t>(in);
  if (count != state.size())
    throw ValidationError("checkpoint holds " + std::to_string(count) + " tensors, model expects " +
                          std::to_string(state.size()));
  torch::NoGradGuard no_grad;
  for (std::uint64_t i = 0; i < count; ++i) {
    const auto name = read_string(in);
    const auto dtype = dtype_from_code(read_pod<std::uint8_t>(in));
    const auto ndim = read_pod<std::uint32_t>(in);
    std::vector<int64_t> dims(ndim);
    for (auto& d : dims) d = read_pod<int64_t>(in);
    auto it = state.find(name);
    if (it == state.end()) throw ValidationError("checkpoint tensor '" + name + "' is not part of the model");
    if (it->second.sizes().vec() != dims) throw ValidationError("checkpoint tensor '" + name + "' has wrong shape");
    auto buffer = torch::empty(dims, torch::TensorOptions().dtype(dtype));
    in.read(static_cast<char*>(buffer.data_ptr()), static_cast<std::streamsize>(buffer.nbytes()));
    if (!in) throw IoError("truncated checkpoint");
    it->second.copy_(buffer.to(it->second.scalar_type()));
  }
}

}  // namespace

void save_checkpoint(DSNet& model, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write checkpoint " + path.string());
  out.write(kMagic, sizeof kMagic);
  write_pod<std::uint32_t>(out, kCheckpointVersion);
  write_pod<std::uint32_t>(out, model->mode() == ModelMode::segmentation ? 0 : 1);
  write_pod<std::uint8_t>(out, dtype_code(model->parameters().front().scalar_type()));
  write_string(out, config_to_json(model->config()));
  const auto state = named_state(model);
  write_pod<std::uint64_t>(out, state.size());
  for (const auto& [name, tensor] : state) {
    auto t = tensor.detach().contiguous().cpu();
    write_string(out, name);
    write_pod<std::uint8_t>(out, dtype_code(t.scalar_type()));
    write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(t.dim()));
    for (auto d : t.sizes()) write_pod<int64_t>(out, d);
    out.write(static_cast<const char*>(t.data_ptr()), static_cast<std::streamsize>(t.nbytes()));
  }
  if (!out) throw IoError("failed writing checkpoint " + path.string());
}

DSNet load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  const auto header = read_header(in, path);
  DSNet model(header.cfg, header.mode);
  model->to(header.dtype);
  read_tensors(in, model);
  return model;
}

void load_checkpoint_into(DSNet& model, const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  const auto header = read_header(in, path);
  if (!(header.cfg == model->config()) || header.mode != model->mode())
    throw ValidationError("checkpoint " + path.string() + " was produced by a different model configuration");
  read_tensors(in, model);
}

}  // namespace dsnet
