#include "dsnet/config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "dsnet/error.hpp"

namespace dsnet {

namespace {

using Json = nlohmann::ordered_json;

bool strictly_increasing(const std::vector<int>& v) {
  return std::adjacent_find(v.begin(), v.end(), std::greater_equal<>()) == v.end();
}

bool all_positive(const std::vector<int>& v) {
  return std::all_of(v.begin(), v.end(), [](int x) { return x >= 1; });
}

std::string join(const std::vector<int>& v) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < v.size(); ++i) os << (i ? ", " : "") << v[i];
  os << ']';
  return os.str();
}

// Parses a non-negative decimal integer occupying the whole of `s`.
bool parse_int(std::string_view s, int& out) {
  if (s.empty()) return false;
  const auto* end = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(s.data(), end, out);
  return ec == std::errc() && ptr == end && s.front() != '-' && s.front() != '+';
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

}  // namespace

// ---------------------------------------------------------------------------
// ConvLayerSpec

int ConvLayerSpec::output_size(int input) const {
  const int span = input + 2 * padding() - extent();
  return span < 0 ? 0 : span / stride + 1;
}

void ConvLayerSpec::validate() const {
  if (kernel < 1 || kernel % 2 == 0)
    throw ValidationError("kernel must be a positive odd integer, got " + std::to_string(kernel));
  if (dilation < 1) throw ValidationError("dilation must be >= 1, got " + std::to_string(dilation));
  if (stride < 1) throw ValidationError("stride must be >= 1, got " + std::to_string(stride));
  if (in_channels < 1 || out_channels < 1)
    throw ValidationError("channel counts must be >= 1");
}

// ---------------------------------------------------------------------------
// DilationSchedule

int DilationSchedule::total_layers() const {
  int n = 0;
  for (const auto& g : groups) n += g.count;
  return n;
}

std::string DilationSchedule::to_string() const {
  std::string out;
  for (std::size_t i = 0; i < groups.size(); ++i) {
    if (i) out += '+';
    out += 'd' + std::to_string(groups[i].rate) + 'x' + std::to_string(groups[i].count);
  }
  return out;
}

void DilationSchedule::validate() const {
  if (groups.empty()) throw ValidationError("dilation schedule is empty");
  for (const auto& g : groups) {
    if (g.rate < 1) throw ValidationError("atrous rate must be >= 1 in schedule " + to_string());
    if (g.count < 1) throw ValidationError("layer count must be >= 1 in schedule " + to_string());
  }
}

DilationSchedule parse_schedule(std::string_view text) {
  static constexpr std::string_view kTimes = "\xC3\x97";  // U+00D7

  text = trim(text);
  if (text.empty()) throw ParseError("empty dilation schedule");

  DilationSchedule schedule;
  std::size_t start = 0;
  while (start <= text.size()) {
    const std::size_t plus = text.find('+', start);
    const std::string_view raw =
        text.substr(start, plus == std::string_view::npos ? std::string_view::npos : plus - start);
    const std::string_view token = trim(raw);
    auto bad = [&] { return ParseError("malformed schedule token '" + std::string(token) + "'"); };

    if (token.size() < 4 || (token[0] != 'd' && token[0] != 'D')) throw bad();
    const std::string_view body = token.substr(1);
    std::size_t sep = body.find_first_of("xX");
    std::size_t sep_len = 1;
    if (const std::size_t t = body.find(kTimes); t != std::string_view::npos && t < sep) {
      sep = t;
      sep_len = kTimes.size();
    }
    if (sep == std::string_view::npos) throw bad();

    RateGroup group;
    if (!parse_int(body.substr(0, sep), group.rate) || !parse_int(body.substr(sep + sep_len), group.count))
      throw bad();
    if (group.rate == 0) throw ValidationError("zero atrous rate in token '" + std::string(token) + "'");
    if (group.count == 0) throw ValidationError("zero layer count in token '" + std::string(token) + "'");
    schedule.groups.push_back(group);

    if (plus == std::string_view::npos) break;
    start = plus + 1;
  }
  return schedule;
}

// ---------------------------------------------------------------------------
// Enums

std::string_view to_string(FusionMode m) { return m == FusionMode::msaf ? "msaf" : "add"; }
std::string_view to_string(ContextModule m) { return m == ContextModule::spaspp ? "spaspp" : "none"; }
std::string_view to_string(ModelMode m) {
  return m == ModelMode::segmentation ? "segmentation" : "classification";
}
std::string_view to_string(Variant v) {
  switch (v) {
    case Variant::dsnet: return "dsnet";
    case Variant::dsnet_base: return "dsnet_base";
    case Variant::custom: return "custom";
  }
  return "custom";
}

namespace {

template <typename E>
E enum_from_string(std::string_view field, std::string_view value, std::initializer_list<E> options) {
  std::string expected;
  for (E e : options) {
    if (to_string(e) == value) return e;
    expected += (expected.empty() ? "" : "|") + std::string(to_string(e));
  }
  throw ValidationError("unknown " + std::string(field) + " '" + std::string(value) + "' (expected " +
                        expected + ")");
}

}  // namespace

// ---------------------------------------------------------------------------
// Block configs

void MFACBConfig::validate() const {
  if (in_channels < 1) throw ValidationError("MFACB input channels must be >= 1");
  if (channels.empty() || channels.size() != rates.size())
    throw ValidationError("MFACB needs one rate per tap (channels " + join(channels) + ", rates " +
                          join(rates) + ")");
  if (!all_positive(channels) || !all_positive(rates))
    throw ValidationError("MFACB channels and rates must be >= 1");
}

int MSAConfig::hidden_channels() const { return std::max(1, channels / reduction); }

void MSAConfig::validate() const {
  if (channels < 1) throw ValidationError("MSA channels must be >= 1");
  if (reduction < 1) throw ValidationError("Gonv reduction must be >= 1");
  if (grids.empty() || !all_positive(grids) || !strictly_increasing(grids))
    throw ValidationError("MSA grids must be non-empty, >= 1 and strictly ascending, got " + join(grids));
}

int SPASPPConfig::concat_groups() const {
  return static_cast<int>(rates.size()) + (include_global ? 1 : 0) + (include_input_projection ? 1 : 0);
}

void SPASPPConfig::validate() const {
  if (channels < 1 || branch_channels < 1) throw ValidationError("SPASPP channels must be >= 1");
  if (rates.empty() || !all_positive(rates) || !strictly_increasing(rates))
    throw ValidationError("SPASPP rates must be non-empty, >= 1 and strictly increasing, got " + join(rates));
}

// ---------------------------------------------------------------------------
// ModelConfig

void ModelConfig::validate() const {
  if (base_channels < 1) throw ValidationError("base_channels must be >= 1");
  if (variant == Variant::dsnet && base_channels != 32)
    throw ValidationError("variant dsnet requires base_channels = 32, got " + std::to_string(base_channels));
  if (stem_downsample < 2 || (stem_downsample & (stem_downsample - 1)) != 0)
    throw ValidationError("stem_downsample must be a power of two >= 2, got " +
                          std::to_string(stem_downsample));
  schedule.validate();
  const int groups = static_cast<int>(schedule.groups.size());
  if (static_cast<int>(context_multipliers.size()) != groups)
    throw ValidationError("context_multipliers needs one entry per schedule group (" + std::to_string(groups) +
                          "), got " + join(context_multipliers));
  if (!all_positive(context_multipliers)) throw ValidationError("context_multipliers must be >= 1");
  if (taps_per_block < 1) throw ValidationError("taps_per_block must be >= 1");
  if (spatial_depth < 0) throw ValidationError("spatial_depth must be >= 0");

  if (fusion_points.empty()) throw ValidationError("fusion_points must not be empty");
  if (!strictly_increasing(fusion_points))
    throw ValidationError("fusion_points must be strictly increasing, got " + join(fusion_points));
  if (fusion_points.front() < 1 || fusion_points.back() > groups)
    throw ValidationError("fusion_points " + join(fusion_points) + " out of range [1, " +
                          std::to_string(groups) + "]");
  if (fusion_points.back() != groups)
    throw ValidationError("last fusion point must close the context branch (group " + std::to_string(groups) +
                          "), got " + join(fusion_points));
  if (variant != Variant::custom && fusion_points.size() != 3)
    throw ValidationError("DSNet variants use exactly 3 lateral fusions, got " + join(fusion_points));

  if (context_module == ContextModule::spaspp) spaspp_config(*this).validate();
  if (head_channels < 1) throw ValidationError("head_channels must be >= 1");
  if (num_classes < 1) throw ValidationError("num_classes must be >= 1");
  msa_config(*this, base_channels).validate();
}

ModelConfig dsnet_config(int head_channels, int num_classes) {
  ModelConfig cfg;
  cfg.head_channels = head_channels;
  cfg.num_classes = num_classes;
  return cfg;
}

ModelConfig dsnet_base_config(int head_channels, int num_classes) {
  ModelConfig cfg;
  cfg.variant = Variant::dsnet_base;
  cfg.base_channels = 64;
  cfg.schedule = DilationSchedule{{{2, 12}, {3, 12}, {5, 8}}};
  cfg.context_multipliers = {3, 4, 8};
  cfg.spatial_depth = 12;
  cfg.spaspp_channels = 256;
  cfg.head_channels = head_channels;
  cfg.num_classes = num_classes;
  return cfg;
}

// ---------------------------------------------------------------------------
// Serialization

namespace {

const std::set<std::string>& known_fields() {
  static const std::set<std::string> fields{
      "version",       "variant",          "base_channels",        "stem_downsample", "schedule",
      "context_multipliers", "taps_per_block", "spatial_depth",    "fusion_mode",     "fusion_points",
      "bidirectional_fusion", "context_module", "spaspp_rates",    "spaspp_channels", "spaspp_global",
      "spaspp_input_projection", "head_channels", "num_classes",   "grids",           "gonv_reduction"};
  return fields;
}

const std::set<std::string>& optional_fields() {
  static const std::set<std::string> fields{"taps_per_block", "bidirectional_fusion", "spaspp_global",
                                            "spaspp_input_projection"};
  return fields;
}

Json to_json(const ModelConfig& cfg) {
  Json j;
  j["version"] = ModelConfig::kSchemaVersion;
  j["variant"] = to_string(cfg.variant);
  j["base_channels"] = cfg.base_channels;
  j["stem_downsample"] = cfg.stem_downsample;
  j["schedule"] = cfg.schedule.to_string();
  j["context_multipliers"] = cfg.context_multipliers;
  j["taps_per_block"] = cfg.taps_per_block;
  j["spatial_depth"] = cfg.spatial_depth;
  j["fusion_mode"] = to_string(cfg.fusion_mode);
  j["fusion_points"] = cfg.fusion_points;
  j["bidirectional_fusion"] = cfg.bidirectional_fusion;
  j["context_module"] = to_string(cfg.context_module);
  j["spaspp_rates"] = cfg.spaspp_rates;
  j["spaspp_channels"] = cfg.spaspp_channels;
  j["spaspp_global"] = cfg.spaspp_global;
  j["spaspp_input_projection"] = cfg.spaspp_input_projection;
  j["head_channels"] = cfg.head_channels;
  j["num_classes"] = cfg.num_classes;
  j["grids"] = cfg.grids;
  j["gonv_reduction"] = cfg.gonv_reduction;
  return j;
}

template <typename T>
void read_field(const Json& j, const char* name, T& out) {
  if (!j.contains(name)) {
    if (optional_fields().count(name)) return;
    throw ValidationError(std::string("missing required config field '") + name + "'");
  }
  try {
    out = j.at(name).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ParseError(std::string("config field '") + name + "' has the wrong type");
  }
}

ModelConfig from_json(const Json& j) {
  if (!j.is_object()) throw ParseError("config document must be an object");

  std::vector<std::string> unknown;
  for (const auto& [key, _] : j.items())
    if (!known_fields().count(key)) unknown.push_back(key);
  if (!unknown.empty()) {
    std::string list;
    for (const auto& k : unknown) list += (list.empty() ? "" : ", ") + k;
    throw ValidationError("unknown config field(s): " + list);
  }

  int version = 0;
  read_field(j, "version", version);
  if (version != ModelConfig::kSchemaVersion)
    throw ValidationError("unsupported config version " + std::to_string(version) + " (expected " +
                          std::to_string(ModelConfig::kSchemaVersion) + ")");

  ModelConfig cfg;
  std::string text;
  read_field(j, "variant", text);
  cfg.variant = enum_from_string("variant", text, {Variant::dsnet, Variant::dsnet_base, Variant::custom});
  read_field(j, "base_channels", cfg.base_channels);
  read_field(j, "stem_downsample", cfg.stem_downsample);
  read_field(j, "schedule", text);
  cfg.schedule = parse_schedule(text);
  read_field(j, "context_multipliers", cfg.context_multipliers);
  read_field(j, "taps_per_block", cfg.taps_per_block);
  read_field(j, "spatial_depth", cfg.spatial_depth);
  read_field(j, "fusion_mode", text);
  cfg.fusion_mode = enum_from_string("fusion_mode", text, {FusionMode::msaf, FusionMode::add});
  read_field(j, "fusion_points", cfg.fusion_points);
  read_field(j, "bidirectional_fusion", cfg.bidirectional_fusion);
  read_field(j, "context_module", text);
  cfg.context_module = enum_from_string("context_module", text, {ContextModule::spaspp, ContextModule::none});
  read_field(j, "spaspp_rates", cfg.spaspp_rates);
  read_field(j, "spaspp_channels", cfg.spaspp_channels);
  read_field(j, "spaspp_global", cfg.spaspp_global);
  read_field(j, "spaspp_input_projection", cfg.spaspp_input_projection);
  read_field(j, "head_channels", cfg.head_channels);
  read_field(j, "num_classes", cfg.num_classes);
  read_field(j, "grids", cfg.grids);
  read_field(j, "gonv_reduction", cfg.gonv_reduction);
  cfg.validate();
  return cfg;
}

}  // namespace

std::string config_to_json(const ModelConfig& cfg) { return to_json(cfg).dump(2) + "\n"; }

ModelConfig config_from_json(std::string_view text) {
  Json j;
  try {
    j = Json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(std::string("config is not valid JSON: ") + e.what());
  }
  return from_json(j);
}

ModelConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return config_from_json(buf.str());
}

void save_config(const ModelConfig& cfg, const std::filesystem::path& path) {
  cfg.validate();
  std::ofstream out(path);
  if (!out) throw IoError("cannot write config file " + path.string());
  out << config_to_json(cfg);
}

// ---------------------------------------------------------------------------
// Layout

std::vector<int> split_into_blocks(int layers, int taps_per_block) {
  const int blocks = (layers + taps_per_block - 1) / taps_per_block;
  const int base = layers / blocks;
  const int extra = layers % blocks;
  std::vector<int> taps(blocks, base);
  for (int i = 0; i < extra; ++i) ++taps[i];
  return taps;
}

std::vector<ContextGroupLayout> context_layout(const ModelConfig& cfg) {
  std::vector<ContextGroupLayout> layout;
  int in = cfg.stem_channels();
  for (std::size_t g = 0; g < cfg.schedule.groups.size(); ++g) {
    const auto& group = cfg.schedule.groups[g];
    ContextGroupLayout out;
    out.rate = group.rate;
    out.out_channels = cfg.group_channels(static_cast<int>(g));
    for (int taps : split_into_blocks(group.count, cfg.taps_per_block)) {
      MFACBConfig block;
      block.in_channels = in;
      block.channels.assign(taps, out.out_channels);
      // The first tap of a widening block keeps the input width.
      if (taps > 1 && in != out.out_channels) block.channels.front() = in;
      block.rates.assign(taps, group.rate);
      out.blocks.push_back(std::move(block));
      in = out.out_channels;
    }
    layout.push_back(std::move(out));
  }
  return layout;
}

std::vector<int> spatial_stage_depths(const ModelConfig& cfg) {
  const int stages = static_cast<int>(cfg.fusion_points.size());
  std::vector<int> depths(stages, cfg.spatial_depth / stages);
  for (int i = 0; i < cfg.spatial_depth % stages; ++i) ++depths[i];
  return depths;
}

MSAConfig msa_config(const ModelConfig& cfg, int channels) {
  MSAConfig msa;
  msa.channels = channels;
  msa.grids = cfg.grids;
  msa.reduction = cfg.gonv_reduction;
  return msa;
}

SPASPPConfig spaspp_config(const ModelConfig& cfg) {
  SPASPPConfig sp;
  sp.channels = cfg.context_out_channels();
  sp.branch_channels = cfg.spaspp_channels;
  sp.rates = cfg.spaspp_rates;
  sp.include_global = cfg.spaspp_global;
  sp.include_input_projection = cfg.spaspp_input_projection;
  return sp;
}

// ---------------------------------------------------------------------------
// Accounting

std::int64_t PlannedOp::params() const {
  const std::int64_t in = conv.in_channels;
  const std::int64_t out = conv.out_channels;
  switch (kind) {
    case OpKind::conv:
      return static_cast<std::int64_t>(conv.kernel) * conv.kernel * in * out + (bias ? out : 0);
    case OpKind::batch_norm:
      return 2 * out;
    case OpKind::linear:
      return in * out + (bias ? out : 0);
  }
  return 0;
}

std::int64_t PlannedOp::macs(int image_h, int image_w) const {
  const std::int64_t in = conv.in_channels;
  const std::int64_t out = conv.out_channels;
  switch (kind) {
    case OpKind::batch_norm:
      return 0;
    case OpKind::linear:
      return in * out;
    case OpKind::conv: {
      std::int64_t positions = 0;
      if (grid > 0) {
        positions = static_cast<std::int64_t>(grid) * grid;
      } else {
        const std::int64_t h = (image_h + downsample - 1) / downsample;
        const std::int64_t w = (image_w + downsample - 1) / downsample;
        positions = h * w;
      }
      return positions * out * in * conv.kernel * conv.kernel;
    }
  }
  return 0;
}

namespace {

class Planner {
 public:
  explicit Planner(std::vector<PlannedOp>& ops) : ops_(ops) {}

  void conv_bn(const std::string& module, const std::string& name, ConvLayerSpec spec, int downsample) {
    conv(module, name + ".conv", spec, /*bias=*/false, downsample);
    PlannedOp bn{module, name + ".bn", OpKind::batch_norm, spec, false, downsample, 0};
    ops_.push_back(bn);
  }

  void conv(const std::string& module, const std::string& name, ConvLayerSpec spec, bool bias, int downsample,
            int grid = 0) {
    ops_.push_back(PlannedOp{module, name, OpKind::conv, spec, bias, downsample, grid});
  }

  void gonv(const std::string& module, const std::string& name, const MSAConfig& msa, int downsample, int grid) {
    conv(module, name + ".squeeze", pointwise(msa.channels, msa.hidden_channels()), true, downsample, grid);
    conv(module, name + ".expand", pointwise(msa.hidden_channels(), msa.channels), true, downsample, grid);
  }

  static ConvLayerSpec conv3(int in, int out, int dilation = 1, int stride = 1) {
    return ConvLayerSpec{3, dilation, stride, in, out, PaddingMode::same};
  }
  static ConvLayerSpec pointwise(int in, int out) { return ConvLayerSpec{1, 1, 1, in, out, PaddingMode::same}; }

 private:
  std::vector<PlannedOp>& ops_;
};

}  // namespace

std::vector<PlannedOp> plan_model(const ModelConfig& cfg, ModelMode mode) {
  cfg.validate();
  std::vector<PlannedOp> ops;
  Planner p(ops);
  const int S = cfg.stem_downsample;

  // Stem: log2(S) stride-2 3x3 layers, 3 -> C -> ... -> 2C.
  int stem_layers = 0;
  for (int s = S; s > 1; s /= 2) ++stem_layers;
  int in = 3;
  for (int i = 0; i < stem_layers; ++i) {
    const int out = i + 1 == stem_layers ? cfg.stem_channels() : cfg.base_channels;
    p.conv_bn("stem", std::to_string(i), Planner::conv3(in, out, 1, 2), 1 << (i + 1));
    in = out;
  }

  const auto layout = context_layout(cfg);
  for (std::size_t g = 0; g < layout.size(); ++g) {
    for (std::size_t b = 0; b < layout[g].blocks.size(); ++b) {
      const auto& block = layout[g].blocks[b];
      const std::string prefix = std::to_string(g) + "." + std::to_string(b);
      int c = block.in_channels;
      int concat = 0;
      for (std::size_t t = 0; t < block.channels.size(); ++t) {
        p.conv_bn("context", prefix + ".taps." + std::to_string(t),
                  Planner::conv3(c, block.channels[t], block.rates[t]), S);
        c = block.channels[t];
        concat += c;
      }
      p.conv_bn("context", prefix + ".compress", Planner::pointwise(concat, block.out_channels()), S);
      if (block.has_projection())
        p.conv_bn("context", prefix + ".project", Planner::pointwise(block.in_channels, block.out_channels()), S);
    }
  }

  const int ws = cfg.spatial_channels();
  const auto depths = spatial_stage_depths(cfg);
  for (std::size_t s = 0; s < depths.size(); ++s) {
    for (int b = 0; b < depths[s]; ++b) {
      const std::string prefix = std::to_string(s) + "." + std::to_string(b);
      p.conv_bn("spatial", prefix + ".conv1", Planner::conv3(ws, ws), S);
      p.conv_bn("spatial", prefix + ".conv2", Planner::conv3(ws, ws), S);
    }
  }

  for (std::size_t f = 0; f < cfg.fusion_points.size(); ++f) {
    const int wc = cfg.group_channels(cfg.fusion_points[f] - 1);
    const bool last = f + 1 == cfg.fusion_points.size();
    const std::string prefix = std::to_string(f);
    if (wc != ws) p.conv_bn("fusion", prefix + ".spatial_proj", Planner::pointwise(ws, wc), S);
    if (cfg.fusion_mode == FusionMode::msaf) {
      const MSAConfig msa = msa_config(cfg, wc);
      p.gonv("fusion", prefix + ".msaf.pixel.gonv", msa, S, 0);
      for (std::size_t i = 0; i < msa.grids.size(); ++i)
        p.gonv("fusion", prefix + ".msaf.region.gonvs." + std::to_string(i), msa, S, msa.grids[i]);
    }
    if (!last && cfg.bidirectional_fusion && wc != ws)
      p.conv_bn("fusion", prefix + ".back_proj", Planner::pointwise(wc, ws), S);
  }

  const int wout = cfg.context_out_channels();
  if (mode == ModelMode::segmentation) {
    if (cfg.context_module == ContextModule::spaspp) {
      const SPASPPConfig sp = spaspp_config(cfg);
      const int bc = sp.branch_channels;
      if (sp.include_input_projection) p.conv_bn("spaspp", "input_proj", Planner::pointwise(sp.channels, bc), S);
      int c = sp.channels;
      for (std::size_t i = 0; i < sp.rates.size(); ++i) {
        p.conv_bn("spaspp", "taps." + std::to_string(i), Planner::conv3(c, bc, sp.rates[i]), S);
        c = bc;
      }
      if (sp.include_global) p.conv("spaspp", "global_conv", Planner::pointwise(sp.channels, bc), true, S, 1);
      p.conv_bn("spaspp", "compress", Planner::pointwise(sp.concat_groups() * bc, sp.channels), S);
    }
    p.conv_bn("head", "conv", Planner::conv3(wout, cfg.head_channels), S);
    p.conv("head", "classifier", Planner::pointwise(cfg.head_channels, cfg.num_classes), true, S);
  } else {
    PlannedOp fc{"head", "fc", OpKind::linear, Planner::pointwise(wout, cfg.num_classes), true, 1, 0};
    ops.push_back(fc);
  }
  return ops;
}

ParamReport count_params(const ModelConfig& cfg, ModelMode mode) {
  ParamReport report;
  report.ops = plan_model(cfg, mode);
  for (const auto& op : report.ops) {
    const auto n = op.params();
    report.per_module[op.module] += n;
    report.total_params += n;
  }
  return report;
}

std::int64_t ParamReport::macs_at(int image_h, int image_w) const {
  std::int64_t total = 0;
  for (const auto& op : ops) total += op.macs(image_h, image_w);
  return total;
}

}  // namespace dsnet
