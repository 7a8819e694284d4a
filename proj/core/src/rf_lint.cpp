#include "dsnet/rf_lint.hpp"

#include <algorithm>
#include <cstdio>
#include <sstream>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include "dsnet/error.hpp"

namespace dsnet {

std::vector<int> RFProfile::rfs() const {
  std::vector<int> out;
  out.reserve(per_layer.size());
  for (const auto& e : per_layer) out.push_back(e.rf);
  return out;
}

RFProfile receptive_field(const std::vector<ConvLayerSpec>& chain, int initial_rf, int initial_stride) {
  RFProfile profile;
  int rf = initial_rf;
  int jump = initial_stride;
  for (std::size_t i = 0; i < chain.size(); ++i) {
    const auto& spec = chain[i];
    spec.validate();
    rf += (spec.kernel - 1) * spec.dilation * jump;
    jump *= spec.stride;
    profile.per_layer.push_back(RFEntry{static_cast<int>(i), rf, jump, spec.extent()});
  }
  return profile;
}

int empirical_rf(const std::vector<ConvLayerSpec>& chain, int probe_size) {
  if (chain.empty()) return 1;
  if (probe_size < 1) throw ValidationError("probe_size must be >= 1");
  torch::NoGradGuard outer_guard;  // weights never need gradients

  // Locate an output pixel whose whole window lies inside the probe:
  // output o covers input [o * S - offset, o * S - offset + rf - 1].
  int stride = 1;
  int offset = 0;
  int rf = 1;
  int size = probe_size;
  for (const auto& spec : chain) {
    spec.validate();
    offset += spec.padding() * stride;
    rf += (spec.kernel - 1) * spec.dilation * stride;
    stride *= spec.stride;
    size = spec.output_size(size);
    if (size < 1) throw ValidationError("probe of " + std::to_string(probe_size) + " px collapses inside the chain");
  }
  const double centre = (probe_size - 1) / 2.0;
  int best = -1;
  double best_dist = 0.0;
  for (int o = 0; o < size; ++o) {
    const int start = o * stride - offset;
    if (start < 0 || start + rf - 1 > probe_size - 1) continue;
    const double dist = std::abs(start + (rf - 1) / 2.0 - centre);
    if (best < 0 || dist < best_dist) {
      best = o;
      best_dist = dist;
    }
  }
  if (best < 0)
    throw ValidationError("probe of " + std::to_string(probe_size) + " px cannot contain a receptive field of " +
                          std::to_string(rf) + " px at stride " + std::to_string(stride));

  auto opts = torch::TensorOptions().dtype(torch::kFloat64);
  auto input = torch::zeros({1, 1, probe_size, probe_size}, opts).requires_grad_(true);
  torch::Tensor y;
  {
    torch::AutoGradMode enable(true);
    y = input;
    for (const auto& spec : chain) {
      auto weight = torch::ones({1, 1, spec.kernel, spec.kernel}, opts);
      y = torch::conv2d(y, weight, {}, spec.stride, spec.padding(), spec.dilation);
    }
    auto seed = torch::zeros_like(y);
    seed.index_put_({0, 0, best, best}, 1.0);
    y.backward(seed);
  }
  auto support = input.grad().squeeze().ne(0.0);
  auto cols = torch::nonzero(support.any(0)).flatten();
  auto rows = torch::nonzero(support.any(1)).flatten();
  if (cols.numel() == 0) return 0;
  const auto width = cols.max().item<int64_t>() - cols.min().item<int64_t>() + 1;
  const auto height = rows.max().item<int64_t>() - rows.min().item<int64_t>() + 1;
  return static_cast<int>(std::max(width, height));
}

double padding_fraction(const ConvLayerSpec& spec, int feature_hw) {
  if (feature_hw < 1) throw ValidationError("feature size must be >= 1, got " + std::to_string(feature_hw));
  if (spec.padding_mode != PaddingMode::same) throw ValidationError("padding_fraction requires same padding");
  spec.validate();

  // Taps are separable, so the 2-D inside count is the product of 1-D counts.
  const int outputs = spec.output_size(feature_hw);
  const int half = (spec.kernel - 1) / 2;
  long long inside = 0;
  for (int o = 0; o < outputs; ++o) {
    const int centre = o * spec.stride;
    for (int t = -half; t <= half; ++t) {
      const int pos = centre + t * spec.dilation;
      if (pos >= 0 && pos < feature_hw) ++inside;
    }
  }
  const double per_axis = static_cast<double>(inside) / (static_cast<double>(outputs) * spec.kernel);
  return 1.0 - per_axis * per_axis;
}

std::string_view to_string(Severity s) {
  switch (s) {
    case Severity::info: return "info";
    case Severity::warn: return "warn";
    case Severity::disaster: return "disaster";
  }
  return "info";
}

std::string_view to_string(Guideline g) {
  switch (g) {
    case Guideline::atrous_only: return "atrous_only";
    case Guideline::atrous_disaster: return "atrous_disaster";
    case Guideline::fusion: return "fusion";
  }
  return "fusion";
}

int LintReport::count(Severity s) const {
  return static_cast<int>(std::count_if(findings.begin(), findings.end(),
                                        [s](const Finding& f) { return f.severity == s; }));
}

Severity LintReport::worst() const {
  Severity w = Severity::info;
  for (const auto& f : findings) w = std::max(w, f.severity);
  return w;
}

namespace {

std::vector<ConvLayerSpec> stem_chain(const ModelConfig& cfg) {
  std::vector<ConvLayerSpec> chain;
  int in = 3;
  for (int s = cfg.stem_downsample; s > 1; s /= 2) {
    const int out = s == 2 ? cfg.stem_channels() : cfg.base_channels;
    chain.push_back(ConvLayerSpec{3, 1, 2, in, out, PaddingMode::same});
    in = out;
  }
  return chain;
}

std::string tap_location(int group, int block, int tap, int rate) {
  return "context.g" + std::to_string(group + 1) + ".b" + std::to_string(block + 1) + ".tap" +
         std::to_string(tap + 1) + " (d=" + std::to_string(rate) + ")";
}

}  // namespace

std::vector<ConvLayerSpec> context_chain(const ModelConfig& cfg) {
  auto chain = stem_chain(cfg);
  for (const auto& group : context_layout(cfg)) {
    for (const auto& block : group.blocks) {
      int in = block.in_channels;
      for (std::size_t t = 0; t < block.channels.size(); ++t) {
        chain.push_back(ConvLayerSpec{3, block.rates[t], 1, in, block.channels[t], PaddingMode::same});
        in = block.channels[t];
      }
    }
  }
  return chain;
}

std::vector<ContextRFRow> context_rf_table(const ModelConfig& cfg) {
  cfg.validate();
  const auto stem = receptive_field(stem_chain(cfg));
  const int stem_rf = stem.final_rf();
  const int S = cfg.stem_downsample;

  std::vector<ContextRFRow> rows;
  int rf = 1;
  int scale_min = 1;
  int scale_max = 1;
  int layer = 0;
  const auto layout = context_layout(cfg);
  for (std::size_t g = 0; g < layout.size(); ++g) {
    for (std::size_t b = 0; b < layout[g].blocks.size(); ++b) {
      const auto& block = layout[g].blocks[b];
      int in = block.in_channels;
      int tap_min = scale_min;
      int tap_max = scale_max;
      int first_min = 0;
      for (std::size_t t = 0; t < block.channels.size(); ++t) {
        ContextRFRow row;
        row.layer = layer++;
        row.group = static_cast<int>(g);
        row.block = static_cast<int>(b);
        row.tap = static_cast<int>(t);
        row.spec = ConvLayerSpec{3, block.rates[t], 1, in, block.channels[t], PaddingMode::same};
        const int grow = row.spec.extent() - 1;
        rf += grow;
        tap_min += grow;
        tap_max += grow;
        if (t == 0) first_min = tap_min;
        row.rf = rf;
        row.rf_image = stem_rf + (rf - 1) * S;
        row.scale_min = tap_min;
        row.scale_max = tap_max;
        rows.push_back(row);
        in = block.channels[t];
      }
      // Concatenation exposes every tap's scale to the next block.
      scale_min = first_min;
      scale_max = tap_max;
    }
  }
  return rows;
}

LintReport lint(const ModelConfig& cfg, int pretrain_input, const LintThresholds& thresholds) {
  cfg.validate();
  LintReport report;

  if (cfg.spatial_depth == 0) {
    report.findings.push_back(Finding{Severity::warn, Guideline::atrous_only, "spatial",
                                      "no dense-convolution spatial branch; the backbone relies on atrous "
                                      "convolutions alone",
                                      0.0});
  }

  const int feature = pretrain_input / cfg.stem_downsample;
  const auto layout = context_layout(cfg);
  for (std::size_t g = 0; g < layout.size(); ++g) {
    for (std::size_t b = 0; b < layout[g].blocks.size(); ++b) {
      const auto& block = layout[g].blocks[b];
      for (std::size_t t = 0; t < block.rates.size(); ++t) {
        if (block.rates[t] <= 1) continue;
        const ConvLayerSpec spec{3, block.rates[t], 1, 1, 1, PaddingMode::same};
        const std::string where = tap_location(static_cast<int>(g), static_cast<int>(b), static_cast<int>(t),
                                               block.rates[t]);
        if (feature < 1) {
          report.findings.push_back(Finding{Severity::disaster, Guideline::atrous_disaster, where,
                                            "pretraining input collapses below one feature pixel", 1.0});
          continue;
        }
        const double fraction = padding_fraction(spec, feature);
        char msg[192];
        if (spec.extent() > feature) {
          std::snprintf(msg, sizeof msg, "kernel extent %d exceeds the %dx%d feature map (padding fraction %.4f)",
                        spec.extent(), feature, feature, fraction);
          report.findings.push_back(Finding{Severity::disaster, Guideline::atrous_disaster, where, msg, fraction});
        } else if (fraction > thresholds.disaster_fraction) {
          std::snprintf(msg, sizeof msg, "padding fraction %.4f on %dx%d exceeds %.2f", fraction, feature, feature,
                        thresholds.disaster_fraction);
          report.findings.push_back(Finding{Severity::disaster, Guideline::atrous_disaster, where, msg, fraction});
        } else if (fraction > thresholds.warn_fraction) {
          std::snprintf(msg, sizeof msg, "padding fraction %.4f on %dx%d exceeds %.2f", fraction, feature, feature,
                        thresholds.warn_fraction);
          report.findings.push_back(Finding{Severity::warn, Guideline::atrous_disaster, where, msg, fraction});
        }
      }
    }
  }

  if (cfg.fusion_mode == FusionMode::add) {
    report.findings.push_back(Finding{Severity::info, Guideline::fusion, "fusion",
                                      "branches are merged by element-wise addition; an attention-weighted "
                                      "fusion usually performs better",
                                      0.0});
  }
  return report;
}

std::string format_rf_table(const std::vector<ContextRFRow>& rows) {
  std::ostringstream os;
  char line[160];
  std::snprintf(line, sizeof line, "%-6s %-6s %-6s %-4s %-4s %-7s %-9s %-10s %s\n", "layer", "group", "block",
                "tap", "d", "extent", "RF", "RF(image)", "scales");
  os << line;
  for (const auto& r : rows) {
    char scales[40];
    if (r.scale_min == r.scale_max)
      std::snprintf(scales, sizeof scales, "{%dx%d}", r.scale_min, r.scale_min);
    else
      std::snprintf(scales, sizeof scales, "{%dx%d .. %dx%d}", r.scale_min, r.scale_min, r.scale_max, r.scale_max);
    char rf[24];
    std::snprintf(rf, sizeof rf, "%dx%d", r.rf, r.rf);
    std::snprintf(line, sizeof line, "%-6d %-6d %-6d %-4d %-4d %-7d %-9s %-10d %s\n", r.layer, r.group + 1,
                  r.block + 1, r.tap + 1, r.spec.dilation, r.spec.extent(), rf, r.rf_image, scales);
    os << line;
  }
  return os.str();
}

std::string format_lint_report(const LintReport& report) {
  std::ostringstream os;
  if (report.findings.empty()) {
    os << "no findings\n";
    return os.str();
  }
  for (const auto& f : report.findings) {
    os << '[' << to_string(f.severity) << "] " << to_string(f.guideline) << ' ' << f.location << ": "
       << f.message << '\n';
  }
  os << report.count(Severity::disaster) << " disaster, " << report.count(Severity::warn) << " warn, "
     << report.count(Severity::info) << " info\n";
  return os.str();
}

std::string rf_table_to_json(const std::vector<ContextRFRow>& rows) {
  nlohmann::ordered_json arr = nlohmann::ordered_json::array();
  for (const auto& r : rows) {
    arr.push_back({{"layer", r.layer},
                   {"group", r.group + 1},
                   {"block", r.block + 1},
                   {"tap", r.tap + 1},
                   {"kernel", r.spec.kernel},
                   {"dilation", r.spec.dilation},
                   {"extent", r.spec.extent()},
                   {"rf", r.rf},
                   {"rf_image", r.rf_image},
                   {"scale_min", r.scale_min},
                   {"scale_max", r.scale_max}});
  }
  return arr.dump(2);
}

std::string lint_report_to_json(const LintReport& report) {
  nlohmann::ordered_json j;
  j["findings"] = nlohmann::ordered_json::array();
  for (const auto& f : report.findings) {
    j["findings"].push_back({{"severity", to_string(f.severity)},
                             {"guideline", to_string(f.guideline)},
                             {"location", f.location},
                             {"message", f.message},
                             {"metric", f.metric}});
  }
  j["disaster"] = report.count(Severity::disaster);
  j["warn"] = report.count(Severity::warn);
  j["info"] = report.count(Severity::info);
  return j.dump(2);
}

}  // namespace dsnet
