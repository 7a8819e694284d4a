#pragma once

// Receptive-field arithmetic over convolution chains and the atrous design
// linter (dense branch present, padding dominance, fusion mechanism).

#include <string>
#include <vector>

#include "dsnet/config.hpp"

namespace dsnet {

struct RFEntry {
  int layer = 0;             // 0-based index in the chain
  int rf = 1;                // receptive field in input pixels
  int cumulative_stride = 1; // product of strides up to and including this layer
  int extent = 1;            // dilated kernel extent of this layer
};

struct RFProfile {
  std::vector<RFEntry> per_layer;

  int final_rf() const { return per_layer.empty() ? 1 : per_layer.back().rf; }
  std::vector<int> rfs() const;
};

/// rf_i = rf_{i-1} + (k_i - 1) * d_i * prod_{j<i} s_j, starting from
/// `initial_rf` (1 for a raw input) measured at stride `initial_stride`.
RFProfile receptive_field(const std::vector<ConvLayerSpec>& chain, int initial_rf = 1, int initial_stride = 1);

/// Width of the non-zero input-gradient support of one output pixel of the
/// chain, built with positive constant weights on a probe_size x probe_size
/// single-channel input. Throws ValidationError when the probe cannot hold
/// the full support of any output pixel.
int empirical_rf(const std::vector<ConvLayerSpec>& chain, int probe_size);

/// Mean over output positions of the fraction of kernel taps landing in the
/// zero padding of a feature_hw x feature_hw map. Requires same padding.
double padding_fraction(const ConvLayerSpec& spec, int feature_hw);

enum class Severity { info, warn, disaster };
enum class Guideline { atrous_only, atrous_disaster, fusion };

std::string_view to_string(Severity s);
std::string_view to_string(Guideline g);

struct Finding {
  Severity severity = Severity::info;
  Guideline guideline = Guideline::fusion;
  std::string location;  // layer or module reference
  std::string message;
  double metric = 0.0;
};

struct LintThresholds {
  double warn_fraction = 0.25;
  double disaster_fraction = 0.40;
};

struct LintReport {
  std::vector<Finding> findings;

  int count(Severity s) const;
  bool has_disaster() const { return count(Severity::disaster) > 0; }
  Severity worst() const;
};

LintReport lint(const ModelConfig& cfg, int pretrain_input = 224, const LintThresholds& thresholds = {});

/// One atrous tap of the context branch, located in the MFACB layout.
struct ContextRFRow {
  int layer = 0;
  int group = 0;
  int block = 0;
  int tap = 0;
  ConvLayerSpec spec;
  int rf = 1;          // serial-chain RF in branch-input (feature) pixels
  int rf_image = 1;    // serial-chain RF in image pixels, including the stem
  int scale_min = 1;   // smallest RF among the multi-scale paths reaching this tap
  int scale_max = 1;   // largest RF among those paths
};

/// Per-tap receptive fields of the context branch. MFACB outputs aggregate
/// the scales of all their taps, so the next block's taps see a range of
/// scales rather than a single RF.
std::vector<ContextRFRow> context_rf_table(const ModelConfig& cfg);

/// The stem convolutions followed by every context-branch atrous tap.
std::vector<ConvLayerSpec> context_chain(const ModelConfig& cfg);

std::string format_rf_table(const std::vector<ContextRFRow>& rows);
std::string format_lint_report(const LintReport& report);
/// Machine-readable JSON encodings.
std::string rf_table_to_json(const std::vector<ContextRFRow>& rows);
std::string lint_report_to_json(const LintReport& report);

}  // namespace dsnet
