#include "dsnet/train_eval.hpp"

#include <png.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "dsnet/error.hpp"

namespace dsnet {

namespace F = torch::nn::functional;
namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

void TrainConfig::validate() const {
  if (iterations < 1) throw ValidationError("iterations must be >= 1, got " + std::to_string(iterations));
  if (!(base_lr > 0.0)) throw ValidationError("base_lr must be positive");
  if (power < 0.0) throw ValidationError("power must be non-negative");
  if (momentum < 0.0 || momentum >= 1.0) throw ValidationError("momentum must be in [0, 1)");
  if (weight_decay < 0.0) throw ValidationError("weight_decay must be non-negative");
  if (batch_size < 1) throw ValidationError("batch_size must be >= 1");
  if (crop_h < 1 || crop_w < 1) throw ValidationError("crop must be positive");
  if (!(scale_min > 0.0) || scale_min > scale_max) {
    throw ValidationError("scale range must satisfy 0 < min <= max");
  }
}

double poly_lr(int iter, const TrainConfig& cfg) {
  if (cfg.iterations < 1) throw ValidationError("iterations must be >= 1");
  if (iter < 0 || iter > cfg.iterations) {
    throw ValidationError("iteration " + std::to_string(iter) + " outside [0, " + std::to_string(cfg.iterations) + "]");
  }
  const double progress = static_cast<double>(iter) / cfg.iterations;
  return cfg.base_lr * std::pow(1.0 - progress, cfg.power);
}

// Augmentation.

namespace {

std::pair<int, int> scaled_size(const SegSample& s, double scale) {
  const auto h = s.image.size(1);
  const auto w = s.image.size(2);
  const int sh = std::max(1, static_cast<int>(std::floor(static_cast<double>(h) * scale)));
  const int sw = std::max(1, static_cast<int>(std::floor(static_cast<double>(w) * scale)));
  return {sh, sw};
}

void check_sample(const SegSample& s) {
  if (!s.image.defined() || s.image.dim() != 3 || s.image.size(0) != 3) {
    throw ShapeError("sample image must be (3, H, W)");
  }
  if (!s.mask.defined() || s.mask.dim() != 2 || s.mask.size(0) != s.image.size(1) ||
      s.mask.size(1) != s.image.size(2)) {
    throw ShapeError("sample mask must be (H, W) matching the image");
  }
}

}  // namespace

torch::Tensor resize_mask_nearest(const torch::Tensor& mask, int height, int width) {
  if (mask.dim() != 2) throw ShapeError("mask must be 2-D");
  if (height < 1 || width < 1) throw ValidationError("resize target must be positive");
  const auto in_h = mask.size(0);
  const auto in_w = mask.size(1);
  if (in_h == height && in_w == width) return mask.clone();
  auto rows = torch::arange(height, torch::kLong).mul(in_h).div(height, "floor");
  auto cols = torch::arange(width, torch::kLong).mul(in_w).div(width, "floor");
  return mask.index_select(0, rows).index_select(1, cols);
}

AugmentParams sample_augment(const SegSample& sample, const TrainConfig& cfg, std::mt19937_64& rng) {
  check_sample(sample);
  AugmentParams p;
  p.flip = std::bernoulli_distribution(0.5)(rng);
  p.scale = cfg.scale_min == cfg.scale_max ? cfg.scale_min
                                           : std::uniform_real_distribution<double>(cfg.scale_min, cfg.scale_max)(rng);
  const auto [sh, sw] = scaled_size(sample, p.scale);
  const int ph = std::max(sh, cfg.crop_h);
  const int pw = std::max(sw, cfg.crop_w);
  p.crop_y = std::uniform_int_distribution<int>(0, ph - cfg.crop_h)(rng);
  p.crop_x = std::uniform_int_distribution<int>(0, pw - cfg.crop_w)(rng);
  return p;
}

SegSample apply_augment(const SegSample& sample, const AugmentParams& params, int crop_h, int crop_w) {
  check_sample(sample);
  if (!(params.scale > 0.0)) throw ValidationError("scale must be positive");
  if (crop_h < 1 || crop_w < 1) throw ValidationError("crop must be positive");

  torch::Tensor image = sample.image;
  torch::Tensor mask = sample.mask;
  if (params.flip) {
    image = image.flip({2});
    mask = mask.flip({1});
  }

  const auto [sh, sw] = scaled_size(sample, params.scale);
  if (sh != image.size(1) || sw != image.size(2)) {
    image = F::interpolate(image.unsqueeze(0), F::InterpolateFuncOptions()
                                                   .size(std::vector<int64_t>{sh, sw})
                                                   .mode(torch::kBilinear)
                                                   .align_corners(false))
                .squeeze(0);
    mask = resize_mask_nearest(mask, sh, sw);
  }

  const int ph = std::max(sh, crop_h);
  const int pw = std::max(sw, crop_w);
  if (params.crop_y < 0 || params.crop_x < 0 || params.crop_y + crop_h > ph || params.crop_x + crop_w > pw) {
    throw ValidationError("crop offset outside the padded canvas");
  }
  if (ph != sh || pw != sw) {
    auto canvas = torch::zeros({3, ph, pw}, image.options());
    canvas.slice(1, 0, sh).slice(2, 0, sw).copy_(image);
    auto mask_canvas = torch::full({ph, pw}, kIgnoreLabel, mask.options());
    mask_canvas.slice(0, 0, sh).slice(1, 0, sw).copy_(mask);
    image = canvas;
    mask = mask_canvas;
  }

  SegSample out;
  out.image = image.slice(1, params.crop_y, params.crop_y + crop_h).slice(2, params.crop_x, params.crop_x + crop_w).clone();
  out.mask = mask.slice(0, params.crop_y, params.crop_y + crop_h).slice(1, params.crop_x, params.crop_x + crop_w).clone();
  out.name = sample.name;
  return out;
}

SegSample augment(const SegSample& sample, const TrainConfig& cfg, std::mt19937_64& rng) {
  return apply_augment(sample, sample_augment(sample, cfg, rng), cfg.crop_h, cfg.crop_w);
}

// Training.

TrainResult train(DSNet& model, const Dataset& data, const TrainConfig& cfg, const TrainHooks& hooks) {
  cfg.validate();
  if (data.empty()) throw ValidationError("dataset is empty");
  if (model->mode() != ModelMode::segmentation) throw ValidationError("training requires a segmentation model");

  const auto reference = model->parameters().front();
  const auto dtype = reference.scalar_type();
  const auto device = reference.device();
  std::mt19937_64 rng(cfg.seed);
  torch::optim::SGD optimizer(model->parameters(), torch::optim::SGDOptions(cfg.base_lr)
                                                       .momentum(cfg.momentum)
                                                       .weight_decay(cfg.weight_decay));

  std::ofstream log;
  if (!hooks.metrics_log.empty()) {
    if (hooks.metrics_log.has_parent_path()) fs::create_directories(hooks.metrics_log.parent_path());
    log.open(hooks.metrics_log);
    if (!log) throw IoError("cannot write metrics log " + hooks.metrics_log.string());
  }

  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::size_t cursor = order.size();

  TrainResult result;
  result.loss_trace.reserve(static_cast<std::size_t>(cfg.iterations));
  result.lr_trace.reserve(static_cast<std::size_t>(cfg.iterations));
  model->train();

  for (int it = 0; it < cfg.iterations; ++it) {
    const double lr = poly_lr(it, cfg);
    for (auto& group : optimizer.param_groups()) {
      static_cast<torch::optim::SGDOptions&>(group.options()).lr(lr);
    }

    std::vector<torch::Tensor> images;
    std::vector<torch::Tensor> masks;
    for (int b = 0; b < cfg.batch_size; ++b) {
      if (cursor == order.size()) {
        std::shuffle(order.begin(), order.end(), rng);
        cursor = 0;
      }
      const auto& sample = data.samples[order[cursor++]];
      SegSample s = cfg.augment ? augment(sample, cfg, rng) : apply_augment(sample, AugmentParams{}, cfg.crop_h, cfg.crop_w);
      images.push_back(s.image);
      masks.push_back(s.mask);
    }
    auto batch = torch::stack(images).to(device, dtype);
    auto target = torch::stack(masks).to(device, torch::kLong);

    auto logits = model->forward(batch);
    auto loss = F::cross_entropy(logits, target, F::CrossEntropyFuncOptions().ignore_index(kIgnoreLabel));
    const double value = loss.item<double>();
    if (!std::isfinite(value)) {
      std::ostringstream msg;
      msg << "non-finite loss " << value << " at iteration " << it << " (lr " << lr << ")";
      throw RuntimeFailure(msg.str());
    }
    optimizer.zero_grad();
    loss.backward();
    optimizer.step();

    result.loss_trace.push_back(value);
    result.lr_trace.push_back(lr);
    if (log) log << json{{"iter", it}, {"lr", lr}, {"loss", value}}.dump() << '\n';
    if (hooks.on_iteration) hooks.on_iteration(it, lr, value);
  }

  if (!hooks.checkpoint.empty()) save_checkpoint(model, hooks.checkpoint);
  return result;
}

// Evaluation.

ConfusionMatrix::ConfusionMatrix(int num_classes) : num_classes_(num_classes) {
  if (num_classes < 1) throw ValidationError("num_classes must be >= 1");
  counts_.assign(static_cast<std::size_t>(num_classes) * num_classes, 0);
}

void ConfusionMatrix::add(int gt, int pred, std::int64_t count) {
  if (gt == kIgnoreLabel) return;
  if (gt < 0 || gt >= num_classes_ || pred < 0 || pred >= num_classes_) {
    throw ValidationError("label pair (" + std::to_string(gt) + ", " + std::to_string(pred) + ") outside " +
                          std::to_string(num_classes_) + " classes");
  }
  counts_[static_cast<std::size_t>(gt) * num_classes_ + pred] += count;
}

void ConfusionMatrix::update(const torch::Tensor& gt, const torch::Tensor& pred) {
  if (gt.sizes() != pred.sizes()) throw ShapeError("ground truth and prediction shapes differ");
  auto g = gt.to(torch::kCPU, torch::kLong).flatten();
  auto p = pred.to(torch::kCPU, torch::kLong).flatten();
  auto valid = g.ne(kIgnoreLabel);
  g = g.masked_select(valid);
  p = p.masked_select(valid);
  if (g.numel() == 0) return;
  const std::int64_t k = num_classes_;
  if (g.min().item<int64_t>() < 0 || g.max().item<int64_t>() >= k) {
    throw ValidationError("ground-truth label outside " + std::to_string(k) + " classes");
  }
  if (p.min().item<int64_t>() < 0 || p.max().item<int64_t>() >= k) {
    throw ValidationError("predicted label outside " + std::to_string(k) + " classes");
  }
  auto bins = torch::bincount(g.mul(k).add(p), {}, k * k).contiguous();
  const auto* ptr = bins.data_ptr<int64_t>();
  for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += ptr[i];
}

std::int64_t ConfusionMatrix::total() const { return std::accumulate(counts_.begin(), counts_.end(), std::int64_t{0}); }

EvalResult summarize(const ConfusionMatrix& confusion) {
  const std::int64_t total = confusion.total();
  if (total == 0) throw ValidationError("no labeled pixels");
  const int k = confusion.num_classes();
  EvalResult r;
  r.confusion = confusion;
  r.per_class_iou.assign(static_cast<std::size_t>(k), std::nullopt);
  double sum = 0.0;
  int present = 0;
  std::int64_t correct = 0;
  for (int c = 0; c < k; ++c) {
    std::int64_t row = 0;
    std::int64_t col = 0;
    for (int j = 0; j < k; ++j) {
      row += confusion.at(c, j);
      col += confusion.at(j, c);
    }
    const std::int64_t tp = confusion.at(c, c);
    const std::int64_t denom = row + col - tp;
    correct += tp;
    if (denom > 0) {
      const double iou = static_cast<double>(tp) / static_cast<double>(denom);
      r.per_class_iou[static_cast<std::size_t>(c)] = iou;
      sum += iou;
      ++present;
    }
  }
  r.miou = sum / present;
  r.pixel_accuracy = static_cast<double>(correct) / static_cast<double>(total);
  return r;
}

torch::Tensor predict(DSNet& model, const torch::Tensor& image) {
  if (model->mode() != ModelMode::segmentation) throw ValidationError("prediction requires a segmentation model");
  if (image.dim() != 3 || image.size(0) != 3) throw ShapeError("image must be (3, H, W)");
  const auto h = image.size(1);
  const auto w = image.size(2);
  const int s = model->config().stem_downsample;
  const auto ph = (h + s - 1) / s * s;
  const auto pw = (w + s - 1) / s * s;
  const auto reference = model->parameters().front();
  auto input = image.to(reference.device(), reference.scalar_type());
  if (ph != h || pw != w) {
    auto canvas = torch::zeros({3, ph, pw}, input.options());
    canvas.slice(1, 0, h).slice(2, 0, w).copy_(input);
    input = canvas;
  }
  torch::NoGradGuard no_grad;
  model->eval();
  auto logits = model->forward(input.unsqueeze(0));
  return logits.argmax(1).squeeze(0).slice(0, 0, h).slice(1, 0, w).to(torch::kCPU).contiguous();
}

EvalResult evaluate_predictions(const std::vector<torch::Tensor>& ground_truth,
                                const std::vector<torch::Tensor>& predictions, int num_classes) {
  if (ground_truth.size() != predictions.size()) throw ValidationError("ground truth and prediction counts differ");
  ConfusionMatrix cm(num_classes);
  for (std::size_t i = 0; i < ground_truth.size(); ++i) cm.update(ground_truth[i], predictions[i]);
  return summarize(cm);
}

EvalResult evaluate(DSNet& model, const Dataset& data) {
  if (data.empty()) throw ValidationError("dataset is empty");
  std::vector<torch::Tensor> masks;
  std::vector<torch::Tensor> predictions;
  for (const auto& sample : data.samples) {
    check_sample(sample);
    masks.push_back(sample.mask);
    predictions.push_back(predict(model, sample.image));
  }
  return evaluate_predictions(masks, predictions, model->config().num_classes);
}

// Image files.

Image8 read_png(const fs::path& path, int channels) {
  if (channels != 1 && channels != 3) throw ValidationError("channels must be 1 or 3");
  png_image img;
  std::memset(&img, 0, sizeof(img));
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&img, path.string().c_str())) {
    throw IoError("cannot read " + path.string() + ": " + img.message);
  }
  if (channels == 1 && (img.format & PNG_FORMAT_FLAG_COLOR) != 0) {
    png_image_free(&img);
    throw ValidationError(path.string() + " must be a single-channel image");
  }
  img.format = channels == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  Image8 out;
  out.width = static_cast<int>(img.width);
  out.height = static_cast<int>(img.height);
  out.channels = channels;
  out.pixels.resize(PNG_IMAGE_SIZE(img));
  if (!png_image_finish_read(&img, nullptr, out.pixels.data(), 0, nullptr)) {
    throw IoError("cannot decode " + path.string() + ": " + img.message);
  }
  return out;
}

void write_png(const fs::path& path, const Image8& image) {
  if (image.channels != 1 && image.channels != 3) throw ValidationError("channels must be 1 or 3");
  if (image.pixels.size() != static_cast<std::size_t>(image.width) * image.height * image.channels) {
    throw ShapeError("pixel buffer does not match image dimensions");
  }
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  png_image img;
  std::memset(&img, 0, sizeof(img));
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(image.width);
  img.height = static_cast<png_uint_32>(image.height);
  img.format = image.channels == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  if (!png_image_write_to_file(&img, path.string().c_str(), 0, image.pixels.data(), 0, nullptr)) {
    throw IoError("cannot write " + path.string() + ": " + img.message);
  }
}

torch::Tensor image_to_tensor(const Image8& rgb) {
  if (rgb.channels != 3) throw ValidationError("expected an RGB image");
  auto raw = torch::from_blob(const_cast<std::uint8_t*>(rgb.pixels.data()), {rgb.height, rgb.width, 3}, torch::kUInt8);
  auto x = raw.permute({2, 0, 1}).to(torch::kFloat).div(255.0);
  auto mean = torch::tensor({0.485f, 0.456f, 0.406f}).view({3, 1, 1});
  auto stdev = torch::tensor({0.229f, 0.224f, 0.225f}).view({3, 1, 1});
  return x.sub(mean).div(stdev).contiguous();
}

torch::Tensor mask_to_tensor(const Image8& gray) {
  if (gray.channels != 1) throw ValidationError("expected a single-channel mask");
  auto raw = torch::from_blob(const_cast<std::uint8_t*>(gray.pixels.data()), {gray.height, gray.width}, torch::kUInt8);
  return raw.to(torch::kLong).clone();
}

Image8 tensor_to_mask(const torch::Tensor& mask) {
  if (mask.dim() != 2) throw ShapeError("mask must be 2-D");
  auto m = mask.to(torch::kCPU, torch::kLong);
  if (m.numel() > 0 && (m.min().item<int64_t>() < 0 || m.max().item<int64_t>() > 255)) {
    throw ValidationError("mask values must fit in 8 bits");
  }
  m = m.to(torch::kUInt8).contiguous();
  Image8 out;
  out.height = static_cast<int>(m.size(0));
  out.width = static_cast<int>(m.size(1));
  out.channels = 1;
  out.pixels.assign(m.data_ptr<std::uint8_t>(), m.data_ptr<std::uint8_t>() + m.numel());
  return out;
}

namespace {

std::set<std::string> png_stems(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw IoError("missing directory " + dir.string());
  std::set<std::string> stems;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".png") stems.insert(entry.path().stem().string());
  }
  return stems;
}

}  // namespace

Dataset load_dataset(const fs::path& root, int num_classes) {
  if (num_classes < 1 || num_classes > 255) throw ValidationError("num_classes must be in [1, 255]");
  const auto images = png_stems(root / "images");
  const auto masks = png_stems(root / "masks");
  for (const auto& name : images) {
    if (!masks.count(name)) throw IoError("unpaired file images/" + name + ".png: no masks/" + name + ".png");
  }
  for (const auto& name : masks) {
    if (!images.count(name)) throw IoError("unpaired file masks/" + name + ".png: no images/" + name + ".png");
  }

  Dataset data;
  data.num_classes = num_classes;
  for (const auto& name : images) {
    const auto image = read_png(root / "images" / (name + ".png"), 3);
    const auto mask = read_png(root / "masks" / (name + ".png"), 1);
    if (image.width != mask.width || image.height != mask.height) {
      throw ValidationError("image and mask sizes differ for " + name);
    }
    for (auto v : mask.pixels) {
      if (v >= num_classes && v != kIgnoreLabel) {
        throw ValidationError("mask masks/" + name + ".png has value " + std::to_string(v) + " outside " +
                              std::to_string(num_classes) + " classes");
      }
    }
    data.samples.push_back({image_to_tensor(image), mask_to_tensor(mask), name});
  }
  return data;
}

// Synthetic data.

namespace {

std::array<int, 3> class_colour(int c) {
  static constexpr std::array<std::array<int, 3>, 8> kPalette{{{40, 40, 40},
                                                               {220, 40, 40},
                                                               {40, 200, 40},
                                                               {40, 60, 220},
                                                               {230, 210, 40},
                                                               {200, 50, 200},
                                                               {40, 200, 210},
                                                               {240, 140, 40}}};
  if (c < static_cast<int>(kPalette.size())) return kPalette[static_cast<std::size_t>(c)];
  std::mt19937 g(static_cast<unsigned>(c));
  std::uniform_int_distribution<int> d(30, 225);
  return {d(g), d(g), d(g)};
}

constexpr int kBorderBand = 2;
constexpr int kNoise = 12;

}  // namespace

std::vector<SyntheticSample> generate_synthetic(int n, int hw, int classes, std::uint64_t seed) {
  if (n < 1) throw ValidationError("n must be >= 1");
  if (hw < 16) throw ValidationError("hw must be >= 16");
  if (classes < 2 || classes > 255) throw ValidationError("classes must be in [2, 255]");

  std::mt19937_64 rng(seed);
  std::vector<SyntheticSample> out;
  for (int i = 0; i < n; ++i) {
    std::vector<int> label(static_cast<std::size_t>(hw) * hw, 0);
    const int shapes = std::uniform_int_distribution<int>(2, 4)(rng);
    for (int s = 0; s < shapes; ++s) {
      const int cls = std::uniform_int_distribution<int>(1, classes - 1)(rng);
      const bool disc = std::bernoulli_distribution(0.5)(rng);
      const int half = std::uniform_int_distribution<int>(std::max(2, hw / 10), std::max(3, hw / 6))(rng);
      const int cy = std::uniform_int_distribution<int>(hw / 4, 3 * hw / 4)(rng);
      const int cx = std::uniform_int_distribution<int>(hw / 4, 3 * hw / 4)(rng);
      for (int y = std::max(0, cy - half); y <= std::min(hw - 1, cy + half); ++y) {
        for (int x = std::max(0, cx - half); x <= std::min(hw - 1, cx + half); ++x) {
          if (disc && (y - cy) * (y - cy) + (x - cx) * (x - cx) > half * half) continue;
          label[static_cast<std::size_t>(y) * hw + x] = cls;
        }
      }
    }

    SyntheticSample sample;
    char name[32];
    std::snprintf(name, sizeof(name), "sample_%04d", i);
    sample.name = name;
    sample.image = Image8{hw, hw, 3, std::vector<std::uint8_t>(static_cast<std::size_t>(hw) * hw * 3)};
    sample.mask = Image8{hw, hw, 1, std::vector<std::uint8_t>(static_cast<std::size_t>(hw) * hw)};
    std::uniform_int_distribution<int> noise(-kNoise, kNoise);
    for (int y = 0; y < hw; ++y) {
      for (int x = 0; x < hw; ++x) {
        const auto p = static_cast<std::size_t>(y) * hw + x;
        const auto colour = class_colour(label[p]);
        for (int c = 0; c < 3; ++c) {
          sample.image.pixels[p * 3 + c] = static_cast<std::uint8_t>(std::clamp(colour[c] + noise(rng), 0, 255));
        }
        const bool border = y < kBorderBand || x < kBorderBand || y >= hw - kBorderBand || x >= hw - kBorderBand;
        sample.mask.pixels[p] = static_cast<std::uint8_t>(border ? kIgnoreLabel : label[p]);
      }
    }
    out.push_back(std::move(sample));
  }
  return out;
}

void make_synthetic(int n, int hw, int classes, std::uint64_t seed, const fs::path& root) {
  for (const auto& s : generate_synthetic(n, hw, classes, seed)) {
    write_png(root / "images" / (s.name + ".png"), s.image);
    write_png(root / "masks" / (s.name + ".png"), s.mask);
  }
}

Dataset synthetic_dataset(int n, int hw, int classes, std::uint64_t seed) {
  Dataset data;
  data.num_classes = classes;
  for (const auto& s : generate_synthetic(n, hw, classes, seed)) {
    data.samples.push_back({image_to_tensor(s.image), mask_to_tensor(s.mask), s.name});
  }
  return data;
}

// Ablations.

ModelConfig with_overrides(const ModelConfig& base, const std::string& overrides) {
  json patch;
  try {
    patch = json::parse(overrides.empty() ? std::string("{}") : overrides);
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("invalid overrides: ") + e.what());
  }
  if (!patch.is_object()) throw ValidationError("overrides must be a JSON object");
  auto merged = json::parse(config_to_json(base));
  for (const auto& [key, value] : patch.items()) merged[key] = value;
  return config_from_json(merged.dump());
}

std::vector<AblationVariant> load_variants(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open variants file " + path.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
  if (!doc.is_array() || doc.empty()) throw ValidationError("variants file must hold a non-empty JSON array");
  std::vector<AblationVariant> out;
  std::set<std::string> names;
  for (const auto& item : doc) {
    if (!item.is_object() || !item.contains("name") || !item["name"].is_string()) {
      throw ValidationError("every variant needs a string \"name\"");
    }
    AblationVariant v;
    v.name = item["name"].get<std::string>();
    if (!names.insert(v.name).second) throw ValidationError("duplicate variant name '" + v.name + "'");
    v.overrides = item.contains("overrides") ? item["overrides"].dump() : "{}";
    out.push_back(std::move(v));
  }
  return out;
}

DSNet build_seeded_model(const ModelConfig& cfg, std::uint64_t seed, ModelMode mode) {
  torch::manual_seed(seed);
  return build_model(cfg, mode);
}

AblationTable run_ablation(const ModelConfig& base, const std::vector<AblationVariant>& variants,
                           const TrainConfig& train_cfg, const Dataset& train_data, const Dataset& eval_data,
                           const std::vector<std::uint64_t>& seeds) {
  if (variants.empty()) throw ValidationError("no ablation variants");
  if (seeds.empty()) throw ValidationError("no ablation seeds");
  std::vector<ModelConfig> configs;
  for (const auto& v : variants) configs.push_back(with_overrides(base, v.overrides));

  AblationTable table;
  for (std::size_t i = 0; i < variants.size(); ++i) {
    for (auto seed : seeds) {
      auto model = build_seeded_model(configs[i], seed);
      TrainConfig cfg = train_cfg;
      cfg.seed = seed;
      const auto trace = train(model, train_data, cfg);
      const auto eval = evaluate(model, eval_data);
      table.runs.push_back({variants[i].name, seed, eval.miou, eval.pixel_accuracy, trace.loss_trace.back()});
    }
  }
  return table;
}

double AblationTable::mean_miou(const std::string& variant) const {
  double sum = 0.0;
  int count = 0;
  for (const auto& r : runs) {
    if (r.variant == variant) {
      sum += r.miou;
      ++count;
    }
  }
  if (count == 0) throw ValidationError("unknown variant '" + variant + "'");
  return sum / count;
}

std::string AblationTable::format() const {
  std::vector<std::string> order;
  std::map<std::string, std::vector<const AblationRun*>> by_variant;
  for (const auto& r : runs) {
    if (!by_variant.count(r.variant)) order.push_back(r.variant);
    by_variant[r.variant].push_back(&r);
  }
  std::ostringstream out;
  out << std::left << std::setw(20) << "variant" << std::right << std::setw(7) << "seeds" << std::setw(12)
      << "mean mIoU" << std::setw(10) << "std" << std::setw(12) << "pixel acc" << "  per-seed mIoU\n";
  out << std::fixed;
  for (const auto& name : order) {
    const auto& rs = by_variant[name];
    double mean = 0.0;
    double acc = 0.0;
    for (const auto* r : rs) {
      mean += r->miou;
      acc += r->pixel_accuracy;
    }
    mean /= static_cast<double>(rs.size());
    acc /= static_cast<double>(rs.size());
    double var = 0.0;
    for (const auto* r : rs) var += (r->miou - mean) * (r->miou - mean);
    const double sd = rs.size() > 1 ? std::sqrt(var / static_cast<double>(rs.size() - 1)) : 0.0;
    out << std::left << std::setw(20) << name << std::right << std::setw(7) << rs.size() << std::setprecision(4)
        << std::setw(12) << mean << std::setw(10) << sd << std::setw(12) << acc << " ";
    for (const auto* r : rs) out << " " << r->miou;
    out << "\n";
  }
  return out.str();
}

}  // namespace dsnet
