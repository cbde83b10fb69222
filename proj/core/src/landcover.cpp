#include "sen4x/landcover.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include <json.hpp>

#include "sen4x/error.hpp"
#include "sen4x/model.hpp"
#include "sen4x/optim.hpp"
#include "sen4x/raster.hpp"
#include "sen4x/resample.hpp"
#include "sen4x/train.hpp"

namespace sen4x::landcover {

using json = nlohmann::json;

void SegConfig::validate() const {
  auto check = [](bool ok, const char* what) {
    if (!ok) fail(ErrorCode::kConfig, std::string("seg config: ") + what);
  };
  check(n_classes >= 2 && n_classes < 255, "n_classes must lie in [2, 254]");
  check(in_channels > 0 && stem_width > 0 && fpn_dim > 0, "widths must be positive");
  for (int w : widths) check(w > 0, "encoder widths must be positive");
  check(batch_size > 0 && max_epochs > 0 && patience > 0, "batch_size, max_epochs and patience must be positive");
  check(lr0 > lr_min && lr_min >= 0, "need lr0 > lr_min >= 0");
}

std::string SegConfig::to_json() const {
  return json{{"n_classes", n_classes}, {"in_channels", in_channels}, {"stem_width", stem_width},
              {"widths", widths},       {"fpn_dim", fpn_dim},         {"batch_size", batch_size},
              {"max_epochs", max_epochs}, {"patience", patience},     {"lr0", lr0},
              {"lr_min", lr_min},       {"seed", seed}}
      .dump();
}

SegConfig SegConfig::from_json(const std::string& text) {
  SegConfig c;
  try {
    const json j = json::parse(text);
    c.n_classes = j.at("n_classes");
    c.in_channels = j.at("in_channels");
    c.stem_width = j.at("stem_width");
    c.widths = j.at("widths").get<std::array<int, 4>>();
    c.fpn_dim = j.at("fpn_dim");
    c.batch_size = j.at("batch_size");
    c.max_epochs = j.at("max_epochs");
    c.patience = j.at("patience");
    c.lr0 = j.at("lr0");
    c.lr_min = j.at("lr_min");
    c.seed = j.at("seed");
  } catch (const json::exception& e) {
    fail(ErrorCode::kData, std::string("malformed seg config: ") + e.what());
  }
  c.validate();
  return c;
}

template <typename T>
SegNet<T>::SegNet(const SegConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  nn::Initializer init(seed);
  const int s = cfg_.stem_width;
  stem_full_ = nn::make_conv(params_, init, "stem.full", cfg_.in_channels, s, 3);
  stem_half_ = nn::make_conv(params_, init, "stem.half", s, s, 3, 2);
  int prev = s;
  for (int i = 0; i < 4; ++i) {
    const std::string p = "enc" + std::to_string(i);
    down_[i] = nn::make_conv(params_, init, p + ".down", prev, cfg_.widths[i], 3, 2);
    enc_res_[i].conv1 = nn::make_conv(params_, init, p + ".res.conv1", cfg_.widths[i], cfg_.widths[i], 3);
    enc_res_[i].conv2 = nn::make_conv(params_, init, p + ".res.conv2", cfg_.widths[i], cfg_.widths[i], 3, 1, nn::Init::kZero);
    lateral_[i] = nn::make_conv(params_, init, "fpn.lateral" + std::to_string(i), cfg_.widths[i], cfg_.fpn_dim, 1);
    prev = cfg_.widths[i];
  }
  fpn_smooth_ = nn::make_conv(params_, init, "fpn.smooth", cfg_.fpn_dim, cfg_.fpn_dim, 3);
  dec_half_ = nn::make_conv(params_, init, "dec.half", cfg_.fpn_dim + s, s, 3);
  dec_full_ = nn::make_conv(params_, init, "dec.full", 2 * s, s, 3);
  classifier_ = nn::make_conv(params_, init, "dec.classifier", s, cfg_.n_classes, 1);
}

template <typename T>
Var<T> SegNet<T>::res(const Res& r, const Var<T>& x) const {
  return ops::add(x, r.conv2(ops::gelu(r.conv1(x))));
}

template <typename T>
EncoderFeatures<T> SegNet<T>::encode(const Var<T>& image) const {
  EncoderFeatures<T> f;
  f.full = ops::gelu(stem_full_(image));
  f.half = ops::gelu(stem_half_(f.full));
  Var<T> x = f.half;
  for (int i = 0; i < 4; ++i) {
    x = res(enc_res_[i], ops::gelu(down_[i](x)));
    f.pyramid[i] = x;
  }
  return f;
}

template <typename T>
Var<T> SegNet<T>::forward(const Tensor<T>& image) const {
  if (image.ndim() != 3 || image.dim(0) != cfg_.in_channels)
    fail(ErrorCode::kShapeMismatch, "seg_forward: expected " + std::to_string(cfg_.in_channels) + "×H×W, got " +
                                        shape_str(image.shape));
  if (image.dim(1) % 32 || image.dim(2) % 32)
    fail(ErrorCode::kShapeMismatch, "seg_forward: spatial dims " + shape_str(image.shape) + " not divisible by 32");
  const EncoderFeatures<T> f = encode(Var<T>(image));
  // top-down pyramid: coarsest level first, upsample and add the next lateral
  Var<T> merged = lateral_[3](f.pyramid[3]);
  for (int i = 2; i >= 0; --i) merged = ops::add(lateral_[i](f.pyramid[i]), ops::upsample_nearest(merged, 2));
  merged = ops::gelu(fpn_smooth_(merged));
  Var<T> x = ops::upsample_nearest(merged, 2);
  x = ops::gelu(dec_half_(ops::concat_channels<T>({x, f.half})));
  x = ops::upsample_nearest(x, 2);
  x = ops::gelu(dec_full_(ops::concat_channels<T>({x, f.full})));
  return classifier_(x);
}

template <typename T>
int SegNet<T>::import_weights(const std::map<std::string, Tensor<float>>& weights) {
  int copied = 0;
  for (const auto& [name, v] : params_.all()) {
    auto it = weights.find(name);
    if (it == weights.end()) continue;
    Tensor<float> w = it->second;
    if (w.shape != v.shape() && w.ndim() == 4 && v.shape().size() == 4 && w.dim(1) == 3 && v.shape()[1] == 4)
      w = expand_input_channels(w);
    if (w.shape != v.shape())
      fail(ErrorCode::kShapeMismatch, "import_weights: '" + name + "' is " + shape_str(w.shape) + ", expected " +
                                          shape_str(v.shape()));
    Var<T> p = v;
    p.mutable_value() = w.template cast<T>();
    ++copied;
  }
  return copied;
}

template class SegNet<float>;
template class SegNet<double>;

template <typename T>
Var<T> masked_ce(const Var<T>& logits, std::span<const std::uint8_t> labels) {
  return ops::masked_cross_entropy(logits, labels, metrics::kIgnore);
}

template Var<float> masked_ce(const Var<float>&, std::span<const std::uint8_t>);
template Var<double> masked_ce(const Var<double>&, std::span<const std::uint8_t>);

bool EarlyStopState::update(int epoch, double val) {
  if (val < best_val) {
    best_val = val;
    best_epoch = epoch;
    epochs_since_best = 0;
    return true;
  }
  ++epochs_since_best;
  return false;
}

std::vector<std::uint8_t> predict_labels(const SegNet<float>& net, const Tensor<float>& image) {
  NoGradGuard guard;
  const Tensor<float> logits = net.forward(image).value();
  const int k = logits.dim(0);
  const std::size_t plane = static_cast<std::size_t>(logits.dim(1)) * logits.dim(2);
  std::vector<std::uint8_t> out(plane);
  for (std::size_t i = 0; i < plane; ++i) {
    int best = 0;
    for (int c = 1; c < k; ++c)
      if (logits[c * plane + i] > logits[best * plane + i]) best = c;
    out[i] = static_cast<std::uint8_t>(best);
  }
  return out;
}

metrics::ConfusionMatrix evaluate_confusion(const SegNet<float>& net, const std::vector<LcSample>& data) {
  metrics::ConfusionMatrix cm(net.config().n_classes);
  for (const auto& s : data) cm += metrics::confusion(predict_labels(net, s.image), s.labels, net.config().n_classes);
  return cm;
}

double evaluate_loss(const SegNet<float>& net, const std::vector<LcSample>& data) {
  if (data.empty()) fail(ErrorCode::kData, "evaluate_loss: empty dataset");
  NoGradGuard guard;
  double sum = 0;
  for (const auto& s : data) sum += masked_ce(net.forward(s.image), s.labels).value()[0];
  return sum / static_cast<double>(data.size());
}

const char* to_string(ImageSource s) {
  switch (s) {
    case ImageSource::kHr: return "hr";
    case ImageSource::kSr: return "sr";
    case ImageSource::kBicubic: return "bicubic";
  }
  return "?";
}

ImageSource parse_image_source(const std::string& s) {
  if (s == "hr") return ImageSource::kHr;
  if (s == "sr") return ImageSource::kSr;
  if (s == "bicubic") return ImageSource::kBicubic;
  fail(ErrorCode::kConfig, "unknown image source '" + s + "' (expected hr, sr or bicubic)");
}

std::vector<LcSample> load_lc_split(const DatasetManifest& m, Split split, const std::filesystem::path& root,
                                    ImageSource source, const SrNet<float>* sr) {
  if (source == ImageSource::kSr && !sr) fail(ErrorCode::kConfig, "load_lc_split: the sr source needs a network");
  std::vector<LcSample> out;
  const auto sr_samples = train::load_sr_split(m, split, root);
  const auto records = m.split(split);
  for (std::size_t i = 0; i < records.size(); ++i) {
    const TileRecord& t = *records[i];
    const train::SrSample& s = sr_samples[i];
    auto lab = t.files.find("labels");
    if (lab == t.files.end()) fail(ErrorCode::kData, "tile '" + t.tile_id + "' lacks a labels file");
    Shape dims;
    LcSample sample;
    sample.labels = read_u8(root / lab->second, &dims);
    const int h = s.target.dim(1), w = s.target.dim(2);
    if (dims != Shape{h, w})
      fail(ErrorCode::kShapeMismatch, "tile '" + t.tile_id + "': labels " + shape_str(dims) + " vs target " +
                                          shape_str(s.target.shape));
    switch (source) {
      case ImageSource::kHr: sample.image = s.target; break;
      case ImageSource::kSr: sample.image = train::predict(*sr, s.views); break;
      case ImageSource::kBicubic:
        sample.image = resize_bicubic(s.views.slice0(0), h, w);
        for (float& v : sample.image.data) v = std::clamp(v, 0.0f, 1.0f);
        break;
    }
    out.push_back(std::move(sample));
  }
  return out;
}

SegNet<float> load_segnet(const Checkpoint& ck) {
  if (ck.kind != "lc") fail(ErrorCode::kData, "expected an lc checkpoint, got '" + ck.kind + "'");
  SegNet<float> net(SegConfig::from_json(ck.config_json), ck.seed);
  import_params(net.params(), ck.params);
  return net;
}

LcResult train_lc(const std::vector<LcSample>& train_set, const std::vector<LcSample>& val_set, const SegConfig& cfg,
                  const std::function<void(const EpochRecord&)>& progress) {
  if (train_set.empty() || val_set.empty()) fail(ErrorCode::kData, "train_lc: empty train or validation data");
  cfg.validate();
  SegNet<float> net(cfg, cfg.seed);
  Adam<float> opt(net.params());

  const int batches = static_cast<int>((train_set.size() + cfg.batch_size - 1) / cfg.batch_size);
  train::TrainConfig sched;
  sched.lr0 = cfg.lr0;
  sched.lr_min = cfg.lr_min;
  sched.epochs = cfg.max_epochs;
  sched.batches_per_epoch = std::max(2, batches);
  sched.warmup_frac = 0.0;  // cosine annealing from the first step
  const long long total = static_cast<long long>(cfg.max_epochs) * batches;

  LcResult result;
  result.stop.patience = cfg.patience;
  std::vector<std::size_t> order(train_set.size());
  long long step = 0;
  for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::seed_seq sq{static_cast<std::uint32_t>(cfg.seed), static_cast<std::uint32_t>(cfg.seed >> 32),
                     static_cast<std::uint32_t>(epoch)};
    std::mt19937_64 rng(sq);
    std::shuffle(order.begin(), order.end(), rng);
    double train_loss = 0;
    double lr = 0;
    for (int b = 0; b < batches; ++b, ++step) {
      const std::size_t lo = static_cast<std::size_t>(b) * cfg.batch_size;
      const std::size_t hi = std::min(train_set.size(), lo + cfg.batch_size);
      net.params().zero_grad();
      const float inv = 1.0f / static_cast<float>(hi - lo);
      for (std::size_t i = lo; i < hi; ++i) {
        const LcSample& s = train_set[order[i]];
        const Var<float> loss = masked_ce(net.forward(s.image), s.labels);
        const double v = loss.value()[0];
        if (!std::isfinite(v)) fail(ErrorCode::kNumeric, "non-finite segmentation loss at step " + std::to_string(step));
        train_loss += v;
        backward(loss, Tensor<float>({1}, inv));
      }
      lr = train::lr_at(std::min(step, total), std::max(total, 2LL), sched);
      opt.step(lr);
    }
    EpochRecord rec{epoch, train_loss / static_cast<double>(train_set.size()), evaluate_loss(net, val_set), lr};
    result.history.push_back(rec);
    if (progress) progress(rec);
    if (result.stop.update(epoch, rec.val_loss)) {
      result.best.kind = "lc";
      result.best.config_json = cfg.to_json();
      result.best.step = step;
      result.best.seed = cfg.seed;
      result.best.params = export_params(net.params());
      result.best.extra_json = json{{"epoch", epoch}, {"val_loss", rec.val_loss}}.dump();
    }
    if (result.stop.should_stop()) {
      result.stopped_early = epoch + 1 < cfg.max_epochs;
      break;
    }
  }
  const SegNet<float> best = load_segnet(result.best);
  result.val_scores = metrics::seg_scores(evaluate_confusion(best, val_set));
  return result;
}

}  // namespace sen4x::landcover
