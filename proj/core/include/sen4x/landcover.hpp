#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "sen4x/checkpoint.hpp"
#include "sen4x/manifest.hpp"
#include "sen4x/model.hpp"
#include "sen4x/metrics.hpp"
#include "sen4x/nn.hpp"

namespace sen4x::landcover {

struct SegConfig {
  int n_classes = 7;
  int in_channels = 4;
  int stem_width = 16;                      // full and half resolution
  std::array<int, 4> widths{32, 64, 128, 256};  // encoder at 1/4, 1/8, 1/16, 1/32
  int fpn_dim = 64;
  int batch_size = 16;
  int max_epochs = 1000;
  int patience = 25;
  double lr0 = 1e-4;
  double lr_min = 1e-8;
  std::uint64_t seed = 0;

  void validate() const;
  std::string to_json() const;
  static SegConfig from_json(const std::string& text);
};

/// Encoder features at the four pyramid scales, finest first.
template <typename T>
struct EncoderFeatures {
  Var<T> half;  // stem output at 1/2
  Var<T> full;  // stem output at full resolution
  std::array<Var<T>, 4> pyramid;
};

/// Strided-conv residual encoder → feature-pyramid top-down merge → U-net
/// decoder with skips at 1/2 and full resolution → per-pixel class logits.
template <typename T>
class SegNet {
 public:
  SegNet(const SegConfig& cfg, std::uint64_t seed);

  const SegConfig& config() const { return cfg_; }
  nn::ParamStore<T>& params() { return params_; }
  const nn::ParamStore<T>& params() const { return params_; }

  EncoderFeatures<T> encode(const Var<T>& image) const;
  /// 4×H×W → K×H×W logits; H and W must be multiples of 32.
  Var<T> forward(const Tensor<T>& image) const;

  /// Copies matching tensors from `weights`; a 3-input-channel conv kernel
  /// whose counterpart here takes 4 channels is widened with
  /// expand_input_channels. Returns the number of tensors copied.
  int import_weights(const std::map<std::string, Tensor<float>>& weights);

 private:
  struct Res {
    nn::Conv2d<T> conv1, conv2;
  };
  Var<T> res(const Res& r, const Var<T>& x) const;

  SegConfig cfg_;
  nn::ParamStore<T> params_;
  nn::Conv2d<T> stem_full_, stem_half_;
  std::array<nn::Conv2d<T>, 4> down_;
  std::array<Res, 4> enc_res_;
  std::array<nn::Conv2d<T>, 4> lateral_;
  nn::Conv2d<T> fpn_smooth_;
  nn::Conv2d<T> dec_half_, dec_full_;
  nn::Conv2d<T> classifier_;
};

template <typename T>
Var<T> masked_ce(const Var<T>& logits, std::span<const std::uint8_t> labels);

/// Counter for validation-loss based early stopping.
struct EarlyStopState {
  int patience = 25;
  double best_val = std::numeric_limits<double>::infinity();
  int best_epoch = -1;
  int epochs_since_best = 0;

  /// Records one epoch; returns true when `val` is a new best.
  bool update(int epoch, double val);
  bool should_stop() const { return epochs_since_best >= patience; }
};

struct LcSample {
  Tensor<float> image;               // C×H×W
  std::vector<std::uint8_t> labels;  // H×W, 255 = ignore
};

std::vector<std::uint8_t> predict_labels(const SegNet<float>& net, const Tensor<float>& image);
metrics::ConfusionMatrix evaluate_confusion(const SegNet<float>& net, const std::vector<LcSample>& data);
double evaluate_loss(const SegNet<float>& net, const std::vector<LcSample>& data);

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0;
  double val_loss = 0;
  double lr = 0;
};

struct LcResult {
  Checkpoint best;
  metrics::SegScores val_scores;  // of the best checkpoint
  std::vector<EpochRecord> history;
  EarlyStopState stop;
  bool stopped_early = false;
};

/// Adam with cosine annealing from lr0 to lr_min over max_epochs; stops
/// early once the validation loss has not improved for `patience` epochs.
LcResult train_lc(const std::vector<LcSample>& train_set, const std::vector<LcSample>& val_set, const SegConfig& cfg,
                  const std::function<void(const EpochRecord&)>& progress = {});

/// Which image the segmentation network sees for a patch.
enum class ImageSource { kHr, kSr, kBicubic };
const char* to_string(ImageSource s);
ImageSource parse_image_source(const std::string& s);

/// Segmentation samples of one split: the "labels" raster plus the HR
/// target, the clamped SR prediction of `sr` (required for kSr), or the
/// clamped bicubic upsampling of the best view.
std::vector<LcSample> load_lc_split(const DatasetManifest& m, Split split, const std::filesystem::path& root,
                                    ImageSource source, const SrNet<float>* sr = nullptr);

/// Rebuilds a network from an lc checkpoint.
SegNet<float> load_segnet(const Checkpoint& ck);

}  // namespace sen4x::landcover
