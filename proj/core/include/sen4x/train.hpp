#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "sen4x/checkpoint.hpp"
#include "sen4x/manifest.hpp"
#include "sen4x/model.hpp"
#include "sen4x/optim.hpp"

namespace sen4x::train {

enum class LossKind { kL1, kL2 };
const char* to_string(LossKind k);
LossKind parse_loss(const std::string& s);

struct TrainConfig {
  double lr0 = 1e-4;
  double lr_min = 0.0;
  int epochs = 100;
  int batches_per_epoch = 4;
  int batch_size = 8;
  double warmup_frac = 0.05;
  LossKind loss = LossKind::kL1;
  std::uint64_t seed = 0;
  int val_every = 1;       // validate every n epochs (and always after the last)
  double clip_norm = 0.0;  // 0 disables gradient clipping

  long long total_steps() const { return static_cast<long long>(epochs) * batches_per_epoch; }
  void validate() const;
  std::string to_json() const;
  static TrainConfig from_json(const std::string& text);
};

/// W = ceil(warmup_frac·T), at least 1.
long long warmup_steps(long long total, const TrainConfig& cfg);
/// Linear warm-up to lr0 over W steps, then cosine annealing to lr_min at t = T.
double lr_at(long long t, long long total, const TrainConfig& cfg);

template <typename T>
Var<T> sr_loss(const Var<T>& pred, const Tensor<T>& target, LossKind kind);

/// One training example: N×C×h×w views (best first) and the C×(s·h)×(s·w) target.
struct SrSample {
  std::string id;
  Tensor<float> views;
  Tensor<float> target;
};

/// Loads the "views"/"target" rasters of every tile in `split`.
std::vector<SrSample> load_sr_split(const DatasetManifest& m, Split split, const std::filesystem::path& root);

struct StepLog {
  long long step = 0;
  double lr = 0;
  double loss = 0;
};

struct EpochLog {
  int epoch = 0;
  double val_psnr = 0;
  double val_loss = 0;
};

struct TrainLog {
  std::vector<StepLog> steps;
  std::vector<EpochLog> epochs;
  std::string best_checkpoint;
  std::string last_checkpoint;

  /// Line-delimited JSON: one record per step and per validated epoch.
  std::string to_jsonl() const;
};

/// Sample indices used by optimizer step `step`. Depends only on the seed,
/// the step and the dataset size, so an interrupted run can resume anywhere.
std::vector<std::size_t> batch_indices(std::uint64_t seed, long long step, int batches_per_epoch, int batch_size,
                                       std::size_t n_samples);

/// Clamped model output for one sample.
Tensor<float> predict(const SrNet<float>& net, const Tensor<float>& views);

struct ValScore {
  double psnr = 0;  // mean over samples
  double loss = 0;
};
ValScore evaluate(const SrNet<float>& net, const std::vector<SrSample>& data, LossKind loss);

class SrTrainer {
 public:
  SrTrainer(const ModelConfig& model_cfg, const TrainConfig& train_cfg);

  SrNet<float>& net() { return net_; }
  const SrNet<float>& net() const { return net_; }
  const TrainConfig& config() const { return cfg_; }
  long long step() const { return step_; }

  /// One optimizer update on the given samples; returns the batch-mean loss.
  /// Throws kNumeric on a non-finite loss.
  double train_step(const std::vector<const SrSample*>& batch);

  /// Advances to `end_step` (exclusive) drawing batches from `data`.
  void run(long long end_step, const std::vector<SrSample>& data, TrainLog* log = nullptr);

  Checkpoint checkpoint(bool with_optimizer = true, const std::string& extra_json = "{}") const;
  /// Restores weights, optimizer state and step counter.
  void restore(const Checkpoint& ck);

 private:
  TrainConfig cfg_;
  SrNet<float> net_;
  Adam<float> opt_;
  long long step_ = 0;
};

struct TrainResult {
  Checkpoint best;
  Checkpoint last;
  TrainLog log;
};

using ProgressFn = std::function<void(const EpochLog&)>;

/// Full schedule with per-epoch validation. The best checkpoint has the
/// highest validation PSNR. With a non-empty `out_dir`, writes best.s4xc,
/// last.s4xc and train_log.jsonl there.
TrainResult train_sr(const std::vector<SrSample>& train_set, const std::vector<SrSample>& val_set,
                     const ModelConfig& model_cfg, const TrainConfig& train_cfg,
                     const std::filesystem::path& out_dir = {}, const ProgressFn& progress = {});

struct GradCheckReport {
  std::vector<std::string> names;
  std::vector<std::size_t> indices;
  std::vector<double> analytic;
  std::vector<double> numeric;
  std::vector<double> rel_errors;

  double max_rel_error() const;
  double fraction_below(double tol) const;
};

/// |a − n| / max(|a|, |n|, floor); the floor keeps vanishing gradients from
/// turning round-off into large relative errors.
double relative_error(double analytic, double numeric, double floor = 1e-6);

/// Central-difference check of `loss` w.r.t. `n_samples` coordinates of
/// `params`. Each sample picks a parameter tensor uniformly, then an entry.
GradCheckReport grad_check(nn::ParamStore<double>& params, const std::function<Var<double>()>& loss, int n_samples,
                           double eps, std::uint64_t seed);

/// Model-level check: builds the network in double precision, perturbs every
/// weight (so zero-initialized layers pass gradient), and differentiates an
/// MSE loss against a random target for random views of side `lr_side`.
GradCheckReport grad_check(const ModelConfig& cfg, int n_samples, double eps, std::uint64_t seed, int lr_side = 16);

}  // namespace sen4x::train
