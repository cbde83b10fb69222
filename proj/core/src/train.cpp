#include "sen4x/train.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>

#include <json.hpp>

#include "sen4x/datapipe.hpp"
#include "sen4x/error.hpp"
#include "sen4x/metrics.hpp"
#include "sen4x/raster.hpp"

namespace sen4x::train {

using json = nlohmann::json;

const char* to_string(LossKind k) { return k == LossKind::kL1 ? "l1" : "l2"; }

LossKind parse_loss(const std::string& s) {
  if (s == "l1" || s == "L1") return LossKind::kL1;
  if (s == "l2" || s == "L2") return LossKind::kL2;
  fail(ErrorCode::kConfig, "unknown loss '" + s + "' (expected l1 or l2)");
}

void TrainConfig::validate() const {
  if (!(lr0 > lr_min && lr_min >= 0)) fail(ErrorCode::kConfig, "train config: need lr0 > lr_min >= 0");
  if (epochs <= 0 || batches_per_epoch <= 0 || batch_size <= 0)
    fail(ErrorCode::kConfig, "train config: epochs, batches_per_epoch and batch_size must be positive");
  if (total_steps() < 2) fail(ErrorCode::kConfig, "train config: epochs·batches_per_epoch must be at least 2");
  if (!(warmup_frac >= 0 && warmup_frac < 1)) fail(ErrorCode::kConfig, "train config: warmup_frac must lie in [0,1)");
  if (val_every <= 0) fail(ErrorCode::kConfig, "train config: val_every must be positive");
  if (clip_norm < 0) fail(ErrorCode::kConfig, "train config: clip_norm must be >= 0");
}

std::string TrainConfig::to_json() const {
  return json{{"lr0", lr0},
              {"lr_min", lr_min},
              {"epochs", epochs},
              {"batches_per_epoch", batches_per_epoch},
              {"batch_size", batch_size},
              {"warmup_frac", warmup_frac},
              {"loss", to_string(loss)},
              {"seed", seed},
              {"val_every", val_every},
              {"clip_norm", clip_norm}}
      .dump();
}

TrainConfig TrainConfig::from_json(const std::string& text) {
  TrainConfig c;
  try {
    const json j = json::parse(text);
    c.lr0 = j.at("lr0");
    c.lr_min = j.at("lr_min");
    c.epochs = j.at("epochs");
    c.batches_per_epoch = j.at("batches_per_epoch");
    c.batch_size = j.at("batch_size");
    c.warmup_frac = j.at("warmup_frac");
    c.loss = parse_loss(j.at("loss").get<std::string>());
    c.seed = j.at("seed");
    c.val_every = j.value("val_every", 1);
    c.clip_norm = j.value("clip_norm", 0.0);
  } catch (const json::exception& e) {
    fail(ErrorCode::kData, std::string("malformed train config: ") + e.what());
  }
  c.validate();
  return c;
}

long long warmup_steps(long long total, const TrainConfig& cfg) {
  const auto w = static_cast<long long>(std::ceil(cfg.warmup_frac * static_cast<double>(total)));
  return std::max<long long>(1, w);
}

double lr_at(long long t, long long total, const TrainConfig& cfg) {
  if (total <= 0) fail(ErrorCode::kConfig, "lr_at: total steps must be positive");
  if (t < 0 || t > total)
    fail(ErrorCode::kConfig, "lr_at: step " + std::to_string(t) + " outside [0, " + std::to_string(total) + "]");
  const long long w = warmup_steps(total, cfg);
  if (t < w) return cfg.lr0 * static_cast<double>(t + 1) / static_cast<double>(w);
  if (total == w) return cfg.lr0;
  const double phase = static_cast<double>(t - w) / static_cast<double>(total - w);
  return cfg.lr_min + 0.5 * (cfg.lr0 - cfg.lr_min) * (1.0 + std::cos(M_PI * phase));
}

template <typename T>
Var<T> sr_loss(const Var<T>& pred, const Tensor<T>& target, LossKind kind) {
  if (pred.shape() != target.shape)
    fail(ErrorCode::kShapeMismatch, "sr_loss: prediction " + shape_str(pred.shape()) + " vs target " +
                                        shape_str(target.shape));
  return kind == LossKind::kL1 ? ops::l1_loss(pred, target) : ops::mse_loss(pred, target);
}

template Var<float> sr_loss(const Var<float>&, const Tensor<float>&, LossKind);
template Var<double> sr_loss(const Var<double>&, const Tensor<double>&, LossKind);

std::vector<SrSample> load_sr_split(const DatasetManifest& m, Split split, const std::filesystem::path& root) {
  std::vector<SrSample> out;
  for (const TileRecord* t : m.split(split)) {
    auto views = t->files.find("views");
    auto target = t->files.find("target");
    if (views == t->files.end() || target == t->files.end())
      fail(ErrorCode::kData, "tile '" + t->tile_id + "' lacks a views or target file");
    SrSample s{t->tile_id, read_f32(root / views->second), read_f32(root / target->second)};
    // unprepared stacks still carry their masks: fill the gaps before training
    if (auto masks = t->files.find("masks"); masks != t->files.end()) {
      datapipe::RevisitStack stack{s.views, read_u8(root / masks->second), t->tile_id};
      if (stack.masks.size() != static_cast<std::size_t>(s.views.dim(0)) * s.views.dim(2) * s.views.dim(3))
        fail(ErrorCode::kShapeMismatch, "tile '" + t->tile_id + "': mask raster does not match views");
      s.views = datapipe::impute_masked(stack).views;
    }
    if (s.views.ndim() != 4 || s.target.ndim() != 3)
      fail(ErrorCode::kShapeMismatch, "tile '" + t->tile_id + "': views " + shape_str(s.views.shape) +
                                          ", target " + shape_str(s.target.shape));
    out.push_back(std::move(s));
  }
  return out;
}

std::string TrainLog::to_jsonl() const {
  std::string out;
  for (const auto& s : steps) out += json{{"step", s.step}, {"lr", s.lr}, {"loss", s.loss}}.dump() + "\n";
  for (const auto& e : epochs)
    out += json{{"epoch", e.epoch}, {"val_psnr", e.val_psnr}, {"val_loss", e.val_loss}}.dump() + "\n";
  if (!best_checkpoint.empty() || !last_checkpoint.empty())
    out += json{{"best_checkpoint", best_checkpoint}, {"last_checkpoint", last_checkpoint}}.dump() + "\n";
  return out;
}

std::vector<std::size_t> batch_indices(std::uint64_t seed, long long step, int batches_per_epoch, int batch_size,
                                       std::size_t n_samples) {
  if (n_samples == 0) fail(ErrorCode::kData, "batch_indices: empty dataset");
  const long long epoch = step / batches_per_epoch;
  const std::size_t first = static_cast<std::size_t>(step % batches_per_epoch) * batch_size;
  // the epoch's sample stream is a concatenation of independent permutations
  std::vector<std::size_t> out;
  std::vector<std::size_t> perm;
  long long round = -1;
  for (std::size_t pos = first; pos < first + batch_size; ++pos) {
    const long long r = static_cast<long long>(pos / n_samples);
    if (r != round) {
      round = r;
      std::seed_seq sq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                       static_cast<std::uint32_t>(epoch), static_cast<std::uint32_t>(round)};
      std::mt19937_64 rng(sq);
      perm.resize(n_samples);
      std::iota(perm.begin(), perm.end(), std::size_t{0});
      std::shuffle(perm.begin(), perm.end(), rng);
    }
    out.push_back(perm[pos % n_samples]);
  }
  return out;
}

Tensor<float> predict(const SrNet<float>& net, const Tensor<float>& views) {
  NoGradGuard guard;
  Tensor<float> out = net.forward(views).value();
  for (float& v : out.data) v = std::clamp(v, 0.0f, 1.0f);
  return out;
}

ValScore evaluate(const SrNet<float>& net, const std::vector<SrSample>& data, LossKind loss) {
  if (data.empty()) fail(ErrorCode::kData, "evaluate: empty dataset");
  NoGradGuard guard;
  ValScore s;
  for (const auto& sample : data) {
    const Var<float> raw = net.forward(sample.views);
    s.loss += sr_loss(raw, sample.target, loss).value()[0];
    Tensor<float> pred = raw.value();
    for (float& v : pred.data) v = std::clamp(v, 0.0f, 1.0f);
    s.psnr += metrics::psnr(pred, sample.target);
  }
  s.psnr /= static_cast<double>(data.size());
  s.loss /= static_cast<double>(data.size());
  return s;
}

SrTrainer::SrTrainer(const ModelConfig& model_cfg, const TrainConfig& train_cfg)
    : cfg_(train_cfg), net_(model_cfg, train_cfg.seed), opt_(net_.params()) {
  cfg_.validate();
}

double SrTrainer::train_step(const std::vector<const SrSample*>& batch) {
  if (batch.empty()) fail(ErrorCode::kData, "train_step: empty batch");
  const long long total = cfg_.total_steps();
  const double lr = lr_at(std::min(step_, total), total, cfg_);
  net_.params().zero_grad();
  const float inv = 1.0f / static_cast<float>(batch.size());
  double loss_sum = 0;
  for (const SrSample* s : batch) {
    const Var<float> loss = sr_loss(net_.forward(s->views), s->target, cfg_.loss);
    const double v = loss.value()[0];
    if (!std::isfinite(v))
      fail(ErrorCode::kNumeric, "non-finite training loss at step " + std::to_string(step_) + " (sample '" + s->id + "')");
    loss_sum += v;
    backward(loss, Tensor<float>({1}, inv));
  }
  if (cfg_.clip_norm > 0) opt_.clip_grad_norm(cfg_.clip_norm);
  opt_.step(lr);
  ++step_;
  return loss_sum / static_cast<double>(batch.size());
}

void SrTrainer::run(long long end_step, const std::vector<SrSample>& data, TrainLog* log) {
  while (step_ < end_step) {
    const auto idx = batch_indices(cfg_.seed, step_, cfg_.batches_per_epoch, cfg_.batch_size, data.size());
    std::vector<const SrSample*> batch;
    for (std::size_t i : idx) batch.push_back(&data[i]);
    const long long s = step_;
    const double lr = lr_at(std::min(s, cfg_.total_steps()), cfg_.total_steps(), cfg_);
    const double loss = train_step(batch);
    if (log) log->steps.push_back({s, lr, loss});
  }
}

Checkpoint SrTrainer::checkpoint(bool with_optimizer, const std::string& extra_json) const {
  Checkpoint ck;
  ck.kind = "sr";
  ck.config_json = net_.config().to_json();
  ck.step = step_;
  ck.seed = cfg_.seed;
  ck.params = export_params(net_.params());
  if (with_optimizer) ck.optimizer = opt_.state();
  json extra = json::parse(extra_json.empty() ? "{}" : extra_json);
  extra["train"] = json::parse(cfg_.to_json());
  ck.extra_json = extra.dump();
  return ck;
}

void SrTrainer::restore(const Checkpoint& ck) {
  if (ck.kind != "sr") fail(ErrorCode::kData, "expected an sr checkpoint, got '" + ck.kind + "'");
  import_params(net_.params(), ck.params);
  if (ck.optimizer) opt_.load_state(*ck.optimizer);
  step_ = ck.step;
}

TrainResult train_sr(const std::vector<SrSample>& train_set, const std::vector<SrSample>& val_set,
                     const ModelConfig& model_cfg, const TrainConfig& train_cfg, const std::filesystem::path& out_dir,
                     const ProgressFn& progress) {
  if (train_set.empty()) fail(ErrorCode::kData, "train_sr: training split is empty");
  if (val_set.empty()) fail(ErrorCode::kData, "train_sr: validation split is empty");
  SrTrainer trainer(model_cfg, train_cfg);
  TrainResult result;
  double best_psnr = -metrics::kInf;
  for (int epoch = 0; epoch < train_cfg.epochs; ++epoch) {
    trainer.run(static_cast<long long>(epoch + 1) * train_cfg.batches_per_epoch, train_set, &result.log);
    const bool last = epoch + 1 == train_cfg.epochs;
    if ((epoch + 1) % train_cfg.val_every != 0 && !last) continue;
    const ValScore v = evaluate(trainer.net(), val_set, train_cfg.loss);
    const EpochLog e{epoch, v.psnr, v.loss};
    result.log.epochs.push_back(e);
    if (progress) progress(e);
    if (v.psnr > best_psnr || result.best.params.empty()) {
      best_psnr = v.psnr;
      result.best = trainer.checkpoint(false, json{{"epoch", epoch}, {"val_psnr", v.psnr}}.dump());
    }
  }
  result.last = trainer.checkpoint(true);
  if (!out_dir.empty()) {
    std::filesystem::create_directories(out_dir);
    save_checkpoint(result.best, out_dir / "best.s4xc");
    save_checkpoint(result.last, out_dir / "last.s4xc");
    result.log.best_checkpoint = (out_dir / "best.s4xc").string();
    result.log.last_checkpoint = (out_dir / "last.s4xc").string();
    std::ofstream(out_dir / "train_log.jsonl", std::ios::binary) << result.log.to_jsonl();
  }
  return result;
}

double GradCheckReport::max_rel_error() const {
  return rel_errors.empty() ? 0.0 : *std::max_element(rel_errors.begin(), rel_errors.end());
}

double GradCheckReport::fraction_below(double tol) const {
  if (rel_errors.empty()) return 1.0;
  const auto n = std::count_if(rel_errors.begin(), rel_errors.end(), [tol](double e) { return e < tol; });
  return static_cast<double>(n) / static_cast<double>(rel_errors.size());
}

double relative_error(double analytic, double numeric, double floor) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

GradCheckReport grad_check(nn::ParamStore<double>& params, const std::function<Var<double>()>& loss, int n_samples,
                           double eps, std::uint64_t seed) {
  if (!(eps > 0)) fail(ErrorCode::kConfig, "grad_check: eps must be positive");
  if (n_samples <= 0) fail(ErrorCode::kConfig, "grad_check: n_samples must be positive");
  std::vector<std::string> names;
  for (const auto& [name, v] : params.all()) names.push_back(name);
  if (names.empty()) fail(ErrorCode::kConfig, "grad_check: no parameters");

  params.zero_grad();
  backward(loss());

  std::mt19937_64 rng(seed);
  GradCheckReport r;
  for (int s = 0; s < n_samples; ++s) {
    const std::string& name = names[std::uniform_int_distribution<std::size_t>(0, names.size() - 1)(rng)];
    Var<double> p = params.get(name);
    const std::size_t i = std::uniform_int_distribution<std::size_t>(0, p.value().numel() - 1)(rng);
    const double analytic = p.grad().empty() ? 0.0 : p.grad()[i];
    const double orig = p.value()[i];
    double plus, minus;
    {
      NoGradGuard guard;
      p.mutable_value()[i] = orig + eps;
      plus = loss().value()[0];
      p.mutable_value()[i] = orig - eps;
      minus = loss().value()[0];
      p.mutable_value()[i] = orig;
    }
    const double numeric = (plus - minus) / (2 * eps);
    r.names.push_back(name);
    r.indices.push_back(i);
    r.analytic.push_back(analytic);
    r.numeric.push_back(numeric);
    r.rel_errors.push_back(relative_error(analytic, numeric));
  }
  return r;
}

GradCheckReport grad_check(const ModelConfig& cfg, int n_samples, double eps, std::uint64_t seed, int lr_side) {
  SrNet<double> net(cfg, seed);
  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
  std::uniform_real_distribution<double> jitter(-0.05, 0.05), unit(0.0, 1.0);
  for (const auto& [name, v] : net.params().all()) {
    Var<double> p = v;
    for (double& x : p.mutable_value().data) x += jitter(rng);
  }
  const int n = cfg.mode == SrMode::kSisrOnly ? 1 : cfg.n_views;
  Tensor<double> views({n, cfg.in_channels, lr_side, lr_side});
  for (double& x : views.data) x = unit(rng);
  Tensor<double> target({cfg.in_channels, lr_side * cfg.scale, lr_side * cfg.scale});
  for (double& x : target.data) x = unit(rng);
  return grad_check(net.params(), [&] { return ops::mse_loss(net.forward(views), target); }, n_samples, eps, seed);
}

}  // namespace sen4x::train
