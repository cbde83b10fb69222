// End-to-end acceptance run: one PASS/FAIL line per criterion.
//
//   acceptance [--only 1,2,...] [--workdir DIR] [--report FILE] [--strict]
//
// Exits 0 once every selected criterion has been evaluated (its verdict is in
// the output); with --strict, exits 1 if any of them failed. --report also
// writes the verdict lines to FILE.

#include <chrono>
#include <cstdarg>
#include <optional>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "sen4x/checkpoint.hpp"
#include "sen4x/datapipe.hpp"
#include "sen4x/landcover.hpp"
#include "sen4x/metrics.hpp"
#include "sen4x/model.hpp"
#include "sen4x/ops.hpp"
#include "sen4x/raster.hpp"
#include "sen4x/resample.hpp"
#include "sen4x/synthdata.hpp"
#include "sen4x/train.hpp"
#include "support/oracles.hpp"

namespace fs = std::filesystem;
using namespace sen4x;
using Clock = std::chrono::steady_clock;

namespace {

struct Verdict {
  bool pass = false;
  std::string detail;
};

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, ...) __attribute__((format(printf, 1, 2)));
std::string fmt(const char* f, ...) {
  char buf[1024];
  va_list ap;
  va_start(ap, f);
  std::vsnprintf(buf, sizeof buf, f, ap);
  va_end(ap);
  return buf;
}

void progress(const std::string& msg) {
  std::fprintf(stderr, "  .. %s\n", msg.c_str());
  std::fflush(stderr);
}

// ---------------------------------------------------------------- criterion 1

Verdict majority_class_identity() {
  // K = 7, ground truth with class 3 covering 31.3 % of 1000 pixels, every
  // pixel predicted as class 3.
  const int k = 7, n = 1000, major = 3, n_major = 313;
  std::vector<std::uint8_t> gt(n), pred(n, major);
  for (int i = 0; i < n; ++i) gt[i] = static_cast<std::uint8_t>(i < n_major ? major : (i % 6 < major ? i % 6 : i % 6 + 1));
  const auto s = metrics::seg_scores(metrics::confusion(pred, gt, k));
  const double p = 0.313;
  const bool ok = std::abs(s.overall_acc - p) <= 1e-3 && std::abs(s.macro_miou - 0.0447) <= 1e-3 &&
                  std::abs(s.micro_miou - 0.1855) <= 1e-3 && std::abs(s.macro_miou - 0.045) <= 1e-3 &&
                  std::abs(s.micro_miou - 0.185) <= 1e-3;
  return {ok, fmt("acc %.4f, macro mIoU %.4f, micro mIoU %.4f", s.overall_acc, s.macro_miou, s.micro_miou)};
}

// ---------------------------------------------------------------- criterion 2

Verdict oracle_equivalence() {
  std::mt19937_64 rng(2024);
  const int trials = 100;
  double worst_psnr = 0, worst_ssim = 0, worst_conv = 0, worst_attn = 0;
  int count_mismatch = 0;
  std::uniform_int_distribution<int> side(11, 24), small(1, 4);

  for (int t = 0; t < trials; ++t) {
    // PSNR and SSIM on random images in [0, 1]
    const int h = side(rng), w = side(rng), c = small(rng);
    auto a = oracle::random_tensor<float>({c, h, w}, rng, 0, 1);
    auto b = a;
    std::normal_distribution<double> nd(0, 0.02 + 0.1 * (t % 5));
    for (auto& v : b.data) v = static_cast<float>(std::clamp(v + nd(rng), 0.0, 1.0));
    worst_psnr = std::max(worst_psnr, std::abs(metrics::psnr(a, b) - oracle::psnr(a.data, b.data)));
    double ref_ssim = 0;
    for (int ch = 0; ch < c; ++ch) ref_ssim += oracle::ssim(a.ptr() + ch * h * w, b.ptr() + ch * h * w, h, w);
    worst_ssim = std::max(worst_ssim, std::abs(metrics::ssim(a, b) - ref_ssim / c));

    // confusion and the scores derived from it
    const int k = 2 + t % 6, n = 50 + t * 7;
    std::vector<std::uint8_t> pred(n), gt(n);
    std::uniform_int_distribution<int> cls(0, k - 1), ign(0, 9);
    for (int i = 0; i < n; ++i) {
      pred[i] = static_cast<std::uint8_t>(cls(rng));
      gt[i] = static_cast<std::uint8_t>(ign(rng) == 0 ? 255 : cls(rng));
    }
    std::uint64_t ignored = 0;
    const auto ref = oracle::confusion(pred, gt, k, &ignored);
    const auto cm = metrics::confusion(pred, gt, k);
    if (cm.counts != ref || cm.ignored != ignored) ++count_mismatch;
    const auto s = metrics::seg_scores(cm);
    std::uint64_t total = 0, diag = 0, inter = 0, uni = 0;
    double macro = 0;
    for (int i = 0; i < k; ++i) {
      std::uint64_t row = 0, col = 0;
      for (int j = 0; j < k; ++j) {
        row += ref[i * k + j];
        col += ref[j * k + i];
      }
      const std::uint64_t tp = ref[i * k + i], u = row + col - tp;
      total += row;
      diag += tp;
      inter += tp;
      uni += u;
      macro += u ? static_cast<double>(tp) / static_cast<double>(u) : 0.0;
    }
    if (s.overall_acc != static_cast<double>(diag) / static_cast<double>(total) ||
        std::abs(s.macro_miou - macro / k) > 1e-12 ||
        std::abs(s.micro_miou - static_cast<double>(inter) / static_cast<double>(uni)) > 1e-12)
      ++count_mismatch;

    // convolution
    {
      const int cin = small(rng), cout = small(rng), kk = (t % 3 == 0) ? 1 : 3, stride = 1 + t % 2, pad = kk / 2;
      const int ch = 5 + t % 7, cw = 4 + t % 9;
      auto x = oracle::random_tensor<float>({cin, ch, cw}, rng);
      auto wt = oracle::random_tensor<float>({cout, cin, kk, kk}, rng);
      auto bias = oracle::random_tensor<float>({cout}, rng);
      const auto y = ops::conv2d(Var<float>(x), Var<float>(wt), Var<float>(bias), stride, pad);
      int oh = 0, ow = 0;
      const auto ry = oracle::conv2d({x.data.begin(), x.data.end()}, cin, ch, cw, {wt.data.begin(), wt.data.end()},
                                     {bias.data.begin(), bias.data.end()}, cout, kk, stride, pad, &oh, &ow);
      if (y.value().data.size() != ry.size()) {
        worst_conv = INFINITY;
      } else {
        for (std::size_t i = 0; i < ry.size(); ++i) worst_conv = std::max(worst_conv, std::abs(y.value().data[i] - ry[i]));
      }
    }

    // dense-window attention (shifted and unshifted)
    {
      const int win = (t % 2) ? 4 : 2, heads = 1 + t % 2, cc = 4 * heads;
      const int gh = win * (1 + t % 3), gw = win * (1 + (t / 3) % 3);
      const int shift = (t % 4 >= 2 && gh > win && gw > win) ? win / 2 : 0;
      auto qkv = oracle::random_tensor<float>({gh * gw, 3 * cc}, rng);
      auto bias = oracle::random_tensor<float>({(2 * win - 1) * (2 * win - 1), heads}, rng);
      const auto y = ops::window_attention(Var<float>(qkv), Var<float>(bias), ops::WindowSpec{gh, gw, win, shift, heads});
      const auto ry = oracle::window_attention({qkv.data.begin(), qkv.data.end()}, gh, gw, cc, heads, win, shift,
                                               {bias.data.begin(), bias.data.end()});
      for (std::size_t i = 0; i < ry.size(); ++i) worst_attn = std::max(worst_attn, std::abs(y.value().data[i] - ry[i]));
    }
  }
  const bool ok = worst_psnr <= 1e-6 && worst_ssim <= 1e-5 && count_mismatch == 0 && worst_conv <= 1e-5 &&
                  worst_attn <= 1e-4;
  return {ok, fmt("%d trials each; max |Δ| psnr %.2e dB, ssim %.2e, conv %.2e, attention %.2e; count mismatches %d",
                  trials, worst_psnr, worst_ssim, worst_conv, worst_attn, count_mismatch)};
}

// ---------------------------------------------------------------- criterion 3

Verdict gradient_check() {
  ModelConfig cfg;
  cfg.mode = SrMode::kHybridEarly;
  cfg.embed_dim = 16;
  cfg.n_rstb = 1;
  cfg.rstb_depth = 2;
  cfg.heads = 2;
  cfg.window = 4;
  cfg.n_views = 4;
  const auto rep = train::grad_check(cfg, 50, 1e-3, 7, 16);
  const double frac = rep.fraction_below(1e-2);
  return {frac >= 0.99, fmt("%zu coordinates, %.0f%% below 1e-2, max rel. error %.2e", rep.rel_errors.size(),
                            100 * frac, rep.max_rel_error())};
}

// ---------------------------------------------------------------- criterion 4

Verdict pixel_shuffle_bijection() {
  int bad = 0;
  std::string shapes;
  for (int s : {2, 4}) {
    const int c = 3, h = 8, w = 8, cin = c * s * s;
    Tensor<float> x({cin, h, w});
    for (std::size_t i = 0; i < x.data.size(); ++i) x.data[i] = static_cast<float>(i);
    Var<float> xv(x, true);
    auto y = ops::pixel_shuffle(xv, s);
    const auto& out = y.value();
    if (out.shape != Shape{c, h * s, w * s}) ++bad;
    std::vector<int> hits(x.data.size(), 0);
    for (int ch = 0; ch < c; ++ch)
      for (int oy = 0; oy < h * s; ++oy)
        for (int ox = 0; ox < w * s; ++ox) {
          const int src_c = ch * s * s + (oy % s) * s + (ox % s);
          const std::size_t src = (static_cast<std::size_t>(src_c) * h + oy / s) * w + ox / s;
          const float v = out.data[(static_cast<std::size_t>(ch) * h * s + oy) * w * s + ox];
          if (v != static_cast<float>(src)) ++bad;
          ++hits[static_cast<std::size_t>(v)];
        }
    for (int hcount : hits)
      if (hcount != 1) ++bad;
    // the backward pass is the inverse permutation
    Tensor<float> seed(out.shape);
    for (std::size_t i = 0; i < seed.data.size(); ++i) seed.data[i] = out.data[i];
    backward(y, seed);
    for (std::size_t i = 0; i < x.data.size(); ++i)
      if (xv.grad().data[i] != x.data[i]) ++bad;
    shapes += fmt("%s%dx8x8 -> %dx%dx%d", shapes.empty() ? "" : ", ", cin, c, h * s, w * s);
  }
  return {bad == 0, fmt("s in {2,4}: %s; %d violations", shapes.c_str(), bad)};
}

// ------------------------------------------------------- criteria 5, 6, 7, 8

// Shared setup of the synthetic experiments.
struct Experiment {
  fs::path root;
  DatasetManifest manifest;
  std::vector<train::SrSample> train_set, val_set, test_set;

  static ModelConfig model(SrMode mode) {
    ModelConfig m;
    m.mode = mode;
    m.embed_dim = 32;
    m.n_rstb = 2;
    m.rstb_depth = 2;
    m.heads = 2;
    m.window = 4;
    m.n_views = 8;
    return m;
  }
  static train::TrainConfig schedule(std::uint64_t seed) {
    train::TrainConfig t;
    t.lr0 = 1e-3;
    t.lr_min = 0;
    t.batch_size = 8;
    t.batches_per_epoch = 4;
    t.epochs = 100;  // 400 optimizer steps
    t.warmup_frac = 0.05;
    t.val_every = 25;
    t.seed = seed;
    return t;
  }
  static landcover::SegConfig seg() {
    landcover::SegConfig c;
    c.stem_width = 8;
    c.widths = {16, 32, 64, 64};
    c.fpn_dim = 32;
    c.batch_size = 16;
    c.max_epochs = 60;
    c.patience = 25;
    c.lr0 = 1e-3;
    c.lr_min = 1e-6;
    return c;
  }

  static synth::DatasetSpec data_spec() {
    synth::DatasetSpec spec;
    spec.n_train = 200;
    spec.n_val = 40;
    spec.n_test = 40;
    spec.scene.hr_size = 64;  // 16×16 LR views at ×4
    spec.seed = 11;
    return spec;
  }

  explicit Experiment(fs::path dir) : root(std::move(dir)) {
    manifest = synth::write_dataset(data_spec(), root);
    train_set = train::load_sr_split(manifest, Split::kTrain, root);
    val_set = train::load_sr_split(manifest, Split::kVal, root);
    test_set = train::load_sr_split(manifest, Split::kTest, root);
  }

  double bicubic_psnr(const std::vector<train::SrSample>& set) const {
    double sum = 0;
    for (const auto& s : set) {
      auto up = resize_bicubic(s.views.slice0(0), s.target.dim(1), s.target.dim(2));
      for (auto& v : up.data) v = std::clamp(v, 0.0f, 1.0f);
      sum += metrics::psnr(up, s.target);
    }
    return sum / static_cast<double>(set.size());
  }

  double model_psnr(const train::TrainResult& r, const ModelConfig& m, const std::vector<train::SrSample>& set) const {
    SrNet<float> net(m, 0);
    import_params(net.params(), r.best.params);
    return train::evaluate(net, set, train::LossKind::kL1).psnr;
  }
};

std::vector<std::uint8_t> checkpoint_bytes(const Checkpoint& ck) { return encode_checkpoint(ck); }

struct SrRun {
  train::TrainResult result;
  double test_psnr = 0;
  double seconds = 0;
};

SrRun train_sr_run(const Experiment& ex, SrMode mode, std::uint64_t seed) {
  const auto t0 = Clock::now();
  SrRun run;
  const auto m = Experiment::model(mode);
  run.result = train::train_sr(ex.train_set, ex.val_set, m, Experiment::schedule(seed));
  run.test_psnr = ex.model_psnr(run.result, m, ex.test_set);
  run.seconds = seconds_since(t0);
  progress(fmt("%s seed %llu: test PSNR %.3f dB (%.0f s)", to_string(mode), static_cast<unsigned long long>(seed),
               run.test_psnr, run.seconds));
  return run;
}

struct LcRun {
  landcover::LcResult result;
  metrics::SegScores test;
  double seconds = 0;
};

LcRun train_lc_run(const Experiment& ex, landcover::ImageSource source, const SrNet<float>* sr) {
  const auto t0 = Clock::now();
  const auto train = landcover::load_lc_split(ex.manifest, Split::kTrain, ex.root, source, sr);
  const auto val = landcover::load_lc_split(ex.manifest, Split::kVal, ex.root, source, sr);
  const auto test = landcover::load_lc_split(ex.manifest, Split::kTest, ex.root, source, sr);
  LcRun run;
  run.result = landcover::train_lc(train, val, Experiment::seg());
  const auto net = landcover::load_segnet(run.result.best);
  run.test = metrics::seg_scores(landcover::evaluate_confusion(net, test));
  run.seconds = seconds_since(t0);
  progress(fmt("landcover on %s: test macro mIoU %.4f, acc %.4f, best epoch %d (%.0f s)", to_string(source),
               run.test.macro_miou, run.test.overall_acc, run.result.stop.best_epoch, run.seconds));
  return run;
}

// ---------------------------------------------------------------- criterion 9

Verdict pipeline_invariants() {
  std::mt19937_64 rng(99);
  double worst_idem = 0;
  int bad_impute = 0, bad_cover = 0, bad_purify = 0;
  for (int t = 0; t < 20; ++t) {
    const auto src = oracle::random_tensor<float>({1, 13 + t, 17}, rng, 0, 1);
    const auto ref = oracle::random_tensor<float>({1, 21, 9 + t}, rng, -0.5, 2);
    const auto once = datapipe::histogram_match(src.data, ref.data);
    const auto twice = datapipe::histogram_match(once, ref.data);
    for (std::size_t i = 0; i < once.size(); ++i) worst_idem = std::max(worst_idem, static_cast<double>(std::abs(once[i] - twice[i])));

    datapipe::RevisitStack stack;
    stack.views = oracle::random_tensor<float>({4, 2, 9, 11}, rng, 0, 1);
    stack.masks.assign(4 * 9 * 11, 1);
    std::bernoulli_distribution drop(0.3);
    for (int i = 0; i < 9 * 11; ++i)
      for (int v = 1; v < 4; ++v)
        if (drop(rng)) stack.masks[v * 99 + i] = 0;
    const auto filled = datapipe::impute_masked(stack);
    for (int v = 0; v < 4; ++v)
      for (int c = 0; c < 2; ++c)
        for (int i = 0; i < 99; ++i)
          if (stack.masks[v * 99 + i] && filled.views.data[(v * 2 + c) * 99 + i] != stack.views.data[(v * 2 + c) * 99 + i])
            ++bad_impute;

    const int f = 2 + t % 3, lh = 10 + t, lw = 7 + 2 * t;
    datapipe::LabelRaster fine{lh, lw, std::vector<std::uint8_t>(static_cast<std::size_t>(lh) * lw)};
    std::uniform_int_distribution<int> cls(0, 2);
    for (int y = 0; y < lh; ++y)  // blocky so that pure footprints occur
      for (int x = 0; x < lw; ++x) fine.labels[y * lw + x] = static_cast<std::uint8_t>(((y / 3) * 7 + (x / 4) * 3 + (cls(rng) == 0)) % 7);
    const auto coarse = datapipe::downsample_labels(fine, f);
    if (coarse.labels != oracle::purify_labels(fine.labels, lh, lw, f)) ++bad_purify;
  }
  for (int side : {64, 112, 158}) {
    std::vector<int> cover(side * side, 0);
    for (auto [r, c] : datapipe::extract_patches(side, side, 64, 48))
      for (int y = r; y < r + 64; ++y)
        for (int x = c; x < c + 64; ++x) {
          if (y >= side || x >= side) {
            ++bad_cover;
            continue;
          }
          ++cover[y * side + x];
        }
    for (int v : cover)
      if (v == 0) ++bad_cover;
  }
  const bool ok = worst_idem <= 1e-6 && bad_impute == 0 && bad_cover == 0 && bad_purify == 0;
  return {ok, fmt("histogram-match idempotence %.1e, impute changes on valid pixels %d, uncovered/out-of-range "
                  "patch pixels %d, purification mismatches %d",
                  worst_idem, bad_impute, bad_cover, bad_purify)};
}

// Criterion 8 without the reruns: persistence round trips and schedule closed forms.
Verdict persistence_and_schedule(const fs::path& dir) {
  std::mt19937_64 rng(5);
  int bad = 0;
  // raster round trip, both dtypes
  const auto t = oracle::random_tensor<float>({3, 5, 7}, rng);
  const auto bytes = encode_raster(RasterTensor::from(t));
  write_file_bytes(dir / "r.s4xr", bytes);
  if (read_file_bytes(dir / "r.s4xr") != bytes || encode_raster(read_raster(dir / "r.s4xr")) != bytes ||
      read_raster(dir / "r.s4xr").as_f32().data != t.data)
    ++bad;
  const auto u8 = RasterTensor::from_u8({2, 3}, {0, 1, 2, 254, 255, 7});
  if (encode_raster(decode_raster(encode_raster(u8))) != encode_raster(u8)) ++bad;
  // checkpoint round trip, with optimizer state
  train::SrTrainer trainer(Experiment::model(SrMode::kHybridEarly), Experiment::schedule(0));
  train::SrSample s{"x", oracle::random_tensor<float>({8, 4, 8, 8}, rng, 0, 1), oracle::random_tensor<float>({4, 32, 32}, rng, 0, 1)};
  trainer.train_step({&s});
  const auto ck = trainer.checkpoint(true);
  save_checkpoint(ck, dir / "c.s4xc");
  const auto ck_bytes = encode_checkpoint(ck);
  if (read_file_bytes(dir / "c.s4xc") != ck_bytes || encode_checkpoint(load_checkpoint(dir / "c.s4xc")) != ck_bytes) ++bad;
  // schedule: T = 400, warm-up W = ceil(0.05·400) = 20, lr0 = 1e-3, lr_min = 0
  const auto cfg = Experiment::schedule(0);
  const long long total = cfg.total_steps(), w = 20;
  const double pi = std::acos(-1.0);
  auto cosine = [&](long long step) {
    const double p = static_cast<double>(step - w) / static_cast<double>(total - w);
    return cfg.lr_min + 0.5 * (cfg.lr0 - cfg.lr_min) * (1.0 + std::cos(pi * p));
  };
  const long long mid = w + (total - w) / 2;
  if (train::warmup_steps(total, cfg) != w) ++bad;
  if (train::lr_at(w, total, cfg) != cosine(w) || train::lr_at(w, total, cfg) != cfg.lr0) ++bad;
  if (train::lr_at(mid, total, cfg) != cosine(mid) || train::lr_at(mid, total, cfg) != 0.5 * cfg.lr0) ++bad;
  if (train::lr_at(total, total, cfg) != cosine(total) || train::lr_at(total, total, cfg) != cfg.lr_min) ++bad;
  return {bad == 0, fmt("round trips and schedule closed forms: %d violations", bad)};
}

}  // namespace

int main(int argc, char** argv) {
  std::set<int> only;
  fs::path workdir = fs::temp_directory_path() / "sen4x_acceptance";
  bool strict = false;
  std::string report_path;
  for (int i = 1; i < argc; ++i) {
    if (!std::strcmp(argv[i], "--only") && i + 1 < argc) {
      std::stringstream ss(argv[++i]);
      for (std::string tok; std::getline(ss, tok, ',');) only.insert(std::stoi(tok));
    } else if (!std::strcmp(argv[i], "--workdir") && i + 1 < argc) {
      workdir = argv[++i];
    } else if (!std::strcmp(argv[i], "--report") && i + 1 < argc) {
      report_path = argv[++i];
    } else if (!std::strcmp(argv[i], "--strict")) {
      strict = true;
    } else {
      std::fprintf(stderr, "usage: %s [--only 1,2,...] [--workdir DIR] [--report FILE] [--strict]\n", argv[0]);
      return 2;
    }
  }
  auto selected = [&](int c) { return only.empty() || only.count(c) > 0; };
  fs::remove_all(workdir);
  fs::create_directories(workdir);

  int n_pass = 0, n_run = 0;
  std::string lines;
  auto emit = [&](const std::string& line) {
    std::fputs(line.c_str(), stdout);
    std::fflush(stdout);
    lines += line;
    if (!report_path.empty()) std::ofstream(report_path, std::ios::binary) << lines;
  };
  auto report = [&](int id, const char* name, const Verdict& v, double secs, double limit) {
    const bool ok = v.pass && (limit <= 0 || secs <= limit);
    ++n_run;
    n_pass += ok;
    emit(fmt("[%s] criterion %d: %s — %s (%.1f s%s)\n", ok ? "PASS" : "FAIL", id, name, v.detail.c_str(), secs,
             limit > 0 ? fmt(", limit %.0f s", limit).c_str() : ""));
  };
  auto timed = [&](int id, const char* name, double limit, const std::function<Verdict()>& fn) {
    if (!selected(id)) return;
    const auto t0 = Clock::now();
    Verdict v;
    try {
      v = fn();
    } catch (const std::exception& e) {
      v = {false, std::string("threw: ") + e.what()};
    }
    report(id, name, v, seconds_since(t0), limit);
  };

  timed(1, "majority-class metric identities", 1, majority_class_identity);
  timed(2, "oracle equivalence", 120, oracle_equivalence);
  timed(3, "gradient check", 300, gradient_check);
  timed(4, "pixel-shuffle bijection", 1, pixel_shuffle_bijection);

  const bool experiments = selected(5) || selected(6) || selected(7) || selected(8);
  std::optional<Experiment> ex;
  std::optional<SrRun> he0;
  if (experiments) {
    const auto t0 = Clock::now();
    ex.emplace(workdir / "data");
    progress(fmt("synthetic dataset: %zu/%zu/%zu stacks (%.0f s)", ex->train_set.size(), ex->val_set.size(),
                 ex->test_set.size(), seconds_since(t0)));
  }
  double bicubic = 0;
  if (ex) bicubic = ex->bicubic_psnr(ex->test_set);

  if (selected(5) || selected(7) || selected(8)) {
    const auto t0 = Clock::now();
    he0 = train_sr_run(*ex, SrMode::kHybridEarly, 0);
    if (selected(5)) {
      const double gain = he0->test_psnr - bicubic;
      report(5, "synthetic end-to-end SR vs bicubic",
             {gain >= 1.0, fmt("held-out PSNR %.3f dB vs bicubic %.3f dB, gain %+.3f dB (need >= +1.0)",
                               he0->test_psnr, bicubic, gain)},
             seconds_since(t0), 1800);
    }
  }

  if (selected(6)) {
    const auto t0 = Clock::now();
    double he = 0, si = 0;
    std::string per_seed;
    for (std::uint64_t seed : {0, 1, 2}) {
      const double a = (seed == 0 && he0) ? he0->test_psnr : train_sr_run(*ex, SrMode::kHybridEarly, seed).test_psnr;
      const double b = train_sr_run(*ex, SrMode::kSisrOnly, seed).test_psnr;
      he += a / 3;
      si += b / 3;
      per_seed += fmt("%s%+.3f", per_seed.empty() ? "" : ", ", a - b);
    }
    report(6, "multi-view advantage over single view",
           {he - si >= 0.3, fmt("mean held-out PSNR hybrid_early %.3f dB vs sisr_only %.3f dB, gain %+.3f dB "
                                "(per seed %s; need >= +0.3)",
                                he, si, he - si, per_seed.c_str())},
           seconds_since(t0) + (he0 ? he0->seconds : 0), 3600);
  }

  std::optional<LcRun> lc_sr;
  if (selected(7) || selected(8)) {
    const auto t0 = Clock::now();
    SrNet<float> sr(Experiment::model(SrMode::kHybridEarly), 0);
    import_params(sr.params(), he0->result.best.params);
    lc_sr = train_lc_run(*ex, landcover::ImageSource::kSr, &sr);
    if (selected(7)) {
      const auto hr = train_lc_run(*ex, landcover::ImageSource::kHr, nullptr);
      const auto bic = train_lc_run(*ex, landcover::ImageSource::kBicubic, nullptr);
      const double a = hr.test.macro_miou, b = lc_sr->test.macro_miou, c = bic.test.macro_miou;
      report(7, "downstream ordering HR >= SR >= bicubic",
             {a >= b && b >= c && b - c >= 0.05,
              fmt("held-out macro mIoU HR %.4f, SR %.4f, bicubic %.4f; SR - bicubic %+.4f (need >= +0.05)", a, b, c,
                  b - c)},
             seconds_since(t0), 2700);
    }
  }

  if (selected(8)) {
    const auto t0 = Clock::now();
    Verdict v = persistence_and_schedule(workdir);
    // fixed-seed reruns: dataset files, SR training, and the downstream run fed by it
    int diffs = 0;
    const auto again_dir = workdir / "data_rerun";
    synth::write_dataset(Experiment::data_spec(), again_dir);
    for (const auto& entry : fs::recursive_directory_iterator(workdir / "data")) {
      if (!entry.is_regular_file()) continue;
      const auto rel = fs::relative(entry.path(), workdir / "data");
      if (read_file_bytes(entry.path()) != read_file_bytes(again_dir / rel)) ++diffs;
    }
    const auto he_again = train_sr_run(*ex, SrMode::kHybridEarly, 0);
    if (checkpoint_bytes(he_again.result.best) != checkpoint_bytes(he0->result.best)) ++diffs;
    if (checkpoint_bytes(he_again.result.last) != checkpoint_bytes(he0->result.last)) ++diffs;
    if (he_again.result.log.to_jsonl() != he0->result.log.to_jsonl()) ++diffs;
    SrNet<float> sr(Experiment::model(SrMode::kHybridEarly), 0);
    import_params(sr.params(), he_again.result.best.params);
    const auto lc_again = train_lc_run(*ex, landcover::ImageSource::kSr, &sr);
    if (checkpoint_bytes(lc_again.result.best) != checkpoint_bytes(lc_sr->result.best)) ++diffs;
    if (std::memcmp(&lc_again.test.macro_miou, &lc_sr->test.macro_miou, sizeof(double)) != 0) ++diffs;
    v.pass = v.pass && diffs == 0;
    v.detail += fmt("; fixed-seed reruns (dataset, SR training, downstream training): %d differing artifacts", diffs);
    report(8, "determinism and persistence", v, seconds_since(t0), 0);
  }

  timed(9, "data-pipeline invariants", 60, pipeline_invariants);

  emit(fmt("%d/%d criteria passed\n", n_pass, n_run));
  fs::remove_all(workdir);
  return strict && n_pass != n_run ? 1 : 0;
}
