#include "sen4x_cli/cli.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <ostream>

#include "sen4x/checkpoint.hpp"
#include "sen4x/error.hpp"
#include "sen4x/landcover.hpp"
#include "sen4x/metrics.hpp"
#include "sen4x/parallel.hpp"
#include "sen4x/raster.hpp"
#include "sen4x/resample.hpp"
#include "sen4x_cli/config.hpp"
#include "sen4x_cli/png.hpp"

#ifndef SEN4X_VERSION_STRING
#define SEN4X_VERSION_STRING "unknown"
#endif

namespace sen4x::cli {

namespace {

namespace fs = std::filesystem;
using json = nlohmann::json;

int exit_code_for(ErrorCode c) {
  switch (c) {
    case ErrorCode::kConfig: return kExitConfig;
    case ErrorCode::kNumeric: return kExitNumeric;
    default: return kExitData;
  }
}

// One subcommand: its options land here, and `run` executes after parsing.
struct Command {
  std::string name;
  unsigned groups = 0;
  CLI::App* app = nullptr;
  std::optional<std::string> config_path;
  std::map<std::string, std::optional<std::string>> key_flags;
  std::function<int(Config&)> run;
};

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out) fail(ErrorCode::kIo, "cannot write " + path.string());
}

fs::path manifest_path(const std::string& data) {
  const fs::path p(data);
  return fs::is_directory(p) ? p / "manifest.json" : p;
}

void require_file(const std::string& path, const char* what) {
  if (!fs::is_regular_file(path)) fail(ErrorCode::kData, std::string(what) + " not found: " + path);
}

// Output directory plus the run manifest that makes the run repeatable.
class RunDir {
 public:
  RunDir(const std::string& out, const std::string& command, const Config& cfg) : dir_(out) {
    fs::create_directories(dir_);
    write_text(dir_ / "config.resolved", cfg.to_text());
    run_ = {{"command", command},
            {"config_hash", cfg.hash()},
            {"seed", cfg.str("seed")},
            {"version", SEN4X_VERSION_STRING},
            {"config", cfg.values()}};
  }
  const fs::path& dir() const { return dir_; }
  json& record() { return run_; }
  void finish() { write_text(dir_ / "run.json", run_.dump(2) + "\n"); }

 private:
  fs::path dir_;
  json run_;
};

json scores_json(const metrics::SegScores& s) { return json::parse(metrics::report_json(metrics::report_from(s))); }

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"sen4x: multi-view super-resolution and land-cover pipeline", "sen4x"};
  app.require_subcommand(1);
  app.set_version_flag("--version", SEN4X_VERSION_STRING);
  int threads = 0;
  app.add_option("--threads", threads, "worker threads (default: SEN4X_THREADS or all cores)")->check(CLI::PositiveNumber);

  std::vector<std::unique_ptr<Command>> commands;
  auto add = [&](const std::string& name, const std::string& help, unsigned groups) {
    auto c = std::make_unique<Command>();
    c->name = name;
    c->groups = groups;
    c->app = app.add_subcommand(name, help);
    c->app->add_option("--config", c->config_path, "key = value configuration file");
    c->app->add_option("--threads", threads, "worker threads")->check(CLI::PositiveNumber);
    for (const auto& k : schema()) {
      if (!(k.group & (groups | kCommon))) continue;
      std::string names = "--" + k.name;
      std::string dashed = k.name;
      std::replace(dashed.begin(), dashed.end(), '_', '-');
      if (dashed != k.name) names += ",--" + dashed;
      c->app->add_option(names, c->key_flags[k.name], k.help + " [" + k.default_value + "]");
    }
    commands.push_back(std::move(c));
    return commands.back().get();
  };

  // ---- synth
  std::string out_dir;
  bool raw = false;
  {
    Command* c = add("synth", "generate a synthetic dataset (or raw tiles with --raw)", kSynth);
    c->app->add_option("--out", out_dir, "output directory")->required();
    c->app->add_flag("--raw", raw, "write unprocessed tiles + tiles.json for the prepare command");
    c->run = [&](Config& cfg) {
      if (raw) {
        const auto spec = cfg.raw();
        RunDir run(out_dir, "synth", cfg);
        synth::write_raw_tiles(spec, run.dir());
        run.record()["outputs"] = {"tiles.json"};
        run.finish();
        out << json{{"tiles", spec.n_tiles}, {"index", (run.dir() / "tiles.json").string()}}.dump() << "\n";
      } else {
        const auto spec = cfg.synth();
        RunDir run(out_dir, "synth", cfg);
        const auto m = synth::write_dataset(spec, run.dir());
        run.record()["outputs"] = {"manifest.json"};
        run.finish();
        out << json{{"stacks", m.tiles.size()}, {"manifest", (run.dir() / "manifest.json").string()}}.dump() << "\n";
      }
      return 0;
    };
  }

  // ---- prepare
  std::string input;
  {
    Command* c = add("prepare", "raw tiles → normalized patch dataset with geo-block splits", kPrepare);
    c->app->add_option("--input", input, "tiles.json of the raw tiles")->required();
    c->app->add_option("--out", out_dir, "output directory")->required();
    c->run = [&](Config& cfg) {
      const auto pc = cfg.prepare();
      require_file(input, "raw tile index");
      RunDir run(out_dir, "prepare", cfg);
      run.record()["input"] = input;
      const auto m = pipeline::prepare_dataset(input, run.dir(), pc);
      run.finish();
      json counts;
      for (Split s : {Split::kTrain, Split::kVal, Split::kTest}) counts[to_string(s)] = m.split(s).size();
      out << json{{"patches", m.tiles.size()}, {"splits", counts}}.dump() << "\n";
      return 0;
    };
  }

  // ---- train-sr
  std::string data;
  {
    Command* c = add("train-sr", "train the super-resolution network", kModel | kTrain);
    c->app->add_option("--data", data, "dataset directory or manifest.json")->required();
    c->app->add_option("--out", out_dir, "output directory")->required();
    c->run = [&](Config& cfg) {
      const auto mc = cfg.model();
      const auto tc = cfg.train();
      const fs::path mpath = manifest_path(data);
      const auto m = read_manifest(mpath);
      const auto train_set = train::load_sr_split(m, Split::kTrain, mpath.parent_path());
      const auto val_set = train::load_sr_split(m, Split::kVal, mpath.parent_path());
      RunDir run(out_dir, "train-sr", cfg);
      run.record()["data"] = data;
      const auto result = train::train_sr(train_set, val_set, mc, tc, run.dir(), [&](const train::EpochLog& e) {
        err << "epoch " << e.epoch << "  val_psnr " << e.val_psnr << "  val_loss " << e.val_loss << "\n";
      });
      // validation report of the best checkpoint, with the bicubic baseline
      SrNet<float> best(mc, tc.seed);
      import_params(best.params(), result.best.params);
      double psnr = 0, ssim = 0, bic = 0;
      for (const auto& s : val_set) {
        const auto pred = train::predict(best, s.views);
        psnr += metrics::psnr(pred, s.target);
        ssim += metrics::ssim(pred, s.target);
        bic += metrics::psnr(resize_bicubic(s.views.slice0(0), s.target.dim(1), s.target.dim(2)), s.target);
      }
      const double n = static_cast<double>(val_set.size());
      const json report{{"val", {{"psnr_db", psnr / n}, {"ssim", ssim / n}}}, {"bicubic", {{"psnr_db", bic / n}}}};
      write_text(run.dir() / "report.json", report.dump(2) + "\n");
      run.record()["outputs"] = {"best.s4xc", "last.s4xc", "train_log.jsonl", "report.json"};
      run.finish();
      out << report.dump() << "\n";
      return 0;
    };
  }

  // ---- infer
  std::string checkpoint, split_name = "test";
  bool png = false;
  {
    Command* c = add("infer", "super-resolve a views raster or every stack of a split", kCommon);
    c->app->add_option("--checkpoint", checkpoint, "sr checkpoint")->required();
    auto* in = c->app->add_option("--input", input, "N×C×h×w views raster");
    auto* dat = c->app->add_option("--data", data, "dataset directory or manifest.json");
    in->excludes(dat);
    c->app->add_option("--split", split_name, "split to process with --data")->check(CLI::IsMember({"train", "val", "test"}));
    c->app->add_option("--out", out_dir, "output directory")->required();
    c->app->add_flag("--png", png, "also write 8-bit RGB previews");
    c->run = [&](Config& cfg) {
      if (input.empty() && data.empty()) fail(ErrorCode::kConfig, "infer needs --input or --data");
      require_file(checkpoint, "checkpoint");
      const Checkpoint ck = load_checkpoint(checkpoint);
      if (ck.kind != "sr") fail(ErrorCode::kData, "checkpoint kind is '" + ck.kind + "', expected 'sr'");
      const ModelConfig mc = ModelConfig::from_json(ck.config_json);
      SrNet<float> net(mc, ck.seed);
      import_params(net.params(), ck.params);
      std::vector<std::pair<std::string, Tensor<float>>> jobs;
      if (!input.empty()) {
        require_file(input, "input raster");
        jobs.emplace_back("sr", read_f32(input));
      } else {
        const fs::path mpath = manifest_path(data);
        for (auto& s : train::load_sr_split(read_manifest(mpath), parse_split(split_name), mpath.parent_path()))
          jobs.emplace_back(s.id + "_sr", std::move(s.views));
      }
      for (const auto& [name, views] : jobs)
        if (views.ndim() != 4 || views.dim(0) < 1 || views.dim(1) != mc.in_channels ||
            (mc.mode != SrMode::kSisrOnly && views.dim(0) != mc.n_views))
          fail(ErrorCode::kShapeMismatch, "input stack " + shape_str(views.shape) + " does not fit the checkpoint (" +
                                              std::to_string(mc.n_views) + " views × " +
                                              std::to_string(mc.in_channels) + " bands, mode " + to_string(mc.mode) + ")");
      RunDir run(out_dir, "infer", cfg);
      run.record()["checkpoint"] = checkpoint;
      json outputs = json::array();
      for (const auto& [name, views] : jobs) {
        const Tensor<float> sr = train::predict(net, views);
        write_f32(sr, run.dir() / (name + ".s4xr"));
        outputs.push_back(name + ".s4xr");
        if (png) {
          write_png(sr, run.dir() / (name + ".png"));
          write_png(resize_bicubic(views.slice0(0), sr.dim(1), sr.dim(2)), run.dir() / (name + "_bicubic.png"));
        }
      }
      run.record()["outputs"] = outputs;
      run.finish();
      out << json{{"outputs", outputs}}.dump() << "\n";
      return 0;
    };
  }

  // ---- eval-image
  std::string pred, ref;
  {
    Command* c = add("eval-image", "PSNR / SSIM of a prediction against a reference raster", kCommon);
    c->app->add_option("--pred", pred, "predicted C×H×W raster")->required();
    c->app->add_option("--ref", ref, "reference C×H×W raster")->required();
    c->app->add_option("--out", out_dir, "optional output directory for report.json");
    c->run = [&](Config& cfg) {
      require_file(pred, "prediction");
      require_file(ref, "reference");
      const Tensor<float> a = read_f32(pred), b = read_f32(ref);
      if (a.shape != b.shape)
        fail(ErrorCode::kShapeMismatch, "prediction " + shape_str(a.shape) + " vs reference " + shape_str(b.shape));
      metrics::EvalReport r;
      r.psnr_db = metrics::psnr(a, b);
      const int h = a.dim(a.ndim() - 2), w = a.dim(a.ndim() - 1);
      if (h >= 11 && w >= 11) r.ssim = metrics::ssim(a, b);
      const std::string report = metrics::report_json(r);
      if (!out_dir.empty()) {
        RunDir run(out_dir, "eval-image", cfg);
        write_text(run.dir() / "report.json", report + "\n");
        run.record()["pred"] = pred;
        run.record()["ref"] = ref;
        run.finish();
      }
      out << report << "\n";
      return 0;
    };
  }

  // ---- train-lc / eval-lc
  std::string source = "hr", sr_checkpoint;
  auto load_sr_for = [&](landcover::ImageSource src) -> std::optional<SrNet<float>> {
    if (src != landcover::ImageSource::kSr) return std::nullopt;
    if (sr_checkpoint.empty()) fail(ErrorCode::kConfig, "--source sr needs --sr-checkpoint");
    require_file(sr_checkpoint, "sr checkpoint");
    const Checkpoint ck = load_checkpoint(sr_checkpoint);
    if (ck.kind != "sr") fail(ErrorCode::kData, "checkpoint kind is '" + ck.kind + "', expected 'sr'");
    SrNet<float> net(ModelConfig::from_json(ck.config_json), ck.seed);
    import_params(net.params(), ck.params);
    return net;
  };
  {
    Command* c = add("train-lc", "train the land-cover network on HR, SR or bicubic images", kLc);
    c->app->add_option("--data", data, "dataset directory or manifest.json")->required();
    c->app->add_option("--out", out_dir, "output directory")->required();
    c->app->add_option("--source", source, "hr | sr | bicubic")->check(CLI::IsMember({"hr", "sr", "bicubic"}));
    c->app->add_option("--sr-checkpoint", sr_checkpoint, "sr checkpoint for --source sr");
    c->run = [&](Config& cfg) {
      const auto lc = cfg.lc();
      const auto src = landcover::parse_image_source(source);
      const auto sr = load_sr_for(src);
      const fs::path mpath = manifest_path(data);
      const auto m = read_manifest(mpath);
      const auto train_set = landcover::load_lc_split(m, Split::kTrain, mpath.parent_path(), src, sr ? &*sr : nullptr);
      const auto val_set = landcover::load_lc_split(m, Split::kVal, mpath.parent_path(), src, sr ? &*sr : nullptr);
      RunDir run(out_dir, "train-lc", cfg);
      run.record()["data"] = data;
      run.record()["source"] = source;
      std::string history;
      const auto r = landcover::train_lc(train_set, val_set, lc, [&](const landcover::EpochRecord& e) {
        history += json{{"epoch", e.epoch}, {"train_loss", e.train_loss}, {"val_loss", e.val_loss}, {"lr", e.lr}}.dump() + "\n";
        err << "epoch " << e.epoch << "  train " << e.train_loss << "  val " << e.val_loss << "\n";
      });
      save_checkpoint(r.best, run.dir() / "best.s4xc");
      write_text(run.dir() / "history.jsonl", history);
      json report = scores_json(r.val_scores);
      report["best_epoch"] = r.stop.best_epoch;
      report["stopped_early"] = r.stopped_early;
      write_text(run.dir() / "report.json", report.dump(2) + "\n");
      run.record()["outputs"] = {"best.s4xc", "history.jsonl", "report.json"};
      run.finish();
      out << report.dump() << "\n";
      return 0;
    };
  }
  {
    Command* c = add("eval-lc", "accuracy and mIoU of a land-cover checkpoint on a split", kCommon);
    c->app->add_option("--checkpoint", checkpoint, "lc checkpoint")->required();
    c->app->add_option("--data", data, "dataset directory or manifest.json")->required();
    c->app->add_option("--split", split_name, "train | val | test")->check(CLI::IsMember({"train", "val", "test"}));
    c->app->add_option("--source", source, "hr | sr | bicubic")->check(CLI::IsMember({"hr", "sr", "bicubic"}));
    c->app->add_option("--sr-checkpoint", sr_checkpoint, "sr checkpoint for --source sr");
    c->app->add_option("--out", out_dir, "optional output directory for report.json");
    c->run = [&](Config& cfg) {
      const auto src = landcover::parse_image_source(source);
      require_file(checkpoint, "checkpoint");
      const auto net = landcover::load_segnet(load_checkpoint(checkpoint));
      const auto sr = load_sr_for(src);
      const fs::path mpath = manifest_path(data);
      const auto samples =
          landcover::load_lc_split(read_manifest(mpath), parse_split(split_name), mpath.parent_path(), src, sr ? &*sr : nullptr);
      if (samples.empty()) fail(ErrorCode::kData, "split '" + split_name + "' is empty");
      const std::string report = metrics::report_json(metrics::report_from(
          metrics::seg_scores(landcover::evaluate_confusion(net, samples))));
      if (!out_dir.empty()) {
        RunDir run(out_dir, "eval-lc", cfg);
        write_text(run.dir() / "report.json", report + "\n");
        run.finish();
      }
      out << report << "\n";
      return 0;
    };
  }

  // ---- grad-check
  int samples = 50, lr_side = 16;
  double eps = 1e-3, tol = 1e-2, min_fraction = 0.99;
  {
    Command* c = add("grad-check", "central-difference gradient check of the network in double precision", kModel);
    c->app->add_option("--samples", samples, "coordinates to check")->check(CLI::PositiveNumber);
    c->app->add_option("--eps", eps, "finite-difference step")->check(CLI::PositiveNumber);
    c->app->add_option("--lr-side", lr_side, "LR patch side")->check(CLI::PositiveNumber);
    c->app->add_option("--tol", tol, "relative-error tolerance");
    c->app->add_option("--min-fraction", min_fraction, "share of coordinates that must pass");
    c->app->add_option("--out", out_dir, "optional output directory for report.json");
    c->run = [&](Config& cfg) {
      const auto mc = cfg.model();
      const auto rep = train::grad_check(mc, samples, eps, cfg.u64("seed"), lr_side);
      json coords = json::array();
      for (std::size_t i = 0; i < rep.names.size(); ++i)
        coords.push_back({{"param", rep.names[i]}, {"index", rep.indices[i]}, {"analytic", rep.analytic[i]},
                          {"numeric", rep.numeric[i]}, {"rel_error", rep.rel_errors[i]}});
      const double frac = rep.fraction_below(tol);
      const json report{{"samples", samples}, {"eps", eps}, {"tol", tol}, {"max_rel_error", rep.max_rel_error()},
                        {"fraction_below_tol", frac}, {"pass", frac >= min_fraction}, {"coordinates", coords}};
      if (!out_dir.empty()) {
        RunDir run(out_dir, "grad-check", cfg);
        write_text(run.dir() / "report.json", report.dump(2) + "\n");
        run.finish();
      }
      out << json{{"max_rel_error", rep.max_rel_error()}, {"fraction_below_tol", frac}, {"pass", frac >= min_fraction}}.dump()
          << "\n";
      return frac >= min_fraction ? 0 : static_cast<int>(kExitNumeric);
    };
  }

  // ---- params
  {
    Command* c = add("params", "trainable parameter counts by component", kModel);
    c->run = [&](Config& cfg) {
      const auto b = count_parameters(cfg.model());
      out << json{{"shallow", b.shallow}, {"fusion", b.fusion}, {"backbone", b.backbone}, {"misr_trunk", b.misr_trunk},
                  {"head", b.head}, {"total", b.total()}}
                 .dump()
          << "\n";
      return 0;
    };
  }

  std::vector<std::string> rev(args.rbegin(), args.rend());
  try {
    app.parse(rev);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::CallForVersion&) {
    out << SEN4X_VERSION_STRING << "\n";
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    err << "run 'sen4x --help' or 'sen4x <command> --help' for usage\n";
    return kExitConfig;
  }

  Command* cmd = nullptr;
  for (const auto& c : commands)
    if (c->app->parsed()) cmd = c.get();
  if (cmd->app->get_help_ptr() && cmd->app->get_help_ptr()->count()) {
    out << cmd->app->help();
    return 0;
  }

  try {
    Config cfg(cmd->groups);
    if (cmd->config_path) load_config(cfg, *cmd->config_path);
    for (const auto& [key, value] : cmd->key_flags)
      if (value) cfg.set(key, *value);
    if (threads > 0) set_num_threads(threads);
    err << "# sen4x " << cmd->name << " (" << SEN4X_VERSION_STRING << "), seed " << cfg.str("seed") << ", "
        << num_threads() << " thread(s)\n";
    std::string text = cfg.to_text(), line;
    std::stringstream ss(text);
    while (std::getline(ss, line)) err << "#   " << line << "\n";
    return cmd->run(cfg);
  } catch (const Error& e) {
    err << "error [" << to_string(e.code()) << "]: " << e.what() << "\n";
    return exit_code_for(e.code());
  } catch (const std::filesystem::filesystem_error& e) {
    err << "error [io]: " << e.what() << "\n";
    return kExitData;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitUnexpected;
  }
}

}  // namespace sen4x::cli
