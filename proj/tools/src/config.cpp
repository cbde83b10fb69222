#include "sen4x_cli/config.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "sen4x/error.hpp"

namespace sen4x::cli {

namespace {

constexpr unsigned kViews = kModel | kPrepare | kSynth;

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_commas(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(trim(item));
  return out;
}

[[noreturn]] void bad_value(const std::string& key, const std::string& value, const char* what) {
  fail(ErrorCode::kConfig, "config key '" + key + "': '" + value + "' is not " + what);
}

}  // namespace

const std::vector<KeySpec>& schema() {
  static const std::vector<KeySpec> keys = {
      {"seed", "0", "master seed for every random stream", kCommon},
      // model
      {"mode", "hybrid_early", "hybrid_early | hybrid_late | sisr_only | misr_only", kModel},
      {"in_channels", "4", "bands per view", kModel},
      {"n_views", "8", "revisits per stack", kViews},
      {"embed_dim", "258", "feature width", kModel},
      {"n_rstb", "6", "residual Swin transformer blocks", kModel},
      {"rstb_depth", "6", "Swin layers per block", kModel},
      {"heads", "6", "attention heads", kModel},
      {"window", "8", "attention window side", kModel},
      {"mlp_ratio", "2", "MLP hidden width / embed_dim", kModel},
      {"scale", "4", "upsampling factor", kViews},
      {"anchor", "true", "add the bilinear upsampled best view to the output", kModel},
      // SR training
      {"lr0", "1e-4", "peak learning rate", kTrain},
      {"lr_min", "0", "final learning rate", kTrain},
      {"epochs", "100", "training epochs", kTrain},
      {"batches_per_epoch", "4", "optimizer steps per epoch", kTrain},
      {"batch_size", "8", "patches per step", kTrain},
      {"warmup_frac", "0.05", "share of steps spent in linear warm-up", kTrain},
      {"loss", "l1", "l1 | l2", kTrain},
      {"val_every", "1", "validate every n epochs", kTrain},
      {"clip_norm", "0", "global gradient-norm clip, 0 = off", kTrain},
      // land cover
      {"n_classes", "7", "land-cover classes", kLc},
      {"lc_stem_width", "16", "full-resolution stem width", kLc},
      {"lc_widths", "32,64,128,256", "encoder widths at 1/4 … 1/32", kLc},
      {"lc_fpn_dim", "64", "feature-pyramid width", kLc},
      {"lc_batch_size", "16", "images per step", kLc},
      {"lc_max_epochs", "1000", "epoch cap", kLc},
      {"lc_patience", "25", "early-stopping patience in epochs", kLc},
      {"lc_lr0", "1e-4", "initial learning rate", kLc},
      {"lc_lr_min", "1e-8", "cosine floor", kLc},
      // prepare
      {"patch", "64", "LR patch side", kPrepare},
      {"stride", "48", "LR patch stride", kPrepare},
      {"clip_lo", "2", "lower clipping percentile", kPrepare},
      {"clip_hi", "98", "upper clipping percentile", kPrepare},
      {"w_temporal", "0.5", "revisit score weight: temporal proximity", kPrepare},
      {"w_completeness", "0.3", "revisit score weight: completeness", kPrepare},
      {"w_spectral", "0.2", "revisit score weight: spectral quality", kPrepare},
      {"frac_train", "0.7", "training share of geo blocks", kPrepare},
      {"frac_val", "0.2", "validation share of geo blocks", kPrepare},
      {"frac_test", "0.1", "test share of geo blocks", kPrepare},
      {"created", "", "timestamp recorded in manifests", kPrepare | kSynth},
      // synthetic data
      {"n_train", "200", "training stacks", kSynth},
      {"n_val", "40", "validation stacks", kSynth},
      {"n_test", "40", "test stacks", kSynth},
      {"hr_size", "256", "HR side of a synthetic stack", kSynth},
      {"class_mix", "0.10,0.12,0.12,0.18,0.18,0.18,0.12", "target class shares", kSynth},
      {"blob_sigma", "0", "natural-class blob scale in HR px, 0 = hr_size/10", kSynth},
      {"palette_jitter", "0.03", "per-instance reflectance jitter", kSynth},
      {"texture", "0.02", "within-class texture amplitude", kSynth},
      {"shift_max", "0.5", "max sub-pixel shift in LR px", kSynth},
      {"blur_sigma", "1.2", "sensor blur in HR px", kSynth},
      {"noise_sigma", "0.01", "additive noise", kSynth},
      {"mask_fraction", "0.05", "share of masked pixels per view", kSynth},
      {"gain_jitter", "0.02", "per-view gain jitter", kSynth},
      {"offset_jitter", "0.02", "per-view offset jitter (× band mean)", kSynth},
      {"raw_tiles", "6", "raw mode: tiles", kSynth},
      {"raw_lr_size", "64", "raw mode: LR tile side", kSynth},
      {"raw_native_factor", "2", "raw mode: HR storage factor over the target grid", kSynth},
      {"raw_candidates", "10", "raw mode: revisits per tile", kSynth},
  };
  return keys;
}

Config::Config(unsigned groups) : groups_(groups | kCommon) {
  for (const auto& k : schema())
    if (k.group & groups_) values_[k.name] = k.default_value;
}

bool Config::accepts(const std::string& key) const { return values_.count(key) != 0; }

void Config::set(const std::string& key, const std::string& value) {
  if (!accepts(key)) fail(ErrorCode::kConfig, "unknown config key '" + key + "'");
  values_[key] = value;
}

std::string Config::str(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) fail(ErrorCode::kConfig, "config key '" + key + "' not available here");
  return it->second;
}

long long Config::integer(const std::string& key) const {
  const std::string v = str(key);
  long long out = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) bad_value(key, v, "an integer");
  return out;
}

std::uint64_t Config::u64(const std::string& key) const {
  const std::string v = str(key);
  std::uint64_t out = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) bad_value(key, v, "a non-negative integer");
  return out;
}

double Config::real(const std::string& key) const {
  const std::string v = str(key);
  double out = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) bad_value(key, v, "a number");
  return out;
}

bool Config::boolean(const std::string& key) const {
  const std::string v = str(key);
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  bad_value(key, v, "a boolean");
}

std::vector<int> Config::int_list(const std::string& key) const {
  std::vector<int> out;
  for (const auto& item : split_commas(str(key))) {
    int x = 0;
    const auto [p, ec] = std::from_chars(item.data(), item.data() + item.size(), x);
    if (ec != std::errc() || p != item.data() + item.size()) bad_value(key, str(key), "a comma-separated integer list");
    out.push_back(x);
  }
  return out;
}

std::vector<double> Config::real_list(const std::string& key) const {
  std::vector<double> out;
  for (const auto& item : split_commas(str(key))) {
    double x = 0;
    const auto [p, ec] = std::from_chars(item.data(), item.data() + item.size(), x);
    if (ec != std::errc() || p != item.data() + item.size()) bad_value(key, str(key), "a comma-separated number list");
    out.push_back(x);
  }
  return out;
}

std::string Config::to_text() const {
  std::string out;
  for (const auto& [k, v] : values_) out += k + " = " + v + "\n";
  return out;
}

std::string Config::hash() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : to_text()) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

ModelConfig Config::model() const {
  ModelConfig m;
  m.mode = parse_sr_mode(str("mode"));
  m.in_channels = static_cast<int>(integer("in_channels"));
  m.n_views = static_cast<int>(integer("n_views"));
  m.embed_dim = static_cast<int>(integer("embed_dim"));
  m.n_rstb = static_cast<int>(integer("n_rstb"));
  m.rstb_depth = static_cast<int>(integer("rstb_depth"));
  m.heads = static_cast<int>(integer("heads"));
  m.window = static_cast<int>(integer("window"));
  m.mlp_ratio = real("mlp_ratio");
  m.scale = static_cast<int>(integer("scale"));
  m.anchor = boolean("anchor");
  m.validate();
  return m;
}

train::TrainConfig Config::train() const {
  train::TrainConfig t;
  t.lr0 = real("lr0");
  t.lr_min = real("lr_min");
  t.epochs = static_cast<int>(integer("epochs"));
  t.batches_per_epoch = static_cast<int>(integer("batches_per_epoch"));
  t.batch_size = static_cast<int>(integer("batch_size"));
  t.warmup_frac = real("warmup_frac");
  t.loss = train::parse_loss(str("loss"));
  t.seed = u64("seed");
  t.val_every = static_cast<int>(integer("val_every"));
  t.clip_norm = real("clip_norm");
  t.validate();
  return t;
}

landcover::SegConfig Config::lc() const {
  landcover::SegConfig c;
  c.n_classes = static_cast<int>(integer("n_classes"));
  c.stem_width = static_cast<int>(integer("lc_stem_width"));
  const auto w = int_list("lc_widths");
  if (w.size() != 4) fail(ErrorCode::kConfig, "config key 'lc_widths' needs four values");
  std::copy(w.begin(), w.end(), c.widths.begin());
  c.fpn_dim = static_cast<int>(integer("lc_fpn_dim"));
  c.batch_size = static_cast<int>(integer("lc_batch_size"));
  c.max_epochs = static_cast<int>(integer("lc_max_epochs"));
  c.patience = static_cast<int>(integer("lc_patience"));
  c.lr0 = real("lc_lr0");
  c.lr_min = real("lc_lr_min");
  c.seed = u64("seed");
  c.validate();
  return c;
}

pipeline::PrepareConfig Config::prepare() const {
  pipeline::PrepareConfig p;
  p.n_views = static_cast<int>(integer("n_views"));
  p.scale = static_cast<int>(integer("scale"));
  p.patch = static_cast<int>(integer("patch"));
  p.stride = static_cast<int>(integer("stride"));
  p.clip_lo = real("clip_lo");
  p.clip_hi = real("clip_hi");
  p.weights = {real("w_temporal"), real("w_completeness"), real("w_spectral")};
  p.fractions = {real("frac_train"), real("frac_val"), real("frac_test")};
  p.seed = u64("seed");
  p.created = str("created");
  p.validate();
  return p;
}

synth::DatasetSpec Config::synth() const {
  synth::DatasetSpec d;
  d.n_train = static_cast<int>(integer("n_train"));
  d.n_val = static_cast<int>(integer("n_val"));
  d.n_test = static_cast<int>(integer("n_test"));
  d.seed = u64("seed");
  d.created = str("created");
  d.scene.hr_size = static_cast<int>(integer("hr_size"));
  const auto mix = real_list("class_mix");
  if (mix.size() != 7) fail(ErrorCode::kConfig, "config key 'class_mix' needs seven values");
  std::copy(mix.begin(), mix.end(), d.scene.class_mix.begin());
  d.scene.blob_sigma = real("blob_sigma");
  d.scene.palette_jitter = real("palette_jitter");
  d.scene.texture = real("texture");
  d.degrade.n_views = static_cast<int>(integer("n_views"));
  d.degrade.scale = static_cast<int>(integer("scale"));
  d.degrade.shift_max = real("shift_max");
  d.degrade.blur_sigma = real("blur_sigma");
  d.degrade.noise_sigma = real("noise_sigma");
  d.degrade.mask_fraction = real("mask_fraction");
  d.degrade.gain_jitter = real("gain_jitter");
  d.degrade.offset_jitter = real("offset_jitter");
  d.scene.validate();
  d.degrade.validate();
  if (d.scene.hr_size % d.degrade.scale)
    fail(ErrorCode::kConfig, "hr_size " + std::to_string(d.scene.hr_size) + " is not divisible by scale");
  if (d.n_train <= 0 || d.n_val <= 0 || d.n_test < 0) fail(ErrorCode::kConfig, "synth: need n_train, n_val > 0");
  return d;
}

synth::RawSpec Config::raw() const {
  const synth::DatasetSpec d = synth();
  synth::RawSpec r;
  r.n_tiles = static_cast<int>(integer("raw_tiles"));
  r.lr_size = static_cast<int>(integer("raw_lr_size"));
  r.scale = d.degrade.scale;
  r.native_factor = static_cast<int>(integer("raw_native_factor"));
  r.n_candidates = static_cast<int>(integer("raw_candidates"));
  r.scene = d.scene;
  r.degrade = d.degrade;
  r.seed = d.seed;
  if (r.n_tiles < 3) fail(ErrorCode::kConfig, "raw_tiles must be at least 3 (one geo block per split)");
  if (r.lr_size < 1 || r.native_factor < 1 || r.n_candidates < 1)
    fail(ErrorCode::kConfig, "raw sizes must be positive");
  return r;
}

void apply_config_text(Config& cfg, const std::string& text, const std::string& origin) {
  std::stringstream ss(text);
  std::string line;
  int lineno = 0;
  while (std::getline(ss, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      fail(ErrorCode::kConfig, origin + ":" + std::to_string(lineno) + ": expected 'key = value'");
    const std::string key = trim(line.substr(0, eq));
    const auto& keys = schema();
    if (std::none_of(keys.begin(), keys.end(), [&](const KeySpec& k) { return k.name == key; }))
      fail(ErrorCode::kConfig, origin + ":" + std::to_string(lineno) + ": unknown config key '" + key + "'");
    // a shared file may carry keys of other commands; those are skipped
    if (cfg.accepts(key)) cfg.set(key, trim(line.substr(eq + 1)));
  }
}

void load_config(Config& cfg, const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::kConfig, "cannot read config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  apply_config_text(cfg, ss.str(), path.string());
}

}  // namespace sen4x::cli
