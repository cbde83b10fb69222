#include "sen4x/checkpoint.hpp"

#include <bit>
#include <cstring>

#include <json.hpp>

#include "sen4x/error.hpp"
#include "sen4x/raster.hpp"

namespace sen4x {

using json = nlohmann::json;

namespace {

constexpr char kMagic[4] = {'S', '4', 'X', 'C'};
constexpr std::uint8_t kVersion = 0x01;

void put_f32s(std::vector<std::uint8_t>& out, const std::vector<float>& v) {
  const std::size_t at = out.size();
  out.resize(at + 4 * v.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    const std::uint32_t u = std::bit_cast<std::uint32_t>(v[i]);
    for (int b = 0; b < 4; ++b) out[at + 4 * i + b] = static_cast<std::uint8_t>(u >> (8 * b));
  }
}

class Reader {
 public:
  explicit Reader(const std::vector<std::uint8_t>& bytes) : bytes_(bytes) {}

  const std::uint8_t* take(std::size_t n, const char* what) {
    if (bytes_.size() - pos_ < n) fail(ErrorCode::kTruncated, std::string("checkpoint truncated in ") + what);
    const std::uint8_t* p = bytes_.data() + pos_;
    pos_ += n;
    return p;
  }

  Tensor<float> tensor(const Shape& shape, const char* what) {
    Tensor<float> t(shape);
    const std::uint8_t* p = take(4 * t.numel(), what);
    for (std::size_t i = 0; i < t.numel(); ++i) {
      std::uint32_t u = 0;
      for (int b = 0; b < 4; ++b) u |= static_cast<std::uint32_t>(p[4 * i + b]) << (8 * b);
      t.data[i] = std::bit_cast<float>(u);
    }
    return t;
  }

  bool done() const { return pos_ == bytes_.size(); }

 private:
  const std::vector<std::uint8_t>& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ck) {
  json header;
  header["kind"] = ck.kind;
  header["config"] = json::parse(ck.config_json.empty() ? "{}" : ck.config_json);
  header["step"] = ck.step;
  header["seed"] = ck.seed;
  json params = json::array();
  for (const auto& [name, t] : ck.params) params.push_back({{"name", name}, {"shape", t.shape}});
  header["params"] = params;
  header["optimizer"] = ck.optimizer ? json{{"t", ck.optimizer->t}} : json(nullptr);
  header["extra"] = json::parse(ck.extra_json.empty() ? "{}" : ck.extra_json);
  const std::string text = header.dump();

  std::vector<std::uint8_t> out(kMagic, kMagic + 4);
  out.push_back(kVersion);
  out.insert(out.end(), 3, 0);
  const std::uint64_t len = text.size();
  for (int b = 0; b < 8; ++b) out.push_back(static_cast<std::uint8_t>(len >> (8 * b)));
  out.insert(out.end(), text.begin(), text.end());
  for (const auto& [name, t] : ck.params) put_f32s(out, t.data);
  if (ck.optimizer) {
    for (const auto* moments : {&ck.optimizer->m, &ck.optimizer->v}) {
      for (const auto& [name, t] : ck.params) {
        auto it = moments->find(name);
        if (it == moments->end() || it->second.shape != t.shape)
          fail(ErrorCode::kShapeMismatch, "optimizer state missing or misshaped for '" + name + "'");
        put_f32s(out, it->second.data);
      }
    }
  }
  return out;
}

Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
  Reader rd(bytes);
  const std::uint8_t* head = rd.take(16, "preamble");
  if (std::memcmp(head, kMagic, 4) != 0) fail(ErrorCode::kBadMagic, "not an S4XC checkpoint");
  if (head[4] != kVersion) fail(ErrorCode::kBadVersion, "unsupported S4XC version " + std::to_string(head[4]));
  std::uint64_t len = 0;
  for (int b = 0; b < 8; ++b) len |= static_cast<std::uint64_t>(head[8 + b]) << (8 * b);
  if (len > bytes.size()) fail(ErrorCode::kTruncated, "checkpoint header length exceeds file size");
  const std::uint8_t* text = rd.take(static_cast<std::size_t>(len), "header");

  Checkpoint ck;
  std::vector<std::pair<std::string, Shape>> layout;
  bool has_opt = false;
  try {
    const json h = json::parse(text, text + len);
    ck.kind = h.at("kind").get<std::string>();
    ck.config_json = h.at("config").dump();
    ck.step = h.at("step").get<long long>();
    ck.seed = h.at("seed").get<std::uint64_t>();
    for (const auto& p : h.at("params")) layout.emplace_back(p.at("name").get<std::string>(), p.at("shape").get<Shape>());
    if (!h.at("optimizer").is_null()) {
      has_opt = true;
      ck.optimizer = AdamState{};
      ck.optimizer->t = h.at("optimizer").at("t").get<long long>();
    }
    ck.extra_json = h.value("extra", json::object()).dump();
  } catch (const json::exception& e) {
    fail(ErrorCode::kData, std::string("malformed checkpoint header: ") + e.what());
  }
  for (const auto& [name, shape] : layout) ck.params[name] = rd.tensor(shape, "parameters");
  if (has_opt) {
    for (const auto& [name, shape] : layout) ck.optimizer->m[name] = rd.tensor(shape, "optimizer state");
    for (const auto& [name, shape] : layout) ck.optimizer->v[name] = rd.tensor(shape, "optimizer state");
  }
  if (!rd.done()) fail(ErrorCode::kTruncated, "checkpoint has trailing bytes after the declared payload");
  return ck;
}

void save_checkpoint(const Checkpoint& ck, const std::filesystem::path& path) {
  write_file_bytes(path, encode_checkpoint(ck));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) { return decode_checkpoint(read_file_bytes(path)); }

template <typename T>
std::map<std::string, Tensor<float>> export_params(const nn::ParamStore<T>& store) {
  std::map<std::string, Tensor<float>> out;
  for (const auto& [name, v] : store.all()) out[name] = v.value().template cast<float>();
  return out;
}

template <typename T>
void import_params(nn::ParamStore<T>& store, const std::map<std::string, Tensor<float>>& params) {
  for (const auto& [name, v] : store.all()) {
    auto it = params.find(name);
    if (it == params.end()) fail(ErrorCode::kShapeMismatch, "checkpoint lacks parameter '" + name + "'");
    if (it->second.shape != v.shape())
      fail(ErrorCode::kShapeMismatch, "parameter '" + name + "' has shape " + shape_str(it->second.shape) +
                                          " in checkpoint, model expects " + shape_str(v.shape()));
  }
  for (const auto& [name, t] : params)
    if (!store.contains(name)) fail(ErrorCode::kShapeMismatch, "checkpoint has unexpected parameter '" + name + "'");
  for (const auto& [name, v] : store.all()) {
    Var<T> p = v;
    p.mutable_value() = params.at(name).template cast<T>();
  }
}

template std::map<std::string, Tensor<float>> export_params(const nn::ParamStore<float>&);
template std::map<std::string, Tensor<float>> export_params(const nn::ParamStore<double>&);
template void import_params(nn::ParamStore<float>&, const std::map<std::string, Tensor<float>>&);
template void import_params(nn::ParamStore<double>&, const std::map<std::string, Tensor<float>>&);

}  // namespace sen4x
