#include "splm/checkpoint.hpp"

#include <algorithm>
#include <stdexcept>

#include "splm/binary_io.hpp"

namespace splm::ckpt {

namespace {

constexpr char kMagic[4] = {'S', 'P', 'C', 'K'};
constexpr std::uint8_t kVersion = 1;

std::uint64_t parse_u64(const std::map<std::string, std::string>& cfg, const std::string& key) {
  auto it = cfg.find(key);
  if (it == cfg.end()) throw std::runtime_error("checkpoint: missing config key '" + key + "'");
  return std::stoull(it->second);
}

}  // namespace

const Record* Checkpoint::find(const std::string& name) const {
  for (const auto& r : records)
    if (r.name == name) return &r;
  return nullptr;
}

ModelConfig Checkpoint::model_config() const {
  const auto model_keys = model_config_map(ModelConfig{});
  std::map<std::string, std::string> kv;
  for (const auto& [k, v] : config)
    if (model_keys.contains(k)) kv[k] = v;
  return model_config_from_map(kv);
}

Precision Checkpoint::precision() const {
  auto it = config.find("precision");
  return it == config.end() ? Precision::f64 : parse_precision(it->second);
}

std::uint64_t Checkpoint::seed() const { return parse_u64(config, "seed"); }
std::uint64_t Checkpoint::step() const { return parse_u64(config, "step"); }

void write(const std::filesystem::path& path, const Checkpoint& ckpt) {
  const bool f32 = ckpt.precision() == Precision::f32;
  io::Bytes payload;
  io::put_le<std::uint64_t>(payload, ckpt.records.size());
  for (const auto& r : ckpt.records) {
    io::put_le<std::uint32_t>(payload, static_cast<std::uint32_t>(r.name.size()));
    io::put_bytes(payload, r.name.data(), r.name.size());
    io::put_le<std::uint32_t>(payload, static_cast<std::uint32_t>(r.shape.size()));
    for (auto d : r.shape) io::put_le<std::uint64_t>(payload, d);
    for (double v : r.values) {
      if (f32) io::put_le<float>(payload, static_cast<float>(v));
      else io::put_le<double>(payload, v);
    }
  }
  const std::string cfg = format_key_values(ckpt.config);
  io::Bytes out;
  io::put_bytes(out, kMagic, 4);
  out.push_back(kVersion);
  io::put_le<std::uint64_t>(out, cfg.size());
  io::put_bytes(out, cfg.data(), cfg.size());
  const auto digest = io::sha256(payload);
  io::put_bytes(out, digest.data(), digest.size());
  out.insert(out.end(), payload.begin(), payload.end());
  io::write_file(path.string(), out);
}

Checkpoint read(const std::filesystem::path& path) {
  const auto bytes = io::read_file(path.string());
  io::Reader in(bytes);
  const auto magic = in.take(4);
  if (!std::equal(magic.begin(), magic.end(), kMagic)) {
    throw std::runtime_error(path.string() + ": not a checkpoint (bad magic)");
  }
  if (const auto v = in.get_le<std::uint8_t>(); v != kVersion) {
    throw std::runtime_error(path.string() + ": unsupported checkpoint version " +
                             std::to_string(v));
  }
  const auto cfg_len = in.get_le<std::uint64_t>();
  const auto cfg_bytes = in.take(cfg_len);
  Checkpoint ckpt;
  ckpt.config = parse_key_values(std::string(cfg_bytes.begin(), cfg_bytes.end()));
  const auto digest = in.take(32);
  const auto payload = in.rest();
  const auto actual = io::sha256(payload);
  if (!std::equal(digest.begin(), digest.end(), actual.begin())) {
    throw std::runtime_error(path.string() + ": payload digest mismatch (corrupt checkpoint)");
  }
  const bool f32 = ckpt.precision() == Precision::f32;
  io::Reader body(payload);
  const auto count = body.get_le<std::uint64_t>();
  for (std::uint64_t i = 0; i < count; ++i) {
    Record r;
    const auto name_len = body.get_le<std::uint32_t>();
    const auto name = body.take(name_len);
    r.name.assign(name.begin(), name.end());
    const auto rank = body.get_le<std::uint32_t>();
    for (std::uint32_t d = 0; d < rank; ++d) r.shape.push_back(body.get_le<std::uint64_t>());
    r.values.resize(numel(r.shape));
    for (auto& v : r.values) v = f32 ? body.get_le<float>() : body.get_le<double>();
    ckpt.records.push_back(std::move(r));
  }
  if (body.remaining() != 0) throw std::runtime_error(path.string() + ": trailing bytes");
  return ckpt;
}

template <typename T>
Checkpoint capture(const gpt::GptModel<T>& model, std::uint64_t step,
                   const std::map<std::string, std::string>& extra) {
  Checkpoint ckpt;
  ckpt.config = model_config_map(model.config());
  ckpt.config["precision"] = std::is_same_v<T, float> ? "f32" : "f64";
  ckpt.config["seed"] = std::to_string(model.seed());
  ckpt.config["step"] = std::to_string(step);
  for (const auto& [k, v] : extra) ckpt.config[k] = v;
  for (const auto& [name, t] : model.params().entries()) {
    Record r{name, t.shape(), {}};
    r.values.assign(t.data().begin(), t.data().end());
    ckpt.records.push_back(std::move(r));
  }
  return ckpt;
}

template <typename T>
gpt::GptModel<T> restore_model(const Checkpoint& ckpt) {
  gpt::GptModel<T> model(ckpt.model_config(), ckpt.seed());
  for (const auto& [name, t] : model.params().entries()) {
    const Record* r = ckpt.find(name);
    if (!r) throw std::runtime_error("checkpoint: missing parameter '" + name + "'");
    if (r->shape != t.shape()) {
      throw std::runtime_error("checkpoint: parameter '" + name + "' has shape " +
                               shape_str(r->shape) + ", model expects " + shape_str(t.shape()));
    }
    auto dst = t;
    std::ranges::transform(r->values, dst.data().begin(), [](double v) { return T(v); });
  }
  return model;
}

template Checkpoint capture(const gpt::GptModel<float>&, std::uint64_t,
                            const std::map<std::string, std::string>&);
template Checkpoint capture(const gpt::GptModel<double>&, std::uint64_t,
                            const std::map<std::string, std::string>&);
template gpt::GptModel<float> restore_model(const Checkpoint&);
template gpt::GptModel<double> restore_model(const Checkpoint&);

}  // namespace splm::ckpt
