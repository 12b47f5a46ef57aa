#include "splm/config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <numeric>
#include <sstream>

namespace splm {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string fmt_double(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, end);
}

double parse_double(const std::string& key, const std::string& v) {
  double out = 0;
  auto [end, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || end != v.data() + v.size()) {
    throw ConfigError("config: '" + key + "' expects a number, got '" + v + "'");
  }
  return out;
}

std::uint64_t parse_uint(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  auto [end, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || end != v.data() + v.size()) {
    throw ConfigError("config: '" + key + "' expects a non-negative integer, got '" + v + "'");
  }
  return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("config: '" + key + "' expects true/false, got '" + v + "'");
}

std::vector<std::size_t> parse_list(const std::string& key, const std::string& v) {
  std::vector<std::size_t> out;
  if (v.empty() || v == "all") return out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_uint(key, trim(item)));
  return out;
}

std::string fmt_list(const std::vector<std::size_t>& xs, const char* empty) {
  if (xs.empty()) return empty;
  std::string out;
  for (std::size_t i = 0; i < xs.size(); ++i) out += (i ? "," : "") + std::to_string(xs[i]);
  return out;
}

// Applies a model-section key. Returns false when the key is not a model key.
bool set_model_key(ModelConfig& m, const std::string& key, const std::string& v) {
  auto& f = m.filter;
  if (key == "n_layers") m.n_layers = parse_uint(key, v);
  else if (key == "d_model") m.d_model = parse_uint(key, v);
  else if (key == "d_ff") m.d_ff = parse_uint(key, v);
  else if (key == "n_heads") m.n_heads = parse_uint(key, v);
  else if (key == "context_len") m.context_len = parse_uint(key, v);
  else if (key == "vocab") m.vocab = parse_uint(key, v);
  else if (key == "head_hidden") m.head_hidden = parse_uint(key, v);
  else if (key == "dropout") m.dropout = parse_double(key, v);
  else if (key == "filter_variant") f.variant = parse_variant(v);
  else if (key == "filter_channels") f.channels = parse_uint(key, v);
  else if (key == "filter_length") f.single_length = parse_uint(key, v);
  else if (key == "filter_scales") f.scale_lengths = parse_list(key, v);
  else if (key == "filter_placement") f.placement = parse_list(key, v);
  else if (key == "mask_bottleneck") f.mask.bottleneck = parse_uint(key, v);
  else if (key == "mask_heads") f.mask.heads = parse_uint(key, v);
  else if (key == "mask_ff") f.mask.ff = parse_uint(key, v);
  else if (key == "mask_positional") f.mask.positional = parse_bool(key, v);
  else if (key == "mask_combine") {
    if (v == "replace") f.mask.combine = MaskCombine::replace;
    else if (v == "multiply") f.mask.combine = MaskCombine::multiply;
    else throw ConfigError("config: mask_combine must be replace|multiply");
  } else if (key == "mask_activation") {
    if (v == "linear") f.mask.activation = MaskActivation::linear;
    else if (v == "sigmoid") f.mask.activation = MaskActivation::sigmoid;
    else throw ConfigError("config: mask_activation must be linear|sigmoid");
  } else if (key == "adaptive_base") {
    if (v == "single_scale") f.mask.multi_scale_base = false;
    else if (v == "multi_scale") f.mask.multi_scale_base = true;
    else throw ConfigError("config: adaptive_base must be single_scale|multi_scale");
  } else {
    return false;
  }
  return true;
}

}  // namespace

std::string to_string(FilterVariant v) {
  switch (v) {
    case FilterVariant::none: return "none";
    case FilterVariant::single_scale: return "single_scale";
    case FilterVariant::multi_scale: return "multi_scale";
    case FilterVariant::token_adaptive: return "token_adaptive";
  }
  return "?";
}

std::string to_string(MaskCombine v) { return v == MaskCombine::replace ? "replace" : "multiply"; }
std::string to_string(MaskActivation v) {
  return v == MaskActivation::linear ? "linear" : "sigmoid";
}
std::string to_string(Precision v) { return v == Precision::f32 ? "f32" : "f64"; }

FilterVariant parse_variant(const std::string& s) {
  for (auto v : {FilterVariant::none, FilterVariant::single_scale, FilterVariant::multi_scale,
                 FilterVariant::token_adaptive})
    if (to_string(v) == s) return v;
  throw ConfigError("unknown filter variant '" + s +
                    "' (none|single_scale|multi_scale|token_adaptive)");
}

Precision parse_precision(const std::string& s) {
  if (s == "f32") return Precision::f32;
  if (s == "f64") return Precision::f64;
  throw ConfigError("unknown precision '" + s + "' (f32|f64)");
}

std::vector<std::size_t> FilterConfig::scales() const {
  if (uses_multi_scale()) return scale_lengths;
  return {single_length};
}

std::vector<std::size_t> FilterConfig::kernel_lengths() const {
  const auto sc = scales();
  std::vector<std::size_t> out;
  out.reserve(channels);
  for (auto len : sc) out.insert(out.end(), channels / sc.size(), len);
  return out;
}

void FilterConfig::validate() const {
  if (variant == FilterVariant::none) return;
  if (channels == 0) throw ConfigError("filter: channel count must be positive");
  const auto sc = scales();
  if (sc.empty()) throw ConfigError("filter: no kernel lengths configured");
  for (auto len : sc)
    if (len == 0) throw ConfigError("filter: kernel lengths must be >= 1");
  if (channels % sc.size() != 0) {
    throw ConfigError("filter: " + std::to_string(channels) + " channels not divisible by " +
                      std::to_string(sc.size()) + " scales");
  }
  if (variant == FilterVariant::token_adaptive) {
    if (mask.bottleneck == 0 || mask.heads == 0 || mask.bottleneck % mask.heads != 0) {
      throw ConfigError("mask decoder: bottleneck must be a positive multiple of heads");
    }
  }
}

std::vector<std::size_t> ModelConfig::sites() const {
  if (filter.variant == FilterVariant::none) return {};
  if (!filter.placement.empty()) return filter.placement;
  std::vector<std::size_t> all(n_layers);
  std::iota(all.begin(), all.end(), 0);
  return all;
}

void ModelConfig::validate() const {
  if (n_layers == 0 || d_model == 0 || d_ff == 0 || n_heads == 0 || context_len == 0 ||
      vocab == 0 || head_hidden == 0) {
    throw ConfigError("model: all dimensions must be positive");
  }
  if (d_model % n_heads != 0) {
    throw ConfigError("model: d_model " + std::to_string(d_model) + " not divisible by " +
                      std::to_string(n_heads) + " heads");
  }
  if (dropout < 0 || dropout >= 1) throw ConfigError("model: dropout must be in [0,1)");
  filter.validate();
  for (auto s : filter.placement)
    if (s >= n_layers) {
      throw ConfigError("filter: placement index " + std::to_string(s) + " out of range for " +
                        std::to_string(n_layers) + " layers");
    }
}

std::map<std::string, std::string> parse_key_values(const std::string& text) {
  std::map<std::string, std::string> kv;
  std::stringstream ss(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(ss, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config line " + std::to_string(lineno) + ": expected key=value");
    }
    kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  return kv;
}

std::string format_key_values(const std::map<std::string, std::string>& kv) {
  std::string out;
  for (const auto& [k, v] : kv) out += k + "=" + v + "\n";
  return out;
}

std::map<std::string, std::string> model_config_map(const ModelConfig& m) {
  const auto& f = m.filter;
  return {
      {"n_layers", std::to_string(m.n_layers)},
      {"d_model", std::to_string(m.d_model)},
      {"d_ff", std::to_string(m.d_ff)},
      {"n_heads", std::to_string(m.n_heads)},
      {"context_len", std::to_string(m.context_len)},
      {"vocab", std::to_string(m.vocab)},
      {"head_hidden", std::to_string(m.head_hidden)},
      {"dropout", fmt_double(m.dropout)},
      {"filter_variant", to_string(f.variant)},
      {"filter_channels", std::to_string(f.channels)},
      {"filter_length", std::to_string(f.single_length)},
      {"filter_scales", fmt_list(f.scale_lengths, "")},
      {"filter_placement", fmt_list(f.placement, "all")},
      {"mask_bottleneck", std::to_string(f.mask.bottleneck)},
      {"mask_heads", std::to_string(f.mask.heads)},
      {"mask_ff", std::to_string(f.mask.ff)},
      {"mask_positional", f.mask.positional ? "true" : "false"},
      {"mask_combine", to_string(f.mask.combine)},
      {"mask_activation", to_string(f.mask.activation)},
      {"adaptive_base", f.mask.multi_scale_base ? "multi_scale" : "single_scale"},
  };
}

ModelConfig model_config_from_map(const std::map<std::string, std::string>& kv) {
  ModelConfig m;
  for (const auto& [k, v] : kv) {
    if (!set_model_key(m, k, v)) throw ConfigError("config: unknown model key '" + k + "'");
  }
  m.validate();
  return m;
}

void RunConfig::set(const std::string& key, const std::string& v) {
  if (set_model_key(model, key, v)) return;
  auto& t = train;
  if (key == "seed") t.seed = parse_uint(key, v);
  else if (key == "precision") t.precision = parse_precision(v);
  else if (key == "steps") t.steps = parse_uint(key, v);
  else if (key == "batch_size") t.batch_size = parse_uint(key, v);
  else if (key == "learning_rate") t.learning_rate = parse_double(key, v);
  else if (key == "warmup_steps") t.warmup_steps = parse_uint(key, v);
  else if (key == "adam_beta1") t.adam_beta1 = parse_double(key, v);
  else if (key == "adam_beta2") t.adam_beta2 = parse_double(key, v);
  else if (key == "adam_eps") t.adam_eps = parse_double(key, v);
  else if (key == "clip_norm") t.clip_norm = parse_double(key, v);
  else if (key == "eval_interval") t.eval_interval = parse_uint(key, v);
  else if (key == "eval_max_windows") t.eval_max_windows = parse_uint(key, v);
  else if (key == "eval_batch") t.eval_batch = parse_uint(key, v);
  else if (key == "target_nll") {
    if (v.empty() || v == "none") t.target_nll.reset();
    else t.target_nll = parse_double(key, v);
  } else if (key == "corpus") corpus = v;
  else if (key == "checkpoint_dir") checkpoint_dir = v;
  else if (key == "metrics_path") metrics_path = v;
  else throw ConfigError("config: unknown key '" + key + "'");
}

std::map<std::string, std::string> RunConfig::to_map() const {
  auto kv = model_config_map(model);
  const auto& t = train;
  kv["seed"] = std::to_string(t.seed);
  kv["precision"] = to_string(t.precision);
  kv["steps"] = std::to_string(t.steps);
  kv["batch_size"] = std::to_string(t.batch_size);
  kv["learning_rate"] = fmt_double(t.learning_rate);
  kv["warmup_steps"] = std::to_string(t.warmup_steps);
  kv["adam_beta1"] = fmt_double(t.adam_beta1);
  kv["adam_beta2"] = fmt_double(t.adam_beta2);
  kv["adam_eps"] = fmt_double(t.adam_eps);
  kv["clip_norm"] = fmt_double(t.clip_norm);
  kv["eval_interval"] = std::to_string(t.eval_interval);
  kv["eval_max_windows"] = std::to_string(t.eval_max_windows);
  kv["eval_batch"] = std::to_string(t.eval_batch);
  kv["target_nll"] = t.target_nll ? fmt_double(*t.target_nll) : "none";
  kv["corpus"] = corpus;
  kv["checkpoint_dir"] = checkpoint_dir;
  kv["metrics_path"] = metrics_path;
  return kv;
}

std::string RunConfig::to_text() const { return format_key_values(to_map()); }

RunConfig RunConfig::parse(const std::string& text) {
  RunConfig cfg;
  for (const auto& [k, v] : parse_key_values(text)) cfg.set(k, v);
  cfg.model.validate();
  return cfg;
}

RunConfig RunConfig::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read config " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

ModelConfig reference_baseline_config() { return ModelConfig{}; }

}  // namespace splm
