// splm: data prep, training, evaluation and diagnostics for the filtered
// character LM.

#include <CLI11.hpp>

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include "splm/checkpoint.hpp"
#include "splm/config.hpp"
#include "splm/corpus.hpp"
#include "splm/dct.hpp"
#include "splm/spectral_filter.hpp"
#include "splm/suite.hpp"
#include "splm/train.hpp"

namespace fs = std::filesystem;
using namespace splm;

namespace {

constexpr int kExitFailure = 1;
constexpr int kExitConfig = 2;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Relative paths that do not exist are looked up under $SPLM_DATA_DIR.
fs::path resolve_data_path(const std::string& p) {
  fs::path path(p);
  if (fs::exists(path) || path.is_absolute()) return path;
  if (const char* root = std::getenv("SPLM_DATA_DIR"); root && *root) {
    fs::path alt = fs::path(root) / path;
    if (fs::exists(alt)) return alt;
  }
  return path;
}

bool is_split_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  char magic[4] = {};
  in.read(magic, 4);
  return in.gcount() == 4 && std::string(magic, 4) == "SPLM";
}

corpus::CorpusSplit load_corpus(const std::string& spec) {
  if (spec.empty()) throw UsageError("no corpus given (set 'corpus' in the config or --corpus)");
  const auto path = resolve_data_path(spec);
  if (!fs::exists(path)) throw UsageError("corpus not found: " + spec);
  return is_split_file(path) ? corpus::read_split_file(path) : corpus::load_text_corpus(path);
}

std::string fmt_nll(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

struct Overrides {
  std::optional<std::uint64_t> seed;
  std::optional<std::string> precision;
  std::optional<std::size_t> steps;
  std::optional<std::string> variant;

  void apply(RunConfig& cfg) const {
    if (seed) cfg.set("seed", std::to_string(*seed));
    if (precision) cfg.set("precision", *precision);
    if (steps) cfg.set("steps", std::to_string(*steps));
    if (variant) cfg.set("filter_variant", *variant);
  }
};

int cmd_prepare(const std::string& input, const std::string& out) {
  const auto path = resolve_data_path(input);
  if (!fs::exists(path)) throw UsageError("cannot read corpus " + input);
  const auto split = corpus::load_text_corpus(path);
  if (split.train.empty() || split.dev.size() < 2 || split.test.size() < 2) {
    throw std::runtime_error("corpus too short to split: " + std::to_string(
        split.train.size() + split.dev.size() + split.test.size()) + " symbols");
  }
  if (fs::path(out).has_parent_path()) fs::create_directories(fs::path(out).parent_path());
  corpus::write_split_file(out, split);
  std::cout << "train " << split.train.size() << "\ndev " << split.dev.size() << "\ntest "
            << split.test.size() << "\nsource_sha256 " << split.source_sha256 << "\nchecksum "
            << corpus::split_checksum(split) << "\n";
  return 0;
}

fs::path sibling(const fs::path& metrics, const std::string& suffix) {
  auto p = metrics;
  p.replace_extension(suffix);
  return p;
}

template <typename T>
int run_train(const RunConfig& cfg, const std::optional<std::string>& resume) {
  const auto data = load_corpus(cfg.corpus);
  std::optional<train::Trainer<T>> trainer;
  if (resume) trainer.emplace(cfg, data, ckpt::read(*resume));
  else trainer.emplace(cfg, data);

  const fs::path metrics(cfg.metrics_path);
  if (metrics.has_parent_path()) fs::create_directories(metrics.parent_path());
  {
    std::ofstream conf(sibling(metrics, ".config"));
    conf << trainer->config().to_text();
  }
  std::ofstream log(metrics, resume ? std::ios::app : std::ios::trunc);
  if (!log) throw std::runtime_error("cannot write metrics log " + metrics.string());
  auto sink = [&](const train::MetricRecord& r) {
    log << train::to_json_line(r) << "\n";
    log.flush();
    std::cerr << "step " << r.step << " " << r.split << " " << fmt_nll(r.nll_nats) << "\n";
  };

  const std::size_t done = trainer->step();
  const std::size_t todo = cfg.train.steps > done ? cfg.train.steps - done : 0;
  const fs::path ckpt_path = fs::path(cfg.checkpoint_dir) / "final.spck";
  try {
    const auto last = trainer->train(todo, sink);
    auto snapshot = trainer->checkpoint();
    snapshot.config["corpus"] = cfg.corpus;
    fs::create_directories(cfg.checkpoint_dir);
    ckpt::write(ckpt_path, snapshot);
    std::cout << "final_step " << last.step << "\ndev_nll " << fmt_nll(last.nll_nats)
              << "\ncheckpoint " << ckpt_path.string() << "\n";
  } catch (const train::TrainingAborted& e) {
    std::cerr << "training aborted: " << e.what() << "\n";
    return kExitFailure;
  }
  return 0;
}

int cmd_train(const std::string& config_path, const Overrides& ov,
              const std::optional<std::string>& resume) {
  auto cfg = RunConfig::load(config_path);
  ov.apply(cfg);
  cfg.model.validate();
  return cfg.train.precision == Precision::f32 ? run_train<float>(cfg, resume)
                                               : run_train<double>(cfg, resume);
}

template <typename T>
int run_eval(const ckpt::Checkpoint& ck, const corpus::CorpusSplit& data, const std::string& split,
             const std::optional<std::string>& mask_csv) {
  const auto model = ckpt::restore_model<T>(ck);
  auto setting = [&](const char* key, std::size_t fallback) {
    auto it = ck.config.find(key);
    return it == ck.config.end() ? fallback : static_cast<std::size_t>(std::stoull(it->second));
  };
  const auto tokens = data.split(split);
  const double nll = train::evaluate(model, tokens, setting("eval_batch", 32),
                                     setting("eval_max_windows", 0));
  std::cout << fmt_nll(nll) << "\n";
  if (mask_csv) {
    if (model.config().filter.variant != FilterVariant::token_adaptive) {
      throw UsageError("--mask-csv needs a token_adaptive checkpoint");
    }
    const std::size_t len = std::min(model.config().context_len, tokens.size());
    std::vector<int> ids(tokens.begin(), tokens.begin() + static_cast<std::ptrdiff_t>(len));
    const auto maps = model.mask_heatmaps(ids, 1, len);
    std::ofstream out(*mask_csv);
    out << "site,token,channel,mean_abs_weight\n";
    const std::size_t m = model.config().filter.channels;
    for (std::size_t s = 0; s < maps.size(); ++s)
      for (std::size_t t = 0; t < len; ++t)
        for (std::size_t k = 0; k < m; ++k)
          out << model.sites()[s].layer << "," << t << "," << k << "," << maps[s][t * m + k]
              << "\n";
  }
  return 0;
}

int cmd_eval(const std::string& checkpoint, const std::string& split,
             const std::optional<std::string>& corpus_override,
             const std::optional<std::string>& mask_csv) {
  if (!fs::exists(checkpoint)) throw UsageError("checkpoint not found: " + checkpoint);
  const auto ck = ckpt::read(checkpoint);
  std::string corpus_spec = corpus_override.value_or("");
  if (corpus_spec.empty())
    if (auto it = ck.config.find("corpus"); it != ck.config.end()) corpus_spec = it->second;
  const auto data = load_corpus(corpus_spec);
  if (split != "train" && split != "dev" && split != "test")
    throw UsageError("unknown split '" + split + "'");
  return ck.precision() == Precision::f32 ? run_eval<float>(ck, data, split, mask_csv)
                                          : run_eval<double>(ck, data, split, mask_csv);
}

template <typename T>
void export_kernels(const ckpt::Checkpoint& ck, std::ostream& out) {
  const auto model = ckpt::restore_model<T>(ck);
  filter::write_kernel_csv_header(out);
  for (const auto& site : model.sites()) filter::write_kernel_csv(out, site.layer, site.bank);
}

int cmd_export_kernels(const std::string& checkpoint, const std::string& out_csv) {
  if (!fs::exists(checkpoint)) throw UsageError("checkpoint not found: " + checkpoint);
  const auto ck = ckpt::read(checkpoint);
  if (ck.model_config().filter.variant == FilterVariant::none) {
    throw UsageError(checkpoint + " is a baseline checkpoint (filter_variant=none); "
                     "it has no filter kernels to export");
  }
  std::ofstream out(out_csv);
  if (!out) throw std::runtime_error("cannot write " + out_csv);
  if (ck.precision() == Precision::f32) export_kernels<float>(ck, out);
  else export_kernels<double>(ck, out);
  return 0;
}

int cmd_gradcheck(std::uint64_t seed) {
  const auto results = suite::gradient_suite(seed);
  bool ok = true;
  std::printf("%-40s %-11s %-11s %-7s %s\n", "check", "rel_err", "coord_max", "tol", "result");
  for (const auto& r : results) {
    std::printf("%-40s %-11.3e %-11.3e %-7.0e %s\n", r.name.c_str(), r.rel_err, r.coord_rel_err,
                r.tolerance, r.passed ? "PASS" : "FAIL");
    ok = ok && r.passed;
  }
  std::printf("%zu checks, %s\n", results.size(), ok ? "all passed" : "FAILURES");
  return ok ? 0 : kExitFailure;
}

suite::SynthExperiment synth_from_config(const std::string& path) {
  suite::SynthExperiment exp;
  if (path.empty()) return exp;
  std::ifstream in(path);
  if (!in) throw UsageError("cannot read config " + path);
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  for (const auto& [k, v] : parse_key_values(text)) {
    auto num = [&] { return static_cast<std::size_t>(std::stoull(v)); };
    if (k == "classes") exp.data.classes = num();
    else if (k == "length") exp.data.length = num();
    else if (k == "dim") exp.data.dim = num();
    else if (k == "noise") exp.data.noise = std::stod(v);
    else if (k == "shared_direction") {
      if (v != "true" && v != "false") throw ConfigError("shared_direction must be true or false");
      exp.data.shared_direction = v == "true";
    } else if (k == "phase_spread") exp.data.phase_spread = std::stod(v);
    else if (k == "train_count") exp.train_count = num();
    else if (k == "test_count") exp.test_count = num();
    else if (k == "steps") exp.steps = num();
    else if (k == "batch_size") exp.batch = num();
    else if (k == "learning_rate") exp.learning_rate = std::stod(v);
    else if (k == "seeds") {
      exp.seeds.clear();
      std::istringstream list(v);
      for (std::string item; std::getline(list, item, ',');)
        exp.seeds.push_back(std::stoull(item));
      if (exp.seeds.empty()) throw ConfigError("seeds must list at least one seed");
    } else if (k == "n_layers") exp.model.n_layers = num();
    else if (k == "d_model") exp.model.d_model = num();
    else if (k == "n_heads") exp.model.n_heads = num();
    else if (k == "d_ff") exp.model.d_ff = num();
    else if (k == "loss") {
      if (v == "huber") exp.model.loss = dct::ClassifierLoss::huber;
      else if (v == "cross_entropy") exp.model.loss = dct::ClassifierLoss::cross_entropy;
      else throw ConfigError("loss must be huber or cross_entropy");
    } else {
      throw ConfigError("unknown synth-classify key '" + k + "'");
    }
  }
  return exp;
}

int cmd_synth_classify(const std::string& config_path, std::optional<std::uint64_t> seed,
                       std::optional<std::size_t> steps, const std::optional<std::string>& dump) {
  auto exp = synth_from_config(config_path);
  if (seed) exp.seeds = {*seed, *seed + 1, *seed + 2};
  if (steps) exp.steps = *steps;
  if (dump) {
    auto dc = exp.data;
    dc.seed = exp.seeds.front();
    dct::write_dataset_file(*dump, dct::make_synthetic(dc, exp.train_count, "train"));
  }
  const auto report = suite::run_synth_classify(exp, [](const std::string& line) {
    std::cerr << line << "\n";
  });
  std::cout << report.to_text();
  const bool ok = report.mean_trainable() >= report.mean_frozen();
  std::cout << "trainable >= frozen: " << (ok ? "yes" : "no") << "\n";
  return ok ? 0 : kExitFailure;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"splm: spectrally filtered character language models"};
  app.require_subcommand(1);

  std::string config_path, input, out, checkpoint, split = "dev";
  std::optional<std::string> corpus_override, mask_csv, resume, dump;
  Overrides ov;

  auto* prepare = app.add_subcommand("prepare", "normalize, encode and split a text corpus");
  prepare->add_option("corpus", input, "plain-text corpus")->required();
  prepare->add_option("out", out, "split file to write")->required();

  auto* train = app.add_subcommand("train", "train a model from a key=value config");
  train->add_option("--config", config_path, "run config")->required();
  train->add_option("--seed", ov.seed, "override seed");
  train->add_option("--precision", ov.precision, "f32 or f64")
      ->check(CLI::IsMember({"f32", "f64"}));
  train->add_option("--steps", ov.steps, "override total steps");
  train->add_option("--variant", ov.variant, "none, single_scale, multi_scale, token_adaptive");
  train->add_option("--resume", resume, "continue from a checkpoint");

  auto* eval = app.add_subcommand("eval", "print the mean NLL (nats) of a checkpoint");
  eval->add_option("checkpoint", checkpoint)->required();
  eval->add_option("split", split, "train, dev or test")->capture_default_str();
  eval->add_option("--corpus", corpus_override, "corpus or split file");
  eval->add_option("--mask-csv", mask_csv, "write token-adaptive weight heatmaps");

  auto* exp = app.add_subcommand("export-kernels", "write filter kernels as CSV");
  exp->add_option("checkpoint", checkpoint)->required();
  exp->add_option("out", out)->required();

  std::uint64_t gc_seed = 1;
  auto* gc = app.add_subcommand("gradcheck", "finite-difference gradient checks");
  gc->add_option("--seed", gc_seed)->capture_default_str();

  std::optional<std::uint64_t> synth_seed;
  std::optional<std::size_t> synth_steps;
  auto* synth = app.add_subcommand("synth-classify", "spectral reweighting on a synthetic task");
  synth->add_option("--config", config_path, "key=value experiment config");
  synth->add_option("--seed", synth_seed, "first of three seeds");
  synth->add_option("--steps", synth_steps, "training steps per run");
  synth->add_option("--dump-dataset", dump, "write the first seed's training set");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    // Bad flags and values are usage errors, like bad config keys.
    return code == 0 ? 0 : kExitConfig;
  }

  try {
    if (*prepare) return cmd_prepare(input, out);
    if (*train) return cmd_train(config_path, ov, resume);
    if (*eval) return cmd_eval(checkpoint, split, corpus_override, mask_csv);
    if (*exp) return cmd_export_kernels(checkpoint, out);
    if (*gc) return cmd_gradcheck(gc_seed);
    if (*synth) return cmd_synth_classify(config_path, synth_seed, synth_steps, dump);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitFailure;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitFailure;
  }
  return 0;
}
