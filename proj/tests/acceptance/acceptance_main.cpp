// Acceptance run: one PASS/FAIL line per criterion. The desk-scale LM
// experiment is slow (hours) and only runs with --slow.

#include <CLI11.hpp>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <numeric>
#include <random>
#include <sstream>
#include <string>

#include "helpers.hpp"
#include "oracles.hpp"
#include "splm/adaptive_mask.hpp"
#include "splm/corpus.hpp"
#include "splm/dct.hpp"
#include "splm/gpt.hpp"
#include "splm/suite.hpp"
#include "splm/train.hpp"

using namespace splm;
using testing_support::tensor;
using TD = Tensor<double>;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool passed = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

const FilterVariant kVariants[] = {FilterVariant::none, FilterVariant::single_scale,
                                   FilterVariant::multi_scale, FilterVariant::token_adaptive};

oracle::Mat kernel_rows(const filter::FilterBank<double>& bank) {
  oracle::Mat rows;
  for (const auto& k : bank.kernels) {
    const std::size_t len = k.dim(1);
    for (std::size_t r = 0; r < k.dim(0); ++r)
      rows.emplace_back(k.data().begin() + r * len, k.data().begin() + (r + 1) * len);
  }
  return rows;
}

std::vector<int> random_tokens(std::mt19937_64& rng, std::size_t n) {
  std::vector<int> t(n);
  for (auto& v : t) v = int(rng() % 27);
  return t;
}

// Reference filter shapes on a small trunk so every variant runs in seconds.
ModelConfig causality_model(FilterVariant v) {
  ModelConfig m;
  m.n_layers = 2;
  m.d_model = 32;
  m.d_ff = 64;
  m.n_heads = 4;
  m.context_len = 64;
  m.head_hidden = 64;
  m.filter.variant = v;
  return m;
}

Outcome check_causality(std::uint64_t seed) {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(seed);
  const std::size_t L = 64;
  std::size_t cases = 0, failures = 0;
  for (auto v : kVariants) {
    gpt::GptModel<double> model(causality_model(v), seed);
    // Random parameters: zero-init mix or mask weights would hide leaks.
    testing_support::randomize(model.params(), rng, 0.3);
    for (int c = 0; c < 50; ++c, ++cases) {
      auto tokens = random_tokens(rng, L);
      const std::size_t p = rng() % (L - 1);
      auto changed = tokens;
      for (std::size_t q = p + 1; q < L; ++q) changed[q] = (tokens[q] + 1 + int(rng() % 26)) % 27;
      const auto a = model.forward(tokens, 1, L).to_vector();
      const auto b = model.forward(changed, 1, L).to_vector();
      bool same = true;
      for (std::size_t i = 0; i < (p + 1) * 27 && same; ++i) same = a[i] == b[i];
      // The perturbation must be visible downstream, otherwise the check is vacuous.
      bool moved = false;
      for (std::size_t i = (p + 1) * 27; i < L * 27 && !moved; ++i) moved = a[i] != b[i];
      if (!same || !moved) ++failures;
    }
  }
  const double secs = seconds_since(t0);
  std::ostringstream os;
  os << cases << " cases over 4 variants at L=64, " << failures << " failing, " << secs << " s";
  return {failures == 0 && secs < 60, os.str()};
}

Outcome check_gradients(std::uint64_t seed) {
  const auto t0 = Clock::now();
  const auto results = suite::gradient_suite(seed);
  std::size_t failed = 0;
  double worst_prim = 0, worst_comp = 0;
  std::string first_bad;
  for (const auto& r : results) {
    if (!r.passed) {
      ++failed;
      if (first_bad.empty()) first_bad = r.name;
    }
    auto& worst = r.tolerance == suite::kPrimitiveTol ? worst_prim : worst_comp;
    worst = std::max(worst, r.rel_err);
  }
  const double secs = seconds_since(t0);
  std::ostringstream os;
  os << results.size() << " checks, " << failed << " failing" << (first_bad.empty() ? "" : " (")
     << first_bad << (first_bad.empty() ? "" : ")") << ", worst primitive " << worst_prim
     << ", worst composite " << worst_comp << ", " << secs << " s";
  return {failed == 0 && secs < 120, os.str()};
}

Outcome check_oracles(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const int n = 100;
  std::map<std::string, int> mismatches;
  auto uniform = [&](std::size_t lo, std::size_t hi) { return lo + rng() % (hi - lo + 1); };

  for (int i = 0; i < n; ++i) {
    const std::size_t L = uniform(1, 32), K = uniform(1, 32);
    auto s = oracle::random_vec(rng, L);
    auto h = oracle::random_vec(rng, K);
    if (ops::causal_conv1d(tensor({L}, s), tensor({K}, h)).to_vector() != oracle::conv(s, h))
      ++mismatches["conv"];
  }
  for (int i = 0; i < n; ++i) {
    FilterConfig c;
    c.variant = FilterVariant::single_scale;
    c.channels = uniform(1, 8);
    c.single_length = uniform(1, 16);
    nn::ParameterStore<double> store(seed + i);
    auto bank = filter::FilterBank<double>::create(store, "b", c);
    testing_support::randomize(store, rng, 1.0);
    const std::size_t L = uniform(1, 32);
    auto e = oracle::random_vec(rng, L);
    if (filter::filter_fixed(tensor({L}, e), bank).to_vector() !=
        oracle::filter(e, kernel_rows(bank), testing_support::values(bank.mix)))
      ++mismatches["filter_fixed"];
  }
  for (int i = 0; i < n; ++i) {
    FilterConfig c;
    c.variant = FilterVariant::multi_scale;
    c.channels = 8;
    c.scale_lengths.clear();
    for (int j = 0; j < 4; ++j) c.scale_lengths.push_back(uniform(1, 31));
    nn::ParameterStore<double> store(seed + 1000 + i);
    auto bank = filter::FilterBank<double>::create(store, "b", c);
    testing_support::randomize(store, rng, 1.0);
    const std::size_t L = uniform(1, 32);
    auto e = oracle::random_vec(rng, L);
    if (filter::filter_multiscale(tensor({L}, e), bank).to_vector() !=
        oracle::filter(e, kernel_rows(bank), testing_support::values(bank.mix)))
      ++mismatches["filter_multiscale"];
  }
  for (int i = 0; i < n; ++i) {
    FilterConfig c;
    c.variant = FilterVariant::single_scale;
    c.channels = 8;
    c.single_length = uniform(1, 16);
    MaskDecoderConfig mc;
    mc.bottleneck = 8;
    mc.heads = 2;
    mc.ff = 16;
    mc.combine = i % 2 ? MaskCombine::multiply : MaskCombine::replace;
    nn::ParameterStore<double> store(seed + 2000 + i);
    auto bank = filter::FilterBank<double>::create(store, "b", c);
    auto dec = mask::MaskDecoder<double>::create(store, "m", 8, 32, mc);
    testing_support::randomize(store, rng, 0.8);
    const std::size_t L = uniform(1, 32);
    auto e = oracle::random_vec(rng, L);
    const auto ft = mask::filter_adaptive(tensor({L}, e), bank, dec).to_vector();
    const auto w = mask::compute_token_weights(filter::decompose(tensor({1, L}, e), bank), dec);
    oracle::Mat W(L, oracle::Vec(8));
    for (std::size_t t = 0; t < L; ++t)
      for (std::size_t k = 0; k < 8; ++k) {
        W[t][k] = w.data()[t * 8 + k];
        if (mc.combine == MaskCombine::multiply) W[t][k] *= bank.mix.data()[k];
      }
    if (ft != oracle::filter_tokenwise(e, kernel_rows(bank), W)) ++mismatches["filter_adaptive"];
  }
  for (int i = 0; i < n; ++i) {
    const std::size_t L = uniform(1, 32);
    auto x = oracle::random_vec(rng, L);
    const auto X = dct::dct2<double>(x);
    if (X != oracle::dct2(x) || dct::idct2<double>(X) != oracle::idct2(X))
      ++mismatches["dct2/idct2"];
  }
  for (int i = 0; i < n; ++i) {
    const std::size_t L = uniform(1, 32);
    auto e = oracle::random_vec(rng, L);
    auto w = oracle::random_vec(rng, L, -2, 2);
    if (dct::spectral_reweight(tensor({L}, e), tensor({L}, w)).to_vector() !=
        oracle::reweight(e, w))
      ++mismatches["spectral_reweight"];
  }
  int total = 0;
  std::ostringstream os;
  os << "6 ops x " << n << " instances, exact;";
  for (const auto& [name, m] : mismatches) {
    total += m;
    os << " " << name << " " << m << " mismatches;";
  }
  if (total == 0) os << " all identical";
  return {total == 0, os.str()};
}

Outcome check_identities(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::ostringstream os;
  bool ok = true;

  // Zero mix (and zero mask output) keeps every filtered model on the baseline function.
  auto base_cfg = causality_model(FilterVariant::none);
  gpt::GptModel<double> base(base_cfg, seed);
  testing_support::randomize(base.params(), rng, 0.3);
  const auto tokens = random_tokens(rng, 2 * 64);
  const auto ref = base.forward(tokens, 2, 64).to_vector();
  for (auto v : {FilterVariant::single_scale, FilterVariant::multi_scale,
                 FilterVariant::token_adaptive}) {
    auto fc = base_cfg.filter;
    fc.variant = v;
    auto m = gpt::insert_into_model(base, fc);
    const bool same = m.forward(tokens, 2, 64).to_vector() == ref;
    ok = ok && same;
    os << to_string(v) << (same ? " bit-identical" : " DIFFERS") << "; ";
  }

  // Spectral weights at 1 against the same classifier without them.
  dct::ClassifierConfig cc;
  dct::DctClassifier<double> with(cc, seed);
  cc.use_dct = false;
  dct::DctClassifier<double> without(cc, seed);
  auto x = oracle::random_vec(rng, 4 * cc.tokens * cc.input_dim);
  const auto a = with.forward(x, 4).to_vector();
  const auto b = without.forward(x, 4).to_vector();
  double diff = 0;
  for (std::size_t i = 0; i < a.size(); ++i) diff = std::max(diff, std::abs(a[i] - b[i]));
  ok = ok && diff < 1e-6;
  os << "dct w=1 max diff " << diff << "; ";

  // Constant token weights against the static filter.
  FilterConfig fc;
  fc.variant = FilterVariant::single_scale;
  fc.channels = 8;
  nn::ParameterStore<double> store(seed);
  auto bank = filter::FilterBank<double>::create(store, "b", fc);
  testing_support::randomize(store, rng, 1.0);
  auto e = tensor({3, 32}, oracle::random_vec(rng, 96));
  const auto tf = filter::decompose(e, bank);
  std::vector<double> wv(3 * 32 * 8);
  for (std::size_t i = 0; i < wv.size(); ++i) wv[i] = bank.mix.data()[i % 8];
  const bool exact = mask::apply_token_weights(tf, tensor({3, 32, 8}, wv)).to_vector() ==
                     filter::filter_fixed(e, bank).to_vector();
  ok = ok && exact;
  os << "constant W " << (exact ? "exact" : "DIFFERS");
  return {ok, os.str()};
}

Outcome check_anchors(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::ostringstream os;
  gpt::GptModel<double> model(causality_model(FilterVariant::multi_scale), seed);
  std::vector<std::uint8_t> ids(4000);
  for (auto& v : ids) v = std::uint8_t(rng() % 27);
  const double nll = train::evaluate(model, ids, 8);
  const double anchor_err = std::abs(nll - std::log(27.0));

  auto x = oracle::random_vec(rng, 256);
  const auto X = dct::dct2<double>(x);
  const auto back = dct::idct2<double>(X);
  double rt = 0, ex = 0, eX = 0;
  for (std::size_t i = 0; i < 256; ++i) {
    rt = std::max(rt, std::abs(back[i] - x[i]));
    ex += x[i] * x[i];
    eX += X[i] * X[i];
  }
  const double parseval = std::abs(std::sqrt(ex) - std::sqrt(eX));
  char buf[200];
  std::snprintf(buf, sizeof buf,
                "uniform NLL %.12f (|err| %.2e); DCT round trip L=256 %.2e; Parseval %.2e", nll,
                anchor_err, rt, parseval);
  return {anchor_err < 1e-9 && rt < 1e-9 && parseval < 1e-9, buf};
}

Outcome check_budget() {
  const auto base_cfg = reference_baseline_config();
  const std::size_t base = gpt::GptModel<float>(base_cfg, 1).param_count();
  const std::size_t formula = oracle::gpt_param_count(27, 256, 128, 512, 8, 2048);
  std::ostringstream os;
  bool ok = base == formula;
  os << "baseline " << base << " (formula " << formula << ")";
  const std::pair<FilterVariant, std::size_t> expected[] = {
      {FilterVariant::single_scale, 9216}, {FilterVariant::multi_scale, 17280}};
  for (auto [v, extra] : expected) {
    auto cfg = base_cfg;
    cfg.filter.variant = v;
    const std::size_t n = gpt::GptModel<float>(cfg, 1).param_count();
    const double frac = double(n - base) / double(base);
    ok = ok && n - base == extra && frac < 0.01;
    char buf[120];
    std::snprintf(buf, sizeof buf, "; %s +%zu (%.3f%%)", to_string(v).c_str(), n - base,
                  100 * frac);
    os << buf;
  }
  return {ok, os.str()};
}

Outcome check_synth(std::uint64_t seed) {
  const auto t0 = Clock::now();
  suite::SynthExperiment exp;
  exp.seeds = {seed, seed + 1, seed + 2};
  const auto report = suite::run_synth_classify(exp, [](const std::string& line) {
    std::fprintf(stderr, "  synth %s\n", line.c_str());
  });
  const double secs = seconds_since(t0);
  const double tr = report.mean_trainable(), fr = report.mean_frozen();
  // "Far above chance": at least twice the chance rate.
  const double floor = 2 * report.chance;
  char buf[200];
  std::snprintf(buf, sizeof buf,
                "mean accuracy trainable %.4f, frozen %.4f, chance %.4f (floor %.2f), %.0f s", tr,
                fr, report.chance, floor, secs);
  return {tr >= fr && tr >= floor && fr >= floor && secs < 1800, buf};
}

// Desk-scale LM comparison.
struct DeskOptions {
  std::string corpus;
  std::string out_dir = "desk_runs";
  std::size_t chars = 5'000'000;
  std::size_t steps = 20'000;
  std::size_t batch = 32;
  std::size_t context = 256;
  std::size_t eval_interval = 250;
  std::size_t eval_windows = 0;
  std::size_t seeds = 3;
  std::string precision = "f64";
};

corpus::CorpusSplit desk_corpus(const DeskOptions& o) {
  fs::path path = o.corpus;
  if (path.empty()) {
    const char* root = std::getenv("SPLM_DATA_DIR");
    if (!root || !*root) throw std::runtime_error("no corpus: pass --desk-corpus or set SPLM_DATA_DIR");
    path = fs::path(root) / "text8";
  }
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::string raw(o.chars, '\0');
  in.read(raw.data(), static_cast<std::streamsize>(raw.size()));
  raw.resize(static_cast<std::size_t>(in.gcount()));
  auto text = corpus::normalize(raw);
  if (text.size() < o.chars) std::fprintf(stderr, "  desk: corpus has only %zu chars\n", text.size());
  return corpus::make_split(corpus::encode(text));
}

template <typename T>
std::vector<train::MetricRecord> desk_run(const DeskOptions& o, const corpus::CorpusSplit& data,
                                          FilterVariant v, std::uint64_t seed) {
  RunConfig cfg;
  cfg.model.n_layers = 2;
  cfg.model.d_model = 64;
  cfg.model.d_ff = 256;
  cfg.model.n_heads = 8;
  cfg.model.context_len = o.context;
  cfg.model.filter.variant = v;
  cfg.train.seed = seed;
  cfg.train.precision = parse_precision(o.precision);
  cfg.train.steps = o.steps;
  cfg.train.batch_size = o.batch;
  cfg.train.eval_interval = o.eval_interval;
  cfg.train.eval_max_windows = o.eval_windows;
  const auto dir = fs::path(o.out_dir);
  fs::create_directories(dir);
  const auto stem = to_string(v) + "_seed" + std::to_string(seed);
  cfg.metrics_path = (dir / (stem + ".jsonl")).string();
  std::ofstream(dir / (stem + ".config")) << cfg.to_text();
  std::ofstream log(cfg.metrics_path);
  std::vector<train::MetricRecord> records;
  train::Trainer<T> trainer(cfg, data);
  trainer.train(o.steps, [&](const train::MetricRecord& r) {
    records.push_back(r);
    log << train::to_json_line(r) << "\n" << std::flush;
    if (r.split == "dev")
      std::fprintf(stderr, "  desk %s step %llu dev %.4f\n", stem.c_str(),
                   static_cast<unsigned long long>(r.step), r.nll_nats);
  });
  return records;
}

// Seed-mean dev curve (all runs share eval steps).
std::vector<train::MetricRecord> mean_curve(const std::vector<std::vector<train::MetricRecord>>& runs) {
  std::vector<train::MetricRecord> out;
  for (const auto& r : runs.front())
    if (r.split == "dev") out.push_back(r);
  for (auto& rec : out) {
    double s = 0;
    for (const auto& run : runs)
      for (const auto& r : run)
        if (r.split == "dev" && r.step == rec.step) s += r.nll_nats;
    rec.nll_nats = s / double(runs.size());
  }
  return out;
}

Outcome check_desk(const DeskOptions& o) {
  const auto t0 = Clock::now();
  const auto data = desk_corpus(o);
  std::map<FilterVariant, std::vector<train::MetricRecord>> curves;
  std::map<FilterVariant, double> final_nll;
  for (auto v : kVariants) {
    std::vector<std::vector<train::MetricRecord>> runs;
    for (std::uint64_t s = 1; s <= o.seeds; ++s)
      runs.push_back(o.precision == "f32" ? desk_run<float>(o, data, v, s)
                                          : desk_run<double>(o, data, v, s));
    curves[v] = mean_curve(runs);
    final_nll[v] = curves[v].back().nll_nats;
  }
  const double b = final_nll[FilterVariant::none], s = final_nll[FilterVariant::single_scale],
               m = final_nll[FilterVariant::multi_scale],
               a = final_nll[FilterVariant::token_adaptive];
  // Target: the baseline's final seed-mean dev NLL, reached by the baseline at its last eval.
  double sp = std::numeric_limits<double>::quiet_NaN();
  std::string sp_note;
  try {
    sp = train::speedup(curves[FilterVariant::none], curves[FilterVariant::multi_scale], b);
  } catch (const train::NotComparable& e) {
    sp_note = std::string(" (") + e.what() + ")";
  }
  const bool ordered = m <= s && s <= b && a <= m;
  char buf[400];
  std::snprintf(buf, sizeof buf,
                "%zu chars, %zu steps x batch %zu x ctx %zu, %zu seeds; seed-mean dev NLL "
                "baseline %.4f single %.4f multi %.4f adaptive %.4f; speedup(baseline, multi) "
                "%.1f%%%s; %.0f s",
                data.train.size() + data.dev.size() + data.test.size(), o.steps, o.batch,
                o.context, o.seeds, b, s, m, a, sp, sp_note.c_str(), seconds_since(t0));
  std::ofstream(fs::path(o.out_dir) / "summary.txt") << buf << "\n";
  return {ordered && std::isfinite(sp) && sp > 0, buf};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance criteria"};
  std::uint64_t seed = 1;
  bool slow = false;
  bool synth = true;
  DeskOptions desk;
  app.add_option("--seed", seed, "seed for random instances");
  app.add_flag("--slow", slow, "also run the desk-scale LM experiment");
  app.add_flag("!--skip-synth", synth, "skip the synthetic classification run");
  app.add_option("--desk-corpus", desk.corpus, "text8 (or other text) file");
  app.add_option("--desk-out", desk.out_dir, "directory for desk-run metrics");
  app.add_option("--desk-chars", desk.chars, "characters taken from the corpus head");
  app.add_option("--desk-steps", desk.steps, "training steps per run");
  app.add_option("--desk-batch", desk.batch, "batch size");
  app.add_option("--desk-context", desk.context, "context length");
  app.add_option("--desk-eval-interval", desk.eval_interval, "steps between dev evals");
  app.add_option("--desk-eval-windows", desk.eval_windows, "dev windows per eval (0 = all)");
  app.add_option("--desk-seeds", desk.seeds, "seeds per variant");
  app.add_option("--desk-precision", desk.precision, "f32 or f64");
  CLI11_PARSE(app, argc, argv);

  int failed = 0;
  auto report = [&](const char* name, const std::function<Outcome()>& fn) {
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    if (!o.passed) ++failed;
    std::printf("[%s] %-28s %s\n", o.passed ? "PASS" : "FAIL", name, o.detail.c_str());
    std::fflush(stdout);
  };

  report("causality", [&] { return check_causality(seed); });
  report("gradient_suite", [&] { return check_gradients(seed); });
  report("oracle_equivalence", [&] { return check_oracles(seed); });
  report("identity_reductions", [&] { return check_identities(seed); });
  report("numeric_anchors", [&] { return check_anchors(seed); });
  report("parameter_budget", [] { return check_budget(); });
  if (synth) {
    report("synthetic_classification", [&] { return check_synth(seed); });
  } else {
    std::printf("[SKIP] %-28s --skip-synth given\n", "synthetic_classification");
  }
  if (slow) {
    report("desk_experiment", [&] { return check_desk(desk); });
  } else {
    std::printf("[SKIP] %-28s slow tier (hours); run with --slow\n", "desk_experiment");
  }
  std::printf("%d criteria failed\n", failed);
  return failed == 0 ? 0 : 1;
}
