#include "splm/suite.hpp"

#include <algorithm>
#include <cstdio>
#include <numeric>
#include <sstream>

#include "splm/adaptive_mask.hpp"
#include "splm/grad_check.hpp"
#include "splm/gpt.hpp"
#include "splm/spectral_filter.hpp"
#include "splm/train.hpp"

namespace splm::suite {

namespace {

using TD = Tensor<double>;

TD random_tensor(Rng& rng, Shape shape, double lo = -1, double hi = 1) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(numel(shape));
  for (auto& x : v) x = u(rng);
  return TD::from(std::move(shape), std::move(v));
}

// Values bounded away from 0 so ReLU kinks and finite steps never meet.
TD away_from_zero(Rng& rng, Shape shape) {
  auto t = random_tensor(rng, shape, 0.1, 1.0);
  std::bernoulli_distribution sign(0.5);
  for (auto& x : t.data())
    if (sign(rng)) x = -x;
  return t;
}

// Scalar projection sum(y * r) with fixed random r, so every output
// coordinate contributes a distinct, O(1) weight.
struct Projector {
  std::vector<double> r;
  TD operator()(const TD& y) {
    if (r.size() != y.numel()) {
      Rng rng(derive_seed(0x5eed, y.numel()));
      std::uniform_real_distribution<double> u(-1, 1);
      r.resize(y.numel());
      for (auto& x : r) x = u(rng);
    }
    return ops::sum(ops::mul(y, TD::from(y.shape(), r)));
  }
};

FilterConfig bank_config(FilterVariant v, std::size_t channels, std::vector<std::size_t> scales) {
  FilterConfig cfg;
  cfg.variant = v;
  cfg.channels = channels;
  if (scales.size() == 1) cfg.single_length = scales[0];
  else cfg.scale_lengths = std::move(scales);
  return cfg;
}

// Attention key biases have an identically zero gradient, which a
// per-coordinate relative error cannot score; they are checked separately.
bool is_key_bias(const std::string& name) { return name.ends_with(".attn.k.bias"); }

std::vector<TD> checkable(const nn::ParameterStore<double>& store) {
  std::vector<TD> out;
  for (const auto& [name, t] : store.entries())
    if (!is_key_bias(name)) out.push_back(t);
  return out;
}

void randomize(nn::ParameterStore<double>& store, Rng& rng, double bound) {
  std::uniform_real_distribution<double> u(-bound, bound);
  for (auto& t : store.tensors())
    for (auto& x : t.data()) x = u(rng);
}

}  // namespace

std::vector<CheckResult> gradient_suite(std::uint64_t seed) {
  std::vector<CheckResult> out;
  Rng rng = make_rng(seed, "gradient-suite");
  auto record = [&](std::string name, double tol, const GradCheckReport& r) {
    out.push_back({std::move(name), r.tensor_rel, r.max_rel, tol, r.tensor_rel < tol});
  };
  auto params = [&](std::string name, double tol, std::vector<TD> ps, auto f) {
    Projector p;
    record(std::move(name), tol, grad_check_report([&] { return p(f()); }, std::move(ps)));
  };
  auto unary = [&](std::string name, const TD& x, auto f) {
    auto leaf = x.detach();
    params(std::move(name), kPrimitiveTol, {leaf}, [&, leaf] { return f(leaf); });
  };

  {
    auto a = random_tensor(rng, {3, 4}), b = random_tensor(rng, {4});
    params("add (broadcast)", kPrimitiveTol, {a, b}, [&] { return ops::add(a, b); });
    params("mul (broadcast)", kPrimitiveTol, {a, b}, [&] { return ops::mul(a, b); });
    unary("scale", a, [](const TD& x) { return ops::scale(x, 1.7); });
  }
  {
    auto x = random_tensor(rng, {2, 3, 4}), w = random_tensor(rng, {4, 5});
    params("matmul", kPrimitiveTol, {x, w}, [&] { return ops::matmul(x, w); });
    auto a = random_tensor(rng, {2, 3, 4}), b = random_tensor(rng, {2, 4, 5});
    params("bmm", kPrimitiveTol, {a, b}, [&] { return ops::bmm(a, b); });
    auto c = random_tensor(rng, {2, 5, 4});
    params("bmm (transposed)", kPrimitiveTol, {a, c}, [&] { return ops::bmm(a, c, true); });
  }
  unary("relu", away_from_zero(rng, {4, 6}), [](const TD& x) { return ops::relu(x); });
  unary("sigmoid", random_tensor(rng, {4, 6}, -3, 3), [](const TD& x) { return ops::sigmoid(x); });
  unary("softmax", random_tensor(rng, {3, 5}, -2, 2), [](const TD& x) { return ops::softmax(x); });
  unary("softmax (causal)", random_tensor(rng, {2, 5, 5}, -2, 2),
        [](const TD& x) { return ops::softmax(x, true); });
  {
    auto x = random_tensor(rng, {3, 6}), g = random_tensor(rng, {6}, 0.5, 1.5),
         b = random_tensor(rng, {6});
    params("layer_norm", kPrimitiveTol, {x, g, b}, [&] { return ops::layer_norm(x, g, b); });
  }
  {
    auto table = random_tensor(rng, {7, 3});
    std::vector<int> ids{0, 3, 3, 6, 1, 0};
    params("embedding", kPrimitiveTol, {table},
           [&] { return ops::embedding(table, ids, {2, 3}); });
  }
  {
    auto s = random_tensor(rng, {12}), k = random_tensor(rng, {5});
    params("causal_conv1d (single)", kPrimitiveTol, {s, k},
           [&] { return ops::causal_conv1d(s, k); });
    auto sb = random_tensor(rng, {3, 10}), kb = random_tensor(rng, {4, 3});
    params("causal_conv1d (bank)", kPrimitiveTol, {sb, kb},
           [&] { return ops::causal_conv1d(sb, kb); });
  }
  {
    auto tf = random_tensor(rng, {2, 3, 5}), w = random_tensor(rng, {3}),
         W = random_tensor(rng, {2, 5, 3});
    params("mix_channels", kPrimitiveTol, {tf, w}, [&] { return ops::mix_channels(tf, w); });
    params("mix_channels_tokenwise", kPrimitiveTol, {tf, W},
           [&] { return ops::mix_channels_tokenwise(tf, W); });
  }
  {
    auto a = random_tensor(rng, {2, 3, 4}), b = random_tensor(rng, {2, 1, 4});
    params("concat", kPrimitiveTol, {a, b}, [&] { return ops::concat<double>({a, b}, 1); });
    unary("reshape", a, [](const TD& x) { return ops::reshape(x, {4, 6}); });
    unary("permute", a, [](const TD& x) { return ops::permute(x, {2, 0, 1}); });
    unary("sum", a, [](const TD& x) { return ops::sum(x); });
    unary("mean", a, [](const TD& x) { return ops::mean(x); });
    unary("mean_axis", a, [](const TD& x) { return ops::mean_axis(x, 1); });
  }
  {
    auto logits = random_tensor(rng, {6, corpus::kVocabSize}, -2, 2);
    std::vector<int> targets{0, 26, 13, 5, 5, 20};
    record("cross_entropy (27 classes)", kPrimitiveTol,
           grad_check_report([&] { return ops::cross_entropy(logits, targets); }, {logits}));
    auto pred = random_tensor(rng, {8});
    std::vector<double> target(8);
    // |pred - target| stays clear of the quadratic/linear switch at 1.
    for (std::size_t i = 0; i < 8; ++i) target[i] = pred.data()[i] + (i % 2 ? 0.4 : 1.9);
    record("huber", kPrimitiveTol,
           grad_check_report([&] { return ops::huber<double>(pred, target); }, {pred}));
  }
  {
    auto x = random_tensor(rng, {16}), w = random_tensor(rng, {16}, 0, 2);
    params("dct spectral_reweight (signal)", kPrimitiveTol, {x, w},
           [&] { return dct::spectral_reweight(x, w); });
    auto xb = random_tensor(rng, {2, 8, 3}), wb = random_tensor(rng, {8}, 0, 2);
    params("dct spectral_reweight", kPrimitiveTol, {xb, wb},
           [&] { return dct::spectral_reweight(xb, wb); });
  }

  // Composite blocks.
  {
    nn::ParameterStore<double> store(derive_seed(seed, "fixed"));
    auto bank = filter::FilterBank<double>::create(
        store, "bank", bank_config(FilterVariant::single_scale, 6, {5}));
    randomize(store, rng, 0.8);
    auto s = random_tensor(rng, {3, 12});
    auto ps = checkable(store);
    ps.push_back(s);
    params("filter_fixed", kCompositeTol, ps, [&] { return filter::filter_fixed(s, bank); });
  }
  {
    nn::ParameterStore<double> store(derive_seed(seed, "multi"));
    auto bank = filter::FilterBank<double>::create(
        store, "bank", bank_config(FilterVariant::multi_scale, 8, {3, 5, 7, 9}));
    randomize(store, rng, 0.8);
    auto s = random_tensor(rng, {2, 14});
    auto ps = checkable(store);
    ps.push_back(s);
    params("filter_multiscale", kCompositeTol, ps,
           [&] { return filter::filter_multiscale(s, bank); });
    auto x = random_tensor(rng, {2, 10, 3});
    auto px = checkable(store);
    px.push_back(x);
    params("filter site (residual)", kCompositeTol, px,
           [&] { return filter::filter_site(x, bank); });
  }
  for (auto combine : {MaskCombine::replace, MaskCombine::multiply}) {
    for (auto act : {MaskActivation::linear, MaskActivation::sigmoid}) {
      nn::ParameterStore<double> store(derive_seed(seed, "adaptive"));
      auto fc = bank_config(FilterVariant::token_adaptive, 4, {3});
      fc.mask.bottleneck = 8;
      fc.mask.heads = 2;
      fc.mask.ff = 16;
      fc.mask.combine = combine;
      fc.mask.activation = act;
      auto bank = filter::FilterBank<double>::create(store, "bank", fc);
      auto dec = mask::MaskDecoder<double>::create(store, "mask", 4, 16, fc.mask);
      randomize(store, rng, 1.0);
      auto s = random_tensor(rng, {2, 9});
      auto ps = checkable(store);
      ps.push_back(s);
      params("filter_adaptive (" + to_string(combine) + ", " + to_string(act) + ")",
             kCompositeTol, ps, [&] { return mask::filter_adaptive(s, bank, dec); });
    }
  }
  {
    nn::ParameterStore<double> store(derive_seed(seed, "block"));
    auto block = nn::TransformerBlock<double>::create(store, "blk", 8, 16, 2, true);
    randomize(store, rng, 0.5);
    auto x = random_tensor(rng, {2, 5, 8});
    auto ps = checkable(store);
    ps.push_back(x);
    params("transformer block (causal)", kCompositeTol, ps, [&] { return block(x); });
    // The key bias gradient must vanish up to rounding.
    Projector p;
    store.zero_grad();
    auto y = p(block(x));
    backward(y);
    double worst = 0;
    const auto& kb = store.get("blk.attn.k.bias");
    auto kg = kb;
    if (kg.has_grad())
      for (double g : kg.grad()) worst = std::max(worst, std::abs(g));
    out.push_back({"attention key bias gradient (abs)", worst, worst, 1e-12, worst < 1e-12});
  }
  {
    ModelConfig mc;
    mc.n_layers = 1;
    mc.d_model = 8;
    mc.d_ff = 16;
    mc.n_heads = 2;
    mc.head_hidden = 8;
    mc.context_len = 8;
    mc.filter = bank_config(FilterVariant::multi_scale, 4, {2, 3, 4, 5});
    gpt::GptModel<double> model(mc, derive_seed(seed, "gpt"));
    randomize(model.params(), rng, 0.8);
    std::vector<int> ids{1, 4, 26, 0, 7, 7, 2, 9, 3, 26, 11, 5};
    std::vector<int> targets(ids.begin() + 1, ids.end());
    targets.push_back(0);
    record("lm loss (multi-scale model)", kCompositeTol,
           grad_check_report([&] { return ops::cross_entropy(model.forward(ids, 2, 6), targets); },
                             checkable(model.params())));
  }
  {
    dct::ClassifierConfig cc;
    cc.n_layers = 1;
    cc.d_model = 8;
    cc.n_heads = 2;
    cc.d_ff = 16;
    cc.tokens = 8;
    cc.input_dim = 3;
    cc.classes = 3;
    dct::DctClassifier<double> clf(cc, derive_seed(seed, "clf"));
    randomize(clf.params(), rng, 0.5);
    auto inputs = random_tensor(rng, {2 * 8 * 3});
    std::vector<int> labels{2, 0};
    record("dct classifier loss", kCompositeTol, grad_check_report([&] {
             return clf.loss(clf.forward(inputs.data(), 2), labels);
           }, checkable(clf.params())));
  }
  return out;
}

double classifier_accuracy(const dct::DctClassifier<double>& model, const dct::SynthDataset& data) {
  NoGradGuard guard;
  const std::size_t chunk = 64;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < data.count; i += chunk) {
    const std::size_t n = std::min(chunk, data.count - i);
    auto in = std::span<const double>(data.inputs).subspan(i * data.length * data.dim,
                                                           n * data.length * data.dim);
    const auto logits = model.forward(in, n);
    const auto z = logits.data();
    for (std::size_t b = 0; b < n; ++b) {
      const auto row = z.subspan(b * data.classes, data.classes);
      const auto pred = std::distance(row.begin(), std::ranges::max_element(row));
      if (pred == data.labels[i + b]) ++correct;
    }
  }
  return double(correct) / double(data.count);
}

namespace {

double train_classifier(const SynthExperiment& exp, std::uint64_t seed, bool train_dct,
                        const dct::SynthDataset& train_set, const dct::SynthDataset& test_set) {
  dct::DctClassifier<double> model(exp.model, derive_seed(seed, "classifier"));
  train::Adam<double> adam(model.trainable(train_dct), 0.9, 0.999, 1e-8);
  Rng rng = make_rng(seed, "synth-batches");
  std::uniform_int_distribution<std::size_t> pick(0, train_set.count - 1);
  const std::size_t stride = train_set.length * train_set.dim;
  std::vector<double> inputs(exp.batch * stride);
  std::vector<int> labels(exp.batch);
  for (std::size_t step = 0; step < exp.steps; ++step) {
    for (std::size_t b = 0; b < exp.batch; ++b) {
      const std::size_t i = pick(rng);
      std::ranges::copy(train_set.sample(i), inputs.begin() + b * stride);
      labels[b] = train_set.labels[i];
    }
    model.params().zero_grad();
    auto loss = model.loss(model.forward(inputs, exp.batch), labels);
    backward(loss);
    adam.step(exp.learning_rate);
  }
  return classifier_accuracy(model, test_set);
}

}  // namespace

SynthReport run_synth_classify(const SynthExperiment& exp,
                               const std::function<void(const std::string&)>& progress) {
  auto model_cfg = exp.model;
  model_cfg.tokens = exp.data.length;
  model_cfg.input_dim = exp.data.dim;
  model_cfg.classes = exp.data.classes;
  model_cfg.use_dct = true;
  SynthExperiment e = exp;
  e.model = model_cfg;

  SynthReport report;
  report.chance = 1.0 / double(exp.data.classes);
  for (auto seed : exp.seeds) {
    auto dc = exp.data;
    dc.seed = seed;
    const auto train_set = dct::make_synthetic(dc, exp.train_count, "train");
    const auto test_set = dct::make_synthetic(dc, exp.test_count, "test");
    SynthRun run;
    run.seed = seed;
    run.trainable_acc = train_classifier(e, seed, true, train_set, test_set);
    run.frozen_acc = train_classifier(e, seed, false, train_set, test_set);
    report.runs.push_back(run);
    if (progress) {
      char buf[128];
      std::snprintf(buf, sizeof buf, "seed %llu: trainable %.4f frozen %.4f",
                    static_cast<unsigned long long>(seed), run.trainable_acc, run.frozen_acc);
      progress(buf);
    }
  }
  return report;
}

double SynthReport::mean_trainable() const {
  double s = 0;
  for (const auto& r : runs) s += r.trainable_acc;
  return runs.empty() ? 0 : s / double(runs.size());
}

double SynthReport::mean_frozen() const {
  double s = 0;
  for (const auto& r : runs) s += r.frozen_acc;
  return runs.empty() ? 0 : s / double(runs.size());
}

std::string SynthReport::to_text() const {
  std::ostringstream os;
  char buf[160];
  os << "seed  trainable  frozen\n";
  for (const auto& r : runs) {
    std::snprintf(buf, sizeof buf, "%-5llu %.4f     %.4f\n",
                  static_cast<unsigned long long>(r.seed), r.trainable_acc, r.frozen_acc);
    os << buf;
  }
  std::snprintf(buf, sizeof buf, "mean  %.4f     %.4f\nchance %.4f\n", mean_trainable(),
                mean_frozen(), chance);
  os << buf;
  return os.str();
}

}  // namespace splm::suite
