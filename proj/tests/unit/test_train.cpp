#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <limits>
#include <random>

#include "helpers.hpp"
#include "splm/train.hpp"

using namespace splm;
using namespace splm::train;
namespace fs = std::filesystem;

namespace {

std::vector<MetricRecord> curve(std::vector<std::pair<std::uint64_t, double>> pts) {
  std::vector<MetricRecord> log;
  for (auto [s, v] : pts) log.push_back({s, "dev", v, s * 100, 0});
  return log;
}

corpus::CorpusSplit text_split(std::size_t n, std::uint64_t seed) {
  // Cheap stand-in text: words drawn from a small lexicon.
  static const char* words[] = {"the", "of", "and", "in", "a", "to", "is", "was", "on", "as"};
  std::mt19937_64 rng(seed);
  std::string s;
  while (s.size() < n) {
    s += words[rng() % 10];
    s += ' ';
  }
  s.resize(n);
  return corpus::make_split(corpus::encode(s));
}

RunConfig tiny_run(FilterVariant v = FilterVariant::none) {
  RunConfig cfg;
  cfg.model = testing_support::tiny_model(v);
  cfg.train.batch_size = 4;
  cfg.train.learning_rate = 3e-3;
  cfg.train.warmup_steps = 5;
  cfg.train.eval_interval = 5;
  cfg.train.eval_max_windows = 8;
  cfg.train.eval_batch = 4;
  return cfg;
}

}  // namespace

TEST(Speedup, DefinitionArithmetic) {
  auto base = curve({{0, 3.3}, {1000, 1.0}});
  auto var = curve({{0, 3.3}, {560, 1.0}});
  EXPECT_NEAR(speedup(base, var, 1.0), 44.0, 1e-12);
}

TEST(Speedup, IdenticalLogsGiveZero) {
  auto log = curve({{0, 3.3}, {250, 2.0}, {500, 1.6}, {750, 1.5}});
  for (double target : {3.0, 2.0, 1.7, 1.5}) EXPECT_EQ(speedup(log, log, target), 0.0);
}

TEST(Speedup, UnreachedTargetNotComparable) {
  auto base = curve({{0, 3.3}, {500, 2.0}});
  auto var = curve({{0, 3.3}, {500, 1.0}});
  EXPECT_THROW(speedup(base, var, 1.5), NotComparable);
  EXPECT_THROW(speedup(var, base, 1.5), NotComparable);
}

TEST(FirstCrossing, InterpolatesBetweenEvals) {
  auto log = curve({{0, 3.0}, {100, 2.0}, {200, 1.0}});
  EXPECT_NEAR(*first_crossing_step(log, 1.5), 150.0, 1e-12);
  EXPECT_NEAR(*first_crossing_step(log, 2.0), 100.0, 1e-12);
  EXPECT_FALSE(first_crossing_step(log, 0.5));
  // Train records are ignored.
  log.push_back({50, "train", 0.1, 0, 0});
  EXPECT_NEAR(*first_crossing_step(log, 1.5), 150.0, 1e-12);
}

TEST(Metrics, JsonLineRoundTrip) {
  MetricRecord r{17, "dev", 1.2345678901234567, 4352, 99};
  const auto line = to_json_line(r);
  EXPECT_EQ(line.find('\n'), std::string::npos);
  const auto back = from_json_line(line);
  EXPECT_EQ(back.step, r.step);
  EXPECT_EQ(back.split, r.split);
  EXPECT_EQ(back.nll_nats, r.nll_nats);
  EXPECT_EQ(back.tokens_seen, r.tokens_seen);
  EXPECT_EQ(back.wall_ms, r.wall_ms);
}

TEST(Schedule, WarmupThenConstant) {
  TrainConfig t;
  EXPECT_NEAR(learning_rate_at(t, 0), 3e-4 / 100, 1e-18);
  EXPECT_NEAR(learning_rate_at(t, 49), 3e-4 * 0.5, 1e-18);
  EXPECT_EQ(learning_rate_at(t, 99), 3e-4);
  EXPECT_EQ(learning_rate_at(t, 5000), 3e-4);
  t.warmup_steps = 0;
  EXPECT_EQ(learning_rate_at(t, 0), 3e-4);
}

TEST(Clip, ScalesToMaxNorm) {
  auto a = Tensor<double>::from({2}, {0, 0}, true);
  auto b = Tensor<double>::from({1}, {0}, true);
  auto loss = ops::sum(ops::add(ops::scale(a, 3.0), ops::scale(ops::sum(b), 0.0)));
  backward(loss);
  a.grad()[1] = 4.0;  // grads (3, 4), norm 5
  std::vector<Tensor<double>> ps{a, b};
  EXPECT_NEAR(clip_grad_norm<double>(ps, 1.0), 5.0, 1e-12);
  EXPECT_NEAR(a.grad()[0], 0.6, 1e-12);
  EXPECT_NEAR(a.grad()[1], 0.8, 1e-12);
  EXPECT_NEAR(clip_grad_norm<double>(ps, 10.0), 1.0, 1e-12);
  EXPECT_NEAR(a.grad()[0], 0.6, 1e-12);
}

TEST(Adam, FirstStepMovesBySignTimesLr) {
  auto x = Tensor<double>::from({2}, {1.0, -1.0}, true);
  auto loss = ops::sum(ops::mul(x, x));
  backward(loss);
  Adam<double> adam({x}, 0.9, 0.999, 1e-8);
  adam.step(0.1);
  // Bias-corrected first step: m/sqrt(v) = sign(g).
  EXPECT_NEAR(x.data()[0], 0.9, 1e-7);
  EXPECT_NEAR(x.data()[1], -0.9, 1e-7);
  EXPECT_EQ(adam.steps(), 1u);
}

TEST(Evaluate, UniformModelIsLn27) {
  const auto data = text_split(4000, 1);
  gpt::GptModel<double> model(testing_support::tiny_model(FilterVariant::none), 1);
  const double nll = evaluate(model, data.dev, 4);
  EXPECT_NEAR(nll, std::log(27.0), 1e-9);
  EXPECT_EQ(evaluate(model, data.dev, 4), nll);
  EXPECT_EQ(evaluate(model, data.dev, 3), nll);  // batching does not change the mean
}

TEST(Train, ZeroStepsLeaveModelUnchanged) {
  const auto data = text_split(4000, 2);
  Trainer<double> tr(tiny_run(), data);
  gpt::GptModel<double> fresh(tr.config().model, tr.config().train.seed);
  tr.train(0);
  for (std::size_t i = 0; i < fresh.params().entries().size(); ++i)
    EXPECT_EQ(tr.model().params().entries()[i].second.to_vector(),
              fresh.params().entries()[i].second.to_vector());
}

TEST(Train, MemorizesAlternatingPattern) {
  std::string s;
  while (s.size() < 3000) s += "ab";
  const auto data = corpus::make_split(corpus::encode(s));
  auto cfg = tiny_run();
  cfg.train.learning_rate = 1e-2;
  cfg.train.eval_interval = 50;
  Trainer<double> tr(cfg, data);
  std::vector<MetricRecord> log;
  const auto last = tr.train(200, [&](const MetricRecord& r) { log.push_back(r); });
  EXPECT_NEAR(log.front().nll_nats, std::log(27.0), 0.05);
  EXPECT_LT(last.nll_nats, 0.1);
  EXPECT_EQ(last.split, "dev");
  EXPECT_EQ(last.step, 200u);
}

TEST(Train, SeededRunsAreBitReproducible) {
  const auto data = text_split(6000, 3);
  auto run = [&] {
    Trainer<double> tr(tiny_run(FilterVariant::multi_scale), data);
    std::vector<MetricRecord> log;
    tr.train(12, [&](const MetricRecord& r) { log.push_back(r); });
    return log;
  };
  const auto a = run(), b = run();
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].step, b[i].step);
    EXPECT_EQ(a[i].split, b[i].split);
    EXPECT_EQ(a[i].nll_nats, b[i].nll_nats);
    EXPECT_EQ(a[i].tokens_seen, b[i].tokens_seen);
  }
  // Loss went down from the uniform start.
  EXPECT_LT(a.back().nll_nats, a.front().nll_nats);
}

TEST(Train, ResumeReproducesNextStepLoss) {
  const auto data = text_split(6000, 4);
  auto cfg = tiny_run(FilterVariant::token_adaptive);
  Trainer<double> a(cfg, data);
  a.train(7);
  const auto path = fs::temp_directory_path() / "splm_resume.spck";
  a.save_checkpoint(path);
  const double next = a.train_step();
  Trainer<double> b(cfg, data, ckpt::read(path));
  EXPECT_EQ(b.step(), 7u);
  EXPECT_EQ(b.train_step(), next);
  EXPECT_EQ(b.evaluate_split("dev"), a.evaluate_split("dev"));
}

TEST(Train, NonFiniteLossAborts) {
  const auto data = text_split(4000, 5);
  Trainer<double> tr(tiny_run(), data);
  auto bias = tr.model().params().get("head.out.bias");
  bias.data()[0] = std::numeric_limits<double>::quiet_NaN();
  std::vector<MetricRecord> log;
  try {
    tr.train(3, [&](const MetricRecord& r) { log.push_back(r); });
    FAIL() << "expected TrainingAborted";
  } catch (const TrainingAborted& e) {
    EXPECT_EQ(e.record.split, "abort");
    ASSERT_FALSE(log.empty());
    EXPECT_EQ(log.back().split, "abort");
  }
}

TEST(Train, FloatPrecisionRuns) {
  const auto data = text_split(4000, 6);
  auto cfg = tiny_run();
  cfg.train.precision = Precision::f32;
  Trainer<float> tr(cfg, data);
  const auto r = tr.train(5);
  EXPECT_TRUE(std::isfinite(r.nll_nats));
}
