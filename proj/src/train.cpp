#include "splm/train.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>
#include <nlohmann/json.hpp>

namespace splm::train {

namespace {

std::int64_t now_ms() {
  using namespace std::chrono;
  return duration_cast<milliseconds>(steady_clock::now().time_since_epoch()).count();
}

std::string fmt_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

}  // namespace

std::string to_json_line(const MetricRecord& r) {
  nlohmann::json j;
  j["step"] = r.step;
  j["split"] = r.split;
  if (std::isfinite(r.nll_nats)) j["nll_nats"] = r.nll_nats;
  else j["nll_nats"] = nullptr;
  j["tokens_seen"] = r.tokens_seen;
  j["wall_ms"] = r.wall_ms;
  return j.dump();
}

MetricRecord from_json_line(const std::string& line) {
  const auto j = nlohmann::json::parse(line);
  MetricRecord r;
  r.step = j.at("step").get<std::uint64_t>();
  r.split = j.at("split").get<std::string>();
  const auto& nll = j.at("nll_nats");
  r.nll_nats = nll.is_null() ? std::numeric_limits<double>::quiet_NaN() : nll.get<double>();
  r.tokens_seen = j.at("tokens_seen").get<std::uint64_t>();
  r.wall_ms = j.at("wall_ms").get<std::int64_t>();
  return r;
}

std::vector<MetricRecord> read_metrics(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open metrics log " + path.string());
  std::vector<MetricRecord> out;
  std::string line;
  while (std::getline(in, line))
    if (!line.empty()) out.push_back(from_json_line(line));
  return out;
}

template <typename T>
Adam<T>::Adam(std::vector<Tensor<T>> params, double beta1, double beta2, double eps)
    : params_(std::move(params)), beta1_(beta1), beta2_(beta2), eps_(eps) {
  for (const auto& p : params_) {
    m_.emplace_back(p.numel(), T(0));
    v_.emplace_back(p.numel(), T(0));
  }
}

template <typename T>
void Adam<T>::step(double lr) {
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, double(t_));
  const double c2 = 1.0 - std::pow(beta2_, double(t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto p = params_[i];
    if (!p.has_grad()) continue;
    auto g = p.grad();
    auto d = p.data();
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t k = 0; k < d.size(); ++k) {
      m[k] = T(beta1_ * m[k] + (1 - beta1_) * g[k]);
      v[k] = T(beta2_ * v[k] + (1 - beta2_) * g[k] * g[k]);
      const double mh = m[k] / c1;
      const double vh = v[k] / c2;
      d[k] -= T(lr * mh / (std::sqrt(vh) + eps_));
    }
  }
}

double learning_rate_at(const TrainConfig& cfg, std::uint64_t step) {
  if (cfg.warmup_steps == 0 || step >= cfg.warmup_steps) return cfg.learning_rate;
  return cfg.learning_rate * double(step + 1) / double(cfg.warmup_steps);
}

template <typename T>
double clip_grad_norm(std::span<Tensor<T>> params, double max_norm) {
  double sq = 0;
  for (auto& p : params)
    if (p.has_grad())
      for (T g : p.grad()) sq += double(g) * double(g);
  const double norm = std::sqrt(sq);
  if (max_norm > 0 && norm > max_norm) {
    const double s = max_norm / norm;
    for (auto& p : params)
      if (p.has_grad())
        for (T& g : p.grad()) g = T(g * s);
  }
  return norm;
}

template <typename T>
double evaluate(const gpt::GptModel<T>& model, std::span<const std::uint8_t> tokens,
                std::size_t batch, std::size_t max_windows) {
  if (tokens.size() < 2) throw std::invalid_argument("evaluate: split needs at least 2 tokens");
  NoGradGuard no_grad;
  const std::size_t context = std::min(model.config().context_len, tokens.size() - 1);
  corpus::BatchIterator it(tokens, context, std::max<std::size_t>(batch, 1), 0,
                           corpus::WindowMode::sequential);
  const std::size_t vocab = model.config().vocab;
  double total = 0;
  std::size_t count = 0, windows = 0;
  while (!it.done() && (max_windows == 0 || windows < max_windows)) {
    auto b = it.next();
    if (max_windows != 0 && windows + b.batch > max_windows) {
      b.batch = max_windows - windows;
      b.inputs.resize(b.batch * context);
      b.targets.resize(b.batch * context);
    }
    windows += b.batch;
    const auto logits = model.forward(b.inputs, b.batch, context);
    const auto z = logits.data();
    for (std::size_t r = 0; r < b.targets.size(); ++r) {
      const T* row = z.data() + r * vocab;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < vocab; ++j) mx = std::max(mx, double(row[j]));
      double norm = 0;
      for (std::size_t j = 0; j < vocab; ++j) norm += std::exp(double(row[j]) - mx);
      total += std::log(norm) + mx - double(row[b.targets[r]]);
      ++count;
    }
  }
  return total / double(count);
}

std::optional<double> first_crossing_step(const std::vector<MetricRecord>& log, double target,
                                          const std::string& split) {
  const MetricRecord* prev = nullptr;
  for (const auto& r : log) {
    if (r.split != split) continue;
    if (r.nll_nats <= target) {
      if (!prev) return double(r.step);
      const double span = prev->nll_nats - r.nll_nats;
      const double frac = span > 0 ? (prev->nll_nats - target) / span : 1.0;
      return double(prev->step) + frac * (double(r.step) - double(prev->step));
    }
    prev = &r;
  }
  return std::nullopt;
}

double speedup(const std::vector<MetricRecord>& baseline, const std::vector<MetricRecord>& variant,
               double target_nll, const std::string& split) {
  const auto b = first_crossing_step(baseline, target_nll, split);
  const auto v = first_crossing_step(variant, target_nll, split);
  if (!b || !v) {
    throw NotComparable("target NLL " + fmt_double(target_nll) + " not reached by " +
                        (!b ? "baseline" : "variant") + " log");
  }
  if (*b <= 0) throw NotComparable("baseline reaches the target at step 0");
  return 100.0 * (*b - *v) / *b;
}

std::map<std::string, std::string> eval_settings(const TrainConfig& cfg) {
  return {{"eval_batch", std::to_string(cfg.eval_batch)},
          {"eval_max_windows", std::to_string(cfg.eval_max_windows)}};
}

template <typename T>
Trainer<T>::Trainer(RunConfig cfg, const corpus::CorpusSplit& data)
    : cfg_(std::move(cfg)),
      data_(data),
      model_(cfg_.model, cfg_.train.seed),
      adam_(model_.params().tensors(), cfg_.train.adam_beta1, cfg_.train.adam_beta2,
            cfg_.train.adam_eps),
      start_ms_(now_ms()) {}

template <typename T>
Trainer<T>::Trainer(RunConfig cfg, const corpus::CorpusSplit& data,
                    const ckpt::Checkpoint& checkpoint)
    : cfg_(std::move(cfg)),
      data_(data),
      model_(ckpt::restore_model<T>(checkpoint)),
      adam_(model_.params().tensors(), cfg_.train.adam_beta1, cfg_.train.adam_beta2,
            cfg_.train.adam_eps),
      start_ms_(now_ms()) {
  cfg_.model = model_.config();
  cfg_.train.seed = model_.seed();
  step_ = checkpoint.step();
  if (auto it = checkpoint.config.find("tokens_seen"); it != checkpoint.config.end())
    tokens_seen_ = std::stoull(it->second);
  if (auto it = checkpoint.config.find("adam_steps"); it != checkpoint.config.end())
    adam_.set_steps(std::stoull(it->second));
  const auto& entries = model_.params().entries();
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const auto* m = checkpoint.find("adam.m/" + entries[i].first);
    const auto* v = checkpoint.find("adam.v/" + entries[i].first);
    if (!m || !v) continue;
    std::ranges::transform(m->values, adam_.first_moments()[i].begin(),
                           [](double x) { return T(x); });
    std::ranges::transform(v->values, adam_.second_moments()[i].begin(),
                           [](double x) { return T(x); });
  }
}

template <typename T>
double Trainer<T>::train_step() {
  const auto& tc = cfg_.train;
  corpus::BatchIterator it(data_.train, cfg_.model.context_len, tc.batch_size,
                           derive_seed(tc.seed, "train-batches"),
                           corpus::WindowMode::random_offset);
  it.seek(step_);
  const auto batch = it.next();
  Rng drop_rng(derive_seed(derive_seed(tc.seed, "dropout"), step_));
  nn::ForwardContext ctx{true, cfg_.model.dropout, &drop_rng};

  model_.params().zero_grad();
  auto logits = model_.forward(batch.inputs, batch.batch, batch.context, &ctx);
  auto loss = ops::cross_entropy(logits, batch.targets);
  const double value = double(loss.item());
  if (!std::isfinite(value)) return value;
  backward(loss);
  auto params = model_.params().tensors();
  clip_grad_norm<T>(params, tc.clip_norm);
  adam_.step(learning_rate_at(tc, step_));
  ++step_;
  tokens_seen_ += batch.inputs.size();
  return value;
}

template <typename T>
MetricRecord Trainer<T>::emit(const std::string& split, double nll, const MetricSink& sink) const {
  MetricRecord r{step_, split, nll, tokens_seen_, now_ms() - start_ms_};
  if (sink) sink(r);
  return r;
}

template <typename T>
double Trainer<T>::evaluate_split(const std::string& split) const {
  return evaluate(model_, data_.split(split), cfg_.train.eval_batch, cfg_.train.eval_max_windows);
}

template <typename T>
MetricRecord Trainer<T>::train(std::size_t steps, const MetricSink& sink) {
  const std::size_t interval = cfg_.train.eval_interval;
  const std::uint64_t end = step_ + steps;
  MetricRecord last = emit("dev", evaluate_split("dev"), sink);
  double loss_sum = 0;
  std::size_t loss_n = 0;
  while (step_ < end) {
    const double loss = train_step();
    if (!std::isfinite(loss)) {
      auto rec = emit("abort", loss, sink);
      throw TrainingAborted("non-finite training loss at step " + std::to_string(step_), rec);
    }
    loss_sum += loss;
    ++loss_n;
    if ((interval > 0 && step_ % interval == 0) || step_ == end) {
      emit("train", loss_sum / double(loss_n), sink);
      loss_sum = 0;
      loss_n = 0;
      last = emit("dev", evaluate_split("dev"), sink);
    }
  }
  return last;
}

template <typename T>
ckpt::Checkpoint Trainer<T>::checkpoint() const {
  auto extra = eval_settings(cfg_.train);
  extra["tokens_seen"] = std::to_string(tokens_seen_);
  extra["adam_steps"] = std::to_string(adam_.steps());
  auto out = ckpt::capture(model_, step_, extra);
  const auto& entries = model_.params().entries();
  const auto& adam = adam_;
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const auto& [name, t] = entries[i];
    out.records.push_back({"adam.m/" + name, t.shape(),
                           {adam.first_moments()[i].begin(), adam.first_moments()[i].end()}});
    out.records.push_back({"adam.v/" + name, t.shape(),
                           {adam.second_moments()[i].begin(), adam.second_moments()[i].end()}});
  }
  return out;
}

template <typename T>
void Trainer<T>::save_checkpoint(const std::filesystem::path& path) const {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  ckpt::write(path, checkpoint());
}

template class Adam<float>;
template class Adam<double>;
template class Trainer<float>;
template class Trainer<double>;
template double clip_grad_norm(std::span<Tensor<float>>, double);
template double clip_grad_norm(std::span<Tensor<double>>, double);
template double evaluate(const gpt::GptModel<float>&, std::span<const std::uint8_t>, std::size_t,
                         std::size_t);
template double evaluate(const gpt::GptModel<double>&, std::span<const std::uint8_t>,
                         std::size_t, std::size_t);

}  // namespace splm::train
