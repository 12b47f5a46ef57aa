#include "splm/grad_check.hpp"

#include <algorithm>
#include <cmath>

namespace splm {

namespace {

double rel_error(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-12});
  return std::abs(analytic - numeric) / denom;
}

double checked_value(const Tensor<double>& y) {
  if (y.numel() != 1) throw std::invalid_argument("grad_check: f must be scalar-valued");
  const double v = y.item();
  if (!std::isfinite(v)) throw NumericFailure("grad_check: non-finite function value");
  return v;
}

}  // namespace

GradCheckReport grad_check_report(const std::function<Tensor<double>()>& f,
                                  std::vector<Tensor<double>> params, double eps) {
  if (!(eps > 0)) throw std::invalid_argument("grad_check: eps must be positive");
  for (auto& p : params) {
    p.zero_grad();
    p.set_requires_grad(true);
  }
  auto y = f();
  checked_value(y);
  backward(y);

  GradCheckReport report;
  for (auto& p : params) {
    std::vector<double> analytic(p.numel(), 0.0);
    if (p.has_grad()) std::ranges::copy(p.grad(), analytic.begin());
    NoGradGuard guard;
    auto data = p.data();
    double aa = 0, nn = 0, dd = 0;
    for (std::size_t i = 0; i < data.size(); ++i) {
      if (!std::isfinite(analytic[i])) throw NumericFailure("grad_check: non-finite gradient");
      const double saved = data[i];
      data[i] = saved + eps;
      const double up = checked_value(f());
      data[i] = saved - eps;
      const double down = checked_value(f());
      data[i] = saved;
      const double numeric = (up - down) / (2 * eps);
      report.max_rel = std::max(report.max_rel, rel_error(analytic[i], numeric));
      aa += analytic[i] * analytic[i];
      nn += numeric * numeric;
      dd += (analytic[i] - numeric) * (analytic[i] - numeric);
    }
    const double denom = std::max({std::sqrt(aa), std::sqrt(nn), 1e-12});
    report.tensor_rel = std::max(report.tensor_rel, std::sqrt(dd) / denom);
  }
  return report;
}

double grad_check_params(const std::function<Tensor<double>()>& f,
                         std::vector<Tensor<double>> params, double eps) {
  return grad_check_report(f, std::move(params), eps).max_rel;
}

double grad_check(const std::function<Tensor<double>(const Tensor<double>&)>& f,
                  const Tensor<double>& x, double eps) {
  auto leaf = x.detach();
  return grad_check_params([&] { return f(leaf); }, {leaf}, eps);
}

}  // namespace splm
