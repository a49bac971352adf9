#include "transukan/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "transukan/error.hpp"
#include "transukan/ops.hpp"
#include "transukan/tape.hpp"

namespace tukan {

namespace {

double eval_loss(const std::function<Tensor()>& loss, KinkLog& kinks) {
  NoGradScope no_grad;
  KinkLogScope log(kinks);
  const Tensor y = loss();
  if (y.numel() != 1) throw ContractError("grad_check: loss must be scalar, got " + shape_str(y.shape()));
  const double v = y.item();
  if (!std::isfinite(v)) throw NumericError("grad_check: loss evaluated to a non-finite value");
  return v;
}

std::vector<std::size_t> pick_coords(std::size_t n, std::size_t max_coords, Rng& rng) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  if (max_coords == 0 || max_coords >= n) return idx;
  // Partial Fisher-Yates keeps the draw deterministic for a given seed.
  for (std::size_t i = 0; i < max_coords; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, n - 1);
    std::swap(idx[i], idx[pick(rng)]);
  }
  idx.resize(max_coords);
  std::sort(idx.begin(), idx.end());
  return idx;
}

}  // namespace

double relative_error(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-8});
}

GradCheckReport grad_check(const std::function<Tensor()>& loss, std::span<GradTarget> targets,
                           const GradCheckOptions& options) {
  if (!(options.h > 0.0)) throw ContractError("grad_check: h must be positive");

  std::vector<bool> previous_flags;
  for (GradTarget& t : targets) {
    previous_flags.push_back(t.tensor.requires_grad());
    t.tensor.set_requires_grad(true);
    t.tensor.zero_grad();
  }

  std::vector<std::vector<double>> analytic;
  {
    Tape tape;
    TapeScope scope(tape);
    Tensor y = loss();
    if (!std::isfinite(y.item())) throw NumericError("grad_check: loss evaluated to a non-finite value");
    tape.backward(y);
  }
  for (GradTarget& t : targets) {
    const auto g = t.tensor.grad_buffer();
    analytic.emplace_back(g.begin(), g.end());
  }

  KinkLog base;
  eval_loss(loss, base);

  GradCheckReport report;
  Rng rng(options.seed);
  for (std::size_t ti = 0; ti < targets.size(); ++ti) {
    GradTarget& t = targets[ti];
    GradCheckItem item;
    item.name = t.name;
    auto data = t.tensor.data();
    for (std::size_t i : pick_coords(data.size(), options.max_coords, rng)) {
      const double orig = data[i];
      KinkLog plus, minus;
      data[i] = orig + options.h;
      const double fp = eval_loss(loss, plus);
      data[i] = orig - options.h;
      const double fm = eval_loss(loss, minus);
      data[i] = orig;
      if (plus.positive != base.positive || minus.positive != base.positive) {
        ++item.kinks_skipped;
        continue;
      }
      const double numeric = (fp - fm) / (2.0 * options.h);
      const double err = relative_error(analytic[ti][i], numeric);
      if (err > item.max_rel_err || item.checked == 0) {
        item.max_rel_err = err;
        item.worst_index = i;
        item.autodiff_at_worst = analytic[ti][i];
        item.numeric_at_worst = numeric;
      }
      ++item.checked;
    }
    report.max_rel_err = std::max(report.max_rel_err, item.max_rel_err);
    report.items.push_back(std::move(item));
  }
  report.pass = report.max_rel_err < options.tol;

  for (std::size_t ti = 0; ti < targets.size(); ++ti) targets[ti].tensor.set_requires_grad(previous_flags[ti]);
  return report;
}

GradCheckReport grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x, double h, double tol) {
  GradTarget target{"x", x.clone()};
  const Tensor handle = target.tensor;
  GradCheckOptions options;
  options.h = h;
  options.tol = tol;
  return grad_check([&] { return f(handle); }, std::span<GradTarget>(&target, 1), options);
}

}  // namespace tukan
