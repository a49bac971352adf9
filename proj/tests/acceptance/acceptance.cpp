// Acceptance harness: one PASS/FAIL line per criterion.
//
//   acceptance [--strict] [--only 1,4,9]
//
// Exits 0 once every selected criterion has been evaluated; with --strict
// any FAIL makes the exit status 1.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "../unit/oracles.hpp"
#include "transukan/checkpoint.hpp"
#include "transukan/data.hpp"
#include "transukan/gradcheck_suite.hpp"
#include "transukan/kan.hpp"
#include "transukan/metrics.hpp"
#include "transukan/optim.hpp"
#include "transukan/profiler.hpp"
#include "transukan/train.hpp"

using namespace tukan;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

// Pinned thresholds.
constexpr double kGradTolerance = 1e-4;
constexpr double kGradStep = 1e-5;
constexpr std::size_t kGradSeeds = 20;
constexpr double kGradBudgetSeconds = 300.0;
constexpr std::size_t kRandomGrids = 100;
constexpr double kBasisPeakTolerance = 1e-12;
constexpr std::size_t kOracleConfigs = 50;
constexpr double kOracleTolerance = 1e-12;
constexpr std::size_t kTrainSeeds = 5;
constexpr std::size_t kTrainSeedsRequired = 4;
constexpr std::size_t kTrainEpochs = 30;
constexpr std::size_t kTrainWarmup = 2;
constexpr double kTrainLr = 1e-4;
constexpr std::size_t kTrainSamples = 200;
constexpr std::size_t kTrainImage = 64;
constexpr double kTrainDice = 0.90;
constexpr double kTrainBudgetSeconds = 900.0;
constexpr std::size_t kMetricPairs = 1000;
constexpr double kMetricTolerance = 1e-12;
constexpr double kScheduleBase = 1e-4;
constexpr double kScheduleTail = 1e-8;

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double uniform(Rng& rng, double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); }
std::size_t pick(Rng& rng, std::size_t lo, std::size_t hi) {
  return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

KanGrid random_grid(Rng& rng) {
  const double lo = uniform(rng, -3.0, 1.0);
  return KanGrid::make(pick(rng, 1, 10), pick(rng, 0, 4), lo, lo + uniform(rng, 0.5, 4.0));
}

// ---------------------------------------------------------------------------

Outcome gradients() {
  SuiteOptions opt;
  opt.seeds = kGradSeeds;
  opt.h = kGradStep;
  const SuiteResult r = run_gradcheck_suite(GradScope::kAll, opt, [](const SuiteItemResult& item) {
    std::printf("    %-7s %-28s max_rel_err %.3e (tol %.0e) %s\n", item.scope.c_str(), item.name.c_str(),
                item.max_rel_err, item.tolerance, item.pass ? "ok" : "FAIL");
  });
  double worst = 0.0;
  std::string worst_name, failed;
  std::size_t n_failed = 0;
  for (const auto& item : r.items) {
    if (item.max_rel_err > worst) {
      worst = item.max_rel_err;
      worst_name = item.name;
    }
    if (!(item.max_rel_err < kGradTolerance)) {
      ++n_failed;
      failed += (failed.empty() ? "" : ",") + item.name;
    }
  }
  Outcome o;
  o.pass = n_failed == 0 && r.seconds < kGradBudgetSeconds;
  o.detail = fmt("%zu items, %zu seeds, worst %.3e (%s), %zu over %.0e [%s], %.1f s", r.items.size(), kGradSeeds, worst,
                 worst_name.c_str(), n_failed, kGradTolerance, failed.c_str(), r.seconds);
  return o;
}

Outcome basis_properties() {
  Rng rng(2024);
  double worst_peak = 0.0;
  std::size_t outside_nonzero = 0, out_of_range = 0, evaluated = 0;
  for (std::size_t n = 0; n < kRandomGrids; ++n) {
    const KanGrid g = random_grid(rng);
    for (std::size_t i = 0; i < g.n_basis(); ++i) {
      const double s = g.lower(i), e = g.upper(i);
      worst_peak = std::max(worst_peak, std::abs(relukan_basis_value((s + e) / 2, s, e) - 1.0));
      for (int k = 0; k < 50; ++k) {
        const double w = e - s;
        const double left = uniform(rng, s - 2 * w, s), right = uniform(rng, e, e + 2 * w);
        for (double x : {left, right, s, e}) {
          ++evaluated;
          if (relukan_basis_value(x, s, e) != 0.0) ++outside_nonzero;
        }
      }
    }
    for (int k = 0; k < 200; ++k) {
      const double x = uniform(rng, g.range_lo - 2, g.range_hi + 2);
      for (double v : relukan_basis(x, g)) {
        ++evaluated;
        if (!(v >= 0.0 && v <= 1.0)) ++out_of_range;
      }
    }
  }
  Outcome o;
  o.pass = worst_peak <= kBasisPeakTolerance && outside_nonzero == 0 && out_of_range == 0;
  o.detail = fmt("%zu grids, peak |R-1| %.2e (tol %.0e), %zu nonzero outside support, %zu outside [0,1] of %zu values",
                 kRandomGrids, worst_peak, kBasisPeakTolerance, outside_nonzero, out_of_range, evaluated);
  return o;
}

oracle::Vec bspline_knots_oracle(const KanGrid& g, int order) {
  oracle::Vec t;
  const double h = (g.range_hi - g.range_lo) / static_cast<double>(g.grid_size);
  for (int j = 0; j <= static_cast<int>(g.grid_size) + 2 * (order - 1); ++j) t.push_back(g.range_lo + (j - (order - 1)) * h);
  return t;
}

double oracle_lower(const KanGrid& g, std::size_t i) {
  return g.range_lo + (static_cast<double>(i) - static_cast<double>(g.order)) * g.step();
}
double oracle_upper(const KanGrid& g, std::size_t i) { return g.range_lo + static_cast<double>(i + 1) * g.step(); }

Outcome forward_oracles() {
  Rng rng(77);
  double worst_b = 0.0, worst_r = 0.0, worst_e = 0.0;
  for (std::size_t n = 0; n < kOracleConfigs; ++n) {
    const KanGrid g = random_grid(rng);
    const std::size_t in = pick(rng, 1, 6), out = pick(rng, 1, 6), rows = pick(rng, 1, 5);
    const int degree = static_cast<int>(pick(rng, 1, 3));
    Tensor x = Tensor::uniform({rows, in}, g.range_lo - 0.5, g.range_hi + 0.5, rng);

    // Double loop over edges with per-edge spline sums.
    const auto b = BSplineKanLayer::create(in, out, g, degree, rng);
    const Tensor yb = bspline_kan_forward(x, b);
    const auto t = bspline_knots_oracle(g, degree + 1);
    const std::size_t nb = g.grid_size + static_cast<std::size_t>(degree);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t o = 0; o < out; ++o) {
        double s = 0;
        for (std::size_t i = 0; i < in; ++i) {
          const double xi = x[r * in + i];
          double spline = 0;
          for (std::size_t k = 0; k < nb; ++k) spline += b.coeffs[(o * in + i) * nb + k] * oracle::bspline(t, k, degree + 1, xi);
          s += b.base_weight[o * in + i] * oracle::silu(xi) + b.spline_weight[o * in + i] * spline;
        }
        worst_b = std::max(worst_b, std::abs(yb[r * out + o] - s));
      }

    // Triple sum over outputs, bases, inputs.
    const auto rl = ReLUKanLayer::create(in, out, g, rng);
    const Tensor yr = relukan_forward(x, rl);
    const std::size_t nr = g.n_basis();
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t o = 0; o < out; ++o) {
        double s = rl.bias[o];
        for (std::size_t k = 0; k < nr; ++k)
          for (std::size_t i = 0; i < in; ++i) {
            s += rl.weight[(o * nr + k) * in + i] *
                 oracle::relukan_basis(x[r * in + i], oracle_lower(g, k), oracle_upper(g, k));
          }
        worst_r = std::max(worst_r, std::abs(yr[r * out + o] - s));
      }

    // Staged: expand, pool, square, mix.
    const auto e = EfficientKanLayer::create(in, out, g, rng);
    const Tensor ye = efficientkan_forward(x, e);
    for (std::size_t r = 0; r < rows; ++r) {
      oracle::Vec pooled(in, 0.0);
      for (std::size_t i = 0; i < in; ++i) {
        for (std::size_t k = 0; k < nr; ++k) {
          pooled[i] += oracle::relukan_basis(x[r * in + i], oracle_lower(g, k), oracle_upper(g, k));
        }
        pooled[i] /= static_cast<double>(nr);
        pooled[i] *= pooled[i];
      }
      for (std::size_t o = 0; o < out; ++o) {
        double s = e.bias[o];
        for (std::size_t i = 0; i < in; ++i) s += e.weight[o * in + i] * pooled[i];
        worst_e = std::max(worst_e, std::abs(ye[r * out + o] - s));
      }
    }
  }
  Outcome o;
  o.pass = worst_b <= kOracleTolerance && worst_r <= kOracleTolerance && worst_e <= kOracleTolerance;
  o.detail = fmt("%zu configs each, max |diff| bspline %.2e relukan %.2e efficientkan %.2e (tol %.0e)", kOracleConfigs,
                 worst_b, worst_r, worst_e, kOracleTolerance);
  return o;
}

Outcome parameter_laws() {
  Rng rng(5);
  std::size_t layer_cases = 0, layer_failures = 0;
  for (std::size_t n = 0; n < 50; ++n) {
    const KanGrid g = KanGrid::make(pick(rng, 1, 8), pick(rng, 0, 4));
    const std::size_t in = pick(rng, 1, 64), out = pick(rng, 1, 64);
    const auto e = EfficientKanLayer::create(in, out, g, rng);
    const auto r = ReLUKanLayer::create(in, out, g, rng);
    const auto a = Affine::create(in, out, rng);
    ++layer_cases;
    const bool same_as_affine = count_elements(e.parameters()) == count_elements(a.parameters());
    const bool relukan_weight = r.weight.numel() == g.n_basis() * a.weight.numel();
    if (!same_as_affine || !relukan_weight) ++layer_failures;
  }

  std::size_t configs = 0;
  std::vector<std::string> failures;
  for (std::size_t d : {16u, 32u, 64u})
    for (std::size_t depth : {1u, 4u})
      for (std::size_t G = 1; G <= 5; ++G)
        for (std::size_t K = 0; K <= 3; ++K) {
          if (G + K < 2) continue;
          ArchConfig arch;
          arch.d_model = d;
          arch.depth = depth;
          arch.grid_size = G;
          arch.order = K;
          ++configs;
          const auto cmp = compare_variants(arch, {Variant::kEfficientKan, Variant::kMlp, Variant::kReLUKan});
          const auto pe = cmp.find(Variant::kEfficientKan)->totals().params;
          const auto pm = cmp.find(Variant::kMlp)->totals().params;
          const auto pr = cmp.find(Variant::kReLUKan)->totals().params;
          if (!(pe < pm && pm < pr)) failures.push_back(fmt("d=%zu,depth=%zu,G=%zu,K=%zu", d, depth, G, K));
        }
  Outcome o;
  o.pass = layer_failures == 0 && failures.empty();
  std::string first;
  for (std::size_t i = 0; i < failures.size() && i < 3; ++i) first += (i ? " " : "") + failures[i];
  o.detail = fmt("layer laws %zu/%zu exact; encoder ordering efficientkan < mlp < relukan holds on %zu/%zu configs%s%s",
                 layer_cases - layer_failures, layer_cases, configs - failures.size(), configs,
                 failures.empty() ? "" : ", fails at ", first.c_str());
  return o;
}

Outcome memory_direction() {
  std::size_t layer_cases = 0, layer_failures = 0, ratio_failures = 0;
  for (std::size_t in = 1; in <= 16; in += 3)
    for (std::size_t out = 2; out <= 64; out *= 2)
      for (std::size_t G : {1u, 3u, 5u, 8u})
        for (std::size_t K : {1u, 2u, 3u}) {
          const std::size_t rows = 7, n = G + K;
          ++layer_cases;
          const KanGrid g = KanGrid::make(G, K);
          Rng rng(1);
          const auto b = estimate_activation_memory(BSplineKanLayer::create(in, out, g, static_cast<int>(K), rng), rows);
          const auto e = estimate_activation_memory(EfficientKanLayer::create(in, out, g, rng), rows);
          if (!(b.totals().activation_bytes > e.totals().activation_bytes)) ++layer_failures;
          const auto rb = retained_basis_elements(Variant::kBSplineKan, in, out, n, rows);
          const auto re = retained_basis_elements(Variant::kEfficientKan, in, out, n, rows);
          if (rb != out * re) ++ratio_failures;
        }
  std::size_t enc_cases = 0, enc_failures = 0;
  for (std::size_t d : {8u, 16u, 64u})
    for (std::size_t tokens : {4u, 64u})
      for (std::size_t K : {1u, 3u}) {
        ArchConfig arch;
        arch.d_model = d;
        arch.n_heads = 4;
        arch.n_tokens = tokens;
        arch.order = K;
        ++enc_cases;
        const auto cmp = compare_variants(arch, {Variant::kBSplineKan, Variant::kEfficientKan});
        if (!(cmp.find(Variant::kBSplineKan)->totals().activation_bytes >
              cmp.find(Variant::kEfficientKan)->totals().activation_bytes)) {
          ++enc_failures;
        }
      }
  Outcome o;
  o.pass = layer_failures == 0 && ratio_failures == 0 && enc_failures == 0;
  o.detail = fmt("bspline > efficientkan bytes on %zu/%zu layers and %zu/%zu encoders; basis ratio == c_out on %zu/%zu",
                 layer_cases - layer_failures, layer_cases, enc_cases - enc_failures, enc_cases,
                 layer_cases - ratio_failures, layer_cases);
  return o;
}

Outcome training_descent() {
  const auto t0 = Clock::now();
  std::size_t reached = 0;
  std::string per_seed;
  for (std::size_t s = 0; s < kTrainSeeds; ++s) {
    const auto data = synth_dataset(1000 + s, kTrainSamples, kTrainImage, SynthTask::kBinaryBlob);
    ModelConfig mc;
    mc.image_height = mc.image_width = kTrainImage;
    mc.d_model = 64;
    mc.depth = 4;
    auto model = TransUKanModel::create(mc, s);
    TrainConfig tc;
    tc.epochs = kTrainEpochs;
    tc.warmup_epochs = kTrainWarmup;
    tc.lr_base = kTrainLr;
    tc.seed = s;
    const TrainHistory h = train(model, data, tc);
    const double dice = h.back().val_dice;
    if (dice >= kTrainDice) ++reached;
    per_seed += fmt("%s%.4f", s ? " " : "", dice);
    std::printf("    seed %zu: val dice %.4f after %zu epochs (%.0f s elapsed)\n", s, dice, kTrainEpochs,
                seconds_since(t0));
    std::fflush(stdout);
  }
  const double secs = seconds_since(t0);
  Outcome o;
  o.pass = reached >= kTrainSeedsRequired && secs < kTrainBudgetSeconds;
  o.detail = fmt("val dice [%s], %zu/%zu seeds >= %.2f (need %zu), %.0f s (budget %.0f)", per_seed.c_str(), reached,
                 kTrainSeeds, kTrainDice, kTrainSeedsRequired, secs, kTrainBudgetSeconds);
  return o;
}

Outcome metric_identities() {
  Rng rng(31);
  double worst = 0.0;
  for (std::size_t n = 0; n < kMetricPairs; ++n) {
    const std::size_t classes = pick(rng, 2, 5), pixels = pick(rng, 1, 300);
    std::uniform_int_distribution<Label> lab(0, static_cast<Label>(classes - 1));
    std::vector<Label> p(pixels), t(pixels);
    for (auto& v : p) v = lab(rng);
    for (auto& v : t) v = lab(rng);
    const SegMetrics m = seg_metrics(p, t, classes);
    for (std::size_t c = 0; c < classes; ++c) worst = std::max(worst, std::abs(m.dice[c] - 2 * m.iou[c] / (1 + m.iou[c])));
  }
  struct Hand {
    std::vector<Label> pred, truth;
    double dice1, iou1, acc;
  };
  const Hand cases[] = {
      {{1, 1, 0, 0}, {1, 0, 1, 0}, 0.5, 1.0 / 3.0, 0.5},
      {{1, 0, 0, 1}, {1, 0, 0, 1}, 1.0, 1.0, 1.0},
      {{1, 1, 0, 0}, {0, 0, 1, 1}, 0.0, 0.0, 0.0},
      {{1, 1, 1, 0}, {1, 0, 0, 0}, 0.5, 1.0 / 3.0, 0.5},
      {{0, 0, 0, 0}, {0, 0, 0, 0}, 1.0, 1.0, 1.0},
  };
  std::size_t hand_ok = 0;
  for (const Hand& h : cases) {
    const SegMetrics m = seg_metrics(h.pred, h.truth, 2);
    if (m.dice[1] == h.dice1 && m.iou[1] == h.iou1 && m.pixel_accuracy == h.acc) ++hand_ok;
  }
  Outcome o;
  o.pass = worst <= kMetricTolerance && hand_ok == std::size(cases);
  o.detail = fmt("%zu pairs, max |dice - 2iou/(1+iou)| %.2e (tol %.0e); hand cases %zu/%zu exact", kMetricPairs, worst,
                 kMetricTolerance, hand_ok, std::size(cases));
  return o;
}

std::string history_bytes(const TrainHistory& h) {
  TrainHistory copy = h;
  for (auto& r : copy) r.seconds = 0.0;
  std::ostringstream out;
  write_history_csv(out, copy);
  return out.str();
}

std::vector<char> file_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

Outcome determinism() {
  ModelConfig mc;
  mc.image_height = mc.image_width = 16;
  mc.d_model = 8;
  mc.depth = 1;
  mc.n_heads = 2;
  TrainConfig tc;
  tc.epochs = 3;
  tc.warmup_epochs = 1;
  tc.batch_size = 4;
  tc.lr_base = 1e-3;
  tc.seed = 4;
  const auto data = synth_dataset(9, 20, 16, SynthTask::kBinaryBlob);
  auto m1 = TransUKanModel::create(mc, 4), m2 = TransUKanModel::create(mc, 4);
  const TrainHistory h1 = train(m1, data, tc), h2 = train(m2, data, tc);
  const bool history_same = same_trajectory(h1, h2) && history_bytes(h1) == history_bytes(h2);

  const fs::path dir = fs::temp_directory_path() / "tukan_acceptance";
  fs::create_directories(dir);
  save_checkpoint(m1, dir / "a.tukn");
  const TransUKanModel back = load_checkpoint(dir / "a.tukn", mc);
  bool ckpt_same = back.config == mc;
  const auto pa = m1.parameters(), pb = back.parameters();
  ckpt_same = ckpt_same && pa.size() == pb.size();
  for (std::size_t i = 0; ckpt_same && i < pa.size(); ++i) ckpt_same = pa[i].equal(pb[i]);
  save_checkpoint(back, dir / "b.tukn");
  ckpt_same = ckpt_same && file_bytes(dir / "a.tukn") == file_bytes(dir / "b.tukn");

  Rng rng(12);
  bool pgm_same = true;
  for (std::uint16_t maxval : {std::uint16_t{255}, std::uint16_t{65535}, std::uint16_t{1023}}) {
    GrayImage img{pick(rng, 1, 40), pick(rng, 1, 40), maxval, {}};
    for (std::size_t i = 0; i < img.width * img.height; ++i) img.pixels.push_back(static_cast<std::uint16_t>(pick(rng, 0, maxval)));
    write_pgm(dir / "p.pgm", img);
    const GrayImage r = read_pgm(dir / "p.pgm");
    pgm_same = pgm_same && r.width == img.width && r.height == img.height && r.maxval == maxval && r.pixels == img.pixels;
  }
  fs::remove_all(dir);
  Outcome o;
  o.pass = history_same && ckpt_same && pgm_same;
  o.detail = fmt("history %s, checkpoint %s, pgm %s", history_same ? "bit-identical" : "DIFFERS",
                 ckpt_same ? "bit-exact" : "DIFFERS", pgm_same ? "pixel-exact" : "DIFFERS");
  return o;
}

Outcome schedule() {
  const LrSchedule s{kScheduleBase, 200, 10};
  const double at9 = lr_at(9, s), at10 = lr_at(10, s), last = lr_at(s.epochs - 1, s);
  // Continuity: the step across the boundary is no larger than one warmup increment.
  const double warm_step = lr_at(9, s) - lr_at(8, s);
  const bool continuous = std::abs(at10 - at9) <= warm_step;
  Outcome o;
  o.pass = at9 == kScheduleBase && continuous && last < kScheduleTail * kScheduleBase;
  o.detail = fmt("lr_at(9) %.17g, lr_at(10) %.17g (jump %.2e, warmup step %.2e), lr_at(199) %.3e (< %.0e)", at9, at10,
                 std::abs(at10 - at9), warm_step, last, kScheduleTail * kScheduleBase);
  return o;
}

struct Criterion {
  int id;
  const char* name;
  std::function<Outcome()> run;
};

}  // namespace

int main(int argc, char** argv) {
  bool strict = false;
  std::set<int> only;
  for (int i = 1; i < argc; ++i) {
    if (std::strcmp(argv[i], "--strict") == 0) {
      strict = true;
    } else if (std::strcmp(argv[i], "--only") == 0 && i + 1 < argc) {
      std::stringstream ss(argv[++i]);
      for (std::string tok; std::getline(ss, tok, ',');) only.insert(std::stoi(tok));
    } else {
      std::fprintf(stderr, "usage: acceptance [--strict] [--only 1,2,...]\n");
      return 2;
    }
  }

  const std::vector<Criterion> criteria = {
      {1, "gradient correctness", gradients},
      {2, "relu-kan basis properties", basis_properties},
      {3, "kan forward oracles", forward_oracles},
      {4, "parameter-count laws", parameter_laws},
      {5, "activation-memory direction", memory_direction},
      {6, "training descent", training_descent},
      {7, "metric identities", metric_identities},
      {8, "determinism and persistence", determinism},
      {9, "learning-rate schedule", schedule},
  };

  std::size_t evaluated = 0, passed = 0;
  std::vector<std::string> lines;
  for (const Criterion& c : criteria) {
    if (!only.empty() && !only.count(c.id)) continue;
    std::printf("criterion %d: %s\n", c.id, c.name);
    std::fflush(stdout);
    const auto t0 = Clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    ++evaluated;
    if (o.pass) ++passed;
    const std::string line =
        fmt("[%s] %d %s: %s (%.1f s)", o.pass ? "PASS" : "FAIL", c.id, c.name, o.detail.c_str(), seconds_since(t0));
    std::printf("%s\n", line.c_str());
    std::fflush(stdout);
    lines.push_back(line);
  }
  std::printf("\nsummary\n");
  for (const auto& l : lines) std::printf("%s\n", l.c_str());
  std::printf("acceptance: %zu criteria evaluated, %zu passed, %zu failed\n", evaluated, passed, evaluated - passed);
  return strict && passed != evaluated ? 1 : 0;
}
