// transukan: gradcheck, profile, train, eval and synth subcommands.
//
// Exit codes: 0 success, 1 runtime or assertion failure, 2 usage or config
// error.

#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "transukan/checkpoint.hpp"
#include "transukan/config.hpp"
#include "transukan/data.hpp"
#include "transukan/error.hpp"
#include "transukan/gradcheck_suite.hpp"
#include "transukan/metrics.hpp"
#include "transukan/model.hpp"
#include "transukan/profiler.hpp"
#include "transukan/train.hpp"

namespace fs = std::filesystem;
using namespace tukan;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitFailure = 1;
constexpr int kExitUsage = 2;

/// Thrown for missing inputs and bad flag values; maps to exit 2.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

const std::vector<std::string> kModelKeys = {"seed",      "in_channels", "n_classes", "image_size",
                                             "d_model",   "depth",       "heads",     "grid_size",
                                             "order",     "range_lo",    "range_hi",  "block_order"};
const std::vector<std::string> kTrainKeys = {"lr",     "epochs",       "warmup_epochs", "batch_size",
                                             "w_ce",   "w_dice",       "weight_decay",  "augment",
                                             "dataset", "synth_task",  "synth_samples", "history",
                                             "checkpoint"};
const std::vector<std::string> kProfileKeys = {"seed",  "d_model", "depth",     "heads",    "tokens",
                                               "profile_batch", "grid_size", "order", "mlp_ratio", "block_order"};
const std::vector<std::string> kSynthKeys = {"seed", "synth_task", "synth_samples", "image_size"};

/// `--key value` for each schema key in `keys`.
struct KeyFlags {
  std::map<std::string, std::string> values;

  void attach(CLI::App* app, const std::vector<std::string>& keys) {
    for (const KeySpec& k : config_schema()) {
      if (std::find(keys.begin(), keys.end(), k.key) == keys.end()) continue;
      app->add_option("--" + k.key, values[k.key], k.help);
    }
  }

  KeyValues given(const CLI::App* app) const {
    KeyValues kv;
    for (const auto& [k, v] : values) {
      if (app->count("--" + k) > 0) kv[k] = v;
    }
    return kv;
  }
};

void require_file(const std::string& path, const char* what) {
  if (path.empty()) throw UsageError(std::string(what) + " path is required");
  if (!fs::exists(path)) throw UsageError(std::string(what) + " not found: " + path);
}

RunConfig effective_config(const std::string& config_path, const KeyValues& flags) {
  RunConfig rc;
  rc.apply_env_seed(std::getenv("TRANSUKAN_SEED"));
  if (!config_path.empty()) {
    require_file(config_path, "config file");
    rc.apply_file(read_config_file(config_path));
  }
  rc.apply_flags(flags);
  return rc;
}

void print_metrics(const SegMetrics& m) {
  std::printf("%-8s %10s %10s %10s\n", "class", "dice", "iou", "accuracy");
  for (std::size_t c = 0; c < m.dice.size(); ++c) {
    std::printf("%-8zu %10.4f %10.4f %10.4f\n", c, m.dice[c], m.iou[c], m.accuracy[c]);
  }
  std::printf("mean_dice %.4f  mean_iou %.4f  pixel_accuracy %.4f\n", m.mean_dice, m.mean_iou, m.pixel_accuracy);
}

// ---------------------------------------------------------------------------

struct GradcheckArgs {
  std::string scope = "all";
  std::size_t seeds = 20;
  std::string seed;
  bool inject_fault = false;
};

int cmd_gradcheck(const GradcheckArgs& a, const CLI::App* sub) {
  const GradScope scope = parse_grad_scope(a.scope);
  KeyValues flags;
  if (sub->count("--seed") > 0) flags["seed"] = a.seed;
  const RunConfig rc = effective_config("", flags);
  SuiteOptions opt;
  opt.seeds = a.seeds;
  opt.base_seed = rc.get_u64("seed");
  opt.inject_fault = a.inject_fault;

  std::cout << "scope = " << a.scope << "\nseeds = " << a.seeds << "\n";
  rc.echo(std::cout, {"seed"});
  std::cout << "inject_fault = " << (a.inject_fault ? "true" : "false") << "\n\n";
  std::printf("%-7s %-28s %12s %9s %6s %-14s %13s %13s %6s %s\n", "scope", "item", "max_rel_err", "tol", "seed", "worst",
              "autodiff", "numeric", "kinks", "status");
  std::fflush(stdout);
  const SuiteResult r = run_gradcheck_suite(scope, opt, [](const SuiteItemResult& it) {
    std::printf("%-7s %-28s %12.3e %9.0e %6llu %-14s %13.6e %13.6e %6zu %s\n", it.scope.c_str(), it.name.c_str(),
                it.max_rel_err, it.tolerance, static_cast<unsigned long long>(it.worst_seed), it.worst_target.c_str(),
                it.autodiff_at_worst, it.numeric_at_worst, it.kinks_skipped, it.pass ? "PASS" : "FAIL");
    std::fflush(stdout);
  });
  std::size_t failed = 0;
  for (const auto& it : r.items) failed += it.pass ? 0 : 1;
  std::printf("\n%zu items, %zu failed, %.1f s\n", r.items.size(), failed, r.seconds);
  return r.pass ? kExitOk : kExitFailure;
}

// ---------------------------------------------------------------------------

struct ProfileArgs {
  std::string config;
  std::string variants;
  std::string output;
  KeyFlags keys;
};

int cmd_profile(const ProfileArgs& a, const CLI::App* sub) {
  const RunConfig rc = effective_config(a.config, a.keys.given(sub));
  rc.echo(std::cout, kProfileKeys);
  const ArchConfig arch = arch_config_from(rc);
  std::vector<Variant> variants;
  if (a.variants.empty()) {
    variants = all_variants();
  } else {
    std::stringstream ss(a.variants);
    for (std::string name; std::getline(ss, name, ',');) variants.push_back(parse_variant(name));
  }
  const VariantComparison cmp = compare_variants(arch, variants);
  std::cout << "\n";
  write_table(std::cout, cmp);
  if (!a.output.empty()) {
    std::ofstream out(a.output);
    if (!out) throw IoError(a.output + ": cannot open for writing");
    write_tsv(out, cmp);
    if (!out) throw IoError(a.output + ": write failed");
  }
  bool pass = true;
  std::cout << "\n";
  for (const OrderingCheck& c : check_orderings(cmp)) {
    std::cout << (c.pass ? "PASS  " : "FAIL  ") << c.description << "\n";
    pass = pass && c.pass;
  }
  return pass ? kExitOk : kExitFailure;
}

// ---------------------------------------------------------------------------

std::vector<SegSample> dataset_for(const RunConfig& rc, const ModelConfig& mc) {
  const std::string dir = rc.get("dataset");
  if (dir.empty()) {
    const SynthTask task = parse_synth_task(rc.get("synth_task"));
    if (synth_task_classes(task) != mc.n_classes) {
      throw ConfigError("synth_task " + synth_task_name(task) + " has " + std::to_string(synth_task_classes(task)) +
                        " classes but n_classes = " + std::to_string(mc.n_classes));
    }
    if (mc.in_channels != 1) throw ConfigError("synthetic data has one channel; set in_channels = 1");
    return synth_dataset(rc.get_u64("seed"), rc.get_size("synth_samples"), mc.image_height, task);
  }
  require_file(dir, "dataset directory");
  return load_dataset(dir, default_label_table(mc.n_classes), mc.image_height, mc.image_width);
}

struct TrainArgs {
  std::string config;
  KeyFlags keys;
};

int cmd_train(const TrainArgs& a, const CLI::App* sub) {
  const RunConfig rc = effective_config(a.config, a.keys.given(sub));
  rc.echo(std::cout, kModelKeys);
  rc.echo(std::cout, kTrainKeys);
  const ModelConfig mc = model_config_from(rc);
  const TrainConfig tc = train_config_from(rc);
  if (tc.n_classes != mc.n_classes) throw ConfigError("n_classes mismatch");
  const std::vector<SegSample> data = dataset_for(rc, mc);

  TransUKanModel model = TransUKanModel::create(mc, tc.seed);
  std::cout << "\nparameters " << count_elements(model.parameters()) << ", samples " << data.size() << "\n";
  TrainHistory history;
  try {
    history = train(model, data, tc, [](const EpochRecord& r) {
      std::printf("epoch %3zu  lr %.3e  loss %.4f  val_dice %.4f  val_iou %.4f  val_acc %.4f  %.1fs\n", r.epoch, r.lr,
                  r.train_loss, r.val_dice, r.val_iou, r.val_acc, r.seconds);
      std::fflush(stdout);
    });
  } catch (const NumericError& e) {
    std::cerr << "training diverged: " << e.what() << "\n";
    return kExitFailure;
  }
  write_history_csv(rc.get("history"), history);
  save_checkpoint(model, rc.get("checkpoint"));

  const DataSplit split = split_indices(data.size(), tc.seed);
  std::vector<SegSample> test;
  for (std::size_t i : split.test) test.push_back(data[i]);
  std::cout << "\nhistory -> " << rc.get("history") << "\ncheckpoint -> " << rc.get("checkpoint") << "\n";
  std::printf("final val_dice %.4f\n", history.back().val_dice);
  if (!test.empty()) {
    const EvalResult r = evaluate(model, test, tc.batch_size);
    std::printf("test split (%zu images)\n", r.images);
    print_metrics(r.metrics);
  }
  return kExitOk;
}

// ---------------------------------------------------------------------------

struct EvalArgs {
  std::string checkpoint;
  std::string dataset;
  std::size_t n_classes = 0;
  std::size_t batch_size = 8;
  std::string seed;
};

int cmd_eval(const EvalArgs& a, const CLI::App* sub) {
  KeyValues flags;
  if (sub->count("--seed") > 0) flags["seed"] = a.seed;
  const RunConfig rc = effective_config("", flags);
  std::cout << "checkpoint = " << a.checkpoint << "\ndataset = " << a.dataset << "\n";
  rc.echo(std::cout, {"seed"});
  require_file(a.checkpoint, "checkpoint");
  require_file(a.dataset, "dataset directory");
  const TransUKanModel model = load_checkpoint(a.checkpoint);
  const ModelConfig& mc = model.config;
  std::cout << "n_classes = " << mc.n_classes << "\nimage_size = " << mc.image_height << "x" << mc.image_width
            << "\n";
  if (sub->count("--n-classes") > 0 && a.n_classes != mc.n_classes) {
    throw ConfigError("--n-classes " + std::to_string(a.n_classes) + " does not match the checkpoint (" +
                      std::to_string(mc.n_classes) + " classes)");
  }
  if (a.batch_size == 0) throw ConfigError("--batch-size must be >= 1");
  const std::vector<SegSample> data =
      load_dataset(a.dataset, default_label_table(mc.n_classes), mc.image_height, mc.image_width);
  const EvalResult r = evaluate(model, data, a.batch_size);
  std::printf("\n%zu images, %.4f s per image\n", r.images, r.seconds_per_image);
  print_metrics(r.metrics);
  return kExitOk;
}

// ---------------------------------------------------------------------------

struct SynthArgs {
  std::string output;
  KeyFlags keys;
};

int cmd_synth(const SynthArgs& a, const CLI::App* sub) {
  const RunConfig rc = effective_config("", a.keys.given(sub));
  std::cout << "output = " << a.output << "\n";
  rc.echo(std::cout, kSynthKeys);
  const SynthTask task = parse_synth_task(rc.get("synth_task"));
  const std::size_t size = rc.get_size("image_size");
  if (size == 0) throw ConfigError("image_size must be >= 1");
  const auto samples = synth_dataset(rc.get_u64("seed"), rc.get_size("synth_samples"), size, task);
  save_dataset(a.output, samples, synth_task_classes(task));
  std::cout << samples.size() << " samples written\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"TransUKAN toolkit: gradient checks, cost profiling, training and evaluation"};
  app.require_subcommand(1);

  GradcheckArgs ga;
  auto* gc = app.add_subcommand("gradcheck", "finite-difference gradient checks");
  gc->add_option("--scope", ga.scope, "ops, layers, blocks, model or all")->capture_default_str();
  gc->add_option("--seeds", ga.seeds, "random seeds per item")->capture_default_str()->check(CLI::PositiveNumber);
  gc->add_option("--seed", ga.seed, "first seed");
  gc->add_flag("--inject-fault", ga.inject_fault, "add an op with a wrong adjoint (negative control)");

  ProfileArgs pa;
  auto* pr = app.add_subcommand("profile", "analytic cost comparison of encoder variants");
  pr->add_option("--config", pa.config, "key = value config file");
  pr->add_option("--variants", pa.variants, "comma-separated subset of mlp,bspline,relukan,efficientkan");
  pr->add_option("--output", pa.output, "TSV report path");
  pa.keys.attach(pr, kProfileKeys);

  TrainArgs ta;
  auto* tr = app.add_subcommand("train", "train the toy segmentation model");
  tr->add_option("--config", ta.config, "key = value config file");
  std::vector<std::string> train_keys = kModelKeys;
  train_keys.insert(train_keys.end(), kTrainKeys.begin(), kTrainKeys.end());
  ta.keys.attach(tr, train_keys);

  EvalArgs ea;
  auto* ev = app.add_subcommand("eval", "score a checkpoint on a dataset directory");
  ev->add_option("--checkpoint", ea.checkpoint, "checkpoint file")->required();
  ev->add_option("--dataset", ea.dataset, "directory with images/ and masks/")->required();
  ev->add_option("--n-classes,--n_classes", ea.n_classes, "expected class count");
  ev->add_option("--batch-size", ea.batch_size, "images per forward pass")->capture_default_str();
  ev->add_option("--seed", ea.seed, "seed");

  SynthArgs sa;
  auto* sy = app.add_subcommand("synth", "write a synthetic dataset as PGM files");
  sy->add_option("--output", sa.output, "output directory")->required();
  sa.keys.attach(sy, kSynthKeys);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (gc->parsed()) return cmd_gradcheck(ga, gc);
    if (pr->parsed()) return cmd_profile(pa, pr);
    if (tr->parsed()) return cmd_train(ta, tr);
    if (ev->parsed()) return cmd_eval(ea, ev);
    if (sy->parsed()) return cmd_synth(sa, sy);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitFailure;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitFailure;
  }
  return kExitUsage;
}
