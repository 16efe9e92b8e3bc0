#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <type_traits>

#include "CLI11.hpp"
#include "akhcr/checkpoint.hpp"
#include "akhcr/metrics.hpp"
#include "akhcr/parallel.hpp"
#include "akhcr/preprocess.hpp"
#include "akhcr/synth.hpp"
#include "akhcr/train.hpp"

namespace fs = std::filesystem;
using namespace akhcr;

namespace {

// exit codes: 0 ok, 1 internal, 2 usage/config, 3 I/O, 4 format, 5 numeric
constexpr int kExitInternal = 1;
constexpr int kExitUsage = 2;
constexpr int kExitIo = 3;
constexpr int kExitFormat = 4;
constexpr int kExitNumeric = 5;

// plain `key = value` option files; '-' and '_' are interchangeable in keys,
// '#' starts a comment, command-line flags win on conflict
std::map<std::string, std::string> load_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read config file: " + path);
  std::map<std::string, std::string> kv;
  std::string line;
  std::size_t line_no = 0;
  auto trim = [](std::string s) {
    const auto a = s.find_first_not_of(" \t\r");
    const auto b = s.find_last_not_of(" \t\r");
    return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
  };
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("bad config line " + std::to_string(line_no) + " in " + path +
                        " (want key = value)");
    std::string key = trim(line.substr(0, eq));
    for (auto& c : key)
      if (c == '-') c = '_';
    kv[key] = trim(line.substr(eq + 1));
  }
  return kv;
}

template <class T>
void maybe_set(const CLI::App* sub, const std::map<std::string, std::string>& kv,
               const std::string& flag, T& var) {
  if (sub->count("--" + flag) > 0) return;  // explicit flag wins
  std::string key = flag;
  for (auto& c : key)
    if (c == '-') c = '_';
  const auto it = kv.find(key);
  if (it == kv.end()) return;
  if constexpr (std::is_same_v<T, std::string>) {
    var = it->second;
  } else {
    std::istringstream ss(it->second);
    ss >> var;
    if (ss.fail() || !ss.eof())
      throw ConfigError("bad config value '" + it->second + "' for '" + key + "'");
  }
}

void require_value(const std::string& value, const std::string& flag) {
  if (value.empty()) throw UsageError("--" + flag + " is required");
}

struct SynthArgs {
  std::string config;
  std::string out;
  int classes = 84;
  int per_class = 50;
  std::uint64_t seed = 1;
};

struct TrainArgs {
  std::string config;
  std::string data, out, lr_schedule, resume, index;
  std::uint64_t seed = 1;
  int batch_size = 64;
  double lambda = 1e-3;
  double val_fraction = 0.28;
  double blank_threshold = 0.02;
  int prefetch_depth = 4;
  int threads = 0;
};

struct EvalArgs {
  std::string config;
  std::string data, checkpoint, out, index;
  std::uint64_t seed = 1;
  int batch_size = 64;
  double val_fraction = 0.28;
  double blank_threshold = 0.02;
  int prefetch_depth = 4;
  int threads = 0;
};

struct PredictArgs {
  std::string config;
  std::string checkpoint, image;
  int topk = 5;
  int threads = 0;
};

void run_synth(const CLI::App* sub, SynthArgs& args) {
  if (!args.config.empty()) {
    const auto kv = load_config_file(args.config);
    maybe_set(sub, kv, "out", args.out);
    maybe_set(sub, kv, "classes", args.classes);
    maybe_set(sub, kv, "per-class", args.per_class);
    maybe_set(sub, kv, "seed", args.seed);
  }
  require_value(args.out, "out");
  synth_dataset(args.out, args.classes, args.per_class, args.seed);
  write_kv_config((fs::path(args.out) / "run_config.txt").string(),
                  {{"command", "synth"},
                   {"out", args.out},
                   {"classes", std::to_string(args.classes)},
                   {"per_class", std::to_string(args.per_class)},
                   {"seed", std::to_string(args.seed)}});
  std::cout << "wrote " << static_cast<long long>(args.classes) * args.per_class
            << " images (" << args.classes << " classes x " << args.per_class << ") to "
            << args.out << "\n";
}

void run_train(const CLI::App* sub, TrainArgs& args) {
  if (!args.config.empty()) {
    const auto kv = load_config_file(args.config);
    maybe_set(sub, kv, "data", args.data);
    maybe_set(sub, kv, "out", args.out);
    maybe_set(sub, kv, "seed", args.seed);
    maybe_set(sub, kv, "batch-size", args.batch_size);
    maybe_set(sub, kv, "lr-schedule", args.lr_schedule);
    maybe_set(sub, kv, "lambda", args.lambda);
    maybe_set(sub, kv, "val-fraction", args.val_fraction);
    maybe_set(sub, kv, "blank-threshold", args.blank_threshold);
    maybe_set(sub, kv, "prefetch-depth", args.prefetch_depth);
    maybe_set(sub, kv, "threads", args.threads);
    maybe_set(sub, kv, "resume", args.resume);
    maybe_set(sub, kv, "index", args.index);
  }
  require_value(args.data, "data");
  require_value(args.out, "out");
  TrainOptions opts;
  opts.data_root = args.data;
  opts.out_dir = args.out;
  opts.seed = args.seed;
  opts.batch_size = args.batch_size;
  if (!args.lr_schedule.empty()) opts.schedule = LrSchedule::parse(args.lr_schedule);
  opts.lambda = args.lambda;
  opts.val_fraction = args.val_fraction;
  opts.blank_threshold = args.blank_threshold;
  opts.prefetch_depth = args.prefetch_depth;
  opts.threads = args.threads;
  opts.resume_checkpoint = args.resume;
  opts.index_file = args.index;

  const TrainResult res = train_model(opts);
  const EpochRow& last = res.curves.back();
  std::cout << "trained " << res.curves.size() << " epoch(s); final val accuracy "
            << format_fixed(last.val_accuracy, 4) << ", val loss "
            << format_fixed(last.val_loss, 5) << "\n";
  std::cout << "curves: " << res.curves_csv << "\n";
  std::cout << "checkpoints: " << res.final_checkpoint << " (final), "
            << res.best_checkpoint << " (best)\n";
}

void run_eval(const CLI::App* sub, EvalArgs& args) {
  if (!args.config.empty()) {
    const auto kv = load_config_file(args.config);
    maybe_set(sub, kv, "data", args.data);
    maybe_set(sub, kv, "checkpoint", args.checkpoint);
    maybe_set(sub, kv, "out", args.out);
    maybe_set(sub, kv, "index", args.index);
    maybe_set(sub, kv, "seed", args.seed);
    maybe_set(sub, kv, "batch-size", args.batch_size);
    maybe_set(sub, kv, "val-fraction", args.val_fraction);
    maybe_set(sub, kv, "blank-threshold", args.blank_threshold);
    maybe_set(sub, kv, "prefetch-depth", args.prefetch_depth);
    maybe_set(sub, kv, "threads", args.threads);
  }
  require_value(args.data, "data");
  require_value(args.checkpoint, "checkpoint");
  require_value(args.out, "out");
  if (args.threads > 0) set_worker_count(args.threads);
  std::error_code ec;
  fs::create_directories(args.out, ec);
  if (ec) throw IoError("cannot create output directory: " + args.out);

  const Logger log = stderr_logger();
  const DatasetIndex index = load_or_build_index(args.data, args.index, args.val_fraction,
                                                 args.blank_threshold, args.seed, log);
  const Checkpoint ck = load_checkpoint(args.checkpoint);
  if (ck.class_names != index.class_names)
    throw ConfigError("eval: checkpoint class names do not match the dataset");

  ModelGraph graph =
      build_graph(ArchConfig::akhcrnet(static_cast<int>(ck.class_names.size())));
  ModelState state = init_state<float>(graph, 0);
  AdamState adam;
  apply_checkpoint(ck, state, adam);

  const EvalOutcome outcome = evaluate_split(graph, state, index, SplitTag::val,
                                             args.batch_size, args.prefetch_depth, log);
  const ClassReport report = precision_recall_f1(outcome.cm);
  for (std::size_t c = 0; c < report.per_class.size(); ++c)
    if (report.per_class[c].degenerate)
      log("eval: class '" + index.class_names[c] + "' is degenerate (no support or no predictions)");

  const std::string report_path = (fs::path(args.out) / "report.csv").string();
  const std::string confusion_path = (fs::path(args.out) / "confusion.csv").string();
  emit_report_csv(report, outcome.cm, index.class_names, report_path, confusion_path);
  write_kv_config((fs::path(args.out) / "run_config.txt").string(),
                  {{"command", "eval"},
                   {"data", args.data},
                   {"checkpoint", args.checkpoint},
                   {"out", args.out},
                   {"index", args.index},
                   {"seed", std::to_string(args.seed)},
                   {"batch_size", std::to_string(args.batch_size)},
                   {"val_fraction", LrSchedule::format_rate(args.val_fraction)},
                   {"blank_threshold", LrSchedule::format_rate(args.blank_threshold)},
                   {"prefetch_depth", std::to_string(args.prefetch_depth)},
                   {"threads", std::to_string(args.threads)}});

  std::cout << "val accuracy " << format_fixed(outcome.accuracy, 6) << " over "
            << outcome.samples << " samples\n";
  std::cout << "macro precision " << format_fixed(report.macro_precision, 4) << ", recall "
            << format_fixed(report.macro_recall, 4) << ", f1 "
            << format_fixed(report.macro_f1, 4) << "\n";
  std::cout << "report: " << report_path << "\n";
  std::cout << "confusion: " << confusion_path << "\n";
}

void run_predict(const CLI::App* sub, PredictArgs& args) {
  if (!args.config.empty()) {
    const auto kv = load_config_file(args.config);
    maybe_set(sub, kv, "checkpoint", args.checkpoint);
    maybe_set(sub, kv, "image", args.image);
    maybe_set(sub, kv, "topk", args.topk);
    maybe_set(sub, kv, "threads", args.threads);
  }
  require_value(args.checkpoint, "checkpoint");
  require_value(args.image, "image");
  if (args.threads > 0) set_worker_count(args.threads);
  const Checkpoint ck = load_checkpoint(args.checkpoint);
  ModelGraph graph =
      build_graph(ArchConfig::akhcrnet(static_cast<int>(ck.class_names.size())));
  ModelState state = init_state<float>(graph, 0);
  AdamState adam;
  apply_checkpoint(ck, state, adam);

  const Tensor image = preprocess_pipeline(decode_image(args.image));
  const auto ranked = predict(graph, state, image, args.topk);
  for (std::size_t i = 0; i < ranked.size(); ++i)
    std::cout << i + 1 << ',' << ck.class_names[static_cast<std::size_t>(ranked[i].class_id)]
              << ',' << format_fixed(ranked[i].probability, 6) << "\n";
}

int classify_exit(const std::exception& e) {
  if (dynamic_cast<const IoError*>(&e)) return kExitIo;
  if (dynamic_cast<const FormatError*>(&e)) return kExitFormat;
  if (dynamic_cast<const NumericError*>(&e)) return kExitNumeric;
  if (dynamic_cast<const RangeError*>(&e) || dynamic_cast<const ConfigError*>(&e) ||
      dynamic_cast<const DataError*>(&e) || dynamic_cast<const UsageError*>(&e))
    return kExitUsage;
  return kExitInternal;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"AKHCRNet: from-scratch handwritten character recognition"};
  app.require_subcommand(1);

  SynthArgs synth_args;
  auto* synth = app.add_subcommand("synth", "generate a synthetic class-folder dataset");
  synth->add_option("--config", synth_args.config, "key = value option file");
  synth->add_option("--out", synth_args.out, "output dataset root");
  synth->add_option("--classes", synth_args.classes, "number of classes (default 84)");
  synth->add_option("--per-class", synth_args.per_class, "images per class (default 50)");
  synth->add_option("--seed", synth_args.seed, "generator seed");
  synth->callback([&] { run_synth(synth, synth_args); });

  TrainArgs train_args;
  auto* train = app.add_subcommand("train", "train on a class-folder dataset");
  train->add_option("--config", train_args.config, "key = value option file");
  train->add_option("--data", train_args.data, "dataset root");
  train->add_option("--out", train_args.out, "output directory");
  train->add_option("--seed", train_args.seed, "run seed");
  train->add_option("--batch-size", train_args.batch_size, "mini-batch size (default 64)");
  train->add_option("--lr-schedule", train_args.lr_schedule,
                    "phases as <epochs>x<rate>,... (default 5x0.001,3x0.0001,3x0.00004)");
  train->add_option("--lambda", train_args.lambda, "L2 strength (default 0.001)");
  train->add_option("--val-fraction", train_args.val_fraction,
                    "validation fraction (default 0.28)");
  train->add_option("--blank-threshold", train_args.blank_threshold,
                    "blank-image std threshold (default 0.02)");
  train->add_option("--prefetch-depth", train_args.prefetch_depth,
                    "prefetched batches (default 4)");
  train->add_option("--threads", train_args.threads, "worker count (0 = hardware)");
  train->add_option("--resume", train_args.resume, "checkpoint to resume from");
  train->add_option("--index", train_args.index, "reuse a split index file");
  train->callback([&] { run_train(train, train_args); });

  EvalArgs eval_args;
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on the validation split");
  eval->add_option("--config", eval_args.config, "key = value option file");
  eval->add_option("--data", eval_args.data, "dataset root");
  eval->add_option("--checkpoint", eval_args.checkpoint, "checkpoint file");
  eval->add_option("--out", eval_args.out, "output directory");
  eval->add_option("--index", eval_args.index, "reuse a split index file");
  eval->add_option("--seed", eval_args.seed, "split seed (must match training)");
  eval->add_option("--batch-size", eval_args.batch_size, "mini-batch size");
  eval->add_option("--val-fraction", eval_args.val_fraction, "validation fraction");
  eval->add_option("--blank-threshold", eval_args.blank_threshold, "blank-image threshold");
  eval->add_option("--prefetch-depth", eval_args.prefetch_depth, "prefetched batches");
  eval->add_option("--threads", eval_args.threads, "worker count (0 = hardware)");
  eval->callback([&] { run_eval(eval, eval_args); });

  PredictArgs predict_args;
  auto* pred = app.add_subcommand("predict", "classify one image with a checkpoint");
  pred->add_option("--config", predict_args.config, "key = value option file");
  pred->add_option("--checkpoint", predict_args.checkpoint, "checkpoint file");
  pred->add_option("--image", predict_args.image, "image file (PNG or BMP)");
  pred->add_option("--topk", predict_args.topk, "ranked classes to print (default 5)");
  pred->add_option("--threads", predict_args.threads, "worker count (0 = hardware)");
  pred->callback([&] { run_predict(pred, predict_args); });

  try {
    app.parse(argc, argv);
    return 0;
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return classify_exit(e);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitInternal;
  }
}
