#include "akhcr/train.hpp"

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "akhcr/errors.hpp"
#include "akhcr/objective.hpp"
#include "akhcr/parallel.hpp"

namespace fs = std::filesystem;

namespace akhcr {

namespace {

// The conv layers cycle through multi-hundred-MB im2col buffers every batch.
// Keeping those blocks in the heap instead of per-call mmap/munmap removes
// the kernel round trips that otherwise dominate system time.
void keep_large_buffers_in_heap() {
#if defined(__GLIBC__)
  static const bool once = [] {
    mallopt(M_MMAP_MAX, 0);
    mallopt(M_TRIM_THRESHOLD, -1);
    return true;
  }();
  (void)once;
#endif
}

// sub-stream tags for mix_seed; resuming at an epoch boundary re-derives the
// exact generator streams of the uninterrupted run
constexpr std::uint64_t kStreamInit = 0x1000;
constexpr std::uint64_t kStreamShuffleBase = 0x2000000;
constexpr std::uint64_t kStreamDropoutBase = 0x3000000;

int argmax_row(const Tensor& t, std::int64_t row) {
  const std::int64_t c = t.shape[1];
  int best = 0;
  float best_v = t[row * c];
  for (std::int64_t j = 1; j < c; ++j)
    if (t[row * c + j] > best_v) {
      best_v = t[row * c + j];
      best = static_cast<int>(j);
    }
  return best;
}

}  // namespace

DatasetIndex load_or_build_index(const std::string& data_root, const std::string& index_file,
                                 double val_fraction, double blank_threshold,
                                 std::uint64_t seed, const Logger& log) {
  if (!index_file.empty()) {
    log("index: reusing " + index_file);
    return read_index(index_file, data_root);
  }
  DatasetIndex index = scan_dataset(data_root, log);
  log("index: cataloged " + std::to_string(index.entries.size()) + " files across " +
      std::to_string(index.class_names.size()) + " classes");
  index = filter_blank(index, blank_threshold, log);
  index = split_dataset(index, val_fraction, seed);
  log("index: split " + std::to_string(index.count(SplitTag::train)) + " train / " +
      std::to_string(index.count(SplitTag::val)) + " val");
  return index;
}

EvalOutcome evaluate_split(const ModelGraph& graph, ModelState& state,
                           const DatasetIndex& index, SplitTag split, int batch_size,
                           int prefetch_depth, const Logger& log) {
  keep_large_buffers_in_heap();
  EvalOutcome outcome;
  outcome.cm = ConfusionMatrix(graph.cfg.n_classes);
  Rng rng(0);  // infer mode draws nothing
  double nll = 0.0;
  std::int64_t correct = 0;

  BatchStream stream(index, split, batch_size, std::nullopt, prefetch_depth, log);
  while (auto batch = stream.next()) {
    const Tensor logits = model_forward(graph, state, batch->images, Mode::infer, rng);
    const Tensor probs = softmax(logits);
    const std::int64_t n = logits.shape[0], c = logits.shape[1];
    for (std::int64_t r = 0; r < n; ++r) {
      const int truth = batch->labels[static_cast<std::size_t>(r)];
      double p = static_cast<double>(probs[r * c + truth]);
      if (p < kProbFloor) p = kProbFloor;
      nll -= std::log(p);
      const int pred = argmax_row(logits, r);
      ++outcome.cm.at(truth, pred);
      if (pred == truth) ++correct;
    }
    outcome.cm.total += n;
    outcome.samples += n;
  }
  if (outcome.samples > 0) {
    outcome.mean_cce = nll / static_cast<double>(outcome.samples);
    outcome.accuracy = static_cast<double>(correct) / static_cast<double>(outcome.samples);
  }
  return outcome;
}

void write_curves_csv(const std::string& path, const std::vector<EpochRow>& rows) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write curves CSV: " + path);
  out << "epoch,lr,train_loss,val_loss,val_accuracy\n";
  for (const auto& row : rows)
    out << row.epoch << ',' << LrSchedule::format_rate(row.lr) << ','
        << format_fixed(row.train_loss, 6) << ',' << format_fixed(row.val_loss, 6) << ','
        << format_fixed(row.val_accuracy, 6) << '\n';
  if (!out) throw IoError("write failure: " + path);
}

void write_kv_config(const std::string& path,
                     const std::vector<std::pair<std::string, std::string>>& items) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write config echo: " + path);
  for (const auto& [key, value] : items) out << key << " = " << value << '\n';
  if (!out) throw IoError("write failure: " + path);
}

void write_run_config(const std::string& path, const TrainOptions& opts) {
  write_kv_config(path, {
    {"command", "train"},
    {"data", opts.data_root},
    {"out", opts.out_dir},
    {"seed", std::to_string(opts.seed)},
    {"batch_size", std::to_string(opts.batch_size)},
    {"lr_schedule", opts.schedule.str()},
    {"epochs", std::to_string(opts.schedule.total_epochs())},
    {"lambda", LrSchedule::format_rate(opts.lambda)},
    {"val_fraction", LrSchedule::format_rate(opts.val_fraction)},
    {"blank_threshold", LrSchedule::format_rate(opts.blank_threshold)},
    {"prefetch_depth", std::to_string(opts.prefetch_depth)},
    {"threads", std::to_string(opts.threads)},
    {"dropout_rate", "0.5"},
    {"resume", opts.resume_checkpoint},
    {"index", opts.index_file},
  });
}

TrainResult train_model(const TrainOptions& opts) {
  keep_large_buffers_in_heap();
  if (opts.data_root.empty() || opts.out_dir.empty())
    throw ConfigError("train: data root and output directory are required");
  if (opts.batch_size < 1) throw RangeError("train: batch_size must be >= 1");
  if (opts.prefetch_depth < 1) throw RangeError("train: prefetch_depth must be >= 1");
  if (opts.threads > 0) set_worker_count(opts.threads);
  const Logger& log = opts.log;

  std::error_code ec;
  fs::create_directories(opts.out_dir, ec);
  if (ec) throw IoError("cannot create output directory: " + opts.out_dir);

  TrainResult res;
  res.index = load_or_build_index(opts.data_root, opts.index_file, opts.val_fraction,
                                  opts.blank_threshold, opts.seed, log);
  const int n_classes = static_cast<int>(res.index.class_names.size());

  res.graph = build_graph(ArchConfig::akhcrnet(n_classes));
  AdamState adam;
  int start_epoch = 0;
  if (!opts.resume_checkpoint.empty()) {
    const Checkpoint ck = load_checkpoint(opts.resume_checkpoint);
    if (ck.class_names != res.index.class_names)
      throw ConfigError("resume: checkpoint class names do not match the dataset");
    res.state = init_state<float>(res.graph, mix_seed(opts.seed, kStreamInit));
    apply_checkpoint(ck, res.state, adam);
    start_epoch = static_cast<int>(ck.epoch);
    log("resume: continuing from epoch " + std::to_string(start_epoch));
  } else {
    res.state = init_state<float>(res.graph, mix_seed(opts.seed, kStreamInit));
  }
  log("model: " + std::to_string(parameter_count(res.state.params)) + " learnable values");

  const LossConfig loss_cfg = default_loss_config(res.graph, opts.lambda);
  const int total_epochs = opts.schedule.total_epochs();
  if (start_epoch >= total_epochs)
    throw ConfigError("resume: checkpoint already covers all " +
                      std::to_string(total_epochs) + " scheduled epochs");

  res.index_file = (fs::path(opts.out_dir) / "split_index.tsv").string();
  write_index(res.index, res.index_file);
  res.run_config_file = (fs::path(opts.out_dir) / "run_config.txt").string();
  write_run_config(res.run_config_file, opts);
  res.curves_csv = (fs::path(opts.out_dir) / "curves.csv").string();
  res.final_checkpoint = (fs::path(opts.out_dir) / "model_final.akhw").string();
  res.best_checkpoint = (fs::path(opts.out_dir) / "model_best.akhw").string();

  double best_accuracy = -1.0;
  std::int64_t clamp_warnings = 0;
  int last_epoch = start_epoch;

  for (int epoch = start_epoch + 1; epoch <= total_epochs; ++epoch) {
    const auto t_start = std::chrono::steady_clock::now();
    const double lr = lr_for_epoch(opts.schedule, epoch);

    Rng dropout_rng(mix_seed(opts.seed, kStreamDropoutBase + static_cast<std::uint64_t>(epoch)));
    const std::uint64_t shuffle_seed =
        mix_seed(opts.seed, kStreamShuffleBase + static_cast<std::uint64_t>(epoch));

    double loss_sum = 0.0;
    std::int64_t seen = 0, correct = 0;
    {
      BatchStream stream(res.index, SplitTag::train, opts.batch_size, shuffle_seed,
                         opts.prefetch_depth, log);
      while (auto batch = stream.next()) {
        const std::int64_t n = static_cast<std::int64_t>(batch->labels.size());
        if (n < 2) {
          log("train: skipping a size-1 trailing batch (batch norm needs >= 2 samples)");
          continue;
        }
        ForwardCache cache;
        const Tensor logits =
            model_forward(res.graph, res.state, batch->images, Mode::train, dropout_rng, &cache);
        for (std::int64_t r = 0; r < n; ++r)
          if (argmax_row(logits, r) == batch->labels[static_cast<std::size_t>(r)]) ++correct;
        std::int64_t clamped = 0;
        auto [report, grads] =
            model_backward(res.graph, res.state, cache, batch->labels, loss_cfg, &clamped);
        clamp_warnings += clamped;
        adam_step(res.state.params, grads, adam, lr);
        loss_sum += report.total * static_cast<double>(n);
        seen += n;
      }
    }
    if (seen == 0) throw DataError("train: the training split produced no usable batches");

    const EvalOutcome val = evaluate_split(res.graph, res.state, res.index, SplitTag::val,
                                           opts.batch_size, opts.prefetch_depth, log);

    EpochRow row;
    row.epoch = epoch;
    row.lr = lr;
    row.train_loss = loss_sum / static_cast<double>(seen);
    row.val_loss = val.mean_cce;
    row.val_accuracy = val.accuracy;
    row.train_accuracy = static_cast<double>(correct) / static_cast<double>(seen);
    row.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
    res.curves.push_back(row);
    last_epoch = epoch;

    log("epoch " + std::to_string(epoch) + "/" + std::to_string(total_epochs) + ": lr " +
        LrSchedule::format_rate(lr) + ", train loss " + format_fixed(row.train_loss, 6) +
        ", train acc " + format_fixed(row.train_accuracy, 4) + ", val loss " +
        format_fixed(row.val_loss, 6) + ", val acc " + format_fixed(row.val_accuracy, 4) +
        " (" + format_fixed(row.wall_seconds, 1) + "s)");

    write_curves_csv(res.curves_csv, res.curves);
    if (val.accuracy > best_accuracy) {
      best_accuracy = val.accuracy;
      save_checkpoint(res.best_checkpoint,
                      make_checkpoint(res.state, adam, static_cast<std::uint32_t>(epoch),
                                      res.index.class_names));
    }
    if (opts.stop_after_epoch && opts.stop_after_epoch(row, res.graph, res.state, res.index)) {
      log("train: early stop requested after epoch " + std::to_string(epoch));
      break;
    }
  }

  save_checkpoint(res.final_checkpoint,
                  make_checkpoint(res.state, adam, static_cast<std::uint32_t>(last_epoch),
                                  res.index.class_names));
  if (clamp_warnings > 0)
    log("train: clamped " + std::to_string(clamp_warnings) +
        " zero probabilities at the 1e-12 floor");

  // per-phase summary in the style of the schedule table
  int phase_start = 1;
  for (std::size_t p = 0; p < opts.schedule.phases.size(); ++p) {
    const auto& [count, rate] = opts.schedule.phases[p];
    const int phase_end = phase_start + count - 1;
    const EpochRow* last_row = nullptr;
    for (const auto& row : res.curves)
      if (row.epoch >= phase_start && row.epoch <= phase_end) last_row = &row;
    if (last_row)
      log("phase " + std::to_string(p + 1) + " (epochs " + std::to_string(phase_start) +
          "-" + std::to_string(phase_end) + ", lr " + LrSchedule::format_rate(rate) +
          "): val accuracy " + format_fixed(last_row->val_accuracy, 4) + ", val loss " +
          format_fixed(last_row->val_loss, 5));
    phase_start = phase_end + 1;
  }
  return res;
}

}  // namespace akhcr
