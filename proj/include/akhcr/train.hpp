#pragma once

#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "akhcr/checkpoint.hpp"
#include "akhcr/dataset.hpp"
#include "akhcr/metrics.hpp"
#include "akhcr/optimizer.hpp"

namespace akhcr {

struct EpochRow {
  int epoch = 0;
  double lr = 0.0;
  double train_loss = 0.0;      // sample-weighted mean of J over the epoch
  double val_loss = 0.0;        // mean cross-entropy on the validation split
  double val_accuracy = 0.0;
  double wall_seconds = 0.0;    // printed only; curves.csv stays byte-reproducible
  double train_accuracy = 0.0;  // train-mode running estimate, printed only
};

struct TrainOptions {
  std::string data_root;
  std::string out_dir;
  std::uint64_t seed = 1;
  int batch_size = 64;
  LrSchedule schedule = LrSchedule::paper_default();
  double lambda = 1e-3;
  double val_fraction = 0.28;
  double blank_threshold = 0.02;
  int prefetch_depth = 4;
  int threads = 0;  // 0 = hardware default
  std::string resume_checkpoint;
  std::string index_file;  // reuse an existing split instead of recomputing
  Logger log = stderr_logger();
  // Optional early stop, consulted after each epoch's row is complete. The
  // live graph/state/index are exposed so callers can run extra evaluation
  // passes before deciding.
  std::function<bool(const EpochRow&, const ModelGraph&, ModelState&, const DatasetIndex&)>
      stop_after_epoch;
};

struct TrainResult {
  std::vector<EpochRow> curves;
  DatasetIndex index;
  ModelGraph graph;
  ModelState state;
  std::string curves_csv, final_checkpoint, best_checkpoint, index_file, run_config_file;
};

// scan -> filter -> split -> per epoch: train with lr_for_epoch, evaluate the
// validation split; writes curves.csv, split_index.tsv, run_config.txt and
// final/best checkpoints under out_dir.
TrainResult train_model(const TrainOptions& opts);

struct EvalOutcome {
  double mean_cce = 0.0;
  double accuracy = 0.0;
  ConfusionMatrix cm;
  std::int64_t samples = 0;
};

// Infer-mode pass over one split in index order.
EvalOutcome evaluate_split(const ModelGraph& graph, ModelState& state,
                           const DatasetIndex& index, SplitTag split, int batch_size,
                           int prefetch_depth, const Logger& log = stderr_logger());

// columns: epoch,lr,train_loss,val_loss,val_accuracy
void write_curves_csv(const std::string& path, const std::vector<EpochRow>& rows);

void write_kv_config(const std::string& path,
                     const std::vector<std::pair<std::string, std::string>>& items);
void write_run_config(const std::string& path, const TrainOptions& opts);

// read an index file when given, otherwise scan -> filter -> split
DatasetIndex load_or_build_index(const std::string& data_root, const std::string& index_file,
                                 double val_fraction, double blank_threshold,
                                 std::uint64_t seed, const Logger& log);

}  // namespace akhcr
