#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "akhcr/image.hpp"
#include "akhcr/tensor.hpp"

namespace akhcr {

using Logger = std::function<void(const std::string&)>;
Logger stderr_logger();

enum class SplitTag { train, val, unsplit };

struct DatasetEntry {
  std::string path;  // relative to the dataset root
  int class_id = -1;
  SplitTag split = SplitTag::unsplit;
};

struct DatasetIndex {
  std::string root;
  std::vector<DatasetEntry> entries;
  std::vector<std::string> class_names;
  std::uint64_t seed = 0;
  double val_fraction = 0.0;

  std::vector<std::int64_t> class_counts(SplitTag tag) const;
  std::int64_t count(SplitTag tag) const;
};

// Catalogs every image file under <root>/<class_dir>/. Class directories are
// sorted numerically first, then lexically, and mapped to ids 0..n-1.
DatasetIndex scan_dataset(const std::string& root, const Logger& log = stderr_logger());

// Removes images whose post-grayscale pixel standard deviation (on the [0,1]
// scale) falls below `threshold`; removals are logged with paths.
DatasetIndex filter_blank(const DatasetIndex& index, double threshold,
                          const Logger& log = stderr_logger());

// Stratified split: per class, a seeded shuffle sends the first
// round(val_fraction * n) entries to val and the rest to train.
DatasetIndex split_dataset(const DatasetIndex& index, double val_fraction,
                           std::uint64_t seed);

// Text catalog: '#' header lines (seed, fraction, class table), then one
// path<TAB>class<TAB>split line per entry. UTF-8, LF endings.
void write_index(const DatasetIndex& index, const std::string& path);
DatasetIndex read_index(const std::string& path, const std::string& root);

// grayscale pixel standard deviation on the [0,1] scale
double grayscale_std(const RawImage& img);

struct Batch {
  Tensor images;  // [N, 32, 32, 1]
  std::vector<int> labels;
};

// Streams preprocessed mini-batches of one split. A producer thread decodes
// ahead, holding at most `prefetch_depth` finished batches. Samples that fail
// to decode are skipped with a warning; the epoch never aborts.
class BatchStream {
 public:
  BatchStream(const DatasetIndex& index, SplitTag split, int batch_size,
              std::optional<std::uint64_t> shuffle_seed, int prefetch_depth,
              const Logger& log = stderr_logger());
  ~BatchStream();
  BatchStream(const BatchStream&) = delete;
  BatchStream& operator=(const BatchStream&) = delete;

  std::optional<Batch> next();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace akhcr
