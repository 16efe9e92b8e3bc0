#include "akhcr/dataset.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <condition_variable>
#include <cstdio>
#include <deque>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <mutex>
#include <thread>

#include "akhcr/errors.hpp"
#include "akhcr/preprocess.hpp"
#include "akhcr/rng.hpp"

namespace fs = std::filesystem;

namespace akhcr {

Logger stderr_logger() {
  return [](const std::string& msg) { std::cerr << msg << '\n'; };
}

std::vector<std::int64_t> DatasetIndex::class_counts(SplitTag tag) const {
  std::vector<std::int64_t> counts(class_names.size(), 0);
  for (const auto& e : entries)
    if (e.split == tag) ++counts[static_cast<std::size_t>(e.class_id)];
  return counts;
}

std::int64_t DatasetIndex::count(SplitTag tag) const {
  std::int64_t n = 0;
  for (const auto& e : entries)
    if (e.split == tag) ++n;
  return n;
}

namespace {

bool all_digits(const std::string& s) {
  if (s.empty()) return false;
  for (char c : s)
    if (!std::isdigit(static_cast<unsigned char>(c))) return false;
  return true;
}

// numeric names in value order first, then the rest lexically
bool class_name_less(const std::string& a, const std::string& b) {
  const bool na = all_digits(a), nb = all_digits(b);
  if (na != nb) return na;
  if (na && nb) {
    const long long va = std::stoll(a), vb = std::stoll(b);
    if (va != vb) return va < vb;
  }
  return a < b;
}

bool has_image_extension(const fs::path& p) {
  std::string ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return ext == ".png" || ext == ".bmp";
}

std::string format_fraction(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

const char* split_name(SplitTag tag) {
  switch (tag) {
    case SplitTag::train: return "train";
    case SplitTag::val: return "val";
    case SplitTag::unsplit: return "unsplit";
  }
  return "unsplit";
}

SplitTag split_from_name(const std::string& s, const std::string& where) {
  if (s == "train") return SplitTag::train;
  if (s == "val") return SplitTag::val;
  if (s == "unsplit") return SplitTag::unsplit;
  throw FormatError("bad split tag '" + s + "' in " + where);
}

}  // namespace

DatasetIndex scan_dataset(const std::string& root, const Logger& log) {
  if (!fs::exists(root)) throw IoError("dataset root does not exist: " + root);
  if (!fs::is_directory(root)) throw IoError("dataset root is not a directory: " + root);

  std::vector<std::string> dirs;
  for (const auto& entry : fs::directory_iterator(root)) {
    if (entry.is_directory())
      dirs.push_back(entry.path().filename().string());
  }
  if (dirs.empty()) throw IoError("dataset root has no class directories: " + root);
  std::sort(dirs.begin(), dirs.end(), class_name_less);

  DatasetIndex index;
  index.root = root;
  index.class_names = dirs;
  for (std::size_t c = 0; c < dirs.size(); ++c) {
    std::vector<std::string> files;
    for (const auto& entry : fs::directory_iterator(fs::path(root) / dirs[c])) {
      if (!entry.is_regular_file()) continue;
      if (!has_image_extension(entry.path())) {
        log("scan: skipping non-image file " + entry.path().string());
        continue;
      }
      files.push_back(entry.path().filename().string());
    }
    std::sort(files.begin(), files.end());
    if (files.empty()) log("scan: class directory '" + dirs[c] + "' has no images");
    for (const auto& f : files)
      index.entries.push_back(
          {dirs[c] + "/" + f, static_cast<int>(c), SplitTag::unsplit});
  }
  return index;
}

double grayscale_std(const RawImage& img) {
  const RawImage gray = to_grayscale(img);
  const std::size_t n = gray.pixels.size();
  double sum = 0.0;
  for (std::uint8_t v : gray.pixels) sum += v / 255.0;
  const double mean = sum / static_cast<double>(n);
  double sq = 0.0;
  for (std::uint8_t v : gray.pixels) {
    const double d = v / 255.0 - mean;
    sq += d * d;
  }
  return std::sqrt(sq / static_cast<double>(n));
}

DatasetIndex filter_blank(const DatasetIndex& index, double threshold, const Logger& log) {
  if (!(threshold > 0.0 && threshold < 1.0))
    throw RangeError("filter_blank: threshold must be in (0,1), got " +
                     std::to_string(threshold));
  DatasetIndex out = index;
  out.entries.clear();
  std::int64_t removed = 0;
  for (const auto& e : index.entries) {
    const std::string full = index.root + "/" + e.path;
    double stddev = -1.0;
    try {
      stddev = grayscale_std(decode_image(full));
    } catch (const Error& err) {
      log("filter: dropping undecodable image " + full + " (" + err.what() + ")");
      ++removed;
      continue;
    }
    if (stddev < threshold) {
      log("filter: dropping near-blank image " + full + " (std " +
          std::to_string(stddev) + ")");
      ++removed;
      continue;
    }
    out.entries.push_back(e);
  }
  if (removed > 0)
    log("filter: removed " + std::to_string(removed) + " of " +
        std::to_string(index.entries.size()) + " images");
  return out;
}

DatasetIndex split_dataset(const DatasetIndex& index, double val_fraction,
                           std::uint64_t seed) {
  if (!(val_fraction > 0.0 && val_fraction < 1.0))
    throw RangeError("split: val_fraction must be in (0,1), got " +
                     std::to_string(val_fraction));

  std::vector<std::vector<std::size_t>> per_class(index.class_names.size());
  for (std::size_t i = 0; i < index.entries.size(); ++i)
    per_class[static_cast<std::size_t>(index.entries[i].class_id)].push_back(i);

  DatasetIndex out = index;
  out.seed = seed;
  out.val_fraction = val_fraction;
  for (std::size_t c = 0; c < per_class.size(); ++c) {
    auto& ids = per_class[c];
    if (ids.size() < 2)
      throw DataError("split: class '" + index.class_names[c] + "' has " +
                      std::to_string(ids.size()) + " samples, needs at least 2");
    Rng rng(mix_seed(seed, static_cast<std::uint64_t>(c)));
    rng.shuffle(ids);
    std::int64_t n_val = std::llround(val_fraction * static_cast<double>(ids.size()));
    n_val = std::clamp<std::int64_t>(n_val, 0, static_cast<std::int64_t>(ids.size()) - 1);
    for (std::size_t i = 0; i < ids.size(); ++i)
      out.entries[ids[i]].split =
          (static_cast<std::int64_t>(i) < n_val) ? SplitTag::val : SplitTag::train;
  }
  return out;
}

void write_index(const DatasetIndex& index, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write index file: " + path);
  out << "# akhcr-index v1\n";
  out << "# seed=" << index.seed << "\n";
  out << "# val_fraction=" << format_fraction(index.val_fraction) << "\n";
  out << "# classes=" << index.class_names.size() << "\n";
  for (std::size_t c = 0; c < index.class_names.size(); ++c)
    out << "# class\t" << c << "\t" << index.class_names[c] << "\n";
  for (const auto& e : index.entries)
    out << e.path << '\t' << e.class_id << '\t' << split_name(e.split) << '\n';
  if (!out) throw IoError("write failure: " + path);
}

DatasetIndex read_index(const std::string& path, const std::string& root) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read index file: " + path);
  DatasetIndex index;
  index.root = root;
  std::string line;
  bool first = true;
  std::size_t line_no = 0;
  auto parse_int = [&](const std::string& text, const std::string& where) -> long long {
    try {
      std::size_t used = 0;
      const long long v = std::stoll(text, &used);
      if (used != text.size()) throw std::invalid_argument("trailing");
      return v;
    } catch (const std::exception&) {
      throw FormatError("bad number '" + text + "' in " + where);
    }
  };
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const std::string where = path + ":" + std::to_string(line_no);
    if (first) {
      if (line != "# akhcr-index v1")
        throw FormatError("missing index header in " + where);
      first = false;
      continue;
    }
    if (line[0] == '#') {
      if (line.rfind("# seed=", 0) == 0)
        index.seed = static_cast<std::uint64_t>(parse_int(line.substr(7), where));
      else if (line.rfind("# val_fraction=", 0) == 0) {
        try {
          index.val_fraction = std::stod(line.substr(15));
        } catch (const std::exception&) {
          throw FormatError("bad val_fraction in " + where);
        }
      } else if (line.rfind("# class\t", 0) == 0) {
        const std::size_t tab1 = line.find('\t');
        const std::size_t tab2 = line.find('\t', tab1 + 1);
        if (tab2 == std::string::npos) throw FormatError("bad class line in " + where);
        const long long id = parse_int(line.substr(tab1 + 1, tab2 - tab1 - 1), where);
        if (id != static_cast<long long>(index.class_names.size()))
          throw FormatError("class ids out of order in " + where);
        index.class_names.push_back(line.substr(tab2 + 1));
      }
      continue;
    }
    const std::size_t tab1 = line.find('\t');
    const std::size_t tab2 = line.find('\t', tab1 + 1);
    if (tab1 == std::string::npos || tab2 == std::string::npos)
      throw FormatError("bad entry line in " + where);
    DatasetEntry e;
    e.path = line.substr(0, tab1);
    e.class_id = static_cast<int>(parse_int(line.substr(tab1 + 1, tab2 - tab1 - 1), where));
    e.split = split_from_name(line.substr(tab2 + 1), where);
    if (e.class_id < 0 || e.class_id >= static_cast<int>(index.class_names.size()))
      throw FormatError("class id out of range in " + where);
    index.entries.push_back(std::move(e));
  }
  if (first) throw FormatError("empty index file: " + path);
  return index;
}

// ------------------------------------------------------------- batch stream

struct BatchStream::Impl {
  DatasetIndex index;
  int batch_size;
  int prefetch_depth;
  Logger log;
  std::vector<std::size_t> order;

  std::deque<Batch> queue;
  std::mutex mutex;
  std::condition_variable can_push, can_pop;
  bool done = false;
  bool stop = false;
  std::thread producer;

  ~Impl() {
    {
      std::lock_guard<std::mutex> lock(mutex);
      stop = true;
    }
    can_push.notify_all();
    if (producer.joinable()) producer.join();
  }

  void produce() {
    std::vector<float> pixels;
    std::vector<int> labels;
    pixels.reserve(static_cast<std::size_t>(batch_size) * kInputSize * kInputSize);
    labels.reserve(static_cast<std::size_t>(batch_size));

    auto flush = [&]() -> bool {
      if (labels.empty()) return true;
      Batch batch;
      const std::int64_t n = static_cast<std::int64_t>(labels.size());
      batch.images = Tensor(Shape{n, kInputSize, kInputSize, 1}, std::vector<float>(pixels));
      batch.labels = labels;
      pixels.clear();
      labels.clear();
      std::unique_lock<std::mutex> lock(mutex);
      can_push.wait(lock, [&] {
        return stop || queue.size() < static_cast<std::size_t>(prefetch_depth);
      });
      if (stop) return false;
      queue.push_back(std::move(batch));
      can_pop.notify_one();
      return true;
    };

    for (std::size_t pos : order) {
      const DatasetEntry& e = index.entries[pos];
      Tensor img;
      try {
        img = preprocess_pipeline(decode_image(index.root + "/" + e.path));
      } catch (const Error& err) {
        log("batches: skipping sample " + e.path + " (" + err.what() + ")");
        continue;
      }
      pixels.insert(pixels.end(), img.data.begin(), img.data.end());
      labels.push_back(e.class_id);
      if (static_cast<int>(labels.size()) == batch_size) {
        if (!flush()) return;
      }
    }
    flush();
    {
      std::lock_guard<std::mutex> lock(mutex);
      done = true;
    }
    can_pop.notify_all();
  }
};

BatchStream::BatchStream(const DatasetIndex& index, SplitTag split, int batch_size,
                         std::optional<std::uint64_t> shuffle_seed, int prefetch_depth,
                         const Logger& log)
    : impl_(new Impl) {
  if (batch_size < 1) throw RangeError("batches: batch_size must be >= 1");
  if (prefetch_depth < 1) throw RangeError("batches: prefetch_depth must be >= 1");
  impl_->index = index;
  impl_->batch_size = batch_size;
  impl_->prefetch_depth = prefetch_depth;
  impl_->log = log;
  for (std::size_t i = 0; i < index.entries.size(); ++i)
    if (index.entries[i].split == split) impl_->order.push_back(i);
  if (shuffle_seed) {
    Rng rng(*shuffle_seed);
    rng.shuffle(impl_->order);
  }
  impl_->producer = std::thread([impl = impl_.get()] { impl->produce(); });
}

BatchStream::~BatchStream() = default;

std::optional<Batch> BatchStream::next() {
  std::unique_lock<std::mutex> lock(impl_->mutex);
  impl_->can_pop.wait(lock, [&] { return impl_->done || !impl_->queue.empty(); });
  if (impl_->queue.empty()) return std::nullopt;
  Batch batch = std::move(impl_->queue.front());
  impl_->queue.pop_front();
  impl_->can_push.notify_one();
  return batch;
}

}  // namespace akhcr
