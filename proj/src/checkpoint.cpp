#include "akhcr/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include "akhcr/errors.hpp"

namespace akhcr {

namespace {

constexpr char kMagic[4] = {'A', 'K', 'H', 'W'};
constexpr std::uint32_t kVersion = 1;
constexpr int kMaxRank = 8;

void put_u32(std::vector<std::uint8_t>& buf, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) buf.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_u64(std::vector<std::uint8_t>& buf, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) buf.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_f32(std::vector<std::uint8_t>& buf, float v) {
  std::uint32_t bits;
  std::memcpy(&bits, &v, 4);
  put_u32(buf, bits);
}

struct Reader {
  const std::vector<std::uint8_t>& buf;
  std::size_t pos = 0;

  void need(std::size_t n, const char* what) const {
    if (pos + n > buf.size())
      throw FormatError(std::string("checkpoint truncated while reading ") + what,
                        static_cast<std::int64_t>(pos));
  }
  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(buf[pos + i]) << (8 * i);
    pos += 4;
    return v;
  }
  std::uint64_t u64(const char* what) {
    need(8, what);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(buf[pos + i]) << (8 * i);
    pos += 8;
    return v;
  }
  float f32(const char* what) {
    const std::uint32_t bits = u32(what);
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
  }
  std::string str(std::size_t n, const char* what) {
    need(n, what);
    std::string s(reinterpret_cast<const char*>(buf.data() + pos), n);
    pos += n;
    return s;
  }
};

}  // namespace

Checkpoint make_checkpoint(const ModelState& state, const AdamState& adam,
                           std::uint32_t epoch, const std::vector<std::string>& class_names) {
  Checkpoint ck;
  ck.epoch = epoch;
  ck.adam_t = adam.t;
  ck.class_names = class_names;
  for (const auto& [name, tensor] : state.params) ck.entries.emplace_back(name, tensor);
  for (const auto& [name, tensor] : state.bn_stats) ck.entries.emplace_back(name, tensor);
  for (const auto& [name, moments] : adam.moments) {
    ck.entries.emplace_back("adam/m/" + name, moments.m);
    ck.entries.emplace_back("adam/v/" + name, moments.v);
  }
  return ck;
}

void apply_checkpoint(const Checkpoint& ck, ModelState& state, AdamState& adam) {
  adam.moments.clear();
  adam.t = ck.adam_t;
  std::size_t params_seen = 0, stats_seen = 0;

  auto assign = [](Tensor& dst, const Tensor& src, const std::string& name) {
    if (dst.shape != src.shape)
      throw ConfigError("checkpoint entry '" + name + "' has shape " + src.shape.str() +
                        ", model expects " + dst.shape.str());
    dst = src;
  };

  for (const auto& [name, tensor] : ck.entries) {
    if (name.rfind("adam/m/", 0) == 0) {
      adam.moments[name.substr(7)].m = tensor;
    } else if (name.rfind("adam/v/", 0) == 0) {
      adam.moments[name.substr(7)].v = tensor;
    } else if (auto it = state.params.find(name); it != state.params.end()) {
      assign(it->second, tensor, name);
      ++params_seen;
    } else if (auto bt = state.bn_stats.find(name); bt != state.bn_stats.end()) {
      assign(bt->second, tensor, name);
      ++stats_seen;
    } else {
      throw ConfigError("checkpoint entry '" + name + "' does not match the architecture");
    }
  }
  if (params_seen != state.params.size() || stats_seen != state.bn_stats.size())
    throw ConfigError("checkpoint is missing parameters (" + std::to_string(params_seen) +
                      "/" + std::to_string(state.params.size()) + " params, " +
                      std::to_string(stats_seen) + "/" +
                      std::to_string(state.bn_stats.size()) + " stats)");
  for (const auto& [name, moments] : adam.moments) {
    const auto it = state.params.find(name);
    if (it == state.params.end())
      throw ConfigError("checkpoint Adam moments for unknown parameter '" + name + "'");
    if (moments.m.shape != it->second.shape || moments.v.shape != it->second.shape)
      throw ConfigError("checkpoint Adam moment shape mismatch for '" + name + "'");
  }
}

void save_checkpoint(const std::string& path, const Checkpoint& ck) {
  std::vector<std::uint8_t> buf;
  buf.insert(buf.end(), kMagic, kMagic + 4);
  put_u32(buf, ck.version);
  put_u32(buf, ck.epoch);
  put_u64(buf, ck.adam_t);
  put_u32(buf, static_cast<std::uint32_t>(ck.entries.size()));
  for (const auto& [name, tensor] : ck.entries) {
    put_u32(buf, static_cast<std::uint32_t>(name.size()));
    buf.insert(buf.end(), name.begin(), name.end());
    put_u32(buf, static_cast<std::uint32_t>(tensor.rank()));
    for (int d = 0; d < tensor.rank(); ++d)
      put_u64(buf, static_cast<std::uint64_t>(tensor.shape[d]));
    for (const float v : tensor.data) put_f32(buf, v);
  }
  put_u32(buf, static_cast<std::uint32_t>(ck.class_names.size()));
  for (const auto& name : ck.class_names) {
    put_u32(buf, static_cast<std::uint32_t>(name.size()));
    buf.insert(buf.end(), name.begin(), name.end());
  }
  put_u64(buf, fnv1a64(buf.data() + 4, buf.size() - 4));

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write checkpoint: " + path);
  out.write(reinterpret_cast<const char*>(buf.data()),
            static_cast<std::streamsize>(buf.size()));
  if (!out) throw IoError("checkpoint write failure: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read checkpoint: " + path);
  std::vector<std::uint8_t> buf((std::istreambuf_iterator<char>(in)),
                                std::istreambuf_iterator<char>());

  Reader r{buf};
  r.need(4, "magic");
  if (std::memcmp(buf.data(), kMagic, 4) != 0)
    throw FormatError("bad checkpoint magic in " + path, 0);
  r.pos = 4;

  Checkpoint ck;
  ck.version = r.u32("version");
  if (ck.version != kVersion)
    throw FormatError("unsupported checkpoint version " + std::to_string(ck.version), 4);
  ck.epoch = r.u32("epoch");
  ck.adam_t = r.u64("adam_t");

  const std::uint32_t entry_count = r.u32("entry count");
  for (std::uint32_t e = 0; e < entry_count; ++e) {
    const std::size_t at = r.pos;
    const std::uint32_t name_len = r.u32("entry name length");
    std::string name = r.str(name_len, "entry name");
    const std::uint32_t rank = r.u32("entry rank");
    if (rank > kMaxRank)
      throw FormatError("entry '" + name + "' has implausible rank " + std::to_string(rank),
                        static_cast<std::int64_t>(at));
    std::vector<std::int64_t> dims;
    std::int64_t numel = 1;
    for (std::uint32_t d = 0; d < rank; ++d) {
      const std::uint64_t extent = r.u64("entry extent");
      if (extent < 1 || extent > (1ull << 32))
        throw FormatError("entry '" + name + "' has bad extent",
                          static_cast<std::int64_t>(r.pos - 8));
      dims.push_back(static_cast<std::int64_t>(extent));
      numel *= static_cast<std::int64_t>(extent);
    }
    r.need(static_cast<std::size_t>(numel) * 4, "entry data");
    Tensor tensor{Shape(std::move(dims))};
    for (std::int64_t i = 0; i < numel; ++i) tensor[i] = r.f32("entry data");
    ck.entries.emplace_back(std::move(name), std::move(tensor));
  }

  const std::uint32_t class_count = r.u32("class count");
  for (std::uint32_t c = 0; c < class_count; ++c) {
    const std::uint32_t len = r.u32("class name length");
    ck.class_names.push_back(r.str(len, "class name"));
  }

  const std::size_t checksum_at = r.pos;
  const std::uint64_t stored = r.u64("checksum");
  if (r.pos != buf.size())
    throw FormatError("trailing bytes after checkpoint checksum",
                      static_cast<std::int64_t>(r.pos));
  const std::uint64_t computed = fnv1a64(buf.data() + 4, checksum_at - 4);
  if (stored != computed)
    throw FormatError("checkpoint checksum mismatch",
                      static_cast<std::int64_t>(checksum_at));
  return ck;
}

}  // namespace akhcr
