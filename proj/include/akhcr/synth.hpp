#pragma once

#include <cstdint>
#include <string>

#include "akhcr/dataset.hpp"

namespace akhcr {

inline constexpr int kSynthImageSize = 64;

// Writes <classes> directories (named "1".."<classes>") of <per_class>
// grayscale PNGs. Each class renders a distinct stroke glyph keyed by class
// id; samples add seeded affine jitter (about +-10% translation/scale, +-10
// degrees rotation) and noise. Same seed, same byte-identical tree.
void synth_dataset(const std::string& out_dir, int classes, int per_class,
                   std::uint64_t seed, const Logger& log = stderr_logger());

}  // namespace akhcr
