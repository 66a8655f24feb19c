// Binary clip container: magic "IAJV", version, dims, f32 video payload, and
// a JSON label blob. All integers little-endian u32.
#pragma once

#include <string>
#include <utility>

#include "iajepa/tensor.hpp"
#include "iajepa/worldsim.hpp"

namespace iajepa {

inline constexpr uint32_t kClipFormatVersion = 1;

void write_clip(const std::string& path, const Tensor<float>& clip, const world::LabelSet& labels);
std::pair<Tensor<float>, world::LabelSet> read_clip(const std::string& path);

}  // namespace iajepa
