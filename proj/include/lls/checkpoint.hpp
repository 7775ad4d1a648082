#pragma once

// Checkpoint file: magic "LLS1", version u32, tensor count u32, then per
// tensor {name length u16, name bytes, ndim u8, dims u32×ndim, little-endian
// f32 data}. Save/load/save round-trips are byte-identical.

#include <filesystem>

#include "lls/backbone.hpp"

namespace lls {

void save_checkpoint(const BackboneParams& params, const std::filesystem::path& path);
BackboneParams load_checkpoint(const std::filesystem::path& path);

}  // namespace lls
