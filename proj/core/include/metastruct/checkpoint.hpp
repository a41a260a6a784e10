#pragma once

#include <cstdint>
#include <filesystem>

#include "metastruct/segnet.hpp"

namespace metastruct {

// Layout (little-endian):
//   char[8]  "MSNETCKP"
//   u32      version (1)
//   u32      layer count L
//   L x { u32 in, u32 out, u32 kernel, u32 activation }
//   u64      parameter count P
//   P x f64  parameters
inline constexpr char kCheckpointMagic[8] = {'M', 'S', 'N', 'E', 'T', 'C', 'K', 'P'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const std::filesystem::path& path, const ModelParams& params);
ModelParams load_checkpoint(const std::filesystem::path& path);

}  // namespace metastruct
