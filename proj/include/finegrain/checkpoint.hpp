#pragma once

#include <string>

#include "finegrain/config.hpp"
#include "finegrain/network.hpp"

namespace fg {

// Binary checkpoint: magic, format version, fused flag, the RunConfig
// snapshot, then every state tensor (parameters and running statistics) as
// name + four 64-bit little-endian dims + row-major little-endian 32-bit
// floats. Loading then saving reproduces the file byte for byte.
inline constexpr char kCheckpointMagic[6] = {'F', 'G', 'C', 'K', 'P', 'T'};
inline constexpr std::uint16_t kCheckpointVersion = 1;

void save_checkpoint(const Network& net, const RunConfig& cfg, const std::string& path);

// Rebuilds the architecture from the embedded config (applying the fusion
// rewrite first when the fused flag is set), then fills all state tensors.
// The loaded network starts in inference mode.
Network load_checkpoint(const std::string& path, RunConfig* cfg_out = nullptr);

}  // namespace fg
