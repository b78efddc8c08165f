#pragma once

#include <string>

#include "refit/config.hpp"
#include "refit/nets.hpp"

namespace refit {

// Checkpoint directory: manifest with format version, config snapshot,
// iteration count and seeds, plus one f32 array per weight tensor (and the
// Adam moments when present, so runs resume exactly).

void save_checkpoint(const std::string& dir, const Nets& nets, const Config& cfg,
                     int64_t iterations);

// Reads just the config snapshot (to rebuild the model and net shapes).
Config checkpoint_config(const std::string& dir);

// Restores weights (and Adam state) into a compatibly-built Nets.
// Returns the stored iteration count.
int64_t load_checkpoint(const std::string& dir, Nets* nets);

}  // namespace refit
