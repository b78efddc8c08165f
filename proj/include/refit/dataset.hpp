#pragma once

#include <string>
#include <vector>

#include "refit/body_model.hpp"
#include "refit/config.hpp"
#include "refit/synthdata.hpp"

namespace refit {

struct Dataset {
  Config gen_config;
  BodyModelDef model;
  std::vector<Sample> samples;
  // Multi-view grouping (empty for single-view datasets).
  std::vector<std::vector<int>> scenes;
  std::vector<std::vector<ViewExtrinsic>> scene_extrinsics;

  bool multiview() const { return !scenes.empty(); }
};

// gen.count samples (or scenes when gen.views > 1), seeded per index.
Dataset generate_dataset(const Config& cfg, std::ostream* log = nullptr);

void save_dataset(const Dataset& data, const std::string& dir);
Dataset load_dataset(const std::string& dir);

}  // namespace refit
