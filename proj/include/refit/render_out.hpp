#pragma once

#include <string>
#include <vector>

#include "refit/body_model.hpp"
#include "refit/camera.hpp"

namespace refit {

// Result artifacts: PPM images and wireframe mesh overlays on input crops.

void write_ppm(const std::string& path, const std::vector<float>& chw_image, int res);

// Draws the posed mesh edges over a copy of the crop image.
std::vector<float> overlay_wireframe(const std::vector<float>& chw_image, int res,
                                     const BodyModelDef& model, const BodyParams& params,
                                     const CropCamera& cc,
                                     const std::array<float, 3>& color = {0.05f, 0.85f, 0.1f});

}  // namespace refit
