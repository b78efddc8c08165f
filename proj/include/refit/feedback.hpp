#pragma once

#include <vector>

#include "refit/camera.hpp"
#include "refit/nets.hpp"
#include "refit/rng.hpp"
#include "refit/tensorad.hpp"

namespace refit {

// Reprojection feedback: windowed bilinear queries on per-keypoint feature
// maps. Out-of-bounds samples read as zero, so a keypoint reprojected off
// the crop produces null feedback.

// Single bilinear fetch at continuous pixel coordinates (centers at
// integers), zero padding outside the map.
double bilinear_sample(const MatX& map, double px, double py);

// Window of (2r+1)^2 bilinear samples around the feature-map projection of
// a crop-normalized point; flattened row-major over (dy, dx).
VecX query_window(const MatX& map, const Eigen::Vector2d& x_crop, int radius,
                  const CropCamera& cc);

// Per-keypoint dropout mask: keep[k] == 1 with probability 1-p.
std::vector<uint8_t> dropout_mask(int keypoints, double p, Rng& rng);

// Training mode: each keypoint's whole window is zeroed with probability p
// and survivors are scaled by 1/(1-p); eval mode is the identity.
std::vector<VecX> feedback_dropout(const std::vector<VecX>& windows, double p, bool training,
                                   Rng& rng);

// Tape-side dropout: multiply window rows by a precomputed mask.
ad::Tensor apply_feedback_dropout(ad::Tape& t, const ad::Tensor& windows,
                                  const std::vector<uint8_t>& keep, double p);

}  // namespace refit
