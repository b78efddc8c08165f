#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "refit/body_model.hpp"
#include "refit/camera.hpp"
#include "refit/config.hpp"
#include "refit/rng.hpp"

namespace refit {

// Procedural scene generation with exact ground truth. Images are rendered
// by a z-buffered software rasterizer in the crop frame; every sample is
// consistent with the full-frame camera model by construction.

struct Sample {
  std::vector<float> image;  // [3, crop_res, crop_res], values in [0,1]
  BodyParams gt_params;
  Vec3 gt_t_full{0, 0, 0};
  MatX gt_joints_3d;         // J x 3, camera frame
  MatX gt_joints_2d_full;    // J x 2, full-frame pixels
  CropCamera camera;
  int view_id = 0;
  int subject_id = 0;
};

struct GenConfig {
  int full_w = 640;
  int full_h = 480;
  int crop_res = 128;
  double depth_min = 3.0;
  double depth_max = 8.0;
  double bbox_dilate = 0.10;
  double bbox_jitter = 0.0;
  double shape_std = 0.8;
  double shape_clip = 2.0;
  double occlusion_p = 0.0;
  double azimuth_jitter = 0.15;

  static GenConfig from(const Config& cfg);
};

struct ViewExtrinsic {
  Mat3 rot;  // world -> camera
  Vec3 t;
};

struct MultiViewScene {
  std::vector<Sample> views;
  std::vector<ViewExtrinsic> extrinsics;
  BodyParams world_params;  // pose root in world frame; shape shared
  Vec3 world_root{0, 0, 0};
  MatX world_joints;        // J x 3 world frame
};

// Random bounded pose, hemisphere-facing root, clipped-normal shape, depth
// in range; retries internally (up to 100) when the body leaves the frame.
Sample sample_scene(uint64_t rng_seed, const BodyModelDef& model, const GenConfig& cfg);

// One world body observed from cameras at equal azimuth spacing (plus
// jitter) around the vertical axis; per-view ground truth by transform.
MultiViewScene multiview_scene(uint64_t rng_seed, const BodyModelDef& model, int n_views,
                               const GenConfig& cfg);

// Flat-shaded z-buffered rasterization of a body-frame mesh into the crop.
// part_labels maps each vertex to a palette entry (dominant skinning joint).
// The background is light gray with seeded low-amplitude noise.
std::vector<float> rasterize(const MatX& vertices, const std::vector<std::array<int, 3>>& faces,
                             const CropCamera& camera, const Vec3& t_full,
                             const std::vector<int>& part_labels, uint64_t bg_seed);

std::vector<int> dominant_joint_labels(const BodyModelDef& model);
std::array<double, 3> part_color(int label);

// Random bounded pose used by the generators (root handled separately).
BodyParams sample_pose(Rng& rng, const BodyModelDef& model, const GenConfig& cfg);

}  // namespace refit
