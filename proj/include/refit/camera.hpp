#pragma once

#include <Eigen/Core>

#include "refit/body_model.hpp"

namespace refit {

// Full-frame adjusted camera: the body is placed by a metric translation
// derived from the weak-perspective triple, projected with the original
// full-frame intrinsics, then normalized back into crop coordinates.

struct CropCamera {
  double full_w = 0;
  double full_h = 0;
  double focal = 0;        // pixels
  double cx = 0, cy = 0;   // bbox center, full-frame pixels
  double bbox = 0;         // square bbox side, pixels
  int crop_res = 128;

  void validate() const;
  // Same camera with the bbox center moved to the image center; realizes
  // the classic crop-camera reprojection used by the "no full-frame" mode.
  CropCamera centered() const;
};

// f ~ sqrt(w^2 + h^2)
double estimate_focal(double w, double h);

// t_full = (t_x + 2(c_x - w/2)/(s b), t_y + 2(c_y - h/2)/(s b), 2 f/(s b))
Vec3 weak_to_full_translation(const Vec3& cam, const CropCamera& cc);

// Perspective projection with the full-frame intrinsics; principal point at
// the image center. Throws BehindCamera when any Z <= 1e-6.
MatX project_full(const MatX& points, const Vec3& t_full, const CropCamera& cc);

// x_crop = (x_full - c) / b; bbox interior lands in [-0.5, 0.5]^2.
MatX adjust_to_crop(const MatX& x_full, const CropCamera& cc);

// Continuous feature-map pixel coordinates at quarter crop resolution,
// pixel centers aligned: p = (x_crop + 0.5) * (crop_res/4) - 0.5.
MatX crop_to_featuremap(const MatX& x_crop, const CropCamera& cc);

}  // namespace refit
