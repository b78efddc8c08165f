#include "refit/camera.hpp"

#include <cmath>

#include "refit/errors.hpp"

namespace refit {

void CropCamera::validate() const {
  if (focal <= 0) throw InvalidConfig("camera: focal must be positive");
  if (bbox <= 0) throw InvalidConfig("camera: bbox size must be positive");
  if (cx < 0 || cx > full_w || cy < 0 || cy > full_h)
    throw InvalidConfig("camera: bbox center outside the full frame");
  if (crop_res <= 0 || crop_res % 4 != 0)
    throw InvalidConfig("camera: crop_res must be a positive multiple of 4");
}

CropCamera CropCamera::centered() const {
  CropCamera c = *this;
  c.cx = full_w / 2.0;
  c.cy = full_h / 2.0;
  return c;
}

double estimate_focal(double w, double h) {
  if (w <= 0 || h <= 0) throw InvalidConfig("estimate_focal: dimensions must be positive");
  return std::sqrt(w * w + h * h);
}

Vec3 weak_to_full_translation(const Vec3& cam, const CropCamera& cc) {
  const double s = cam[0];
  if (s <= 0) throw NonPositiveScale("weak_to_full_translation: s <= 0");
  const double sb = s * cc.bbox;
  return Vec3(cam[1] + 2.0 * (cc.cx - cc.full_w / 2.0) / sb,
              cam[2] + 2.0 * (cc.cy - cc.full_h / 2.0) / sb, 2.0 * cc.focal / sb);
}

MatX project_full(const MatX& points, const Vec3& t_full, const CropCamera& cc) {
  MatX out(points.rows(), 2);
  for (int i = 0; i < points.rows(); ++i) {
    const double x = points(i, 0) + t_full[0];
    const double y = points(i, 1) + t_full[1];
    const double z = points(i, 2) + t_full[2];
    if (z <= 1e-6) throw BehindCamera("project_full: point behind the camera");
    out(i, 0) = cc.focal * x / z + cc.full_w / 2.0;
    out(i, 1) = cc.focal * y / z + cc.full_h / 2.0;
  }
  return out;
}

MatX adjust_to_crop(const MatX& x_full, const CropCamera& cc) {
  MatX out(x_full.rows(), 2);
  for (int i = 0; i < x_full.rows(); ++i) {
    out(i, 0) = (x_full(i, 0) - cc.cx) / cc.bbox;
    out(i, 1) = (x_full(i, 1) - cc.cy) / cc.bbox;
  }
  return out;
}

MatX crop_to_featuremap(const MatX& x_crop, const CropCamera& cc) {
  const double res = cc.crop_res / 4.0;
  MatX out(x_crop.rows(), 2);
  for (int i = 0; i < x_crop.rows(); ++i) {
    out(i, 0) = (x_crop(i, 0) + 0.5) * res - 0.5;
    out(i, 1) = (x_crop(i, 1) + 0.5) * res - 0.5;
  }
  return out;
}

}  // namespace refit
