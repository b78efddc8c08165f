#include "refit/feedback.hpp"

#include <cmath>

#include "refit/errors.hpp"

namespace refit {

double bilinear_sample(const MatX& map, double px, double py) {
  const int h = static_cast<int>(map.rows());
  const int w = static_cast<int>(map.cols());
  const double fx0 = std::floor(px);
  const double fy0 = std::floor(py);
  const int x0 = static_cast<int>(fx0);
  const int y0 = static_cast<int>(fy0);
  const double ax = px - fx0;
  const double ay = py - fy0;
  auto at = [&](int y, int x) -> double {
    return (y < 0 || y >= h || x < 0 || x >= w) ? 0.0 : map(y, x);
  };
  return (1.0 - ay) * ((1.0 - ax) * at(y0, x0) + ax * at(y0, x0 + 1)) +
         ay * ((1.0 - ax) * at(y0 + 1, x0) + ax * at(y0 + 1, x0 + 1));
}

VecX query_window(const MatX& map, const Eigen::Vector2d& x_crop, int radius,
                  const CropCamera& cc) {
  if (radius < 0) throw InvalidConfig("query_window: radius must be >= 0");
  MatX xc(1, 2);
  xc << x_crop[0], x_crop[1];
  const MatX p = crop_to_featuremap(xc, cc);
  const int s = 2 * radius + 1;
  VecX out(s * s);
  int i = 0;
  for (int dy = -radius; dy <= radius; ++dy)
    for (int dx = -radius; dx <= radius; ++dx, ++i)
      out[i] = bilinear_sample(map, p(0, 0) + dx, p(0, 1) + dy);
  return out;
}

std::vector<uint8_t> dropout_mask(int keypoints, double p, Rng& rng) {
  if (p < 0.0 || p >= 1.0) throw InvalidConfig("feedback dropout: p must be in [0,1)");
  std::vector<uint8_t> keep(static_cast<size_t>(keypoints), 1);
  for (auto& k : keep) k = rng.bernoulli(p) ? 0 : 1;
  return keep;
}

std::vector<VecX> feedback_dropout(const std::vector<VecX>& windows, double p, bool training,
                                   Rng& rng) {
  if (p < 0.0 || p >= 1.0) throw InvalidConfig("feedback dropout: p must be in [0,1)");
  if (!training || p == 0.0) return windows;
  std::vector<VecX> out = windows;
  const double scale = 1.0 / (1.0 - p);
  for (auto& w : out) {
    if (rng.bernoulli(p))
      w.setZero();
    else
      w *= scale;
  }
  return out;
}

ad::Tensor apply_feedback_dropout(ad::Tape& t, const ad::Tensor& windows,
                                  const std::vector<uint8_t>& keep, double p) {
  if (windows.rank() != 2 || windows.dim(0) != static_cast<int>(keep.size()))
    throw ShapeMismatch("apply_feedback_dropout: mask length");
  const double scale = 1.0 / (1.0 - p);
  std::vector<double> m(keep.size());
  for (size_t i = 0; i < keep.size(); ++i) m[i] = keep[i] ? scale : 0.0;
  return ad::scale_rows(windows, t.constant({windows.dim(0)}, std::move(m)));
}

}  // namespace refit
