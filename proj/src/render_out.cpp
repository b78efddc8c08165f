#include "refit/render_out.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "refit/errors.hpp"

namespace refit {

void write_ppm(const std::string& path, const std::vector<float>& chw_image, int res) {
  if (static_cast<int>(chw_image.size()) != 3 * res * res)
    throw ShapeMismatch("write_ppm: image size mismatch");
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot write image: " + path);
  f << "P6\n" << res << " " << res << "\n255\n";
  for (int y = 0; y < res; ++y)
    for (int x = 0; x < res; ++x)
      for (int c = 0; c < 3; ++c) {
        const float v = chw_image[static_cast<size_t>((c * res + y) * res + x)];
        f.put(static_cast<char>(std::clamp(static_cast<int>(std::lround(v * 255.0f)), 0, 255)));
      }
}

namespace {

void draw_line(std::vector<float>& img, int res, double x0, double y0, double x1, double y1,
               const std::array<float, 3>& color) {
  const int steps = static_cast<int>(std::max(std::abs(x1 - x0), std::abs(y1 - y0))) + 1;
  for (int i = 0; i <= steps; ++i) {
    const double t = static_cast<double>(i) / steps;
    const int x = static_cast<int>(std::lround(x0 + t * (x1 - x0)));
    const int y = static_cast<int>(std::lround(y0 + t * (y1 - y0)));
    if (x < 0 || x >= res || y < 0 || y >= res) continue;
    for (int c = 0; c < 3; ++c)
      img[static_cast<size_t>((c * res + y) * res + x)] = color[static_cast<size_t>(c)];
  }
}

}  // namespace

std::vector<float> overlay_wireframe(const std::vector<float>& chw_image, int res,
                                     const BodyModelDef& model, const BodyParams& params,
                                     const CropCamera& cc, const std::array<float, 3>& color) {
  std::vector<float> out = chw_image;
  const FkResult fk = forward_kinematics(model, params, "semantic");
  const Vec3 t_full = weak_to_full_translation(params.cam, cc);
  const MatX crop = adjust_to_crop(project_full(fk.vertices, t_full, cc), cc);
  MatX px(crop.rows(), 2);
  for (int v = 0; v < crop.rows(); ++v) {
    px(v, 0) = (crop(v, 0) + 0.5) * res - 0.5;
    px(v, 1) = (crop(v, 1) + 0.5) * res - 0.5;
  }
  for (const auto& f : model.faces)
    for (int e = 0; e < 3; ++e) {
      const int a = f[static_cast<size_t>(e)];
      const int b = f[static_cast<size_t>((e + 1) % 3)];
      if (a < b)  // each undirected edge once
        draw_line(out, res, px(a, 0), px(a, 1), px(b, 0), px(b, 1), color);
    }
  return out;
}

}  // namespace refit
