#include <doctest.h>

#include <cmath>

#include "refit/errors.hpp"
#include "refit/synthdata.hpp"
#include "test_util.hpp"

using namespace refit;

namespace {

GenConfig small_gen() {
  GenConfig g;
  g.full_w = 320;
  g.full_h = 240;
  g.crop_res = 64;
  return g;
}

}  // namespace

TEST_SUITE("synthdata") {

TEST_CASE("sample generation is deterministic") {
  const BodyModelDef model = build_default_model(7, 16, 4);
  const GenConfig g = small_gen();
  const Sample a = sample_scene(99, model, g);
  const Sample b = sample_scene(99, model, g);
  CHECK(a.image == b.image);
  CHECK((a.gt_params.pose - b.gt_params.pose).norm() == 0.0);
  CHECK((a.gt_t_full - b.gt_t_full).norm() == 0.0);
  CHECK(a.camera.bbox == b.camera.bbox);
  const Sample c = sample_scene(100, model, g);
  CHECK(a.image != c.image);
}

TEST_CASE("samples satisfy the reprojection invariant") {
  const BodyModelDef model = build_default_model(7, 12, 3);
  GenConfig g = small_gen();
  for (uint64_t seed = 0; seed < 200; ++seed) {
    const Sample s = sample_scene(seed, model, g);
    // stored full-frame 2D matches reprojecting the stored body-frame joints
    const MatX joints_body = s.gt_joints_3d.rowwise() - s.gt_t_full.transpose();
    const MatX reproj = project_full(joints_body, s.gt_t_full, s.camera);
    CHECK((reproj - s.gt_joints_2d_full).cwiseAbs().maxCoeff() < 1e-4);
    // weak-perspective triple reproduces the metric translation exactly
    const Vec3 t = weak_to_full_translation(s.gt_params.cam, s.camera);
    CHECK((t - s.gt_t_full).norm() < 1e-9);
    for (float v : s.image) {
      CHECK(v >= 0.0f);
      CHECK(v <= 1.0f);
    }
  }
}

TEST_CASE("bbox contains every projected vertex") {
  const BodyModelDef model = build_default_model(7, 12, 3);
  GenConfig g = small_gen();
  for (uint64_t seed = 0; seed < 200; ++seed) {
    const Sample s = sample_scene(seed, model, g);
    const FkResult fk = forward_kinematics(model, s.gt_params);
    const MatX v2d = project_full(fk.vertices, s.gt_t_full, s.camera);
    const double half = s.camera.bbox / 2.0;
    CHECK(v2d.col(0).minCoeff() >= s.camera.cx - half - 1e-6);
    CHECK(v2d.col(0).maxCoeff() <= s.camera.cx + half + 1e-6);
    CHECK(v2d.col(1).minCoeff() >= s.camera.cy - half - 1e-6);
    CHECK(v2d.col(1).maxCoeff() <= s.camera.cy + half + 1e-6);
  }
}

TEST_CASE("ground-truth params re-render to the sample image") {
  const BodyModelDef model = build_default_model(7, 16, 4);
  GenConfig g = small_gen();
  const Sample s = sample_scene(7, model, g);
  const FkResult fk = forward_kinematics(model, s.gt_params);
  // occlusion off and same background seed: rasterizing the gt body equals
  // the stored image by construction
  const auto img = rasterize(fk.vertices, model.faces, s.camera, s.gt_t_full,
                             dominant_joint_labels(model), Rng::mix(7, 0xba5e));
  CHECK(img == s.image);
}

TEST_CASE("empty mesh rasterizes to background only") {
  CropCamera cc;
  cc.full_w = 320;
  cc.full_h = 240;
  cc.focal = 400;
  cc.cx = 160;
  cc.cy = 120;
  cc.bbox = 100;
  cc.crop_res = 32;
  const auto img = rasterize(MatX(0, 3), {}, cc, Vec3(0, 0, 5), {}, 11);
  CHECK(static_cast<int>(img.size()) == 3 * 32 * 32);
  for (float v : img) {
    CHECK(v > 0.78f);
    CHECK(v < 0.86f);
  }
}

TEST_CASE("a dominating triangle paints every interior pixel") {
  CropCamera cc;
  cc.full_w = 320;
  cc.full_h = 240;
  cc.focal = 400;
  cc.cx = 160;
  cc.cy = 120;
  cc.bbox = 100;
  cc.crop_res = 16;
  // huge triangle straddling the whole crop at depth 5
  MatX verts(3, 3);
  const double s = 5.0 * cc.bbox / cc.focal;  // crop units -> meters at z=5
  verts << -3 * s, -3 * s, 0, 3 * s, 0, 0, 0, 3 * s, 0;
  const std::vector<std::array<int, 3>> faces = {{0, 1, 2}};
  const auto img = rasterize(verts, faces, cc, Vec3(0, 0, 5), {0, 0, 0}, 3);
  const auto col = part_color(0);
  int center = (8 * 16 + 8);
  CHECK(img[static_cast<size_t>(center)] == doctest::Approx(col[0]).epsilon(1e-6));
}

TEST_CASE("nearer triangle wins the depth test") {
  CropCamera cc;
  cc.full_w = 320;
  cc.full_h = 240;
  cc.focal = 400;
  cc.cx = 160;
  cc.cy = 120;
  cc.bbox = 100;
  cc.crop_res = 16;
  // two large overlapping triangles at different depths, distinct labels
  MatX verts(6, 3);
  auto span = [&](double z) { return z * cc.bbox / cc.focal; };
  const double a = 3 * span(5.0), b = 3 * span(4.0);
  verts << -a, -a, 0, a, 0, 0, 0, a, 0,      // depth 5 after +t_full
      -b, -b, -1, b, 0, -1, 0, b, -1;        // depth 4
  const std::vector<std::array<int, 3>> faces = {{0, 1, 2}, {3, 4, 5}};
  const std::vector<int> labels = {0, 0, 0, 1, 1, 1};
  const auto img = rasterize(verts, faces, cc, Vec3(0, 0, 5), labels, 3);

  // brute-force per-pixel oracle: for each pixel center, the covering face
  // with the smallest interpolated depth decides the color
  const MatX full2d = project_full(verts, Vec3(0, 0, 5), cc);
  const MatX crop = adjust_to_crop(full2d, cc);
  auto px = [&](int v, int c) { return (crop(v, c) + 0.5) * cc.crop_res - 0.5; };
  int checked = 0;
  for (int y = 0; y < 16; ++y)
    for (int x = 0; x < 16; ++x) {
      double best_z = 1e30;
      int best_face = -1;
      for (int f = 0; f < 2; ++f) {
        const int i0 = 3 * f, i1 = 3 * f + 1, i2 = 3 * f + 2;
        const double x0 = px(i0, 0), y0 = px(i0, 1), x1 = px(i1, 0), y1 = px(i1, 1),
                     x2 = px(i2, 0), y2 = px(i2, 1);
        const double area = (x1 - x0) * (y2 - y0) - (y1 - y0) * (x2 - x0);
        const double w0 = (x1 - x) * (y2 - y) - (y1 - y) * (x2 - x);
        const double w1 = (x2 - x) * (y0 - y) - (y2 - y) * (x0 - x);
        const double w2 = (x0 - x) * (y1 - y) - (y0 - y) * (x1 - x);
        const double b0 = w0 / area, b1 = w1 / area, b2 = w2 / area;
        if (b0 < 1e-6 || b1 < 1e-6 || b2 < 1e-6) continue;  // clear of edges
        const double z = b0 * (verts(i0, 2) + 5) + b1 * (verts(i1, 2) + 5) + b2 * (verts(i2, 2) + 5);
        if (z < best_z) {
          best_z = z;
          best_face = f;
        }
      }
      if (best_face < 0) continue;
      ++checked;
      const auto col = part_color(best_face);
      CHECK(img[static_cast<size_t>(y * 16 + x)] == doctest::Approx(col[0]).epsilon(1e-6));
    }
  CHECK(checked > 50);  // the oracle actually exercised overlapping coverage
}

TEST_CASE("multi-view azimuths and transform consistency") {
  const BodyModelDef model = build_default_model(7, 12, 3);
  GenConfig g = small_gen();
  g.azimuth_jitter = 0.0;
  const MultiViewScene scene = multiview_scene(5, model, 4, g);
  CHECK(scene.views.size() == 4);

  // zero jitter: cameras at exactly 0/90/180/270 degrees about the vertical
  for (int i = 0; i < 4; ++i) {
    const Mat3& r = scene.extrinsics[static_cast<size_t>(i)].rot;
    CHECK((r.transpose() * r - Mat3::Identity()).norm() < 1e-9);
    CHECK(r.determinant() == doctest::Approx(1.0).epsilon(1e-9));
    const double az = 2.0 * M_PI * i / 4.0;
    CHECK(r(2, 0) == doctest::Approx(-std::sin(az)).epsilon(1e-9));
    CHECK(r(2, 2) == doctest::Approx(std::cos(az)).epsilon(1e-9));
  }
  // view 0 with zero jitter is the identity rotation
  CHECK((scene.extrinsics[0].rot - Mat3::Identity()).norm() < 1e-9);

  // per-view gt joints equal extrinsics applied to the world joints
  for (int i = 0; i < 4; ++i) {
    const auto& e = scene.extrinsics[static_cast<size_t>(i)];
    const MatX expected =
        (scene.world_joints * e.rot.transpose()).rowwise() + e.t.transpose();
    CHECK((expected - scene.views[static_cast<size_t>(i)].gt_joints_3d).cwiseAbs().maxCoeff() <
          1e-5);
  }
}

TEST_CASE("single view scene is a plain sample with identity extrinsics") {
  const BodyModelDef model = build_default_model(7, 12, 3);
  GenConfig g = small_gen();
  g.azimuth_jitter = 0.0;
  const MultiViewScene scene = multiview_scene(17, model, 1, g);
  CHECK(scene.views.size() == 1);
  CHECK((scene.extrinsics[0].rot - Mat3::Identity()).norm() < 1e-9);
  CHECK(scene.extrinsics[0].t[0] == doctest::Approx(0.0).epsilon(1e-9));
  CHECK(scene.extrinsics[0].t[2] > 0.0);  // pure depth offset
  const Sample& s = scene.views[0];
  const MatX joints_body = s.gt_joints_3d.rowwise() - s.gt_t_full.transpose();
  const MatX reproj = project_full(joints_body, s.gt_t_full, s.camera);
  CHECK((reproj - s.gt_joints_2d_full).cwiseAbs().maxCoeff() < 1e-4);
}

TEST_CASE("occluders only appear with the configured probability") {
  const BodyModelDef model = build_default_model(7, 12, 3);
  GenConfig g = small_gen();
  g.occlusion_p = 1.0;
  const Sample with = sample_scene(3, model, g);
  g.occlusion_p = 0.0;
  const Sample without = sample_scene(3, model, g);
  CHECK(with.image != without.image);
  CHECK((with.gt_params.pose - without.gt_params.pose).norm() == 0.0);
}

}  // TEST_SUITE
