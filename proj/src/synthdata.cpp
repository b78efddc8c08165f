#include "refit/synthdata.hpp"

#include <algorithm>
#include <cmath>

#include "refit/errors.hpp"
#include "refit/rng.hpp"

namespace refit {

GenConfig GenConfig::from(const Config& cfg) {
  GenConfig g;
  g.full_w = static_cast<int>(cfg.get_int("gen.full_w"));
  g.full_h = static_cast<int>(cfg.get_int("gen.full_h"));
  g.crop_res = static_cast<int>(cfg.get_int("cam.crop_res"));
  g.depth_min = cfg.get_double("gen.depth_min");
  g.depth_max = cfg.get_double("gen.depth_max");
  g.bbox_dilate = cfg.get_double("gen.bbox_dilate");
  g.bbox_jitter = cfg.get_double("gen.bbox_jitter");
  g.shape_std = cfg.get_double("gen.shape_std");
  g.shape_clip = cfg.get_double("gen.shape_clip");
  g.occlusion_p = cfg.get_double("gen.occlusion_p");
  g.azimuth_jitter = cfg.get_double("gen.azimuth_jitter");
  if (g.full_w <= 0 || g.full_h <= 0 || g.depth_min <= 0 || g.depth_max < g.depth_min)
    throw InvalidConfig("generator: bad frame dims or depth range");
  return g;
}

namespace {

Mat3 axis_angle(const Vec3& axis_angle_vec) {
  const double angle = axis_angle_vec.norm();
  if (angle < 1e-12) return Mat3::Identity();
  return Eigen::AngleAxisd(angle, axis_angle_vec / angle).toRotationMatrix();
}

// Per-joint axis-angle bounds by name: hinges get one dominant axis, ball
// joints a symmetric box.
Vec3 sample_joint_rotation(Rng& rng, const std::string& name, bool right_side) {
  auto box = [&](double b) {
    return Vec3(rng.uniform(-b, b), rng.uniform(-b, b), rng.uniform(-b, b));
  };
  if (name.rfind("knee", 0) == 0) {
    const double bend = rng.uniform(0.0, 1.5);
    return Vec3(bend, rng.uniform(-0.1, 0.1), rng.uniform(-0.1, 0.1));
  }
  if (name.rfind("elbow", 0) == 0) {
    double bend = rng.uniform(0.0, 1.7);
    if (right_side) bend = -bend;
    return Vec3(rng.uniform(-0.15, 0.15), rng.uniform(-0.15, 0.15), bend);
  }
  if (name.rfind("hip", 0) == 0) return box(0.7);
  if (name.rfind("shoulder", 0) == 0) return box(0.8);
  if (name == "spine" || name == "chest") return box(0.25);
  if (name == "neck" || name == "head" || name == "headtop") return box(0.3);
  return box(0.35);  // wrists, ankles, feet, hands, toes
}

// Root orientation: body facing direction uniform over the camera-facing
// hemisphere, modest roll about the facing axis.
Mat3 sample_root_orientation(Rng& rng) {
  Mat3 base;  // upright, facing the camera (camera x right, y down, z forward)
  base << 1, 0, 0, 0, -1, 0, 0, 0, -1;
  const double z = -rng.uniform();  // facing direction z in [-1, 0)
  const double phi = rng.uniform(0.0, 2.0 * M_PI);
  const double r = std::sqrt(std::max(0.0, 1.0 - z * z));
  const Vec3 dir(r * std::cos(phi), r * std::sin(phi), z);
  const Vec3 front(0, 0, -1);  // base front axis in camera frame
  Vec3 axis = front.cross(dir);
  const double sin_a = axis.norm();
  const double cos_a = front.dot(dir);
  Mat3 align = Mat3::Identity();
  if (sin_a > 1e-12)
    align = Eigen::AngleAxisd(std::atan2(sin_a, cos_a), axis / sin_a).toRotationMatrix();
  else if (cos_a < 0)
    align = Eigen::AngleAxisd(M_PI, Vec3(0, 1, 0)).toRotationMatrix();
  const Mat3 roll = Eigen::AngleAxisd(rng.uniform(-0.35, 0.35), dir).toRotationMatrix();
  return roll * align * base;
}

struct PlacedBody {
  BodyParams params;  // camera-frame root orientation, no cam triple yet
  Vec3 t_full;
  MatX joints;        // body frame
  MatX verts;         // body frame
  MatX verts_2d;      // full-frame projection
  CropCamera camera;
};

// Forms the dilated square bbox and the ground-truth weak-perspective
// triple for a body at a given metric translation. Returns false when any
// vertex leaves the frame.
bool settle_body(Rng& rng, const GenConfig& cfg, BodyParams params, const MatX& joints,
                 const MatX& verts, const Vec3& t_full, PlacedBody* out) {
  CropCamera cc;
  cc.full_w = cfg.full_w;
  cc.full_h = cfg.full_h;
  cc.focal = estimate_focal(cfg.full_w, cfg.full_h);
  cc.crop_res = cfg.crop_res;

  for (int i = 0; i < verts.rows(); ++i)
    if (verts(i, 2) + t_full[2] <= 0.05) return false;
  MatX v2d = project_full(verts, t_full, cc);
  const double margin = 2.0;
  if (v2d.col(0).minCoeff() < margin || v2d.col(0).maxCoeff() > cfg.full_w - margin ||
      v2d.col(1).minCoeff() < margin || v2d.col(1).maxCoeff() > cfg.full_h - margin)
    return false;

  double cx = 0.5 * (v2d.col(0).minCoeff() + v2d.col(0).maxCoeff());
  double cy = 0.5 * (v2d.col(1).minCoeff() + v2d.col(1).maxCoeff());
  double b = std::max(v2d.col(0).maxCoeff() - v2d.col(0).minCoeff(),
                      v2d.col(1).maxCoeff() - v2d.col(1).minCoeff()) *
             (1.0 + cfg.bbox_dilate);
  if (cfg.bbox_jitter > 0) {
    cx += rng.uniform(-cfg.bbox_jitter, cfg.bbox_jitter) * b;
    cy += rng.uniform(-cfg.bbox_jitter, cfg.bbox_jitter) * b;
    b *= 1.0 + rng.uniform(-cfg.bbox_jitter, cfg.bbox_jitter);
  }
  cc.cx = std::clamp(cx, 0.0, static_cast<double>(cfg.full_w));
  cc.cy = std::clamp(cy, 0.0, static_cast<double>(cfg.full_h));
  cc.bbox = b;
  cc.validate();

  // Invert the weak-perspective relation so it reproduces t_full exactly.
  const double s = 2.0 * cc.focal / (t_full[2] * b);
  params.cam = Vec3(s, t_full[0] - 2.0 * (cc.cx - cfg.full_w / 2.0) / (s * b),
                    t_full[1] - 2.0 * (cc.cy - cfg.full_h / 2.0) / (s * b));

  out->params = std::move(params);
  out->t_full = t_full;
  out->joints = joints;
  out->verts = verts;
  out->verts_2d = std::move(v2d);
  out->camera = cc;
  return true;
}

void add_occluder(Rng& rng, std::vector<float>& image, int res) {
  const int w = static_cast<int>(rng.uniform(0.15, 0.40) * res);
  const int h = static_cast<int>(rng.uniform(0.15, 0.40) * res);
  const int x0 = static_cast<int>(rng.uniform(0, res - w));
  const int y0 = static_cast<int>(rng.uniform(0, res - h));
  const double col[3] = {rng.uniform(0.05, 0.95), rng.uniform(0.05, 0.95),
                         rng.uniform(0.05, 0.95)};
  for (int c = 0; c < 3; ++c)
    for (int y = y0; y < y0 + h; ++y)
      for (int x = x0; x < x0 + w; ++x)
        image[static_cast<size_t>((c * res + y) * res + x)] = static_cast<float>(col[c]);
}

Sample finish_sample(Rng& rng, const BodyModelDef& model, const GenConfig& cfg,
                     const PlacedBody& placed, uint64_t bg_seed) {
  Sample s;
  s.gt_params = placed.params;
  s.gt_t_full = placed.t_full;
  s.camera = placed.camera;
  s.gt_joints_3d = placed.joints;
  s.gt_joints_3d.rowwise() += placed.t_full.transpose();
  s.gt_joints_2d_full = project_full(placed.joints, placed.t_full, placed.camera);
  s.image = rasterize(placed.verts, model.faces, placed.camera, placed.t_full,
                      dominant_joint_labels(model), bg_seed);
  if (cfg.occlusion_p > 0 && rng.bernoulli(cfg.occlusion_p))
    add_occluder(rng, s.image, cfg.crop_res);
  return s;
}

}  // namespace

BodyParams sample_pose(Rng& rng, const BodyModelDef& model, const GenConfig& cfg) {
  BodyParams p = BodyParams::rest(model.joint_count, model.basis_count());
  p.pose.row(0) = matrix_to_rot6d(sample_root_orientation(rng)).transpose();
  for (int j = 1; j < model.joint_count; ++j) {
    const std::string& name = model.joint_names[static_cast<size_t>(j)];
    const bool right = name.size() > 2 && name.substr(name.size() - 2) == "_r";
    p.pose.row(j) =
        matrix_to_rot6d(axis_angle(sample_joint_rotation(rng, name, right))).transpose();
  }
  for (int b = 0; b < model.basis_count(); ++b)
    p.shape[b] = std::clamp(rng.normal(0.0, cfg.shape_std), -cfg.shape_clip, cfg.shape_clip);
  return p;
}

Sample sample_scene(uint64_t rng_seed, const BodyModelDef& model, const GenConfig& cfg) {
  Rng rng(Rng::mix(rng_seed, 0x5c33e1));
  const double focal = estimate_focal(cfg.full_w, cfg.full_h);
  for (int attempt = 0; attempt < 100; ++attempt) {
    BodyParams params = sample_pose(rng, model, cfg);
    const FkResult fk = forward_kinematics(model, params, "semantic");
    const double depth = rng.uniform(cfg.depth_min, cfg.depth_max);
    const double px = rng.uniform(0.30, 0.70) * cfg.full_w;
    const double py = rng.uniform(0.35, 0.65) * cfg.full_h;
    const Vec3 t_full((px - cfg.full_w / 2.0) * depth / focal,
                      (py - cfg.full_h / 2.0) * depth / focal, depth);
    PlacedBody placed;
    if (!settle_body(rng, cfg, params, fk.joints, fk.vertices, t_full, &placed)) continue;
    return finish_sample(rng, model, cfg, placed, Rng::mix(rng_seed, 0xba5e));
  }
  throw SceneGenerationFailed("sample_scene: body left the frame 100 times");
}

MultiViewScene multiview_scene(uint64_t rng_seed, const BodyModelDef& model, int n_views,
                               const GenConfig& cfg) {
  if (n_views < 1) throw InvalidConfig("multiview_scene: n_views must be >= 1");
  Rng rng(Rng::mix(rng_seed, 0x3d5c));
  for (int attempt = 0; attempt < 100; ++attempt) {
    BodyParams base = sample_pose(rng, model, cfg);

    std::vector<ViewExtrinsic> exts;
    for (int i = 0; i < n_views; ++i) {
      const double az = 2.0 * M_PI * i / n_views +
                        (cfg.azimuth_jitter > 0 ? rng.uniform(-cfg.azimuth_jitter, cfg.azimuth_jitter) : 0.0);
      const double d = rng.uniform(cfg.depth_min, cfg.depth_max);
      const double hy =
          cfg.azimuth_jitter > 0 ? rng.uniform(-0.15, 0.15) * d : 0.0;
      const Vec3 center(d * std::sin(az), hy, -d * std::cos(az));
      const Vec3 fwd = (-center).normalized();
      Vec3 down(0, 1, 0);
      down = (down - down.dot(fwd) * fwd).normalized();
      const Vec3 right = down.cross(fwd);
      ViewExtrinsic e;
      e.rot.row(0) = right.transpose();
      e.rot.row(1) = down.transpose();
      e.rot.row(2) = fwd.transpose();
      e.t = -e.rot * center;
      exts.push_back(e);
    }

    // The sampled root orientation is relative to view 0; lift to world.
    const Mat3 g_view0 = rot6d_to_matrix(base.pose.row(0).transpose());
    const Mat3 g_world = exts[0].rot.transpose() * g_view0;
    BodyParams world = base;
    world.pose.row(0) = matrix_to_rot6d(g_world).transpose();
    const FkResult fk_world = forward_kinematics(model, world, "semantic");

    MultiViewScene scene;
    scene.extrinsics = exts;
    scene.world_params = world;
    scene.world_root = Vec3::Zero();
    scene.world_joints = fk_world.joints;

    bool ok = true;
    for (int i = 0; i < n_views && ok; ++i) {
      BodyParams vp = base;
      vp.pose.row(0) = matrix_to_rot6d(exts[static_cast<size_t>(i)].rot * g_world).transpose();
      const MatX verts_v = fk_world.vertices * exts[static_cast<size_t>(i)].rot.transpose();
      const MatX joints_v = fk_world.joints * exts[static_cast<size_t>(i)].rot.transpose();
      // The body root sits at the world origin, so view i's translation is
      // exactly the extrinsic t_i.
      PlacedBody placed;
      Rng place_rng(Rng::mix(rng_seed, 0x91ac, static_cast<uint64_t>(i)));
      if (!settle_body(place_rng, cfg, vp, joints_v, verts_v, exts[static_cast<size_t>(i)].t,
                       &placed)) {
        ok = false;
        break;
      }
      Sample s = finish_sample(place_rng, model, cfg, placed,
                               Rng::mix(rng_seed, 0xba5e, static_cast<uint64_t>(i)));
      s.view_id = i;
      scene.views.push_back(std::move(s));
    }
    if (!ok) continue;
    return scene;
  }
  throw SceneGenerationFailed("multiview_scene: could not keep the body in frame");
}

std::vector<int> dominant_joint_labels(const BodyModelDef& model) {
  std::vector<int> labels(static_cast<size_t>(model.vertex_count()));
  for (int v = 0; v < model.vertex_count(); ++v) {
    int best = 0;
    for (int j = 1; j < model.joint_count; ++j)
      if (model.skin_weights(v, j) > model.skin_weights(v, best)) best = j;
    labels[static_cast<size_t>(v)] = best;
  }
  return labels;
}

std::array<double, 3> part_color(int label) {
  const double h = std::fmod(0.13 + 0.618033988749895 * label, 1.0);
  const double s = 0.55, v = 0.85;
  const double c = v * s;
  const double hp = h * 6.0;
  const double x = c * (1.0 - std::abs(std::fmod(hp, 2.0) - 1.0));
  double r = 0, g = 0, b = 0;
  if (hp < 1) {
    r = c; g = x;
  } else if (hp < 2) {
    r = x; g = c;
  } else if (hp < 3) {
    g = c; b = x;
  } else if (hp < 4) {
    g = x; b = c;
  } else if (hp < 5) {
    r = x; b = c;
  } else {
    r = c; b = x;
  }
  const double m = v - c;
  return {r + m, g + m, b + m};
}

std::vector<float> rasterize(const MatX& vertices, const std::vector<std::array<int, 3>>& faces,
                             const CropCamera& camera, const Vec3& t_full,
                             const std::vector<int>& part_labels, uint64_t bg_seed) {
  const int res = camera.crop_res;
  std::vector<float> image(static_cast<size_t>(3) * res * res);
  Rng bg(bg_seed);
  for (int y = 0; y < res; ++y)
    for (int x = 0; x < res; ++x) {
      const float g = static_cast<float>(0.82 + bg.uniform(-0.03, 0.03));
      for (int c = 0; c < 3; ++c) image[static_cast<size_t>((c * res + y) * res + x)] = g;
    }
  if (vertices.rows() == 0 || faces.empty()) return image;

  const MatX full2d = project_full(vertices, t_full, camera);
  const MatX crop = adjust_to_crop(full2d, camera);
  MatX px(vertices.rows(), 2);
  VecX depth(vertices.rows());
  for (int v = 0; v < vertices.rows(); ++v) {
    px(v, 0) = (crop(v, 0) + 0.5) * res - 0.5;
    px(v, 1) = (crop(v, 1) + 0.5) * res - 0.5;
    depth[v] = vertices(v, 2) + t_full[2];
  }

  std::vector<double> zbuf(static_cast<size_t>(res) * res, 1e30);
  for (const auto& f : faces) {
    const double x0 = px(f[0], 0), y0 = px(f[0], 1);
    const double x1 = px(f[1], 0), y1 = px(f[1], 1);
    const double x2 = px(f[2], 0), y2 = px(f[2], 1);
    const double area = (x1 - x0) * (y2 - y0) - (y1 - y0) * (x2 - x0);
    if (std::abs(area) < 1e-12) continue;
    const int xa = std::max(0, static_cast<int>(std::ceil(std::min({x0, x1, x2}))));
    const int xb = std::min(res - 1, static_cast<int>(std::floor(std::max({x0, x1, x2}))));
    const int ya = std::max(0, static_cast<int>(std::ceil(std::min({y0, y1, y2}))));
    const int yb = std::min(res - 1, static_cast<int>(std::floor(std::max({y0, y1, y2}))));
    if (xa > xb || ya > yb) continue;

    int votes[3] = {part_labels[static_cast<size_t>(f[0])], part_labels[static_cast<size_t>(f[1])],
                    part_labels[static_cast<size_t>(f[2])]};
    std::sort(votes, votes + 3);
    const int label = (votes[0] == votes[1] || votes[1] == votes[2]) ? votes[1] : votes[0];
    const auto col = part_color(label);

    for (int y = ya; y <= yb; ++y)
      for (int x = xa; x <= xb; ++x) {
        const double w0 = (x1 - static_cast<double>(x)) * (y2 - y) - (y1 - y) * (x2 - static_cast<double>(x));
        const double w1 = (x2 - static_cast<double>(x)) * (y0 - y) - (y2 - y) * (x0 - static_cast<double>(x));
        const double w2 = (x0 - static_cast<double>(x)) * (y1 - y) - (y0 - y) * (x1 - static_cast<double>(x));
        const bool inside = (w0 >= 0 && w1 >= 0 && w2 >= 0) || (w0 <= 0 && w1 <= 0 && w2 <= 0);
        if (!inside) continue;
        const double b0 = w0 / area, b1 = w1 / area, b2 = w2 / area;
        const double z = b0 * depth[f[0]] + b1 * depth[f[1]] + b2 * depth[f[2]];
        double& zb = zbuf[static_cast<size_t>(y) * res + x];
        if (z >= zb || z <= 0) continue;
        zb = z;
        for (int c = 0; c < 3; ++c)
          image[static_cast<size_t>((c * res + y) * res + x)] = static_cast<float>(col[static_cast<size_t>(c)]);
      }
  }
  return image;
}

}  // namespace refit
