#include "refit/refit_loop.hpp"

#include <cmath>

#include "refit/errors.hpp"
#include "refit/feedback.hpp"
#include "refit/rng.hpp"

namespace refit {

using ad::Tape;
using ad::Tensor;

DiffModel::DiffModel(const BodyModelDef& d, const std::string& keypoint_set)
    : def(&d), kp_set(keypoint_set) {
  const int v = d.vertex_count();
  const int j = d.joint_count;
  const int b = d.basis_count();
  template_flat.resize(static_cast<size_t>(v) * 3);
  for (int i = 0; i < v; ++i)
    for (int c = 0; c < 3; ++c) template_flat[static_cast<size_t>(i) * 3 + c] = d.template_vertices(i, c);
  skinw_flat.resize(static_cast<size_t>(v) * j);
  for (int i = 0; i < v; ++i)
    for (int k = 0; k < j; ++k) skinw_flat[static_cast<size_t>(i) * j + k] = d.skin_weights(i, k);
  jreg_flat.resize(static_cast<size_t>(j) * v);
  for (int k = 0; k < j; ++k)
    for (int i = 0; i < v; ++i) jreg_flat[static_cast<size_t>(k) * v + i] = d.joint_regressor(k, i);
  basis_flat.resize(static_cast<size_t>(v) * 3 * b);
  for (int i = 0; i < v; ++i)
    for (int c = 0; c < 3; ++c)
      for (int k = 0; k < b; ++k)
        basis_flat[(static_cast<size_t>(i) * 3 + c) * b + k] = d.shape_basis[static_cast<size_t>(k)](i, c);
  kp_idx = d.keypoint_set(keypoint_set);
}

DiffFk diff_fk(Tape& t, const DiffModel& dm, const Tensor& pose_flat, const Tensor& shape) {
  const BodyModelDef& def = *dm.def;
  const int J = def.joint_count;
  const int V = def.vertex_count();
  const int B = def.basis_count();
  if (pose_flat.size() != J * 6) throw ShapeMismatch("diff_fk: pose size");
  if (shape.size() != B) throw ShapeMismatch("diff_fk: shape size");

  // Rest geometry under the shape blend.
  Tensor templ = t.constant({V, 3}, std::vector<double>(dm.template_flat));
  Tensor rest_v = templ;
  if (B > 0) {
    Tensor basis = t.constant({V * 3, B}, std::vector<double>(dm.basis_flat));
    Tensor disp = ad::reshape(ad::matvec(basis, shape), {V, 3});
    rest_v = ad::add(templ, disp);
  }
  Tensor jreg = t.constant({J, V}, std::vector<double>(dm.jreg_flat));
  Tensor rest_j = ad::matmul(jreg, rest_v);  // [J,3]

  // 6D -> rotations, vectorized Gram-Schmidt over joints.
  Tensor pose = ad::reshape(pose_flat, {J, 6});
  Tensor c1 = ad::slice_cols(pose, 0, 3);
  Tensor c2 = ad::slice_cols(pose, 3, 3);
  Tensor b1 = ad::normalize_rows3(c1, 1e-8);
  Tensor d = ad::rowdot3(b1, c2);
  Tensor b2 = ad::normalize_rows3(ad::sub(c2, ad::scale_rows(b1, d)), 1e-8);
  Tensor b3 = ad::cross_rows3(b1, b2);
  Tensor canonical = ad::hstack({b1, b2});  // [J,6]

  // Tree composition.
  std::vector<Tensor> rot_w(static_cast<size_t>(J));
  std::vector<Tensor> pos_w(static_cast<size_t>(J));
  std::vector<Tensor> rest_rows(static_cast<size_t>(J));
  for (int j = 0; j < J; ++j)
    rest_rows[static_cast<size_t>(j)] = ad::reshape(ad::slice_rows(rest_j, j, 1), {3});
  for (int j = 0; j < J; ++j) {
    Tensor rj = ad::stack_cols3(ad::reshape(ad::slice_rows(b1, j, 1), {3}),
                                ad::reshape(ad::slice_rows(b2, j, 1), {3}),
                                ad::reshape(ad::slice_rows(b3, j, 1), {3}));
    if (j == 0) {
      rot_w[0] = rj;
      pos_w[0] = rest_rows[0];
    } else {
      const size_t p = static_cast<size_t>(def.parents[static_cast<size_t>(j)]);
      rot_w[static_cast<size_t>(j)] = ad::matmul(rot_w[p], rj);
      Tensor offset = ad::sub(rest_rows[static_cast<size_t>(j)], rest_rows[p]);
      pos_w[static_cast<size_t>(j)] = ad::add(pos_w[p], ad::matvec(rot_w[p], offset));
    }
  }

  std::vector<Tensor> joint_rows(static_cast<size_t>(J));
  std::vector<Tensor> skin_rows(static_cast<size_t>(J));
  for (int j = 0; j < J; ++j) {
    joint_rows[static_cast<size_t>(j)] = pos_w[static_cast<size_t>(j)];
    Tensor trans = ad::sub(pos_w[static_cast<size_t>(j)],
                           ad::matvec(rot_w[static_cast<size_t>(j)], rest_rows[static_cast<size_t>(j)]));
    skin_rows[static_cast<size_t>(j)] =
        ad::concat1d({ad::flatten(rot_w[static_cast<size_t>(j)]), trans});
  }
  Tensor joints = ad::stack_rows(joint_rows);              // [J,3]
  Tensor skin_mats = ad::stack_rows(skin_rows);            // [J,12]
  Tensor weights = t.constant({V, J}, std::vector<double>(dm.skinw_flat));
  Tensor blended = ad::matmul(weights, skin_mats);         // [V,12]
  Tensor posed = ad::affine_apply(blended, rest_v);        // [V,3]

  DiffFk out;
  out.joints = joints;
  out.keypoints = ad::gather_rows(posed, dm.kp_idx);
  out.pose_canonical = canonical;
  return out;
}

Tensor diff_weak_to_full(Tape& t, const Tensor& cam3, const CropCamera& cc) {
  if (cam3.size() != 3) throw ShapeMismatch("diff_weak_to_full: cam size");
  if (cam3[0] <= 0) throw NonPositiveScale("diff_weak_to_full: s <= 0");
  Tensor s = ad::slice1d(cam3, 0, 1);
  Tensor txy = ad::slice1d(cam3, 1, 2);
  Tensor inv_sb = ad::div(t.scalar(1.0 / cc.bbox), s);  // 1/(s*b)
  std::vector<double> adj = {2.0 * (cc.cx - cc.full_w / 2.0), 2.0 * (cc.cy - cc.full_h / 2.0)};
  Tensor a = t.constant({2}, std::move(adj));
  Tensor inv2 = ad::concat1d({inv_sb, inv_sb});
  Tensor xy = ad::add(txy, ad::mul(a, inv2));
  Tensor z = ad::mul_scalar(inv_sb, 2.0 * cc.focal);
  return ad::concat1d({xy, z});
}

Tensor diff_project_crop(Tape& t, const Tensor& points, const Tensor& t_full,
                         const CropCamera& cc) {
  if (points.rank() != 2 || points.dim(1) != 3) throw ShapeMismatch("diff_project_crop: points");
  const int m = points.dim(0);
  Tensor shifted = ad::add_rowvec(points, t_full);
  Tensor z = ad::slice_cols(shifted, 2, 1);
  for (int i = 0; i < m; ++i)
    if (z[i] <= 1e-6) throw BehindCamera("diff_project_crop: point behind the camera");
  Tensor xy = ad::slice_cols(shifted, 0, 2);
  Tensor zz = ad::hstack({z, z});
  Tensor proj = ad::div(xy, zz);  // (X/Z, Y/Z)
  // (f*X/Z + w/2 - cx)/b , (f*Y/Z + h/2 - cy)/b
  Tensor scaled = ad::mul_scalar(proj, cc.focal / cc.bbox);
  std::vector<double> off = {(cc.full_w / 2.0 - cc.cx) / cc.bbox,
                             (cc.full_h / 2.0 - cc.cy) / cc.bbox};
  return ad::add_rowvec(scaled, t.constant({2}, std::move(off)));
}

Tensor diff_crop_to_featuremap(Tape& t, const Tensor& x_crop, const CropCamera& cc) {
  const double res = cc.crop_res / 4.0;
  Tensor shifted = ad::add_scalar(x_crop, 0.5);
  Tensor scaled = ad::mul_scalar(shifted, res);
  (void)t;
  return ad::add_scalar(scaled, -0.5);
}

BodyParams canonicalize(const BodyParams& p) {
  BodyParams out = p;
  for (int j = 0; j < p.pose.rows(); ++j)
    out.pose.row(j) = matrix_to_rot6d(rot6d_to_matrix(p.pose.row(j).transpose())).transpose();
  return out;
}

LossWeights LossWeights::from(const Config& cfg) {
  LossWeights w;
  w.lambda_2d = cfg.get_double("loss.lambda_2d");
  w.lambda_3d = cfg.get_double("loss.lambda_3d");
  w.lambda_params = cfg.get_double("loss.lambda_params");
  w.gamma = cfg.get_double("loss.gamma");
  w.steps = static_cast<int>(cfg.get_int("loss.steps"));
  w.last_only = cfg.get_bool("loss.last_only");
  if (w.gamma <= 0.0 || w.gamma > 1.0) throw InvalidConfig("loss.gamma must be in (0,1]");
  if (w.steps < 0) throw InvalidConfig("loss.steps must be >= 0");
  return w;
}

std::vector<double> LossWeights::step_weights() const {
  std::vector<double> w(static_cast<size_t>(steps) + 1);
  for (int t = 0; t <= steps; ++t) w[static_cast<size_t>(t)] = std::pow(gamma, steps - t);
  return w;
}

namespace {

Tensor theta_const(Tape& t, const BodyParams& p) {
  const VecX v = p.flat();
  return t.constant({static_cast<int>(v.size())}, std::vector<double>(v.data(), v.data() + v.size()));
}

Tensor bbox_info_const(Tape& t, const CropCamera& cc) {
  return t.constant({3}, {cc.cx / cc.full_w, cc.cy / cc.full_h, cc.bbox / cc.full_w});
}

// Replace the shape block of a flat parameter vector with a fixed value.
Tensor override_shape(Tape& t, const Tensor& theta, const VecX& beta, int joints, int basis) {
  Tensor pose = ad::slice1d(theta, 0, joints * 6);
  Tensor cam = ad::slice1d(theta, joints * 6 + basis, 3);
  Tensor fixed = t.constant({basis}, std::vector<double>(beta.data(), beta.data() + basis));
  return ad::concat1d({pose, fixed, cam});
}

}  // namespace

Unrolled unroll(Tape& t, const DiffModel& dm, const Nets& nets, const float* image,
                const CropCamera& cc, const FitOptions& opt) {
  const NetDims& dims = nets.dims;
  const int J = dims.joints;
  const int B = dims.basis;
  if (dm.keypoint_count() != dims.keypoints)
    throw ShapeMismatch("unroll: keypoint count differs between model and nets");
  const CropCamera cc_fb = (opt.camera_mode == "full") ? cc : cc.centered();
  const CropCamera cc_sup = (opt.camera_mode == "none") ? cc.centered() : cc;

  Unrolled u;
  Tensor img = t.constant({3, dims.crop_res, dims.crop_res}, image);
  auto feat = nets.backbone->extract(t, img);
  u.maps = feat.maps;
  u.global = feat.global;

  Tensor bbox = bbox_info_const(t, cc);
  Tensor mean = theta_const(t, nets.mean_params);
  if (opt.shape_override) mean = override_shape(t, mean, *opt.shape_override, J, B);

  Tensor fb = nets.feedback->assemble(t, feat.global, mean, bbox);
  Tensor hidden = t.zeros({dims.streams(), dims.single_gru ? dims.single_hidden : dims.hidden});
  auto step0 = nets.bank->step(t, fb, hidden);
  hidden = step0.hidden;
  u.hidden_after_init = hidden;
  Tensor raw = apply_update(mean, step0.delta, J, B);
  if (opt.shape_override) raw = override_shape(t, raw, *opt.shape_override, J, B);

  Rng drop_rng(Rng::mix(opt.dropout_seed, 0xd809));

  for (int step = 0;; ++step) {
    DiffFk fk = diff_fk(t, dm, ad::slice1d(raw, 0, J * 6), ad::slice1d(raw, J * 6, B));
    Tensor theta = ad::concat1d({ad::flatten(fk.pose_canonical), ad::slice1d(raw, J * 6, B),
                                 ad::slice1d(raw, J * 6 + B, 3)});
    Tensor cam3 = ad::slice1d(theta, J * 6 + B, 3);
    Tensor tfull_sup = diff_weak_to_full(t, cam3, cc_sup);
    Tensor reproj = diff_project_crop(t, fk.joints, tfull_sup, cc_sup);

    u.thetas.push_back(theta);
    u.joints3d.push_back(fk.joints);
    u.reproj_crop.push_back(reproj);
    if (step == opt.steps) break;

    Tensor tfull_fb = (opt.camera_mode == "full")
                          ? tfull_sup
                          : diff_weak_to_full(t, cam3, cc_fb);
    Tensor kp_crop = diff_project_crop(t, fk.keypoints, tfull_fb, cc_fb);
    Tensor coords = ad::stopgrad(diff_crop_to_featuremap(t, kp_crop, cc_fb));
    Tensor windows = ad::bilinear_window(u.maps, coords, dims.radius);
    if (opt.training && opt.dropout_p > 0.0) {
      const auto keep = dropout_mask(dims.keypoints, opt.dropout_p, drop_rng);
      windows = apply_feedback_dropout(t, windows, keep, opt.dropout_p);
    }
    Tensor compressed = nets.feedback->compress(t, windows);
    Tensor theta_stop = ad::stopgrad(theta);
    fb = nets.feedback->assemble(t, compressed, theta_stop, bbox);
    auto so = nets.bank->step(t, fb, hidden);
    hidden = so.hidden;
    raw = apply_update(theta_stop, so.delta, J, B);
    if (opt.shape_override) raw = override_shape(t, raw, *opt.shape_override, J, B);
  }
  u.hidden_final = hidden;
  return u;
}

Tensor loss_step(Tape& t, const Tensor& theta, const Tensor& joints3d, const Tensor& reproj_crop,
                 const Sample& gt, const LossWeights& w) {
  const int J = static_cast<int>(gt.gt_joints_3d.rows());
  // 2D: ground truth normalized into the crop by the real bbox.
  std::vector<double> gt2d(static_cast<size_t>(J) * 2);
  for (int j = 0; j < J; ++j) {
    gt2d[static_cast<size_t>(j) * 2] = (gt.gt_joints_2d_full(j, 0) - gt.camera.cx) / gt.camera.bbox;
    gt2d[static_cast<size_t>(j) * 2 + 1] =
        (gt.gt_joints_2d_full(j, 1) - gt.camera.cy) / gt.camera.bbox;
  }
  Tensor term2d = ad::sum_all(ad::square(ad::sub(reproj_crop, t.constant({J, 2}, std::move(gt2d)))));

  // 3D: root-aligned, in the body/camera frame.
  std::vector<double> gt3d(static_cast<size_t>(J) * 3);
  for (int j = 0; j < J; ++j)
    for (int c = 0; c < 3; ++c)
      gt3d[static_cast<size_t>(j) * 3 + c] = gt.gt_joints_3d(j, c) - gt.gt_joints_3d(0, c);
  Tensor root = ad::neg(ad::reshape(ad::slice_rows(joints3d, 0, 1), {3}));
  Tensor aligned = ad::add_rowvec(joints3d, root);
  Tensor term3d = ad::sum_all(ad::square(ad::sub(aligned, t.constant({J, 3}, std::move(gt3d)))));

  // Parameters: pose + shape, camera excluded.
  const int pb = J * 6 + static_cast<int>(gt.gt_params.shape.size());
  const VecX gt_flat = gt.gt_params.flat();
  Tensor gt_theta = t.constant({pb}, std::vector<double>(gt_flat.data(), gt_flat.data() + pb));
  Tensor term_p = ad::sum_all(ad::square(ad::sub(ad::slice1d(theta, 0, pb), gt_theta)));

  return ad::add(ad::add(ad::mul_scalar(term2d, w.lambda_2d), ad::mul_scalar(term3d, w.lambda_3d)),
                 ad::mul_scalar(term_p, w.lambda_params));
}

Tensor loss_total(Tape& t, const Unrolled& u, const Sample& gt, const LossWeights& w) {
  const int steps = static_cast<int>(u.thetas.size()) - 1;
  Tensor total;
  if (w.last_only) {
    return loss_step(t, u.thetas.back(), u.joints3d.back(), u.reproj_crop.back(), gt, w);
  }
  for (int s = 0; s <= steps; ++s) {
    Tensor ls = loss_step(t, u.thetas[static_cast<size_t>(s)], u.joints3d[static_cast<size_t>(s)],
                          u.reproj_crop[static_cast<size_t>(s)], gt, w);
    Tensor weighted = ad::mul_scalar(ls, std::pow(w.gamma, steps - s));
    total = total.valid() ? ad::add(total, weighted) : weighted;
  }
  return total;
}

namespace {

FitTrajectory trajectory_from(const Unrolled& u, const Sample& sample, const NetDims& dims,
                              bool with_diagnostics) {
  FitTrajectory traj;
  for (const auto& th : u.thetas) {
    VecX v(th.size());
    for (int64_t i = 0; i < th.size(); ++i) v[i] = th[i];
    traj.params_seq.push_back(BodyParams::from_flat(v, dims.joints, dims.basis));
  }
  if (with_diagnostics && sample.gt_joints_2d_full.rows() > 0) {
    for (const auto& rp : u.reproj_crop) {
      double acc = 0.0;
      const int J = rp.dim(0);
      for (int j = 0; j < J; ++j) {
        const double gx = (sample.gt_joints_2d_full(j, 0) - sample.camera.cx) / sample.camera.bbox;
        const double gy = (sample.gt_joints_2d_full(j, 1) - sample.camera.cy) / sample.camera.bbox;
        acc += std::hypot(rp[2 * j] - gx, rp[2 * j + 1] - gy);
      }
      traj.residual_2d.push_back(acc / J);
    }
  }
  auto to_mat = [](const Tensor& t2) {
    MatX m(t2.dim(0), t2.dim(1));
    for (int i = 0; i < t2.dim(0); ++i)
      for (int j = 0; j < t2.dim(1); ++j) m(i, j) = t2[static_cast<int64_t>(i) * t2.dim(1) + j];
    return m;
  };
  traj.hidden_after_init = to_mat(u.hidden_after_init);
  traj.hidden_final = to_mat(u.hidden_final);
  return traj;
}

}  // namespace

FitTrajectory refit(const Sample& sample, const DiffModel& dm, const Nets& nets,
                    const FitOptions& opt, bool with_diagnostics) {
  Tape t(/*grad_enabled=*/false);
  Unrolled u = unroll(t, dm, nets, sample.image.data(), sample.camera, opt);
  return trajectory_from(u, sample, nets.dims, with_diagnostics);
}

InitResult initialize(const Sample& sample, const DiffModel& dm, const Nets& nets) {
  FitOptions opt;
  opt.steps = 0;
  opt.training = false;
  FitTrajectory traj = refit(sample, dm, nets, opt, false);
  return {traj.params_seq[0], traj.hidden_after_init};
}

}  // namespace refit
