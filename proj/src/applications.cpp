#include "refit/applications.hpp"

#include <algorithm>
#include <cmath>

#include <Eigen/SVD>

#include "refit/errors.hpp"

namespace refit {

void ViewBundle::validate() const {
  if (views.empty() || views.size() != extrinsics.size())
    throw ShapeMismatch("view bundle: need >= 1 view with matching extrinsics");
  for (const auto& e : extrinsics) {
    if ((e.rot.transpose() * e.rot - Mat3::Identity()).norm() > 1e-6 ||
        std::abs(e.rot.determinant() - 1.0) > 1e-6)
      throw ShapeMismatch("view bundle: extrinsic is not a proper rotation");
  }
}

namespace {

// Order-canonical accumulation keeps cross-view means independent of the
// view ordering, bit for bit.
template <typename T>
std::vector<T> sorted_by_bytes(std::vector<T> items, int n_doubles) {
  std::sort(items.begin(), items.end(), [n_doubles](const T& a, const T& b) {
    const double* pa = a.data();
    const double* pb = b.data();
    for (int i = 0; i < n_doubles; ++i) {
      if (pa[i] != pb[i]) return pa[i] < pb[i];
    }
    return false;
  });
  return items;
}

}  // namespace

Mat3 rotation_average(const std::vector<Mat3>& rs) {
  if (rs.empty()) throw ShapeMismatch("rotation_average: empty input");
  auto sorted = sorted_by_bytes(rs, 9);
  Mat3 mean = Mat3::Zero();
  for (const auto& r : sorted) mean += r;
  mean /= static_cast<double>(rs.size());
  Eigen::JacobiSVD<Mat3> svd(mean, Eigen::ComputeFullU | Eigen::ComputeFullV);
  if (svd.singularValues()[2] < 1e-9)
    throw DegenerateMean("rotation_average: mean matrix is rank-deficient");
  const Mat3 u = svd.matrixU();
  const Mat3 v = svd.matrixV();
  Mat3 d = Mat3::Identity();
  d(2, 2) = (u * v.transpose()).determinant() < 0 ? -1.0 : 1.0;
  return u * d * v.transpose();
}

double geodesic_distance(const Mat3& a, const Mat3& b) {
  const double c = ((a.transpose() * b).trace() - 1.0) / 2.0;
  return std::acos(std::clamp(c, -1.0, 1.0));
}

WorldBody average_updates(const ViewBundle& bundle,
                          const std::vector<BodyParams>& per_view_params) {
  bundle.validate();
  const int n = bundle.view_count();
  if (static_cast<int>(per_view_params.size()) != n)
    throw ShapeMismatch("average_updates: one parameter set per view required");
  const int joints = static_cast<int>(per_view_params[0].pose.rows());
  const int basis = static_cast<int>(per_view_params[0].shape.size());

  WorldBody out;
  out.params = per_view_params[0];

  // Shape: arithmetic mean of the coefficients.
  {
    std::vector<VecX> shapes;
    for (const auto& p : per_view_params) shapes.push_back(p.shape);
    shapes = sorted_by_bytes(shapes, basis);
    VecX acc = VecX::Zero(basis);
    for (const auto& s : shapes) acc += s;
    out.params.shape = acc / n;
  }

  // Non-root joints: rotation averaging in the shared relative frame.
  for (int j = 1; j < joints; ++j) {
    std::vector<Mat3> rs;
    for (const auto& p : per_view_params) rs.push_back(rot6d_to_matrix(p.pose.row(j).transpose()));
    out.params.pose.row(j) = matrix_to_rot6d(rotation_average(rs)).transpose();
  }

  // Root: lift per-view global rotations to world, then average.
  {
    std::vector<Mat3> rs;
    for (int i = 0; i < n; ++i)
      rs.push_back(bundle.extrinsics[static_cast<size_t>(i)].rot.transpose() *
                   rot6d_to_matrix(per_view_params[static_cast<size_t>(i)].pose.row(0).transpose()));
    out.params.pose.row(0) = matrix_to_rot6d(rotation_average(rs)).transpose();
  }

  // Root position: per-view translations lifted to world, arithmetic mean.
  {
    std::vector<Vec3> ps;
    for (int i = 0; i < n; ++i) {
      const Vec3 t_full = weak_to_full_translation(per_view_params[static_cast<size_t>(i)].cam,
                                                   bundle.views[static_cast<size_t>(i)]->camera);
      ps.push_back(bundle.extrinsics[static_cast<size_t>(i)].rot.transpose() *
                   (t_full - bundle.extrinsics[static_cast<size_t>(i)].t));
    }
    ps = sorted_by_bytes(ps, 3);
    Vec3 acc = Vec3::Zero();
    for (const auto& p : ps) acc += p;
    out.root_pos = acc / n;
  }
  out.params.cam = Vec3(1.0, 0.0, 0.0);  // placeholder; per-view triples come from broadcast
  return out;
}

BodyParams broadcast_to_view(const WorldBody& world, const ViewBundle& bundle, int view) {
  const auto& ext = bundle.extrinsics[static_cast<size_t>(view)];
  const CropCamera& cc = bundle.views[static_cast<size_t>(view)]->camera;
  BodyParams p = world.params;
  p.pose.row(0) =
      matrix_to_rot6d(ext.rot * rot6d_to_matrix(world.params.pose.row(0).transpose())).transpose();
  const Vec3 t_full = ext.rot * world.root_pos + ext.t;
  if (t_full.z() <= 1e-3) throw BehindCamera("broadcast_to_view: body behind the camera");
  const double s = 2.0 * cc.focal / (t_full.z() * cc.bbox);
  p.cam = Vec3(s, t_full.x() - 2.0 * (cc.cx - cc.full_w / 2.0) / (s * cc.bbox),
               t_full.y() - 2.0 * (cc.cy - cc.full_h / 2.0) / (s * cc.bbox));
  return p;
}

namespace {

struct ViewRuntime {
  std::vector<double> maps;
  ad::Shape maps_shape;
  MatX hidden;
};

ad::Tensor bbox_info_const(ad::Tape& t, const CropCamera& cc) {
  return t.constant({3}, {cc.cx / cc.full_w, cc.cy / cc.full_h, cc.bbox / cc.full_w});
}

// One feedback+update step for a single view, on values.
BodyParams view_step(ViewRuntime& rt, const Sample& sample, const BodyParams& theta,
                     const DiffModel& dm, const Nets& nets) {
  const NetDims& dims = nets.dims;
  ad::Tape t(/*grad_enabled=*/false);
  ad::Tensor maps = t.constant(rt.maps_shape, std::vector<double>(rt.maps));
  const VecX tv = theta.flat();
  ad::Tensor th = t.constant({static_cast<int>(tv.size())},
                             std::vector<double>(tv.data(), tv.data() + tv.size()));
  std::vector<double> hvals(static_cast<size_t>(rt.hidden.size()));
  for (int i = 0; i < rt.hidden.rows(); ++i)
    for (int j = 0; j < rt.hidden.cols(); ++j)
      hvals[static_cast<size_t>(i) * rt.hidden.cols() + j] = rt.hidden(i, j);
  ad::Tensor hidden = t.constant({static_cast<int>(rt.hidden.rows()),
                                  static_cast<int>(rt.hidden.cols())},
                                 std::move(hvals));

  DiffFk fk = diff_fk(t, dm, ad::slice1d(th, 0, dims.joints * 6),
                      ad::slice1d(th, dims.joints * 6, dims.basis));
  ad::Tensor cam3 = ad::slice1d(th, dims.joints * 6 + dims.basis, 3);
  ad::Tensor t_full = diff_weak_to_full(t, cam3, sample.camera);
  ad::Tensor kp_crop = diff_project_crop(t, fk.keypoints, t_full, sample.camera);
  ad::Tensor coords = diff_crop_to_featuremap(t, kp_crop, sample.camera);
  ad::Tensor windows = ad::bilinear_window(maps, coords, dims.radius);
  ad::Tensor compressed = nets.feedback->compress(t, windows);
  ad::Tensor fb = nets.feedback->assemble(t, compressed, th, bbox_info_const(t, sample.camera));
  auto so = nets.bank->step(t, fb, hidden);
  ad::Tensor raw = apply_update(th, so.delta, dims.joints, dims.basis);

  for (int i = 0; i < rt.hidden.rows(); ++i)
    for (int j = 0; j < rt.hidden.cols(); ++j)
      rt.hidden(i, j) = so.hidden[static_cast<int64_t>(i) * rt.hidden.cols() + j];

  VecX rv(raw.size());
  for (int64_t i = 0; i < raw.size(); ++i) rv[i] = raw[i];
  return canonicalize(BodyParams::from_flat(rv, dims.joints, dims.basis));
}

}  // namespace

MultiViewResult multiview_refit(const ViewBundle& bundle, const DiffModel& dm, const Nets& nets,
                                int steps) {
  bundle.validate();
  const int n = bundle.view_count();

  std::vector<ViewRuntime> rts(static_cast<size_t>(n));
  std::vector<BodyParams> candidates;
  MultiViewResult res;
  res.per_view_traj.resize(static_cast<size_t>(n));

  FitOptions opt;
  opt.steps = 0;
  for (int i = 0; i < n; ++i) {
    const Sample& s = *bundle.views[static_cast<size_t>(i)];
    ad::Tape t(false);
    Unrolled u = unroll(t, dm, nets, s.image.data(), s.camera, opt);
    ViewRuntime& rt = rts[static_cast<size_t>(i)];
    rt.maps_shape = u.maps.shape();
    rt.maps = u.maps.to_vector();
    rt.hidden = MatX(u.hidden_after_init.dim(0), u.hidden_after_init.dim(1));
    for (int a = 0; a < rt.hidden.rows(); ++a)
      for (int b = 0; b < rt.hidden.cols(); ++b)
        rt.hidden(a, b) = u.hidden_after_init[static_cast<int64_t>(a) * rt.hidden.cols() + b];
    VecX tv(u.thetas[0].size());
    for (int64_t k = 0; k < u.thetas[0].size(); ++k) tv[k] = u.thetas[0][k];
    BodyParams theta0 = BodyParams::from_flat(tv, nets.dims.joints, nets.dims.basis);
    candidates.push_back(theta0);
    res.per_view_traj[static_cast<size_t>(i)].push_back(theta0);
  }
  res.world = average_updates(bundle, candidates);

  for (int step = 0; step < steps; ++step) {
    candidates.clear();
    for (int i = 0; i < n; ++i) {
      BodyParams view_theta = broadcast_to_view(res.world, bundle, i);
      BodyParams cand = view_step(rts[static_cast<size_t>(i)], *bundle.views[static_cast<size_t>(i)],
                                  view_theta, dm, nets);
      candidates.push_back(cand);
      res.per_view_traj[static_cast<size_t>(i)].push_back(cand);
    }
    res.world = average_updates(bundle, candidates);
  }
  return res;
}

WorldBody refit_plus_average(const ViewBundle& bundle, const DiffModel& dm, const Nets& nets,
                             int steps) {
  bundle.validate();
  FitOptions opt;
  opt.steps = steps;
  std::vector<BodyParams> finals;
  for (int i = 0; i < bundle.view_count(); ++i) {
    FitTrajectory traj = refit(*bundle.views[static_cast<size_t>(i)], dm, nets, opt, false);
    finals.push_back(traj.final_params());
  }
  return average_updates(bundle, finals);
}

FitTrajectory shape_refit(const Sample& sample, const DiffModel& dm, const Nets& nets,
                          const VecX& beta_known, int steps) {
  if (beta_known.size() != nets.dims.basis)
    throw ShapeMismatch("shape_refit: beta size != shape basis");
  FitOptions opt;
  opt.steps = steps;
  opt.shape_override = beta_known;
  return refit(sample, dm, nets, opt, true);
}

}  // namespace refit
