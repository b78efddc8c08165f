#include "refit/evalkit.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include <Eigen/SVD>
#include <nlohmann/json.hpp>

#include "refit/checkpoint.hpp"
#include "refit/errors.hpp"

namespace refit {

double mpjpe_mm(const MatX& pred_joints, const MatX& gt_joints, int root) {
  if (pred_joints.rows() != gt_joints.rows() || pred_joints.cols() != 3 || gt_joints.cols() != 3)
    throw ShapeMismatch("mpjpe: joint sets must match");
  const int j = static_cast<int>(pred_joints.rows());
  if (j < 2) throw ShapeMismatch("mpjpe: need at least 2 joints");
  if (root < 0 || root >= j) throw ShapeMismatch("mpjpe: bad root index");
  MatX p = pred_joints;
  MatX g = gt_joints;
  p.rowwise() -= pred_joints.row(root);
  g.rowwise() -= gt_joints.row(root);
  double acc = 0.0;
  for (int i = 0; i < j; ++i) acc += (p.row(i) - g.row(i)).norm();
  return 1000.0 * acc / j;
}

double pa_mpjpe_mm(const MatX& pred_joints, const MatX& gt_joints) {
  if (pred_joints.rows() != gt_joints.rows() || pred_joints.cols() != 3 || gt_joints.cols() != 3)
    throw ShapeMismatch("pa_mpjpe: joint sets must match");
  const int j = static_cast<int>(pred_joints.rows());
  if (j < 3) throw ShapeMismatch("pa_mpjpe: need at least 3 joints");

  const Vec3 mp = pred_joints.colwise().mean();
  const Vec3 mg = gt_joints.colwise().mean();
  MatX p = pred_joints.rowwise() - mp.transpose();
  MatX g = gt_joints.rowwise() - mg.transpose();

  const double var_p = p.squaredNorm();
  const Mat3 h = p.transpose() * g;  // covariance (pred -> gt)
  Eigen::JacobiSVD<Mat3> svd(h, Eigen::ComputeFullU | Eigen::ComputeFullV);
  if (svd.singularValues()[1] < 1e-12 || var_p < 1e-18)
    throw DegenerateConfiguration("pa_mpjpe: collinear or collapsed point set");
  Mat3 d = Mat3::Identity();
  if ((svd.matrixV() * svd.matrixU().transpose()).determinant() < 0) d(2, 2) = -1.0;
  const Mat3 rot = svd.matrixV() * d * svd.matrixU().transpose();
  const double scale = (svd.singularValues().asDiagonal() * d).trace() / var_p;

  double acc = 0.0;
  for (int i = 0; i < j; ++i) {
    const Vec3 aligned = scale * (rot * p.row(i).transpose());
    acc += (aligned - g.row(i).transpose()).norm();
  }
  return 1000.0 * acc / j;
}

double pve_mm(const MatX& pred_vertices, const MatX& gt_vertices, const Vec3& pred_root,
              const Vec3& gt_root) {
  if (pred_vertices.rows() != gt_vertices.rows() || pred_vertices.cols() != 3 ||
      gt_vertices.cols() != 3)
    throw ShapeMismatch("pve: vertex sets must match");
  const int v = static_cast<int>(pred_vertices.rows());
  double acc = 0.0;
  for (int i = 0; i < v; ++i)
    acc += ((pred_vertices.row(i).transpose() - pred_root) -
            (gt_vertices.row(i).transpose() - gt_root))
               .norm();
  return 1000.0 * acc / v;
}

EvalReport make_report(std::vector<double> mpjpe, std::vector<double> pa, std::vector<double> pve,
                       const std::vector<int>& percentiles) {
  if (mpjpe.size() != pa.size() || (!pve.empty() && pve.size() != mpjpe.size()))
    throw ShapeMismatch("make_report: per-sample vectors must align");
  EvalReport r;
  for (size_t i = 0; i < mpjpe.size(); ++i)
    if (pa[i] > mpjpe[i] + 1e-9)
      throw NumericError("make_report: pa_mpjpe exceeds mpjpe on sample " + std::to_string(i));
  r.mpjpe = std::move(mpjpe);
  r.pa_mpjpe = std::move(pa);
  r.pve = std::move(pve);
  auto mean = [](const std::vector<double>& v) {
    if (v.empty()) return 0.0;
    double a = 0;
    for (double x : v) a += x;
    return a / static_cast<double>(v.size());
  };
  r.mean_mpjpe = mean(r.mpjpe);
  r.mean_pa_mpjpe = mean(r.pa_mpjpe);
  r.mean_pve = mean(r.pve);
  std::vector<double> sorted = r.mpjpe;
  std::sort(sorted.begin(), sorted.end());
  for (int p : percentiles) {
    if (sorted.empty()) break;
    // value with higher error than p% of the samples
    const size_t idx = std::min(sorted.size() - 1,
                                static_cast<size_t>(p / 100.0 * static_cast<double>(sorted.size())));
    r.percentiles.emplace_back(p, sorted[idx]);
  }
  return r;
}

EvalReport evaluate_dataset(const Dataset& data, const DiffModel& dm, const Nets& nets,
                            const EvalOptions& opt) {
  std::vector<double> mpjpe, pa, pve;
  FitOptions fo;
  fo.steps = opt.steps;
  fo.camera_mode = opt.camera_mode;
  for (const auto& s : data.samples) {
    FitTrajectory traj = refit(s, dm, nets, fo, false);
    const BodyParams& pred = traj.final_params();
    const FkResult fk = forward_kinematics(data.model, pred, dm.kp_set);
    const Vec3 t_full = weak_to_full_translation(pred.cam, s.camera);
    MatX pj = fk.joints;
    pj.rowwise() += t_full.transpose();
    mpjpe.push_back(mpjpe_mm(pj, s.gt_joints_3d));
    pa.push_back(pa_mpjpe_mm(pj, s.gt_joints_3d));
    const FkResult gt_fk = forward_kinematics(data.model, s.gt_params, dm.kp_set);
    pve.push_back(pve_mm(fk.vertices, gt_fk.vertices, fk.joints.row(0).transpose(),
                         gt_fk.joints.row(0).transpose()));
  }
  return make_report(std::move(mpjpe), std::move(pa), std::move(pve), opt.percentiles);
}

void write_report(const std::string& dir, const EvalReport& report, const std::string& label) {
  std::filesystem::create_directories(dir);
  {
    std::ofstream f(dir + "/per_sample.tsv");
    f << "sample\tmpjpe_mm\tpa_mpjpe_mm\tpve_mm\n";
    for (size_t i = 0; i < report.count(); ++i) {
      f << i << "\t" << report.mpjpe[i] << "\t" << report.pa_mpjpe[i] << "\t"
        << (i < report.pve.size() ? report.pve[i] : 0.0) << "\n";
    }
  }
  nlohmann::json j;
  j["label"] = label;
  j["count"] = report.count();
  j["mean_mpjpe_mm"] = report.mean_mpjpe;
  j["mean_pa_mpjpe_mm"] = report.mean_pa_mpjpe;
  j["mean_pve_mm"] = report.mean_pve;
  nlohmann::json pct = nlohmann::json::object();
  for (const auto& [p, v] : report.percentiles) pct[std::to_string(p)] = v;
  j["mpjpe_percentiles_mm"] = pct;
  std::ofstream f(dir + "/summary.json");
  f << j.dump(2) << "\n";
}

AblationTable run_ablation(const std::vector<AblationRow>& grid, const Dataset& data) {
  AblationTable table;
  for (const auto& row : grid) {
    Config cfg = checkpoint_config(row.checkpoint_dir);  // MissingCheckpoint if absent
    for (const auto& [k, v] : row.overrides) cfg.set(k, v);
    BodyModelDef model = build_default_model(static_cast<uint64_t>(cfg.get_int("model.seed")),
                                             static_cast<int>(cfg.get_int("model.joints")),
                                             static_cast<int>(cfg.get_int("model.shape_basis")));
    if (model.joint_count != data.model.joint_count)
      throw ShapeMismatch("run_ablation: checkpoint joint count differs from dataset");
    const std::string kp_set = cfg.get_str("model.keypoints");
    DiffModel dm(data.model, kp_set);
    Nets nets(cfg, dm.keypoint_count(), static_cast<uint64_t>(cfg.get_int("train.seed")));
    load_checkpoint(row.checkpoint_dir, &nets);
    EvalOptions opt;
    opt.steps = static_cast<int>(cfg.get_int("infer.steps"));
    opt.camera_mode = cfg.get_str("cam.mode");
    table.names.push_back(row.name);
    table.reports.push_back(evaluate_dataset(data, dm, nets, opt));
  }
  return table;
}

void write_ablation_table(const std::string& path, const AblationTable& table) {
  std::ofstream f(path);
  f << "name\tmpjpe_mm\tpa_mpjpe_mm\tpve_mm\n";
  for (size_t i = 0; i < table.names.size(); ++i) {
    const auto& r = table.reports[i];
    f << table.names[i] << "\t" << r.mean_mpjpe << "\t" << r.mean_pa_mpjpe << "\t" << r.mean_pve
      << "\n";
  }
}

}  // namespace refit
