#pragma once

#include <string>
#include <vector>

#include "refit/dataset.hpp"
#include "refit/refit_loop.hpp"

namespace refit {

// Metrics in millimeters (the body template is built at metric scale,
// nominal height ~1.7 m).

// Mean per-joint error after aligning the root joint (index `root`).
double mpjpe_mm(const MatX& pred_joints, const MatX& gt_joints, int root = 0);

// Procrustes-aligned: closed-form similarity (rotation+scale+translation)
// minimizing squared error, then mean distance. Throws
// DegenerateConfiguration for collinear point sets.
double pa_mpjpe_mm(const MatX& pred_joints, const MatX& gt_joints);

// Root-aligned mean per-vertex error; anchors are the root joint positions.
double pve_mm(const MatX& pred_vertices, const MatX& gt_vertices,
              const Vec3& pred_root = Vec3::Zero(), const Vec3& gt_root = Vec3::Zero());

struct EvalReport {
  std::vector<double> mpjpe;     // per sample
  std::vector<double> pa_mpjpe;  // per sample
  std::vector<double> pve;       // per sample
  double mean_mpjpe = 0, mean_pa_mpjpe = 0, mean_pve = 0;
  std::vector<std::pair<int, double>> percentiles;  // of mpjpe

  size_t count() const { return mpjpe.size(); }
};

// Builds means and the percentile table; asserts pa <= mpjpe + 1e-9 per
// sample (Procrustes corrections subsume the root alignment).
EvalReport make_report(std::vector<double> mpjpe, std::vector<double> pa,
                       std::vector<double> pve, const std::vector<int>& percentiles);

struct EvalOptions {
  int steps = 5;
  std::string camera_mode = "full";
  std::vector<int> percentiles = {30, 60, 90, 99};
};

EvalReport evaluate_dataset(const Dataset& data, const DiffModel& dm, const Nets& nets,
                            const EvalOptions& opt);

// Tab-separated per-sample table plus a JSON summary.
void write_report(const std::string& dir, const EvalReport& report,
                  const std::string& label);

struct AblationRow {
  std::string name;
  std::string checkpoint_dir;
  std::vector<std::pair<std::string, std::string>> overrides;  // config keys
};

struct AblationTable {
  std::vector<std::string> names;
  std::vector<EvalReport> reports;
};

// Evaluates one trained checkpoint per row on the given dataset; eval-time
// overrides (e.g. infer.steps) apply per row. Throws MissingCheckpoint.
AblationTable run_ablation(const std::vector<AblationRow>& grid, const Dataset& data);

void write_ablation_table(const std::string& path, const AblationTable& table);

}  // namespace refit
