#pragma once

#include <vector>

#include "refit/body_model.hpp"
#include "refit/refit_loop.hpp"
#include "refit/synthdata.hpp"

namespace refit {

// Cross-view fitting: per-view feedback/updater steps on a shared world
// body, pooled each iteration by rotation averaging and arithmetic means.

struct ViewBundle {
  std::vector<const Sample*> views;
  std::vector<ViewExtrinsic> extrinsics;

  int view_count() const { return static_cast<int>(views.size()); }
  void validate() const;  // >= 1 view, extrinsics proper rotations
};

// World-frame body state: pose root in world coordinates, root position
// carried separately (the weak-perspective triple is per view).
struct WorldBody {
  BodyParams params;
  Vec3 root_pos{0, 0, 0};
};

// Chordal mean: average the matrices, project back via SVD (det +1).
// Throws DegenerateMean when the mean collapses (antipodal inputs).
Mat3 rotation_average(const std::vector<Mat3>& rs);

double geodesic_distance(const Mat3& a, const Mat3& b);

// Pools per-view candidates into one world body: mean shape, per-joint
// rotation averaging, root rotation and position lifted by the extrinsics.
WorldBody average_updates(const ViewBundle& bundle,
                          const std::vector<BodyParams>& per_view_params);

// The world body expressed in view i's camera frame; the weak-perspective
// triple is recomputed from the world root position and the view's bbox.
BodyParams broadcast_to_view(const WorldBody& world, const ViewBundle& bundle, int view);

struct MultiViewResult {
  WorldBody world;
  std::vector<std::vector<BodyParams>> per_view_traj;  // view-frame candidates per step
};

MultiViewResult multiview_refit(const ViewBundle& bundle, const DiffModel& dm, const Nets& nets,
                                int steps);

// Baseline: independent per-view fits, averaged once at the end.
WorldBody refit_plus_average(const ViewBundle& bundle, const DiffModel& dm, const Nets& nets,
                             int steps);

// Fitting with the shape pinned to a known value; the shape stream's output
// is discarded and the returned parameters carry beta exactly.
FitTrajectory shape_refit(const Sample& sample, const DiffModel& dm, const Nets& nets,
                          const VecX& beta_known, int steps);

}  // namespace refit
