#pragma once

#include <optional>
#include <string>
#include <vector>

#include "refit/body_model.hpp"
#include "refit/camera.hpp"
#include "refit/nets.hpp"
#include "refit/synthdata.hpp"
#include "refit/tensorad.hpp"

namespace refit {

// Tape-side body model constants, prepared once per model definition.
struct DiffModel {
  const BodyModelDef* def;
  std::vector<double> template_flat;  // V*3
  std::vector<double> skinw_flat;     // V*J row-major
  std::vector<double> jreg_flat;      // J*V row-major
  std::vector<double> basis_flat;     // (V*3) x B row-major
  std::vector<int> kp_idx;
  std::string kp_set;

  DiffModel(const BodyModelDef& d, const std::string& keypoint_set);
  int keypoint_count() const { return static_cast<int>(kp_idx.size()); }
};

struct DiffFk {
  ad::Tensor joints;          // [J,3]
  ad::Tensor keypoints;       // [K,3]
  ad::Tensor pose_canonical;  // [J,6] orthonormal-column coefficients
};

// Differentiable kinematics on the tape; mirrors forward_kinematics.
DiffFk diff_fk(ad::Tape& t, const DiffModel& dm, const ad::Tensor& pose_flat,
               const ad::Tensor& shape);

ad::Tensor diff_weak_to_full(ad::Tape& t, const ad::Tensor& cam3, const CropCamera& cc);
// Full pipeline to crop-normalized coordinates: project + adjust.
ad::Tensor diff_project_crop(ad::Tape& t, const ad::Tensor& points, const ad::Tensor& t_full,
                             const CropCamera& cc);
ad::Tensor diff_crop_to_featuremap(ad::Tape& t, const ad::Tensor& x_crop, const CropCamera& cc);

// Re-projects pose coefficients onto orthonormal-column form; plain-side
// counterpart of the in-graph canonicalization the loop applies after every
// additive update (keeps single- and multi-view state spaces identical).
BodyParams canonicalize(const BodyParams& p);

struct LossWeights {
  double lambda_2d = 5.0;
  double lambda_3d = 5.0;
  double lambda_params = 1.0;
  double gamma = 0.85;
  int steps = 5;
  bool last_only = false;

  static LossWeights from(const Config& cfg);
  // Discount per step t in [0, T]: gamma^(T-t).
  std::vector<double> step_weights() const;
};

struct FitOptions {
  int steps = 5;
  bool training = false;
  double dropout_p = 0.25;
  uint64_t dropout_seed = 0;
  std::string camera_mode = "full";  // full | sup_only | none
  std::optional<VecX> shape_override;
};

// One fully unrolled feedback-update evaluation on a tape.
struct Unrolled {
  std::vector<ad::Tensor> thetas;       // T+1 canonical flat estimates
  std::vector<ad::Tensor> joints3d;     // per step [J,3]
  std::vector<ad::Tensor> reproj_crop;  // per step [J,2] (supervision camera)
  ad::Tensor maps;                      // [K,h,w]
  ad::Tensor global;                    // [global_dim]
  ad::Tensor hidden_after_init;         // [N,M]
  ad::Tensor hidden_final;
};

Unrolled unroll(ad::Tape& t, const DiffModel& dm, const Nets& nets, const float* image,
                const CropCamera& cc, const FitOptions& opt);

// Per-step supervision; residuals in crop-normalized units, 3D root-aligned,
// parameter term over pose+shape only.
ad::Tensor loss_step(ad::Tape& t, const ad::Tensor& theta, const ad::Tensor& joints3d,
                     const ad::Tensor& reproj_crop, const Sample& gt, const LossWeights& w);

// Discount-weighted sum over the trajectory (or last step only).
ad::Tensor loss_total(ad::Tape& t, const Unrolled& u, const Sample& gt, const LossWeights& w);

struct FitTrajectory {
  std::vector<BodyParams> params_seq;     // T+1
  std::vector<double> residual_2d;        // mean 2D residual per step (needs gt)
  MatX hidden_after_init;
  MatX hidden_final;

  const BodyParams& final_params() const { return params_seq.back(); }
};

// Inference: runs the loop without gradients. Diagnostics are filled when
// gt 2D joints are available on the sample.
FitTrajectory refit(const Sample& sample, const DiffModel& dm, const Nets& nets,
                    const FitOptions& opt, bool with_diagnostics = true);

// Initialization path alone (one updater step from the global feature).
struct InitResult {
  BodyParams theta0;
  MatX hidden;
};
InitResult initialize(const Sample& sample, const DiffModel& dm, const Nets& nets);

}  // namespace refit
