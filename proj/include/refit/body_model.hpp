#pragma once

#include <array>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Geometry>

namespace refit {

// Parametric body: a license-free stand-in for a full statistical body model.
// Template mesh + kinematic tree + linear blend skinning + PCA-style shape
// displacements + named keypoint sets on the mesh surface.

using Mat3 = Eigen::Matrix3d;
using Vec3 = Eigen::Vector3d;
using MatX = Eigen::MatrixXd;
using VecX = Eigen::VectorXd;
using Vec6 = Eigen::Matrix<double, 6, 1>;

struct BodyModelDef {
  MatX template_vertices;            // V x 3, meters
  std::vector<std::array<int, 3>> faces;
  int joint_count = 0;               // J
  std::vector<int> parents;          // per joint, root = -1
  MatX joint_regressor;              // J x V, rows sum to 1
  MatX skin_weights;                 // V x J, rows sum to 1
  std::vector<MatX> shape_basis;     // B entries, each V x 3, orthonormal as flat fields
  std::vector<int> kp_semantic;      // size J
  std::vector<int> kp_markers;       // size 2J + 3
  std::vector<int> kp_dense;         // size ~6J
  std::vector<std::string> joint_names;

  int vertex_count() const { return static_cast<int>(template_vertices.rows()); }
  int basis_count() const { return static_cast<int>(shape_basis.size()); }
  const std::vector<int>& keypoint_set(const std::string& name) const;

  // Throws on any violated structural invariant (tree, row sums, indices).
  void validate() const;
};

struct BodyParams {
  MatX pose;    // J x 6 rotation coefficients
  VecX shape;   // B
  Vec3 cam;     // (s, t_x, t_y) weak perspective

  static BodyParams rest(int joints, int basis);
  // Identity rotations, zero shape, camera (0.9, 0, 0).
  static BodyParams mean(int joints, int basis);

  VecX flat() const;  // pose row-major, then shape, then cam
  static BodyParams from_flat(const VecX& v, int joints, int basis);
  int flat_size() const { return static_cast<int>(pose.size() + shape.size() + 3); }
};

struct FkResult {
  MatX joints;     // J x 3
  MatX vertices;   // V x 3
  MatX keypoints;  // K x 3
};

// 6D rotation representation: the first two columns of R, orthonormalized by
// Gram-Schmidt on conversion. Throws DegenerateRotation when a column
// collapses below 1e-8 after normalization.
Mat3 rot6d_to_matrix(const Vec6& r);
Vec6 matrix_to_rot6d(const Mat3& m);

// Rest joints from the regressor, transforms composed along the tree,
// vertices posed by linear blend skinning, keypoints gathered by index.
// Output lives in the canonical body frame (no camera translation).
FkResult forward_kinematics(const BodyModelDef& def, const BodyParams& params,
                            const std::string& keypoint_set = "semantic");

// Deterministic procedural humanoid: capsule limbs on a hardcoded skeleton,
// inverse-distance skinning over the two nearest bones, orthonormal smooth
// random shape fields. J in [3,24], B in [1,16].
BodyModelDef build_default_model(uint64_t seed, int joints = 16, int basis = 4);

void save_model(const BodyModelDef& def, const std::string& dir);
BodyModelDef load_model(const std::string& dir);

}  // namespace refit
