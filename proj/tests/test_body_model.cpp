#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "refit/body_model.hpp"
#include "refit/errors.hpp"
#include "test_util.hpp"

using namespace refit;

namespace {

// Brute-force skinning: per vertex, explicitly sum w_vj * (T_j * rest_v)
// over all joints, with per-joint transforms built independently.
MatX lbs_oracle(const BodyModelDef& def, const BodyParams& params) {
  MatX rest_v = def.template_vertices;
  for (int b = 0; b < def.basis_count(); ++b) rest_v += params.shape[b] * def.shape_basis[b];
  const MatX rest_j = def.joint_regressor * rest_v;

  const int J = def.joint_count;
  std::vector<Mat3> rw(static_cast<size_t>(J));
  std::vector<Vec3> tw(static_cast<size_t>(J));
  for (int j = 0; j < J; ++j) {
    const Mat3 r = rot6d_to_matrix(params.pose.row(j).transpose());
    if (j == 0) {
      rw[0] = r;
      tw[0] = rest_j.row(0).transpose();
    } else {
      const int p = def.parents[static_cast<size_t>(j)];
      rw[static_cast<size_t>(j)] = rw[static_cast<size_t>(p)] * r;
      tw[static_cast<size_t>(j)] =
          tw[static_cast<size_t>(p)] +
          rw[static_cast<size_t>(p)] * (rest_j.row(j) - rest_j.row(p)).transpose();
    }
  }
  MatX out(def.vertex_count(), 3);
  for (int v = 0; v < def.vertex_count(); ++v) {
    Vec3 acc = Vec3::Zero();
    for (int j = 0; j < J; ++j) {
      const double w = def.skin_weights(v, j);
      if (w == 0.0) continue;
      const Vec3 local = rest_v.row(v).transpose() - rest_j.row(j).transpose();
      acc += w * (rw[static_cast<size_t>(j)] * local + tw[static_cast<size_t>(j)]);
    }
    out.row(v) = acc.transpose();
  }
  return out;
}

BodyParams random_params(Rng& rng, int joints, int basis) {
  BodyParams p = BodyParams::rest(joints, basis);
  for (int j = 0; j < joints; ++j)
    p.pose.row(j) = matrix_to_rot6d(testutil::random_rotation(rng)).transpose();
  for (int b = 0; b < basis; ++b) p.shape[b] = rng.normal(0.0, 0.7);
  return p;
}

}  // namespace

TEST_SUITE("body_model") {

TEST_CASE("rot6d identity and scale invariance") {
  Vec6 r;
  r << 1, 0, 0, 0, 1, 0;
  CHECK((rot6d_to_matrix(r) - Mat3::Identity()).norm() < 1e-12);
  r << 2, 0, 0, 0, 3, 0;  // Gram-Schmidt ignores column scale
  CHECK((rot6d_to_matrix(r) - Mat3::Identity()).norm() < 1e-12);
}

TEST_CASE("rot6d round trip over random rotations") {
  Rng rng(42);
  double worst = 0;
  for (int i = 0; i < 1000; ++i) {
    const Mat3 r = testutil::random_rotation(rng);
    const Mat3 back = rot6d_to_matrix(matrix_to_rot6d(r));
    worst = std::max(worst, (back - r).norm());
    CHECK((back.transpose() * back - Mat3::Identity()).norm() < 1e-6);
    CHECK(back.determinant() == doctest::Approx(1.0).epsilon(1e-6));
  }
  CHECK(worst < 1e-6);
}

TEST_CASE("rot6d degenerate inputs") {
  Vec6 r;
  r << 0, 0, 0, 0, 1, 0;
  CHECK_THROWS_AS(rot6d_to_matrix(r), DegenerateRotation);
  r << 1, 0, 0, 2, 0, 0;  // collinear columns
  CHECK_THROWS_AS(rot6d_to_matrix(r), DegenerateRotation);
}

TEST_CASE("default model invariants") {
  const BodyModelDef def = build_default_model(7, 16, 4);
  def.validate();
  CHECK(def.joint_count == 16);
  CHECK(def.vertex_count() >= 400);
  CHECK(def.vertex_count() <= 800);
  CHECK(def.kp_semantic.size() == 16);
  CHECK(def.kp_markers.size() == 35);
  CHECK(def.kp_dense.size() == 96);
  // root-centered template: regressed root at the origin
  const MatX rest_j = def.joint_regressor * def.template_vertices;
  CHECK(rest_j.row(0).norm() < 1e-9);
}

TEST_CASE("default model is deterministic in the seed") {
  const BodyModelDef a = build_default_model(123, 16, 4);
  const BodyModelDef b = build_default_model(123, 16, 4);
  CHECK((a.template_vertices - b.template_vertices).norm() == 0.0);
  CHECK((a.skin_weights - b.skin_weights).norm() == 0.0);
  for (int k = 0; k < 4; ++k) CHECK((a.shape_basis[k] - b.shape_basis[k]).norm() == 0.0);
  const BodyModelDef c = build_default_model(124, 16, 4);
  CHECK((a.shape_basis[0] - c.shape_basis[0]).norm() > 0.0);
}

TEST_CASE("shape basis is orthonormal") {
  const BodyModelDef def = build_default_model(7, 16, 4);
  for (int a = 0; a < 4; ++a)
    for (int b = 0; b < 4; ++b) {
      double dot = 0;
      for (int v = 0; v < def.vertex_count(); ++v)
        dot += def.shape_basis[static_cast<size_t>(a)].row(v).dot(
            def.shape_basis[static_cast<size_t>(b)].row(v));
      CHECK(dot == doctest::Approx(a == b ? 1.0 : 0.0).epsilon(1e-6));
    }
}

TEST_CASE("config range errors") {
  CHECK_THROWS_AS(build_default_model(1, 2, 4), InvalidConfig);
  CHECK_THROWS_AS(build_default_model(1, 25, 4), InvalidConfig);
  CHECK_THROWS_AS(build_default_model(1, 16, 0), InvalidConfig);
}

TEST_CASE("rest pose reproduces the template") {
  const BodyModelDef def = build_default_model(7, 16, 4);
  const FkResult fk = forward_kinematics(def, BodyParams::rest(16, 4));
  CHECK((fk.vertices - def.template_vertices).cwiseAbs().maxCoeff() < 1e-9);
  const MatX rest_j = def.joint_regressor * def.template_vertices;
  CHECK((fk.joints - rest_j).cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("root rotation equivariance") {
  Rng rng(9);
  const BodyModelDef def = build_default_model(7, 16, 4);
  BodyParams posed = random_params(rng, 16, 4);
  posed.pose.row(0) = matrix_to_rot6d(Mat3::Identity()).transpose();
  const FkResult base = forward_kinematics(def, posed, "markers");

  for (int trial = 0; trial < 4; ++trial) {
    const Mat3 r = testutil::random_rotation(rng);
    BodyParams rotated = posed;
    rotated.pose.row(0) = matrix_to_rot6d(r).transpose();
    const FkResult out = forward_kinematics(def, rotated, "markers");
    CHECK((out.joints - base.joints * r.transpose()).cwiseAbs().maxCoeff() < 1e-6);
    CHECK((out.vertices - base.vertices * r.transpose()).cwiseAbs().maxCoeff() < 1e-6);
    CHECK((out.keypoints - base.keypoints * r.transpose()).cwiseAbs().maxCoeff() < 1e-6);
  }
}

TEST_CASE("shape displacements are linear at rest pose") {
  Rng rng(10);
  const BodyModelDef def = build_default_model(7, 16, 4);
  BodyParams a = BodyParams::rest(16, 4);
  BodyParams b = BodyParams::rest(16, 4);
  for (int k = 0; k < 4; ++k) {
    a.shape[k] = rng.normal();
    b.shape[k] = rng.normal();
  }
  BodyParams ab = BodyParams::rest(16, 4);
  ab.shape = a.shape + b.shape;
  const MatX base = forward_kinematics(def, BodyParams::rest(16, 4)).vertices;
  const MatX da = forward_kinematics(def, a).vertices - base;
  const MatX db = forward_kinematics(def, b).vertices - base;
  const MatX dab = forward_kinematics(def, ab).vertices - base;
  CHECK((dab - da - db).cwiseAbs().maxCoeff() < 1e-6);
}

TEST_CASE("skinning matches the brute-force oracle") {
  Rng rng(11);
  // small chains exercised explicitly
  for (int joints : {3, 4}) {
    const BodyModelDef def = build_default_model(21, joints, 2);
    for (int trial = 0; trial < 5; ++trial) {
      const BodyParams p = random_params(rng, joints, 2);
      const FkResult fk = forward_kinematics(def, p);
      CHECK((fk.vertices - lbs_oracle(def, p)).cwiseAbs().maxCoeff() < 1e-6);
    }
  }
  // and the full default body
  const BodyModelDef def = build_default_model(7, 16, 4);
  const BodyParams p = random_params(rng, 16, 4);
  CHECK((forward_kinematics(def, p).vertices - lbs_oracle(def, p)).cwiseAbs().maxCoeff() < 1e-6);
}

TEST_CASE("keypoints gather posed vertices") {
  Rng rng(12);
  const BodyModelDef def = build_default_model(7, 16, 4);
  const BodyParams p = random_params(rng, 16, 4);
  const FkResult fk = forward_kinematics(def, p, "dense");
  for (size_t k = 0; k < def.kp_dense.size(); ++k)
    CHECK((fk.keypoints.row(static_cast<int>(k)) - fk.vertices.row(def.kp_dense[k])).norm() ==
          0.0);
}

TEST_CASE("serialization round trip") {
  const BodyModelDef def = build_default_model(7, 12, 3);
  const auto dir = std::filesystem::temp_directory_path() / "refit_model_rt";
  std::filesystem::remove_all(dir);
  save_model(def, dir.string());
  const BodyModelDef back = load_model(dir.string());
  CHECK(back.joint_count == def.joint_count);
  CHECK(back.parents == def.parents);
  CHECK(back.kp_markers == def.kp_markers);
  CHECK((back.template_vertices - def.template_vertices).cwiseAbs().maxCoeff() < 1e-6);
  CHECK((back.skin_weights - def.skin_weights).cwiseAbs().maxCoeff() < 1e-6);
  // f32 storage: saving the reloaded model reproduces the bytes
  const auto dir2 = std::filesystem::temp_directory_path() / "refit_model_rt2";
  std::filesystem::remove_all(dir2);
  save_model(back, dir2.string());
  for (const char* name : {"template_vertices.f32", "skin_weights.f32", "shape_basis.f32"}) {
    std::ifstream f1(dir / name, std::ios::binary);
    std::ifstream f2(dir2 / name, std::ios::binary);
    std::string s1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
    std::string s2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
    CHECK(s1 == s2);
    CHECK(!s1.empty());
  }
}

}  // TEST_SUITE
