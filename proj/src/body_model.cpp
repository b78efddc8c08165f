#include "refit/body_model.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <set>

#include <nlohmann/json.hpp>

#include "refit/arrayio.hpp"
#include "refit/errors.hpp"
#include "refit/rng.hpp"

namespace refit {

namespace {

struct JointSpec {
  const char* name;
  int parent;
  double x, y, z;
};

// Canonical 24-joint humanoid, ordered so every prefix (J >= 3) is a valid
// tree. The first 16 form the core body; the rest are leaf refinements.
// T-pose, y up, z forward, meters. Positions are scaffolding only: the
// contractual rest joints come from the regressor.
constexpr JointSpec kSkeleton[24] = {
    {"pelvis", -1, 0.00, 0.95, 0.00},   {"spine", 0, 0.00, 1.16, 0.00},
    {"neck", 1, 0.00, 1.43, 0.00},      {"head", 2, 0.00, 1.53, 0.00},
    {"hip_l", 0, 0.09, 0.92, 0.00},     {"knee_l", 4, 0.10, 0.52, 0.00},
    {"ankle_l", 5, 0.11, 0.08, 0.00},   {"hip_r", 0, -0.09, 0.92, 0.00},
    {"knee_r", 7, -0.10, 0.52, 0.00},   {"ankle_r", 8, -0.11, 0.08, 0.00},
    {"shoulder_l", 1, 0.18, 1.38, 0.00}, {"elbow_l", 10, 0.45, 1.38, 0.00},
    {"wrist_l", 11, 0.70, 1.38, 0.00},  {"shoulder_r", 1, -0.18, 1.38, 0.00},
    {"elbow_r", 13, -0.45, 1.38, 0.00}, {"wrist_r", 14, -0.70, 1.38, 0.00},
    {"foot_l", 6, 0.11, 0.02, 0.10},    {"foot_r", 9, -0.11, 0.02, 0.10},
    {"hand_l", 12, 0.82, 1.38, 0.00},   {"hand_r", 15, -0.82, 1.38, 0.00},
    {"chest", 1, 0.00, 1.28, 0.03},     {"toe_l", 16, 0.11, 0.02, 0.18},
    {"toe_r", 17, -0.11, 0.02, 0.18},   {"headtop", 3, 0.00, 1.66, 0.00},
};

double capsule_radius(const std::string& child_name) {
  if (child_name == "spine") return 0.11;
  if (child_name == "neck") return 0.09;
  if (child_name == "head" || child_name == "headtop") return 0.055;
  if (child_name == "chest") return 0.10;
  if (child_name.rfind("hip", 0) == 0 || child_name.rfind("knee", 0) == 0) return 0.06;
  if (child_name.rfind("ankle", 0) == 0) return 0.045;
  if (child_name.rfind("shoulder", 0) == 0) return 0.055;
  return 0.04;
}

// Segment owned by a joint for skinning purposes.
struct BoneSeg {
  Vec3 a, b;
  int joint;      // proximal joint that drives this geometry
  double radius;
  std::string tag;
};

Vec3 perp_frame_u(const Vec3& d) {
  const Vec3 ref = std::abs(d.y()) < 0.9 ? Vec3(0, 1, 0) : Vec3(1, 0, 0);
  return d.cross(ref).normalized();
}

double point_segment_dist(const Vec3& p, const Vec3& a, const Vec3& b) {
  const Vec3 ab = b - a;
  const double len2 = ab.squaredNorm();
  double t = len2 > 0 ? (p - a).dot(ab) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  return (p - (a + t * ab)).norm();
}

}  // namespace

const std::vector<int>& BodyModelDef::keypoint_set(const std::string& name) const {
  if (name == "semantic") return kp_semantic;
  if (name == "markers") return kp_markers;
  if (name == "dense") return kp_dense;
  throw InvalidConfig("unknown keypoint set: " + name);
}

void BodyModelDef::validate() const {
  const int J = joint_count;
  const int V = vertex_count();
  if (J < 1 || static_cast<int>(parents.size()) != J)
    throw ShapeMismatch("body model: parents size != J");
  if (parents[0] != -1) throw ShapeMismatch("body model: joint 0 must be the root");
  for (int j = 1; j < J; ++j)
    if (parents[j] < 0 || parents[j] >= j)
      throw ShapeMismatch("body model: parent index must precede the joint");
  if (joint_regressor.rows() != J || joint_regressor.cols() != V)
    throw ShapeMismatch("body model: joint_regressor must be JxV");
  if (skin_weights.rows() != V || skin_weights.cols() != J)
    throw ShapeMismatch("body model: skin_weights must be VxJ");
  for (int j = 0; j < J; ++j) {
    if (joint_regressor.row(j).minCoeff() < 0.0)
      throw ShapeMismatch("body model: negative regressor entry");
    if (std::abs(joint_regressor.row(j).sum() - 1.0) > 1e-6)
      throw ShapeMismatch("body model: regressor row does not sum to 1");
  }
  for (int v = 0; v < V; ++v) {
    if (skin_weights.row(v).minCoeff() < 0.0)
      throw ShapeMismatch("body model: negative skin weight");
    if (std::abs(skin_weights.row(v).sum() - 1.0) > 1e-6)
      throw ShapeMismatch("body model: skin weight row does not sum to 1");
  }
  for (const auto& b : shape_basis)
    if (b.rows() != V || b.cols() != 3) throw ShapeMismatch("body model: basis shape");
  auto check_set = [&](const std::vector<int>& s, int expect, const char* what) {
    if (expect >= 0 && static_cast<int>(s.size()) != expect)
      throw ShapeMismatch(std::string("body model: ") + what + " keypoint count mismatch");
    for (int i : s)
      if (i < 0 || i >= V) throw ShapeMismatch(std::string("body model: ") + what +
                                               " keypoint index out of range");
  };
  check_set(kp_semantic, J, "semantic");
  check_set(kp_markers, 2 * J + 3, "markers");
  check_set(kp_dense, 6 * J, "dense");
  for (const auto& f : faces)
    for (int i : f)
      if (i < 0 || i >= V) throw ShapeMismatch("body model: face index out of range");
}

BodyParams BodyParams::rest(int joints, int basis) {
  BodyParams p;
  p.pose = MatX::Zero(joints, 6);
  for (int j = 0; j < joints; ++j) {
    p.pose(j, 0) = 1.0;  // identity in 6D: first two columns of I
    p.pose(j, 4) = 1.0;
  }
  p.shape = VecX::Zero(basis);
  p.cam = Vec3(1.0, 0.0, 0.0);
  return p;
}

BodyParams BodyParams::mean(int joints, int basis) {
  BodyParams p = rest(joints, basis);
  p.cam = Vec3(0.9, 0.0, 0.0);
  return p;
}

VecX BodyParams::flat() const {
  VecX v(flat_size());
  int o = 0;
  for (int j = 0; j < pose.rows(); ++j)
    for (int c = 0; c < 6; ++c) v[o++] = pose(j, c);
  for (int b = 0; b < shape.size(); ++b) v[o++] = shape[b];
  v[o++] = cam[0];
  v[o++] = cam[1];
  v[o++] = cam[2];
  return v;
}

BodyParams BodyParams::from_flat(const VecX& v, int joints, int basis) {
  if (v.size() != joints * 6 + basis + 3) throw ShapeMismatch("BodyParams::from_flat size");
  BodyParams p;
  p.pose = MatX(joints, 6);
  int o = 0;
  for (int j = 0; j < joints; ++j)
    for (int c = 0; c < 6; ++c) p.pose(j, c) = v[o++];
  p.shape = v.segment(o, basis);
  o += basis;
  p.cam = Vec3(v[o], v[o + 1], v[o + 2]);
  return p;
}

Mat3 rot6d_to_matrix(const Vec6& r) {
  const Vec3 a = r.head<3>();
  const Vec3 b = r.tail<3>();
  const double na = a.norm();
  if (na < 1e-8) throw DegenerateRotation("rot6d: first column norm < 1e-8");
  const Vec3 c1 = a / na;
  const Vec3 proj = b - c1.dot(b) * c1;
  const double np = proj.norm();
  if (np < 1e-8) throw DegenerateRotation("rot6d: second column degenerate");
  const Vec3 c2 = proj / np;
  Mat3 m;
  m.col(0) = c1;
  m.col(1) = c2;
  m.col(2) = c1.cross(c2);
  return m;
}

Vec6 matrix_to_rot6d(const Mat3& m) {
  Vec6 r;
  r.head<3>() = m.col(0);
  r.tail<3>() = m.col(1);
  return r;
}

FkResult forward_kinematics(const BodyModelDef& def, const BodyParams& params,
                            const std::string& keypoint_set) {
  const int J = def.joint_count;
  const int V = def.vertex_count();
  if (params.pose.rows() != J || params.pose.cols() != 6)
    throw ShapeMismatch("forward_kinematics: pose must be Jx6");
  if (params.shape.size() != def.basis_count())
    throw ShapeMismatch("forward_kinematics: shape size != basis count");

  MatX rest_v = def.template_vertices;
  for (int b = 0; b < def.basis_count(); ++b) rest_v += params.shape[b] * def.shape_basis[b];
  const MatX rest_j = def.joint_regressor * rest_v;

  std::vector<Mat3> rot_w(J);
  MatX joints(J, 3);
  for (int j = 0; j < J; ++j) {
    const Mat3 r = rot6d_to_matrix(params.pose.row(j).transpose());
    if (j == 0) {
      rot_w[0] = r;
      joints.row(0) = rest_j.row(0);
    } else {
      const int p = def.parents[j];
      rot_w[j] = rot_w[p] * r;
      joints.row(j) = joints.row(p) +
                      (rot_w[p] * (rest_j.row(j) - rest_j.row(p)).transpose()).transpose();
    }
  }

  // Per-joint skinning transforms [R | t - R*rest], blended by skin weights.
  MatX a(J, 12);
  for (int j = 0; j < J; ++j) {
    const Vec3 t = joints.row(j).transpose() - rot_w[j] * rest_j.row(j).transpose();
    for (int i = 0; i < 3; ++i)
      for (int k = 0; k < 3; ++k) a(j, 3 * i + k) = rot_w[j](i, k);
    a(j, 9) = t[0];
    a(j, 10) = t[1];
    a(j, 11) = t[2];
  }
  const MatX blended = def.skin_weights * a;  // V x 12

  FkResult out;
  out.joints = joints;
  out.vertices = MatX(V, 3);
  for (int v = 0; v < V; ++v) {
    const Vec3 r = rest_v.row(v).transpose();
    for (int i = 0; i < 3; ++i)
      out.vertices(v, i) = blended(v, 3 * i) * r[0] + blended(v, 3 * i + 1) * r[1] +
                           blended(v, 3 * i + 2) * r[2] + blended(v, 9 + i);
  }
  const auto& idx = def.keypoint_set(keypoint_set);
  out.keypoints = MatX(static_cast<int>(idx.size()), 3);
  for (size_t k = 0; k < idx.size(); ++k) out.keypoints.row(static_cast<int>(k)) = out.vertices.row(idx[k]);
  return out;
}

BodyModelDef build_default_model(uint64_t seed, int joints, int basis) {
  if (joints < 3 || joints > 24)
    throw InvalidConfig("build_default_model: joints must be in [3,24]");
  if (basis < 1 || basis > 16)
    throw InvalidConfig("build_default_model: shape basis must be in [1,16]");

  const int J = joints;
  BodyModelDef def;
  def.joint_count = J;
  MatX scaffold(J, 3);
  for (int j = 0; j < J; ++j) {
    def.parents.push_back(kSkeleton[j].parent);
    def.joint_names.push_back(kSkeleton[j].name);
    scaffold.row(j) = Vec3(kSkeleton[j].x, kSkeleton[j].y, kSkeleton[j].z);
  }

  // Bones (one per non-root joint, owned by the proximal joint) plus stub
  // extensions past every leaf so leaf joints drive some geometry.
  std::vector<BoneSeg> segs;
  std::vector<bool> has_child(static_cast<size_t>(J), false);
  for (int j = 1; j < J; ++j) has_child[static_cast<size_t>(def.parents[j])] = true;
  for (int j = 1; j < J; ++j) {
    BoneSeg s;
    s.a = scaffold.row(def.parents[j]).transpose();
    s.b = scaffold.row(j).transpose();
    s.joint = def.parents[j];
    s.radius = capsule_radius(def.joint_names[static_cast<size_t>(j)]);
    s.tag = def.joint_names[static_cast<size_t>(j)];
    segs.push_back(s);
  }
  for (int j = 0; j < J; ++j) {
    if (has_child[static_cast<size_t>(j)]) continue;
    const Vec3 pos = scaffold.row(j).transpose();
    Vec3 dir;
    if (j == 0) {
      dir = Vec3(0, 1, 0);
    } else {
      dir = (pos - scaffold.row(def.parents[j]).transpose()).normalized();
    }
    const std::string& nm = def.joint_names[static_cast<size_t>(j)];
    double len = 0.08, rad = 0.035;
    if (nm == "head" || nm == "neck") {
      len = 0.14;
      rad = 0.075;
    } else if (nm == "headtop") {
      len = 0.05;
      rad = 0.05;
    } else if (nm.rfind("ankle", 0) == 0) {
      dir = Vec3(0, 0, 1);  // feet point forward
      len = 0.14;
      rad = 0.04;
    }
    BoneSeg s;
    s.a = pos;
    s.b = pos + len * dir;
    s.joint = j;
    s.radius = rad;
    s.tag = nm + "_stub";
    segs.push_back(s);
  }

  // Capsule rings: 4 per bone, 3 per stub, 8 vertices per ring.
  const int ring_segs = 8;
  std::vector<Vec3> verts;
  std::vector<std::array<int, 3>> faces;
  std::vector<int> seg_of_vertex;
  for (size_t si = 0; si < segs.size(); ++si) {
    const BoneSeg& s = segs[si];
    const bool stub = s.tag.size() > 5 && s.tag.substr(s.tag.size() - 5) == "_stub";
    const int rings = stub ? 3 : 4;
    const Vec3 d = (s.b - s.a).normalized();
    const Vec3 u = perp_frame_u(d);
    const Vec3 w = d.cross(u);
    const int base = static_cast<int>(verts.size());
    for (int ri = 0; ri < rings; ++ri) {
      const double t = (rings == 1) ? 0.5 : 0.12 + 0.76 * ri / (rings - 1);
      const Vec3 c = s.a + t * (s.b - s.a);
      for (int k = 0; k < ring_segs; ++k) {
        const double phi = 2.0 * M_PI * k / ring_segs;
        verts.push_back(c + s.radius * (std::cos(phi) * u + std::sin(phi) * w));
        seg_of_vertex.push_back(static_cast<int>(si));
      }
    }
    for (int ri = 0; ri + 1 < rings; ++ri)
      for (int k = 0; k < ring_segs; ++k) {
        const int k2 = (k + 1) % ring_segs;
        const int a0 = base + ri * ring_segs + k;
        const int a1 = base + ri * ring_segs + k2;
        const int b0 = base + (ri + 1) * ring_segs + k;
        const int b1 = base + (ri + 1) * ring_segs + k2;
        faces.push_back({a0, a1, b0});
        faces.push_back({a1, b1, b0});
      }
  }
  const int V = static_cast<int>(verts.size());
  def.template_vertices = MatX(V, 3);
  for (int v = 0; v < V; ++v) def.template_vertices.row(v) = verts[static_cast<size_t>(v)];
  def.faces = std::move(faces);

  // Joint regressor: inverse-distance over the 12 nearest vertices.
  def.joint_regressor = MatX::Zero(J, V);
  for (int j = 0; j < J; ++j) {
    std::vector<std::pair<double, int>> dist;
    dist.reserve(static_cast<size_t>(V));
    for (int v = 0; v < V; ++v)
      dist.emplace_back((def.template_vertices.row(v).transpose() - scaffold.row(j).transpose()).norm(), v);
    std::partial_sort(dist.begin(), dist.begin() + 12, dist.end());
    double total = 0.0;
    for (int k = 0; k < 12; ++k) total += 1.0 / (dist[static_cast<size_t>(k)].first + 1e-3);
    for (int k = 0; k < 12; ++k)
      def.joint_regressor(j, dist[static_cast<size_t>(k)].second) =
          (1.0 / (dist[static_cast<size_t>(k)].first + 1e-3)) / total;
  }

  // Shift everything so the regressed root joint sits exactly at the origin;
  // the canonical body frame is root-centered.
  const Vec3 root = (def.joint_regressor.row(0) * def.template_vertices).transpose();
  def.template_vertices.rowwise() -= root.transpose();
  scaffold.rowwise() -= root.transpose();
  for (auto& s : segs) {
    s.a -= root;
    s.b -= root;
  }

  // Skin weights: inverse distance to the two nearest joints, where each
  // joint's distance is the closest of its owned segments.
  def.skin_weights = MatX::Zero(V, J);
  for (int v = 0; v < V; ++v) {
    const Vec3 p = def.template_vertices.row(v).transpose();
    std::vector<double> jd(static_cast<size_t>(J), 1e9);
    for (const auto& s : segs)
      jd[static_cast<size_t>(s.joint)] =
          std::min(jd[static_cast<size_t>(s.joint)], point_segment_dist(p, s.a, s.b));
    int j1 = -1, j2 = -1;
    for (int j = 0; j < J; ++j) {
      if (j1 < 0 || jd[static_cast<size_t>(j)] < jd[static_cast<size_t>(j1)]) {
        j2 = j1;
        j1 = j;
      } else if (j2 < 0 || jd[static_cast<size_t>(j)] < jd[static_cast<size_t>(j2)]) {
        j2 = j;
      }
    }
    const double w1 = 1.0 / (jd[static_cast<size_t>(j1)] + 0.01);
    const double w2 = (j2 >= 0) ? 1.0 / (jd[static_cast<size_t>(j2)] + 0.01) : 0.0;
    def.skin_weights(v, j1) = w1 / (w1 + w2);
    if (j2 >= 0) def.skin_weights(v, j2) = w2 / (w1 + w2);
  }

  // Shape basis: low-frequency random displacement fields, root-neutralized
  // (so shape never moves the root), then orthonormalized by modified
  // Gram-Schmidt over the flattened fields.
  Rng rng(Rng::mix(seed, 0x5ba5e5));
  def.shape_basis.clear();
  for (int b = 0; b < basis; ++b) {
    MatX field;
    for (int attempt = 0;; ++attempt) {
      if (attempt > 16) throw NumericError("shape basis orthonormalization failed");
      field = MatX::Zero(V, 3);
      for (int m = 0; m < 4; ++m) {
        Vec3 k(rng.normal(), rng.normal(), rng.normal());
        k = k.normalized() * rng.uniform(1.5, 5.0);
        const double phase = rng.uniform(0.0, 2.0 * M_PI);
        const Vec3 amp(rng.normal(), rng.normal(), rng.normal());
        for (int v = 0; v < V; ++v) {
          const double s = std::sin(k.dot(def.template_vertices.row(v).transpose()) + phase);
          field.row(v) += (amp * s).transpose();
        }
      }
      const Vec3 root_disp = (def.joint_regressor.row(0) * field).transpose();
      field.rowwise() -= root_disp.transpose();
      for (const auto& prev : def.shape_basis) {
        double dot = 0.0;
        for (int v = 0; v < V; ++v) dot += prev.row(v).dot(field.row(v));
        field -= dot * prev;
      }
      const double nrm = field.norm();
      if (nrm > 1e-6) {
        field /= nrm;
        break;
      }
    }
    def.shape_basis.push_back(field);
  }

  // Keypoint sets.
  std::set<int> used;
  auto nearest_unused = [&](const Vec3& target) {
    int best = -1;
    double bd = 1e18;
    for (int v = 0; v < V; ++v) {
      if (used.count(v)) continue;
      const double d = (def.template_vertices.row(v).transpose() - target).norm();
      if (d < bd) {
        bd = d;
        best = v;
      }
    }
    used.insert(best);
    return best;
  };

  const MatX rest_j = def.joint_regressor * def.template_vertices;
  for (int j = 0; j < J; ++j) def.kp_semantic.push_back(nearest_unused(rest_j.row(j).transpose()));

  used.clear();
  for (int j = 0; j < J; ++j) {
    const Vec3 pos = rest_j.row(j).transpose();
    Vec3 dir(0, 1, 0);
    if (j > 0) dir = (pos - rest_j.row(def.parents[j]).transpose()).normalized();
    const Vec3 u = perp_frame_u(dir);
    const double off = 1.5 * capsule_radius(def.joint_names[static_cast<size_t>(j)]);
    def.kp_markers.push_back(nearest_unused(pos + off * u));
    def.kp_markers.push_back(nearest_unused(pos - off * u));
  }
  const Vec3 top = scaffold.row(std::min(3, J - 1)).transpose() + Vec3(0, 0.12, 0);
  def.kp_markers.push_back(nearest_unused(top));
  def.kp_markers.push_back(nearest_unused(scaffold.row(std::min(1, J - 1)).transpose() + Vec3(0, 0, 0.12)));
  def.kp_markers.push_back(nearest_unused(scaffold.row(0).transpose() + Vec3(0, 0, -0.12)));

  for (int i = 0; i < 6 * J; ++i)
    def.kp_dense.push_back(static_cast<int>(static_cast<int64_t>(i) * V / (6 * J)));

  def.validate();
  return def;
}

void save_model(const BodyModelDef& def, const std::string& dir) {
  ArrayMap arrays;
  const int V = def.vertex_count();
  const int J = def.joint_count;
  // Eigen default storage is column-major; serialize row-major explicitly.
  auto put_mat = [&](const std::string& name, const MatX& m) {
    ArrayF32 a;
    a.shape = {m.rows(), m.cols()};
    a.data.resize(static_cast<size_t>(m.size()));
    for (int i = 0; i < m.rows(); ++i)
      for (int j = 0; j < m.cols(); ++j)
        a.data[static_cast<size_t>(i) * m.cols() + j] = static_cast<float>(m(i, j));
    arrays[name] = std::move(a);
  };
  auto put_ints = [&](const std::string& name, const std::vector<int>& v) {
    ArrayF32 a;
    a.shape = {static_cast<int64_t>(v.size())};
    a.data.assign(v.begin(), v.end());
    arrays[name] = std::move(a);
  };
  put_mat("template_vertices", def.template_vertices);
  put_mat("joint_regressor", def.joint_regressor);
  put_mat("skin_weights", def.skin_weights);
  {
    ArrayF32 f;
    f.shape = {static_cast<int64_t>(def.faces.size()), 3};
    for (const auto& face : def.faces)
      for (int i : face) f.data.push_back(static_cast<float>(i));
    arrays["faces"] = std::move(f);
  }
  {
    ArrayF32 b;
    b.shape = {def.basis_count(), V, 3};
    for (const auto& field : def.shape_basis)
      for (int v = 0; v < V; ++v)
        for (int c = 0; c < 3; ++c) b.data.push_back(static_cast<float>(field(v, c)));
    arrays["shape_basis"] = std::move(b);
  }
  put_ints("parents", def.parents);
  put_ints("kp_semantic", def.kp_semantic);
  put_ints("kp_markers", def.kp_markers);
  put_ints("kp_dense", def.kp_dense);

  nlohmann::json meta;
  meta["kind"] = "body_model";
  meta["joint_count"] = J;
  meta["basis_count"] = def.basis_count();
  meta["joint_names"] = def.joint_names;
  save_array_dir(dir, arrays, meta);
}

BodyModelDef load_model(const std::string& dir) {
  nlohmann::json meta;
  ArrayMap arrays = load_array_dir(dir, &meta);
  BodyModelDef def;
  def.joint_count = meta.at("joint_count").get<int>();
  def.joint_names = meta.at("joint_names").get<std::vector<std::string>>();
  auto get = [&](const std::string& name) -> const ArrayF32& {
    auto it = arrays.find(name);
    if (it == arrays.end()) throw DataError("body model missing array: " + name);
    return it->second;
  };
  auto get_mat = [&](const std::string& name) {
    const ArrayF32& a = get(name);
    MatX m(a.shape[0], a.shape[1]);
    for (int i = 0; i < m.rows(); ++i)
      for (int j = 0; j < m.cols(); ++j)
        m(i, j) = a.data[static_cast<size_t>(i) * m.cols() + j];
    return m;
  };
  auto get_ints = [&](const std::string& name) {
    const ArrayF32& a = get(name);
    std::vector<int> v(a.data.size());
    for (size_t i = 0; i < v.size(); ++i) v[i] = static_cast<int>(std::lround(a.data[i]));
    return v;
  };
  def.template_vertices = get_mat("template_vertices");
  def.joint_regressor = get_mat("joint_regressor");
  def.skin_weights = get_mat("skin_weights");
  def.parents = get_ints("parents");
  def.kp_semantic = get_ints("kp_semantic");
  def.kp_markers = get_ints("kp_markers");
  def.kp_dense = get_ints("kp_dense");
  {
    const ArrayF32& f = get("faces");
    for (int64_t i = 0; i < f.shape[0]; ++i)
      def.faces.push_back({static_cast<int>(std::lround(f.data[static_cast<size_t>(3 * i)])),
                           static_cast<int>(std::lround(f.data[static_cast<size_t>(3 * i + 1)])),
                           static_cast<int>(std::lround(f.data[static_cast<size_t>(3 * i + 2)]))});
  }
  {
    const ArrayF32& b = get("shape_basis");
    const int B = static_cast<int>(b.shape[0]);
    const int V = static_cast<int>(b.shape[1]);
    for (int k = 0; k < B; ++k) {
      MatX field(V, 3);
      for (int v = 0; v < V; ++v)
        for (int c = 0; c < 3; ++c)
          field(v, c) = b.data[static_cast<size_t>((static_cast<int64_t>(k) * V + v) * 3 + c)];
      def.shape_basis.push_back(field);
    }
  }
  def.validate();
  return def;
}

}  // namespace refit
