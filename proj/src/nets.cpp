#include "refit/nets.hpp"

#include <cmath>

#include "refit/errors.hpp"
#include "refit/rng.hpp"

namespace refit {

using ad::Tensor;

Param* ParamSet::add(const std::string& name, ad::Shape shape) {
  if (find(name)) throw InvalidConfig("duplicate parameter name: " + name);
  auto p = std::make_unique<Param>();
  p->name = name;
  p->shape = std::move(shape);
  p->val.assign(static_cast<size_t>(ad::shape_size(p->shape)), 0.0);
  p->grad.assign(p->val.size(), 0.0);
  params_.push_back(std::move(p));
  return params_.back().get();
}

Param* ParamSet::find(const std::string& name) const {
  for (const auto& p : params_)
    if (p->name == name) return p.get();
  return nullptr;
}

void ParamSet::zero_grad() {
  for (const auto& p : params_) std::fill(p->grad.begin(), p->grad.end(), 0.0);
}

int64_t ParamSet::total_size() const {
  int64_t n = 0;
  for (const auto& p : params_) n += p->size();
  return n;
}

Tensor leaf(ad::Tape& t, Param* p) { return t.leaf(p->shape, p->val.data(), p->grad.data()); }

NetDims NetDims::from(const Config& cfg, int keypoint_count) {
  NetDims d;
  d.joints = static_cast<int>(cfg.get_int("model.joints"));
  d.basis = static_cast<int>(cfg.get_int("model.shape_basis"));
  d.keypoints = keypoint_count;
  d.crop_res = static_cast<int>(cfg.get_int("cam.crop_res"));
  d.width = static_cast<int>(cfg.get_int("backbone.width"));
  d.blocks = static_cast<int>(cfg.get_int("backbone.blocks"));
  d.global_dim = static_cast<int>(cfg.get_int("backbone.global_dim"));
  d.per_kp = static_cast<int>(cfg.get_int("feedback.per_kp"));
  d.radius = static_cast<int>(cfg.get_int("feedback.radius"));
  d.hidden = static_cast<int>(cfg.get_int("updater.hidden"));
  d.single_gru = cfg.get_bool("updater.single_gru");
  d.single_hidden = static_cast<int>(cfg.get_int("updater.single_hidden"));
  d.relu_maps = cfg.get_bool("backbone.relu_maps");
  if (d.crop_res % 4 != 0 || d.crop_res < 16)
    throw InvalidConfig("cam.crop_res must be a multiple of 4, >= 16");
  if (d.radius < 0) throw InvalidConfig("feedback.radius must be >= 0");
  return d;
}

namespace {

void init_normal(Param* p, Rng& rng, double stddev) {
  for (auto& v : p->val) v = rng.normal(0.0, stddev);
}

void init_const(Param* p, double c) { std::fill(p->val.begin(), p->val.end(), c); }

}  // namespace

// ---------------- Backbone ----------------

Backbone::Backbone(ParamSet& params, const NetDims& dims, Rng& rng) : dims_(dims) {
  int next = 0;
  auto conv = [&](int cin, int cout, int k, int stride, int pad) {
    Conv c;
    c.w = params.add("backbone.conv" + std::to_string(next) + ".w", {cout, cin, k, k});
    c.b = params.add("backbone.conv" + std::to_string(next) + ".b", {cout});
    ++next;
    c.stride = stride;
    c.pad = pad;
    init_normal(c.w, rng, std::sqrt(2.0 / (cin * k * k)));
    init_const(c.b, 0.0);
    return c;
  };
  auto norm = [&](int ch) {
    Norm n;
    n.scale = params.add("backbone.norm" + std::to_string(next) + ".s", {ch});
    n.bias = params.add("backbone.norm" + std::to_string(next) + ".b", {ch});
    ++next;
    init_const(n.scale, 1.0);
    init_const(n.bias, 0.0);
    return n;
  };
  auto block = [&](int ch) {
    Block b;
    b.c1 = conv(ch, ch, 3, 1, 1);
    b.n1 = norm(ch);
    b.c2 = conv(ch, ch, 3, 1, 1);
    b.n2 = norm(ch);
    return b;
  };

  const int w = dims.width;
  stem1_ = conv(3, w, 3, 2, 1);
  sn1_ = norm(w);
  stem2_ = conv(w, w, 3, 2, 1);
  sn2_ = norm(w);
  for (int i = 0; i < dims.blocks; ++i) body_.push_back(block(w));
  head_ = conv(w, dims.keypoints, 1, 1, 0);
  tail1_ = conv(w, 2 * w, 3, 2, 1);
  tn1_ = norm(2 * w);
  tb1_ = block(2 * w);
  tail2_ = conv(2 * w, 4 * w, 3, 2, 1);
  tn2_ = norm(4 * w);
  tb2_ = block(4 * w);
  fc_w_ = params.add("backbone.fc.w", {dims.global_dim, 4 * w});
  fc_b_ = params.add("backbone.fc.b", {dims.global_dim});
  init_normal(fc_w_, rng, std::sqrt(1.0 / (4 * w)));
  init_const(fc_b_, 0.0);
}

Tensor Backbone::run_conv(ad::Tape& t, const Conv& c, const Tensor& x) const {
  return ad::conv2d(x, leaf(t, c.w), leaf(t, c.b), c.stride, c.pad);
}

Tensor Backbone::run_norm(ad::Tape& t, const Norm& n, const Tensor& x) const {
  return ad::shift_channels(ad::scale_channels(ad::instance_norm(x), leaf(t, n.scale)),
                            leaf(t, n.bias));
}

Tensor Backbone::run_block(ad::Tape& t, const Block& b, const Tensor& x) const {
  Tensor y = ad::relu(run_norm(t, b.n1, run_conv(t, b.c1, x)));
  y = run_norm(t, b.n2, run_conv(t, b.c2, y));
  return ad::relu(ad::add(x, y));
}

Backbone::Output Backbone::extract(ad::Tape& t, const Tensor& image) const {
  if (image.rank() != 3 || image.dim(0) != 3 || image.dim(1) != dims_.crop_res ||
      image.dim(2) != dims_.crop_res)
    throw ShapeMismatch("backbone: expected [3," + std::to_string(dims_.crop_res) + "," +
                        std::to_string(dims_.crop_res) + "] image");
  Tensor x = ad::relu(run_norm(t, sn1_, run_conv(t, stem1_, image)));
  x = ad::relu(run_norm(t, sn2_, run_conv(t, stem2_, x)));
  for (const auto& b : body_) x = run_block(t, b, x);

  Tensor maps = run_conv(t, head_, x);
  if (dims_.relu_maps) maps = ad::relu(maps);

  Tensor g = ad::relu(run_norm(t, tn1_, run_conv(t, tail1_, x)));
  g = run_block(t, tb1_, g);
  g = ad::relu(run_norm(t, tn2_, run_conv(t, tail2_, g)));
  g = run_block(t, tb2_, g);
  Tensor pooled = ad::global_avg_pool(g);
  Tensor global = ad::add(ad::matvec(leaf(t, fc_w_), pooled), leaf(t, fc_b_));
  return {maps, global};
}

int64_t Backbone::param_count() const {
  int64_t n = 0;
  auto count_conv = [&](const Conv& c) { n += c.w->size() + c.b->size(); };
  auto count_norm = [&](const Norm& m) { n += m.scale->size() + m.bias->size(); };
  auto count_block = [&](const Block& b) {
    count_conv(b.c1);
    count_conv(b.c2);
    count_norm(b.n1);
    count_norm(b.n2);
  };
  count_conv(stem1_);
  count_conv(stem2_);
  count_norm(sn1_);
  count_norm(sn2_);
  for (const auto& b : body_) count_block(b);
  count_conv(head_);
  count_conv(tail1_);
  count_conv(tail2_);
  count_norm(tn1_);
  count_norm(tn2_);
  count_block(tb1_);
  count_block(tb2_);
  n += fc_w_->size() + fc_b_->size();
  return n;
}

// ---------------- FeedbackNet ----------------

FeedbackNet::FeedbackNet(ParamSet& params, const NetDims& dims, Rng& rng) : dims_(dims) {
  const int s2 = dims.window_size();
  w_win_ = params.add("feedback.win.w", {s2, dims.per_kp});
  b_win_ = params.add("feedback.win.b", {dims.per_kp});
  w_cmp_ = params.add("feedback.cmp.w", {dims.global_dim, dims.per_kp * dims.keypoints});
  b_cmp_ = params.add("feedback.cmp.b", {dims.global_dim});
  init_normal(w_win_, rng, std::sqrt(1.0 / s2));
  init_const(b_win_, 0.0);
  init_normal(w_cmp_, rng, std::sqrt(1.0 / (dims.per_kp * dims.keypoints)));
  init_const(b_cmp_, 0.0);
}

Tensor FeedbackNet::compress(ad::Tape& t, const Tensor& windows) const {
  if (windows.rank() != 2 || windows.dim(0) != dims_.keypoints ||
      windows.dim(1) != dims_.window_size())
    throw ShapeMismatch("feedback: windows must be [K,(2r+1)^2]");
  Tensor per = ad::add_rowvec(ad::matmul(windows, leaf(t, w_win_)), leaf(t, b_win_));
  Tensor flat = ad::flatten(per);  // [K*per_kp]
  return ad::add(ad::matvec(leaf(t, w_cmp_), flat), leaf(t, b_cmp_));
}

Tensor FeedbackNet::assemble(ad::Tape& t, const Tensor& compressed, const Tensor& theta_flat,
                             const Tensor& bbox_info) const {
  (void)t;
  if (compressed.size() != dims_.global_dim || theta_flat.size() != dims_.theta_size() ||
      bbox_info.size() != 3)
    throw ShapeMismatch("feedback: assemble part sizes");
  return ad::concat1d({compressed, theta_flat, bbox_info});
}

// ---------------- UpdaterBank ----------------

UpdaterBank::UpdaterBank(ParamSet& params, const NetDims& dims, Rng& rng) : dims_(dims) {
  const int n = dims.streams();
  const int m = dims.single_gru ? dims.single_hidden : dims.hidden;
  const int df = dims.feedback_size();
  auto addp = [&](const char* name, ad::Shape shape, double stddev) {
    Param* p = params.add(std::string("updater.") + name, std::move(shape));
    if (stddev > 0) init_normal(p, rng, stddev);
    return p;
  };
  const double sx = std::sqrt(1.0 / df);
  const double sh = std::sqrt(1.0 / m);
  w_xz_ = addp("w_xz", {n * m, df}, sx);
  w_xr_ = addp("w_xr", {n * m, df}, sx);
  w_xh_ = addp("w_xh", {n * m, df}, sx);
  w_hz_ = addp("w_hz", {n, m, m}, sh);
  w_hr_ = addp("w_hr", {n, m, m}, sh);
  w_hh_ = addp("w_hh", {n, m, m}, sh);
  b_z_ = addp("b_z", {n, m}, 0.0);
  b_r_ = addp("b_r", {n, m}, 0.0);
  b_h_ = addp("b_h", {n, m}, 0.0);
  m1_w_ = addp("m1_w", {n, m, m}, sh);
  m1_b_ = addp("m1_b", {n, m}, 0.0);
  if (dims.single_gru) {
    single_w_ = addp("out_w", {dims.theta_size(), m}, 0.0);  // zero: first update is 0
    single_b_ = addp("out_b", {dims.theta_size()}, 0.0);
  } else {
    joint_w_ = addp("joint_w", {dims.joints, 6, m}, 0.0);
    joint_b_ = addp("joint_b", {dims.joints, 6}, 0.0);
    shape_w_ = addp("shape_w", {dims.basis, m}, 0.0);
    shape_b_ = addp("shape_b", {dims.basis}, 0.0);
    cam_w_ = addp("cam_w", {3, m}, 0.0);
    cam_b_ = addp("cam_b", {3}, 0.0);
  }
}

MatX UpdaterBank::init_hidden() const {
  const int m = dims_.single_gru ? dims_.single_hidden : dims_.hidden;
  return MatX::Zero(dims_.streams(), m);
}

std::vector<MatX> UpdaterBank::init_hidden(int batch) const {
  if (batch < 1) throw InvalidConfig("init_hidden: batch must be >= 1");
  return std::vector<MatX>(static_cast<size_t>(batch), init_hidden());
}

UpdaterBank::StepOut UpdaterBank::step(ad::Tape& t, const Tensor& feedback,
                                       const Tensor& hidden) const {
  const int n = dims_.streams();
  const int m = dims_.single_gru ? dims_.single_hidden : dims_.hidden;
  if (feedback.size() != dims_.feedback_size())
    throw ShapeMismatch("updater: feedback vector size");
  if (hidden.rank() != 2 || hidden.dim(0) != n || hidden.dim(1) != m)
    throw ShapeMismatch("updater: hidden state must be [N,M]");
  for (int64_t i = 0; i < feedback.size(); ++i)
    if (!std::isfinite(feedback[i])) throw NonFinite("updater: non-finite feedback");

  Tensor xz = ad::reshape(ad::matvec(leaf(t, w_xz_), feedback), {n, m});
  Tensor xr = ad::reshape(ad::matvec(leaf(t, w_xr_), feedback), {n, m});
  Tensor xh = ad::reshape(ad::matvec(leaf(t, w_xh_), feedback), {n, m});
  Tensor z = ad::sigmoid(ad::add(ad::add(xz, ad::batched_matvec(leaf(t, w_hz_), hidden)),
                                 leaf(t, b_z_)));
  Tensor r = ad::sigmoid(ad::add(ad::add(xr, ad::batched_matvec(leaf(t, w_hr_), hidden)),
                                 leaf(t, b_r_)));
  Tensor cand = ad::tanh_t(ad::add(
      ad::add(xh, ad::batched_matvec(leaf(t, w_hh_), ad::mul(r, hidden))), leaf(t, b_h_)));
  Tensor ones = t.full({n, m}, 1.0);
  Tensor h_next = ad::add(ad::mul(ad::sub(ones, z), hidden), ad::mul(z, cand));

  Tensor m1 = ad::tanh_t(ad::add(ad::batched_matvec(leaf(t, m1_w_), h_next), leaf(t, m1_b_)));

  Tensor delta;
  if (dims_.single_gru) {
    Tensor h1 = ad::reshape(m1, {m});
    delta = ad::add(ad::matvec(leaf(t, single_w_), h1), leaf(t, single_b_));
  } else {
    Tensor jh = ad::slice_rows(m1, 0, dims_.joints);
    Tensor dj = ad::add(ad::batched_matvec(leaf(t, joint_w_), jh),
                        ad::reshape(leaf(t, joint_b_), {dims_.joints, 6}));
    Tensor sh = ad::reshape(ad::slice_rows(m1, dims_.joints, 1), {m});
    Tensor ds = ad::add(ad::matvec(leaf(t, shape_w_), sh), leaf(t, shape_b_));
    Tensor ch = ad::reshape(ad::slice_rows(m1, dims_.joints + 1, 1), {m});
    Tensor dc = ad::add(ad::matvec(leaf(t, cam_w_), ch), leaf(t, cam_b_));
    delta = ad::concat1d({ad::flatten(dj), ds, dc});
  }
  for (int64_t i = 0; i < delta.size(); ++i)
    if (!std::isfinite(delta[i])) throw NonFinite("updater: non-finite update");
  return {delta, h_next};
}

int64_t UpdaterBank::gate_block_param_count() const {
  const int m = dims_.single_gru ? dims_.single_hidden : dims_.hidden;
  return static_cast<int64_t>(dims_.streams()) * m * m;
}

void UpdaterBank::zero_stream(int stream) {
  const int n = dims_.streams();
  const int m = dims_.single_gru ? dims_.single_hidden : dims_.hidden;
  if (stream < 0 || stream >= n) throw InvalidConfig("zero_stream: bad stream index");
  const int df = dims_.feedback_size();
  auto zero_range = [](Param* p, int64_t off, int64_t len) {
    std::fill(p->val.begin() + off, p->val.begin() + off + len, 0.0);
  };
  for (Param* p : {w_xz_, w_xr_, w_xh_})
    zero_range(p, static_cast<int64_t>(stream) * m * df, static_cast<int64_t>(m) * df);
  for (Param* p : {w_hz_, w_hr_, w_hh_, m1_w_})
    zero_range(p, static_cast<int64_t>(stream) * m * m, static_cast<int64_t>(m) * m);
  for (Param* p : {b_z_, b_r_, b_h_, m1_b_})
    zero_range(p, static_cast<int64_t>(stream) * m, m);
  if (dims_.single_gru) {
    zero_range(single_w_, 0, single_w_->size());
    zero_range(single_b_, 0, single_b_->size());
  } else if (stream < dims_.joints) {
    zero_range(joint_w_, static_cast<int64_t>(stream) * 6 * m, 6 * static_cast<int64_t>(m));
    zero_range(joint_b_, static_cast<int64_t>(stream) * 6, 6);
  } else if (stream == dims_.joints) {
    zero_range(shape_w_, 0, shape_w_->size());
    zero_range(shape_b_, 0, shape_b_->size());
  } else {
    zero_range(cam_w_, 0, cam_w_->size());
    zero_range(cam_b_, 0, cam_b_->size());
  }
}

ad::Tensor apply_update(const Tensor& theta_flat, const Tensor& delta, int joints, int basis) {
  if (theta_flat.size() != delta.size()) throw ShapeMismatch("apply_update: size mismatch");
  Tensor sum = ad::add(theta_flat, delta);
  const int s_idx = joints * 6 + basis;
  Tensor head = ad::slice1d(sum, 0, s_idx);
  Tensor s = ad::clamp_min(ad::slice1d(sum, s_idx, 1), 1e-3);
  Tensor rest = ad::slice1d(sum, s_idx + 1, 2);
  return ad::concat1d({head, s, rest});
}

BodyParams apply_update(const BodyParams& theta, const BodyParams& delta) {
  if (theta.pose.rows() != delta.pose.rows() || theta.shape.size() != delta.shape.size())
    throw ShapeMismatch("apply_update: parameter block mismatch");
  BodyParams out = theta;
  out.pose += delta.pose;
  out.shape += delta.shape;
  out.cam += delta.cam;
  out.cam[0] = std::max(out.cam[0], 1e-3);
  return out;
}

Nets::Nets(const Config& cfg, int keypoint_count, uint64_t init_seed)
    : dims(NetDims::from(cfg, keypoint_count)) {
  Rng rng(Rng::mix(init_seed, 0x9e7f));
  backbone = std::make_unique<Backbone>(params, dims, rng);
  feedback = std::make_unique<FeedbackNet>(params, dims, rng);
  bank = std::make_unique<UpdaterBank>(params, dims, rng);
  mean_params = BodyParams::mean(dims.joints, dims.basis);
}

}  // namespace refit
