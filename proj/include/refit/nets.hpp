#pragma once

#include <memory>
#include <string>
#include <vector>

#include "refit/body_model.hpp"
#include "refit/config.hpp"
#include "refit/rng.hpp"
#include "refit/tensorad.hpp"

namespace refit {

struct Param {
  std::string name;
  ad::Shape shape;
  std::vector<double> val;
  std::vector<double> grad;
  std::vector<double> m, v;  // Adam state

  int64_t size() const { return static_cast<int64_t>(val.size()); }
};

class ParamSet {
 public:
  Param* add(const std::string& name, ad::Shape shape);
  Param* find(const std::string& name) const;
  const std::vector<std::unique_ptr<Param>>& all() const { return params_; }
  void zero_grad();
  int64_t total_size() const;

 private:
  std::vector<std::unique_ptr<Param>> params_;
};

ad::Tensor leaf(ad::Tape& t, Param* p);

struct NetDims {
  int joints = 16;
  int basis = 4;
  int keypoints = 35;
  int crop_res = 128;
  int width = 32;
  int blocks = 4;
  int global_dim = 256;
  int per_kp = 5;
  int radius = 3;
  int hidden = 32;
  bool single_gru = false;
  int single_hidden = 516;
  bool relu_maps = false;

  int theta_size() const { return joints * 6 + basis + 3; }
  int feedback_size() const { return global_dim + theta_size() + 3; }
  int streams() const { return single_gru ? 1 : joints + 2; }
  int window_size() const { return (2 * radius + 1) * (2 * radius + 1); }

  static NetDims from(const Config& cfg, int keypoint_count);
};

// Residual conv net: stride-4 stem, blocks at quarter resolution, a 1x1 head
// producing one channel per keypoint, and a strided tail pooled into the
// global feature used for initialization.
class Backbone {
 public:
  Backbone(ParamSet& params, const NetDims& dims, Rng& rng);

  struct Output {
    ad::Tensor maps;    // [K, res/4, res/4]
    ad::Tensor global;  // [global_dim]
  };
  Output extract(ad::Tape& t, const ad::Tensor& image) const;

  int64_t param_count() const;

 private:
  struct Conv {
    Param* w;
    Param* b;
    int stride, pad;
  };
  struct Norm {
    Param* scale;
    Param* bias;
  };
  struct Block {
    Conv c1, c2;
    Norm n1, n2;
  };
  ad::Tensor run_conv(ad::Tape& t, const Conv& c, const ad::Tensor& x) const;
  ad::Tensor run_norm(ad::Tape& t, const Norm& n, const ad::Tensor& x) const;
  ad::Tensor run_block(ad::Tape& t, const Block& b, const ad::Tensor& x) const;

  NetDims dims_;
  Conv stem1_, stem2_;
  Norm sn1_, sn2_;
  std::vector<Block> body_;
  Conv head_;
  Conv tail1_, tail2_;
  Norm tn1_, tn2_;
  Block tb1_, tb2_;
  Param* fc_w_;
  Param* fc_b_;
  std::vector<Param*> owned_;
};

// Window compression: shared linear window->per_kp, then 5K->global_dim,
// concatenated with the flattened estimate and bbox info.
class FeedbackNet {
 public:
  FeedbackNet(ParamSet& params, const NetDims& dims, Rng& rng);

  ad::Tensor compress(ad::Tape& t, const ad::Tensor& windows) const;  // [K,S2] -> [global_dim]
  ad::Tensor assemble(ad::Tape& t, const ad::Tensor& compressed, const ad::Tensor& theta_flat,
                      const ad::Tensor& bbox_info) const;

 private:
  NetDims dims_;
  Param* w_win_;
  Param* b_win_;
  Param* w_cmp_;
  Param* b_cmp_;
};

// N disentangled GRU+MLP streams over a shared feedback vector, implemented
// as batched matrix ops. Stream n owns exactly one parameter group: J joint
// streams (6 outputs each), one shape stream (B), one camera stream (3).
class UpdaterBank {
 public:
  UpdaterBank(ParamSet& params, const NetDims& dims, Rng& rng);

  MatX init_hidden() const;                         // N x M zeros
  std::vector<MatX> init_hidden(int batch) const;   // per-sample states

  struct StepOut {
    ad::Tensor delta;   // [theta_size]
    ad::Tensor hidden;  // [N, M]
  };
  StepOut step(ad::Tape& t, const ad::Tensor& feedback, const ad::Tensor& hidden) const;

  // Recurrent parameters per gate block (N*M*M).
  int64_t gate_block_param_count() const;
  // Test support: silence one stream by zeroing all its weights.
  void zero_stream(int stream);

  const NetDims& dims() const { return dims_; }

 private:
  NetDims dims_;
  Param* w_xz_;
  Param* w_xr_;
  Param* w_xh_;
  Param* w_hz_;
  Param* w_hr_;
  Param* w_hh_;
  Param* b_z_;
  Param* b_r_;
  Param* b_h_;
  Param* m1_w_;
  Param* m1_b_;
  Param* joint_w_;
  Param* joint_b_;
  Param* shape_w_;
  Param* shape_b_;
  Param* cam_w_;
  Param* cam_b_;
  Param* single_w_ = nullptr;
  Param* single_b_ = nullptr;
};

// Additive update in parameter space with the weak-perspective scale clamped
// to stay positive.
ad::Tensor apply_update(const ad::Tensor& theta_flat, const ad::Tensor& delta, int joints,
                        int basis);
BodyParams apply_update(const BodyParams& theta, const BodyParams& delta);

struct Nets {
  NetDims dims;
  ParamSet params;
  std::unique_ptr<Backbone> backbone;
  std::unique_ptr<FeedbackNet> feedback;
  std::unique_ptr<UpdaterBank> bank;
  BodyParams mean_params;

  Nets(const Config& cfg, int keypoint_count, uint64_t init_seed);
};

}  // namespace refit
