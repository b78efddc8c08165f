#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <string>
#include <vector>

#include "refit/errors.hpp"

namespace refit::ad {

// Reverse-mode automatic differentiation over dense double tensors.
//
// A Tape owns the nodes of one forward evaluation; creation order is a
// topological order, so backward() is a single reverse sweep. Handles
// (Tensor) stay valid for the lifetime of the tape. Parameters enter a
// graph through Tape::leaf, which views external storage and accumulates
// into an external gradient buffer, so weight matrices are never copied
// per evaluation.

using Shape = std::vector<int>;

int64_t shape_size(const Shape& s);

struct Node {
  Shape shape;
  int64_t size = 0;
  std::vector<double> val;      // owned storage (empty when ext is set)
  const double* ext = nullptr;  // external value storage (leaves)
  std::vector<double> grad;     // allocated lazily during backward
  double* grad_sink = nullptr;  // leaf gradient accumulation target
  bool needs_grad = false;
  std::function<void()> back;

  const double* data() const { return ext ? ext : val.data(); }
  double* grad_data();  // allocates (zeroed) on first use
};

class Tape;

class Tensor {
 public:
  Tensor() = default;
  Tensor(Tape* tape, Node* node) : tape_(tape), node_(node) {}

  bool valid() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  int dim(int i) const { return node_->shape[static_cast<size_t>(i)]; }
  int rank() const { return static_cast<int>(node_->shape.size()); }
  int64_t size() const { return node_->size; }
  const double* data() const { return node_->data(); }
  double operator[](int64_t i) const { return node_->data()[i]; }
  double scalar() const;
  std::vector<double> to_vector() const;

  Tape* tape() const { return tape_; }
  Node* node() const { return node_; }

 private:
  Tape* tape_ = nullptr;
  Node* node_ = nullptr;
};

class Tape {
 public:
  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool grad_enabled() const { return grad_enabled_; }

  Tensor constant(Shape shape, std::vector<double> values);
  Tensor constant(Shape shape, const float* values);  // widening copy
  Tensor zeros(Shape shape);
  Tensor full(Shape shape, double value);
  Tensor scalar(double value) { return full({1}, value); }

  // Parameter view: no value copy; gradients accumulate into grad_sink
  // after backward(). With gradients disabled this is just a view.
  Tensor leaf(Shape shape, const double* values, double* grad_sink);

  // Raw node for op implementations.
  Tensor make(Shape shape, bool needs_grad);

  void backward(const Tensor& root);  // root must be a scalar

  size_t node_count() const { return nodes_.size(); }

 private:
  friend class Tensor;
  std::deque<Node> nodes_;
  bool grad_enabled_ = true;
};

// ---- elementwise ----
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor neg(const Tensor& a);
Tensor add_scalar(const Tensor& a, double c);
Tensor mul_scalar(const Tensor& a, double c);
Tensor relu(const Tensor& a);
Tensor tanh_t(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor square(const Tensor& a);
Tensor sqrt_t(const Tensor& a);
Tensor clamp_min(const Tensor& a, double lo);

// ---- shape ----
Tensor reshape(const Tensor& a, Shape shape);
Tensor flatten(const Tensor& a);
Tensor concat1d(const std::vector<Tensor>& parts);
Tensor slice1d(const Tensor& a, int64_t start, int64_t len);
Tensor stack_rows(const std::vector<Tensor>& rows);          // n x [c] -> [n,c]
Tensor slice_rows(const Tensor& a, int start, int len);      // [r,c] -> [len,c]
Tensor slice_cols(const Tensor& a, int start, int len);      // [r,c] -> [r,len]
Tensor hstack(const std::vector<Tensor>& parts);             // [r,ci] -> [r,sum ci]
Tensor gather_rows(const Tensor& a, const std::vector<int>& idx);
Tensor stopgrad(const Tensor& a);

// ---- linear algebra ----
Tensor matmul(const Tensor& a, const Tensor& b);                 // [m,k]x[k,n]
Tensor matvec(const Tensor& a, const Tensor& x);                 // [m,k]x[k]
Tensor batched_matvec(const Tensor& w, const Tensor& x);         // [N,m,k]x[N,k]
Tensor add_rowvec(const Tensor& a, const Tensor& v);             // [r,c]+[c]
Tensor sum_all(const Tensor& a);                                 // -> [1]
Tensor mean_all(const Tensor& a);                                // -> [1]

// ---- row geometry (rows are 3-vectors) ----
Tensor normalize_rows3(const Tensor& a, double min_norm = 1e-12);
Tensor cross_rows3(const Tensor& a, const Tensor& b);
Tensor rowdot3(const Tensor& a, const Tensor& b);  // [N,3]x[N,3] -> [N]
Tensor scale_rows(const Tensor& a, const Tensor& s);  // [N,c]*[N]
Tensor stack_cols3(const Tensor& a, const Tensor& b, const Tensor& c);  // -> [3,3]

// ---- neural net ops ----
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, int stride, int pad);
Tensor instance_norm(const Tensor& x, double eps = 1e-5);  // per-channel over HxW
Tensor scale_channels(const Tensor& x, const Tensor& s);
Tensor shift_channels(const Tensor& x, const Tensor& b);
Tensor global_avg_pool(const Tensor& x);  // [C,H,W] -> [C]

// Per-row bilinear window lookup with zero padding. F is [K,H,W], p is [K,2]
// continuous pixel coordinates (x, y) with pixel centers at integers.
// Returns [K,(2r+1)^2], window flattened row-major over (dy, dx).
Tensor bilinear_window(const Tensor& f, const Tensor& p, int radius);

// Blended rigid transforms: m is [V,12] (row-major 3x3 rotation then
// translation per row), rest is [V,3]; returns rotation*rest + translation.
Tensor affine_apply(const Tensor& m, const Tensor& rest);

}  // namespace refit::ad
