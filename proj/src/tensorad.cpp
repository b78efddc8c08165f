#include "refit/tensorad.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <memory>

#include <Eigen/Core>

namespace refit::ad {

using MatRM = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapM = Eigen::Map<MatRM>;
using MapCM = Eigen::Map<const MatRM>;
using MapV = Eigen::Map<Eigen::VectorXd>;
using MapCV = Eigen::Map<const Eigen::VectorXd>;

int64_t shape_size(const Shape& s) {
  int64_t n = 1;
  for (int d : s) n *= d;
  return n;
}

double* Node::grad_data() {
  if (grad.empty()) grad.assign(static_cast<size_t>(size), 0.0);
  return grad.data();
}

double Tensor::scalar() const {
  if (size() != 1) throw ShapeMismatch("scalar() on tensor of size " + std::to_string(size()));
  return data()[0];
}

std::vector<double> Tensor::to_vector() const {
  return std::vector<double>(data(), data() + size());
}

Tensor Tape::make(Shape shape, bool needs_grad) {
  nodes_.emplace_back();
  Node& n = nodes_.back();
  n.shape = std::move(shape);
  n.size = shape_size(n.shape);
  n.val.resize(static_cast<size_t>(n.size));
  n.needs_grad = needs_grad && grad_enabled_;
  return Tensor(this, &n);
}

Tensor Tape::constant(Shape shape, std::vector<double> values) {
  if (shape_size(shape) != static_cast<int64_t>(values.size()))
    throw ShapeMismatch("constant: data length does not match shape");
  nodes_.emplace_back();
  Node& n = nodes_.back();
  n.shape = std::move(shape);
  n.size = shape_size(n.shape);
  n.val = std::move(values);
  return Tensor(this, &n);
}

Tensor Tape::constant(Shape shape, const float* values) {
  std::vector<double> v(static_cast<size_t>(shape_size(shape)));
  for (size_t i = 0; i < v.size(); ++i) v[i] = values[i];
  return constant(std::move(shape), std::move(v));
}

Tensor Tape::zeros(Shape shape) { return full(std::move(shape), 0.0); }

Tensor Tape::full(Shape shape, double value) {
  std::vector<double> v(static_cast<size_t>(shape_size(shape)), value);
  return constant(std::move(shape), std::move(v));
}

Tensor Tape::leaf(Shape shape, const double* values, double* grad_sink) {
  nodes_.emplace_back();
  Node& n = nodes_.back();
  n.shape = std::move(shape);
  n.size = shape_size(n.shape);
  n.ext = values;
  n.needs_grad = grad_enabled_ && grad_sink != nullptr;
  n.grad_sink = grad_enabled_ ? grad_sink : nullptr;
  return Tensor(this, &n);
}

void Tape::backward(const Tensor& root) {
  if (!grad_enabled_) throw NumericError("backward() on a no-grad tape");
  if (root.size() != 1) throw ShapeMismatch("backward() root must be scalar");
  root.node()->grad_data()[0] = 1.0;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    Node& n = *it;
    if (n.grad.empty()) continue;  // never touched: nothing flows through it
    if (n.back) n.back();
    if (n.grad_sink) {
      for (int64_t i = 0; i < n.size; ++i) n.grad_sink[i] += n.grad[i];
    }
  }
}

namespace {

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    throw ShapeMismatch(std::string(op) + ": operand shapes differ");
}

bool wants_grad(const Tensor& a) { return a.node()->needs_grad; }

// Accumulate helper: adds src into dst-node grad if it participates.
inline void axpy(Node* n, const double* src, int64_t count, double scale = 1.0) {
  if (!n->needs_grad) return;
  double* g = n->grad_data();
  if (scale == 1.0) {
    for (int64_t i = 0; i < count; ++i) g[i] += src[i];
  } else {
    for (int64_t i = 0; i < count; ++i) g[i] += scale * src[i];
  }
}

template <typename Fwd, typename Bwd>
Tensor elementwise_binary(const Tensor& a, const Tensor& b, const char* name, Fwd fwd,
                          Bwd bwd) {
  check_same_shape(a, b, name);
  Tape* t = a.tape();
  Tensor out = t->make(a.shape(), wants_grad(a) || wants_grad(b));
  const double* pa = a.data();
  const double* pb = b.data();
  double* po = out.node()->val.data();
  const int64_t n = a.size();
  for (int64_t i = 0; i < n; ++i) po[i] = fwd(pa[i], pb[i]);
  if (out.node()->needs_grad) {
    Node* na = a.node();
    Node* nb = b.node();
    Node* no = out.node();
    out.node()->back = [na, nb, no, n, bwd]() {
      const double* g = no->grad.data();
      double* ga = na->needs_grad ? na->grad_data() : nullptr;
      double* gb = nb->needs_grad ? nb->grad_data() : nullptr;
      const double* pa = na->data();
      const double* pb = nb->data();
      for (int64_t i = 0; i < n; ++i) bwd(g[i], pa[i], pb[i], ga ? ga + i : nullptr,
                                          gb ? gb + i : nullptr);
    };
  }
  return out;
}

template <typename Fwd, typename Bwd>
Tensor elementwise_unary(const Tensor& a, Fwd fwd, Bwd bwd) {
  Tape* t = a.tape();
  Tensor out = t->make(a.shape(), wants_grad(a));
  const double* pa = a.data();
  double* po = out.node()->val.data();
  const int64_t n = a.size();
  for (int64_t i = 0; i < n; ++i) po[i] = fwd(pa[i]);
  if (out.node()->needs_grad) {
    Node* na = a.node();
    Node* no = out.node();
    out.node()->back = [na, no, n, bwd]() {
      const double* g = no->grad.data();
      double* ga = na->grad_data();
      const double* pa = na->data();
      const double* po = no->val.data();
      for (int64_t i = 0; i < n; ++i) ga[i] += g[i] * bwd(pa[i], po[i]);
    };
  }
  return out;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return elementwise_binary(
      a, b, "add", [](double x, double y) { return x + y; },
      [](double g, double, double, double* ga, double* gb) {
        if (ga) *ga += g;
        if (gb) *gb += g;
      });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return elementwise_binary(
      a, b, "sub", [](double x, double y) { return x - y; },
      [](double g, double, double, double* ga, double* gb) {
        if (ga) *ga += g;
        if (gb) *gb -= g;
      });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return elementwise_binary(
      a, b, "mul", [](double x, double y) { return x * y; },
      [](double g, double x, double y, double* ga, double* gb) {
        if (ga) *ga += g * y;
        if (gb) *gb += g * x;
      });
}

Tensor div(const Tensor& a, const Tensor& b) {
  return elementwise_binary(
      a, b, "div", [](double x, double y) { return x / y; },
      [](double g, double x, double y, double* ga, double* gb) {
        if (ga) *ga += g / y;
        if (gb) *gb -= g * x / (y * y);
      });
}

Tensor neg(const Tensor& a) {
  return elementwise_unary(a, [](double x) { return -x; },
                           [](double, double) { return -1.0; });
}

Tensor add_scalar(const Tensor& a, double c) {
  return elementwise_unary(a, [c](double x) { return x + c; },
                           [](double, double) { return 1.0; });
}

Tensor mul_scalar(const Tensor& a, double c) {
  return elementwise_unary(a, [c](double x) { return x * c; },
                           [c](double, double) { return c; });
}

Tensor relu(const Tensor& a) {
  return elementwise_unary(a, [](double x) { return x > 0.0 ? x : 0.0; },
                           [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Tensor tanh_t(const Tensor& a) {
  return elementwise_unary(a, [](double x) { return std::tanh(x); },
                           [](double, double y) { return 1.0 - y * y; });
}

Tensor sigmoid(const Tensor& a) {
  return elementwise_unary(a, [](double x) { return 1.0 / (1.0 + std::exp(-x)); },
                           [](double, double y) { return y * (1.0 - y); });
}

Tensor square(const Tensor& a) {
  return elementwise_unary(a, [](double x) { return x * x; },
                           [](double x, double) { return 2.0 * x; });
}

Tensor sqrt_t(const Tensor& a) {
  return elementwise_unary(a, [](double x) { return std::sqrt(x); },
                           [](double, double y) { return 0.5 / y; });
}

Tensor clamp_min(const Tensor& a, double lo) {
  return elementwise_unary(a, [lo](double x) { return x < lo ? lo : x; },
                           [lo](double x, double) { return x > lo ? 1.0 : 0.0; });
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_size(shape) != a.size()) throw ShapeMismatch("reshape: size mismatch");
  Tape* t = a.tape();
  Tensor out = t->make(std::move(shape), wants_grad(a));
  std::memcpy(out.node()->val.data(), a.data(), sizeof(double) * static_cast<size_t>(a.size()));
  if (out.node()->needs_grad) {
    Node* na = a.node();
    Node* no = out.node();
    const int64_t n = a.size();
    out.node()->back = [na, no, n]() { axpy(na, no->grad.data(), n); };
  }
  return out;
}

Tensor flatten(const Tensor& a) { return reshape(a, {static_cast<int>(a.size())}); }

Tensor concat1d(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeMismatch("concat1d: no parts");
  Tape* t = parts[0].tape();
  int64_t total = 0;
  bool ng = false;
  for (const auto& p : parts) {
    total += p.size();
    ng = ng || wants_grad(p);
  }
  Tensor out = t->make({static_cast<int>(total)}, ng);
  double* po = out.node()->val.data();
  int64_t off = 0;
  for (const auto& p : parts) {
    std::memcpy(po + off, p.data(), sizeof(double) * static_cast<size_t>(p.size()));
    off += p.size();
  }
  if (ng) {
    std::vector<Node*> srcs;
    for (const auto& p : parts) srcs.push_back(p.node());
    Node* no = out.node();
    out.node()->back = [srcs, no]() {
      int64_t off = 0;
      for (Node* s : srcs) {
        axpy(s, no->grad.data() + off, s->size);
        off += s->size;
      }
    };
  }
  return out;
}

Tensor slice1d(const Tensor& a, int64_t start, int64_t len) {
  if (a.rank() != 1) throw ShapeMismatch("slice1d: rank != 1");
  if (start < 0 || start + len > a.size()) throw ShapeMismatch("slice1d: out of range");
  Tape* t = a.tape();
  Tensor out = t->make({static_cast<int>(len)}, wants_grad(a));
  std::memcpy(out.node()->val.data(), a.data() + start, sizeof(double) * static_cast<size_t>(len));
  if (out.node()->needs_grad) {
    Node* na = a.node();
    Node* no = out.node();
    out.node()->back = [na, no, start, len]() {
      double* g = na->grad_data();
      for (int64_t i = 0; i < len; ++i) g[start + i] += no->grad[static_cast<size_t>(i)];
    };
  }
  return out;
}

Tensor stack_rows(const std::vector<Tensor>& rows) {
  if (rows.empty()) throw ShapeMismatch("stack_rows: no rows");
  const int64_t c = rows[0].size();
  bool ng = false;
  for (const auto& r : rows) {
    if (r.size() != c) throw ShapeMismatch("stack_rows: ragged rows");
    ng = ng || wants_grad(r);
  }
  Tape* t = rows[0].tape();
  Tensor out = t->make({static_cast<int>(rows.size()), static_cast<int>(c)}, ng);
  double* po = out.node()->val.data();
  for (size_t i = 0; i < rows.size(); ++i)
    std::memcpy(po + static_cast<int64_t>(i) * c, rows[i].data(),
                sizeof(double) * static_cast<size_t>(c));
  if (ng) {
    std::vector<Node*> srcs;
    for (const auto& r : rows) srcs.push_back(r.node());
    Node* no = out.node();
    out.node()->back = [srcs, no, c]() {
      for (size_t i = 0; i < srcs.size(); ++i)
        axpy(srcs[i], no->grad.data() + static_cast<int64_t>(i) * c, c);
    };
  }
  return out;
}

Tensor slice_rows(const Tensor& a, int start, int len) {
  if (a.rank() != 2) throw ShapeMismatch("slice_rows: rank != 2");
  const int c = a.dim(1);
  if (start < 0 || start + len > a.dim(0)) throw ShapeMismatch("slice_rows: out of range");
  Tape* t = a.tape();
  Tensor out = t->make({len, c}, wants_grad(a));
  std::memcpy(out.node()->val.data(), a.data() + static_cast<int64_t>(start) * c,
              sizeof(double) * static_cast<size_t>(len) * c);
  if (out.node()->needs_grad) {
    Node* na = a.node();
    Node* no = out.node();
    out.node()->back = [na, no, start, len, c]() {
      double* g = na->grad_data();
      for (int64_t i = 0; i < static_cast<int64_t>(len) * c; ++i)
        g[static_cast<int64_t>(start) * c + i] += no->grad[static_cast<size_t>(i)];
    };
  }
  return out;
}

Tensor slice_cols(const Tensor& a, int start, int len) {
  if (a.rank() != 2) throw ShapeMismatch("slice_cols: rank != 2");
  const int r = a.dim(0), c = a.dim(1);
  if (start < 0 || start + len > c) throw ShapeMismatch("slice_cols: out of range");
  Tape* t = a.tape();
  Tensor out = t->make({r, len}, wants_grad(a));
  const double* pa = a.data();
  double* po = out.node()->val.data();
  for (int i = 0; i < r; ++i)
    std::memcpy(po + static_cast<int64_t>(i) * len, pa + static_cast<int64_t>(i) * c + start,
                sizeof(double) * static_cast<size_t>(len));
  if (out.node()->needs_grad) {
    Node* na = a.node();
    Node* no = out.node();
    out.node()->back = [na, no, start, len, r, c]() {
      double* g = na->grad_data();
      for (int i = 0; i < r; ++i)
        for (int j = 0; j < len; ++j)
          g[static_cast<int64_t>(i) * c + start + j] +=
              no->grad[static_cast<size_t>(i) * len + j];
    };
  }
  return out;
}

Tensor hstack(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeMismatch("hstack: no parts");
  const int r = parts[0].dim(0);
  int total = 0;
  bool ng = false;
  for (const auto& p : parts) {
    if (p.rank() != 2 || p.dim(0) != r) throw ShapeMismatch("hstack: row mismatch");
    total += p.dim(1);
    ng = ng || wants_grad(p);
  }
  Tape* t = parts[0].tape();
  Tensor out = t->make({r, total}, ng);
  double* po = out.node()->val.data();
  int off = 0;
  for (const auto& p : parts) {
    const int c = p.dim(1);
    for (int i = 0; i < r; ++i)
      std::memcpy(po + static_cast<int64_t>(i) * total + off,
                  p.data() + static_cast<int64_t>(i) * c, sizeof(double) * static_cast<size_t>(c));
    off += c;
  }
  if (ng) {
    std::vector<Node*> srcs;
    std::vector<int> widths;
    for (const auto& p : parts) {
      srcs.push_back(p.node());
      widths.push_back(p.dim(1));
    }
    Node* no = out.node();
    out.node()->back = [srcs, widths, no, r, total]() {
      int off = 0;
      for (size_t k = 0; k < srcs.size(); ++k) {
        const int c = widths[k];
        if (srcs[k]->needs_grad) {
          double* g = srcs[k]->grad_data();
          for (int i = 0; i < r; ++i)
            for (int j = 0; j < c; ++j)
              g[static_cast<int64_t>(i) * c + j] +=
                  no->grad[static_cast<size_t>(i) * total + off + j];
        }
        off += c;
      }
    };
  }
  return out;
}

Tensor gather_rows(const Tensor& a, const std::vector<int>& idx) {
  if (a.rank() != 2) throw ShapeMismatch("gather_rows: rank != 2");
  const int c = a.dim(1);
  Tape* t = a.tape();
  Tensor out = t->make({static_cast<int>(idx.size()), c}, wants_grad(a));
  const double* pa = a.data();
  double* po = out.node()->val.data();
  for (size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] < 0 || idx[i] >= a.dim(0)) throw ShapeMismatch("gather_rows: index out of range");
    std::memcpy(po + static_cast<int64_t>(i) * c, pa + static_cast<int64_t>(idx[i]) * c,
                sizeof(double) * static_cast<size_t>(c));
  }
  if (out.node()->needs_grad) {
    Node* na = a.node();
    Node* no = out.node();
    auto indices = idx;
    out.node()->back = [na, no, indices, c]() {
      double* g = na->grad_data();
      for (size_t i = 0; i < indices.size(); ++i)
        for (int j = 0; j < c; ++j)
          g[static_cast<int64_t>(indices[i]) * c + j] +=
              no->grad[static_cast<size_t>(i) * c + j];
    };
  }
  return out;
}

Tensor stopgrad(const Tensor& a) {
  Tape* t = a.tape();
  Tensor out = t->make(a.shape(), /*needs_grad=*/false);
  std::memcpy(out.node()->val.data(), a.data(), sizeof(double) * static_cast<size_t>(a.size()));
  return out;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
    throw ShapeMismatch("matmul: incompatible shapes");
  const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tape* t = a.tape();
  Tensor out = t->make({m, n}, wants_grad(a) || wants_grad(b));
  MapM(out.node()->val.data(), m, n).noalias() =
      MapCM(a.data(), m, k) * MapCM(b.data(), k, n);
  if (out.node()->needs_grad) {
    Node* na = a.node();
    Node* nb = b.node();
    Node* no = out.node();
    out.node()->back = [na, nb, no, m, k, n]() {
      MapCM go(no->grad.data(), m, n);
      if (na->needs_grad)
        MapM(na->grad_data(), m, k).noalias() += go * MapCM(nb->data(), k, n).transpose();
      if (nb->needs_grad)
        MapM(nb->grad_data(), k, n).noalias() += MapCM(na->data(), m, k).transpose() * go;
    };
  }
  return out;
}

Tensor matvec(const Tensor& a, const Tensor& x) {
  if (a.rank() != 2 || x.rank() != 1 || a.dim(1) != x.dim(0))
    throw ShapeMismatch("matvec: incompatible shapes");
  const int m = a.dim(0), k = a.dim(1);
  Tape* t = a.tape();
  Tensor out = t->make({m}, wants_grad(a) || wants_grad(x));
  MapV(out.node()->val.data(), m).noalias() = MapCM(a.data(), m, k) * MapCV(x.data(), k);
  if (out.node()->needs_grad) {
    Node* na = a.node();
    Node* nx = x.node();
    Node* no = out.node();
    out.node()->back = [na, nx, no, m, k]() {
      MapCV g(no->grad.data(), m);
      if (na->needs_grad)
        MapM(na->grad_data(), m, k).noalias() += g * MapCV(nx->data(), k).transpose();
      if (nx->needs_grad)
        MapV(nx->grad_data(), k).noalias() += MapCM(na->data(), m, k).transpose() * g;
    };
  }
  return out;
}

Tensor batched_matvec(const Tensor& w, const Tensor& x) {
  if (w.rank() != 3 || x.rank() != 2 || w.dim(0) != x.dim(0) || w.dim(2) != x.dim(1))
    throw ShapeMismatch("batched_matvec: incompatible shapes");
  const int N = w.dim(0), m = w.dim(1), k = w.dim(2);
  Tape* t = w.tape();
  Tensor out = t->make({N, m}, wants_grad(w) || wants_grad(x));
  for (int i = 0; i < N; ++i)
    MapV(out.node()->val.data() + static_cast<int64_t>(i) * m, m).noalias() =
        MapCM(w.data() + static_cast<int64_t>(i) * m * k, m, k) *
        MapCV(x.data() + static_cast<int64_t>(i) * k, k);
  if (out.node()->needs_grad) {
    Node* nw = w.node();
    Node* nx = x.node();
    Node* no = out.node();
    out.node()->back = [nw, nx, no, N, m, k]() {
      for (int i = 0; i < N; ++i) {
        MapCV g(no->grad.data() + static_cast<int64_t>(i) * m, m);
        if (nw->needs_grad)
          MapM(nw->grad_data() + static_cast<int64_t>(i) * m * k, m, k).noalias() +=
              g * MapCV(nx->data() + static_cast<int64_t>(i) * k, k).transpose();
        if (nx->needs_grad)
          MapV(nx->grad_data() + static_cast<int64_t>(i) * k, k).noalias() +=
              MapCM(nw->data() + static_cast<int64_t>(i) * m * k, m, k).transpose() * g;
      }
    };
  }
  return out;
}

Tensor add_rowvec(const Tensor& a, const Tensor& v) {
  if (a.rank() != 2 || v.rank() != 1 || a.dim(1) != v.dim(0))
    throw ShapeMismatch("add_rowvec: incompatible shapes");
  const int r = a.dim(0), c = a.dim(1);
  Tape* t = a.tape();
  Tensor out = t->make({r, c}, wants_grad(a) || wants_grad(v));
  const double* pa = a.data();
  const double* pv = v.data();
  double* po = out.node()->val.data();
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) po[static_cast<int64_t>(i) * c + j] = pa[static_cast<int64_t>(i) * c + j] + pv[j];
  if (out.node()->needs_grad) {
    Node* na = a.node();
    Node* nv = v.node();
    Node* no = out.node();
    out.node()->back = [na, nv, no, r, c]() {
      if (na->needs_grad) axpy(na, no->grad.data(), static_cast<int64_t>(r) * c);
      if (nv->needs_grad) {
        double* g = nv->grad_data();
        for (int i = 0; i < r; ++i)
          for (int j = 0; j < c; ++j) g[j] += no->grad[static_cast<size_t>(i) * c + j];
      }
    };
  }
  return out;
}

Tensor sum_all(const Tensor& a) {
  Tape* t = a.tape();
  Tensor out = t->make({1}, wants_grad(a));
  double s = 0.0;
  const double* pa = a.data();
  for (int64_t i = 0; i < a.size(); ++i) s += pa[i];
  out.node()->val[0] = s;
  if (out.node()->needs_grad) {
    Node* na = a.node();
    Node* no = out.node();
    const int64_t n = a.size();
    out.node()->back = [na, no, n]() {
      const double g = no->grad[0];
      double* ga = na->grad_data();
      for (int64_t i = 0; i < n; ++i) ga[i] += g;
    };
  }
  return out;
}

Tensor mean_all(const Tensor& a) {
  return mul_scalar(sum_all(a), 1.0 / static_cast<double>(a.size()));
}

Tensor normalize_rows3(const Tensor& a, double min_norm) {
  if (a.rank() != 2 || a.dim(1) != 3) throw ShapeMismatch("normalize_rows3: expects [N,3]");
  const int N = a.dim(0);
  Tape* t = a.tape();
  Tensor out = t->make({N, 3}, wants_grad(a));
  const double* pa = a.data();
  double* po = out.node()->val.data();
  std::vector<double> norms(static_cast<size_t>(N));
  for (int i = 0; i < N; ++i) {
    const double* x = pa + 3 * i;
    const double r = std::sqrt(x[0] * x[0] + x[1] * x[1] + x[2] * x[2]);
    if (r < min_norm) throw DegenerateRotation("normalize_rows3: near-zero row norm");
    norms[static_cast<size_t>(i)] = r;
    for (int j = 0; j < 3; ++j) po[3 * i + j] = x[j] / r;
  }
  if (out.node()->needs_grad) {
    Node* na = a.node();
    Node* no = out.node();
    out.node()->back = [na, no, N, norms]() {
      double* ga = na->grad_data();
      for (int i = 0; i < N; ++i) {
        const double* y = no->val.data() + 3 * i;
        const double* g = no->grad.data() + 3 * i;
        const double ydg = y[0] * g[0] + y[1] * g[1] + y[2] * g[2];
        const double r = norms[static_cast<size_t>(i)];
        for (int j = 0; j < 3; ++j) ga[3 * i + j] += (g[j] - y[j] * ydg) / r;
      }
    };
  }
  return out;
}

Tensor cross_rows3(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "cross_rows3");
  if (a.rank() != 2 || a.dim(1) != 3) throw ShapeMismatch("cross_rows3: expects [N,3]");
  const int N = a.dim(0);
  Tape* t = a.tape();
  Tensor out = t->make({N, 3}, wants_grad(a) || wants_grad(b));
  const double* pa = a.data();
  const double* pb = b.data();
  double* po = out.node()->val.data();
  for (int i = 0; i < N; ++i) {
    const double* x = pa + 3 * i;
    const double* y = pb + 3 * i;
    po[3 * i + 0] = x[1] * y[2] - x[2] * y[1];
    po[3 * i + 1] = x[2] * y[0] - x[0] * y[2];
    po[3 * i + 2] = x[0] * y[1] - x[1] * y[0];
  }
  if (out.node()->needs_grad) {
    Node* na = a.node();
    Node* nb = b.node();
    Node* no = out.node();
    out.node()->back = [na, nb, no, N]() {
      for (int i = 0; i < N; ++i) {
        const double* g = no->grad.data() + 3 * i;
        const double* x = na->data() + 3 * i;
        const double* y = nb->data() + 3 * i;
        if (na->needs_grad) {
          double* ga = na->grad_data() + 3 * i;
          // d/da (a x b) = b x g
          ga[0] += y[1] * g[2] - y[2] * g[1];
          ga[1] += y[2] * g[0] - y[0] * g[2];
          ga[2] += y[0] * g[1] - y[1] * g[0];
        }
        if (nb->needs_grad) {
          double* gb = nb->grad_data() + 3 * i;
          // d/db (a x b) = g x a
          gb[0] += g[1] * x[2] - g[2] * x[1];
          gb[1] += g[2] * x[0] - g[0] * x[2];
          gb[2] += g[0] * x[1] - g[1] * x[0];
        }
      }
    };
  }
  return out;
}

Tensor rowdot3(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "rowdot3");
  if (a.rank() != 2 || a.dim(1) != 3) throw ShapeMismatch("rowdot3: expects [N,3]");
  const int N = a.dim(0);
  Tape* t = a.tape();
  Tensor out = t->make({N}, wants_grad(a) || wants_grad(b));
  const double* pa = a.data();
  const double* pb = b.data();
  double* po = out.node()->val.data();
  for (int i = 0; i < N; ++i)
    po[i] = pa[3 * i] * pb[3 * i] + pa[3 * i + 1] * pb[3 * i + 1] + pa[3 * i + 2] * pb[3 * i + 2];
  if (out.node()->needs_grad) {
    Node* na = a.node();
    Node* nb = b.node();
    Node* no = out.node();
    out.node()->back = [na, nb, no, N]() {
      for (int i = 0; i < N; ++i) {
        const double g = no->grad[static_cast<size_t>(i)];
        if (na->needs_grad) {
          double* ga = na->grad_data() + 3 * i;
          const double* y = nb->data() + 3 * i;
          for (int j = 0; j < 3; ++j) ga[j] += g * y[j];
        }
        if (nb->needs_grad) {
          double* gb = nb->grad_data() + 3 * i;
          const double* x = na->data() + 3 * i;
          for (int j = 0; j < 3; ++j) gb[j] += g * x[j];
        }
      }
    };
  }
  return out;
}

Tensor scale_rows(const Tensor& a, const Tensor& s) {
  if (a.rank() != 2 || s.rank() != 1 || s.dim(0) != a.dim(0))
    throw ShapeMismatch("scale_rows: incompatible shapes");
  const int N = a.dim(0), c = a.dim(1);
  Tape* t = a.tape();
  Tensor out = t->make({N, c}, wants_grad(a) || wants_grad(s));
  const double* pa = a.data();
  const double* ps = s.data();
  double* po = out.node()->val.data();
  for (int i = 0; i < N; ++i)
    for (int j = 0; j < c; ++j) po[static_cast<int64_t>(i) * c + j] = pa[static_cast<int64_t>(i) * c + j] * ps[i];
  if (out.node()->needs_grad) {
    Node* na = a.node();
    Node* ns = s.node();
    Node* no = out.node();
    out.node()->back = [na, ns, no, N, c]() {
      for (int i = 0; i < N; ++i) {
        const double sv = ns->data()[i];
        const double* g = no->grad.data() + static_cast<int64_t>(i) * c;
        if (na->needs_grad) {
          double* ga = na->grad_data() + static_cast<int64_t>(i) * c;
          for (int j = 0; j < c; ++j) ga[j] += g[j] * sv;
        }
        if (ns->needs_grad) {
          const double* x = na->data() + static_cast<int64_t>(i) * c;
          double acc = 0.0;
          for (int j = 0; j < c; ++j) acc += g[j] * x[j];
          ns->grad_data()[i] += acc;
        }
      }
    };
  }
  return out;
}

Tensor stack_cols3(const Tensor& a, const Tensor& b, const Tensor& c) {
  if (a.size() != 3 || b.size() != 3 || c.size() != 3)
    throw ShapeMismatch("stack_cols3: expects three 3-vectors");
  Tape* t = a.tape();
  Tensor out = t->make({3, 3}, wants_grad(a) || wants_grad(b) || wants_grad(c));
  double* po = out.node()->val.data();
  for (int i = 0; i < 3; ++i) {
    po[3 * i + 0] = a.data()[i];
    po[3 * i + 1] = b.data()[i];
    po[3 * i + 2] = c.data()[i];
  }
  if (out.node()->needs_grad) {
    Node* na = a.node();
    Node* nb = b.node();
    Node* nc = c.node();
    Node* no = out.node();
    out.node()->back = [na, nb, nc, no]() {
      for (int i = 0; i < 3; ++i) {
        if (na->needs_grad) na->grad_data()[i] += no->grad[static_cast<size_t>(3 * i + 0)];
        if (nb->needs_grad) nb->grad_data()[i] += no->grad[static_cast<size_t>(3 * i + 1)];
        if (nc->needs_grad) nc->grad_data()[i] += no->grad[static_cast<size_t>(3 * i + 2)];
      }
    };
  }
  return out;
}

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, int stride, int pad) {
  if (x.rank() != 3 || w.rank() != 4) throw ShapeMismatch("conv2d: bad ranks");
  const int C = x.dim(0), H = x.dim(1), W = x.dim(2);
  const int O = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  if (w.dim(1) != C) throw ShapeMismatch("conv2d: channel mismatch");
  if (b.valid() && (b.rank() != 1 || b.dim(0) != O)) throw ShapeMismatch("conv2d: bias shape");
  const int Ho = (H + 2 * pad - kh) / stride + 1;
  const int Wo = (W + 2 * pad - kw) / stride + 1;
  const int ckk = C * kh * kw;
  const int hw = Ho * Wo;

  auto cols = std::make_shared<std::vector<double>>(static_cast<size_t>(ckk) * hw);
  {
    double* pc = cols->data();
    const double* px = x.data();
    for (int c = 0; c < C; ++c)
      for (int ki = 0; ki < kh; ++ki)
        for (int kj = 0; kj < kw; ++kj) {
          double* row = pc + (static_cast<int64_t>((c * kh + ki) * kw + kj)) * hw;
          for (int oy = 0; oy < Ho; ++oy) {
            const int iy = oy * stride - pad + ki;
            if (iy < 0 || iy >= H) {
              std::fill(row + static_cast<int64_t>(oy) * Wo, row + static_cast<int64_t>(oy + 1) * Wo, 0.0);
              continue;
            }
            for (int ox = 0; ox < Wo; ++ox) {
              const int ix = ox * stride - pad + kj;
              row[static_cast<int64_t>(oy) * Wo + ox] =
                  (ix < 0 || ix >= W) ? 0.0 : px[(static_cast<int64_t>(c) * H + iy) * W + ix];
            }
          }
        }
  }

  Tape* t = x.tape();
  Tensor out = t->make({O, Ho, Wo}, wants_grad(x) || wants_grad(w) || (b.valid() && wants_grad(b)));
  MapM(out.node()->val.data(), O, hw).noalias() =
      MapCM(w.data(), O, ckk) * MapCM(cols->data(), ckk, hw);
  if (b.valid()) {
    double* po = out.node()->val.data();
    const double* pb = b.data();
    for (int o = 0; o < O; ++o)
      for (int i = 0; i < hw; ++i) po[static_cast<int64_t>(o) * hw + i] += pb[o];
  }

  if (out.node()->needs_grad) {
    Node* nx = x.node();
    Node* nw = w.node();
    Node* nb = b.valid() ? b.node() : nullptr;
    Node* no = out.node();
    out.node()->back = [nx, nw, nb, no, cols, C, H, W, O, kh, kw, Ho, Wo, stride, pad, ckk,
                        hw]() {
      MapCM g(no->grad.data(), O, hw);
      if (nw->needs_grad)
        MapM(nw->grad_data(), O, ckk).noalias() += g * MapCM(cols->data(), ckk, hw).transpose();
      if (nb && nb->needs_grad) {
        double* gb = nb->grad_data();
        for (int o = 0; o < O; ++o) gb[o] += g.row(o).sum();
      }
      if (nx->needs_grad) {
        MatRM dcols = MapCM(nw->data(), O, ckk).transpose() * g;  // [ckk, hw]
        double* gx = nx->grad_data();
        const double* pdc = dcols.data();
        for (int c = 0; c < C; ++c)
          for (int ki = 0; ki < kh; ++ki)
            for (int kj = 0; kj < kw; ++kj) {
              const double* row = pdc + (static_cast<int64_t>((c * kh + ki) * kw + kj)) * hw;
              for (int oy = 0; oy < Ho; ++oy) {
                const int iy = oy * stride - pad + ki;
                if (iy < 0 || iy >= H) continue;
                for (int ox = 0; ox < Wo; ++ox) {
                  const int ix = ox * stride - pad + kj;
                  if (ix < 0 || ix >= W) continue;
                  gx[(static_cast<int64_t>(c) * H + iy) * W + ix] += row[static_cast<int64_t>(oy) * Wo + ox];
                }
              }
            }
      }
    };
  }
  return out;
}

Tensor instance_norm(const Tensor& x, double eps) {
  if (x.rank() != 3) throw ShapeMismatch("instance_norm: expects [C,H,W]");
  const int C = x.dim(0);
  const int64_t hw = static_cast<int64_t>(x.dim(1)) * x.dim(2);
  Tape* t = x.tape();
  Tensor out = t->make(x.shape(), wants_grad(x));
  auto inv_std = std::make_shared<std::vector<double>>(static_cast<size_t>(C));
  const double* px = x.data();
  double* po = out.node()->val.data();
  for (int c = 0; c < C; ++c) {
    const double* xc = px + c * hw;
    double mean = 0.0;
    for (int64_t i = 0; i < hw; ++i) mean += xc[i];
    mean /= static_cast<double>(hw);
    double var = 0.0;
    for (int64_t i = 0; i < hw; ++i) {
      const double d = xc[i] - mean;
      var += d * d;
    }
    var /= static_cast<double>(hw);
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv_std)[static_cast<size_t>(c)] = is;
    double* oc = po + c * hw;
    for (int64_t i = 0; i < hw; ++i) oc[i] = (xc[i] - mean) * is;
  }
  if (out.node()->needs_grad) {
    Node* nx = x.node();
    Node* no = out.node();
    out.node()->back = [nx, no, inv_std, C, hw]() {
      double* gx = nx->grad_data();
      for (int c = 0; c < C; ++c) {
        const double* y = no->val.data() + c * hw;
        const double* g = no->grad.data() + c * hw;
        double gsum = 0.0, gysum = 0.0;
        for (int64_t i = 0; i < hw; ++i) {
          gsum += g[i];
          gysum += g[i] * y[i];
        }
        const double is = (*inv_std)[static_cast<size_t>(c)];
        const double n = static_cast<double>(hw);
        for (int64_t i = 0; i < hw; ++i)
          gx[c * hw + i] += is * (g[i] - gsum / n - y[i] * gysum / n);
      }
    };
  }
  return out;
}

Tensor scale_channels(const Tensor& x, const Tensor& s) {
  if (x.rank() != 3 || s.rank() != 1 || s.dim(0) != x.dim(0))
    throw ShapeMismatch("scale_channels: incompatible shapes");
  const int C = x.dim(0);
  const int64_t hw = static_cast<int64_t>(x.dim(1)) * x.dim(2);
  Tape* t = x.tape();
  Tensor out = t->make(x.shape(), wants_grad(x) || wants_grad(s));
  const double* px = x.data();
  const double* ps = s.data();
  double* po = out.node()->val.data();
  for (int c = 0; c < C; ++c)
    for (int64_t i = 0; i < hw; ++i) po[c * hw + i] = px[c * hw + i] * ps[c];
  if (out.node()->needs_grad) {
    Node* nx = x.node();
    Node* ns = s.node();
    Node* no = out.node();
    out.node()->back = [nx, ns, no, C, hw]() {
      for (int c = 0; c < C; ++c) {
        const double* g = no->grad.data() + c * hw;
        if (nx->needs_grad) {
          double* gx = nx->grad_data() + c * hw;
          const double sv = ns->data()[c];
          for (int64_t i = 0; i < hw; ++i) gx[i] += g[i] * sv;
        }
        if (ns->needs_grad) {
          const double* xv = nx->data() + c * hw;
          double acc = 0.0;
          for (int64_t i = 0; i < hw; ++i) acc += g[i] * xv[i];
          ns->grad_data()[c] += acc;
        }
      }
    };
  }
  return out;
}

Tensor shift_channels(const Tensor& x, const Tensor& b) {
  if (x.rank() != 3 || b.rank() != 1 || b.dim(0) != x.dim(0))
    throw ShapeMismatch("shift_channels: incompatible shapes");
  const int C = x.dim(0);
  const int64_t hw = static_cast<int64_t>(x.dim(1)) * x.dim(2);
  Tape* t = x.tape();
  Tensor out = t->make(x.shape(), wants_grad(x) || wants_grad(b));
  const double* px = x.data();
  const double* pb = b.data();
  double* po = out.node()->val.data();
  for (int c = 0; c < C; ++c)
    for (int64_t i = 0; i < hw; ++i) po[c * hw + i] = px[c * hw + i] + pb[c];
  if (out.node()->needs_grad) {
    Node* nx = x.node();
    Node* nb = b.node();
    Node* no = out.node();
    out.node()->back = [nx, nb, no, C, hw]() {
      if (nx->needs_grad) axpy(nx, no->grad.data(), C * hw);
      if (nb->needs_grad) {
        double* gb = nb->grad_data();
        for (int c = 0; c < C; ++c) {
          const double* g = no->grad.data() + c * hw;
          double acc = 0.0;
          for (int64_t i = 0; i < hw; ++i) acc += g[i];
          gb[c] += acc;
        }
      }
    };
  }
  return out;
}

Tensor global_avg_pool(const Tensor& x) {
  if (x.rank() != 3) throw ShapeMismatch("global_avg_pool: expects [C,H,W]");
  const int C = x.dim(0);
  const int64_t hw = static_cast<int64_t>(x.dim(1)) * x.dim(2);
  Tape* t = x.tape();
  Tensor out = t->make({C}, wants_grad(x));
  const double* px = x.data();
  double* po = out.node()->val.data();
  for (int c = 0; c < C; ++c) {
    double acc = 0.0;
    for (int64_t i = 0; i < hw; ++i) acc += px[c * hw + i];
    po[c] = acc / static_cast<double>(hw);
  }
  if (out.node()->needs_grad) {
    Node* nx = x.node();
    Node* no = out.node();
    out.node()->back = [nx, no, C, hw]() {
      double* gx = nx->grad_data();
      for (int c = 0; c < C; ++c) {
        const double g = no->grad[static_cast<size_t>(c)] / static_cast<double>(hw);
        for (int64_t i = 0; i < hw; ++i) gx[c * hw + i] += g;
      }
    };
  }
  return out;
}

namespace {
// One bilinear fetch with zero padding; also returns spatial derivatives.
inline double bilerp(const double* map, int H, int W, double qx, double qy, double* dx,
                     double* dy) {
  const double fx0 = std::floor(qx);
  const double fy0 = std::floor(qy);
  const int x0 = static_cast<int>(fx0);
  const int y0 = static_cast<int>(fy0);
  const double ax = qx - fx0;
  const double ay = qy - fy0;
  auto at = [&](int yy, int xx) -> double {
    return (yy < 0 || yy >= H || xx < 0 || xx >= W) ? 0.0
                                                     : map[static_cast<int64_t>(yy) * W + xx];
  };
  const double v00 = at(y0, x0), v01 = at(y0, x0 + 1);
  const double v10 = at(y0 + 1, x0), v11 = at(y0 + 1, x0 + 1);
  if (dx) *dx = (1.0 - ay) * (v01 - v00) + ay * (v11 - v10);
  if (dy) *dy = (1.0 - ax) * (v10 - v00) + ax * (v11 - v01);
  return (1.0 - ay) * ((1.0 - ax) * v00 + ax * v01) + ay * ((1.0 - ax) * v10 + ax * v11);
}
}  // namespace

Tensor bilinear_window(const Tensor& f, const Tensor& p, int radius) {
  if (f.rank() != 3 || p.rank() != 2 || p.dim(1) != 2 || p.dim(0) != f.dim(0))
    throw ShapeMismatch("bilinear_window: expects F[K,H,W], p[K,2]");
  if (radius < 0) throw ShapeMismatch("bilinear_window: radius < 0");
  const int K = f.dim(0), H = f.dim(1), W = f.dim(2);
  const int S = 2 * radius + 1;
  const int S2 = S * S;
  Tape* t = f.tape();
  Tensor out = t->make({K, S2}, wants_grad(f) || wants_grad(p));
  const double* pf = f.data();
  const double* pp = p.data();
  double* po = out.node()->val.data();
  for (int k = 0; k < K; ++k) {
    const double* map = pf + static_cast<int64_t>(k) * H * W;
    const double cx = pp[2 * k], cy = pp[2 * k + 1];
    int s = 0;
    for (int dy = -radius; dy <= radius; ++dy)
      for (int dx = -radius; dx <= radius; ++dx, ++s)
        po[static_cast<int64_t>(k) * S2 + s] = bilerp(map, H, W, cx + dx, cy + dy, nullptr, nullptr);
  }
  if (out.node()->needs_grad) {
    Node* nf = f.node();
    Node* np = p.node();
    Node* no = out.node();
    out.node()->back = [nf, np, no, K, H, W, radius, S2]() {
      for (int k = 0; k < K; ++k) {
        const double* map = nf->data() + static_cast<int64_t>(k) * H * W;
        const double cx = np->data()[2 * k], cy = np->data()[2 * k + 1];
        double* gmap = nf->needs_grad ? nf->grad_data() + static_cast<int64_t>(k) * H * W : nullptr;
        double gx_acc = 0.0, gy_acc = 0.0;
        int s = 0;
        for (int dy = -radius; dy <= radius; ++dy)
          for (int dx = -radius; dx <= radius; ++dx, ++s) {
            const double g = no->grad[static_cast<size_t>(k) * S2 + s];
            if (g == 0.0) continue;
            const double qx = cx + dx, qy = cy + dy;
            double ddx, ddy;
            bilerp(map, H, W, qx, qy, &ddx, &ddy);
            gx_acc += g * ddx;
            gy_acc += g * ddy;
            if (gmap) {
              const double fx0 = std::floor(qx);
              const double fy0 = std::floor(qy);
              const int x0 = static_cast<int>(fx0);
              const int y0 = static_cast<int>(fy0);
              const double ax = qx - fx0, ay = qy - fy0;
              auto scatter = [&](int yy, int xx, double w) {
                if (yy >= 0 && yy < H && xx >= 0 && xx < W)
                  gmap[static_cast<int64_t>(yy) * W + xx] += g * w;
              };
              scatter(y0, x0, (1.0 - ax) * (1.0 - ay));
              scatter(y0, x0 + 1, ax * (1.0 - ay));
              scatter(y0 + 1, x0, (1.0 - ax) * ay);
              scatter(y0 + 1, x0 + 1, ax * ay);
            }
          }
        if (np->needs_grad) {
          np->grad_data()[2 * k] += gx_acc;
          np->grad_data()[2 * k + 1] += gy_acc;
        }
      }
    };
  }
  return out;
}

Tensor affine_apply(const Tensor& m, const Tensor& rest) {
  if (m.rank() != 2 || m.dim(1) != 12 || rest.rank() != 2 || rest.dim(1) != 3 ||
      m.dim(0) != rest.dim(0))
    throw ShapeMismatch("affine_apply: expects M[V,12], rest[V,3]");
  const int V = m.dim(0);
  Tape* t = m.tape();
  Tensor out = t->make({V, 3}, wants_grad(m) || wants_grad(rest));
  const double* pm = m.data();
  const double* pr = rest.data();
  double* po = out.node()->val.data();
  for (int v = 0; v < V; ++v) {
    const double* a = pm + 12 * v;
    const double* r = pr + 3 * v;
    for (int i = 0; i < 3; ++i)
      po[3 * v + i] = a[3 * i] * r[0] + a[3 * i + 1] * r[1] + a[3 * i + 2] * r[2] + a[9 + i];
  }
  if (out.node()->needs_grad) {
    Node* nm = m.node();
    Node* nr = rest.node();
    Node* no = out.node();
    out.node()->back = [nm, nr, no, V]() {
      for (int v = 0; v < V; ++v) {
        const double* g = no->grad.data() + 3 * v;
        const double* a = nm->data() + 12 * v;
        const double* r = nr->data() + 3 * v;
        if (nm->needs_grad) {
          double* gm = nm->grad_data() + 12 * v;
          for (int i = 0; i < 3; ++i) {
            for (int j = 0; j < 3; ++j) gm[3 * i + j] += g[i] * r[j];
            gm[9 + i] += g[i];
          }
        }
        if (nr->needs_grad) {
          double* gr = nr->grad_data() + 3 * v;
          for (int j = 0; j < 3; ++j)
            gr[j] += g[0] * a[j] + g[1] * a[3 + j] + g[2] * a[6 + j];
        }
      }
    };
  }
  return out;
}

}  // namespace refit::ad
