#include "rectflow/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <utility>

namespace rectflow {

namespace {

thread_local bool g_grad_enabled = true;

void check_finite(const char* op, const std::vector<double>& v) {
  for (double x : v) {
    if (!std::isfinite(x)) {
      throw NumericFault(std::string(op) + " produced a non-finite value");
    }
  }
}

bool broadcast_shapes(const Shape& a, const Shape& b, Shape& out) {
  const std::size_t ra = a.size(), rb = b.size();
  const std::size_t r = std::max(ra, rb);
  out.assign(r, 0);
  for (std::size_t i = 0; i < r; ++i) {
    const std::size_t da = i < r - ra ? 1 : a[i - (r - ra)];
    const std::size_t db = i < r - rb ? 1 : b[i - (r - rb)];
    if (da == db) {
      out[i] = da;
    } else if (da == 1) {
      out[i] = db;
    } else if (db == 1) {
      out[i] = da;
    } else {
      return false;
    }
  }
  return true;
}

std::vector<std::size_t> row_major_strides(const Shape& shape) {
  std::vector<std::size_t> st(shape.size(), 1);
  for (std::size_t i = shape.size(); i-- > 1;) st[i - 1] = st[i] * shape[i];
  return st;
}

// Strides of `shape` expressed in the coordinate system of `out`
// (right-aligned); broadcast dimensions get stride 0.
std::vector<std::size_t> broadcast_strides(const Shape& shape,
                                           const Shape& out) {
  const std::size_t r = out.size(), rs = shape.size();
  std::vector<std::size_t> st(r, 0);
  const auto own = row_major_strides(shape);
  for (std::size_t i = 0; i < rs; ++i) {
    const std::size_t od = r - rs + i;
    st[od] = (shape[i] == 1 && out[od] != 1) ? 0 : own[i];
  }
  return st;
}

template <class F>
void for_each_broadcast(const Shape& out, const std::vector<std::size_t>& sa,
                        const std::vector<std::size_t>& sb, F&& f) {
  const std::size_t r = out.size();
  const std::size_t total = numel(out);
  if (r == 0) {
    if (total) f(std::size_t{0}, std::size_t{0}, std::size_t{0});
    return;
  }
  std::vector<std::size_t> idx(r, 0);
  std::size_t ia = 0, ib = 0;
  for (std::size_t i = 0; i < total; ++i) {
    f(i, ia, ib);
    for (std::size_t d = r; d-- > 0;) {
      ++idx[d];
      ia += sa[d];
      ib += sb[d];
      if (idx[d] < out[d]) break;
      idx[d] = 0;
      ia -= sa[d] * out[d];
      ib -= sb[d] * out[d];
    }
  }
}

// C += A[m x k] * B[k x n]
void mm_acc(const double* A, const double* B, double* C, std::size_t m,
            std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* Ai = A + i * k;
    double* Ci = C + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double a = Ai[p];
      const double* Bp = B + p * n;
      for (std::size_t j = 0; j < n; ++j) Ci[j] += a * Bp[j];
    }
  }
}

// C[m x k] += A[m x n] * B[k x n]^T
void mm_abt_acc(const double* A, const double* B, double* C, std::size_t m,
                std::size_t n, std::size_t k) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* Ai = A + i * n;
    double* Ci = C + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double* Bp = B + p * n;
      double acc = 0.0;
      for (std::size_t j = 0; j < n; ++j) acc += Ai[j] * Bp[j];
      Ci[p] += acc;
    }
  }
}

// C[k x n] += A[m x k]^T * B[m x n]
void mm_atb_acc(const double* A, const double* B, double* C, std::size_t m,
                std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* Ai = A + i * k;
    const double* Bi = B + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double a = Ai[p];
      double* Cp = C + p * n;
      for (std::size_t j = 0; j < n; ++j) Cp[j] += a * Bi[j];
    }
  }
}

}  // namespace

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << "]";
  return os.str();
}

class Ops {
 public:
  static std::shared_ptr<detail::Node> make(Shape shape) {
    auto n = std::make_shared<detail::Node>();
    n->values.assign(numel(shape), 0.0);
    n->shape = std::move(shape);
    return n;
  }

  static const std::shared_ptr<detail::Node>& ptr(const Tensor& t) {
    if (!t.node_) throw ContractError("operation on an undefined tensor");
    return t.node_;
  }

  static Tensor wrap(std::shared_ptr<detail::Node> n) {
    return Tensor(std::move(n));
  }

  static Tensor finish(std::shared_ptr<detail::Node> n, bool req,
                       std::function<void()> bw) {
    n->requires_grad = req && g_grad_enabled;
    if (n->requires_grad) {
      n->backward = std::move(bw);
      Tape::current().record(n);
    }
    return Tensor(std::move(n));
  }
};

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  auto n = Ops::make(std::move(shape));
  n->requires_grad = requires_grad;
  return Ops::wrap(std::move(n));
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  auto n = Ops::make(std::move(shape));
  std::fill(n->values.begin(), n->values.end(), value);
  n->requires_grad = requires_grad;
  return Ops::wrap(std::move(n));
}

Tensor Tensor::from_values(Shape shape, std::vector<double> values,
                           bool requires_grad) {
  if (numel(shape) != values.size()) {
    throw ShapeError("from_values: shape " + shape_str(shape) + " wants " +
                     std::to_string(numel(shape)) + " elements, got " +
                     std::to_string(values.size()));
  }
  auto n = std::make_shared<detail::Node>();
  n->shape = std::move(shape);
  n->values = std::move(values);
  n->requires_grad = requires_grad;
  check_finite("from_values", n->values);
  return Ops::wrap(std::move(n));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return from_values(Shape{}, {value}, requires_grad);
}

detail::Node* Tensor::node() const {
  if (!node_) throw ContractError("operation on an undefined tensor");
  return node_.get();
}

const std::vector<double>& Tensor::grad() const { return node()->grad; }

void Tensor::zero_grad() {
  auto* n = node();
  if (n->grad.empty()) return;
  std::fill(n->grad.begin(), n->grad.end(), 0.0);
}

double Tensor::item() const {
  auto* n = node();
  if (n->values.size() != 1) {
    throw ContractError("item: tensor of shape " + shape_str(n->shape) +
                        " is not scalar");
  }
  return n->values[0];
}

Tape& Tape::current() {
  thread_local Tape tape;
  return tape;
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }

namespace {

enum class BinOp { Add, Sub, Mul };

const char* bin_name(BinOp op) {
  switch (op) {
    case BinOp::Add:
      return "add";
    case BinOp::Sub:
      return "sub";
    default:
      return "mul";
  }
}

Tensor binary_op(BinOp op, const Tensor& a, const Tensor& b) {
  const auto& pa = Ops::ptr(a);
  const auto& pb = Ops::ptr(b);
  Shape out_shape;
  if (!broadcast_shapes(pa->shape, pb->shape, out_shape)) {
    throw ShapeError(std::string(bin_name(op)) + ": shapes " +
                     shape_str(pa->shape) + " and " + shape_str(pb->shape) +
                     " do not broadcast");
  }
  auto out = Ops::make(out_shape);
  const auto& av = pa->values;
  const auto& bv = pb->values;
  auto& ov = out->values;

  const bool same = pa->shape == out_shape && pb->shape == out_shape;
  if (same) {
    switch (op) {
      case BinOp::Add:
        for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] + bv[i];
        break;
      case BinOp::Sub:
        for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] - bv[i];
        break;
      case BinOp::Mul:
        for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] * bv[i];
        break;
    }
  } else {
    const auto sa = broadcast_strides(pa->shape, out_shape);
    const auto sb = broadcast_strides(pb->shape, out_shape);
    switch (op) {
      case BinOp::Add:
        for_each_broadcast(out_shape, sa, sb,
                           [&](std::size_t i, std::size_t ia, std::size_t ib) {
                             ov[i] = av[ia] + bv[ib];
                           });
        break;
      case BinOp::Sub:
        for_each_broadcast(out_shape, sa, sb,
                           [&](std::size_t i, std::size_t ia, std::size_t ib) {
                             ov[i] = av[ia] - bv[ib];
                           });
        break;
      case BinOp::Mul:
        for_each_broadcast(out_shape, sa, sb,
                           [&](std::size_t i, std::size_t ia, std::size_t ib) {
                             ov[i] = av[ia] * bv[ib];
                           });
        break;
    }
  }
  check_finite(bin_name(op), ov);

  const bool req = pa->requires_grad || pb->requires_grad;
  auto na = pa, nb = pb;
  detail::Node* no = out.get();  // raw: the tape keeps the node alive
  return Ops::finish(out, req, [op, na, nb, no, out_shape]() {
    const auto& g = no->grad;
    const bool need_a = na->requires_grad;
    const bool need_b = nb->requires_grad;
    if (need_a) na->ensure_grad();
    if (need_b) nb->ensure_grad();
    const bool same = na->shape == out_shape && nb->shape == out_shape;
    if (same) {
      switch (op) {
        case BinOp::Add:
          for (std::size_t i = 0; i < g.size(); ++i) {
            if (need_a) na->grad[i] += g[i];
            if (need_b) nb->grad[i] += g[i];
          }
          break;
        case BinOp::Sub:
          for (std::size_t i = 0; i < g.size(); ++i) {
            if (need_a) na->grad[i] += g[i];
            if (need_b) nb->grad[i] -= g[i];
          }
          break;
        case BinOp::Mul:
          for (std::size_t i = 0; i < g.size(); ++i) {
            if (need_a) na->grad[i] += g[i] * nb->values[i];
            if (need_b) nb->grad[i] += g[i] * na->values[i];
          }
          break;
      }
      return;
    }
    const auto sa = broadcast_strides(na->shape, out_shape);
    const auto sb = broadcast_strides(nb->shape, out_shape);
    for_each_broadcast(
        out_shape, sa, sb, [&](std::size_t i, std::size_t ia, std::size_t ib) {
          switch (op) {
            case BinOp::Add:
              if (need_a) na->grad[ia] += g[i];
              if (need_b) nb->grad[ib] += g[i];
              break;
            case BinOp::Sub:
              if (need_a) na->grad[ia] += g[i];
              if (need_b) nb->grad[ib] -= g[i];
              break;
            case BinOp::Mul:
              if (need_a) na->grad[ia] += g[i] * nb->values[ib];
              if (need_b) nb->grad[ib] += g[i] * na->values[ia];
              break;
          }
        });
  });
}

// Unary elementwise helper: fwd maps x -> y, bwd maps (x, y, g) -> dx.
template <class Fwd, class Bwd>
Tensor unary_op(const char* name, const Tensor& a, Fwd fwd, Bwd bwd) {
  const auto& pa = Ops::ptr(a);
  auto out = Ops::make(pa->shape);
  for (std::size_t i = 0; i < pa->values.size(); ++i) {
    out->values[i] = fwd(pa->values[i]);
  }
  check_finite(name, out->values);
  auto na = pa;
  detail::Node* no = out.get();  // raw: the tape keeps the node alive
  return Ops::finish(out, pa->requires_grad, [na, no, bwd]() {
    na->ensure_grad();
    for (std::size_t i = 0; i < na->values.size(); ++i) {
      na->grad[i] += bwd(na->values[i], no->values[i], no->grad[i]);
    }
  });
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return binary_op(BinOp::Add, a, b);
}
Tensor sub(const Tensor& a, const Tensor& b) {
  return binary_op(BinOp::Sub, a, b);
}
Tensor mul(const Tensor& a, const Tensor& b) {
  return binary_op(BinOp::Mul, a, b);
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  const auto& pa = Ops::ptr(a);
  const auto& pb = Ops::ptr(b);
  if (pa->shape.size() != 2 || pb->shape.size() != 2) {
    throw ShapeError("matmul: expects 2-D operands, got " +
                     shape_str(pa->shape) + " and " + shape_str(pb->shape));
  }
  const std::size_t m = pa->shape[0], k = pa->shape[1];
  const std::size_t k2 = pb->shape[0], n = pb->shape[1];
  if (k != k2) {
    throw ShapeError("matmul: inner dimensions of " + shape_str(pa->shape) +
                     " and " + shape_str(pb->shape) + " differ");
  }
  auto out = Ops::make(Shape{m, n});
  mm_acc(pa->values.data(), pb->values.data(), out->values.data(), m, k, n);
  check_finite("matmul", out->values);

  auto na = pa, nb = pb;
  detail::Node* no = out.get();  // raw: the tape keeps the node alive
  return Ops::finish(out, pa->requires_grad || pb->requires_grad,
                     [na, nb, no, m, k, n]() {
                       const double* g = no->grad.data();
                       if (na->requires_grad) {
                         na->ensure_grad();
                         mm_abt_acc(g, nb->values.data(), na->grad.data(), m,
                                    n, k);
                       }
                       if (nb->requires_grad) {
                         nb->ensure_grad();
                         mm_atb_acc(na->values.data(), g, nb->grad.data(), m,
                                    k, n);
                       }
                     });
}

Tensor scale(const Tensor& a, double s) {
  return unary_op(
      "scale", a, [s](double x) { return s * x; },
      [s](double, double, double g) { return s * g; });
}

Tensor sum(const Tensor& a) {
  const auto& pa = Ops::ptr(a);
  double acc = 0.0;
  for (double x : pa->values) acc += x;
  auto out = Ops::make(Shape{});
  out->values[0] = acc;
  check_finite("sum", out->values);
  auto na = pa;
  detail::Node* no = out.get();  // raw: the tape keeps the node alive
  return Ops::finish(out, pa->requires_grad, [na, no]() {
    na->ensure_grad();
    const double g = no->grad[0];
    for (double& x : na->grad) x += g;
  });
}

Tensor mean(const Tensor& a) {
  const auto& pa = Ops::ptr(a);
  const double inv = 1.0 / static_cast<double>(pa->values.size());
  double acc = 0.0;
  for (double x : pa->values) acc += x;
  auto out = Ops::make(Shape{});
  out->values[0] = acc * inv;
  check_finite("mean", out->values);
  auto na = pa;
  detail::Node* no = out.get();  // raw: the tape keeps the node alive
  return Ops::finish(out, pa->requires_grad, [na, no, inv]() {
    na->ensure_grad();
    const double g = no->grad[0] * inv;
    for (double& x : na->grad) x += g;
  });
}

Tensor square(const Tensor& a) {
  return unary_op(
      "square", a, [](double x) { return x * x; },
      [](double x, double, double g) { return 2.0 * x * g; });
}

Tensor sqrt(const Tensor& a) {
  return unary_op(
      "sqrt", a, [](double x) { return std::sqrt(x); },
      [](double, double y, double g) { return 0.5 / y * g; });
}

Tensor exp(const Tensor& a) {
  return unary_op(
      "exp", a, [](double x) { return std::exp(x); },
      [](double, double y, double g) { return y * g; });
}

Tensor sin(const Tensor& a) {
  return unary_op(
      "sin", a, [](double x) { return std::sin(x); },
      [](double x, double, double g) { return std::cos(x) * g; });
}

Tensor cos(const Tensor& a) {
  return unary_op(
      "cos", a, [](double x) { return std::cos(x); },
      [](double x, double, double g) { return -std::sin(x) * g; });
}

Tensor tanh(const Tensor& a) {
  return unary_op(
      "tanh", a, [](double x) { return std::tanh(x); },
      [](double, double y, double g) { return (1.0 - y * y) * g; });
}

Tensor transpose(const Tensor& a) {
  const auto& pa = Ops::ptr(a);
  if (pa->shape.size() != 2) {
    throw ShapeError("transpose: expects a 2-D tensor, got " +
                     shape_str(pa->shape));
  }
  const std::size_t m = pa->shape[0], n = pa->shape[1];
  auto out = Ops::make(Shape{n, m});
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      out->values[j * m + i] = pa->values[i * n + j];
    }
  }
  auto na = pa;
  detail::Node* no = out.get();  // raw: the tape keeps the node alive
  return Ops::finish(out, pa->requires_grad, [na, no, m, n]() {
    na->ensure_grad();
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        na->grad[i * n + j] += no->grad[j * m + i];
      }
    }
  });
}

Tensor reshape(const Tensor& a, Shape shape) {
  const auto& pa = Ops::ptr(a);
  if (numel(shape) != pa->values.size()) {
    throw ShapeError("reshape: cannot view " + shape_str(pa->shape) + " as " +
                     shape_str(shape));
  }
  auto out = Ops::make(shape);
  out->values = pa->values;
  auto na = pa;
  detail::Node* no = out.get();  // raw: the tape keeps the node alive
  return Ops::finish(out, pa->requires_grad, [na, no]() {
    na->ensure_grad();
    for (std::size_t i = 0; i < na->grad.size(); ++i) {
      na->grad[i] += no->grad[i];
    }
  });
}

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty()) throw ContractError("concat: no inputs");
  const auto& first = Ops::ptr(parts[0])->shape;
  if (axis >= first.size()) {
    throw ShapeError("concat: axis " + std::to_string(axis) +
                     " out of range for " + shape_str(first));
  }
  Shape out_shape = first;
  out_shape[axis] = 0;
  bool req = false;
  for (const auto& p : parts) {
    const auto& s = Ops::ptr(p)->shape;
    if (s.size() != first.size()) {
      throw ShapeError("concat: rank mismatch between " + shape_str(first) +
                       " and " + shape_str(s));
    }
    for (std::size_t d = 0; d < s.size(); ++d) {
      if (d != axis && s[d] != first[d]) {
        throw ShapeError("concat: shapes " + shape_str(first) + " and " +
                         shape_str(s) + " differ outside axis " +
                         std::to_string(axis));
      }
    }
    out_shape[axis] += s[axis];
    req = req || Ops::ptr(p)->requires_grad;
  }

  auto out = Ops::make(out_shape);
  std::size_t outer = 1, inner = 1;
  for (std::size_t d = 0; d < axis; ++d) outer *= out_shape[d];
  for (std::size_t d = axis + 1; d < out_shape.size(); ++d) {
    inner *= out_shape[d];
  }
  const std::size_t out_row = out_shape[axis] * inner;

  std::vector<std::shared_ptr<detail::Node>> srcs;
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  for (const auto& p : parts) {
    const auto& pp = Ops::ptr(p);
    const std::size_t part_row = pp->shape[axis] * inner;
    for (std::size_t o = 0; o < outer; ++o) {
      std::copy(pp->values.begin() + o * part_row,
                pp->values.begin() + (o + 1) * part_row,
                out->values.begin() + o * out_row + off);
    }
    srcs.push_back(pp);
    offsets.push_back(off);
    off += part_row;
  }

  detail::Node* no = out.get();  // raw: the tape keeps the node alive
  return Ops::finish(out, req, [srcs, offsets, no, outer, inner,
                                     out_row]() {
    for (std::size_t s = 0; s < srcs.size(); ++s) {
      auto& src = srcs[s];
      if (!src->requires_grad) continue;
      src->ensure_grad();
      const std::size_t part_row = src->values.size() / outer;
      for (std::size_t o = 0; o < outer; ++o) {
        const double* g = no->grad.data() + o * out_row + offsets[s];
        double* dst = src->grad.data() + o * part_row;
        for (std::size_t i = 0; i < part_row; ++i) dst[i] += g[i];
      }
    }
  });
}

Tensor slice(const Tensor& a, std::size_t axis, std::size_t start,
             std::size_t len) {
  const auto& pa = Ops::ptr(a);
  const Shape& s = pa->shape;
  if (axis >= s.size()) {
    throw ShapeError("slice: axis " + std::to_string(axis) +
                     " out of range for " + shape_str(s));
  }
  if (start + len > s[axis]) {
    throw ShapeError("slice: range [" + std::to_string(start) + ", " +
                     std::to_string(start + len) + ") exceeds extent " +
                     std::to_string(s[axis]) + " of " + shape_str(s));
  }
  Shape out_shape = s;
  out_shape[axis] = len;
  auto out = Ops::make(out_shape);

  std::size_t outer = 1, inner = 1;
  for (std::size_t d = 0; d < axis; ++d) outer *= s[d];
  for (std::size_t d = axis + 1; d < s.size(); ++d) inner *= s[d];
  const std::size_t src_row = s[axis] * inner;
  const std::size_t dst_row = len * inner;
  for (std::size_t o = 0; o < outer; ++o) {
    std::copy(pa->values.begin() + o * src_row + start * inner,
              pa->values.begin() + o * src_row + (start + len) * inner,
              out->values.begin() + o * dst_row);
  }

  auto na = pa;
  detail::Node* no = out.get();  // raw: the tape keeps the node alive
  return Ops::finish(
      out, pa->requires_grad, [na, no, outer, inner, src_row, dst_row,
                               start]() {
        na->ensure_grad();
        for (std::size_t o = 0; o < outer; ++o) {
          const double* g = no->grad.data() + o * dst_row;
          double* dst = na->grad.data() + o * src_row + start * inner;
          for (std::size_t i = 0; i < dst_row; ++i) dst[i] += g[i];
        }
      });
}

Tensor broadcast_to(const Tensor& a, const Shape& target) {
  const auto& pa = Ops::ptr(a);
  Shape check;
  if (!broadcast_shapes(pa->shape, target, check) || check != target) {
    throw ShapeError("broadcast_to: " + shape_str(pa->shape) +
                     " does not broadcast to " + shape_str(target));
  }
  auto out = Ops::make(target);
  const auto sa = broadcast_strides(pa->shape, target);
  const std::vector<std::size_t> sb(target.size(), 0);
  for_each_broadcast(target, sa, sb,
                     [&](std::size_t i, std::size_t ia, std::size_t) {
                       out->values[i] = pa->values[ia];
                     });
  auto na = pa;
  detail::Node* no = out.get();  // raw: the tape keeps the node alive
  Shape tgt = target;
  return Ops::finish(out, pa->requires_grad, [na, no, tgt, sa]() {
    na->ensure_grad();
    const std::vector<std::size_t> sb(tgt.size(), 0);
    for_each_broadcast(tgt, sa, sb,
                       [&](std::size_t i, std::size_t ia, std::size_t) {
                         na->grad[ia] += no->grad[i];
                       });
  });
}

void backward(const Tensor& loss) {
  auto* n = loss.node();
  if (n->values.size() != 1) {
    throw ContractError("backward: loss must be scalar, got shape " +
                        shape_str(n->shape));
  }
  Tape& tape = Tape::current();
  if (tape.size() == 0) {
    throw ContractError("backward: tape is empty");
  }
  n->ensure_grad();
  n->grad[0] = 1.0;
  const auto& nodes = tape.nodes();
  for (auto it = nodes.rbegin(); it != nodes.rend(); ++it) {
    detail::Node* nd = it->get();
    if (nd->grad.empty()) continue;
    check_finite("backward", nd->grad);
    if (nd->backward) nd->backward();
  }
  tape.clear();
}

}  // namespace rectflow
