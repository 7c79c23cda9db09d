#include "tamba/tensor.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_set>

namespace tamba {

namespace {
std::atomic<bool> g_finite_checks{true};
}

bool finite_checks_enabled() {
  return g_finite_checks.load(std::memory_order_relaxed);
}
void set_finite_checks(bool on) {
  g_finite_checks.store(on, std::memory_order_relaxed);
}

namespace flopmeter {
namespace {
thread_local bool tl_enabled = false;
thread_local uint64_t tl_total = 0;
}  // namespace
void set_enabled(bool on) { tl_enabled = on; }
bool enabled() { return tl_enabled; }
void reset() { tl_total = 0; }
uint64_t total() { return tl_total; }
void add(uint64_t n) {
  if (tl_enabled) tl_total += n;
}
}  // namespace flopmeter

int64_t numel(const Shape& s) {
  int64_t n = 1;
  for (int64_t d : s) n *= d;
  return n;
}

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "(";
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ")";
  return os.str();
}

namespace {

using detail::Node;

using EMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapM = Eigen::Map<EMat>;
using CMapM = Eigen::Map<const EMat>;
using MapV = Eigen::Map<Eigen::VectorXd>;
using CMapV = Eigen::Map<const Eigen::VectorXd>;

std::shared_ptr<Node> new_node(Shape s, std::vector<double> v, const char* op) {
  auto n = std::make_shared<Node>();
  int64_t want = numel(s);
  if (static_cast<int64_t>(v.size()) != want)
    throw DimensionError(std::string(op) + ": storage size does not match shape " + shape_str(s));
  n->shape = std::move(s);
  n->value = std::move(v);
  n->op = op;
  return n;
}

void check_finite(const char* op, const std::vector<double>& v) {
  if (!finite_checks_enabled()) return;
  for (double x : v) {
    if (!std::isfinite(x))
      throw NumericError(std::string("non-finite value produced by op '") + op + "'");
  }
}

Tensor finish_plain(std::shared_ptr<Node> out) {
  check_finite(out->op, out->value);
  return Tensor::wrap(std::move(out));
}

Tensor finish_rec(std::shared_ptr<Node> out, std::initializer_list<Tensor> inputs,
                  std::function<void()> bw) {
  check_finite(out->op, out->value);
  out->requires_grad = true;
  out->is_leaf = false;
  out->inputs.reserve(inputs.size());
  for (const Tensor& t : inputs) out->inputs.push_back(t.node_ptr());
  out->backward_fn = std::move(bw);
  return Tensor::wrap(std::move(out));
}

void require_defined(const Tensor& t, const char* op) {
  if (!t.defined()) throw DimensionError(std::string(op) + ": undefined tensor argument");
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                         " vs " + shape_str(b.shape()));
}

}  // namespace

// ---- Tensor methods ----

Tensor Tensor::zeros(Shape s, bool requires_grad) {
  const int64_t cnt = numel(s);
  auto n = new_node(std::move(s), std::vector<double>(static_cast<size_t>(cnt), 0.0), "leaf");
  n->requires_grad = requires_grad;
  return Tensor(std::move(n));
}

Tensor Tensor::full(Shape s, double v, bool requires_grad) {
  int64_t cnt = numel(s);
  auto n = new_node(std::move(s), std::vector<double>(static_cast<size_t>(cnt), v), "leaf");
  n->requires_grad = requires_grad;
  return Tensor(std::move(n));
}

Tensor Tensor::from_vec(Shape s, std::vector<double> v, bool requires_grad) {
  auto n = new_node(std::move(s), std::move(v), "leaf");
  n->requires_grad = requires_grad;
  return Tensor(std::move(n));
}

Tensor Tensor::scalar(double v) { return from_vec({}, {v}); }

Tensor Tensor::row(std::vector<double> v) {
  int64_t len = static_cast<int64_t>(v.size());
  return from_vec({len}, std::move(v));
}

const Shape& Tensor::shape() const {
  if (!n_) throw DimensionError("shape(): undefined tensor");
  return n_->shape;
}

int64_t Tensor::dim(int i) const {
  const Shape& s = shape();
  int nd = static_cast<int>(s.size());
  if (i < 0) i += nd;
  if (i < 0 || i >= nd)
    throw DimensionError("dim(): axis out of range for shape " + shape_str(s));
  return s[i];
}

int64_t Tensor::size() const { return numel(shape()); }

int64_t Tensor::rows() const {
  const Shape& s = shape();
  if (s.empty()) return 1;
  int64_t r = 1;
  for (size_t i = 0; i + 1 < s.size(); ++i) r *= s[i];
  return r;
}

int64_t Tensor::cols() const {
  const Shape& s = shape();
  return s.empty() ? 1 : s.back();
}

std::span<const double> Tensor::data() const {
  if (!n_) throw DimensionError("data(): undefined tensor");
  return {n_->value.data(), n_->value.size()};
}

std::span<double> Tensor::raw() {
  if (!n_) throw DimensionError("raw(): undefined tensor");
  return {n_->value.data(), n_->value.size()};
}

double Tensor::item() const {
  if (size() != 1)
    throw DimensionError("item(): tensor of shape " + shape_str(shape()) + " is not a scalar");
  return n_->value[0];
}

double Tensor::at(std::initializer_list<int64_t> idx) const {
  const Shape& s = shape();
  if (idx.size() != s.size())
    throw DimensionError("at(): index rank mismatch for shape " + shape_str(s));
  int64_t off = 0;
  size_t k = 0;
  for (int64_t i : idx) {
    if (i < 0 || i >= s[k])
      throw DimensionError("at(): index out of range for shape " + shape_str(s));
    off = off * s[k] + i;
    ++k;
  }
  return n_->value[static_cast<size_t>(off)];
}

bool Tensor::requires_grad() const { return n_ && n_->requires_grad; }

void Tensor::set_requires_grad(bool rg) {
  if (!n_) throw DimensionError("set_requires_grad(): undefined tensor");
  if (!n_->is_leaf)
    throw DimensionError("set_requires_grad(): only leaves may be toggled");
  n_->requires_grad = rg;
}

void Tensor::retain_grad() {
  if (!n_) throw DimensionError("retain_grad(): undefined tensor");
  n_->retain = true;
}

bool Tensor::has_grad() const { return n_ && !n_->grad.empty(); }

std::span<const double> Tensor::grad() const {
  if (!has_grad())
    throw DimensionError("grad(): no gradient present (did backward() run?)");
  return {n_->grad.data(), n_->grad.size()};
}

std::vector<double> Tensor::grad_or_zeros() const {
  if (has_grad()) return n_->grad;
  return std::vector<double>(static_cast<size_t>(size()), 0.0);
}

void Tensor::zero_grad() {
  if (n_) {
    n_->grad.clear();
    n_->grad.shrink_to_fit();
  }
}

const char* Tensor::op_tag() const { return n_ ? n_->op : "undefined"; }

std::vector<Tensor> Tensor::graph_inputs() const {
  std::vector<Tensor> out;
  if (n_)
    for (const auto& p : n_->inputs) out.push_back(Tensor::wrap(p));
  return out;
}

uint64_t Tensor::backward_visits() const { return n_ ? n_->backward_visits : 0; }

namespace {

// Post-order (inputs first) over the recorded subgraph.
std::vector<Node*> topo_order(Node* root) {
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, size_t>> stack;
  stack.emplace_back(root, 0);
  seen.insert(root);
  while (!stack.empty()) {
    auto& [n, i] = stack.back();
    if (i < n->inputs.size()) {
      Node* in = n->inputs[i].get();
      ++i;
      if (seen.insert(in).second) stack.emplace_back(in, 0);
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }
  return order;
}

}  // namespace

void Tensor::backward() const {
  if (!n_) throw DimensionError("backward(): undefined tensor");
  if (size() != 1)
    throw DimensionError("backward(): root must be scalar, got shape " + shape_str(shape()));
  if (!n_->requires_grad)
    throw DimensionError("backward(): root does not require grad");
  std::vector<Node*> order = topo_order(n_.get());
  n_->ensure_grad();
  n_->grad[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    ++n->backward_visits;
    if (n->backward_fn) {
      n->ensure_grad();
      n->backward_fn();
    }
  }
  // Gradients persist only where the caller can observe them.
  for (Node* n : order) {
    if (n->retain) continue;
    if (n->is_leaf && n->requires_grad) continue;
    n->grad.clear();
    n->grad.shrink_to_fit();
  }
}

Tensor Tensor::detach(bool requires_grad) const {
  if (!n_) throw DimensionError("detach(): undefined tensor");
  auto n = new_node(n_->shape, n_->value, "stop_gradient");
  n->requires_grad = requires_grad;
  return Tensor(std::move(n));
}

GraphView graph_view(const Tensor& root) {
  GraphView v;
  if (!root.defined()) return v;
  for (Node* n : topo_order(root.node())) {
    GraphView::Entry e;
    e.node = n;
    e.op = n->op;
    for (const auto& in : n->inputs) e.inputs.push_back(in.get());
    v.order.push_back(std::move(e));
  }
  return v;
}

Tensor rand_uniform(Shape s, Rng& rng, double lo, double hi, bool requires_grad) {
  int64_t cnt = numel(s);
  std::vector<double> v(static_cast<size_t>(cnt));
  for (double& x : v) x = rng.uniform(lo, hi);
  return Tensor::from_vec(std::move(s), std::move(v), requires_grad);
}

// ---- ops ----

Tensor affine(const Tensor& x, const Tensor& W, const Tensor& b) {
  require_defined(x, "affine");
  require_defined(W, "affine");
  require_defined(b, "affine");
  if (W.ndim() != 2)
    throw DimensionError("affine: weight must be 2-D, got " + shape_str(W.shape()));
  const int64_t I = W.dim(0), O = W.dim(1);
  if (x.ndim() < 1 || x.cols() != I)
    throw DimensionError("affine: input " + shape_str(x.shape()) + " incompatible with weight " +
                         shape_str(W.shape()));
  if (b.ndim() != 1 || b.dim(0) != O)
    throw DimensionError("affine: bias " + shape_str(b.shape()) + " incompatible with weight " +
                         shape_str(W.shape()));
  const int64_t R = x.rows();
  Shape yshape = x.shape();
  yshape.back() = O;
  std::vector<double> y(static_cast<size_t>(R * O));
  {
    CMapM X(x.data().data(), R, I), Wm(W.data().data(), I, O);
    CMapV bv(b.data().data(), O);
    MapM Y(y.data(), R, O);
    Y.noalias() = X * Wm;
    Y.rowwise() += bv.transpose();
  }
  flopmeter::add(flopmeter::affine(static_cast<uint64_t>(R), static_cast<uint64_t>(I),
                                   static_cast<uint64_t>(O)));
  auto out = new_node(std::move(yshape), std::move(y), "affine");
  if (!(x.requires_grad() || W.requires_grad() || b.requires_grad()))
    return finish_plain(std::move(out));
  Node* o = out.get();
  auto xn = x.node_ptr(), wn = W.node_ptr(), bn = b.node_ptr();
  return finish_rec(std::move(out), {x, W, b}, [o, xn, wn, bn, R, I, O]() {
    CMapM G(o->grad.data(), R, O);
    if (xn->requires_grad) {
      xn->ensure_grad();
      CMapM Wm(wn->value.data(), I, O);
      MapM dX(xn->grad.data(), R, I);
      dX.noalias() += G * Wm.transpose();
    }
    if (wn->requires_grad) {
      wn->ensure_grad();
      CMapM X(xn->value.data(), R, I);
      MapM dW(wn->grad.data(), I, O);
      dW.noalias() += X.transpose() * G;
    }
    if (bn->requires_grad) {
      bn->ensure_grad();
      MapV dB(bn->grad.data(), O);
      dB += G.colwise().sum().transpose();
    }
  });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_defined(a, "matmul");
  require_defined(b, "matmul");
  if (a.ndim() != 2 || b.ndim() != 2 || a.dim(1) != b.dim(0))
    throw DimensionError("matmul: incompatible shapes " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
  const int64_t R = a.dim(0), I = a.dim(1), C = b.dim(1);
  std::vector<double> y(static_cast<size_t>(R * C));
  {
    CMapM A(a.data().data(), R, I), B(b.data().data(), I, C);
    MapM Y(y.data(), R, C);
    Y.noalias() = A * B;
  }
  flopmeter::add(flopmeter::matmul(static_cast<uint64_t>(R), static_cast<uint64_t>(I),
                                   static_cast<uint64_t>(C)));
  auto out = new_node({R, C}, std::move(y), "matmul");
  if (!(a.requires_grad() || b.requires_grad())) return finish_plain(std::move(out));
  Node* o = out.get();
  auto an = a.node_ptr(), bn = b.node_ptr();
  return finish_rec(std::move(out), {a, b}, [o, an, bn, R, I, C]() {
    CMapM G(o->grad.data(), R, C);
    if (an->requires_grad) {
      an->ensure_grad();
      CMapM B(bn->value.data(), I, C);
      MapM dA(an->grad.data(), R, I);
      dA.noalias() += G * B.transpose();
    }
    if (bn->requires_grad) {
      bn->ensure_grad();
      CMapM A(an->value.data(), R, I);
      MapM dB(bn->grad.data(), I, C);
      dB.noalias() += A.transpose() * G;
    }
  });
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  require_defined(a, "matmul_nt");
  require_defined(b, "matmul_nt");
  if (a.ndim() != 2 || b.ndim() != 2 || a.dim(1) != b.dim(1))
    throw DimensionError("matmul_nt: incompatible shapes " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
  const int64_t R = a.dim(0), I = a.dim(1), C = b.dim(0);
  std::vector<double> y(static_cast<size_t>(R * C));
  {
    CMapM A(a.data().data(), R, I), B(b.data().data(), C, I);
    MapM Y(y.data(), R, C);
    Y.noalias() = A * B.transpose();
  }
  flopmeter::add(flopmeter::matmul(static_cast<uint64_t>(R), static_cast<uint64_t>(I),
                                   static_cast<uint64_t>(C)));
  auto out = new_node({R, C}, std::move(y), "matmul_nt");
  if (!(a.requires_grad() || b.requires_grad())) return finish_plain(std::move(out));
  Node* o = out.get();
  auto an = a.node_ptr(), bn = b.node_ptr();
  return finish_rec(std::move(out), {a, b}, [o, an, bn, R, I, C]() {
    CMapM G(o->grad.data(), R, C);
    if (an->requires_grad) {
      an->ensure_grad();
      CMapM B(bn->value.data(), C, I);
      MapM dA(an->grad.data(), R, I);
      dA.noalias() += G * B;
    }
    if (bn->requires_grad) {
      bn->ensure_grad();
      CMapM A(an->value.data(), R, I);
      MapM dB(bn->grad.data(), C, I);
      dB.noalias() += G.transpose() * A;
    }
  });
}

namespace {

template <typename FwdFn, typename BwdA, typename BwdB>
Tensor binary_elementwise(const char* tag, const Tensor& a, const Tensor& b, FwdFn f,
                          BwdA dfa, BwdB dfb) {
  require_defined(a, tag);
  require_defined(b, tag);
  require_same_shape(a, b, tag);
  const size_t n = a.data().size();
  std::vector<double> y(n);
  const double* av = a.data().data();
  const double* bv = b.data().data();
  for (size_t i = 0; i < n; ++i) y[i] = f(av[i], bv[i]);
  auto out = new_node(a.shape(), std::move(y), tag);
  if (!(a.requires_grad() || b.requires_grad())) return finish_plain(std::move(out));
  Node* o = out.get();
  auto an = a.node_ptr(), bn = b.node_ptr();
  return finish_rec(std::move(out), {a, b}, [o, an, bn, n, dfa, dfb]() {
    const double* g = o->grad.data();
    if (an->requires_grad) {
      an->ensure_grad();
      double* da = an->grad.data();
      for (size_t i = 0; i < n; ++i) da[i] += dfa(an->value[i], bn->value[i]) * g[i];
    }
    if (bn->requires_grad) {
      bn->ensure_grad();
      double* db = bn->grad.data();
      for (size_t i = 0; i < n; ++i) db[i] += dfb(an->value[i], bn->value[i]) * g[i];
    }
  });
}

// Unary elementwise where the derivative is a function of (x, y).
template <typename FwdFn, typename DerivFn>
Tensor unary_elementwise(const char* tag, const Tensor& x, FwdFn f, DerivFn df) {
  require_defined(x, tag);
  const size_t n = x.data().size();
  std::vector<double> y(n);
  const double* xv = x.data().data();
  for (size_t i = 0; i < n; ++i) y[i] = f(xv[i]);
  auto out = new_node(x.shape(), std::move(y), tag);
  if (!x.requires_grad()) return finish_plain(std::move(out));
  Node* o = out.get();
  auto xn = x.node_ptr();
  return finish_rec(std::move(out), {x}, [o, xn, n, df]() {
    xn->ensure_grad();
    const double* g = o->grad.data();
    double* dx = xn->grad.data();
    for (size_t i = 0; i < n; ++i) dx[i] += df(xn->value[i], o->value[i]) * g[i];
  });
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return binary_elementwise(
      "add", a, b, [](double x, double y) { return x + y; },
      [](double, double) { return 1.0; }, [](double, double) { return 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary_elementwise(
      "sub", a, b, [](double x, double y) { return x - y; },
      [](double, double) { return 1.0; }, [](double, double) { return -1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary_elementwise(
      "mul", a, b, [](double x, double y) { return x * y; },
      [](double, double y) { return y; }, [](double x, double) { return x; });
}

Tensor scale(const Tensor& x, double c) {
  return unary_elementwise(
      "scale", x, [c](double v) { return c * v; }, [c](double, double) { return c; });
}

Tensor add_const(const Tensor& x, double c) {
  return unary_elementwise(
      "add_const", x, [c](double v) { return v + c; }, [](double, double) { return 1.0; });
}

Tensor neg(const Tensor& x) { return scale(x, -1.0); }

Tensor sum(const Tensor& x) {
  require_defined(x, "sum");
  double s = 0.0;
  for (double v : x.data()) s += v;
  auto out = new_node({}, {s}, "sum");
  if (!x.requires_grad()) return finish_plain(std::move(out));
  Node* o = out.get();
  auto xn = x.node_ptr();
  return finish_rec(std::move(out), {x}, [o, xn]() {
    xn->ensure_grad();
    const double g = o->grad[0];
    for (double& d : xn->grad) d += g;
  });
}

Tensor mean(const Tensor& x) {
  require_defined(x, "mean");
  const size_t n = x.data().size();
  if (n == 0) throw DimensionError("mean: empty tensor");
  double s = 0.0;
  for (double v : x.data()) s += v;
  s /= static_cast<double>(n);
  auto out = new_node({}, {s}, "mean");
  if (!x.requires_grad()) return finish_plain(std::move(out));
  Node* o = out.get();
  auto xn = x.node_ptr();
  return finish_rec(std::move(out), {x}, [o, xn, n]() {
    xn->ensure_grad();
    const double g = o->grad[0] / static_cast<double>(n);
    for (double& d : xn->grad) d += g;
  });
}

Tensor softmax(const Tensor& x, int axis) {
  require_defined(x, "softmax");
  const Shape& s = x.shape();
  int nd = static_cast<int>(s.size());
  if (nd == 0) throw DimensionError("softmax: scalar input");
  if (axis < 0) axis += nd;
  if (axis < 0 || axis >= nd)
    throw DimensionError("softmax: axis out of range for shape " + shape_str(s));
  int64_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= s[i];
  for (int i = axis + 1; i < nd; ++i) inner *= s[i];
  const int64_t n = s[axis];
  std::vector<double> y(x.data().size());
  const double* xv = x.data().data();
  for (int64_t ou = 0; ou < outer; ++ou) {
    for (int64_t in = 0; in < inner; ++in) {
      const int64_t base = ou * n * inner + in;
      double mx = -HUGE_VAL;
      for (int64_t k = 0; k < n; ++k) mx = std::max(mx, xv[base + k * inner]);
      double z = 0.0;
      for (int64_t k = 0; k < n; ++k) {
        double e = std::exp(xv[base + k * inner] - mx);
        y[base + k * inner] = e;
        z += e;
      }
      for (int64_t k = 0; k < n; ++k) y[base + k * inner] /= z;
    }
  }
  auto out = new_node(s, std::move(y), "softmax");
  if (!x.requires_grad()) return finish_plain(std::move(out));
  Node* o = out.get();
  auto xn = x.node_ptr();
  return finish_rec(std::move(out), {x}, [o, xn, outer, inner, n]() {
    xn->ensure_grad();
    const double* g = o->grad.data();
    const double* yv = o->value.data();
    double* dx = xn->grad.data();
    for (int64_t ou = 0; ou < outer; ++ou) {
      for (int64_t in = 0; in < inner; ++in) {
        const int64_t base = ou * n * inner + in;
        double dot = 0.0;
        for (int64_t k = 0; k < n; ++k) dot += g[base + k * inner] * yv[base + k * inner];
        for (int64_t k = 0; k < n; ++k) {
          const int64_t idx = base + k * inner;
          dx[idx] += yv[idx] * (g[idx] - dot);
        }
      }
    }
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  require_defined(x, "layer_norm");
  require_defined(gain, "layer_norm");
  require_defined(bias, "layer_norm");
  const int64_t d = x.cols();
  if (x.ndim() < 1)
    throw DimensionError("layer_norm: scalar input");
  if (gain.ndim() != 1 || gain.dim(0) != d || bias.ndim() != 1 || bias.dim(0) != d)
    throw DimensionError("layer_norm: gain/bias " + shape_str(gain.shape()) + "/" +
                         shape_str(bias.shape()) + " incompatible with input " +
                         shape_str(x.shape()));
  const int64_t R = x.rows();
  std::vector<double> y(x.data().size());
  auto xhat = std::make_shared<std::vector<double>>(x.data().size());
  auto inv = std::make_shared<std::vector<double>>(static_cast<size_t>(R));
  const double* xv = x.data().data();
  const double* gv = gain.data().data();
  const double* bv = bias.data().data();
  for (int64_t r = 0; r < R; ++r) {
    const double* xr = xv + r * d;
    double mu = 0.0;
    for (int64_t c = 0; c < d; ++c) mu += xr[c];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (int64_t c = 0; c < d; ++c) {
      double t = xr[c] - mu;
      var += t * t;
    }
    var /= static_cast<double>(d);
    double iv = 1.0 / std::sqrt(var + eps);
    (*inv)[static_cast<size_t>(r)] = iv;
    for (int64_t c = 0; c < d; ++c) {
      double xh = (xr[c] - mu) * iv;
      (*xhat)[static_cast<size_t>(r * d + c)] = xh;
      y[static_cast<size_t>(r * d + c)] = gv[c] * xh + bv[c];
    }
  }
  auto out = new_node(x.shape(), std::move(y), "layer_norm");
  if (!(x.requires_grad() || gain.requires_grad() || bias.requires_grad()))
    return finish_plain(std::move(out));
  Node* o = out.get();
  auto xn = x.node_ptr(), gn = gain.node_ptr(), bn = bias.node_ptr();
  return finish_rec(std::move(out), {x, gain, bias}, [o, xn, gn, bn, R, d, xhat, inv]() {
    const double* g = o->grad.data();
    const double* gv = gn->value.data();
    if (xn->requires_grad) {
      xn->ensure_grad();
      double* dx = xn->grad.data();
      for (int64_t r = 0; r < R; ++r) {
        const double* gr = g + r * d;
        const double* xh = xhat->data() + r * d;
        double m1 = 0.0, m2 = 0.0;
        for (int64_t c = 0; c < d; ++c) {
          double gh = gr[c] * gv[c];
          m1 += gh;
          m2 += gh * xh[c];
        }
        m1 /= static_cast<double>(d);
        m2 /= static_cast<double>(d);
        const double iv = (*inv)[static_cast<size_t>(r)];
        for (int64_t c = 0; c < d; ++c) {
          double gh = gr[c] * gv[c];
          dx[r * d + c] += iv * (gh - m1 - xh[c] * m2);
        }
      }
    }
    if (gn->requires_grad) {
      gn->ensure_grad();
      double* dg = gn->grad.data();
      for (int64_t r = 0; r < R; ++r)
        for (int64_t c = 0; c < d; ++c)
          dg[c] += g[r * d + c] * (*xhat)[static_cast<size_t>(r * d + c)];
    }
    if (bn->requires_grad) {
      bn->ensure_grad();
      double* db = bn->grad.data();
      for (int64_t r = 0; r < R; ++r)
        for (int64_t c = 0; c < d; ++c) db[c] += g[r * d + c];
    }
  });
}

Tensor gelu(const Tensor& x) {
  constexpr double kInvSqrt2 = 0.7071067811865476;
  constexpr double kInvSqrt2Pi = 0.3989422804014327;
  return unary_elementwise(
      "gelu", x,
      [](double v) { return 0.5 * v * (1.0 + std::erf(v * kInvSqrt2)); },
      [](double v, double) {
        double cdf = 0.5 * (1.0 + std::erf(v * kInvSqrt2));
        return cdf + v * kInvSqrt2Pi * std::exp(-0.5 * v * v);
      });
}

Tensor sigmoid(const Tensor& x) {
  return unary_elementwise(
      "sigmoid", x,
      [](double v) {
        if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
        double e = std::exp(v);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor tanh(const Tensor& x) {
  return unary_elementwise(
      "tanh", x, [](double v) { return std::tanh(v); },
      [](double, double y) { return 1.0 - y * y; });
}

Tensor softplus(const Tensor& x) {
  return unary_elementwise(
      "softplus", x,
      [](double v) { return std::max(v, 0.0) + std::log1p(std::exp(-std::abs(v))); },
      [](double v, double) {
        if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
        double e = std::exp(v);
        return e / (1.0 + e);
      });
}

Tensor exp(const Tensor& x) {
  return unary_elementwise(
      "exp", x, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

Tensor log(const Tensor& x) {
  return unary_elementwise(
      "log", x, [](double v) { return std::log(v); },
      [](double v, double) { return 1.0 / v; });
}

Tensor abs(const Tensor& x) {
  return unary_elementwise(
      "abs", x, [](double v) { return std::abs(v); },
      [](double v, double) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); });
}

Tensor reciprocal(const Tensor& x) {
  return unary_elementwise(
      "reciprocal", x, [](double v) { return 1.0 / v; },
      [](double, double y) { return -y * y; });
}

Tensor conv1d_depthwise_causal(const Tensor& x, const Tensor& kernel, const Tensor& bias) {
  require_defined(x, "conv1d");
  require_defined(kernel, "conv1d");
  require_defined(bias, "conv1d");
  if (x.ndim() != 2 || kernel.ndim() != 2 || x.dim(1) != kernel.dim(1))
    throw DimensionError("conv1d: input " + shape_str(x.shape()) + " incompatible with kernel " +
                         shape_str(kernel.shape()));
  const int64_t L = x.dim(0), m = x.dim(1), w = kernel.dim(0);
  if (bias.ndim() != 1 || bias.dim(0) != m)
    throw DimensionError("conv1d: bias " + shape_str(bias.shape()) + " must have " +
                         std::to_string(m) + " channels");
  std::vector<double> y(static_cast<size_t>(L * m));
  const double* xv = x.data().data();
  const double* kv = kernel.data().data();
  const double* bv = bias.data().data();
  for (int64_t t = 0; t < L; ++t) {
    for (int64_t c = 0; c < m; ++c) {
      double acc = bv[c];
      for (int64_t j = 0; j < w; ++j) {
        int64_t sidx = t + j - (w - 1);
        if (sidx >= 0) acc += kv[j * m + c] * xv[sidx * m + c];
      }
      y[static_cast<size_t>(t * m + c)] = acc;
    }
  }
  flopmeter::add(flopmeter::conv_depthwise(static_cast<uint64_t>(L), static_cast<uint64_t>(m),
                                           static_cast<uint64_t>(w)));
  auto out = new_node({L, m}, std::move(y), "conv1d");
  if (!(x.requires_grad() || kernel.requires_grad() || bias.requires_grad()))
    return finish_plain(std::move(out));
  Node* o = out.get();
  auto xn = x.node_ptr(), kn = kernel.node_ptr(), bn = bias.node_ptr();
  return finish_rec(std::move(out), {x, kernel, bias}, [o, xn, kn, bn, L, m, w]() {
    const double* g = o->grad.data();
    if (xn->requires_grad) {
      xn->ensure_grad();
      double* dx = xn->grad.data();
      const double* kv = kn->value.data();
      for (int64_t t = 0; t < L; ++t)
        for (int64_t j = 0; j < w; ++j) {
          int64_t sidx = t + j - (w - 1);
          if (sidx < 0) continue;
          for (int64_t c = 0; c < m; ++c) dx[sidx * m + c] += kv[j * m + c] * g[t * m + c];
        }
    }
    if (kn->requires_grad) {
      kn->ensure_grad();
      double* dk = kn->grad.data();
      const double* xv = xn->value.data();
      for (int64_t t = 0; t < L; ++t)
        for (int64_t j = 0; j < w; ++j) {
          int64_t sidx = t + j - (w - 1);
          if (sidx < 0) continue;
          for (int64_t c = 0; c < m; ++c) dk[j * m + c] += xv[sidx * m + c] * g[t * m + c];
        }
    }
    if (bn->requires_grad) {
      bn->ensure_grad();
      double* db = bn->grad.data();
      for (int64_t t = 0; t < L; ++t)
        for (int64_t c = 0; c < m; ++c) db[c] += g[t * m + c];
    }
  });
}

Tensor selective_scan(const Tensor& a, const Tensor& B, const Tensor& C, const Tensor& D,
                      const Tensor& u, const Tensor& h0) {
  require_defined(a, "selective_scan");
  require_defined(B, "selective_scan");
  require_defined(C, "selective_scan");
  require_defined(D, "selective_scan");
  require_defined(u, "selective_scan");
  require_defined(h0, "selective_scan");
  if (a.ndim() != 2 || u.ndim() != 2 || a.dim(0) != u.dim(0))
    throw DimensionError("selective_scan: a " + shape_str(a.shape()) + " and u " +
                         shape_str(u.shape()) + " must be (L,n)/(L,m)");
  const int64_t L = a.dim(0), n = a.dim(1), m = u.dim(1);
  if (h0.ndim() != 1 || h0.dim(0) != n)
    throw DimensionError("selective_scan: h0 " + shape_str(h0.shape()) + " must be (" +
                         std::to_string(n) + ")");
  if (B.ndim() != 2 || B.dim(0) != L || B.dim(1) != n * m)
    throw DimensionError("selective_scan: B " + shape_str(B.shape()) + " must be (L," +
                         std::to_string(n * m) + ")");
  if (C.ndim() != 2 || C.dim(0) != L || C.dim(1) % n != 0)
    throw DimensionError("selective_scan: C " + shape_str(C.shape()) +
                         " must be (L,p*n) for state width " + std::to_string(n));
  const int64_t p = C.dim(1) / n;
  if (D.ndim() != 2 || D.dim(0) != L || D.dim(1) != p * m)
    throw DimensionError("selective_scan: D " + shape_str(D.shape()) + " must be (L," +
                         std::to_string(p * m) + ")");

  std::vector<double> y(static_cast<size_t>(L * p));
  auto hs = std::make_shared<std::vector<double>>(static_cast<size_t>((L + 1) * n));
  {
    const double* av = a.data().data();
    const double* Bv = B.data().data();
    const double* Cv = C.data().data();
    const double* Dv = D.data().data();
    const double* uv = u.data().data();
    Eigen::VectorXd h = CMapV(h0.data().data(), n);
    const bool guard = finite_checks_enabled();
    for (int64_t t = 0; t < L; ++t) {
      CMapM Ct(Cv + t * p * n, p, n), Dt(Dv + t * p * m, p, m), Bt(Bv + t * n * m, n, m);
      CMapV ut(uv + t * m, m), at(av + t * n, n);
      MapV(hs->data() + t * n, n) = h;
      MapV yt(y.data() + t * p, p);
      yt.noalias() = Ct * h;
      yt.noalias() += Dt * ut;
      h = at.cwiseProduct(h);
      h.noalias() += Bt * ut;
      if (guard && (!yt.allFinite() || !h.allFinite()))
        throw NumericError("selective_scan: non-finite state at step " + std::to_string(t));
    }
    MapV(hs->data() + L * n, n) = h;
  }
  flopmeter::add(flopmeter::scan(static_cast<uint64_t>(L), static_cast<uint64_t>(n),
                                 static_cast<uint64_t>(m), static_cast<uint64_t>(p)));
  auto out = new_node({L, p}, std::move(y), "selective_scan");
  const bool rg = a.requires_grad() || B.requires_grad() || C.requires_grad() ||
                  D.requires_grad() || u.requires_grad() || h0.requires_grad();
  if (!rg) return finish_plain(std::move(out));
  Node* o = out.get();
  auto an = a.node_ptr(), Bn = B.node_ptr(), Cn = C.node_ptr(), Dn = D.node_ptr(),
       un = u.node_ptr(), hn = h0.node_ptr();
  return finish_rec(std::move(out), {a, B, C, D, u, h0},
                    [o, an, Bn, Cn, Dn, un, hn, hs, L, n, m, p]() {
    for (auto* in : {an.get(), Bn.get(), Cn.get(), Dn.get(), un.get(), hn.get()})
      if (in->requires_grad) in->ensure_grad();
    const double* g = o->grad.data();
    Eigen::VectorXd delta = Eigen::VectorXd::Zero(n);  // d loss / d h_{t+1}
    for (int64_t t = L - 1; t >= 0; --t) {
      CMapV gt(g + t * p, p);
      CMapV ht(hs->data() + t * n, n);
      CMapV ut(un->value.data() + t * m, m);
      CMapV at(an->value.data() + t * n, n);
      CMapM Ct(Cn->value.data() + t * p * n, p, n);
      CMapM Bt(Bn->value.data() + t * n * m, n, m);
      CMapM Dt(Dn->value.data() + t * p * m, p, m);
      if (Cn->requires_grad)
        MapM(Cn->grad.data() + t * p * n, p, n).noalias() += gt * ht.transpose();
      if (Dn->requires_grad)
        MapM(Dn->grad.data() + t * p * m, p, m).noalias() += gt * ut.transpose();
      if (Bn->requires_grad)
        MapM(Bn->grad.data() + t * n * m, n, m).noalias() += delta * ut.transpose();
      if (an->requires_grad)
        MapV(an->grad.data() + t * n, n) += delta.cwiseProduct(ht);
      if (un->requires_grad) {
        MapV dut(un->grad.data() + t * m, m);
        dut.noalias() += Dt.transpose() * gt;
        dut.noalias() += Bt.transpose() * delta;
      }
      Eigen::VectorXd next = Ct.transpose() * gt;
      next += at.cwiseProduct(delta);
      delta = std::move(next);
    }
    if (hn->requires_grad) MapV(hn->grad.data(), n) += delta;
  });
}

Tensor ssm_step_update(const Tensor& a, const Tensor& B, const Tensor& u, const Tensor& h) {
  require_defined(a, "ssm_step_update");
  require_defined(B, "ssm_step_update");
  require_defined(u, "ssm_step_update");
  require_defined(h, "ssm_step_update");
  if (a.ndim() != 2 || h.ndim() != 2 || u.ndim() != 2 || B.ndim() != 2)
    throw DimensionError("ssm_step_update: all inputs must be 2-D");
  const int64_t R = a.dim(0), n = a.dim(1), m = u.dim(1);
  if (h.dim(0) != R || h.dim(1) != n || u.dim(0) != R || B.dim(0) != R || B.dim(1) != n * m)
    throw DimensionError("ssm_step_update: inconsistent shapes a" + shape_str(a.shape()) +
                         " B" + shape_str(B.shape()) + " u" + shape_str(u.shape()) + " h" +
                         shape_str(h.shape()));
  std::vector<double> y(static_cast<size_t>(R * n));
  {
    const double* av = a.data().data();
    const double* Bv = B.data().data();
    const double* uv = u.data().data();
    const double* hv = h.data().data();
    for (int64_t r = 0; r < R; ++r) {
      CMapM Br(Bv + r * n * m, n, m);
      CMapV ur(uv + r * m, m), hr(hv + r * n, n), ar(av + r * n, n);
      MapV yr(y.data() + r * n, n);
      yr = ar.cwiseProduct(hr);
      yr.noalias() += Br * ur;
    }
  }
  flopmeter::add(flopmeter::scan_update(static_cast<uint64_t>(R), static_cast<uint64_t>(n),
                                        static_cast<uint64_t>(m)));
  auto out = new_node({R, n}, std::move(y), "ssm_step_update");
  if (!(a.requires_grad() || B.requires_grad() || u.requires_grad() || h.requires_grad()))
    return finish_plain(std::move(out));
  Node* o = out.get();
  auto an = a.node_ptr(), Bn = B.node_ptr(), un = u.node_ptr(), hn = h.node_ptr();
  return finish_rec(std::move(out), {a, B, u, h}, [o, an, Bn, un, hn, R, n, m]() {
    const double* g = o->grad.data();
    for (auto* in : {an.get(), Bn.get(), un.get(), hn.get()})
      if (in->requires_grad) in->ensure_grad();
    for (int64_t r = 0; r < R; ++r) {
      CMapV gr(g + r * n, n);
      CMapV ur(un->value.data() + r * m, m), hr(hn->value.data() + r * n, n),
          ar(an->value.data() + r * n, n);
      CMapM Br(Bn->value.data() + r * n * m, n, m);
      if (an->requires_grad) MapV(an->grad.data() + r * n, n) += gr.cwiseProduct(hr);
      if (hn->requires_grad) MapV(hn->grad.data() + r * n, n) += gr.cwiseProduct(ar);
      if (Bn->requires_grad)
        MapM(Bn->grad.data() + r * n * m, n, m).noalias() += gr * ur.transpose();
      if (un->requires_grad) MapV(un->grad.data() + r * m, m).noalias() += Br.transpose() * gr;
    }
  });
}

Tensor ssm_step_output(const Tensor& C, const Tensor& D, const Tensor& h, const Tensor& u) {
  require_defined(C, "ssm_step_output");
  require_defined(D, "ssm_step_output");
  require_defined(h, "ssm_step_output");
  require_defined(u, "ssm_step_output");
  if (C.ndim() != 2 || D.ndim() != 2 || h.ndim() != 2 || u.ndim() != 2)
    throw DimensionError("ssm_step_output: all inputs must be 2-D");
  const int64_t R = h.dim(0), n = h.dim(1), m = u.dim(1);
  if (u.dim(0) != R || C.dim(0) != R || D.dim(0) != R || C.dim(1) % n != 0)
    throw DimensionError("ssm_step_output: inconsistent shapes C" + shape_str(C.shape()) +
                         " D" + shape_str(D.shape()) + " h" + shape_str(h.shape()) + " u" +
                         shape_str(u.shape()));
  const int64_t p = C.dim(1) / n;
  if (D.dim(1) != p * m)
    throw DimensionError("ssm_step_output: D " + shape_str(D.shape()) + " must be (R," +
                         std::to_string(p * m) + ")");
  std::vector<double> y(static_cast<size_t>(R * p));
  {
    const double* Cv = C.data().data();
    const double* Dv = D.data().data();
    const double* hv = h.data().data();
    const double* uv = u.data().data();
    for (int64_t r = 0; r < R; ++r) {
      CMapM Cr(Cv + r * p * n, p, n), Dr(Dv + r * p * m, p, m);
      CMapV hr(hv + r * n, n), ur(uv + r * m, m);
      MapV yr(y.data() + r * p, p);
      yr.noalias() = Cr * hr;
      yr.noalias() += Dr * ur;
    }
  }
  flopmeter::add(flopmeter::scan_output(static_cast<uint64_t>(R), static_cast<uint64_t>(n),
                                        static_cast<uint64_t>(m), static_cast<uint64_t>(p)));
  auto out = new_node({R, p}, std::move(y), "ssm_step_output");
  if (!(C.requires_grad() || D.requires_grad() || h.requires_grad() || u.requires_grad()))
    return finish_plain(std::move(out));
  Node* o = out.get();
  auto Cn = C.node_ptr(), Dn = D.node_ptr(), hn = h.node_ptr(), un = u.node_ptr();
  return finish_rec(std::move(out), {C, D, h, u}, [o, Cn, Dn, hn, un, R, n, m, p]() {
    const double* g = o->grad.data();
    for (auto* in : {Cn.get(), Dn.get(), hn.get(), un.get()})
      if (in->requires_grad) in->ensure_grad();
    for (int64_t r = 0; r < R; ++r) {
      CMapV gr(g + r * p, p);
      CMapV hr(hn->value.data() + r * n, n), ur(un->value.data() + r * m, m);
      CMapM Cr(Cn->value.data() + r * p * n, p, n), Dr(Dn->value.data() + r * p * m, p, m);
      if (Cn->requires_grad)
        MapM(Cn->grad.data() + r * p * n, p, n).noalias() += gr * hr.transpose();
      if (Dn->requires_grad)
        MapM(Dn->grad.data() + r * p * m, p, m).noalias() += gr * ur.transpose();
      if (hn->requires_grad) MapV(hn->grad.data() + r * n, n).noalias() += Cr.transpose() * gr;
      if (un->requires_grad) MapV(un->grad.data() + r * m, m).noalias() += Dr.transpose() * gr;
    }
  });
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw DimensionError("concat_rows: no inputs");
  const int64_t c = parts[0].defined() ? parts[0].cols() : 0;
  int64_t rtotal = 0;
  bool rg = false;
  for (const Tensor& t : parts) {
    require_defined(t, "concat_rows");
    if (t.ndim() != 2 || t.dim(1) != c)
      throw DimensionError("concat_rows: expected 2-D parts with " + std::to_string(c) +
                           " cols, got " + shape_str(t.shape()));
    rtotal += t.dim(0);
    rg = rg || t.requires_grad();
  }
  std::vector<double> y;
  y.reserve(static_cast<size_t>(rtotal * c));
  for (const Tensor& t : parts) y.insert(y.end(), t.data().begin(), t.data().end());
  auto out = new_node({rtotal, c}, std::move(y), "concat_rows");
  if (!rg) return finish_plain(std::move(out));
  Node* o = out.get();
  std::vector<std::shared_ptr<Node>> ins;
  for (const Tensor& t : parts) ins.push_back(t.node_ptr());
  check_finite(o->op, o->value);
  o->requires_grad = true;
  o->is_leaf = false;
  o->inputs = ins;
  o->backward_fn = [o, ins]() {
    size_t off = 0;
    for (const auto& in : ins) {
      const size_t cnt = in->value.size();
      if (in->requires_grad) {
        in->ensure_grad();
        for (size_t i = 0; i < cnt; ++i) in->grad[i] += o->grad[off + i];
      }
      off += cnt;
    }
  };
  return Tensor::wrap(std::move(out));
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw DimensionError("concat_cols: no inputs");
  const int64_t r = parts[0].defined() && parts[0].ndim() == 2 ? parts[0].dim(0) : -1;
  int64_t ctotal = 0;
  bool rg = false;
  for (const Tensor& t : parts) {
    require_defined(t, "concat_cols");
    if (t.ndim() != 2 || t.dim(0) != r)
      throw DimensionError("concat_cols: expected 2-D parts with " + std::to_string(r) +
                           " rows, got " + shape_str(t.shape()));
    ctotal += t.dim(1);
    rg = rg || t.requires_grad();
  }
  std::vector<double> y(static_cast<size_t>(r * ctotal));
  {
    int64_t coff = 0;
    for (const Tensor& t : parts) {
      const int64_t tc = t.dim(1);
      const double* tv = t.data().data();
      for (int64_t i = 0; i < r; ++i)
        std::copy(tv + i * tc, tv + (i + 1) * tc, y.data() + i * ctotal + coff);
      coff += tc;
    }
  }
  auto out = new_node({r, ctotal}, std::move(y), "concat_cols");
  if (!rg) return finish_plain(std::move(out));
  Node* o = out.get();
  std::vector<std::shared_ptr<Node>> ins;
  for (const Tensor& t : parts) ins.push_back(t.node_ptr());
  check_finite(o->op, o->value);
  o->requires_grad = true;
  o->is_leaf = false;
  o->inputs = ins;
  const int64_t rr = r, ct = ctotal;
  o->backward_fn = [o, ins, rr, ct]() {
    int64_t coff = 0;
    for (const auto& in : ins) {
      const int64_t tc = in->shape[1];
      if (in->requires_grad) {
        in->ensure_grad();
        for (int64_t i = 0; i < rr; ++i)
          for (int64_t j = 0; j < tc; ++j) in->grad[i * tc + j] += o->grad[i * ct + coff + j];
      }
      coff += tc;
    }
  };
  return Tensor::wrap(std::move(out));
}

Tensor slice_rows(const Tensor& x, int64_t start, int64_t len) {
  require_defined(x, "slice_rows");
  if (x.ndim() < 1) throw DimensionError("slice_rows: scalar input");
  const int64_t R = x.dim(0);
  if (start < 0 || len < 0 || start + len > R)
    throw DimensionError("slice_rows: range [" + std::to_string(start) + "," +
                         std::to_string(start + len) + ") out of bounds for " +
                         shape_str(x.shape()));
  const int64_t stride = x.size() / std::max<int64_t>(R, 1);
  Shape s = x.shape();
  s[0] = len;
  std::vector<double> y(x.data().begin() + start * stride,
                        x.data().begin() + (start + len) * stride);
  auto out = new_node(std::move(s), std::move(y), "slice_rows");
  if (!x.requires_grad()) return finish_plain(std::move(out));
  Node* o = out.get();
  auto xn = x.node_ptr();
  return finish_rec(std::move(out), {x}, [o, xn, start, len, stride]() {
    xn->ensure_grad();
    for (int64_t i = 0; i < len * stride; ++i) xn->grad[start * stride + i] += o->grad[i];
  });
}

Tensor slice_cols(const Tensor& x, int64_t start, int64_t len) {
  require_defined(x, "slice_cols");
  if (x.ndim() != 2) throw DimensionError("slice_cols: input must be 2-D");
  const int64_t R = x.dim(0), C = x.dim(1);
  if (start < 0 || len < 0 || start + len > C)
    throw DimensionError("slice_cols: range [" + std::to_string(start) + "," +
                         std::to_string(start + len) + ") out of bounds for " +
                         shape_str(x.shape()));
  std::vector<double> y(static_cast<size_t>(R * len));
  const double* xv = x.data().data();
  for (int64_t r = 0; r < R; ++r)
    std::copy(xv + r * C + start, xv + r * C + start + len, y.data() + r * len);
  auto out = new_node({R, len}, std::move(y), "slice_cols");
  if (!x.requires_grad()) return finish_plain(std::move(out));
  Node* o = out.get();
  auto xn = x.node_ptr();
  return finish_rec(std::move(out), {x}, [o, xn, R, C, start, len]() {
    xn->ensure_grad();
    for (int64_t r = 0; r < R; ++r)
      for (int64_t j = 0; j < len; ++j) xn->grad[r * C + start + j] += o->grad[r * len + j];
  });
}

Tensor reshape(const Tensor& x, Shape s) {
  require_defined(x, "reshape");
  if (numel(s) != x.size())
    throw DimensionError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(s));
  auto out = new_node(std::move(s), std::vector<double>(x.data().begin(), x.data().end()),
                      "reshape");
  if (!x.requires_grad()) return finish_plain(std::move(out));
  Node* o = out.get();
  auto xn = x.node_ptr();
  return finish_rec(std::move(out), {x}, [o, xn]() {
    xn->ensure_grad();
    for (size_t i = 0; i < o->grad.size(); ++i) xn->grad[i] += o->grad[i];
  });
}

Tensor tile_rows(const Tensor& v, int64_t n) {
  require_defined(v, "tile_rows");
  if (v.ndim() != 1) throw DimensionError("tile_rows: input must be 1-D, got " +
                                          shape_str(v.shape()));
  if (n < 0) throw DimensionError("tile_rows: negative count");
  const int64_t c = v.dim(0);
  std::vector<double> y(static_cast<size_t>(n * c));
  for (int64_t r = 0; r < n; ++r)
    std::copy(v.data().begin(), v.data().end(), y.data() + r * c);
  auto out = new_node({n, c}, std::move(y), "tile_rows");
  if (!v.requires_grad()) return finish_plain(std::move(out));
  Node* o = out.get();
  auto vn = v.node_ptr();
  return finish_rec(std::move(out), {v}, [o, vn, n, c]() {
    vn->ensure_grad();
    for (int64_t r = 0; r < n; ++r)
      for (int64_t j = 0; j < c; ++j) vn->grad[j] += o->grad[r * c + j];
  });
}

Tensor mask_rows(const Tensor& x, const std::vector<double>& mask) {
  require_defined(x, "mask_rows");
  if (x.ndim() < 1) throw DimensionError("mask_rows: scalar input");
  const int64_t R = x.dim(0);
  if (static_cast<int64_t>(mask.size()) != R)
    throw DimensionError("mask_rows: mask length " + std::to_string(mask.size()) +
                         " does not match first axis of " + shape_str(x.shape()));
  const int64_t stride = x.size() / std::max<int64_t>(R, 1);
  std::vector<double> y(x.data().begin(), x.data().end());
  for (int64_t r = 0; r < R; ++r)
    for (int64_t i = 0; i < stride; ++i) y[static_cast<size_t>(r * stride + i)] *= mask[r];
  auto out = new_node(x.shape(), std::move(y), "mask_rows");
  if (!x.requires_grad()) return finish_plain(std::move(out));
  Node* o = out.get();
  auto xn = x.node_ptr();
  auto m = std::make_shared<std::vector<double>>(mask);
  return finish_rec(std::move(out), {x}, [o, xn, m, R, stride]() {
    xn->ensure_grad();
    for (int64_t r = 0; r < R; ++r)
      for (int64_t i = 0; i < stride; ++i)
        xn->grad[r * stride + i] += (*m)[static_cast<size_t>(r)] * o->grad[r * stride + i];
  });
}

namespace {

enum class StopMode { passthrough, record, replay };
thread_local StopMode g_stop_mode = StopMode::passthrough;
thread_local std::vector<std::pair<Shape, std::vector<double>>> g_stop_log;
thread_local size_t g_stop_cursor = 0;

}  // namespace

namespace stop_freeze {

void record() {
  g_stop_mode = StopMode::record;
  g_stop_log.clear();
  g_stop_cursor = 0;
}

void replay() {
  g_stop_mode = StopMode::replay;
  g_stop_cursor = 0;
}

void clear() {
  g_stop_mode = StopMode::passthrough;
  g_stop_log.clear();
  g_stop_cursor = 0;
}

}  // namespace stop_freeze

Tensor stop_gradient(const Tensor& x) {
  require_defined(x, "stop_gradient");
  switch (g_stop_mode) {
    case StopMode::record:
      g_stop_log.emplace_back(x.shape(),
                              std::vector<double>(x.data().begin(), x.data().end()));
      return x.detach(false);
    case StopMode::replay: {
      if (g_stop_cursor >= g_stop_log.size())
        throw OracleError("stop_gradient replay: more stops than were recorded");
      const auto& [shape, vals] = g_stop_log[g_stop_cursor++];
      if (shape != x.shape())
        throw OracleError("stop_gradient replay: shape drifted between evaluations");
      return Tensor::from_vec(shape, vals);
    }
    case StopMode::passthrough:
      break;
  }
  return x.detach(false);
}

}  // namespace tamba
