#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "tamba/common.hpp"

namespace tamba {

using Shape = std::vector<int64_t>;

int64_t numel(const Shape& s);
std::string shape_str(const Shape& s);

class Tensor;

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // allocated during backward, kept on leaves/retained
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void()> backward_fn;  // reads this->grad, accumulates into inputs
  const char* op = "leaf";
  bool requires_grad = false;
  bool is_leaf = true;
  bool retain = false;
  uint64_t backward_visits = 0;  // introspection: bumped once per backward pass

  void ensure_grad() {
    if (grad.empty()) grad.assign(value.size(), 0.0);
  }
};

}  // namespace detail

// Reverse-mode autodiff tensor: 64-bit floats, dynamic graph recorded on
// forward. Value-semantic handle to a shared node; ops on tensors whose
// inputs don't require gradients skip graph recording entirely.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape s, bool requires_grad = false);
  static Tensor full(Shape s, double v, bool requires_grad = false);
  static Tensor from_vec(Shape s, std::vector<double> v, bool requires_grad = false);
  static Tensor scalar(double v);
  static Tensor row(std::vector<double> v);  // shape {len}

  bool defined() const { return n_ != nullptr; }
  const Shape& shape() const;
  int ndim() const { return static_cast<int>(shape().size()); }
  int64_t dim(int i) const;  // negative indices allowed
  int64_t size() const;
  int64_t rows() const;  // product of all but the last axis (1 for scalars)
  int64_t cols() const;  // last axis (1 for scalars)

  std::span<const double> data() const;
  // Mutable storage access, for leaf initialization and optimizer updates.
  std::span<double> raw();
  double item() const;
  double at(std::initializer_list<int64_t> idx) const;

  bool requires_grad() const;
  void set_requires_grad(bool rg);
  void retain_grad();
  bool has_grad() const;
  std::span<const double> grad() const;
  std::vector<double> grad_or_zeros() const;
  void zero_grad();

  // Reverse pass from a scalar. Visits each reachable node exactly once;
  // afterwards grad buffers survive only on requires_grad leaves and
  // retain_grad() tensors.
  void backward() const;

  Tensor detach(bool requires_grad = false) const;

  const char* op_tag() const;
  std::vector<Tensor> graph_inputs() const;
  uint64_t backward_visits() const;

  detail::Node* node() const { return n_.get(); }
  const std::shared_ptr<detail::Node>& node_ptr() const { return n_; }

  static Tensor wrap(std::shared_ptr<detail::Node> n) { return Tensor(std::move(n)); }

 private:
  explicit Tensor(std::shared_ptr<detail::Node> n) : n_(std::move(n)) {}
  std::shared_ptr<detail::Node> n_;
};

// Topological view of the graph below a root, for introspection and tests.
struct GraphView {
  struct Entry {
    const detail::Node* node;
    const char* op;
    std::vector<const detail::Node*> inputs;
  };
  std::vector<Entry> order;  // inputs always precede consumers
};
GraphView graph_view(const Tensor& root);

Tensor rand_uniform(Shape s, Rng& rng, double lo, double hi, bool requires_grad = false);

// ---- op library ----

Tensor affine(const Tensor& x, const Tensor& W, const Tensor& b);  // (..,i)x(i,o)+(o)
Tensor matmul(const Tensor& a, const Tensor& b);     // (r,i)(i,c)
Tensor matmul_nt(const Tensor& a, const Tensor& b);  // (r,i)(c,i)^T -> (r,c)

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double c);
Tensor add_const(const Tensor& x, double c);
Tensor neg(const Tensor& x);

Tensor sum(const Tensor& x);   // -> scalar
Tensor mean(const Tensor& x);  // -> scalar

Tensor softmax(const Tensor& x, int axis = -1);
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                  double eps = 1e-5);

Tensor gelu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor tanh(const Tensor& x);
Tensor softplus(const Tensor& x);
Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);
Tensor abs(const Tensor& x);
Tensor reciprocal(const Tensor& x);

// Depthwise causal 1-D convolution over the first axis, zero left-padding.
Tensor conv1d_depthwise_causal(const Tensor& x /*(L,m)*/,
                               const Tensor& kernel /*(w,m)*/,
                               const Tensor& bias /*(m)*/);

// Input-dependent linear recurrence with diagonal state map:
//   y_t = C_t h_t + D_t u_t ;  h_{t+1} = a_t * h_t + B_t u_t ;  h_0 = h0
// a: (L,n) diagonal entries, B: (L,n*m), C: (L,p*n), D: (L,p*m) row-major
// per-step matrices, u: (L,m). Returns y: (L,p).
Tensor selective_scan(const Tensor& a, const Tensor& B, const Tensor& C,
                      const Tensor& D, const Tensor& u, const Tensor& h0);

// Single recurrence step, batched over rows (used where hidden state must
// thread across an outer recursion): h' = a * h + B u, y = C h + D u.
Tensor ssm_step_update(const Tensor& a /*(R,n)*/, const Tensor& B /*(R,n*m)*/,
                       const Tensor& u /*(R,m)*/, const Tensor& h /*(R,n)*/);
Tensor ssm_step_output(const Tensor& C /*(R,p*n)*/, const Tensor& D /*(R,p*m)*/,
                       const Tensor& h /*(R,n)*/, const Tensor& u /*(R,m)*/);

Tensor concat_rows(const std::vector<Tensor>& parts);  // 2-D, along axis 0
Tensor concat_cols(const std::vector<Tensor>& parts);  // 2-D, along axis 1
Tensor slice_rows(const Tensor& x, int64_t start, int64_t len);  // first axis
Tensor slice_cols(const Tensor& x, int64_t start, int64_t len);  // last axis, 2-D
Tensor reshape(const Tensor& x, Shape s);
Tensor tile_rows(const Tensor& v /*(c)*/, int64_t n);  // -> (n,c)
// Scales row r by mask[r]; the mask is a constant, not a graph input.
Tensor mask_rows(const Tensor& x, const std::vector<double>& mask);

Tensor stop_gradient(const Tensor& x);

// Finite-difference support. The backward pass differentiates the function in
// which values crossing stop_gradient are constants; probe re-evaluations must
// hold them at the same constants or the two sides disagree by construction.
// record() captures each stop_gradient output of the next evaluation; replay()
// substitutes the captured values, in call order, for one evaluation; clear()
// returns to passthrough. Thread-local state.
namespace stop_freeze {
void record();
void replay();
void clear();
}  // namespace stop_freeze

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator*(const Tensor& a, double c) { return scale(a, c); }
inline Tensor operator*(double c, const Tensor& a) { return scale(a, c); }
inline Tensor operator-(const Tensor& a) { return neg(a); }

}  // namespace tamba
