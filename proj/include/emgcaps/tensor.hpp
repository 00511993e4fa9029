#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

namespace emg {

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& s) {
  std::size_t n = 1;
  for (auto e : s) n *= e;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) os << ',';
    os << s[i];
  }
  os << ']';
  return os.str();
}

// Error taxonomy: configuration (bad specs/params), input (bad data),
// numeric (non-finite values), usage (API misuse).
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct InputError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Graph recording can be switched off for inference-only forwards.
inline bool& autograd_flag() {
  thread_local bool enabled = true;
  return enabled;
}

struct NoGradGuard {
  bool prev;
  NoGradGuard() : prev(autograd_flag()) { autograd_flag() = false; }
  ~NoGradGuard() { autograd_flag() = prev; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;
};

// Dense row-major tensor with reverse-mode autodiff. A Tensor is a cheap
// handle onto a shared node; ops create fresh nodes that remember their
// parents and a backward closure. Gradients accumulate until zero_grad().
template <class T>
class Tensor {
 public:
  struct Impl {
    Shape shape;
    std::vector<T> value;
    std::vector<T> grad;  // allocated lazily, same extent as value
    bool requires_grad = false;
    std::vector<std::shared_ptr<Impl>> parents;
    std::function<void(Impl&)> backward_fn;

    void accumulate(const std::vector<T>& g) {
      if (grad.empty()) grad.assign(value.size(), T(0));
      for (std::size_t i = 0; i < g.size(); ++i) grad[i] += g[i];
    }
    std::vector<T>& grad_buf() {
      if (grad.empty()) grad.assign(value.size(), T(0));
      return grad;
    }
  };

  Tensor() = default;
  explicit Tensor(std::shared_ptr<Impl> p) : p_(std::move(p)) {}

  static Tensor zeros(Shape s, bool requires_grad = false) {
    auto p = std::make_shared<Impl>();
    p->value.assign(numel(s), T(0));
    p->shape = std::move(s);
    p->requires_grad = requires_grad;
    return Tensor(p);
  }

  static Tensor full(Shape s, T v) {
    auto t = zeros(std::move(s));
    std::fill(t.value().begin(), t.value().end(), v);
    return t;
  }

  static Tensor from(Shape s, std::vector<T> data, bool requires_grad = false) {
    if (numel(s) != data.size())
      throw UsageError("tensor data size " + std::to_string(data.size()) +
                       " does not match shape " + shape_str(s));
    auto p = std::make_shared<Impl>();
    p->shape = std::move(s);
    p->value = std::move(data);
    p->requires_grad = requires_grad;
    return Tensor(p);
  }

  static Tensor scalar(T v, bool requires_grad = false) {
    return from({1}, {v}, requires_grad);
  }

  bool defined() const { return static_cast<bool>(p_); }
  const Shape& shape() const { return p_->shape; }
  std::size_t size() const { return p_->value.size(); }
  std::vector<T>& value() { return p_->value; }
  const std::vector<T>& value() const { return p_->value; }
  T item() const {
    if (size() != 1) throw UsageError("item() on non-scalar tensor");
    return p_->value[0];
  }
  bool requires_grad() const { return p_->requires_grad; }
  void set_requires_grad(bool b) { p_->requires_grad = b; }
  std::vector<T>& grad() { return p_->grad_buf(); }
  bool has_grad() const { return !p_->grad.empty(); }
  void zero_grad() {
    if (!p_->grad.empty()) std::fill(p_->grad.begin(), p_->grad.end(), T(0));
  }

  std::shared_ptr<Impl> impl() const { return p_; }

  // Reverse-mode sweep from a scalar. Every requires_grad leaf reachable
  // from this node gets its gradient accumulated.
  void backward() const {
    if (size() != 1) throw UsageError("backward() requires a scalar loss");
    // Post-order DFS for topological order (iterative, graphs can be deep).
    std::vector<Impl*> order;
    std::unordered_set<Impl*> visited;
    struct Frame {
      Impl* node;
      std::size_t next_parent;
    };
    std::vector<Frame> stack;
    stack.push_back({p_.get(), 0});
    visited.insert(p_.get());
    while (!stack.empty()) {
      Frame& f = stack.back();
      if (f.next_parent < f.node->parents.size()) {
        Impl* par = f.node->parents[f.next_parent++].get();
        if (visited.insert(par).second) stack.push_back({par, 0});
      } else {
        order.push_back(f.node);
        stack.pop_back();
      }
    }
    // Interior node grads are per-sweep scratch; only leaves accumulate
    // across backward() calls.
    for (Impl* node : order)
      if (node->backward_fn && !node->grad.empty())
        std::fill(node->grad.begin(), node->grad.end(), T(0));
    p_->accumulate({T(1)});
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      Impl* node = *it;
      if (node->backward_fn && !node->grad.empty()) node->backward_fn(*node);
    }
  }

 private:
  std::shared_ptr<Impl> p_;
};

namespace detail {

template <class T>
bool any_requires_grad(std::initializer_list<Tensor<T>> ts) {
  if (!autograd_flag()) return false;
  for (const auto& t : ts)
    if (t.requires_grad()) return true;
  return false;
}

// Node constructor shared by all ops.
template <class T, class Backward>
Tensor<T> make_node(Shape shape, std::vector<T> value,
                    std::initializer_list<Tensor<T>> parents, Backward bw) {
  auto out = Tensor<T>::from(std::move(shape), std::move(value));
  if (any_requires_grad<T>(parents)) {
    auto p = out.impl();
    p->requires_grad = true;
    for (const auto& par : parents) p->parents.push_back(par.impl());
    p->backward_fn = std::move(bw);
  }
  return out;
}

}  // namespace detail

}  // namespace emg
