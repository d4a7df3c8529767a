#ifndef ACL_TENSOR_HPP
#define ACL_TENSOR_HPP

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace acl {

using Shape = std::vector<std::size_t>;

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline std::size_t numel_of(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ')';
  return os.str();
}

namespace detail {

inline std::uint64_t next_node_id() {
  static std::atomic<std::uint64_t> counter{0};
  return ++counter;
}

// One value in the differentiation graph. Ids grow monotonically with
// creation, so sorting reachable nodes by id yields a topological order.
struct Node {
  std::uint64_t id = next_node_id();
  Shape shape;
  std::vector<float> value;
  std::vector<float> grad;
  bool requires_grad = false;
  bool leaf = true;
  bool active = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward;
};

inline bool& grad_mode() {
  thread_local bool enabled = true;
  return enabled;
}

inline bool& debug_mode() {
  static bool enabled = false;
  return enabled;
}

// Gradient buffer of an input during a backward pass, or nullptr when that
// input does not lead to any requested leaf.
inline float* grad_slot(Node& n) { return n.active ? n.grad.data() : nullptr; }

}  // namespace detail

/// Enables finite-value checks on every op output (throws NumericError).
inline void set_debug_checks(bool on) { detail::debug_mode() = on; }
inline bool debug_checks() { return detail::debug_mode(); }

/// Disables graph recording for the lifetime of the guard.
class NoGradGuard {
 public:
  NoGradGuard() : previous_(detail::grad_mode()) { detail::grad_mode() = false; }
  ~NoGradGuard() { detail::grad_mode() = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

inline bool grad_enabled() { return detail::grad_mode(); }

/// Dense row-major float32 array. Copies share the underlying node; use
/// detach() for an independent value.
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(Shape shape, float fill = 0.0f, bool requires_grad = false)
      : node_(std::make_shared<detail::Node>()) {
    node_->value.assign(numel_of(shape), fill);
    node_->shape = std::move(shape);
    node_->requires_grad = requires_grad;
  }

  Tensor(Shape shape, std::vector<float> values, bool requires_grad = false)
      : node_(std::make_shared<detail::Node>()) {
    if (numel_of(shape) != values.size()) {
      throw ShapeError("Tensor: shape " + shape_str(shape) + " needs " +
                       std::to_string(numel_of(shape)) + " values, got " +
                       std::to_string(values.size()));
    }
    node_->shape = std::move(shape);
    node_->value = std::move(values);
    node_->requires_grad = requires_grad;
  }

  static Tensor scalar(float v) { return Tensor(Shape{}, std::vector<float>{v}); }

  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t axis) const { return node_->shape.at(axis); }
  std::size_t numel() const { return node_->value.size(); }

  std::span<float> values() { return node_->value; }
  std::span<const float> values() const { return node_->value; }
  const std::vector<float>& vec() const { return node_->value; }

  float item() const {
    if (numel() != 1) throw ShapeError("item: tensor of shape " + shape_str(shape()) + " is not scalar");
    return node_->value[0];
  }

  bool requires_grad() const { return node_->requires_grad; }
  Tensor& set_requires_grad(bool on) {
    if (!node_->leaf) throw std::logic_error("set_requires_grad: only leaves can be toggled");
    node_->requires_grad = on;
    return *this;
  }
  bool is_leaf() const { return node_->leaf; }
  const char* op_name() const { return node_->op; }

  bool has_grad() const { return !node_->grad.empty(); }
  std::span<const float> grad() const { return node_->grad; }
  std::span<float> mutable_grad() {
    if (node_->grad.empty()) node_->grad.assign(numel(), 0.0f);
    return node_->grad;
  }
  void zero_grad() {
    if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), 0.0f);
  }
  void clear_grad() { node_->grad.clear(); }

  /// New leaf holding a copy of the values; no history, no grad.
  Tensor detach() const { return Tensor(shape(), node_->value); }

  detail::Node* node() const { return node_.get(); }
  const std::shared_ptr<detail::Node>& node_ptr() const { return node_; }

 private:
  std::shared_ptr<detail::Node> node_;
};

/// Recorded operations reachable from a root, in topological order.
class Tape {
 public:
  static Tape record(const Tensor& root) {
    Tape tape;
    if (!root.defined() || !root.requires_grad()) return tape;
    std::vector<detail::Node*> stack{root.node()};
    std::vector<detail::Node*> seen;
    root.node()->active = true;  // reused as a visited mark, cleared below
    while (!stack.empty()) {
      auto* n = stack.back();
      stack.pop_back();
      seen.push_back(n);
      for (auto& in : n->inputs) {
        if (in->requires_grad && !in->active) {
          in->active = true;
          stack.push_back(in.get());
        }
      }
    }
    for (auto* n : seen) n->active = false;
    std::sort(seen.begin(), seen.end(),
              [](const detail::Node* a, const detail::Node* b) { return a->id < b->id; });
    tape.nodes_ = std::move(seen);
    return tape;
  }

  std::size_t size() const { return nodes_.size(); }
  const std::vector<detail::Node*>& nodes() const { return nodes_; }

 private:
  std::vector<detail::Node*> nodes_;
};

/// Reverse-mode pass from a scalar root. Gradients accumulate (+=) into
/// leaves. With a non-empty `only`, just those leaves receive gradients and
/// every other leaf is left untouched.
inline void backward(const Tensor& root, std::span<const Tensor> only = {}) {
  if (!root.defined() || root.numel() != 1) {
    throw ShapeError("backward: root must be scalar, got shape " +
                     (root.defined() ? shape_str(root.shape()) : std::string("undefined")));
  }
  Tape tape = Tape::record(root);
  if (tape.size() == 0) return;

  auto is_target = [&](const detail::Node* n) {
    if (only.empty()) return n->leaf && n->requires_grad;
    for (const auto& t : only) {
      if (t.node() == n) return true;
    }
    return false;
  };

  for (auto* n : tape.nodes()) {
    if (n->leaf) {
      n->active = is_target(n);
      if (n->active && n->grad.empty()) n->grad.assign(n->value.size(), 0.0f);
    } else {
      bool any = false;
      for (auto& in : n->inputs) any = any || in->active;
      n->active = any;
      if (any) n->grad.assign(n->value.size(), 0.0f);
    }
  }

  detail::Node* r = root.node();
  if (r->active) r->grad[0] += 1.0f;

  const auto& nodes = tape.nodes();
  for (auto it = nodes.rbegin(); it != nodes.rend(); ++it) {
    detail::Node* n = *it;
    if (!n->leaf && n->active && n->backward) n->backward(*n);
  }

  for (auto* n : nodes) {
    if (!n->leaf) {
      n->grad.clear();
      n->grad.shrink_to_fit();
    }
    n->active = false;
  }
  if (debug_checks()) {
    for (auto* n : nodes) {
      if (!n->leaf) continue;
      for (float g : n->grad) {
        if (!std::isfinite(g)) throw NumericError("backward: non-finite gradient reached a leaf");
      }
    }
  }
}

namespace detail {

inline void check_finite(const char* op, const std::vector<float>& v) {
  for (float x : v) {
    if (!std::isfinite(x)) throw NumericError(std::string(op) + ": non-finite value in output");
  }
}

/// Wraps a freshly computed value as an op output, wiring the backward rule
/// only when some input participates in differentiation.
inline Tensor make_result(const char* op, Shape shape, std::vector<float> value,
                          std::vector<Tensor> inputs, std::function<void(Node&)> backward) {
  if (debug_mode()) check_finite(op, value);
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  node->op = op;
  bool needs = false;
  if (grad_mode()) {
    for (const auto& t : inputs) needs = needs || t.requires_grad();
  }
  if (needs) {
    node->requires_grad = true;
    node->leaf = false;
    node->inputs.reserve(inputs.size());
    for (auto& t : inputs) node->inputs.push_back(t.node_ptr());
    node->backward = std::move(backward);
  }
  return Tensor(std::move(node));
}

}  // namespace detail
}  // namespace acl

#endif  // ACL_TENSOR_HPP
