#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "cffm/tensor.hpp"

namespace cffm {

/// A learnable tensor together with its accumulated gradient.
template <typename T>
struct Parameter {
  Parameter() = default;
  Parameter(std::string name_, Tensor<T> value_)
      : name(std::move(name_)), value(std::move(value_)), grad(value.shape()) {}

  void zero_grad() { grad.fill(T(0)); }

  std::string name;
  Tensor<T> value;
  Tensor<T> grad;
};

/// Global switch for graph recording. While disabled, op results and
/// parameter leaves carry no graph (inference, finite differences).
class GradMode {
 public:
  static bool enabled() noexcept;
  static void set_enabled(bool on) noexcept;
};

class NoGradGuard {
 public:
  NoGradGuard() : previous_(GradMode::enabled()) { GradMode::set_enabled(false); }
  ~NoGradGuard() { GradMode::set_enabled(previous_); }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

namespace detail {

template <typename T>
struct Node {
  Tensor<T> value;
  Tensor<T> grad;
  bool requires_grad = false;
  bool has_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  /// Gradient buffer of parent `i`, or nullptr when that parent does not
  /// take part in differentiation.
  Tensor<T>* parent_grad(std::size_t i) {
    auto& p = *parents[i];
    return p.requires_grad ? &p.grad : nullptr;
  }
  const Tensor<T>& parent_value(std::size_t i) const { return parents[i]->value; }
};

}  // namespace detail

/// Handle to a value in the recorded computation. Results of operations on
/// Vars that do not require gradients carry no graph, so the same code path
/// serves inference.
template <typename T>
class Var {
 public:
  using Node = detail::Node<T>;
  using BackwardFn = std::function<void(Node&)>;

  Var() : Var(Tensor<T>()) {}
  explicit Var(Tensor<T> value, bool requires_grad = false);

  /// Leaf bound to a parameter; backward() adds into p.grad.
  static Var param(Parameter<T>& p);

  /// Builds an op result. `fn` is dropped if no parent requires gradients.
  static Var make(Tensor<T> value, std::vector<Var> parents, BackwardFn fn);

  const Tensor<T>& value() const { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  bool requires_grad() const { return node_->requires_grad; }

  /// Gradient of the last backward() for a leaf; zero tensor if never set.
  Tensor<T> grad() const;

  /// Reverse pass from a scalar root. Parameter gradients accumulate across
  /// calls; intermediate gradients are recomputed every time.
  void backward() const;

  bool same_node(const Var& other) const { return node_ == other.node_; }

 private:
  std::shared_ptr<Node> node_;
};

// Differentiable operations -------------------------------------------------

template <typename T>
Var<T> matmul(const Var<T>& a, const Var<T>& b);

template <typename T>
Var<T> transpose(const Var<T>& a);

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b);

template <typename T>
Var<T> scale(const Var<T>& a, T factor);

template <typename T>
Var<T> gelu(const Var<T>& a);

template <typename T>
Var<T> softmax_rows(const Var<T>& x);

template <typename T>
Var<T> linear(const Var<T>& x, const Var<T>& w, const Var<T>& b);

/// Rows of x viewed as [rows x cols]; index -1 yields a zero row.
template <typename T>
Var<T> gather_rows(const Var<T>& x, std::span<const std::ptrdiff_t> index);

template <typename T>
Var<T> reshape(const Var<T>& x, Shape shape);

template <typename T>
Var<T> concat_rows(std::span<const Var<T>> parts);

template <typename T>
Var<T> slice_cols(const Var<T>& x, std::size_t begin, std::size_t end);

template <typename T>
Var<T> concat_cols(std::span<const Var<T>> parts);

/// Sub-tensor at position `i` of the leading axis.
template <typename T>
Var<T> take(const Var<T>& x, std::size_t i);

template <typename T>
Var<T> sum(const Var<T>& x);

template <typename T>
Var<T> space_to_depth(const Var<T>& x, std::size_t p);

/// Mean softmax cross-entropy over the rows of logits [..., K]. Labels equal
/// to `ignore_label` are excluded; an all-ignored input gives 0.
template <typename T>
Var<T> cross_entropy(const Var<T>& logits, std::span<const std::int32_t> labels,
                     std::int32_t ignore_label);

/// Bilinear resize of [h x w x C] by an integer factor using half-pixel
/// centres with edge clamping.
template <typename T>
Var<T> upsample_bilinear(const Var<T>& x, std::size_t factor);

/// Value-level bilinear resize with the same sampling.
template <typename T>
Tensor<T> upsample_bilinear(const Tensor<T>& x, std::size_t factor);

}  // namespace cffm
