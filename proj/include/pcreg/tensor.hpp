#pragma once

// Dense rank-4 (N, C, H, W) tensors with a reverse-mode autodiff tape.
//
// A tensor is a shared handle to its storage. Ops record a node on the
// thread's active tape (see TapeScope) whenever one of their inputs requires
// a gradient; parameters are leaves that live outside any tape and keep
// their gradient buffers until zero_grad().

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace pcreg {

struct Shape {
  std::int64_t n = 0;
  std::int64_t c = 0;
  std::int64_t h = 0;
  std::int64_t w = 0;

  std::int64_t numel() const { return n * c * h * w; }
  std::int64_t plane() const { return h * w; }
  bool operator==(const Shape&) const = default;
  std::string str() const;
};

/// Shape or argument contract violated by a caller.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A forward op produced NaN or Inf from finite inputs, or a loss diverged.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class OpKind : std::uint8_t {
  kAdd,
  kAddScalar,
  kSub,
  kMul,
  kScale,
  kAbs,
  kSquare,
  kClamp01,
  kRelu,
  kMean,
  kConv2d,
  kBatchNorm,
  kMaxPool2,
  kResize,
  kConcat,
  kSlice,
  kSsim,
};

const char* op_name(OpKind kind);

template <class T>
struct TensorStorage {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;  // empty until a gradient first reaches this tensor
  bool requires_grad = false;
  std::optional<std::size_t> tape_id;
  const void* tape = nullptr;

  T* grad_buffer() {
    if (grad.empty()) grad.assign(data.size(), T(0));
    return grad.data();
  }
};

template <class T>
class BasicTape;

template <class T>
class BasicTensor {
 public:
  using value_type = T;

  BasicTensor() : impl_(std::make_shared<TensorStorage<T>>()) {}
  explicit BasicTensor(Shape shape, T fill = T(0));
  BasicTensor(Shape shape, std::vector<T> values);

  static BasicTensor scalar(T value) { return BasicTensor({1, 1, 1, 1}, value); }

  const Shape& shape() const { return impl_->shape; }
  std::int64_t numel() const { return impl_->shape.numel(); }
  bool empty() const { return impl_->data.empty(); }

  std::span<const T> data() const { return impl_->data; }
  /// Writable view; only meaningful for leaves (parameters, inputs).
  std::span<T> mutable_data() { return impl_->data; }
  T item() const;
  T at(std::int64_t n, std::int64_t c, std::int64_t h, std::int64_t w) const {
    const Shape& s = impl_->shape;
    return impl_->data[static_cast<std::size_t>(((n * s.c + c) * s.h + h) * s.w + w)];
  }

  bool requires_grad() const { return impl_->requires_grad; }
  BasicTensor& set_requires_grad(bool on) {
    impl_->requires_grad = on;
    return *this;
  }
  bool has_grad() const { return !impl_->grad.empty(); }
  std::span<const T> grad() const { return impl_->grad; }
  std::span<T> mutable_grad() { return {impl_->grad_buffer(), impl_->data.size()}; }
  void zero_grad() { impl_->grad.clear(); }

  std::optional<std::size_t> tape_id() const { return impl_->tape_id; }
  bool is_leaf() const { return !impl_->tape_id.has_value(); }

  /// Same values in fresh storage, not attached to any tape.
  BasicTensor detach() const;
  /// True if both handles refer to the same storage.
  bool same_storage(const BasicTensor& other) const { return impl_ == other.impl_; }

  TensorStorage<T>& storage() const { return *impl_; }
  const std::shared_ptr<TensorStorage<T>>& storage_ptr() const { return impl_; }

 private:
  std::shared_ptr<TensorStorage<T>> impl_;
};

template <class T>
class BasicTape {
 public:
  using BackwardFn = std::function<void(std::span<const T> grad_output)>;

  struct Node {
    OpKind kind;
    std::vector<std::size_t> input_ids;  // tape ids of non-leaf inputs
    std::shared_ptr<TensorStorage<T>> output;
    BackwardFn backward;
  };

  BasicTape() = default;
  BasicTape(const BasicTape&) = delete;
  BasicTape& operator=(const BasicTape&) = delete;

  /// Appends a node producing `output`. Marks `output` as requiring grad.
  std::size_t record(OpKind kind, std::span<const BasicTensor<T>> inputs,
                     BasicTensor<T>& output, BackwardFn fn);

  /// Populates gradients of every requires_grad tensor reachable from the
  /// scalar `loss`. The tape must be reset() before it can record again.
  void backward(const BasicTensor<T>& loss);
  /// Same, seeding d(out) with an arbitrary upstream gradient.
  void backward(const BasicTensor<T>& output, std::span<const T> seed);

  /// Drops all nodes (and the activations they keep alive).
  void reset();

  std::size_t size() const { return nodes_.size(); }
  bool consumed() const { return consumed_; }
  const std::vector<Node>& nodes() const { return nodes_; }

  /// Per-thread tape that ops record onto; null when gradients are off.
  static BasicTape*& active();

 private:
  std::vector<Node> nodes_;
  bool consumed_ = false;
};

/// Makes `tape` the active tape of this thread for the scope's lifetime.
template <class T>
class BasicTapeScope {
 public:
  explicit BasicTapeScope(BasicTape<T>& tape) : previous_(BasicTape<T>::active()) {
    BasicTape<T>::active() = &tape;
  }
  ~BasicTapeScope() { BasicTape<T>::active() = previous_; }
  BasicTapeScope(const BasicTapeScope&) = delete;
  BasicTapeScope& operator=(const BasicTapeScope&) = delete;

 private:
  BasicTape<T>* previous_;
};

/// Disables recording for the scope's lifetime.
template <class T>
class BasicNoGradScope {
 public:
  BasicNoGradScope() : previous_(BasicTape<T>::active()) { BasicTape<T>::active() = nullptr; }
  ~BasicNoGradScope() { BasicTape<T>::active() = previous_; }
  BasicNoGradScope(const BasicNoGradScope&) = delete;
  BasicNoGradScope& operator=(const BasicNoGradScope&) = delete;

 private:
  BasicTape<T>* previous_;
};

using Tensor = BasicTensor<float>;
using Tape = BasicTape<float>;
using TapeScope = BasicTapeScope<float>;
using NoGradScope = BasicNoGradScope<float>;

namespace detail {

/// Records `output` on the active tape if any input needs a gradient.
template <class T>
void record(OpKind kind, std::initializer_list<BasicTensor<T>> inputs,
            BasicTensor<T>& output, typename BasicTape<T>::BackwardFn fn);

/// Throws NumericalError if `t` holds NaN or Inf.
template <class T>
void check_finite(const BasicTensor<T>& t, OpKind producer);

void require_same_shape(const Shape& a, const Shape& b, const char* what);

}  // namespace detail

}  // namespace pcreg
