#include "pcreg/tensor.hpp"

#include <cmath>
#include <sstream>

namespace pcreg {

std::string Shape::str() const {
  std::ostringstream os;
  os << '(' << n << ", " << c << ", " << h << ", " << w << ')';
  return os.str();
}

const char* op_name(OpKind kind) {
  switch (kind) {
    case OpKind::kAdd: return "add";
    case OpKind::kAddScalar: return "add_scalar";
    case OpKind::kSub: return "sub";
    case OpKind::kMul: return "mul";
    case OpKind::kScale: return "scale";
    case OpKind::kAbs: return "abs";
    case OpKind::kSquare: return "square";
    case OpKind::kClamp01: return "clamp01";
    case OpKind::kRelu: return "relu";
    case OpKind::kMean: return "mean";
    case OpKind::kConv2d: return "conv2d";
    case OpKind::kBatchNorm: return "batchnorm";
    case OpKind::kMaxPool2: return "maxpool2";
    case OpKind::kResize: return "bilinear_resize";
    case OpKind::kConcat: return "concat_channels";
    case OpKind::kSlice: return "slice_channels";
    case OpKind::kSsim: return "ssim";
  }
  return "unknown";
}

template <class T>
BasicTensor<T>::BasicTensor(Shape shape, T fill) : impl_(std::make_shared<TensorStorage<T>>()) {
  if (shape.n < 0 || shape.c < 0 || shape.h < 0 || shape.w < 0) {
    throw ShapeError("negative tensor dimension in " + shape.str());
  }
  impl_->shape = shape;
  impl_->data.assign(static_cast<std::size_t>(shape.numel()), fill);
}

template <class T>
BasicTensor<T>::BasicTensor(Shape shape, std::vector<T> values)
    : impl_(std::make_shared<TensorStorage<T>>()) {
  if (shape.n < 0 || shape.c < 0 || shape.h < 0 || shape.w < 0) {
    throw ShapeError("negative tensor dimension in " + shape.str());
  }
  if (static_cast<std::int64_t>(values.size()) != shape.numel()) {
    throw ShapeError("tensor of shape " + shape.str() + " needs " +
                     std::to_string(shape.numel()) + " values, got " +
                     std::to_string(values.size()));
  }
  impl_->shape = shape;
  impl_->data = std::move(values);
}

template <class T>
T BasicTensor<T>::item() const {
  if (impl_->data.size() != 1) {
    throw ShapeError("item() on non-scalar tensor " + impl_->shape.str());
  }
  return impl_->data[0];
}

template <class T>
BasicTensor<T> BasicTensor<T>::detach() const {
  return BasicTensor<T>(impl_->shape, impl_->data);
}

template <class T>
BasicTape<T>*& BasicTape<T>::active() {
  thread_local BasicTape<T>* tape = nullptr;
  return tape;
}

template <class T>
std::size_t BasicTape<T>::record(OpKind kind, std::span<const BasicTensor<T>> inputs,
                                 BasicTensor<T>& output, BackwardFn fn) {
  if (consumed_) {
    throw std::logic_error("tape already ran backward; reset() it before recording");
  }
  Node node;
  node.kind = kind;
  for (const auto& in : inputs) {
    const auto& s = in.storage();
    if (s.tape_id && s.tape == this) node.input_ids.push_back(*s.tape_id);
  }
  node.output = output.storage_ptr();
  node.backward = std::move(fn);
  const std::size_t id = nodes_.size();
  nodes_.push_back(std::move(node));
  auto& out = output.storage();
  out.requires_grad = true;
  out.tape_id = id;
  out.tape = this;
  return id;
}

template <class T>
void BasicTape<T>::backward(const BasicTensor<T>& loss) {
  if (loss.numel() != 1) {
    throw ShapeError("backward() needs a scalar loss, got " + loss.shape().str());
  }
  const T one(1);
  backward(loss, std::span<const T>(&one, 1));
}

template <class T>
void BasicTape<T>::backward(const BasicTensor<T>& output, std::span<const T> seed) {
  auto& out = output.storage();
  if (!out.tape_id || out.tape != this) {
    throw std::logic_error("backward() on a tensor that is not on this tape (detached)");
  }
  if (consumed_) {
    throw std::logic_error("tape already ran backward; reset() it first");
  }
  if (seed.size() != out.data.size()) {
    throw ShapeError("backward seed has " + std::to_string(seed.size()) +
                     " values for output " + out.shape.str());
  }
  T* g = out.grad_buffer();
  for (std::size_t i = 0; i < seed.size(); ++i) g[i] += seed[i];

  for (std::size_t i = *out.tape_id + 1; i-- > 0;) {
    Node& node = nodes_[i];
    if (node.output->grad.empty()) continue;
    node.backward(node.output->grad);
  }
  consumed_ = true;
}

template <class T>
void BasicTape<T>::reset() {
  for (auto& node : nodes_) {
    node.output->tape_id.reset();
    node.output->tape = nullptr;
  }
  nodes_.clear();
  consumed_ = false;
}

namespace detail {

template <class T>
void record(OpKind kind, std::initializer_list<BasicTensor<T>> inputs,
            BasicTensor<T>& output, typename BasicTape<T>::BackwardFn fn) {
  BasicTape<T>* tape = BasicTape<T>::active();
  if (tape == nullptr) return;
  bool any = false;
  for (const auto& in : inputs) any = any || in.requires_grad();
  if (!any) return;
  tape->record(kind, std::span<const BasicTensor<T>>(inputs.begin(), inputs.size()),
               output, std::move(fn));
}

template <class T>
void check_finite(const BasicTensor<T>& t, OpKind producer) {
  for (T v : t.data()) {
    if (!std::isfinite(v)) {
      throw NumericalError(std::string("non-finite value produced by ") +
                           op_name(producer) + " with output shape " + t.shape().str());
    }
  }
}

void require_same_shape(const Shape& a, const Shape& b, const char* what) {
  if (!(a == b)) {
    throw ShapeError(std::string(what) + ": shape mismatch " + a.str() + " vs " + b.str());
  }
}

template void record<float>(OpKind, std::initializer_list<BasicTensor<float>>,
                            BasicTensor<float>&, BasicTape<float>::BackwardFn);
template void record<double>(OpKind, std::initializer_list<BasicTensor<double>>,
                             BasicTensor<double>&, BasicTape<double>::BackwardFn);
template void check_finite<float>(const BasicTensor<float>&, OpKind);
template void check_finite<double>(const BasicTensor<double>&, OpKind);

}  // namespace detail

template class BasicTensor<float>;
template class BasicTensor<double>;
template class BasicTape<float>;
template class BasicTape<double>;

}  // namespace pcreg
