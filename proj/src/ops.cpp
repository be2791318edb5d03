#include "pcreg/ops.hpp"

#include <cmath>

namespace pcreg {
namespace {

template <class T, class F>
BasicTensor<T> map_unary(const BasicTensor<T>& a, F f) {
  BasicTensor<T> out(a.shape());
  auto src = a.data();
  auto dst = out.mutable_data();
  for (std::size_t i = 0; i < src.size(); ++i) dst[i] = f(src[i]);
  return out;
}

// Records a unary op whose local derivative depends only on the input value.
template <class T, class D>
void record_unary(OpKind kind, const BasicTensor<T>& a, BasicTensor<T>& out, D deriv) {
  detail::record<T>(kind, {a}, out, [a, deriv](std::span<const T> g) {
    if (!a.requires_grad()) return;
    auto x = a.data();
    T* ga = a.storage().grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * deriv(x[i]);
  });
}

}  // namespace

template <class T>
BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  detail::require_same_shape(a.shape(), b.shape(), "add");
  BasicTensor<T> out(a.shape());
  auto x = a.data(), y = b.data();
  auto z = out.mutable_data();
  for (std::size_t i = 0; i < z.size(); ++i) z[i] = x[i] + y[i];
  detail::check_finite(out, OpKind::kAdd);
  detail::record<T>(OpKind::kAdd, {a, b}, out, [a, b](std::span<const T> g) {
    for (const auto* t : {&a, &b}) {
      if (!t->requires_grad()) continue;
      T* gt = t->storage().grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) gt[i] += g[i];
    }
  });
  return out;
}

template <class T>
BasicTensor<T> add(const BasicTensor<T>& a, T b) {
  BasicTensor<T> out = map_unary(a, [b](T x) { return x + b; });
  detail::check_finite(out, OpKind::kAddScalar);
  record_unary(OpKind::kAddScalar, a, out, [](T) { return T(1); });
  return out;
}

template <class T>
BasicTensor<T> sub(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  detail::require_same_shape(a.shape(), b.shape(), "sub");
  BasicTensor<T> out(a.shape());
  auto x = a.data(), y = b.data();
  auto z = out.mutable_data();
  for (std::size_t i = 0; i < z.size(); ++i) z[i] = x[i] - y[i];
  detail::check_finite(out, OpKind::kSub);
  detail::record<T>(OpKind::kSub, {a, b}, out, [a, b](std::span<const T> g) {
    if (a.requires_grad()) {
      T* ga = a.storage().grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (b.requires_grad()) {
      T* gb = b.storage().grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
    }
  });
  return out;
}

template <class T>
BasicTensor<T> mul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  detail::require_same_shape(a.shape(), b.shape(), "mul");
  BasicTensor<T> out(a.shape());
  auto x = a.data(), y = b.data();
  auto z = out.mutable_data();
  for (std::size_t i = 0; i < z.size(); ++i) z[i] = x[i] * y[i];
  detail::check_finite(out, OpKind::kMul);
  detail::record<T>(OpKind::kMul, {a, b}, out, [a, b](std::span<const T> g) {
    auto x = a.data(), y = b.data();
    if (a.requires_grad()) {
      T* ga = a.storage().grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * y[i];
    }
    if (b.requires_grad()) {
      T* gb = b.storage().grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * x[i];
    }
  });
  return out;
}

template <class T>
BasicTensor<T> scale(const BasicTensor<T>& a, T s) {
  BasicTensor<T> out = map_unary(a, [s](T x) { return s * x; });
  detail::check_finite(out, OpKind::kScale);
  record_unary(OpKind::kScale, a, out, [s](T) { return s; });
  return out;
}

template <class T>
BasicTensor<T> abs(const BasicTensor<T>& a) {
  BasicTensor<T> out = map_unary(a, [](T x) { return std::abs(x); });
  record_unary(OpKind::kAbs, a, out,
               [](T x) { return x > T(0) ? T(1) : (x < T(0) ? T(-1) : T(0)); });
  return out;
}

template <class T>
BasicTensor<T> square(const BasicTensor<T>& a) {
  BasicTensor<T> out = map_unary(a, [](T x) { return x * x; });
  detail::check_finite(out, OpKind::kSquare);
  record_unary(OpKind::kSquare, a, out, [](T x) { return T(2) * x; });
  return out;
}

template <class T>
BasicTensor<T> clamp01(const BasicTensor<T>& a) {
  BasicTensor<T> out =
      map_unary(a, [](T x) { return x < T(0) ? T(0) : (x > T(1) ? T(1) : x); });
  record_unary(OpKind::kClamp01, a, out,
               [](T x) { return x > T(0) && x < T(1) ? T(1) : T(0); });
  return out;
}

template <class T>
BasicTensor<T> relu(const BasicTensor<T>& a) {
  BasicTensor<T> out = map_unary(a, [](T x) { return x > T(0) ? x : T(0); });
  record_unary(OpKind::kRelu, a, out, [](T x) { return x > T(0) ? T(1) : T(0); });
  return out;
}

template <class T>
BasicTensor<T> mean(const BasicTensor<T>& a) {
  if (a.numel() == 0) throw ShapeError("mean of an empty tensor");
  double sum = 0.0;
  for (T v : a.data()) sum += static_cast<double>(v);
  const double count = static_cast<double>(a.numel());
  BasicTensor<T> out = BasicTensor<T>::scalar(static_cast<T>(sum / count));
  detail::check_finite(out, OpKind::kMean);
  detail::record<T>(OpKind::kMean, {a}, out, [a, count](std::span<const T> g) {
    if (!a.requires_grad()) return;
    const T share = static_cast<T>(static_cast<double>(g[0]) / count);
    T* ga = a.storage().grad_buffer();
    for (std::int64_t i = 0; i < a.numel(); ++i) ga[i] += share;
  });
  return out;
}

#define PCREG_INSTANTIATE_OPS(T)                                              \
  template BasicTensor<T> add<T>(const BasicTensor<T>&, const BasicTensor<T>&); \
  template BasicTensor<T> add<T>(const BasicTensor<T>&, T);                   \
  template BasicTensor<T> sub<T>(const BasicTensor<T>&, const BasicTensor<T>&); \
  template BasicTensor<T> mul<T>(const BasicTensor<T>&, const BasicTensor<T>&); \
  template BasicTensor<T> scale<T>(const BasicTensor<T>&, T);                 \
  template BasicTensor<T> abs<T>(const BasicTensor<T>&);                      \
  template BasicTensor<T> square<T>(const BasicTensor<T>&);                   \
  template BasicTensor<T> clamp01<T>(const BasicTensor<T>&);                  \
  template BasicTensor<T> relu<T>(const BasicTensor<T>&);                     \
  template BasicTensor<T> mean<T>(const BasicTensor<T>&);

PCREG_INSTANTIATE_OPS(float)
PCREG_INSTANTIATE_OPS(double)

#undef PCREG_INSTANTIATE_OPS

}  // namespace pcreg
