#pragma once

// Elementwise arithmetic and reductions. Binary ops require equal shapes;
// the only broadcast is a scalar operand.

#include "pcreg/tensor.hpp"

namespace pcreg {

template <class T> BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b);
template <class T> BasicTensor<T> add(const BasicTensor<T>& a, T b);
template <class T> BasicTensor<T> sub(const BasicTensor<T>& a, const BasicTensor<T>& b);
template <class T> BasicTensor<T> mul(const BasicTensor<T>& a, const BasicTensor<T>& b);
template <class T> BasicTensor<T> scale(const BasicTensor<T>& a, T s);
/// Subgradient 0 at x == 0.
template <class T> BasicTensor<T> abs(const BasicTensor<T>& a);
template <class T> BasicTensor<T> square(const BasicTensor<T>& a);
/// Gradient passes only where 0 < x < 1.
template <class T> BasicTensor<T> clamp01(const BasicTensor<T>& a);
/// Subgradient 0 at x == 0.
template <class T> BasicTensor<T> relu(const BasicTensor<T>& a);
/// Arithmetic mean of all elements as a (1,1,1,1) tensor.
template <class T> BasicTensor<T> mean(const BasicTensor<T>& a);

}  // namespace pcreg
