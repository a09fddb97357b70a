#pragma once

#include "mfp/graph.hpp"

namespace mfp {

enum class ElementwiseKind { Add, Sub, Mul };

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b);
template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b);
template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b);
template <typename T>
Var<T> scale(const Var<T>& a, double s);

// Tensor-tensor form of the elementwise family; shapes must match.
template <typename T>
Var<T> elementwise(ElementwiseKind kind, const Var<T>& a, const Var<T>& b);

// Sum / mean of every element, returned as shape [1].
template <typename T>
Var<T> sum(const Var<T>& a);
template <typename T>
Var<T> mean(const Var<T>& a);

// Same data, new shape of equal element count.
template <typename T>
Var<T> reshape(const Var<T>& a, Shape shape);

// Axis permutation for rank <= 4: out.shape[i] = a.shape[axes[i]].
template <typename T>
Var<T> permute(const Var<T>& a, std::vector<int> axes);

// Concatenation along axis 1 of tensors that agree on every other axis.
template <typename T>
Var<T> concat_channels(const std::vector<Var<T>>& parts);

// Elementwise clamp to [lo, hi]; gradient passes only inside the interval.
template <typename T>
Var<T> clamp(const Var<T>& a, double lo, double hi);

}  // namespace mfp
