#pragma once

#include <cstdint>
#include <span>

#include "mfp/graph.hpp"

namespace mfp {

// Mean pixelwise cross-entropy and (1 - mean soft Dice over classes 1..K-1),
// Dice smoothed by `smooth` in numerator and denominator and pooled over the
// whole batch per class.
struct LossTerms {
  double cross_entropy = 0.0;
  double dice_loss = 0.0;
  double total() const { return cross_entropy + dice_loss; }
};

// logits: B x K x H x W, labels: B*H*W class ids in row-major order.
template <typename T>
LossTerms loss_terms(const Tensor<T>& logits, std::span<const std::uint8_t> labels, double smooth = 1.0);

// Scalar node equal to loss_terms(...).total().
template <typename T>
Var<T> segmentation_loss(const Var<T>& logits, std::span<const std::uint8_t> labels, double smooth = 1.0);

}  // namespace mfp
