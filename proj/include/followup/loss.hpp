#pragma once

#include "followup/tensor.hpp"

namespace followup {

// Weighted categorical cross-entropy, mean over pixels:
//   loss = -(1/N) * sum_p w_p * log(clip(probs[p, label_p]))
// with probabilities clipped to [1e-7, 1 - 1e-7] and N the pixel count.
// probs has 2 channels; label is a {0,1} plane; weights are non-negative.
template <class T>
double weighted_cross_entropy(const BasicTensor<T>& probs, const BasicTensor<T>& label,
                              const BasicTensor<T>& weights);

// Gradient of the loss above with respect to the pre-softmax logits:
//   d/dz = (w/N) * (probs - onehot(label)).
// Zero-weight pixels get an exactly-zero gradient. (The probability clip is
// inactive in this fused form; it only guards the log.)
template <class T>
BasicTensor<T> cross_entropy_logit_gradient(const BasicTensor<T>& probs, const BasicTensor<T>& label,
                                            const BasicTensor<T>& weights);

// Per-pixel class weights: lesion_weight on label-1 pixels, background_weight
// elsewhere.
template <class T>
BasicTensor<T> class_weight_map(const BasicTensor<T>& label, double background_weight,
                                double lesion_weight);

}  // namespace followup
