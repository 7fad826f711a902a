#pragma once

#include "followup/network.hpp"

namespace followup {

struct AdamConfig {
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// First/second moment accumulators for every trainable tensor, plus the
// shared step counter. Moments start at zero.
template <class T>
struct AdamState {
  struct Moments {
    typename LayerParams<T>::Mat mw, vw;
    typename LayerParams<T>::Vec mb, vb, mg, vg, mbeta, vbeta;
  };
  std::vector<Moments> layers;
  long step = 0;

  static AdamState zeros_like(const BasicNetworkParams<T>& params);
};

// One bias-corrected Adam update on every trainable tensor. Zero gradients
// with zero moments leave parameters bit-identical.
template <class T>
void adam_step(BasicNetworkParams<T>& params, const BasicGradients<T>& grads, AdamState<T>& state,
               const AdamConfig& cfg);

}  // namespace followup
