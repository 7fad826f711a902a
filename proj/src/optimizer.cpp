#include "followup/optimizer.hpp"

#include <cmath>

namespace followup {

namespace {

template <class T, class M>
void update_tensor(M& param, const M& grad, M& m, M& v, const AdamConfig& cfg, double bc1, double bc2) {
  if (grad.size() == 0) return;
  if (m.size() == 0) {
    m = M::Zero(param.rows(), param.cols());
    v = M::Zero(param.rows(), param.cols());
  }
  const T b1 = static_cast<T>(cfg.beta1), b2 = static_cast<T>(cfg.beta2);
  m = b1 * m + (T(1) - b1) * grad;
  v = (b2 * v.array() + (T(1) - b2) * grad.array().square()).matrix();
  const T lr = static_cast<T>(cfg.learning_rate);
  const T eps = static_cast<T>(cfg.eps);
  param.array() -= lr * (m.array() / static_cast<T>(bc1)) /
                   ((v.array() / static_cast<T>(bc2)).sqrt() + eps);
}

}  // namespace

template <class T>
AdamState<T> AdamState<T>::zeros_like(const BasicNetworkParams<T>& params) {
  AdamState<T> st;
  st.layers.resize(params.layers.size());
  st.step = 0;
  return st;
}

template <class T>
void adam_step(BasicNetworkParams<T>& params, const BasicGradients<T>& grads, AdamState<T>& state,
               const AdamConfig& cfg) {
  if (grads.layers.size() != params.layers.size())
    throw ShapeError("adam_step: gradient layout does not match params");
  if (state.layers.size() != params.layers.size())
    throw ShapeError("adam_step: state layout does not match params");
  ++state.step;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.layers.size(); ++i) {
    auto& l = params.layers[i];
    if (!l.trainable) continue;
    const auto& g = grads.layers[i];
    auto& mo = state.layers[i];
    update_tensor<T>(l.w, g.w, mo.mw, mo.vw, cfg, bc1, bc2);
    update_tensor<T>(l.bias, g.bias, mo.mb, mo.vb, cfg, bc1, bc2);
    if (l.gamma.size() > 0) {
      update_tensor<T>(l.gamma, g.gamma, mo.mg, mo.vg, cfg, bc1, bc2);
      update_tensor<T>(l.beta, g.beta, mo.mbeta, mo.vbeta, cfg, bc1, bc2);
    }
  }
}

template struct AdamState<float>;
template struct AdamState<double>;
template void adam_step<float>(BasicNetworkParams<float>&, const BasicGradients<float>&,
                               AdamState<float>&, const AdamConfig&);
template void adam_step<double>(BasicNetworkParams<double>&, const BasicGradients<double>&,
                                AdamState<double>&, const AdamConfig&);

}  // namespace followup
