#include "followup/loss.hpp"

#include <cmath>

namespace followup {

namespace {
constexpr double kClip = 1e-7;

template <class T>
void check_shapes(const BasicTensor<T>& probs, const BasicTensor<T>& label, const BasicTensor<T>& weights) {
  if (probs.c != 2) throw ShapeError("cross entropy expects 2-channel probabilities");
  if (label.c != 1 || weights.c != 1 || label.n != probs.n || label.h != probs.h || label.w != probs.w ||
      !label.same_shape(weights))
    throw ShapeError("cross entropy: probs/label/weights shapes disagree");
}
}  // namespace

template <class T>
double weighted_cross_entropy(const BasicTensor<T>& probs, const BasicTensor<T>& label,
                              const BasicTensor<T>& weights) {
  check_shapes(probs, label, weights);
  const Eigen::Index n = probs.m.rows();
  const T* p0 = probs.m.data();
  const T* p1 = probs.m.data() + n;
  const T* lab = label.m.data();
  const T* wgt = weights.m.data();
  double acc = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const double p = lab[i] != T(0) ? p1[i] : p0[i];
    const double clipped = std::min(1.0 - kClip, std::max(kClip, p));
    acc += static_cast<double>(wgt[i]) * std::log(clipped);
  }
  return -acc / static_cast<double>(n);
}

template <class T>
BasicTensor<T> cross_entropy_logit_gradient(const BasicTensor<T>& probs, const BasicTensor<T>& label,
                                            const BasicTensor<T>& weights) {
  check_shapes(probs, label, weights);
  BasicTensor<T> d(probs.n, 2, probs.h, probs.w);
  const Eigen::Index n = probs.m.rows();
  const T inv_n = T(1) / static_cast<T>(n);
  const T* p0 = probs.m.data();
  const T* p1 = probs.m.data() + n;
  const T* lab = label.m.data();
  const T* wgt = weights.m.data();
  T* d0 = d.m.data();
  T* d1 = d.m.data() + n;
  for (Eigen::Index i = 0; i < n; ++i) {
    const T w = wgt[i] * inv_n;
    const bool lesion = lab[i] != T(0);
    d0[i] = w * (p0[i] - (lesion ? T(0) : T(1)));
    d1[i] = w * (p1[i] - (lesion ? T(1) : T(0)));
  }
  return d;
}

template <class T>
BasicTensor<T> class_weight_map(const BasicTensor<T>& label, double background_weight,
                                double lesion_weight) {
  BasicTensor<T> w(label.n, 1, label.h, label.w);
  const T bg = static_cast<T>(background_weight), fg = static_cast<T>(lesion_weight);
  for (Eigen::Index i = 0; i < label.m.size(); ++i)
    w.m.data()[i] = label.m.data()[i] != T(0) ? fg : bg;
  return w;
}

template double weighted_cross_entropy<float>(const BasicTensor<float>&, const BasicTensor<float>&,
                                              const BasicTensor<float>&);
template double weighted_cross_entropy<double>(const BasicTensor<double>&, const BasicTensor<double>&,
                                               const BasicTensor<double>&);
template BasicTensor<float> cross_entropy_logit_gradient<float>(const BasicTensor<float>&,
                                                                const BasicTensor<float>&,
                                                                const BasicTensor<float>&);
template BasicTensor<double> cross_entropy_logit_gradient<double>(const BasicTensor<double>&,
                                                                  const BasicTensor<double>&,
                                                                  const BasicTensor<double>&);
template BasicTensor<float> class_weight_map<float>(const BasicTensor<float>&, double, double);
template BasicTensor<double> class_weight_map<double>(const BasicTensor<double>&, double, double);

}  // namespace followup
