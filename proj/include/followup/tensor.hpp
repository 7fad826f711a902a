#pragma once

#include <Eigen/Dense>

#include "followup/errors.hpp"

namespace followup {

// Batched 2D feature map with C channels, stored as an (n*h*w) x c
// column-major matrix. Each column holds one channel as n contiguous
// h*w planes, so per-channel statistics and plane copies are contiguous
// and the matrix multiplies convolution needs are plain GEMMs.
template <class T>
struct BasicTensor {
  int n = 0, c = 0, h = 0, w = 0;
  Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic> m;

  BasicTensor() = default;
  BasicTensor(int n_, int c_, int h_, int w_) { resize(n_, c_, h_, w_); }

  void resize(int n_, int c_, int h_, int w_) {
    n = n_;
    c = c_;
    h = h_;
    w = w_;
    m.setZero(static_cast<Eigen::Index>(n) * h * w, c);
  }

  Eigen::Index plane_size() const { return static_cast<Eigen::Index>(h) * w; }
  Eigen::Index rows() const { return m.rows(); }

  T* plane(int sample, int channel) {
    return m.data() + static_cast<Eigen::Index>(channel) * rows() + static_cast<Eigen::Index>(sample) * plane_size();
  }
  const T* plane(int sample, int channel) const {
    return m.data() + static_cast<Eigen::Index>(channel) * rows() + static_cast<Eigen::Index>(sample) * plane_size();
  }

  T& at(int sample, int channel, int y, int x) {
    return plane(sample, channel)[static_cast<Eigen::Index>(y) * w + x];
  }
  T at(int sample, int channel, int y, int x) const {
    return plane(sample, channel)[static_cast<Eigen::Index>(y) * w + x];
  }

  bool same_shape(const BasicTensor& o) const { return n == o.n && c == o.c && h == o.h && w == o.w; }

  template <class U>
  BasicTensor<U> cast() const {
    BasicTensor<U> out(n, c, h, w);
    out.m = m.template cast<U>();
    return out;
  }
};

using Tensor = BasicTensor<float>;

}  // namespace followup
