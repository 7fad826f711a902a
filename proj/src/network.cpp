#include "followup/network.hpp"

#include <cstring>
#include <fstream>

#ifdef _OPENMP
#include <omp.h>
#endif

#include <json.hpp>

#include "followup/errors.hpp"

namespace followup {

namespace {

constexpr double kBnEps = 1e-3;
constexpr double kBnMomentum = 0.99;

template <class T>
using MatX = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>;
template <class T>
using VecX = Eigen::Matrix<T, Eigen::Dynamic, 1>;

}  // namespace

int compute_receptive_field(const std::vector<int>& schedule) {
  int rf = 1;
  for (int d : schedule) {
    if (d < 1) throw ConfigError("dilation rates must be >= 1");
    rf += 2 * d;
  }
  return rf;
}

void NetworkConfig::validate() const {
  if (in_channels_a < 1 || in_channels_b < 1) throw ConfigError("network: input channel counts must be >= 1");
  if (pathway_kernels < 1 || head_kernels < 1) throw ConfigError("network: kernel counts must be >= 1");
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) throw ConfigError("network: dropout_rate must be in [0, 1)");
  if (dilation_schedule.empty()) throw ConfigError("network: empty dilation schedule");
  for (int d : dilation_schedule)
    if (d < 1) throw ConfigError("network: dilation rates must be >= 1");
  if (block_sizes.empty()) throw ConfigError("network: empty block list");
  int total = 0;
  for (int b : block_sizes) {
    if (b < 1) throw ConfigError("network: block sizes must be >= 1");
    total += b;
  }
  if (total != static_cast<int>(dilation_schedule.size()))
    throw ConfigError("network: block sizes must partition the dilation schedule");
}

std::vector<LayerSpec> NetworkConfig::layer_specs() const {
  validate();
  std::vector<LayerSpec> specs;
  const int n_layers = static_cast<int>(dilation_schedule.size());
  for (int p = 0; p < 2; ++p) {
    int in_ch = p == 0 ? in_channels_a : in_channels_b;
    int block = 0, in_block = 0;
    for (int i = 0; i < n_layers; ++i) {
      LayerSpec s;
      s.name = (p == 0 ? "pa" : "pb") + std::to_string(i + 1);
      s.kernel = 3;
      s.in_channels = in_ch;
      s.n_kernels = pathway_kernels;
      s.dilation = dilation_schedule[i];
      s.has_bn = true;
      s.activation = Activation::kRelu;
      s.pathway = p;
      ++in_block;
      if (in_block == block_sizes[block]) {
        s.block_tap = true;
        in_block = 0;
        ++block;
      }
      specs.push_back(std::move(s));
      in_ch = pathway_kernels;
    }
  }
  LayerSpec h1;
  h1.name = "head1";
  h1.kernel = 1;
  h1.in_channels = concat_channels();
  h1.n_kernels = head_kernels;
  h1.dilation = 1;
  h1.has_bn = true;
  h1.activation = Activation::kRelu;
  specs.push_back(std::move(h1));
  LayerSpec h2;
  h2.name = "head2";
  h2.kernel = 1;
  h2.in_channels = head_kernels;
  h2.n_kernels = 2;
  h2.dilation = 1;
  h2.has_bn = false;
  h2.activation = Activation::kSoftmax;
  specs.push_back(std::move(h2));
  return specs;
}

int NetworkConfig::receptive_field() const { return compute_receptive_field(dilation_schedule); }

std::size_t NetworkConfig::parameter_count() const {
  std::size_t n = 0;
  for (const auto& s : layer_specs()) {
    n += static_cast<std::size_t>(s.kernel) * s.kernel * s.in_channels * s.n_kernels;  // weights
    n += s.n_kernels;                                                                  // bias
    if (s.has_bn) n += 2 * static_cast<std::size_t>(s.n_kernels);                      // gamma, beta
  }
  return n;
}

std::set<std::string> head_layer_names() { return {"head1", "head2"}; }

NetworkParams build_network(const NetworkConfig& cfg, std::uint64_t seed) {
  const auto specs = cfg.layer_specs();
  RandomSource rng(seed);
  NetworkParams params;
  params.layers.resize(specs.size());
  for (std::size_t i = 0; i < specs.size(); ++i) {
    const LayerSpec& s = specs[i];
    auto& l = params.layers[i];
    const int fan_in = s.kernel * s.kernel * s.in_channels;
    const double limit = std::sqrt(6.0 / fan_in);
    l.w.resize(fan_in, s.n_kernels);
    for (Eigen::Index j = 0; j < l.w.size(); ++j)
      l.w.data()[j] = static_cast<float>(rng.uniform(-limit, limit));
    l.bias = VecX<float>::Zero(s.n_kernels);
    if (s.has_bn) {
      l.gamma = VecX<float>::Ones(s.n_kernels);
      l.beta = VecX<float>::Zero(s.n_kernels);
      l.run_mean = VecX<float>::Zero(s.n_kernels);
      l.run_var = VecX<float>::Ones(s.n_kernels);
    }
    l.trainable = true;
  }
  return params;
}

template <class T>
void set_trainable(BasicNetworkParams<T>& params, const NetworkConfig& cfg,
                   const std::set<std::string>& layer_names) {
  const auto specs = cfg.layer_specs();
  if (specs.size() != params.layers.size()) throw ShapeError("set_trainable: params do not match config");
  std::set<std::string> known;
  for (const auto& s : specs) known.insert(s.name);
  for (const auto& n : layer_names)
    if (!known.count(n)) throw LookupError("set_trainable: unknown layer '" + n + "'");
  for (std::size_t i = 0; i < specs.size(); ++i)
    params.layers[i].trainable = layer_names.count(specs[i].name) > 0;
}

// ---------------------------------------------------------------------------
// Engine internals
// ---------------------------------------------------------------------------

namespace {

// im2col for a 3x3 kernel with dilation d and zero 'same' padding.
// cols is (n*h*w) x (9*cin), column-major; column index = tap*cin + ci with
// tap = ty*3 + tx. Each column is a shifted copy of a channel plane, built
// from contiguous per-row runs.
template <class T>
void im2col3x3(const BasicTensor<T>& x, int d, MatX<T>& cols) {
  const int n = x.n, h = x.h, w = x.w, cin = x.c;
  const Eigen::Index rows = x.rows();
  cols.resize(rows, 9 * cin);
#pragma omp parallel for schedule(static) collapse(2)
  for (int tap = 0; tap < 9; ++tap) {
    for (int ci = 0; ci < cin; ++ci) {
      const int dy = (tap / 3 - 1) * d;
      const int dx = (tap % 3 - 1) * d;
      T* dst = cols.data() + static_cast<Eigen::Index>(tap * cin + ci) * rows;
      const int xlo = std::max(0, -dx), xhi = std::min(w, w - dx);
      for (int s = 0; s < n; ++s) {
        const T* src = x.plane(s, ci);
        for (int y = 0; y < h; ++y) {
          T* row = dst + (static_cast<Eigen::Index>(s) * h + y) * w;
          const int sy = y + dy;
          if (sy < 0 || sy >= h || xlo >= xhi) {
            std::fill(row, row + w, T(0));
            continue;
          }
          if (xlo > 0) std::fill(row, row + xlo, T(0));
          if (xhi < w) std::fill(row + xhi, row + w, T(0));
          std::memcpy(row + xlo, src + static_cast<Eigen::Index>(sy) * w + (xlo + dx),
                      sizeof(T) * (xhi - xlo));
        }
      }
    }
  }
}

// Y = A * B with the row range of Y split across threads (deterministic
// static partition; Eigen itself runs single-threaded).
template <class A, class B, class Y>
void gemm_rows(const A& a, const B& b, Y& y) {
  const Eigen::Index rows = a.rows();
  y.resize(rows, b.cols());
#pragma omp parallel
  {
#ifdef _OPENMP
    const int nt = omp_get_num_threads();
    const int tid = omp_get_thread_num();
#else
    const int nt = 1, tid = 0;
#endif
    const Eigen::Index chunk = (rows + nt - 1) / nt;
    const Eigen::Index r0 = std::min<Eigen::Index>(tid * chunk, rows);
    const Eigen::Index r1 = std::min<Eigen::Index>(r0 + chunk, rows);
    if (r1 > r0) y.middleRows(r0, r1 - r0).noalias() = a.middleRows(r0, r1 - r0) * b;
  }
}

// dW = A^T * B, split across the columns of A (rows of dW).
template <class A, class B, class Y>
void gemm_at_b(const A& a, const B& b, Y& y) {
  const Eigen::Index rows = a.cols();
  y.resize(rows, b.cols());
#pragma omp parallel
  {
#ifdef _OPENMP
    const int nt = omp_get_num_threads();
    const int tid = omp_get_thread_num();
#else
    const int nt = 1, tid = 0;
#endif
    const Eigen::Index chunk = (rows + nt - 1) / nt;
    const Eigen::Index r0 = std::min<Eigen::Index>(tid * chunk, rows);
    const Eigen::Index r1 = std::min<Eigen::Index>(r0 + chunk, rows);
    if (r1 > r0) y.middleRows(r0, r1 - r0).noalias() = a.middleCols(r0, r1 - r0).transpose() * b;
  }
}

template <class T>
struct ConvWorkspace {
  MatX<T> cols;
};

// Convolution with zero 'same' padding; kernel 1 or 3 (square).
template <class T>
void conv_forward(const BasicTensor<T>& x, const LayerParams<T>& lp, const LayerSpec& spec,
                  BasicTensor<T>& y, ConvWorkspace<T>& ws) {
  y.n = x.n;
  y.c = spec.n_kernels;
  y.h = x.h;
  y.w = x.w;
  if (spec.kernel == 1) {
    gemm_rows(x.m, lp.w, y.m);
  } else {
    im2col3x3(x, spec.dilation, ws.cols);
    gemm_rows(ws.cols, lp.w, y.m);
  }
  y.m.rowwise() += lp.bias.transpose();
}

// Batch normalization forward. Returns through `scale` the per-channel
// multiplier actually applied (needed by the frozen-path backward).
template <class T>
void bn_forward(const BasicTensor<T>& z, LayerParams<T> const& lp, bool use_batch_stats,
                BasicTensor<T>& out, VecX<T>& mean, VecX<T>& var, VecX<T>& scale,
                LayerParams<T>* update) {
  const int c = z.c;
  out.n = z.n;
  out.c = c;
  out.h = z.h;
  out.w = z.w;
  out.m.resize(z.m.rows(), c);
  mean.resize(c);
  var.resize(c);
  scale.resize(c);
  const T eps = static_cast<T>(kBnEps);
#pragma omp parallel for schedule(static)
  for (int j = 0; j < c; ++j) {
    T mu, v;
    if (use_batch_stats) {
      mu = z.m.col(j).mean();
      v = (z.m.col(j).array() - mu).square().mean();
    } else {
      mu = lp.run_mean[j];
      v = lp.run_var[j];
    }
    mean[j] = mu;
    var[j] = v;
    const T sc = lp.gamma[j] / std::sqrt(v + eps);
    scale[j] = sc;
    out.m.col(j).array() = z.m.col(j).array() * sc + (lp.beta[j] - mu * sc);
  }
  if (use_batch_stats && update) {
    auto& ul = *update;
    const T mom = static_cast<T>(kBnMomentum);
    ul.run_mean = ul.run_mean * mom + mean * (T(1) - mom);
    ul.run_var = ul.run_var * mom + var * (T(1) - mom);
  }
}

template <class T>
void relu_inplace(BasicTensor<T>& t) {
  t.m = t.m.cwiseMax(T(0));
}

template <class T>
void softmax2(const BasicTensor<T>& logits, BasicTensor<T>& probs) {
  probs.n = logits.n;
  probs.c = 2;
  probs.h = logits.h;
  probs.w = logits.w;
  probs.m.resize(logits.m.rows(), 2);
  auto z0 = logits.m.col(0).array(), z1 = logits.m.col(1).array();
  auto mx = z0.max(z1);
  probs.m.col(0).array() = (z0 - mx).exp();
  probs.m.col(1).array() = (z1 - mx).exp();
  auto sum = (probs.m.col(0).array() + probs.m.col(1).array()).eval();
  probs.m.col(0).array() /= sum;
  probs.m.col(1).array() /= sum;
}

// Inverted-dropout mask with values {0, 1/(1-rate)}; two elements per
// 64-bit draw, 24-bit keep threshold.
template <class T>
void fill_dropout_mask(BasicTensor<T>& mask, double rate, RandomSource& rng) {
  const T scale = static_cast<T>(1.0 / (1.0 - rate));
  const std::uint32_t threshold = static_cast<std::uint32_t>(std::llround(rate * 16777216.0));
  T* p = mask.m.data();
  const Eigen::Index total = mask.m.size();
  for (Eigen::Index i = 0; i < total; i += 2) {
    const std::uint64_t u = rng.next_u64();
    p[i] = ((static_cast<std::uint32_t>(u) >> 8) >= threshold) ? scale : T(0);
    if (i + 1 < total) p[i + 1] = ((static_cast<std::uint32_t>(u >> 32) >> 8) >= threshold) ? scale : T(0);
  }
}

}  // namespace

// Per-layer forward state kept for the backward pass.
template <class T>
struct LayerIO {
  BasicTensor<T> z;    // conv output, pre-BN
  BasicTensor<T> a;    // layer output
  VecX<T> mean, var, scale;
  bool batch_stats = false;
};

template <class T>
struct ForwardCache {
  BasicTensor<T> in_a, in_b;
  std::vector<LayerIO<T>> io;
  BasicTensor<T> d1, d2;        // head inputs after dropout
  BasicTensor<T> mask1, mask2;  // dropout masks; empty when dropout off
  bool dropout_used = false;
};

template <class T>
ForwardCache<T>* new_forward_cache() {
  return new ForwardCache<T>();
}
template <class T>
void free_forward_cache(ForwardCache<T>* p) {
  delete p;
}

template <class T>
BasicTensor<T> net_forward(const NetworkConfig& cfg, const BasicNetworkParams<T>& params,
                           const BasicTensor<T>& in_a, const BasicTensor<T>& in_b, Mode mode,
                           bool dropout_on, RandomSource* rng, ForwardCache<T>* cache,
                           BasicNetworkParams<T>* bn_update) {
  const auto specs = cfg.layer_specs();
  if (params.layers.size() != specs.size()) throw ShapeError("net_forward: params do not match config");
  if (in_a.c != cfg.in_channels_a || in_b.c != cfg.in_channels_b)
    throw ShapeError("net_forward: input channel counts do not match config");
  if (in_a.n != in_b.n || in_a.h != in_b.h || in_a.w != in_b.w)
    throw ShapeError("net_forward: pathway inputs disagree on shape");
  if (in_a.h < 1 || in_a.w < 1 || in_a.n < 1) throw ShapeError("net_forward: empty input");

  const bool use_dropout = dropout_on && cfg.dropout_rate > 0.0;
  if (use_dropout && rng == nullptr) throw ConfigError("net_forward: dropout requires a random source");

  const int n_path = static_cast<int>(cfg.dilation_schedule.size());
  const int taps_per_path = cfg.n_blocks();

  ForwardCache<T> local;
  ForwardCache<T>& cc = cache ? *cache : local;
  const bool keep = cache != nullptr;
  cc.io.resize(specs.size());
  cc.dropout_used = use_dropout;
  if (keep) {
    cc.in_a = in_a;
    cc.in_b = in_b;
  }

  ConvWorkspace<T> ws;
  BasicTensor<T> concat(in_a.n, cfg.concat_channels(), in_a.h, in_a.w);

  for (int p = 0; p < 2; ++p) {
    const BasicTensor<T>* x = p == 0 ? &in_a : &in_b;
    BasicTensor<T> carry;  // holds the previous layer output when not cached
    int tap_slot = p * taps_per_path;
    for (int i = 0; i < n_path; ++i) {
      const int li = p * n_path + i;
      const LayerSpec& s = specs[li];
      const auto& lp = params.layers[li];
      LayerIO<T>& io = cc.io[li];
      const bool batch_stats = mode == Mode::kTrain && lp.trainable;
      conv_forward(*x, lp, s, io.z, ws);
      bn_forward(io.z, lp, batch_stats, io.a, io.mean, io.var, io.scale,
                 bn_update ? &bn_update->layers[li] : nullptr);
      io.batch_stats = batch_stats;
      relu_inplace(io.a);
      if (s.block_tap) {
        concat.m.middleCols(static_cast<Eigen::Index>(tap_slot) * cfg.pathway_kernels, cfg.pathway_kernels) =
            io.a.m;
        ++tap_slot;
      }
      if (keep) {
        x = &io.a;
      } else {
        // retain only what the next layer needs
        carry = std::move(io.a);
        io.z.m.resize(0, 0);
        x = &carry;
      }
    }
  }

  const int h1 = static_cast<int>(specs.size()) - 2;
  const int h2 = h1 + 1;

  // dropout before the first head layer
  BasicTensor<T>* d1 = &concat;
  if (use_dropout) {
    cc.mask1.resize(concat.n, concat.c, concat.h, concat.w);
    fill_dropout_mask(cc.mask1, cfg.dropout_rate, *rng);
    cc.d1.n = concat.n;
    cc.d1.c = concat.c;
    cc.d1.h = concat.h;
    cc.d1.w = concat.w;
    cc.d1.m = concat.m.cwiseProduct(cc.mask1.m);
    d1 = &cc.d1;
  } else if (keep) {
    cc.d1 = std::move(concat);
    cc.mask1.m.resize(0, 0);
    d1 = &cc.d1;
  }

  {
    const LayerSpec& s = specs[h1];
    const auto& lp = params.layers[h1];
    LayerIO<T>& io = cc.io[h1];
    const bool batch_stats = mode == Mode::kTrain && lp.trainable;
    conv_forward(*d1, lp, s, io.z, ws);
    bn_forward(io.z, lp, batch_stats, io.a, io.mean, io.var, io.scale,
               bn_update ? &bn_update->layers[h1] : nullptr);
    io.batch_stats = batch_stats;
    relu_inplace(io.a);
  }

  // dropout after the first head layer
  BasicTensor<T>* d2 = &cc.io[h1].a;
  if (use_dropout) {
    cc.mask2.resize(d2->n, d2->c, d2->h, d2->w);
    fill_dropout_mask(cc.mask2, cfg.dropout_rate, *rng);
    cc.d2.n = d2->n;
    cc.d2.c = d2->c;
    cc.d2.h = d2->h;
    cc.d2.w = d2->w;
    cc.d2.m = d2->m.cwiseProduct(cc.mask2.m);
    d2 = &cc.d2;
  } else {
    cc.mask2.m.resize(0, 0);
  }

  BasicTensor<T> logits;
  conv_forward(*d2, params.layers[h2], specs[h2], logits, ws);
  if (keep && !use_dropout) cc.d2 = *d2;  // head2 input needed for its weight gradient

  BasicTensor<T> probs;
  softmax2(logits, probs);
  return probs;
}

namespace {

// Backward through BN. dy is consumed; returns dz and accumulates dgamma,
// dbeta when wanted.
template <class T>
void bn_backward(const BasicTensor<T>& z, const LayerIO<T>& io, const LayerParams<T>& lp,
                 const BasicTensor<T>& dy, BasicTensor<T>& dz, VecX<T>* dgamma, VecX<T>* dbeta) {
  const int c = z.c;
  const Eigen::Index n = z.m.rows();
  dz.n = z.n;
  dz.c = c;
  dz.h = z.h;
  dz.w = z.w;
  dz.m.resize(n, c);
  const T eps = static_cast<T>(kBnEps);
  if (dgamma) dgamma->resize(c);
  if (dbeta) dbeta->resize(c);
#pragma omp parallel for schedule(static)
  for (int j = 0; j < c; ++j) {
    const T ivs = T(1) / std::sqrt(io.var[j] + eps);
    auto xc = (z.m.col(j).array() - io.mean[j]).eval();
    auto dyj = dy.m.col(j).array();
    if (dgamma) (*dgamma)[j] = (dyj * xc * ivs).sum();
    if (dbeta) (*dbeta)[j] = dyj.sum();
    if (io.batch_stats) {
      // batch statistics couple every pixel of the channel
      const T g = lp.gamma[j];
      const T inv_n = T(1) / static_cast<T>(n);
      const T sum_dy = dyj.sum();
      const T sum_dy_xhat = (dyj * xc).sum() * ivs;
      dz.m.col(j).array() = (g * ivs) * (dyj - inv_n * sum_dy - xc * ivs * (inv_n * sum_dy_xhat));
    } else {
      dz.m.col(j).array() = dyj * io.scale[j];
    }
  }
}

// Backward of a convolution: weight/bias gradients and optionally the
// gradient with respect to the input (computed as a convolution of dy with
// the spatially flipped, channel-transposed kernel).
template <class T>
void conv_backward(const BasicTensor<T>& x, const LayerParams<T>& lp, const LayerSpec& spec,
                   const BasicTensor<T>& dy, bool want_dw, typename LayerParams<T>::Mat* dw,
                   VecX<T>* db, bool want_dx, BasicTensor<T>* dx, ConvWorkspace<T>& ws) {
  const int cin = spec.in_channels, cout = spec.n_kernels;
  if (spec.kernel == 1) {
    if (want_dw) {
      gemm_at_b(x.m, dy.m, *dw);
      *db = dy.m.colwise().sum();
    }
    if (want_dx) {
      dx->n = x.n;
      dx->c = cin;
      dx->h = x.h;
      dx->w = x.w;
      gemm_rows(dy.m, lp.w.transpose().eval(), dx->m);
    }
    return;
  }
  if (want_dw) {
    im2col3x3(x, spec.dilation, ws.cols);
    gemm_at_b(ws.cols, dy.m, *dw);
    *db = dy.m.colwise().sum();
  }
  if (want_dx) {
    MatX<T> wflip(9 * cout, cin);
    for (int t = 0; t < 9; ++t)
      for (int co = 0; co < cout; ++co)
        for (int ci = 0; ci < cin; ++ci)
          wflip(static_cast<Eigen::Index>(t) * cout + co, ci) =
              lp.w(static_cast<Eigen::Index>(8 - t) * cin + ci, co);
    im2col3x3(dy, spec.dilation, ws.cols);
    dx->n = x.n;
    dx->c = cin;
    dx->h = x.h;
    dx->w = x.w;
    gemm_rows(ws.cols, wflip, dx->m);
  }
}

}  // namespace

template <class T>
void net_backward(const NetworkConfig& cfg, const BasicNetworkParams<T>& params,
                  const ForwardCache<T>& cache, const BasicTensor<T>& dlogits,
                  BasicGradients<T>& grads) {
  const auto specs = cfg.layer_specs();
  if (params.layers.size() != specs.size()) throw ShapeError("net_backward: params do not match config");
  grads.layers.resize(specs.size());

  const int n_path = static_cast<int>(cfg.dilation_schedule.size());
  const int taps_per_path = cfg.n_blocks();
  const int h1 = static_cast<int>(specs.size()) - 2;
  const int h2 = h1 + 1;

  bool any_pathway = false;
  for (int li = 0; li < 2 * n_path; ++li) any_pathway = any_pathway || params.layers[li].trainable;

  ConvWorkspace<T> ws;

  // head2 (1x1, softmax handled by the loss gradient)
  BasicTensor<T> dcur;
  {
    const auto& lp = params.layers[h2];
    auto& g = grads.layers[h2];
    const bool want_dx = params.layers[h1].trainable || any_pathway;
    conv_backward(cache.d2, lp, specs[h2], dlogits, lp.trainable, &g.w, &g.bias, want_dx, &dcur, ws);
    if (!want_dx) return;
  }
  if (cache.dropout_used) dcur.m = dcur.m.cwiseProduct(cache.mask2.m);

  // head1
  BasicTensor<T> dconcat;
  {
    const auto& lp = params.layers[h1];
    const LayerIO<T>& io = cache.io[h1];
    auto& g = grads.layers[h1];
    dcur.m = dcur.m.cwiseProduct((io.a.m.array() > T(0)).template cast<T>().matrix());
    BasicTensor<T> dz;
    bn_backward(io.z, io, lp, dcur, dz, lp.trainable ? &g.gamma : nullptr,
                lp.trainable ? &g.beta : nullptr);
    conv_backward(cache.d1, lp, specs[h1], dz, lp.trainable, &g.w, &g.bias, any_pathway, &dconcat, ws);
  }
  if (!any_pathway) return;
  if (cache.dropout_used) dconcat.m = dconcat.m.cwiseProduct(cache.mask1.m);

  // pathways, last layer first; block tails additionally receive their
  // slice of the concatenation gradient
  for (int p = 0; p < 2; ++p) {
    BasicTensor<T> dnext;  // gradient flowing from layer i+1
    int tap_slot = p * taps_per_path + taps_per_path;
    for (int i = n_path - 1; i >= 0; --i) {
      const int li = p * n_path + i;
      const LayerSpec& s = specs[li];
      const auto& lp = params.layers[li];
      const LayerIO<T>& io = cache.io[li];
      auto& g = grads.layers[li];

      BasicTensor<T> da;
      if (s.block_tap) {
        --tap_slot;
        da.n = io.a.n;
        da.c = io.a.c;
        da.h = io.a.h;
        da.w = io.a.w;
        da.m = dconcat.m.middleCols(static_cast<Eigen::Index>(tap_slot) * cfg.pathway_kernels,
                                    cfg.pathway_kernels);
        if (dnext.m.size() > 0) da.m += dnext.m;
      } else {
        da = std::move(dnext);
      }

      da.m = da.m.cwiseProduct((io.a.m.array() > T(0)).template cast<T>().matrix());
      BasicTensor<T> dz;
      bn_backward(io.z, io, lp, da, dz, lp.trainable ? &g.gamma : nullptr,
                  lp.trainable ? &g.beta : nullptr);

      const BasicTensor<T>& input =
          i == 0 ? (p == 0 ? cache.in_a : cache.in_b) : cache.io[li - 1].a;
      const bool want_dx = i > 0;
      conv_backward(input, lp, s, dz, lp.trainable, &g.w, &g.bias, want_dx, &dnext, ws);
    }
  }
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

namespace {

constexpr char kCkptMagic[8] = {'F', 'U', 'F', 'T', 'C', 'K', 'P', '1'};

nlohmann::json config_to_json(const NetworkConfig& c) {
  return {{"in_channels_a", c.in_channels_a},
          {"in_channels_b", c.in_channels_b},
          {"pathway_kernels", c.pathway_kernels},
          {"head_kernels", c.head_kernels},
          {"dropout_rate", c.dropout_rate},
          {"dilation_schedule", c.dilation_schedule},
          {"block_sizes", c.block_sizes}};
}

NetworkConfig config_from_json(const nlohmann::json& j) {
  NetworkConfig c;
  c.in_channels_a = j.at("in_channels_a").get<int>();
  c.in_channels_b = j.at("in_channels_b").get<int>();
  c.pathway_kernels = j.at("pathway_kernels").get<int>();
  c.head_kernels = j.at("head_kernels").get<int>();
  c.dropout_rate = j.at("dropout_rate").get<double>();
  c.dilation_schedule = j.at("dilation_schedule").get<std::vector<int>>();
  c.block_sizes = j.at("block_sizes").get<std::vector<int>>();
  return c;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const NetworkConfig& cfg,
                     const NetworkParams& params) {
  const auto specs = cfg.layer_specs();
  if (specs.size() != params.layers.size()) throw ShapeError("save_checkpoint: params do not match config");

  nlohmann::json layers = nlohmann::json::array();
  for (std::size_t i = 0; i < specs.size(); ++i) {
    layers.push_back({{"name", specs[i].name},
                      {"w_rows", params.layers[i].w.rows()},
                      {"w_cols", params.layers[i].w.cols()},
                      {"has_bn", specs[i].has_bn},
                      {"trainable", params.layers[i].trainable}});
  }
  nlohmann::json header = {
      {"format_version", 1}, {"config", config_to_json(cfg)}, {"layers", layers}};
  const std::string htext = header.dump();

  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open checkpoint for writing: " + path.string());
  out.write(kCkptMagic, 8);
  const std::uint64_t hlen = htext.size();
  out.write(reinterpret_cast<const char*>(&hlen), 8);
  out.write(htext.data(), static_cast<std::streamsize>(htext.size()));
  auto dump = [&](const auto& mat) {
    out.write(reinterpret_cast<const char*>(mat.data()),
              static_cast<std::streamsize>(mat.size() * sizeof(float)));
  };
  for (std::size_t i = 0; i < params.layers.size(); ++i) {
    const auto& l = params.layers[i];
    dump(l.w);
    dump(l.bias);
    if (specs[i].has_bn) {
      dump(l.gamma);
      dump(l.beta);
      dump(l.run_mean);
      dump(l.run_var);
    }
  }
  if (!out) throw IoError("short write to checkpoint: " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint: " + path.string());
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, kCkptMagic, 8) != 0)
    throw FormatError("not a checkpoint file: " + path.string());
  std::uint64_t hlen = 0;
  in.read(reinterpret_cast<char*>(&hlen), 8);
  if (!in || hlen > (1u << 26)) throw FormatError("bad checkpoint header length: " + path.string());
  std::string htext(hlen, '\0');
  in.read(htext.data(), static_cast<std::streamsize>(hlen));
  if (!in) throw FormatError("truncated checkpoint header: " + path.string());

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(htext);
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError("bad checkpoint header JSON: " + std::string(e.what()));
  }
  if (header.at("format_version").get<int>() != 1)
    throw UnsupportedError("unsupported checkpoint format version in " + path.string());

  Checkpoint ck;
  ck.config = config_from_json(header.at("config"));
  const auto specs = ck.config.layer_specs();
  const auto& jl = header.at("layers");
  if (jl.size() != specs.size()) throw FormatError("checkpoint layer list does not match its config");

  ck.params.layers.resize(specs.size());
  auto slurp = [&](auto& mat, Eigen::Index rows, Eigen::Index cols) {
    mat.resize(rows, cols);
    in.read(reinterpret_cast<char*>(mat.data()),
            static_cast<std::streamsize>(mat.size() * sizeof(float)));
    if (!in) throw FormatError("truncated checkpoint payload: " + path.string());
  };
  for (std::size_t i = 0; i < specs.size(); ++i) {
    const auto& je = jl[i];
    if (je.at("name").get<std::string>() != specs[i].name)
      throw FormatError("checkpoint layer order does not match its config");
    auto& l = ck.params.layers[i];
    slurp(l.w, je.at("w_rows").get<Eigen::Index>(), je.at("w_cols").get<Eigen::Index>());
    slurp(l.bias, specs[i].n_kernels, 1);
    if (specs[i].has_bn) {
      slurp(l.gamma, specs[i].n_kernels, 1);
      slurp(l.beta, specs[i].n_kernels, 1);
      slurp(l.run_mean, specs[i].n_kernels, 1);
      slurp(l.run_var, specs[i].n_kernels, 1);
    }
    l.trainable = je.at("trainable").get<bool>();
  }
  return ck;
}

// ---------------------------------------------------------------------------
// Explicit instantiations
// ---------------------------------------------------------------------------

template struct ForwardCache<float>;
template struct ForwardCache<double>;

template ForwardCache<float>* new_forward_cache<float>();
template ForwardCache<double>* new_forward_cache<double>();
template void free_forward_cache<float>(ForwardCache<float>*);
template void free_forward_cache<double>(ForwardCache<double>*);

template void set_trainable<float>(BasicNetworkParams<float>&, const NetworkConfig&,
                                   const std::set<std::string>&);
template void set_trainable<double>(BasicNetworkParams<double>&, const NetworkConfig&,
                                    const std::set<std::string>&);

template BasicTensor<float> net_forward<float>(const NetworkConfig&, const BasicNetworkParams<float>&,
                                               const BasicTensor<float>&, const BasicTensor<float>&,
                                               Mode, bool, RandomSource*, ForwardCache<float>*,
                                               BasicNetworkParams<float>*);
template BasicTensor<double> net_forward<double>(const NetworkConfig&, const BasicNetworkParams<double>&,
                                                 const BasicTensor<double>&, const BasicTensor<double>&,
                                                 Mode, bool, RandomSource*, ForwardCache<double>*,
                                                 BasicNetworkParams<double>*);

template void net_backward<float>(const NetworkConfig&, const BasicNetworkParams<float>&,
                                  const ForwardCache<float>&, const BasicTensor<float>&,
                                  BasicGradients<float>&);
template void net_backward<double>(const NetworkConfig&, const BasicNetworkParams<double>&,
                                   const ForwardCache<double>&, const BasicTensor<double>&,
                                   BasicGradients<double>&);

}  // namespace followup
