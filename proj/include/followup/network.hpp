#pragma once

#include <cstdint>
#include <filesystem>
#include <set>
#include <string>
#include <vector>

#include "followup/rng.hpp"
#include "followup/tensor.hpp"

namespace followup {

enum class Activation { kRelu, kSoftmax, kNone };

// One convolutional layer of the network, fully determined by the config.
struct LayerSpec {
  std::string name;
  int kernel = 3;       // square kernel side, 1 or 3
  int in_channels = 0;
  int n_kernels = 0;
  int dilation = 1;
  bool has_bn = true;
  Activation activation = Activation::kRelu;
  int pathway = -1;     // 0 = a, 1 = b, -1 = head
  bool block_tap = false;  // this layer's output feeds the concatenation
};

// Dual-pathway dilated FCN: per pathway 13 3x3 convolutions (the first two
// plain, the rest dilated) in five blocks; the block tails of both pathways
// are concatenated and passed through two 1x1 head layers, softmax last.
// Dropout sits before and after the first head layer.
struct NetworkConfig {
  int in_channels_a = 2;
  int in_channels_b = 2;
  int pathway_kernels = 64;
  int head_kernels = 128;
  double dropout_rate = 0.2;
  std::vector<int> dilation_schedule = {1, 1, 2, 2, 4, 4, 8, 8, 16, 8, 4, 2, 1};
  std::vector<int> block_sizes = {2, 2, 2, 3, 4};

  void validate() const;  // throws ConfigError
  std::vector<LayerSpec> layer_specs() const;
  int n_blocks() const { return static_cast<int>(block_sizes.size()); }
  int concat_channels() const { return 2 * n_blocks() * pathway_kernels; }
  int receptive_field() const;
  std::size_t parameter_count() const;  // learnable scalars (BN running stats excluded)

  bool operator==(const NetworkConfig&) const = default;
};

// Receptive field side length of a stack of stride-1 3x3 convolutions with
// the given dilations: 1 + sum(2*d); the 1x1 head layers add nothing.
int compute_receptive_field(const std::vector<int>& schedule);

template <class T>
struct LayerParams {
  using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>;
  using Vec = Eigen::Matrix<T, Eigen::Dynamic, 1>;
  Mat w;    // (kernel*kernel*in_channels) x n_kernels, column-major
  Vec bias;
  Vec gamma, beta, run_mean, run_var;  // sized n_kernels when the layer has BN
  bool trainable = true;

  template <class U>
  LayerParams<U> cast() const {
    LayerParams<U> o;
    o.w = w.template cast<U>();
    o.bias = bias.template cast<U>();
    o.gamma = gamma.template cast<U>();
    o.beta = beta.template cast<U>();
    o.run_mean = run_mean.template cast<U>();
    o.run_var = run_var.template cast<U>();
    o.trainable = trainable;
    return o;
  }
};

template <class T>
struct BasicNetworkParams {
  std::vector<LayerParams<T>> layers;  // aligned with NetworkConfig::layer_specs()

  template <class U>
  BasicNetworkParams<U> cast() const {
    BasicNetworkParams<U> o;
    o.layers.reserve(layers.size());
    for (const auto& l : layers) o.layers.push_back(l.template cast<U>());
    return o;
  }
};

using NetworkParams = BasicNetworkParams<float>;

// Gradients mirror the parameter layout; frozen layers keep empty tensors.
template <class T>
struct BasicGradients {
  struct LayerGrad {
    typename LayerParams<T>::Mat w;
    typename LayerParams<T>::Vec bias, gamma, beta;
  };
  std::vector<LayerGrad> layers;
};

// He-uniform initialization for all conv weights (bound sqrt(6/fan_in)),
// zero biases, identity BN with unit running variance; every layer trainable.
NetworkParams build_network(const NetworkConfig& cfg, std::uint64_t seed);

// Sets the trainable flag to true exactly for the named layers and false for
// all others; tensor values are untouched. Unknown names throw LookupError.
template <class T>
void set_trainable(BasicNetworkParams<T>& params, const NetworkConfig& cfg,
                   const std::set<std::string>& layer_names);

// The two 1x1 head layers - the layers updated by patient-specific tuning.
std::set<std::string> head_layer_names();

enum class Mode { kTrain, kInfer };

template <class T>
struct ForwardCache;  // opaque; defined in the implementation

template <class T>
ForwardCache<T>* new_forward_cache();
template <class T>
void free_forward_cache(ForwardCache<T>*);

// RAII holder so training loops can reuse one cache allocation.
template <class T>
class CacheHandle {
 public:
  CacheHandle() : p_(new_forward_cache<T>()) {}
  ~CacheHandle() { free_forward_cache<T>(p_); }
  CacheHandle(const CacheHandle&) = delete;
  CacheHandle& operator=(const CacheHandle&) = delete;
  ForwardCache<T>* get() { return p_; }

 private:
  ForwardCache<T>* p_;
};

// Runs the network on a batch; returns per-pixel two-channel softmax
// probabilities with the input's spatial shape.
//  - BN uses batch statistics for trainable layers in train mode (updating
//    the running statistics through bn_update) and running statistics
//    otherwise.
//  - Dropout (inverted, rate cfg.dropout_rate) is applied before and after
//    the first head layer when dropout_on; rng must then be non-null.
//  - cache, when given, stores everything net_backward needs.
template <class T>
BasicTensor<T> net_forward(const NetworkConfig& cfg, const BasicNetworkParams<T>& params,
                           const BasicTensor<T>& in_a, const BasicTensor<T>& in_b, Mode mode,
                           bool dropout_on, RandomSource* rng = nullptr,
                           ForwardCache<T>* cache = nullptr,
                           BasicNetworkParams<T>* bn_update = nullptr);

// Backpropagates from d(loss)/d(logits); fills grads for trainable layers
// (resizing as needed) and skips whole subgraphs that contain none.
template <class T>
void net_backward(const NetworkConfig& cfg, const BasicNetworkParams<T>& params,
                  const ForwardCache<T>& cache, const BasicTensor<T>& dlogits,
                  BasicGradients<T>& grads);

// Checkpoint container: magic, JSON header (format version, config, layer
// names/shapes/trainable flags), then raw little-endian float32 payloads in
// header order.
void save_checkpoint(const std::filesystem::path& path, const NetworkConfig& cfg,
                     const NetworkParams& params);
struct Checkpoint {
  NetworkConfig config;
  NetworkParams params;
};
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace followup
