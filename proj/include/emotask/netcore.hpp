#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "emotask/tensor.hpp"

namespace emotask {

constexpr std::size_t kNumExprClasses = 7;
constexpr std::size_t kNumActionUnits = 12;
constexpr std::size_t kDefaultFeatureDim = 512;

enum class LayerKind { Dense, Conv2d, Relu, Flatten };

struct LayerSpec {
  LayerKind kind = LayerKind::Relu;
  // dense
  std::size_t in_dim = 0;
  std::size_t out_dim = 0;
  // conv2d (no padding)
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  std::size_t kernel_size = 0;
  std::size_t stride = 1;

  static LayerSpec dense(std::size_t in, std::size_t out) {
    LayerSpec s;
    s.kind = LayerKind::Dense;
    s.in_dim = in;
    s.out_dim = out;
    return s;
  }
  static LayerSpec conv2d(std::size_t in_c, std::size_t out_c, std::size_t k,
                          std::size_t stride) {
    LayerSpec s;
    s.kind = LayerKind::Conv2d;
    s.in_channels = in_c;
    s.out_channels = out_c;
    s.kernel_size = k;
    s.stride = stride;
    return s;
  }
  static LayerSpec relu() { return LayerSpec{}; }
  static LayerSpec flatten() {
    LayerSpec s;
    s.kind = LayerKind::Flatten;
    return s;
  }
};

struct ModelConfig {
  std::vector<std::size_t> input_shape;  // per-sample, e.g. {3,16,16} or {48}
  std::vector<LayerSpec> trunk;
  std::size_t feature_dim = kDefaultFeatureDim;
};

struct ParamTensor {
  std::string name;
  Tensor value;
  Tensor grad;
};

// Shared trunk, one feature layer with ReLU, and the two task heads.
// Every weight tensor carries a matching gradient slot.
struct ModelParams {
  ModelConfig config;
  std::vector<ParamTensor> params;

  // indices into params
  std::vector<std::array<int, 2>> trunk_param_idx;  // per layer {weight, bias} or {-1,-1}
  int feature_w = -1, feature_b = -1;
  int expr_w = -1, expr_b = -1;
  int au_w = -1, au_b = -1;

  // bumped on every parameter mutation; forward caches pin it
  std::uint64_t version = 0;

  std::size_t total_param_count() const {
    std::size_t n = 0;
    for (const auto& p : params) n += p.value.size();
    return n;
  }
  void zero_grads() {
    for (auto& p : params) p.grad.fill(0.0);
  }
};

struct ForwardCache {
  const ModelParams* model = nullptr;
  std::uint64_t model_version = 0;
  std::size_t batch_size = 0;
  std::vector<Tensor> trunk_inputs;  // input to each trunk layer
  Tensor trunk_out;                  // [n, trunk_dim]
  Tensor feature_pre;                // [n, feature_dim] before ReLU
  Tensor feature_act;                // [n, feature_dim]
};

// Shape of a trunk layer's output given its input shape; throws ConfigError
// on an inconsistent chain, naming the layer.
std::vector<std::size_t> layer_output_shape(const LayerSpec& spec,
                                            const std::vector<std::size_t>& in_shape,
                                            std::size_t layer_index);

// Flattened trunk output dimension for a full config.
std::size_t trunk_output_dim(const ModelConfig& config);

// Seeded uniform init in [-s, s] with s = init_scale / sqrt(fan_in); biases zero.
ModelParams build_model(const ModelConfig& config, std::uint64_t seed,
                        double init_scale);

struct ForwardResult {
  Tensor expr_logits;  // [n, 7]
  Tensor au_logits;    // [n, 12]
  ForwardCache cache;
};

ForwardResult forward(const ModelParams& model, const Tensor& batch);

// Accumulates dLoss/dParam into the model's grad slots. Either logit-gradient
// may be absent; parameters of an unsupplied head receive exactly zero.
void backward(ModelParams& model, const ForwardCache& cache,
              const Tensor* expr_logit_grads, const Tensor* au_logit_grads);

// Row-wise softmax with max subtraction; rows sum to 1.
Tensor softmax(const Tensor& logits);

// Elementwise logistic, overflow-safe at both tails.
Tensor sigmoid(const Tensor& logits);

// Trunk presets. Widths are parameters so gradient checks can run on
// sub-2000-parameter instances of the same layer structure.
ModelConfig mlp_config(const std::vector<std::size_t>& input_shape,
                       std::size_t hidden = 128,
                       std::size_t feature_dim = kDefaultFeatureDim);
ModelConfig smallcnn_config(std::size_t image_size, std::size_t c1 = 8,
                            std::size_t c2 = 16, std::size_t hidden = 128,
                            std::size_t feature_dim = kDefaultFeatureDim);

}  // namespace emotask
