#include "emotask/netcore.hpp"

#include <algorithm>
#include <cmath>

#include "emotask/rng.hpp"

namespace emotask {

namespace {

std::size_t conv_out_extent(std::size_t in, std::size_t k, std::size_t stride) {
  return (in - k) / stride + 1;
}

void check_finite(const Tensor& t, const char* what) {
  for (double v : t.data) {
    if (!std::isfinite(v)) throw ContractError(std::string("non-finite value in ") + what);
  }
}

// y[n,out] = x[n,in] * W^T + b, W is [out,in]
void dense_forward(const Tensor& x, const Tensor& w, const Tensor& b, Tensor& y) {
  std::size_t n = x.shape[0], in = w.shape[1], out = w.shape[0];
  y = Tensor::zeros({n, out});
  for (std::size_t i = 0; i < n; ++i) {
    const double* xi = &x.data[i * in];
    double* yi = &y.data[i * out];
    for (std::size_t j = 0; j < out; ++j) {
      const double* wj = &w.data[j * in];
      double acc = b.data[j];
      for (std::size_t k = 0; k < in; ++k) acc += xi[k] * wj[k];
      yi[j] = acc;
    }
  }
}

// dx = dy * W; dW += dy^T x; db += colsum(dy)
void dense_backward(const Tensor& x, const Tensor& w, const Tensor& dy,
                    Tensor& dx, Tensor& dw, Tensor& db) {
  std::size_t n = x.shape[0], in = w.shape[1], out = w.shape[0];
  dx = Tensor::zeros({n, in});
  for (std::size_t i = 0; i < n; ++i) {
    const double* dyi = &dy.data[i * out];
    const double* xi = &x.data[i * in];
    double* dxi = &dx.data[i * in];
    for (std::size_t j = 0; j < out; ++j) {
      double g = dyi[j];
      if (g == 0.0) continue;
      db.data[j] += g;
      const double* wj = &w.data[j * in];
      double* dwj = &dw.data[j * in];
      for (std::size_t k = 0; k < in; ++k) {
        dxi[k] += g * wj[k];
        dwj[k] += g * xi[k];
      }
    }
  }
}

// x: [n, C_in, H, W]; w: [C_out, C_in, k, k]; y: [n, C_out, Ho, Wo]
void conv_forward(const Tensor& x, const Tensor& w, const Tensor& b,
                  std::size_t stride, Tensor& y) {
  std::size_t n = x.shape[0], ci = x.shape[1], h = x.shape[2], wd = x.shape[3];
  std::size_t co = w.shape[0], k = w.shape[2];
  std::size_t ho = conv_out_extent(h, k, stride), wo = conv_out_extent(wd, k, stride);
  y = Tensor::zeros({n, co, ho, wo});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t oc = 0; oc < co; ++oc)
      for (std::size_t oy = 0; oy < ho; ++oy)
        for (std::size_t ox = 0; ox < wo; ++ox) {
          double acc = b.data[oc];
          for (std::size_t ic = 0; ic < ci; ++ic)
            for (std::size_t ky = 0; ky < k; ++ky)
              for (std::size_t kx = 0; kx < k; ++kx) {
                std::size_t iy = oy * stride + ky, ix = ox * stride + kx;
                acc += x.data[((i * ci + ic) * h + iy) * wd + ix] *
                       w.data[((oc * ci + ic) * k + ky) * k + kx];
              }
          y.data[((i * co + oc) * ho + oy) * wo + ox] = acc;
        }
}

void conv_backward(const Tensor& x, const Tensor& w, const Tensor& dy,
                   std::size_t stride, Tensor& dx, Tensor& dw, Tensor& db) {
  std::size_t n = x.shape[0], ci = x.shape[1], h = x.shape[2], wd = x.shape[3];
  std::size_t co = w.shape[0], k = w.shape[2];
  std::size_t ho = dy.shape[2], wo = dy.shape[3];
  dx = Tensor::zeros(x.shape);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t oc = 0; oc < co; ++oc)
      for (std::size_t oy = 0; oy < ho; ++oy)
        for (std::size_t ox = 0; ox < wo; ++ox) {
          double g = dy.data[((i * co + oc) * ho + oy) * wo + ox];
          if (g == 0.0) continue;
          db.data[oc] += g;
          for (std::size_t ic = 0; ic < ci; ++ic)
            for (std::size_t ky = 0; ky < k; ++ky)
              for (std::size_t kx = 0; kx < k; ++kx) {
                std::size_t iy = oy * stride + ky, ix = ox * stride + kx;
                std::size_t xi = ((i * ci + ic) * h + iy) * wd + ix;
                std::size_t wi = ((oc * ci + ic) * k + ky) * k + kx;
                dx.data[xi] += g * w.data[wi];
                dw.data[wi] += g * x.data[xi];
              }
        }
}

}  // namespace

std::vector<std::size_t> layer_output_shape(const LayerSpec& spec,
                                            const std::vector<std::size_t>& in_shape,
                                            std::size_t layer_index) {
  auto fail = [&](const std::string& why) {
    throw ConfigError("trunk layer " + std::to_string(layer_index) + ": " + why +
                      " (input shape " + shape_str(in_shape) + ")");
  };
  switch (spec.kind) {
    case LayerKind::Dense: {
      if (in_shape.size() != 1) fail("dense layer requires a flat input");
      if (in_shape[0] != spec.in_dim)
        fail("dense in_dim " + std::to_string(spec.in_dim) + " does not match");
      if (spec.out_dim == 0) fail("dense out_dim must be positive");
      return {spec.out_dim};
    }
    case LayerKind::Conv2d: {
      if (in_shape.size() != 3) fail("conv2d requires a [C,H,W] input");
      if (in_shape[0] != spec.in_channels)
        fail("conv2d in_channels " + std::to_string(spec.in_channels) + " does not match");
      if (spec.kernel_size == 0 || spec.stride == 0) fail("conv2d kernel/stride must be positive");
      if (in_shape[1] < spec.kernel_size || in_shape[2] < spec.kernel_size)
        fail("conv2d kernel larger than input");
      return {spec.out_channels, conv_out_extent(in_shape[1], spec.kernel_size, spec.stride),
              conv_out_extent(in_shape[2], spec.kernel_size, spec.stride)};
    }
    case LayerKind::Relu:
      return in_shape;
    case LayerKind::Flatten:
      return {numel(in_shape)};
  }
  fail("unknown layer kind");
  return {};
}

std::size_t trunk_output_dim(const ModelConfig& config) {
  std::vector<std::size_t> shape = config.input_shape;
  for (std::size_t i = 0; i < config.trunk.size(); ++i)
    shape = layer_output_shape(config.trunk[i], shape, i);
  return numel(shape);
}

ModelParams build_model(const ModelConfig& config, std::uint64_t seed,
                        double init_scale) {
  if (config.input_shape.empty()) throw ConfigError("model input shape is empty");
  if (config.feature_dim == 0) throw ConfigError("feature_dim must be positive");

  ModelParams m;
  m.config = config;
  Rng rng(seed);

  auto add_param = [&](const std::string& name, std::vector<std::size_t> shape,
                       std::size_t fan_in, bool is_bias) {
    ParamTensor p;
    p.name = name;
    p.value = Tensor::zeros(shape);
    p.grad = Tensor::zeros(std::move(shape));
    if (!is_bias) {
      double s = init_scale / std::sqrt(static_cast<double>(fan_in));
      for (double& v : p.value.data) v = rng.uniform(-s, s);
    }
    m.params.push_back(std::move(p));
    return static_cast<int>(m.params.size() - 1);
  };

  std::vector<std::size_t> shape = config.input_shape;
  for (std::size_t i = 0; i < config.trunk.size(); ++i) {
    const LayerSpec& l = config.trunk[i];
    std::vector<std::size_t> out_shape = layer_output_shape(l, shape, i);
    std::array<int, 2> idx = {-1, -1};
    std::string tag = "trunk" + std::to_string(i);
    if (l.kind == LayerKind::Dense) {
      idx[0] = add_param(tag + ".w", {l.out_dim, l.in_dim}, l.in_dim, false);
      idx[1] = add_param(tag + ".b", {l.out_dim}, l.in_dim, true);
    } else if (l.kind == LayerKind::Conv2d) {
      std::size_t fan_in = l.in_channels * l.kernel_size * l.kernel_size;
      idx[0] = add_param(tag + ".w", {l.out_channels, l.in_channels, l.kernel_size, l.kernel_size},
                         fan_in, false);
      idx[1] = add_param(tag + ".b", {l.out_channels}, fan_in, true);
    }
    m.trunk_param_idx.push_back(idx);
    shape = std::move(out_shape);
  }

  std::size_t trunk_dim = numel(shape);
  std::size_t f = config.feature_dim;
  m.feature_w = add_param("feature.w", {f, trunk_dim}, trunk_dim, false);
  m.feature_b = add_param("feature.b", {f}, trunk_dim, true);
  m.expr_w = add_param("expr_head.w", {kNumExprClasses, f}, f, false);
  m.expr_b = add_param("expr_head.b", {kNumExprClasses}, f, true);
  m.au_w = add_param("au_head.w", {kNumActionUnits, f}, f, false);
  m.au_b = add_param("au_head.b", {kNumActionUnits}, f, true);
  return m;
}

ForwardResult forward(const ModelParams& model, const Tensor& batch) {
  const ModelConfig& cfg = model.config;
  if (batch.shape.empty() || batch.shape.size() != cfg.input_shape.size() + 1)
    throw DimensionError("batch rank mismatch: expected [n]+" + shape_str(cfg.input_shape) +
                         ", got " + shape_str(batch.shape));
  for (std::size_t i = 0; i < cfg.input_shape.size(); ++i)
    if (batch.shape[i + 1] != cfg.input_shape[i])
      throw DimensionError("batch shape mismatch: expected [n]+" + shape_str(cfg.input_shape) +
                           ", got " + shape_str(batch.shape));
  std::size_t n = batch.shape[0];
  if (n == 0) throw DimensionError("empty batch");

  ForwardResult r;
  ForwardCache& c = r.cache;
  c.model = &model;
  c.model_version = model.version;
  c.batch_size = n;

  Tensor x = batch;
  std::vector<std::size_t> per_sample = cfg.input_shape;
  for (std::size_t li = 0; li < cfg.trunk.size(); ++li) {
    const LayerSpec& l = cfg.trunk[li];
    c.trunk_inputs.push_back(x);
    std::vector<std::size_t> out_per_sample = layer_output_shape(l, per_sample, li);
    Tensor y;
    switch (l.kind) {
      case LayerKind::Dense: {
        const auto& idx = model.trunk_param_idx[li];
        dense_forward(x, model.params[idx[0]].value, model.params[idx[1]].value, y);
        break;
      }
      case LayerKind::Conv2d: {
        const auto& idx = model.trunk_param_idx[li];
        conv_forward(x, model.params[idx[0]].value, model.params[idx[1]].value, l.stride, y);
        break;
      }
      case LayerKind::Relu: {
        y = x;
        for (double& v : y.data) v = v > 0.0 ? v : 0.0;
        break;
      }
      case LayerKind::Flatten: {
        y = x;
        y.shape = {n, numel(out_per_sample)};
        break;
      }
    }
    x = std::move(y);
    per_sample = std::move(out_per_sample);
  }

  c.trunk_out = x;
  c.trunk_out.shape = {n, numel(per_sample)};

  dense_forward(c.trunk_out, model.params[model.feature_w].value,
                model.params[model.feature_b].value, c.feature_pre);
  c.feature_act = c.feature_pre;
  for (double& v : c.feature_act.data) v = v > 0.0 ? v : 0.0;

  dense_forward(c.feature_act, model.params[model.expr_w].value,
                model.params[model.expr_b].value, r.expr_logits);
  dense_forward(c.feature_act, model.params[model.au_w].value,
                model.params[model.au_b].value, r.au_logits);
  check_finite(r.expr_logits, "expr logits");
  check_finite(r.au_logits, "au logits");
  return r;
}

void backward(ModelParams& model, const ForwardCache& cache,
              const Tensor* expr_logit_grads, const Tensor* au_logit_grads) {
  if (cache.model != &model || cache.model_version != model.version)
    throw ContractError("forward cache is stale or belongs to a different model");
  if (!expr_logit_grads && !au_logit_grads)
    throw ContractError("backward requires at least one head's logit gradients");
  std::size_t n = cache.batch_size;
  if (expr_logit_grads &&
      (expr_logit_grads->shape != std::vector<std::size_t>{n, kNumExprClasses}))
    throw DimensionError("expr logit grads must be [n,7]");
  if (au_logit_grads &&
      (au_logit_grads->shape != std::vector<std::size_t>{n, kNumActionUnits}))
    throw DimensionError("au logit grads must be [n,12]");

  std::size_t f = model.config.feature_dim;
  Tensor d_feature_act = Tensor::zeros({n, f});

  if (expr_logit_grads) {
    Tensor dx;
    dense_backward(cache.feature_act, model.params[model.expr_w].value, *expr_logit_grads,
                   dx, model.params[model.expr_w].grad, model.params[model.expr_b].grad);
    for (std::size_t i = 0; i < dx.size(); ++i) d_feature_act.data[i] += dx.data[i];
  }
  if (au_logit_grads) {
    Tensor dx;
    dense_backward(cache.feature_act, model.params[model.au_w].value, *au_logit_grads,
                   dx, model.params[model.au_w].grad, model.params[model.au_b].grad);
    for (std::size_t i = 0; i < dx.size(); ++i) d_feature_act.data[i] += dx.data[i];
  }

  // ReLU after the feature layer
  for (std::size_t i = 0; i < d_feature_act.size(); ++i)
    if (cache.feature_pre.data[i] <= 0.0) d_feature_act.data[i] = 0.0;

  Tensor d_trunk_out;
  dense_backward(cache.trunk_out, model.params[model.feature_w].value, d_feature_act,
                 d_trunk_out, model.params[model.feature_w].grad,
                 model.params[model.feature_b].grad);

  Tensor dy = std::move(d_trunk_out);
  for (std::size_t li = model.config.trunk.size(); li-- > 0;) {
    const LayerSpec& l = model.config.trunk[li];
    const Tensor& x = cache.trunk_inputs[li];
    Tensor dx;
    switch (l.kind) {
      case LayerKind::Dense: {
        const auto& idx = model.trunk_param_idx[li];
        dense_backward(x, model.params[idx[0]].value, dy, dx,
                       model.params[idx[0]].grad, model.params[idx[1]].grad);
        break;
      }
      case LayerKind::Conv2d: {
        const auto& idx = model.trunk_param_idx[li];
        Tensor dyr = dy;
        // restore the conv output rank lost by a later flatten
        std::vector<std::size_t> out_shape =
            layer_output_shape(l, std::vector<std::size_t>(x.shape.begin() + 1, x.shape.end()), li);
        dyr.shape = {n, out_shape[0], out_shape[1], out_shape[2]};
        conv_backward(x, model.params[idx[0]].value, dyr, l.stride, dx,
                      model.params[idx[0]].grad, model.params[idx[1]].grad);
        break;
      }
      case LayerKind::Relu: {
        dx = dy;
        dx.shape = x.shape;
        for (std::size_t i = 0; i < dx.size(); ++i)
          if (x.data[i] <= 0.0) dx.data[i] = 0.0;
        break;
      }
      case LayerKind::Flatten: {
        dx = dy;
        dx.shape = x.shape;
        break;
      }
    }
    dy = std::move(dx);
  }
}

Tensor softmax(const Tensor& logits) {
  std::size_t n = logits.shape[0], k = logits.shape[1];
  Tensor p = Tensor::zeros(logits.shape);
  for (std::size_t i = 0; i < n; ++i) {
    const double* row = &logits.data[i * k];
    double mx = row[0];
    for (std::size_t j = 1; j < k; ++j) mx = std::max(mx, row[j]);
    double sum = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      double e = std::exp(row[j] - mx);
      p.data[i * k + j] = e;
      sum += e;
    }
    for (std::size_t j = 0; j < k; ++j) p.data[i * k + j] /= sum;
  }
  return p;
}

Tensor sigmoid(const Tensor& logits) {
  Tensor p = logits;
  for (double& v : p.data) {
    if (v >= 0.0) {
      v = 1.0 / (1.0 + std::exp(-v));
    } else {
      double e = std::exp(v);
      v = e / (1.0 + e);
    }
  }
  return p;
}

ModelConfig mlp_config(const std::vector<std::size_t>& input_shape, std::size_t hidden,
                       std::size_t feature_dim) {
  ModelConfig c;
  c.input_shape = input_shape;
  c.trunk = {LayerSpec::flatten(), LayerSpec::dense(numel(input_shape), hidden),
             LayerSpec::relu()};
  c.feature_dim = feature_dim;
  return c;
}

ModelConfig smallcnn_config(std::size_t image_size, std::size_t c1, std::size_t c2,
                            std::size_t hidden, std::size_t feature_dim) {
  ModelConfig c;
  c.input_shape = {3, image_size, image_size};
  std::size_t h1 = (image_size - 3) / 2 + 1;
  std::size_t h2 = (h1 - 3) / 2 + 1;
  c.trunk = {LayerSpec::conv2d(3, c1, 3, 2),  LayerSpec::relu(),
             LayerSpec::conv2d(c1, c2, 3, 2), LayerSpec::relu(),
             LayerSpec::flatten(),            LayerSpec::dense(c2 * h2 * h2, hidden),
             LayerSpec::relu()};
  c.feature_dim = feature_dim;
  return c;
}

}  // namespace emotask
