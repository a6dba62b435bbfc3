#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "volflow/codec.hpp"
#include "volflow/rng.hpp"
#include "volflow/tensor.hpp"
#include "volflow/text.hpp"

namespace volflow {

// Spatio-temporal transformer velocity field. The noisy target block and
// the conditioning block are channel-concatenated, cut into 2x2x2 patches,
// and run through alternating spatial / temporal attention layers whose
// scale, shift and gate come from an adaptive layer-norm modulation of the
// fused (sinusoidal time + text) embedding. The output projection starts
// at exact zero, so a fresh model is the identity drift.

enum class ModelSize { Tiny, S, B, L };

struct ModelConfig {
  ModelSize name = ModelSize::Tiny;
  int dim = 64;
  int heads = 4;
  int depth = 2;  // pairs of (spatial, temporal) layers
  int latent_h = 8, latent_w = 8;

  static constexpr int kPatch = 2;        // 2x2x2 spatio-temporal patches
  static constexpr int kBlockSlices = 16; // temporal extent of one block
  static constexpr int kInChannels = 32;  // noisy 16 + conditioning 16
  static constexpr int kOutChannels = 16;
  static constexpr int kCondDim = TextEmbedding::kDim;
  static constexpr int kTimeDim = 64;

  static ModelConfig preset(ModelSize size);
  static ModelConfig preset(const std::string& name);

  int layers() const { return 2 * depth; }
  int head_dim() const { return dim / heads; }
  int tokens_temporal() const { return kBlockSlices / kPatch; }
  int tokens_spatial() const { return (latent_h / kPatch) * (latent_w / kPatch); }
  void validate() const;
};

ModelSize parse_model_size(const std::string& name);
const char* model_size_name(ModelSize size);

// Single source of truth for the parameter list (names, shapes, order).
void for_each_param_spec(const ModelConfig& config,
                         const std::function<void(const std::string&, const Shape&)>& fn);

int64_t param_count(const ModelConfig& config);

template <typename T>
struct ParamTensorT {
  std::string name;
  Shape shape;
  std::shared_ptr<std::vector<T>> data;
};

template <typename T>
struct ModelParamsT {
  ModelConfig config;
  std::vector<ParamTensorT<T>> tensors;

  int64_t count() const {
    int64_t n = 0;
    for (const auto& t : tensors) n += numel(t.shape);
    return n;
  }
  const ParamTensorT<T>* find(const std::string& name) const {
    for (const auto& t : tensors)
      if (t.name == name) return &t;
    return nullptr;
  }
  ModelParamsT deep_copy() const {
    ModelParamsT out;
    out.config = config;
    for (const auto& t : tensors)
      out.tensors.push_back({t.name, t.shape, std::make_shared<std::vector<T>>(*t.data)});
    return out;
  }
};

using ModelParams = ModelParamsT<float>;

// Deterministic init: weights N(0, 1/sqrt(fan_in)), positional embeddings
// N(0, 0.02), biases zero, output projection exact zero.
template <typename T>
ModelParamsT<T> init_params(const ModelConfig& config, uint64_t seed) {
  config.validate();
  ModelParamsT<T> params;
  params.config = config;
  int idx = 0;
  for_each_param_spec(config, [&](const std::string& name, const Shape& shape) {
    auto data = std::make_shared<std::vector<T>>(static_cast<size_t>(numel(shape)), T(0));
    bool is_weight = name.size() > 2 && name.compare(name.size() - 2, 2, ".w") == 0;
    bool is_pos = name.rfind("pos.", 0) == 0;
    bool is_out = name.rfind("final.out", 0) == 0;
    if (!is_out) {
      Rng rng = Rng::derive(seed, 1000 + static_cast<uint64_t>(idx));
      if (is_pos) {
        for (auto& v : *data) v = static_cast<T>(0.02 * rng.normal());
      } else if (is_weight) {
        double std = 1.0 / std::sqrt(static_cast<double>(shape[0]));
        for (auto& v : *data) v = static_cast<T>(std * rng.normal());
      }
      // biases stay zero
    }
    params.tensors.push_back({name, shape, std::move(data)});
    ++idx;
  });
  return params;
}

// Parameters bound into one graph (leaves when tape != nullptr and
// trainable, shared-buffer constants otherwise).
template <typename T>
struct BoundParamsT {
  ModelConfig config;
  std::map<std::string, TensorT<T>> tensors;
  std::map<std::string, int> node_of;  // leaf node ids, for gradient lookup

  const TensorT<T>& at(const std::string& name) const {
    auto it = tensors.find(name);
    if (it == tensors.end()) throw_usage("model: missing parameter '" + name + "'");
    return it->second;
  }
};

template <typename T>
BoundParamsT<T> bind_params(const ModelParamsT<T>& params, TapeT<T>* tape, bool trainable) {
  BoundParamsT<T> bound;
  bound.config = params.config;
  for (const auto& t : params.tensors) {
    if (tape != nullptr) {
      TensorT<T> leaf = TensorT<T>::leaf(*tape, t.shape, t.data, trainable);
      bound.node_of[t.name] = leaf.node();
      bound.tensors.emplace(t.name, std::move(leaf));
    } else {
      bound.tensors.emplace(t.name, TensorT<T>::constant_shared(t.shape, t.data));
    }
  }
  return bound;
}

// [C, 16, h, w] -> [T/2, (h/2)(w/2), C*8] raw patch tokens (pre-embedding)
template <typename T>
TensorT<T> patchify_tokens(const TensorT<T>& x) {
  if (x.rank() != 4) throw_shape("patchify: expected [C,T,h,w], got " + shape_str(x.shape()));
  int64_t c = x.shape()[0], t = x.shape()[1], h = x.shape()[2], w = x.shape()[3];
  if (t % 2 != 0 || h % 2 != 0 || w % 2 != 0)
    throw_shape("patchify: temporal and spatial extents must be even, got " +
                shape_str(x.shape()));
  TensorT<T> r = reshape(x, {c, t / 2, 2, h / 2, 2, w / 2, 2});
  TensorT<T> p = permute(r, {1, 3, 5, 0, 2, 4, 6});
  return reshape(p, {t / 2, (h / 2) * (w / 2), c * 8});
}

// inverse of patchify_tokens
template <typename T>
TensorT<T> unpatchify_tokens(const TensorT<T>& tokens, int64_t c, int64_t h, int64_t w) {
  if (tokens.rank() != 3) throw_shape("unpatchify: expected [T2,S2,C*8]");
  int64_t t2 = tokens.shape()[0];
  if (tokens.shape()[1] != (h / 2) * (w / 2) || tokens.shape()[2] != c * 8)
    throw_shape("unpatchify: token grid " + shape_str(tokens.shape()) +
                " does not match target extents");
  TensorT<T> r = reshape(tokens, {t2, h / 2, w / 2, c, 2, 2, 2});
  TensorT<T> p = permute(r, {3, 0, 4, 1, 5, 2, 6});
  return reshape(p, {c, t2 * 2, h, w});
}

template <typename T>
std::vector<T> sinusoidal_time(double t) {
  std::vector<T> out(static_cast<size_t>(ModelConfig::kTimeDim));
  constexpr int kHalf = ModelConfig::kTimeDim / 2;
  for (int k = 0; k < kHalf; ++k) {
    double freq = std::exp(-std::log(10000.0) * k / (kHalf - 1));
    double arg = t * 1000.0 * freq;
    out[static_cast<size_t>(2 * k)] = static_cast<T>(std::sin(arg));
    out[static_cast<size_t>(2 * k + 1)] = static_cast<T>(std::cos(arg));
  }
  return out;
}

namespace detail {

template <typename T>
TensorT<T> attention(const BoundParamsT<T>& p, const TensorT<T>& x3, const std::string& prefix,
                     bool temporal) {
  const ModelConfig& cfg = p.config;
  // x3 is [groups, len, dim]; spatial layers attend within a temporal
  // index, temporal layers across temporal indices at a fixed position
  TensorT<T> x = temporal ? permute(x3, {1, 0, 2}) : x3;
  int64_t g = x.shape()[0], l = x.shape()[1], d = x.shape()[2];
  int64_t hd = cfg.head_dim();
  TensorT<T> qkv = add(matmul(x, p.at(prefix + ".attn.qkv.w")), p.at(prefix + ".attn.qkv.b"));
  auto parts = split(qkv, 2, {d, d, d});
  auto heads = [&](const TensorT<T>& m) {
    return reshape(permute(reshape(m, {g, l, cfg.heads, hd}), {0, 2, 1, 3}),
                   {g * cfg.heads, l, hd});
  };
  TensorT<T> q = heads(parts[0]), k = heads(parts[1]), v = heads(parts[2]);
  TensorT<T> scores = scale(matmul(q, permute(k, {0, 2, 1})), 1.0 / std::sqrt(double(hd)));
  TensorT<T> attn = matmul(softmax(scores, 2), v);
  TensorT<T> merged =
      reshape(permute(reshape(attn, {g, cfg.heads, l, hd}), {0, 2, 1, 3}), {g, l, d});
  TensorT<T> out = add(matmul(merged, p.at(prefix + ".attn.proj.w")), p.at(prefix + ".attn.proj.b"));
  return temporal ? permute(out, {1, 0, 2}) : out;
}

}  // namespace detail

// One velocity evaluation: x_noisy and cond are [16, 16, h, w] latent
// blocks (channel-major), text is the conditioning embedding, t in [0,1].
template <typename T>
TensorT<T> velocity_forward(const BoundParamsT<T>& p, const TensorT<T>& x_noisy, double t,
                            const TensorT<T>& cond, const TensorT<T>& text) {
  const ModelConfig& cfg = p.config;
  const Shape want{ModelConfig::kOutChannels, ModelConfig::kBlockSlices, cfg.latent_h,
                   cfg.latent_w};
  if (x_noisy.shape() != want)
    throw_shape("velocity_forward: x_t shape " + shape_str(x_noisy.shape()) + " != " +
                shape_str(want));
  if (cond.shape() != want)
    throw_shape("velocity_forward: cond shape " + shape_str(cond.shape()) + " != " +
                shape_str(want));
  if (text.size() != ModelConfig::kCondDim)
    throw_shape("velocity_forward: text embedding must have " +
                std::to_string(ModelConfig::kCondDim) + " dims");
  if (t < -1e-9 || t > 1.0 + 1e-9)
    throw_value("velocity_forward: t=" + std::to_string(t) + " outside [0,1]");

  TensorT<T> x = concat<T>({x_noisy, cond}, 0);  // [32,16,h,w]
  TensorT<T> tokens = patchify_tokens(x);        // [T2,S2,256]
  tokens = add(matmul(tokens, p.at("patch_embed.w")), p.at("patch_embed.b"));
  int64_t t2 = cfg.tokens_temporal(), s2 = cfg.tokens_spatial(), d = cfg.dim;
  tokens = add(tokens, reshape(p.at("pos.temporal"), {t2, 1, d}));
  tokens = add(tokens, p.at("pos.spatial"));

  // fused (time ⊕ text) conditioning trunk
  TensorT<T> sin_t = TensorT<T>::constant({ModelConfig::kTimeDim}, sinusoidal_time<T>(t));
  TensorT<T> fused = reshape(concat<T>({sin_t, reshape(text, {ModelConfig::kCondDim})}, 0),
                             {1, ModelConfig::kTimeDim + ModelConfig::kCondDim});
  TensorT<T> c = gelu(add(matmul(fused, p.at("cond.fuse.w")), p.at("cond.fuse.b")));  // [1,d]

  TensorT<T> ones_d = TensorT<T>::full({d}, T(1));
  TensorT<T> zeros_d = TensorT<T>::zeros({d});
  auto modulate = [&](const TensorT<T>& y, const TensorT<T>& sh, const TensorT<T>& sc) {
    return add(mul(y, add(sc, ones_d)), sh);
  };

  for (int layer = 0; layer < cfg.layers(); ++layer) {
    std::string prefix = "layers." + std::to_string(layer);
    bool temporal = (layer % 2) == 1;
    TensorT<T> mod = reshape(add(matmul(c, p.at(prefix + ".mod.w")), p.at(prefix + ".mod.b")),
                             {6 * d});
    auto m = split(mod, 0, {d, d, d, d, d, d});
    TensorT<T> h1 = modulate(layer_norm(tokens, ones_d, zeros_d, 1e-5), m[0], m[1]);
    tokens = add(tokens, mul(detail::attention(p, h1, prefix, temporal), m[2]));
    TensorT<T> h2 = modulate(layer_norm(tokens, ones_d, zeros_d, 1e-5), m[3], m[4]);
    TensorT<T> mlp = add(matmul(gelu(add(matmul(h2, p.at(prefix + ".mlp.fc1.w")),
                                         p.at(prefix + ".mlp.fc1.b"))),
                                p.at(prefix + ".mlp.fc2.w")),
                         p.at(prefix + ".mlp.fc2.b"));
    tokens = add(tokens, mul(mlp, m[5]));
  }

  TensorT<T> fmod = reshape(add(matmul(c, p.at("final.mod.w")), p.at("final.mod.b")), {2 * d});
  auto fm = split(fmod, 0, {d, d});
  tokens = modulate(layer_norm(tokens, ones_d, zeros_d, 1e-5), fm[0], fm[1]);
  tokens = add(matmul(tokens, p.at("final.out.w")), p.at("final.out.b"));  // [T2,S2,128]
  return unpatchify_tokens(tokens, ModelConfig::kOutChannels, cfg.latent_h, cfg.latent_w);
}

// Latent block -> channel-major tensor buffer [16, 16, h, w].
std::vector<float> block_to_chw(const LatentBlock& block);
LatentBlock chw_to_block(const std::vector<float>& data, int latent_h, int latent_w);

}  // namespace volflow
