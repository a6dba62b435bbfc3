#include "volflow/model.hpp"

#include <functional>

namespace volflow {

ModelConfig ModelConfig::preset(ModelSize size) {
  ModelConfig c;
  c.name = size;
  switch (size) {
    case ModelSize::Tiny: c.dim = 64; c.heads = 4; c.depth = 2; break;
    case ModelSize::S:    c.dim = 384; c.heads = 6; c.depth = 7; break;
    case ModelSize::B:    c.dim = 768; c.heads = 12; c.depth = 7; break;
    case ModelSize::L:    c.dim = 1024; c.heads = 16; c.depth = 13; break;
  }
  return c;
}

ModelConfig ModelConfig::preset(const std::string& name) {
  return preset(parse_model_size(name));
}

ModelSize parse_model_size(const std::string& name) {
  if (name == "tiny") return ModelSize::Tiny;
  if (name == "s") return ModelSize::S;
  if (name == "b") return ModelSize::B;
  if (name == "l") return ModelSize::L;
  throw_value("unknown model size '" + name + "' (tiny|s|b|l)");
}

const char* model_size_name(ModelSize size) {
  switch (size) {
    case ModelSize::Tiny: return "tiny";
    case ModelSize::S: return "s";
    case ModelSize::B: return "b";
    case ModelSize::L: return "l";
  }
  return "?";
}

void ModelConfig::validate() const {
  if (dim <= 0 || heads <= 0 || depth < 1) throw_value("model config: bad dim/heads/depth");
  if (dim % heads != 0) throw_value("model config: dim must be divisible by heads");
  if (latent_h < kPatch || latent_w < kPatch || latent_h % kPatch != 0 || latent_w % kPatch != 0)
    throw_value("model config: latent extents must be positive multiples of the patch size");
}

void for_each_param_spec(const ModelConfig& config,
                         const std::function<void(const std::string&, const Shape&)>& fn) {
  config.validate();
  int64_t d = config.dim;
  int64_t patch_in = ModelConfig::kInChannels * 8;
  int64_t patch_out = ModelConfig::kOutChannels * 8;
  fn("patch_embed.w", {patch_in, d});
  fn("patch_embed.b", {d});
  fn("pos.temporal", {config.tokens_temporal(), d});
  fn("pos.spatial", {config.tokens_spatial(), d});
  fn("cond.fuse.w", {ModelConfig::kTimeDim + ModelConfig::kCondDim, d});
  fn("cond.fuse.b", {d});
  for (int layer = 0; layer < config.layers(); ++layer) {
    std::string p = "layers." + std::to_string(layer);
    fn(p + ".mod.w", {d, 6 * d});
    fn(p + ".mod.b", {6 * d});
    fn(p + ".attn.qkv.w", {d, 3 * d});
    fn(p + ".attn.qkv.b", {3 * d});
    fn(p + ".attn.proj.w", {d, d});
    fn(p + ".attn.proj.b", {d});
    fn(p + ".mlp.fc1.w", {d, 4 * d});
    fn(p + ".mlp.fc1.b", {4 * d});
    fn(p + ".mlp.fc2.w", {4 * d, d});
    fn(p + ".mlp.fc2.b", {d});
  }
  fn("final.mod.w", {d, 2 * d});
  fn("final.mod.b", {2 * d});
  fn("final.out.w", {d, patch_out});
  fn("final.out.b", {patch_out});
}

int64_t param_count(const ModelConfig& config) {
  int64_t n = 0;
  for_each_param_spec(config, [&](const std::string&, const Shape& s) { n += numel(s); });
  return n;
}

std::vector<float> block_to_chw(const LatentBlock& block) {
  const int h = block.slices[0].height, w = block.slices[0].width;
  std::vector<float> out(static_cast<size_t>(LatentSlice::kChannels) * LatentBlock::kSlices * h * w);
  for (int t = 0; t < LatentBlock::kSlices; ++t) {
    const LatentSlice& s = block.slices[static_cast<size_t>(t)];
    if (s.height != h || s.width != w) throw_shape("block_to_chw: ragged latent block");
    for (int c = 0; c < LatentSlice::kChannels; ++c)
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
          out[((static_cast<size_t>(c) * LatentBlock::kSlices + t) * h + y) * w + x] =
              s.at(c, y, x);
  }
  return out;
}

LatentBlock chw_to_block(const std::vector<float>& data, int latent_h, int latent_w) {
  size_t expect = static_cast<size_t>(LatentSlice::kChannels) * LatentBlock::kSlices * latent_h *
                  latent_w;
  if (data.size() != expect) throw_shape("chw_to_block: buffer size mismatch");
  std::vector<LatentSlice> slices;
  slices.reserve(LatentBlock::kSlices);
  for (int t = 0; t < LatentBlock::kSlices; ++t) {
    LatentSlice s(latent_h, latent_w);
    for (int c = 0; c < LatentSlice::kChannels; ++c)
      for (int y = 0; y < latent_h; ++y)
        for (int x = 0; x < latent_w; ++x)
          s.at(c, y, x) =
              data[((static_cast<size_t>(c) * LatentBlock::kSlices + t) * latent_h + y) *
                       latent_w +
                   x];
    slices.push_back(std::move(s));
  }
  return LatentBlock(std::move(slices));
}

}  // namespace volflow
