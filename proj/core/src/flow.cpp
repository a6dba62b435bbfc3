#include "volflow/flow.hpp"

#include "volflow/threading.hpp"

namespace volflow {

std::function<std::vector<float>(const std::vector<float>&, double)> model_field(
    const ModelParams& params, std::vector<float> cond_chw, std::vector<float> text) {
  const ModelConfig cfg = params.config;
  const Shape block_shape{ModelConfig::kOutChannels, ModelConfig::kBlockSlices, cfg.latent_h,
                          cfg.latent_w};
  auto bound =
      std::make_shared<BoundParamsT<float>>(bind_params(params, static_cast<Tape*>(nullptr), false));
  auto cond_t = Tensor::constant(block_shape, std::move(cond_chw));
  auto text_t = Tensor::constant({ModelConfig::kCondDim}, std::move(text));
  return [bound, cond_t, text_t, block_shape](const std::vector<float>& x, double t) {
    Tensor xt = Tensor::constant(block_shape, x);
    return velocity_forward(*bound, xt, t, cond_t, text_t).values();
  };
}

std::vector<float> euler_sample(const ModelParams& params, std::vector<float> x1_chw,
                                const std::vector<float>& cond_chw, const TextEmbedding& text,
                                const SamplerConfig& config) {
  auto field = model_field(params, cond_chw, text.vector);
  return euler_integrate<float>(field, std::move(x1_chw), config.steps);
}

GradBuffers make_grad_buffers(const ModelParams& params) {
  GradBuffers out;
  out.reserve(params.tensors.size());
  for (const auto& t : params.tensors)
    out.emplace_back(static_cast<size_t>(numel(t.shape)), 0.0f);
  return out;
}

namespace {

struct SampleDraw {
  double t = 0;
  std::vector<float> x1;
};

std::vector<SampleDraw> draw_batch(const std::vector<PairSample>& batch, size_t block_elems,
                                   Rng& rng) {
  std::vector<SampleDraw> draws(batch.size());
  for (auto& d : draws) {
    d.t = rng.uniform();
    d.x1.resize(block_elems);
    for (auto& v : d.x1) v = static_cast<float>(rng.normal());
  }
  return draws;
}

}  // namespace

double fm_loss_accumulate(const ModelParams& params, const std::vector<PairSample>& batch,
                          Rng& rng, GradBuffers& accum, int threads) {
  if (batch.empty()) throw_usage("fm_loss: empty batch");
  const ModelConfig& cfg = params.config;
  const Shape block_shape{ModelConfig::kOutChannels, ModelConfig::kBlockSlices, cfg.latent_h,
                          cfg.latent_w};
  const size_t block_elems = static_cast<size_t>(numel(block_shape));
  if (accum.size() != params.tensors.size())
    throw_usage("fm_loss: gradient buffers do not match the parameter list");

  std::vector<SampleDraw> draws = draw_batch(batch, block_elems, rng);

  std::vector<double> losses(batch.size(), 0.0);
  std::vector<GradBuffers> per_sample(batch.size());
  parallel_for(static_cast<int64_t>(batch.size()), threads, [&](int64_t i) {
    const PairSample& sample = batch[static_cast<size_t>(i)];
    const SampleDraw& d = draws[static_cast<size_t>(i)];
    std::vector<float> x0 = block_to_chw(sample.target);
    if (x0.size() != block_elems) throw_shape("fm_loss: sample block does not match the model");
    std::vector<float> xt = interpolate(x0, d.x1, d.t);
    std::vector<float> u = target_velocity(x0, d.x1);

    Tape tape;
    BoundParamsT<float> bound = bind_params(params, &tape, true);
    Tensor xt_t = Tensor::constant(block_shape, std::move(xt));
    Tensor cond_t = Tensor::constant(block_shape, block_to_chw(sample.cond));
    Tensor text_t = Tensor::constant({ModelConfig::kCondDim}, sample.text.vector);
    Tensor u_t = Tensor::constant(block_shape, std::move(u));
    Tensor v = velocity_forward(bound, xt_t, d.t, cond_t, text_t);
    Tensor diff = sub(v, u_t);
    Tensor loss = mean(mul(diff, diff));
    losses[static_cast<size_t>(i)] = static_cast<double>(loss.scalar());

    Gradients grads = backward(loss);
    GradBuffers& mine = per_sample[static_cast<size_t>(i)];
    mine.resize(params.tensors.size());
    for (size_t p = 0; p < params.tensors.size(); ++p) {
      const std::vector<float>* gp = grads.find(bound.node_of.at(params.tensors[p].name));
      if (gp) mine[p] = *gp;
    }
  });

  double loss_sum = 0;
  for (size_t i = 0; i < batch.size(); ++i) {
    loss_sum += losses[i];
    for (size_t p = 0; p < params.tensors.size(); ++p) {
      const auto& src = per_sample[i][p];
      if (src.empty()) continue;
      auto& dst = accum[p];
      for (size_t k = 0; k < src.size(); ++k) dst[k] += src[k];
    }
  }
  return loss_sum;
}

FmLoss fm_loss(const ModelParams& params, const std::vector<PairSample>& batch, Rng& rng,
               int threads) {
  FmLoss out;
  out.grads = make_grad_buffers(params);
  double loss_sum = fm_loss_accumulate(params, batch, rng, out.grads, threads);
  float inv = 1.0f / static_cast<float>(batch.size());
  for (auto& g : out.grads)
    for (auto& v : g) v *= inv;
  out.loss = loss_sum / static_cast<double>(batch.size());
  return out;
}

double fm_loss_rule(const VelocityRule& rule, const std::vector<PairSample>& batch, Rng& rng) {
  if (batch.empty()) throw_usage("fm_loss: empty batch");
  const size_t block_elems = block_to_chw(batch[0].target).size();
  std::vector<SampleDraw> draws = draw_batch(batch, block_elems, rng);
  double loss_sum = 0;
  for (size_t i = 0; i < batch.size(); ++i) {
    std::vector<float> x0 = block_to_chw(batch[i].target);
    std::vector<float> xt = interpolate(x0, draws[i].x1, draws[i].t);
    std::vector<float> u = target_velocity(x0, draws[i].x1);
    std::vector<float> v = rule(xt, draws[i].t, batch[i], u);
    if (v.size() != u.size()) throw_shape("fm_loss: rule output size mismatch");
    double acc = 0;
    for (size_t k = 0; k < u.size(); ++k) {
      double dv = static_cast<double>(v[k]) - u[k];
      acc += dv * dv;
    }
    loss_sum += acc / static_cast<double>(u.size());
  }
  return loss_sum / static_cast<double>(batch.size());
}

}  // namespace volflow
