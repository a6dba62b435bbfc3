#pragma once

#include <functional>
#include <vector>

#include "volflow/model.hpp"
#include "volflow/phantom.hpp"
#include "volflow/rng.hpp"

namespace volflow {

// Training objective and deterministic sampler: straight-line interpolants
// x_t = (1-t) x0 + t x1, regression target u = x1 - x0, and plain Euler
// integration of the learned field backwards from t=1 to t=0.

template <typename T>
std::vector<T> interpolate(const std::vector<T>& x0, const std::vector<T>& x1, double t) {
  if (x0.size() != x1.size()) throw_shape("interpolate: size mismatch");
  if (t < 0.0 || t > 1.0) throw_value("interpolate: t outside [0,1]");
  std::vector<T> out(x0.size());
  for (size_t i = 0; i < x0.size(); ++i)
    out[i] = static_cast<T>((1.0 - t) * static_cast<double>(x0[i]) +
                            t * static_cast<double>(x1[i]));
  return out;
}

template <typename T>
std::vector<T> target_velocity(const std::vector<T>& x0, const std::vector<T>& x1) {
  if (x0.size() != x1.size()) throw_shape("target_velocity: size mismatch");
  std::vector<T> out(x0.size());
  for (size_t i = 0; i < x0.size(); ++i) out[i] = x1[i] - x0[i];
  return out;
}

template <typename T>
struct FlowSampleT {
  std::vector<T> x0, x1;
  double t = 0;
  std::vector<T> x_t;  // (1-t) x0 + t x1, exactly
  std::vector<T> u;    // x1 - x0, exactly
};

using FlowSample = FlowSampleT<float>;

template <typename T>
FlowSampleT<T> make_flow_sample(std::vector<T> x0, std::vector<T> x1, double t) {
  FlowSampleT<T> s;
  s.x_t = interpolate(x0, x1, t);
  s.u = target_velocity(x0, x1);
  s.x0 = std::move(x0);
  s.x1 = std::move(x1);
  s.t = t;
  return s;
}

struct SamplerConfig {
  int steps = 50;  // uniform dt = 1/steps
};

// x <- x - dt * field(x, t) for t = 1, 1-dt, ..., dt.
template <typename T>
std::vector<T> euler_integrate(
    const std::function<std::vector<T>(const std::vector<T>&, double)>& field, std::vector<T> x,
    int steps) {
  if (steps < 1) throw_value("euler_integrate: steps must be >= 1");
  double dt = 1.0 / steps;
  for (int k = 0; k < steps; ++k) {
    double t = static_cast<double>(steps - k) / steps;
    std::vector<T> v = field(x, t);
    if (v.size() != x.size()) throw_shape("euler_integrate: field changed the state size");
    for (size_t i = 0; i < x.size(); ++i)
      x[i] = static_cast<T>(static_cast<double>(x[i]) - dt * static_cast<double>(v[i]));
  }
  return x;
}

// Model-bound velocity field over channel-major block buffers.
std::function<std::vector<float>(const std::vector<float>&, double)> model_field(
    const ModelParams& params, std::vector<float> cond_chw, std::vector<float> text);

std::vector<float> euler_sample(const ModelParams& params, std::vector<float> x1_chw,
                                const std::vector<float>& cond_chw,
                                const TextEmbedding& text, const SamplerConfig& config);

// ---------------------------------------------------------------------------
// training loss

// Gradient buffers aligned index-for-index with params.tensors.
using GradBuffers = std::vector<std::vector<float>>;

GradBuffers make_grad_buffers(const ModelParams& params);

// Draws (t ~ U[0,1], x1 ~ N(0,I)) per sample from `rng` in batch order,
// then adds each per-sample gradient into `accum` (sample order, so the
// result is independent of the thread count). Returns the sum over the
// batch of per-sample mean-squared losses.
double fm_loss_accumulate(const ModelParams& params, const std::vector<PairSample>& batch,
                          Rng& rng, GradBuffers& accum, int threads);

struct FmLoss {
  double loss = 0;     // mean over batch of per-sample mean ||v - u||^2
  GradBuffers grads;   // gradient of that mean
};

FmLoss fm_loss(const ModelParams& params, const std::vector<PairSample>& batch, Rng& rng,
               int threads = 1);

// Loss under an arbitrary velocity rule (no network, no gradients); the
// rule sees the interpolant, t, the sample and the exact target velocity.
using VelocityRule = std::function<std::vector<float>(const std::vector<float>& x_t, double t,
                                                      const PairSample&,
                                                      const std::vector<float>& u)>;

double fm_loss_rule(const VelocityRule& rule, const std::vector<PairSample>& batch, Rng& rng);

}  // namespace volflow
