#include "gnndiff/pae.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "gnndiff/error.hpp"
#include "gnndiff/optim.hpp"
#include "gnndiff/rng.hpp"

namespace gnndiff {

KernelStride pae_kernel_rule(std::size_t n) {
  if (n == 0) throw ContractError("parameter count must be positive");
  std::size_t k = 0;
  if (n <= 99)
    k = 2;
  else if (n <= 499)
    k = 3;
  else if (n <= 999)
    k = 4;
  else
    k = 5 + n / 5000;
  return {k, k};
}

std::size_t pae_latent_dim(std::size_t n) {
  const auto k = pae_kernel_rule(n).kernel;
  return kLatentChannels * ((n + k - 1) / k);
}

ad::Var ConvBlock::operator()(const ad::Var& x) const {
  auto y = transposed ? ad::conv_transpose1d(x, weight, bias, stride) : ad::conv1d(x, weight, bias, stride);
  if (plain) return y;
  return ad::instance_norm1d(ad::leaky_relu(y), gamma, beta);
}

std::vector<ad::Var> ConvBlock::parameters() const {
  std::vector<ad::Var> out{weight, bias};
  if (!plain) {
    out.push_back(gamma);
    out.push_back(beta);
  }
  return out;
}

ConvBlock make_conv_block(std::size_t in_ch, std::size_t out_ch, std::size_t kernel, std::size_t stride,
                          bool transposed, bool plain, ad::Rng& rng) {
  const std::size_t fan_in = (transposed ? out_ch : in_ch) * kernel;
  const float bound = 1.0f / std::sqrt(static_cast<float>(fan_in));
  std::uniform_real_distribution<float> u(-bound, bound);
  Tensor w(transposed ? Shape{in_ch, out_ch, kernel} : Shape{out_ch, in_ch, kernel});
  for (auto& v : w.storage()) v = u(rng);
  Tensor b({out_ch});
  for (auto& v : b.storage()) v = u(rng);
  ConvBlock blk;
  blk.weight = ad::parameter(std::move(w));
  blk.bias = ad::parameter(std::move(b));
  if (!plain) {
    blk.gamma = ad::parameter(Tensor({out_ch}, 1.0f));
    blk.beta = ad::parameter(Tensor({out_ch}));
  }
  blk.stride = stride;
  blk.transposed = transposed;
  blk.plain = plain;
  return blk;
}

std::vector<ad::Var> PaeModel::parameters() const {
  std::vector<ad::Var> out;
  for (const auto* blocks : {&encoder, &decoder})
    for (const auto& b : *blocks)
      for (auto& p : b.parameters()) out.push_back(p);
  return out;
}

PaeModel pae_init(std::size_t param_count, ad::Rng& rng) {
  PaeModel m;
  m.input_dim = param_count;
  m.ks = pae_kernel_rule(param_count);
  const std::size_t k = m.ks.kernel;
  m.length = (param_count + k - 1) / k;
  m.padded_dim = m.length * k;
  m.mean.assign(param_count, 0.0f);
  m.scale.assign(param_count, 1.0f);

  const std::size_t C = kLatentChannels;
  m.encoder.push_back(make_conv_block(1, C, k, m.ks.stride, false, false, rng));
  for (int i = 0; i < 3; ++i) m.encoder.push_back(make_conv_block(C, C, 1, 1, false, false, rng));

  m.decoder.push_back(make_conv_block(C, kPaeDecoderWidth, 1, 1, false, false, rng));
  m.decoder.push_back(make_conv_block(kPaeDecoderWidth, kPaeDecoderWidth, 1, 1, false, false, rng));
  m.decoder.push_back(make_conv_block(kPaeDecoderWidth, kPaeDecoderBottleneck, 1, 1, false, false, rng));
  m.decoder.push_back(make_conv_block(kPaeDecoderBottleneck, 1, k, m.ks.stride, true, true, rng));
  return m;
}

ad::Var pae_encoder_forward(const PaeModel& m, const ad::Var& x) {
  auto h = x;
  for (const auto& b : m.encoder) h = b(h);
  return h;
}

ad::Var pae_decoder_forward(const PaeModel& m, const ad::Var& z) {
  auto h = z;
  for (const auto& b : m.decoder) h = b(h);
  return h;
}

Tensor pae_prepare(const PaeModel& m, const std::vector<ParamVector>& vectors) {
  Tensor x({vectors.size(), 1, m.padded_dim});
  for (std::size_t b = 0; b < vectors.size(); ++b) {
    const auto& v = vectors[b].values;
    if (v.size() != m.input_dim)
      throw DimensionError("parameter vector has length " + std::to_string(v.size()) + ", autoencoder expects " +
                           std::to_string(m.input_dim));
    float* row = x.data() + b * m.padded_dim;
    for (std::size_t i = 0; i < m.input_dim; ++i) row[i] = (v[i] - m.mean[i]) / m.scale[i];
  }
  return x;
}

PaeModel pae_train(const std::vector<ParamVector>& vectors, const PaeOptions& options) {
  if (vectors.empty()) throw ContractError("autoencoder training needs at least one vector");
  const std::size_t n = vectors.size(), d = vectors.front().size();
  for (const auto& v : vectors)
    if (v.size() != d) throw DimensionError("parameter vectors differ in length");

  ad::Rng init(derive_seed(options.seed, {0xae}));
  PaeModel m = pae_init(d, init);
  for (std::size_t i = 0; i < d; ++i) {
    double mu = 0.0;
    for (const auto& v : vectors) mu += v.values[i];
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (const auto& v : vectors) var += (v.values[i] - mu) * (v.values[i] - mu);
    var /= static_cast<double>(n);
    m.mean[i] = static_cast<float>(mu);
    m.scale[i] = std::max(static_cast<float>(std::sqrt(var)), 1e-8f);
  }

  const Tensor data = pae_prepare(m, vectors);
  const std::size_t P = m.padded_dim;
  const std::size_t batch = std::max<std::size_t>(1, std::min(options.batch, n));
  Optimizer opt(OptimizerKind::AdamW, m.parameters(), options.learning_rate, options.weight_decay);
  ad::Rng shuffle(derive_seed(options.seed, {0xae, 1}));
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);

  for (int epoch = 0; epoch < options.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < n; start += batch) {
      const std::size_t bs = std::min(batch, n - start);
      Tensor xb({bs, 1, P});
      for (std::size_t i = 0; i < bs; ++i)
        std::copy_n(data.data() + order[start + i] * P, P, xb.data() + i * P);
      auto x = ad::constant(std::move(xb));
      auto loss = ad::mse(pae_decoder_forward(m, pae_encoder_forward(m, x)), x);
      epoch_loss += loss->value[0] * static_cast<double>(bs);
      ad::backward(loss);
      opt.step();
    }
    m.losses.push_back(epoch_loss / static_cast<double>(n));
    if (!std::isfinite(m.losses.back())) throw ContractError("parameter autoencoder training diverged");
  }
  return m;
}

Tensor pae_encode_batch(const PaeModel& m, const std::vector<ParamVector>& vectors) {
  const auto z = pae_encoder_forward(m, ad::constant(pae_prepare(m, vectors)));
  return z->value.reshaped({vectors.size(), m.latent_dim()});
}

std::vector<ParamVector> pae_decode_batch(const PaeModel& m, const Tensor& latents) {
  if (latents.rank() != 2 || latents.cols() != m.latent_dim())
    throw DimensionError("latent batch has shape " + shape_str(latents.shape()) + ", autoencoder expects [B, " +
                         std::to_string(m.latent_dim()) + "]");
  const std::size_t B = latents.rows();
  const auto y = pae_decoder_forward(m, ad::constant(latents.reshaped({B, kLatentChannels, m.length})));
  std::vector<ParamVector> out(B);
  for (std::size_t b = 0; b < B; ++b) {
    const float* row = y->value.data() + b * m.padded_dim;
    auto& v = out[b].values;
    v.resize(m.input_dim);
    for (std::size_t i = 0; i < m.input_dim; ++i) v[i] = row[i] * m.scale[i] + m.mean[i];
  }
  return out;
}

std::vector<float> pae_encode(const PaeModel& m, const ParamVector& v) {
  return pae_encode_batch(m, {v}).storage();
}

ParamVector pae_decode(const PaeModel& m, std::span<const float> z) {
  if (z.size() != m.latent_dim())
    throw DimensionError("latent has length " + std::to_string(z.size()) + ", autoencoder expects " +
                         std::to_string(m.latent_dim()));
  return pae_decode_batch(m, Tensor({1, z.size()}, std::vector<float>(z.begin(), z.end()))).front();
}

}  // namespace gnndiff
