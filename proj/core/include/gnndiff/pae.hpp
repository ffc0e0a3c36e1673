#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "gnndiff/autodiff.hpp"
#include "gnndiff/gnn.hpp"

namespace gnndiff {

struct KernelStride {
  std::size_t kernel = 0;
  std::size_t stride = 0;
  bool operator==(const KernelStride&) const = default;
};

/// First-block kernel and stride by parameter count:
/// <=99 -> 2, <=499 -> 3, <=999 -> 4, <=4999 -> 5, then +1 per further 5000.
KernelStride pae_kernel_rule(std::size_t param_count);

inline constexpr std::size_t kLatentChannels = 6;

/// Latent length for a parameter vector of `param_count` entries: 6 * ceil(param_count / k).
std::size_t pae_latent_dim(std::size_t param_count);

/// conv -> LeakyReLU -> InstanceNorm, or a bare (transposed) conv when `plain`.
struct ConvBlock {
  ad::Var weight;
  ad::Var bias;
  ad::Var gamma;
  ad::Var beta;
  std::size_t stride = 1;
  bool transposed = false;
  bool plain = false;

  ad::Var operator()(const ad::Var& x) const;
  std::vector<ad::Var> parameters() const;
};

/// PyTorch-style uniform(+-1/sqrt(fan_in)) init; `transposed` takes weights [in, out, k].
ConvBlock make_conv_block(std::size_t in_ch, std::size_t out_ch, std::size_t kernel, std::size_t stride,
                          bool transposed, bool plain, ad::Rng& rng);

struct PaeModel {
  std::size_t input_dim = 0;
  KernelStride ks;
  /// Input length after right-padding to a multiple of the stride.
  std::size_t padded_dim = 0;
  /// Per-channel latent length.
  std::size_t length = 0;
  std::vector<float> mean, scale;
  std::vector<ConvBlock> encoder, decoder;
  std::vector<double> losses;

  std::size_t latent_dim() const noexcept { return kLatentChannels * length; }
  std::vector<ad::Var> parameters() const;
};

inline constexpr std::size_t kPaeDecoderWidth = 512;
inline constexpr std::size_t kPaeDecoderBottleneck = 8;

struct PaeOptions {
  int epochs = 9000;
  std::size_t batch = 50;
  double learning_rate = 1e-3;
  double weight_decay = 2e-3;
  std::uint64_t seed = 42;
};

/// Untrained model with identity standardization.
PaeModel pae_init(std::size_t param_count, ad::Rng& rng);

/// Fits the standardization on `vectors`, then minimizes reconstruction MSE with AdamW.
PaeModel pae_train(const std::vector<ParamVector>& vectors, const PaeOptions& options);

/// Graph pieces operating on standardized, padded batches [B, 1, padded_dim] and latents [B, 6, length].
ad::Var pae_encoder_forward(const PaeModel& m, const ad::Var& x);
ad::Var pae_decoder_forward(const PaeModel& m, const ad::Var& z);

/// Standardized, padded batch of raw vectors.
Tensor pae_prepare(const PaeModel& m, const std::vector<ParamVector>& vectors);

/// Flat channel-major latent of length latent_dim().
std::vector<float> pae_encode(const PaeModel& m, const ParamVector& v);
ParamVector pae_decode(const PaeModel& m, std::span<const float> z);

/// Batched versions; latents as [B, latent_dim].
Tensor pae_encode_batch(const PaeModel& m, const std::vector<ParamVector>& vectors);
std::vector<ParamVector> pae_decode_batch(const PaeModel& m, const Tensor& latents);

}  // namespace gnndiff
