#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "gnndiff/pae.hpp"

namespace gnndiff {

/// Linear beta schedule; tables are 1-based through the accessors.
struct DiffusionSchedule {
  int steps = 0;
  std::vector<double> beta, alpha_bar, sigma;

  double beta_at(int t) const { return beta.at(static_cast<std::size_t>(t - 1)); }
  double alpha_bar_at(int t) const { return alpha_bar.at(static_cast<std::size_t>(t - 1)); }
  double sigma_at(int t) const { return sigma.at(static_cast<std::size_t>(t - 1)); }
};

/// beta_t = beta_1 + (t-1)(beta_T - beta_1)/(T-1), alpha_bar_t = prod(1 - beta_i), sigma_t = sqrt(beta_t).
DiffusionSchedule build_schedule(int steps = 1000, double beta_first = 1e-4, double beta_last = 0.02);

/// sqrt(alpha_bar_t) z0 + sqrt(1 - alpha_bar_t) eps.
Tensor forward_diffuse(const Tensor& z0, int t, const Tensor& eps, const DiffusionSchedule& schedule);

inline constexpr std::size_t kTimeEmbedding = 64;
inline constexpr std::size_t kDenoiserWidth = 24;

std::vector<float> sinusoidal_embedding(int t, std::size_t dim = kTimeEmbedding);

/// Encoder-decoder of 8 kernel-1 conv blocks over [B, 6, L]. Time and condition
/// embeddings are projected to the latent shape, summed, and added (through a
/// per-block 1x1 lift) to the input of every block. Encoder outputs skip to the
/// mirrored decoder inputs.
struct Denoiser {
  std::size_t length = 0;
  ad::Var time_w, time_b, cond_w, cond_b;
  std::vector<ConvBlock> blocks;
  std::vector<ConvBlock> lifts;
  std::vector<double> losses;

  std::size_t latent_dim() const noexcept { return kLatentChannels * length; }
  std::vector<ad::Var> parameters() const;
};

Denoiser denoiser_init(std::size_t latent_dim, ad::Rng& rng);

/// Predicted noise [B, latent_dim] for noisy latents `z` [B, latent_dim] at steps `t`.
ad::Var denoiser_forward(const Denoiser& m, const ad::Var& z, std::span<const int> t, std::span<const float> cond);

struct GldmOptions {
  int epochs = 6000;
  std::size_t batch = 50;
  double learning_rate = 1e-3;
  double weight_decay = 2e-3;
  std::uint64_t seed = 42;
};

/// Minimizes mean ||eps - eps_theta(z_t, t, c)||^2 over uniformly drawn t. `latents` is [n, latent_dim].
Denoiser gldm_train(const Tensor& latents, std::span<const float> cond, const DiffusionSchedule& schedule,
                    const GldmOptions& options);

using NoisePredictor = std::function<Tensor(const Tensor& z, int t)>;

/// `count` reverse chains from N(0, I); chain i draws from its own seed stream,
/// so results do not depend on batching. e = 0 on the last step.
Tensor ancestral_sample(const NoisePredictor& predict, std::size_t latent_dim, const DiffusionSchedule& schedule,
                        std::size_t count, std::uint64_t seed);

Tensor gldm_sample(const Denoiser& m, std::span<const float> cond, const DiffusionSchedule& schedule,
                   std::size_t count, std::uint64_t seed);

}  // namespace gnndiff
