#include "gnndiff/gldm.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include "gnndiff/error.hpp"
#include "gnndiff/optim.hpp"
#include "gnndiff/rng.hpp"

namespace gnndiff {

DiffusionSchedule build_schedule(int steps, double beta_first, double beta_last) {
  if (steps < 2) throw ContractError("diffusion needs at least 2 steps");
  if (!(beta_first > 0.0 && beta_first <= beta_last && beta_last < 1.0))
    throw ContractError("beta range must satisfy 0 < beta_1 <= beta_T < 1");
  DiffusionSchedule s;
  s.steps = steps;
  double prod = 1.0;
  for (int t = 1; t <= steps; ++t) {
    const double b = beta_first + (t - 1) * (beta_last - beta_first) / (steps - 1);
    prod *= 1.0 - b;
    s.beta.push_back(b);
    s.alpha_bar.push_back(prod);
    s.sigma.push_back(std::sqrt(b));
  }
  return s;
}

Tensor forward_diffuse(const Tensor& z0, int t, const Tensor& eps, const DiffusionSchedule& schedule) {
  if (t < 1 || t > schedule.steps)
    throw ContractError("diffusion step " + std::to_string(t) + " outside [1, " + std::to_string(schedule.steps) + "]");
  if (z0.shape() != eps.shape())
    throw DimensionError("noise shape " + shape_str(eps.shape()) + " differs from latent " + shape_str(z0.shape()));
  const double ab = schedule.alpha_bar_at(t);
  const auto a = static_cast<float>(std::sqrt(ab)), b = static_cast<float>(std::sqrt(1.0 - ab));
  Tensor out(z0.shape());
  for (std::size_t i = 0; i < z0.numel(); ++i) out[i] = a * z0[i] + b * eps[i];
  return out;
}

std::vector<float> sinusoidal_embedding(int t, std::size_t dim) {
  std::vector<float> out(dim);
  const std::size_t half = dim / 2;
  for (std::size_t i = 0; i < half; ++i) {
    const double freq = std::exp(-std::log(10000.0) * static_cast<double>(i) / static_cast<double>(half));
    out[i] = static_cast<float>(std::sin(t * freq));
    out[half + i] = static_cast<float>(std::cos(t * freq));
  }
  return out;
}

std::vector<ad::Var> Denoiser::parameters() const {
  std::vector<ad::Var> out{time_w, time_b, cond_w, cond_b};
  for (const auto* group : {&blocks, &lifts})
    for (const auto& b : *group)
      for (auto& p : b.parameters()) out.push_back(p);
  return out;
}

Denoiser denoiser_init(std::size_t latent_dim, ad::Rng& rng) {
  if (latent_dim == 0 || latent_dim % kLatentChannels != 0)
    throw DimensionError("latent length " + std::to_string(latent_dim) + " is not a multiple of " +
                         std::to_string(kLatentChannels));
  Denoiser m;
  m.length = latent_dim / kLatentChannels;
  auto linear = [&](std::size_t in, std::size_t out, ad::Var& w, ad::Var& b) {
    const float bound = 1.0f / std::sqrt(static_cast<float>(in));
    std::uniform_real_distribution<float> u(-bound, bound);
    Tensor wt({in, out}), bt({out});
    for (auto& v : wt.storage()) v = u(rng);
    for (auto& v : bt.storage()) v = u(rng);
    w = ad::parameter(std::move(wt));
    b = ad::parameter(std::move(bt));
  };
  linear(kTimeEmbedding, latent_dim, m.time_w, m.time_b);
  linear(latent_dim, latent_dim, m.cond_w, m.cond_b);

  const std::size_t C = kLatentChannels, W = kDenoiserWidth;
  const std::size_t ins[8] = {C, W, W, W, W, W, W, W};
  const std::size_t outs[8] = {W, W, W, W, W, W, W, C};
  for (int i = 0; i < 8; ++i) {
    m.blocks.push_back(make_conv_block(ins[i], outs[i], 1, 1, false, i == 7, rng));
    m.lifts.push_back(make_conv_block(C, ins[i], 1, 1, false, true, rng));
  }
  return m;
}

ad::Var denoiser_forward(const Denoiser& m, const ad::Var& z, std::span<const int> t, std::span<const float> cond) {
  const std::size_t D = m.latent_dim();
  if (z->value.rank() != 2 || z->value.cols() != D)
    throw DimensionError("denoiser input has shape " + shape_str(z->value.shape()) + ", expected [B, " +
                         std::to_string(D) + "]");
  const std::size_t B = z->value.rows();
  if (t.size() != B) throw DimensionError("denoiser got " + std::to_string(t.size()) + " steps for batch " + std::to_string(B));
  if (cond.size() != D)
    throw DimensionError("condition has length " + std::to_string(cond.size()) + ", latent has " + std::to_string(D));

  Tensor sinus({B, kTimeEmbedding});
  for (std::size_t b = 0; b < B; ++b) {
    const auto e = sinusoidal_embedding(t[b]);
    std::copy(e.begin(), e.end(), sinus.data() + b * kTimeEmbedding);
  }
  auto temb = ad::add(ad::matmul(ad::constant(std::move(sinus)), m.time_w), m.time_b);
  auto cemb = ad::add(ad::matmul(ad::constant(Tensor({1, D}, std::vector<float>(cond.begin(), cond.end()))), m.cond_w),
                      m.cond_b);
  const Shape latent{B, kLatentChannels, m.length};
  auto emb = ad::reshape(ad::add(temb, cemb), latent);

  auto h = ad::reshape(z, latent);
  std::vector<ad::Var> skips;
  for (int i = 0; i < 8; ++i) {
    if (i >= 5) h = ad::add(h, skips[static_cast<std::size_t>(7 - i)]);
    h = m.blocks[i](ad::add(h, m.lifts[i](emb)));
    if (i < 4) skips.push_back(h);
  }
  return ad::reshape(h, {B, D});
}

Denoiser gldm_train(const Tensor& latents, std::span<const float> cond, const DiffusionSchedule& schedule,
                    const GldmOptions& options) {
  if (latents.rank() != 2 || latents.rows() == 0) throw ContractError("diffusion training needs a [n, D] latent batch");
  const std::size_t n = latents.rows(), D = latents.cols();
  ad::Rng init(derive_seed(options.seed, {0xd1f}));
  Denoiser m = denoiser_init(D, init);
  Optimizer opt(OptimizerKind::AdamW, m.parameters(), options.learning_rate, options.weight_decay);
  ad::Rng rng(derive_seed(options.seed, {0xd1f, 1}));
  std::uniform_int_distribution<int> step(1, schedule.steps);
  std::normal_distribution<float> normal(0.0f, 1.0f);
  const std::size_t batch = std::max<std::size_t>(1, std::min(options.batch, n));
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);

  for (int epoch = 0; epoch < options.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < n; start += batch) {
      const std::size_t bs = std::min(batch, n - start);
      Tensor zt({bs, D}), eps({bs, D});
      std::vector<int> ts(bs);
      for (std::size_t i = 0; i < bs; ++i) {
        ts[i] = step(rng);
        const double ab = schedule.alpha_bar_at(ts[i]);
        const auto a = static_cast<float>(std::sqrt(ab)), s = static_cast<float>(std::sqrt(1.0 - ab));
        const float* z0 = latents.data() + order[start + i] * D;
        for (std::size_t j = 0; j < D; ++j) {
          const float e = normal(rng);
          eps[i * D + j] = e;
          zt[i * D + j] = a * z0[j] + s * e;
        }
      }
      auto loss = ad::mse(denoiser_forward(m, ad::constant(std::move(zt)), ts, cond), ad::constant(std::move(eps)));
      epoch_loss += loss->value[0] * static_cast<double>(bs);
      ad::backward(loss);
      opt.step();
    }
    m.losses.push_back(epoch_loss / static_cast<double>(n));
    if (!std::isfinite(m.losses.back())) throw ContractError("diffusion training diverged");
  }
  return m;
}

Tensor ancestral_sample(const NoisePredictor& predict, std::size_t latent_dim, const DiffusionSchedule& schedule,
                        std::size_t count, std::uint64_t seed) {
  if (count == 0) throw ContractError("sample count must be positive");
  std::vector<ad::Rng> chains;
  chains.reserve(count);
  for (std::size_t c = 0; c < count; ++c) chains.emplace_back(derive_seed(seed, {c}));
  std::vector<std::normal_distribution<float>> normals(count);
  auto normal = [&](std::size_t c) { return normals[c](chains[c]); };

  Tensor z({count, latent_dim});
  for (std::size_t c = 0; c < count; ++c)
    for (std::size_t j = 0; j < latent_dim; ++j) z[c * latent_dim + j] = normal(c);

  for (int t = schedule.steps; t >= 1; --t) {
    const Tensor eps = predict(z, t);
    if (eps.shape() != z.shape()) throw DimensionError("noise predictor returned " + shape_str(eps.shape()));
    const double b = schedule.beta_at(t);
    const auto inv = static_cast<float>(1.0 / std::sqrt(1.0 - b));
    const auto coef = static_cast<float>(b / std::sqrt(1.0 - schedule.alpha_bar_at(t)));
    const auto sigma = static_cast<float>(schedule.sigma_at(t));
    for (std::size_t c = 0; c < count; ++c)
      for (std::size_t j = 0; j < latent_dim; ++j) {
        const std::size_t i = c * latent_dim + j;
        float next = inv * (z[i] - coef * eps[i]);
        if (t > 1) next += sigma * normal(c);
        z[i] = next;
      }
  }
  return z;
}

Tensor gldm_sample(const Denoiser& m, std::span<const float> cond, const DiffusionSchedule& schedule,
                   std::size_t count, std::uint64_t seed) {
  const std::vector<float> c(cond.begin(), cond.end());
  const std::size_t D = m.latent_dim();
  auto predict = [&](const Tensor& z, int t) {
    const std::vector<int> ts{t};
    Tensor eps(z.shape());
    for (std::size_t r = 0; r < z.rows(); ++r) {
      Tensor row({1, D}, std::vector<float>(z.data() + r * D, z.data() + (r + 1) * D));
      const auto out = denoiser_forward(m, ad::constant(std::move(row)), ts, c);
      std::copy_n(out->value.data(), D, eps.data() + r * D);
    }
    return eps;
  };
  return ancestral_sample(predict, m.latent_dim(), schedule, count, seed);
}

}  // namespace gnndiff
