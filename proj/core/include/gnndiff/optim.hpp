#pragma once

#include <string>
#include <vector>

#include "gnndiff/autodiff.hpp"

namespace gnndiff {

enum class OptimizerKind { SGD, Adam, AdamW };

std::string to_string(OptimizerKind kind);
/// Accepts "SGD", "Adam", "AdamW" (case-insensitive). Throws ContractError otherwise.
OptimizerKind parse_optimizer(const std::string& name);

/// First-order optimizer over a fixed set of parameters.
///
///   SGD:   p <- p - lr * (g + wd * p)
///   Adam:  g <- g + wd * p, then bias-corrected moments, beta = (0.9, 0.999), eps = 1e-8
///   AdamW: p <- p - lr * wd * p (decoupled), then the Adam update without the wd term
class Optimizer {
 public:
  Optimizer(OptimizerKind kind, std::vector<ad::Var> params, double learning_rate, double weight_decay);

  /// Applies one update using each parameter's current grad, scaled learning
  /// rate `learning_rate * lr_multiplier`. Throws ContractError when a
  /// registered parameter has no gradient. Grads are cleared afterwards.
  void step(double lr_multiplier = 1.0);
  void zero_grad();

  OptimizerKind kind() const noexcept { return kind_; }
  double learning_rate() const noexcept { return lr_; }
  double weight_decay() const noexcept { return wd_; }
  long step_count() const noexcept { return steps_; }
  const std::vector<ad::Var>& params() const noexcept { return params_; }

  static constexpr double kBeta1 = 0.9;
  static constexpr double kBeta2 = 0.999;
  static constexpr double kEps = 1e-8;

 private:
  OptimizerKind kind_;
  std::vector<ad::Var> params_;
  double lr_;
  double wd_;
  long steps_ = 0;
  std::vector<Tensor> m_;
  std::vector<Tensor> v_;
};

/// Multi-step decay: multiplier(e) = gamma^(number of milestones <= e).
struct LrSchedule {
  std::vector<int> milestones;
  double gamma = 1.0;

  double multiplier(int epoch) const;
};

}  // namespace gnndiff
