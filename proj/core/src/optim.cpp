#include "gnndiff/optim.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>

#include "gnndiff/error.hpp"

namespace gnndiff {

std::string to_string(OptimizerKind kind) {
  switch (kind) {
    case OptimizerKind::SGD: return "SGD";
    case OptimizerKind::Adam: return "Adam";
    case OptimizerKind::AdamW: return "AdamW";
  }
  return "?";
}

OptimizerKind parse_optimizer(const std::string& name) {
  std::string lower;
  std::transform(name.begin(), name.end(), std::back_inserter(lower), [](unsigned char c) { return std::tolower(c); });
  if (lower == "sgd") return OptimizerKind::SGD;
  if (lower == "adam") return OptimizerKind::Adam;
  if (lower == "adamw") return OptimizerKind::AdamW;
  throw ContractError("unknown optimizer '" + name + "'");
}

Optimizer::Optimizer(OptimizerKind kind, std::vector<ad::Var> params, double learning_rate, double weight_decay)
    : kind_(kind), params_(std::move(params)), lr_(learning_rate), wd_(weight_decay) {
  if (!(learning_rate > 0.0)) throw ContractError("learning rate must be positive");
  if (weight_decay < 0.0) throw ContractError("weight decay must be non-negative");
  if (kind_ != OptimizerKind::SGD) {
    for (const auto& p : params_) {
      m_.emplace_back(p->value.shape());
      v_.emplace_back(p->value.shape());
    }
  }
}

void Optimizer::zero_grad() { ad::zero_grad(params_); }

void Optimizer::step(double lr_multiplier) {
  for (const auto& p : params_)
    if (p->grad.empty())
      throw ContractError("optimizer step: parameter '" + (p->name.empty() ? std::string("<unnamed>") : p->name) +
                          "' has no gradient");
  ++steps_;
  const double lr = lr_ * lr_multiplier;
  if (kind_ == OptimizerKind::SGD) {
    for (const auto& p : params_) {
      float* w = p->value.data();
      const float* g = p->grad.data();
      for (std::size_t i = 0; i < p->value.numel(); ++i)
        w[i] = static_cast<float>(w[i] - lr * (g[i] + wd_ * w[i]));
    }
  } else {
    const double bc1 = 1.0 - std::pow(kBeta1, static_cast<double>(steps_));
    const double bc2 = 1.0 - std::pow(kBeta2, static_cast<double>(steps_));
    const bool decoupled = kind_ == OptimizerKind::AdamW;
    for (std::size_t k = 0; k < params_.size(); ++k) {
      float* w = params_[k]->value.data();
      const float* g = params_[k]->grad.data();
      float* m = m_[k].data();
      float* v = v_[k].data();
      for (std::size_t i = 0; i < params_[k]->value.numel(); ++i) {
        double grad = g[i];
        double wi = w[i];
        if (decoupled)
          wi -= lr * wd_ * wi;
        else
          grad += wd_ * wi;
        m[i] = static_cast<float>(kBeta1 * m[i] + (1.0 - kBeta1) * grad);
        v[i] = static_cast<float>(kBeta2 * v[i] + (1.0 - kBeta2) * grad * grad);
        const double m_hat = m[i] / bc1;
        const double v_hat = v[i] / bc2;
        w[i] = static_cast<float>(wi - lr * m_hat / (std::sqrt(v_hat) + kEps));
      }
    }
  }
  zero_grad();
}

double LrSchedule::multiplier(int epoch) const {
  const auto passed = std::count_if(milestones.begin(), milestones.end(), [epoch](int m) { return m <= epoch; });
  return std::pow(gamma, static_cast<double>(passed));
}

}  // namespace gnndiff
