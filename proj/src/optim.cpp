#include "vdet/optim.hpp"

#include <algorithm>
#include <cmath>
#include <utility>

namespace vdet::optim {

void OptimizerConfig::validate() const {
  if (name != "adamw" && name != "sgd") throw ConfigError("optimizer.name must be \"adamw\" or \"sgd\", got \"" + name + "\"");
  if (!(lr > 0.0)) throw ConfigError("optimizer.lr must be > 0");
  if (weight_decay < 0.0) throw ConfigError("optimizer.weight_decay must be >= 0");
  if (beta1 < 0.0 || beta1 >= 1.0 || beta2 < 0.0 || beta2 >= 1.0) throw ConfigError("optimizer betas must lie in [0, 1)");
  if (!(eps > 0.0)) throw ConfigError("optimizer.eps must be > 0");
  if (momentum < 0.0 || momentum >= 1.0) throw ConfigError("optimizer.momentum must lie in [0, 1)");
  if (schedule != "constant" && schedule != "cosine") {
    throw ConfigError("optimizer.schedule must be \"constant\" or \"cosine\", got \"" + schedule + "\"");
  }
  if (clip_norm < 0.0) throw ConfigError("optimizer.clip_norm must be >= 0");
}

bool decays(const Parameter& p) {
  return p.value.rank() >= 2 && p.name.find("relative_bias") == std::string::npos;
}

void Optimizer::load_state(std::map<std::string, Tensor> state, std::int64_t steps) {
  state_ = std::move(state);
  steps_ = steps;
}

Tensor& Optimizer::slot(const std::string& slot, const Parameter& p) {
  auto [it, inserted] = state_.try_emplace(slot + "/" + p.name);
  if (inserted) it->second = Tensor::zeros(p.value.shape());
  if (it->second.shape() != p.value.shape()) {
    throw ValidationError("optimizer state " + it->first + " has shape " + to_string(it->second.shape()) +
                          ", parameter has " + to_string(p.value.shape()));
  }
  return it->second;
}

void AdamW::step(ParameterStore& store) {
  ++steps_;
  const double t = static_cast<double>(steps_);
  const double bc1 = 1.0 - std::pow(cfg_.beta1, t);
  const double bc2 = 1.0 - std::pow(cfg_.beta2, t);
  const double lr = cfg_.lr * lr_scale_;
  for (Parameter* p : store.all()) {
    auto m = slot("m", *p).data();
    auto v = slot("v", *p).data();
    auto w = p->value.data();
    auto g = p->grad.data();
    const double decay = decays(*p) ? lr * cfg_.weight_decay : 0.0;
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g[i];
      v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
      const double mhat = m[i] / bc1, vhat = v[i] / bc2;
      w[i] -= decay * w[i];
      w[i] -= lr * mhat / (std::sqrt(vhat) + cfg_.eps);
    }
  }
}

void Sgd::step(ParameterStore& store) {
  ++steps_;
  const double lr = cfg_.lr * lr_scale_;
  for (Parameter* p : store.all()) {
    auto buf = slot("momentum", *p).data();
    auto w = p->value.data();
    auto g = p->grad.data();
    const double decay = decays(*p) ? lr * cfg_.weight_decay : 0.0;
    for (std::size_t i = 0; i < w.size(); ++i) {
      buf[i] = cfg_.momentum * buf[i] + g[i];
      w[i] -= decay * w[i];
      w[i] -= lr * buf[i];
    }
  }
}

double schedule_scale(const OptimizerConfig& cfg, std::int64_t step, std::int64_t total) {
  if (cfg.schedule != "cosine" || total <= 1) return 1.0;
  const double progress = static_cast<double>(std::clamp<std::int64_t>(step - 1, 0, total - 1)) / static_cast<double>(total);
  return 0.5 * (1.0 + std::cos(std::acos(-1.0) * progress));
}

std::unique_ptr<Optimizer> make_optimizer(const OptimizerConfig& cfg) {
  cfg.validate();
  if (cfg.name == "sgd") return std::make_unique<Sgd>(cfg);
  return std::make_unique<AdamW>(cfg);
}

double clip_grad_norm(ParameterStore& store, double max_norm) {
  double sq = 0.0;
  for (const Parameter* p : std::as_const(store).all()) {
    for (double g : p->grad.data()) sq += g * g;
  }
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const double s = max_norm / norm;
    for (Parameter* p : store.all()) {
      for (double& g : p->grad.data()) g *= s;
    }
  }
  return norm;
}

}  // namespace vdet::optim
