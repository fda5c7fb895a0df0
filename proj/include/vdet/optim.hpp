#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <string>

#include "vdet/autodiff.hpp"

namespace vdet::optim {

struct OptimizerConfig {
  std::string name = "adamw";  // "adamw" | "sgd"
  double lr = 1e-4;
  double weight_decay = 0.05;
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  double momentum = 0.9;
  double clip_norm = 0.0;  // 0 disables global-norm clipping
  std::string schedule = "constant";  // "constant" | "cosine" (decays to 0 over the run)

  void validate() const;
};

/// Weight decay applies to matrices and kernels; biases, norm gains and relative-position tables are exempt.
bool decays(const Parameter& p);

class Optimizer {
 public:
  virtual ~Optimizer() = default;
  virtual void step(ParameterStore& store) = 0;

  /// Per-parameter slots keyed "<slot>/<parameter name>", plus the step count.
  const std::map<std::string, Tensor>& state() const { return state_; }
  void load_state(std::map<std::string, Tensor> state, std::int64_t steps);
  std::int64_t steps() const { return steps_; }
  /// Multiplier on the configured learning rate for subsequent steps.
  void set_lr_scale(double s) { lr_scale_ = s; }

 protected:
  Tensor& slot(const std::string& slot, const Parameter& p);

  std::map<std::string, Tensor> state_;
  std::int64_t steps_ = 0;
  double lr_scale_ = 1.0;
};

/// Adam with decoupled weight decay.
class AdamW : public Optimizer {
 public:
  explicit AdamW(OptimizerConfig cfg) : cfg_(std::move(cfg)) {}
  void step(ParameterStore& store) override;

 private:
  OptimizerConfig cfg_;
};

/// Gradient descent with heavy-ball momentum and decoupled weight decay.
class Sgd : public Optimizer {
 public:
  explicit Sgd(OptimizerConfig cfg) : cfg_(std::move(cfg)) {}
  void step(ParameterStore& store) override;

 private:
  OptimizerConfig cfg_;
};

std::unique_ptr<Optimizer> make_optimizer(const OptimizerConfig& cfg);

/// Learning-rate multiplier for 1-based `step` of a run of `total` steps.
double schedule_scale(const OptimizerConfig& cfg, std::int64_t step, std::int64_t total);

/// Scales all gradients so their joint L2 norm is at most max_norm. Returns the norm before scaling.
double clip_grad_norm(ParameterStore& store, double max_norm);

}  // namespace vdet::optim
