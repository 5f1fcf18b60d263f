#pragma once

// Mini-batch training of the backbone and rank head. Per-sample gradients are
// computed independently and summed in sample order, so results do not
// depend on the worker count.

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "rgr/neural_core.hpp"
#include "rgr/rsp.hpp"
#include "rgr/training_objectives.hpp"

namespace rgr {

enum class Variant { kFull, kNoIap, kNoRsp, kNoBoth };

std::string_view variant_name(Variant v);
Variant parse_variant(std::string_view name);

enum class Optimizer { kSgdMomentum, kAdam };

std::string_view optimizer_name(Optimizer o);
Optimizer parse_optimizer(std::string_view name);

struct TrainConfig {
  int steps = 400;
  int batch_size = 16;
  double learning_rate = 1e-3;
  double momentum = 0.9;
  double clip_norm = 1.0;  // global gradient norm; <= 0 disables clipping
  double head_lr_scale = 10.0;  // rank-head rate = learning_rate * head_lr_scale
  Optimizer optimizer = Optimizer::kAdam;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  LossWeights weights;
  RspTrainOptions rsp;
  int history_warmup_steps = 0;  // causal NTP over histories before the main loop
  void validate(const ModelConfig& model) const;
};

// Loss wiring of one variant.
struct VariantSetup {
  LossWeights weights;
  PositiveTiers positives;
  LayoutTiers layout;
  bool use_rsp = true;
};

VariantSetup variant_setup(Variant variant, const TrainConfig& config);

struct StepLog {
  int step = 0;
  double learning_rate = 0;
  double loss = 0;  // batch mean of the optimized objective
  double iap = 0;
  double ntp = 0;
  std::optional<double> ldpo;  // absent when alpha == 0 or every sample skipped
  std::optional<double> bce;   // absent without a rank head
  double grad_norm = 0;        // before clipping
  std::string batch_digest;
};

struct TrainedModel {
  Variant variant = Variant::kFull;
  double alpha = 1.0;
  Backbone<float> backbone;
  std::optional<RankHead<float>> head;
  std::vector<StepLog> log;
  int steps_done = 0;
};

// Deterministic batch order: successive shuffled epochs over the sample
// indices. Depends only on (n_samples, steps, batch_size, seed).
std::vector<std::vector<std::size_t>> batch_schedule(std::size_t n_samples, int steps, int batch_size,
                                                     std::uint64_t seed);

std::string batch_digest(const std::vector<std::size_t>& indices);

// Causal next-token loss over BOS + history (every history token supervised).
template <typename T>
ad::Var<T> history_ntp_loss(ad::Tape<T>& tape, const Backbone<T>& model, const Binding<T>& binding,
                            const SessionSample& sample);

class Trainer {
 public:
  // `seed` initialises both networks; batches use the same seed via
  // batch_schedule().
  Trainer(ModelConfig model, TrainConfig config, Variant variant, std::uint64_t seed);
  Trainer(TrainedModel start, TrainConfig config);

  // One optimizer step on the given samples with an explicit learning rate.
  StepLog step(const std::vector<const SessionSample*>& batch, double learning_rate);
  // One warm-up step on histories only.
  double warmup_step(const std::vector<const SessionSample*>& batch, double learning_rate);

  const TrainedModel& model() const { return model_; }
  TrainedModel release() { return std::move(model_); }
  const VariantSetup& setup() const { return setup_; }

 private:
  void apply(ParameterSet<float>& grads_backbone, ParameterSet<float>* grads_head,
             double learning_rate, StepLog& log);

  TrainConfig config_;
  VariantSetup setup_;
  TrainedModel model_;
  ParameterSet<float> m_backbone_, v_backbone_;
  ParameterSet<float> m_head_, v_head_;
  int adam_t_ = 0;
};

// Linear decay from the base rate to zero over `steps`.
double scheduled_rate(double base, int step, int steps);

// Full training run: optional history warm-up, then config.steps steps.
TrainedModel train_model(const std::vector<SessionSample>& samples, const ModelConfig& model,
                         const TrainConfig& config, Variant variant, std::uint64_t seed);

}  // namespace rgr
