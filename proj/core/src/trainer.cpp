#include "rgr/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "rgr/digest.hpp"
#include "rgr/error.hpp"
#include "rgr/parallel.hpp"

namespace rgr {

std::string_view variant_name(Variant v) {
  switch (v) {
    case Variant::kFull: return "full";
    case Variant::kNoIap: return "no-iap";
    case Variant::kNoRsp: return "no-rsp";
    case Variant::kNoBoth: return "no-both";
  }
  return "full";
}

Variant parse_variant(std::string_view name) {
  for (Variant v : {Variant::kFull, Variant::kNoIap, Variant::kNoRsp, Variant::kNoBoth})
    if (variant_name(v) == name) return v;
  fail(ErrorCode::kInvalidConfig, "unknown variant '" + std::string(name) + "'");
}

std::string_view optimizer_name(Optimizer o) {
  return o == Optimizer::kAdam ? "adam" : "sgd";
}

Optimizer parse_optimizer(std::string_view name) {
  if (name == "sgd") return Optimizer::kSgdMomentum;
  if (name == "adam") return Optimizer::kAdam;
  fail(ErrorCode::kInvalidConfig, "unknown optimizer '" + std::string(name) + "'");
}

void TrainConfig::validate(const ModelConfig& model) const {
  auto check = [](bool ok, const std::string& what) {
    require(ok, ErrorCode::kInvalidConfig, "train: " + what);
  };
  check(steps >= 0, "steps must be >= 0");
  check(batch_size >= 1, "batch_size must be >= 1");
  check(learning_rate > 0 && std::isfinite(learning_rate), "learning_rate must be > 0");
  check(momentum >= 0 && momentum < 1, "momentum must be in [0, 1)");
  check(std::isfinite(clip_norm), "clip_norm must be finite");
  check(head_lr_scale > 0 && std::isfinite(head_lr_scale), "head_lr_scale must be > 0");
  check(adam_beta1 >= 0 && adam_beta1 < 1 && adam_beta2 >= 0 && adam_beta2 < 1 && adam_eps > 0,
        "adam parameters out of range");
  check(history_warmup_steps >= 0, "history_warmup_steps must be >= 0");
  check(static_cast<int>(rsp.lambdas.size()) == model.levels(), "one rsp lambda per level required");
  for (int l : rsp.lambdas) check(l >= 1, "rsp lambdas must be >= 1");
  check(rsp.temperature > 0, "rsp temperature must be > 0");
  weights.validate();
}

VariantSetup variant_setup(Variant variant, const TrainConfig& config) {
  VariantSetup s;
  s.weights = config.weights;
  s.positives = config.rsp.positives;
  const bool single_positive = variant == Variant::kNoIap || variant == Variant::kNoBoth;
  if (single_positive) {
    s.weights.alpha = 0;
    s.positives.include = {false, false, false, true};
    s.layout.include = {false, false, false, true};
  }
  s.use_rsp = variant == Variant::kFull || variant == Variant::kNoIap;
  return s;
}

std::vector<std::vector<std::size_t>> batch_schedule(std::size_t n_samples, int steps, int batch_size,
                                                     std::uint64_t seed) {
  require(n_samples > 0 || steps == 0, ErrorCode::kInvalidArgument, "batch_schedule: no samples");
  std::mt19937_64 rng(derive_seed(seed, "batches"));
  std::vector<std::size_t> perm(n_samples);
  std::size_t cursor = n_samples;
  std::vector<std::vector<std::size_t>> out(static_cast<std::size_t>(steps));
  for (auto& batch : out) {
    for (int b = 0; b < batch_size; ++b) {
      if (cursor == n_samples) {
        std::iota(perm.begin(), perm.end(), 0);
        std::shuffle(perm.begin(), perm.end(), rng);
        cursor = 0;
      }
      batch.push_back(perm[cursor++]);
    }
  }
  return out;
}

std::string batch_digest(const std::vector<std::size_t>& indices) {
  Fnv1a h;
  for (auto i : indices) h.pod(static_cast<std::uint64_t>(i));
  return h.hex();
}

double scheduled_rate(double base, int step, int steps) {
  if (steps <= 0) return base;
  return base * (1.0 - static_cast<double>(step) / static_cast<double>(steps));
}

template <typename T>
ad::Var<T> history_ntp_loss(ad::Tape<T>& tape, const Backbone<T>& model, const Binding<T>& binding,
                            const SessionSample& sample) {
  const ModelConfig& cfg = model.config();
  const int m = cfg.levels();
  require(!sample.history.empty(), ErrorCode::kEmptyHistory, "history_ntp_loss: empty history");
  std::vector<int> tokens{ModelConfig::kBos};
  for (const auto& sid : sample.history)
    for (int l = 0; l < m; ++l) tokens.push_back(cfg.token(l, sid[l]));
  const int n = static_cast<int>(tokens.size());
  std::vector<int> positions(tokens.size());
  std::iota(positions.begin(), positions.end(), 0);
  auto trace = forward(tape, model, binding, tokens, positions, AttentionMask::causal(n));
  std::vector<ad::Var<T>> terms;
  for (int l = 0; l < m; ++l) {
    std::vector<int> rows;
    std::vector<std::pair<int, int>> picks;
    for (int t = l; t < n - 1; t += m) {
      const SemanticId& sid = sample.history[static_cast<std::size_t>(t / m)];
      picks.emplace_back(static_cast<int>(rows.size()), sid[l]);
      rows.push_back(t);
    }
    if (rows.empty()) continue;
    auto logp = ad::log_softmax_rows(level_logits(trace, cfg, ad::gather_rows(trace.hidden, rows), l));
    terms.push_back(ad::sum(ad::pick(logp, std::move(picks))));
  }
  return ad::scale(ad::add_all<T>(tape, terms), T(-1) / static_cast<T>(n - 1));
}

template ad::Var<float> history_ntp_loss<float>(ad::Tape<float>&, const Backbone<float>&,
                                                const Binding<float>&, const SessionSample&);
template ad::Var<double> history_ntp_loss<double>(ad::Tape<double>&, const Backbone<double>&,
                                                  const Binding<double>&, const SessionSample&);

// ---- Trainer ----------------------------------------------------------------

Trainer::Trainer(ModelConfig model, TrainConfig config, Variant variant, std::uint64_t seed)
    : config_(std::move(config)),
      setup_(variant_setup(variant, config_)),
      model_{variant, setup_.weights.alpha,
             Backbone<float>(model, derive_seed(seed, "backbone")),
             std::nullopt, {}, 0} {
  model.validate();
  config_.validate(model);
  if (setup_.use_rsp)
    model_.head.emplace(model.d_model, derive_seed(seed, "rank_head"), model.init_scale);
  m_backbone_ = model_.backbone.params().zeros_like();
  v_backbone_ = m_backbone_;
  if (model_.head) {
    m_head_ = model_.head->params().zeros_like();
    v_head_ = m_head_;
  }
}

Trainer::Trainer(TrainedModel start, TrainConfig config)
    : config_(std::move(config)),
      setup_(variant_setup(start.variant, config_)),
      model_(std::move(start)) {
  config_.validate(model_.backbone.config());
  require(!setup_.use_rsp || model_.head.has_value(), ErrorCode::kInvalidArgument,
          "trainer: variant needs a rank head");
  m_backbone_ = model_.backbone.params().zeros_like();
  v_backbone_ = m_backbone_;
  if (model_.head) {
    m_head_ = model_.head->params().zeros_like();
    v_head_ = m_head_;
  }
}

namespace {

struct SampleResult {
  ParameterSet<float> grad_backbone;
  ParameterSet<float> grad_head;
  double loss = 0;
  double iap = 0;
  double ntp = 0;
  std::optional<double> ldpo;
  std::optional<double> bce;
};

void optimizer_update(ParameterSet<float>& params, const ParameterSet<float>& grads,
                      ParameterSet<float>& m, ParameterSet<float>& v, const TrainConfig& cfg,
                      double lr, double clip_scale, int t) {
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i].value;
    const Matrix<float> g = grads[i].value * static_cast<float>(clip_scale);
    if (cfg.optimizer == Optimizer::kSgdMomentum) {
      m[i].value = static_cast<float>(cfg.momentum) * m[i].value + g;
      p -= static_cast<float>(lr) * m[i].value;
    } else {
      const float b1 = static_cast<float>(cfg.adam_beta1);
      const float b2 = static_cast<float>(cfg.adam_beta2);
      m[i].value = b1 * m[i].value + (1 - b1) * g;
      v[i].value = b2 * v[i].value + (1 - b2) * g.cwiseProduct(g);
      const float c1 = 1.0f - std::pow(b1, static_cast<float>(t));
      const float c2 = 1.0f - std::pow(b2, static_cast<float>(t));
      auto mhat = m[i].value.array() / c1;
      auto vhat = v[i].value.array() / c2;
      p.array() -= static_cast<float>(lr) * mhat / (vhat.sqrt() + static_cast<float>(cfg.adam_eps));
    }
  }
}

}  // namespace

void Trainer::apply(ParameterSet<float>& grads_backbone, ParameterSet<float>* grads_head,
                    double learning_rate, StepLog& log) {
  double sq = grads_backbone.squared_norm();
  if (grads_head) sq += grads_head->squared_norm();
  log.grad_norm = std::sqrt(sq);
  double clip_scale = 1.0;
  if (config_.clip_norm > 0 && log.grad_norm > config_.clip_norm)
    clip_scale = config_.clip_norm / log.grad_norm;
  ++adam_t_;
  optimizer_update(model_.backbone.params(), grads_backbone, m_backbone_, v_backbone_, config_,
                   learning_rate, clip_scale, adam_t_);
  if (grads_head && model_.head)
    optimizer_update(model_.head->params(), *grads_head, m_head_, v_head_, config_,
                     learning_rate * config_.head_lr_scale, clip_scale, adam_t_);
}

StepLog Trainer::step(const std::vector<const SessionSample*>& batch, double learning_rate) {
  require(!batch.empty(), ErrorCode::kInvalidArgument, "trainer: empty batch");
  const ModelConfig& cfg = model_.backbone.config();
  std::vector<SampleResult> results(batch.size());
  parallel_for(batch.size(), [&](std::size_t i) {
    FlushDenormals ftz;
    SessionSample sample = truncate_history(*batch[i], cfg, setup_.layout);
    TrainingLayout layout = build_layout(sample, cfg, setup_.layout);
    ad::Tape<float> tape;
    auto bb = bind(tape, model_.backbone.params(), true);
    auto trace = forward(tape, model_.backbone, bb, layout.tokens, layout.positions, layout.mask);
    SampleResult& r = results[i];
    r.grad_backbone = model_.backbone.params().zeros_like();
    ad::Var<float> loss;
    if (setup_.use_rsp) {
      auto hb = bind(tape, model_.head->params(), true);
      RspTrainOptions rsp = config_.rsp;
      rsp.positives = setup_.positives;
      auto total = total_loss(tape, trace, layout, cfg, setup_.weights, hb, rsp);
      loss = total.total;
      r.iap = total.iap.total.scalar();
      r.ntp = total.iap.ntp.scalar();
      if (total.iap.ldpo) r.ldpo = total.iap.ldpo->scalar();
      r.bce = total.rsp.value.scalar();
      tape.backward(loss);
      r.grad_head = model_.head->params().zeros_like();
      accumulate_grads(tape, hb, r.grad_head);
    } else {
      auto iap = iap_loss(tape, trace, layout, cfg, setup_.weights, setup_.positives);
      loss = iap.total;
      r.iap = iap.total.scalar();
      r.ntp = iap.ntp.scalar();
      if (iap.ldpo) r.ldpo = iap.ldpo->scalar();
      tape.backward(loss);
    }
    r.loss = loss.scalar();
    accumulate_grads(tape, bb, r.grad_backbone);
  });

  FlushDenormals ftz;
  StepLog log;
  log.learning_rate = learning_rate;
  const double inv = 1.0 / static_cast<double>(batch.size());
  ParameterSet<float> gb = model_.backbone.params().zeros_like();
  ParameterSet<float> gh;
  if (setup_.use_rsp) gh = model_.head->params().zeros_like();
  double ldpo_sum = 0, bce_sum = 0;
  int ldpo_n = 0, bce_n = 0;
  for (const auto& r : results) {
    gb.add_scaled(r.grad_backbone, static_cast<float>(inv));
    if (setup_.use_rsp) gh.add_scaled(r.grad_head, static_cast<float>(inv));
    log.loss += r.loss * inv;
    log.iap += r.iap * inv;
    log.ntp += r.ntp * inv;
    if (r.ldpo) {
      ldpo_sum += *r.ldpo;
      ++ldpo_n;
    }
    if (r.bce) {
      bce_sum += *r.bce;
      ++bce_n;
    }
  }
  if (ldpo_n > 0) log.ldpo = ldpo_sum / ldpo_n;
  if (bce_n > 0) log.bce = bce_sum / bce_n;
  apply(gb, setup_.use_rsp ? &gh : nullptr, learning_rate, log);
  log.step = model_.steps_done++;
  model_.log.push_back(log);
  return log;
}

double Trainer::warmup_step(const std::vector<const SessionSample*>& batch, double learning_rate) {
  require(!batch.empty(), ErrorCode::kInvalidArgument, "trainer: empty batch");
  const ModelConfig& cfg = model_.backbone.config();
  std::vector<ParameterSet<float>> grads(batch.size());
  std::vector<double> losses(batch.size());
  parallel_for(batch.size(), [&](std::size_t i) {
    FlushDenormals ftz;
    SessionSample sample = *batch[i];
    const std::size_t max_items = static_cast<std::size_t>((cfg.max_seq_len - 1) / cfg.levels());
    if (sample.history.size() > max_items)
      sample.history.erase(sample.history.begin(),
                           sample.history.end() - static_cast<std::ptrdiff_t>(max_items));
    ad::Tape<float> tape;
    auto bb = bind(tape, model_.backbone.params(), true);
    auto loss = history_ntp_loss(tape, model_.backbone, bb, sample);
    tape.backward(loss);
    grads[i] = model_.backbone.params().zeros_like();
    accumulate_grads(tape, bb, grads[i]);
    losses[i] = loss.scalar();
  });
  FlushDenormals ftz;
  ParameterSet<float> gb = model_.backbone.params().zeros_like();
  double mean = 0;
  const double inv = 1.0 / static_cast<double>(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    gb.add_scaled(grads[i], static_cast<float>(inv));
    mean += losses[i] * inv;
  }
  StepLog unused;
  apply(gb, nullptr, learning_rate, unused);
  return mean;
}

TrainedModel train_model(const std::vector<SessionSample>& samples, const ModelConfig& model,
                         const TrainConfig& config, Variant variant, std::uint64_t seed) {
  Trainer trainer(model, config, variant, seed);
  if (config.steps == 0 && config.history_warmup_steps == 0) return trainer.release();
  require(!samples.empty(), ErrorCode::kInvalidArgument, "train: no training samples");
  if (config.history_warmup_steps > 0) {
    auto warm = batch_schedule(samples.size(), config.history_warmup_steps, config.batch_size,
                               derive_seed(seed, "warmup"));
    for (int s = 0; s < config.history_warmup_steps; ++s) {
      std::vector<const SessionSample*> batch;
      for (auto i : warm[static_cast<std::size_t>(s)]) batch.push_back(&samples[i]);
      trainer.warmup_step(batch, scheduled_rate(config.learning_rate, s, config.history_warmup_steps));
    }
  }
  auto schedule = batch_schedule(samples.size(), config.steps, config.batch_size, seed);
  for (int s = 0; s < config.steps; ++s) {
    std::vector<const SessionSample*> batch;
    for (auto i : schedule[static_cast<std::size_t>(s)]) batch.push_back(&samples[i]);
    StepLog log = trainer.step(batch, scheduled_rate(config.learning_rate, s, config.steps));
    (void)log;
  }
  TrainedModel out = trainer.release();
  for (std::size_t s = 0; s < out.log.size(); ++s)
    out.log[s].batch_digest = batch_digest(schedule[s]);
  return out;
}

}  // namespace rgr
