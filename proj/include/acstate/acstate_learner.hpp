#pragma once

// Multi-step inverse training from a random policy, the online planning
// variant that explores via low-count latent goals, and three baseline
// objectives (one-step inverse, reconstruction, temporal contrastive).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numbers>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "acstate/error.hpp"
#include "acstate/exbmdp_env.hpp"
#include "acstate/latent_planner.hpp"
#include "acstate/rng.hpp"
#include "acstate/tinynn.hpp"

namespace acstate {

/// Buffer observations encoded when choosing where revived codes go.
inline constexpr std::size_t kRevivalProbes = 2048;

/// What the learner is allowed to see. Index t pairs observation t with the
/// action taken from it; observation t+1 is its result.
struct TrainingData {
  std::vector<Observation> observations;
  std::vector<int> actions;
  /// Indices whose action was drawn uniformly at random, ascending.
  std::vector<std::size_t> marked;
  /// Horizon cap K_t per action index; 0 for unmarked steps.
  std::vector<int> horizon_cap;

  std::size_t size() const { return observations.size(); }

  void push(Observation obs) { observations.push_back(std::move(obs)); }

  void record_action(int action, bool random, int cap) {
    if (random) {
      if (cap < 1) throw ConfigError("horizon cap must be >= 1");
      marked.push_back(actions.size());
    }
    actions.push_back(action);
    horizon_cap.push_back(random ? cap : 0);
  }

  void validate() const {
    if (observations.empty() || actions.size() + 1 != observations.size()) {
      throw ConfigError("buffer needs one more observation than actions");
    }
    if (horizon_cap.size() != actions.size()) throw ConfigError("buffer horizon table size mismatch");
    for (std::size_t i = 0; i < marked.size(); ++i) {
      const auto t = marked[i];
      if (t >= actions.size()) throw ConfigError("marked index out of range");
      if (i > 0 && marked[i - 1] >= t) throw ConfigError("marked indices must be strictly increasing");
      if (horizon_cap[t] < 1) throw ConfigError("marked index without horizon cap");
    }
  }
};

/// Evaluation-only labels, kept apart from TrainingData so no training entry
/// point can read them.
struct GroundTruth {
  std::vector<int> endo;
  std::vector<std::vector<int>> exo;
};

struct ReplayBuffer {
  TrainingData data;
  std::optional<GroundTruth> ground;

  void validate() const {
    data.validate();
    if (ground && ground->endo.size() != data.size()) throw ConfigError("ground labels do not match buffer length");
  }
};

struct TrainConfig {
  int K = 1;
  int codes = 64;
  std::size_t bottleneck_dim = 16;
  std::size_t hidden = 64;
  /// Observation blocks mixed by the token encoder; 0 uses the dense encoder.
  int tokens = 0;
  int encoder_layers = 2;
  std::size_t k_embed_dim = 8;
  std::size_t head_hidden = 64;
  nn::LossWeights weights;
  double learning_rate = 1e-4;
  /// Cosine decay from learning_rate to this value over training; negative
  /// keeps the rate constant.
  double final_learning_rate = -1.0;
  double weight_decay = 0.0;
  double adam_eps = 1e-8;
  int batch_size = 256;
  int iterations = 2000;
  std::uint64_t seed = 0;
  /// Every dead_code_window steps during the first dead_code_until fraction
  /// of training, unused and redundant codes move to poorly quantized
  /// embeddings (0 disables).
  int dead_code_window = 200;
  double dead_code_until = 0.5;
  double temperature = 0.1;
  bool codebook_from_data = true;
  // planning loop
  int env_steps = 25000;
  int rebuild_every = 500;
  int plan_failures = 3;
  /// Gradient steps per environment step in the online loop.
  int updates_per_step = 1;
  /// Initial online steps taken uniformly at random without gradient updates.
  int warmup_steps = 0;

  void validate() const {
    if (K < 1) throw ConfigError("train.K must be >= 1");
    if (codes < 2) throw ConfigError("train.codes must be >= 2");
    if (iterations < 0) throw ConfigError("train.iterations must be >= 0");
    if (batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
    if (tokens < 0) throw ConfigError("train.tokens must be >= 0");
    if (bottleneck_dim < 1 || hidden < 1 || encoder_layers < 0) throw ConfigError("train: network sizes must be positive");
    if (!(learning_rate >= 0.0)) throw ConfigError("train.learning_rate must be >= 0");
    if (weights.kl < 0 || weights.vq < 0 || weights.commit < 0) throw ConfigError("train: loss weights must be >= 0");
    if (!(temperature > 0.0)) throw ConfigError("train.temperature must be > 0");
    if (env_steps < 2) throw ConfigError("train.env_steps must be >= 2");
    if (rebuild_every < 1) throw ConfigError("train.rebuild_every must be >= 1");
    if (plan_failures < 1) throw ConfigError("train.plan_failures must be >= 1");
    if (warmup_steps < 0 || warmup_steps >= env_steps) throw ConfigError("train.warmup_steps must be in [0, env_steps)");
  }
};

inline nn::SparseInput as_input(const Observation& o) { return {o.dim, o.hot, {}}; }

/// Progress snapshot handed to observers every few steps.
struct TrainProgress {
  int step = 0;
  nn::BatchLoss loss;  // mean over the window
  int codes_used = 0;  // distinct codes selected during the window
};

using ProgressFn = std::function<void(const TrainProgress&, const nn::EncoderStack&)>;

struct TrainResult {
  nn::EncoderStack model;
  std::vector<std::string> warnings;
};

inline nn::EncoderStack make_stack(const TrainConfig& cfg, std::size_t in_dim, int n_actions, bool decoder, Rng& rng) {
  nn::StackShape sh;
  sh.in_dim = in_dim;
  sh.hidden = cfg.hidden;
  sh.tokens = cfg.tokens;
  sh.encoder_layers = cfg.encoder_layers;
  sh.bottleneck_dim = cfg.bottleneck_dim;
  sh.codes = cfg.codes;
  sh.k_max = cfg.K;
  sh.k_embed_dim = cfg.k_embed_dim;
  sh.head_hidden = cfg.head_hidden;
  sh.n_actions = n_actions;
  sh.decoder = decoder;
  return nn::EncoderStack::init(sh, cfg.weights, rng);
}

/// Deterministic (bottleneck-mean) code of every observation.
inline std::vector<int> encode_codes(const nn::EncoderStack& model, const std::vector<Observation>& obs) {
  std::vector<int> out;
  out.reserve(obs.size());
  for (const auto& o : obs) out.push_back(nn::encode(model, as_input(o)).code);
  return out;
}

inline int count_distinct(const std::vector<int>& codes) {
  return static_cast<int>(std::set<int>(codes.begin(), codes.end()).size());
}

/// Random-policy data collection: one unbroken trajectory of T observations.
inline ReplayBuffer collect_random(const Environment& env, int T, Rng& rng, int K) {
  if (T < 2) throw ConfigError("collect_random needs T >= 2");
  if (K < 1) throw ConfigError("collect_random needs K >= 1");
  ReplayBuffer buf;
  buf.ground = GroundTruth{};
  Session session(env);
  buf.data.push(session.observe());
  buf.ground->endo.push_back(ground_endogenous(session));
  buf.ground->exo.push_back(ground_exogenous(session));
  for (int t = 0; t + 1 < T; ++t) {
    const int a = static_cast<int>(rng.uniform_index(static_cast<std::size_t>(env.n_actions())));
    buf.data.record_action(a, true, K);
    buf.data.push(session.act(a));
    buf.ground->endo.push_back(ground_endogenous(session));
    buf.ground->exo.push_back(ground_exogenous(session));
  }
  return buf;
}

/// Horizon bound for a pair starting at marked index t.
inline int pair_horizon_cap(const TrainingData& data, std::size_t t, int K) {
  const int to_end = static_cast<int>(data.size() - 1 - t);
  return std::min({data.horizon_cap[t], K, to_end});
}

/// Samples (t, k) with t uniform over the marked set and k uniform on
/// [1, min(K_t, K, T-1-t)].
inline std::vector<nn::InverseSample> sample_inverse_batch(const TrainingData& data, int K, int batch, Rng& rng) {
  if (data.marked.empty()) throw ConfigError("no marked indices to train on");
  std::vector<nn::InverseSample> out;
  out.reserve(static_cast<std::size_t>(batch));
  for (int b = 0; b < batch; ++b) {
    const auto t = data.marked[rng.uniform_index(data.marked.size())];
    const int cap = pair_horizon_cap(data, t, K);
    const int k = rng.uniform_int(1, cap);
    out.push_back({as_input(data.observations[t]), as_input(data.observations[t + static_cast<std::size_t>(k)]),
                   data.actions[t], k});
  }
  return out;
}

namespace detail {

/// Optimizer, gradient buffer and code-usage bookkeeping shared by the
/// training loops.
class Trainer {
 public:
  Trainer(nn::EncoderStack model, const TrainConfig& cfg, const TrainingData& data, Rng& rng, ProgressFn progress,
          int eval_every)
      : model_(std::move(model)),
        grads_(model_.zeros_like()),
        cfg_(cfg),
        data_(&data),
        rng_(&rng),
        progress_(std::move(progress)),
        eval_every_(eval_every) {
    opt_.lr = cfg.learning_rate;
    opt_.weight_decay = cfg.weight_decay;
    opt_.eps = cfg.adam_eps;
    usage_.assign(static_cast<std::size_t>(model_.shape.codes), 0);
    if (cfg.codebook_from_data && !data.observations.empty()) seed_codebook();
  }

  nn::EncoderStack& model() { return model_; }
  nn::EncoderStack& grads() { return grads_; }
  Rng& rng() { return *rng_; }

  void zero_grads() { nn::zero(grads_); }

  /// Applies the accumulated gradient and does the per-step bookkeeping.
  void apply(const nn::BatchLoss& loss, const std::vector<int>& used, int total_steps) {
    if (cfg_.final_learning_rate >= 0.0 && total_steps > 1) {
      const double frac = std::min(1.0, static_cast<double>(step_) / static_cast<double>(total_steps - 1));
      opt_.lr = cfg_.final_learning_rate +
                0.5 * (cfg_.learning_rate - cfg_.final_learning_rate) * (1.0 + std::cos(std::numbers::pi * frac));
    }
    opt_.update(nn::tensors(model_), nn::tensors(grads_));
    ++step_;
    for (int c : used) ++usage_[static_cast<std::size_t>(c)];
    window_used_.insert(used.begin(), used.end());
    accumulate(loss);
    if (cfg_.dead_code_window > 0 && step_ % cfg_.dead_code_window == 0) {
      if (step_ <= static_cast<int>(cfg_.dead_code_until * total_steps)) reinit_dead_codes();
      std::fill(usage_.begin(), usage_.end(), 0);
    }
    if (progress_ && eval_every_ > 0 && step_ % eval_every_ == 0) flush();
  }

  void flush() {
    if (window_n_ == 0) return;
    TrainProgress p;
    p.step = step_;
    const double inv = 1.0 / window_n_;
    p.loss = {window_.total * inv, window_.inverse * inv, window_.kl * inv, window_.vq * inv, window_.commit * inv,
              window_.accuracy * inv};
    p.codes_used = static_cast<int>(window_used_.size());
    if (progress_) progress_(p, model_);
    window_ = {};
    window_n_ = 0;
    window_used_.clear();
  }

  int step() const { return step_; }

 private:
  void accumulate(const nn::BatchLoss& l) {
    window_.total += l.total;
    window_.inverse += l.inverse;
    window_.kl += l.kl;
    window_.vq += l.vq;
    window_.commit += l.commit;
    window_.accuracy += l.accuracy;
    ++window_n_;
  }

  /// Every code starts at the embedding of a random buffer observation.
  void seed_codebook() {
    const auto d = model_.shape.bottleneck_dim;
    for (std::size_t c = 0; c < static_cast<std::size_t>(model_.shape.codes); ++c) {
      const auto& o = data_->observations[rng_->uniform_index(data_->observations.size())];
      const auto e = nn::encode(model_, as_input(o));
      std::copy(e.mean.begin(), e.mean.end(), model_.codebook.begin() + static_cast<std::ptrdiff_t>(c * d));
    }
  }

  /// Spare codes are the unused ones and the less used of any two codes
  /// closer than twice the mean posterior standard deviation. Spares move to
  /// the sampled embeddings whose quantization error exceeds that distance,
  /// worst first; a redundant spare with nowhere to go folds into its partner.
  void reinit_dead_codes() {
    const auto d = model_.shape.bottleneck_dim;
    const auto n_codes = usage_.size();
    std::vector<std::pair<double, std::vector<double>>> probes;
    probes.reserve(kRevivalProbes);
    double sigma = 0.0;
    for (std::size_t i = 0; i < kRevivalProbes; ++i) {
      const auto& o = data_->observations[rng_->uniform_index(data_->observations.size())];
      auto e = nn::encode(model_, as_input(o));
      const auto code = model_.code_vector(e.code);
      double dist = 0.0, var = 0.0;
      for (std::size_t j = 0; j < d; ++j) {
        dist += (e.mean[j] - code[j]) * (e.mean[j] - code[j]);
        var += std::exp(e.logvar[j]);
      }
      sigma += std::sqrt(var);
      probes.emplace_back(dist, std::move(e.mean));
    }
    sigma /= static_cast<double>(kRevivalProbes);
    const double limit = 4.0 * sigma * sigma;
    std::vector<char> spare(n_codes, 0);
    std::vector<std::size_t> partner(n_codes, n_codes);
    for (std::size_t c = 0; c < n_codes; ++c) spare[c] = usage_[c] == 0;
    for (std::size_t a = 0; a < n_codes; ++a) {
      for (std::size_t b = a + 1; b < n_codes && !spare[a]; ++b) {
        if (spare[b]) continue;
        const auto ca = model_.code_vector(static_cast<int>(a));
        const auto cb = model_.code_vector(static_cast<int>(b));
        double dist = 0.0;
        for (std::size_t j = 0; j < d; ++j) dist += (ca[j] - cb[j]) * (ca[j] - cb[j]);
        if (dist < limit) {
          const bool drop_a = usage_[a] < usage_[b];
          spare[drop_a ? a : b] = 1;
          partner[drop_a ? a : b] = drop_a ? b : a;
        }
      }
    }
    std::sort(probes.begin(), probes.end(), [](const auto& x, const auto& y) { return x.first > y.first; });
    std::size_t next = 0;
    for (std::size_t c = 0; c < n_codes; ++c) {
      if (!spare[c]) continue;
      auto dst = model_.codebook.begin() + static_cast<std::ptrdiff_t>(c * d);
      if (next < probes.size() && probes[next].first > limit) {
        const auto& z = probes[next++].second;
        std::copy(z.begin(), z.end(), dst);
      } else if (partner[c] < n_codes) {
        const auto src = model_.code_vector(static_cast<int>(partner[c]));
        std::copy(src.begin(), src.end(), dst);
      }
    }
  }

  nn::EncoderStack model_;
  nn::EncoderStack grads_;
  nn::Adam opt_;
  TrainConfig cfg_;
  const TrainingData* data_;
  Rng* rng_;
  ProgressFn progress_;
  int eval_every_;
  int step_ = 0;
  std::vector<long> usage_;
  std::set<int> window_used_;
  nn::BatchLoss window_;
  int window_n_ = 0;
};

inline void collapse_check(const nn::EncoderStack& model, const TrainingData& data, std::vector<std::string>& warnings) {
  const int used = count_distinct(encode_codes(model, data.observations));
  if (used < 2) warnings.push_back("collapse: only " + std::to_string(used) + " code used on the training data");
}

}  // namespace detail

/// Multi-step inverse training over pairs drawn from the marked indices.
inline TrainResult train_acstate(const TrainingData& data, const TrainConfig& cfg, int n_actions,
                                 const ProgressFn& progress = {}, int eval_every = 0) {
  cfg.validate();
  data.validate();
  Rng rng(cfg.seed, 0xac57a7e);
  auto model = make_stack(cfg, data.observations.front().dim, n_actions, false, rng);
  TrainResult out;
  if (cfg.iterations == 0) {
    out.model = std::move(model);
    return out;
  }
  detail::Trainer tr(std::move(model), cfg, data, rng, progress, eval_every);
  std::vector<int> used;
  for (int it = 0; it < cfg.iterations; ++it) {
    const auto batch = sample_inverse_batch(data, cfg.K, cfg.batch_size, rng);
    tr.zero_grads();
    used.clear();
    const auto loss = nn::inverse_batch_gradient(tr.model(), batch, &rng, tr.grads(), &used);
    tr.apply(loss, used, cfg.iterations);
  }
  tr.flush();
  out.model = std::move(tr.model());
  detail::collapse_check(out.model, data, out.warnings);
  return out;
}

inline TrainResult train_one_step_inverse(const TrainingData& data, TrainConfig cfg, int n_actions,
                                          const ProgressFn& progress = {}, int eval_every = 0) {
  cfg.K = 1;
  return train_acstate(data, cfg, n_actions, progress, eval_every);
}

/// Mean squared reconstruction error per input dimension, eval mode.
inline double reconstruction_mse(const nn::EncoderStack& model, const TrainingData& data) {
  if (model.decoder.layers.empty()) throw ConfigError("model has no decoder");
  double total = 0.0;
  nn::DenseNet::Trace trace;
  for (const auto& o : data.observations) {
    const auto e = nn::encode(model, as_input(o));
    model.decoder.forward(std::span<const double>(e.quantized), trace);
    const auto x = o.dense();
    double err = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) err += (trace.back()[i] - x[i]) * (trace.back()[i] - x[i]);
    total += err / static_cast<double>(x.size());
  }
  return total / static_cast<double>(data.observations.size());
}

/// Reconstruction objective through the same bottleneck and codebook.
inline TrainResult train_autoencoder(const TrainingData& data, const TrainConfig& cfg, int n_actions,
                                     const ProgressFn& progress = {}, int eval_every = 0) {
  cfg.validate();
  data.validate();
  Rng rng(cfg.seed, 0xa0e);
  auto model = make_stack(cfg, data.observations.front().dim, n_actions, true, rng);
  TrainResult out;
  if (cfg.iterations == 0) {
    out.model = std::move(model);
    return out;
  }
  detail::Trainer tr(std::move(model), cfg, data, rng, progress, eval_every);
  const double scale = 1.0 / cfg.batch_size;
  std::vector<int> used;
  nn::DenseNet::Trace trace;
  for (int it = 0; it < cfg.iterations; ++it) {
    tr.zero_grads();
    used.clear();
    nn::BatchLoss loss;
    auto& m = tr.model();
    for (int b = 0; b < cfg.batch_size; ++b) {
      const auto& o = data.observations[rng.uniform_index(data.size())];
      const auto in = as_input(o);
      nn::EncodeOptions opt;
      opt.rng = &rng;
      const auto e = nn::encode(m, in, opt);
      m.decoder.forward(std::span<const double>(e.quantized), trace);
      const auto x = o.dense();
      std::vector<double> dout(x.size());
      double sse = 0.0;
      for (std::size_t i = 0; i < x.size(); ++i) {
        const double diff = trace.back()[i] - x[i];
        sse += diff * diff;
        dout[i] = scale * 2.0 * diff;
      }
      std::vector<double> dq(e.quantized.size(), 0.0);
      m.decoder.backward(std::span<const double>(e.quantized), trace, std::move(dout), tr.grads().decoder, dq);
      nn::encode_backward(m, in, e, dq, scale, tr.grads());
      loss.inverse += scale * sse;
      loss.kl += scale * e.kl;
      loss.vq += scale * e.vq_loss;
      loss.commit += scale * e.commit_loss;
      used.push_back(e.code);
    }
    loss.total = loss.inverse + cfg.weights.kl * loss.kl + cfg.weights.vq * loss.vq + cfg.weights.commit * loss.commit;
    tr.apply(loss, used, cfg.iterations);
  }
  tr.flush();
  out.model = std::move(tr.model());
  detail::collapse_check(out.model, data, out.warnings);
  return out;
}

struct InfoNceResult {
  double loss = 0.0;
  std::vector<std::vector<double>> grad_anchor;
  std::vector<std::vector<double>> grad_positive;
};

/// Mean cross-entropy of matching anchor i to positive i among all positives
/// under dot-product similarity divided by the temperature.
inline InfoNceResult info_nce(const std::vector<std::vector<double>>& anchor,
                              const std::vector<std::vector<double>>& positive, double temperature) {
  const std::size_t B = anchor.size();
  if (B == 0 || positive.size() != B) throw ConfigError("info_nce needs equal non-empty batches");
  const std::size_t d = anchor.front().size();
  InfoNceResult r;
  r.grad_anchor.assign(B, std::vector<double>(d, 0.0));
  r.grad_positive.assign(B, std::vector<double>(d, 0.0));
  std::vector<double> logits(B);
  for (std::size_t i = 0; i < B; ++i) {
    for (std::size_t j = 0; j < B; ++j) {
      double dot = 0.0;
      for (std::size_t c = 0; c < d; ++c) dot += anchor[i][c] * positive[j][c];
      logits[j] = dot / temperature;
    }
    const double lse = nn::log_sum_exp(logits);
    r.loss += (lse - logits[i]) / static_cast<double>(B);
    for (std::size_t j = 0; j < B; ++j) {
      const double g = (std::exp(logits[j] - lse) - (i == j ? 1.0 : 0.0)) / (static_cast<double>(B) * temperature);
      for (std::size_t c = 0; c < d; ++c) {
        r.grad_anchor[i][c] += g * positive[j][c];
        r.grad_positive[j][c] += g * anchor[i][c];
      }
    }
  }
  return r;
}

/// Temporal contrastive objective: (x_t, x_{t+1}) positives, the rest of the
/// batch as negatives.
inline TrainResult train_contrastive(const TrainingData& data, const TrainConfig& cfg, int n_actions,
                                     const ProgressFn& progress = {}, int eval_every = 0) {
  cfg.validate();
  data.validate();
  Rng rng(cfg.seed, 0xc047);
  auto model = make_stack(cfg, data.observations.front().dim, n_actions, false, rng);
  TrainResult out;
  if (cfg.iterations == 0) {
    out.model = std::move(model);
    return out;
  }
  detail::Trainer tr(std::move(model), cfg, data, rng, progress, eval_every);
  const double scale = 1.0 / cfg.batch_size;
  std::vector<int> used;
  for (int it = 0; it < cfg.iterations; ++it) {
    tr.zero_grads();
    used.clear();
    auto& m = tr.model();
    std::vector<nn::SparseInput> xa, xp;
    std::vector<nn::Encoding> ea, ep;
    std::vector<std::vector<double>> qa, qp;
    nn::EncodeOptions opt;
    opt.rng = &rng;
    for (int b = 0; b < cfg.batch_size; ++b) {
      const auto t = rng.uniform_index(data.actions.size());
      xa.push_back(as_input(data.observations[t]));
      xp.push_back(as_input(data.observations[t + 1]));
      ea.push_back(nn::encode(m, xa.back(), opt));
      ep.push_back(nn::encode(m, xp.back(), opt));
      qa.push_back(ea.back().quantized);
      qp.push_back(ep.back().quantized);
    }
    const auto r = info_nce(qa, qp, cfg.temperature);
    nn::BatchLoss loss;
    loss.inverse = r.loss;
    for (std::size_t b = 0; b < xa.size(); ++b) {
      nn::encode_backward(m, xa[b], ea[b], r.grad_anchor[b], scale, tr.grads());
      nn::encode_backward(m, xp[b], ep[b], r.grad_positive[b], scale, tr.grads());
      loss.kl += scale * (ea[b].kl + ep[b].kl);
      loss.vq += scale * (ea[b].vq_loss + ep[b].vq_loss);
      loss.commit += scale * (ea[b].commit_loss + ep[b].commit_loss);
      used.push_back(ea[b].code);
      used.push_back(ep[b].code);
    }
    loss.total = loss.inverse + cfg.weights.kl * loss.kl + cfg.weights.vq * loss.vq + cfg.weights.commit * loss.commit;
    tr.apply(loss, used, cfg.iterations);
  }
  tr.flush();
  out.model = std::move(tr.model());
  detail::collapse_check(out.model, data, out.warnings);
  return out;
}

/// Latent MDP over the given code sequence.
inline LatentMDP build_latent_mdp(const std::vector<int>& codes, const std::vector<int>& actions, int n_codes,
                                  int n_actions) {
  LatentMDP mdp(n_codes, n_actions);
  for (std::size_t t = 0; t < actions.size(); ++t) mdp.update_counts(codes[t], actions[t], codes[t + 1]);
  return mdp;
}

/// Goal-directed action selection over latent codes. The only per-step input
/// is the current code, so the policy cannot react to anything the encoder
/// discards.
class PlanningPolicy {
 public:
  struct Decision {
    int action = 0;
    bool random = false;
    int horizon_cap = 0;  // K_t for random steps
  };

  PlanningPolicy(int n_actions, int max_failures) : n_actions_(n_actions), max_failures_(max_failures) {}

  Decision act(int code, const LatentMDP& mdp, Rng& rng) {
    if (remaining_ <= 0 || code == goal_) return select_goal(code, mdp, rng);
    for (int attempt = 0; attempt < max_failures_; ++attempt) {
      try {
        if (values_.empty()) values_ = mdp.cost_to_go(goal_);
        const auto p = mdp.plan(code, goal_, values_);
        --remaining_;
        ++planned_;
        return {p.action, false, 0};
      } catch (const PlanningError&) {
        ++plan_failures_;
        const auto g = mdp.findgoal(code, rng);
        if (g.cold_start) break;
        goal_ = g.goal;
        remaining_ = g.deadline;
        values_.clear();
      }
    }
    ++fallbacks_;
    remaining_ = 0;
    return {random_action(rng), true, 1};
  }

  /// Drops the cached cost vector; call when the latent MDP is rebuilt.
  void invalidate() { values_.clear(); }

  int goal() const { return goal_; }
  long goals_selected() const { return goals_; }
  long planned_steps() const { return planned_; }
  long plan_failures() const { return plan_failures_; }
  long fallbacks() const { return fallbacks_; }

 private:
  Decision select_goal(int code, const LatentMDP& mdp, Rng& rng) {
    const auto g = mdp.findgoal(code, rng);
    ++goals_;
    goal_ = g.goal;
    remaining_ = g.deadline - 1;
    values_.clear();
    return {random_action(rng), true, g.deadline};
  }

  int random_action(Rng& rng) const { return static_cast<int>(rng.uniform_index(static_cast<std::size_t>(n_actions_))); }

  int n_actions_;
  int max_failures_;
  int goal_ = -1;
  int remaining_ = 0;
  long goals_ = 0;
  long planned_ = 0;
  long plan_failures_ = 0;
  long fallbacks_ = 0;
  std::vector<double> values_;
};

struct PlanningRun {
  TrainResult trained;
  ReplayBuffer buffer;
  LatentMDP mdp;
  long goals_selected = 0;
  long plan_failures = 0;
  long fallbacks = 0;
};

/// Online loop: explore toward rarely seen latent codes while training the
/// multi-step inverse model on the random steps. progress is also called
/// with the buffer so callers can track coverage.
inline PlanningRun run_planning_acstate(const Environment& env, const TrainConfig& cfg,
                                        const std::function<void(const TrainProgress&, const nn::EncoderStack&,
                                                                 const ReplayBuffer&)>& progress = {},
                                        int eval_every = 0) {
  cfg.validate();
  Rng rng(cfg.seed, 0x91a2);
  PlanningRun run;
  auto& buf = run.buffer;
  buf.ground = GroundTruth{};
  Session session(env);
  buf.data.push(session.observe());
  buf.ground->endo.push_back(ground_endogenous(session));
  buf.ground->exo.push_back(ground_exogenous(session));

  auto model = make_stack(cfg, env.obs_dim(), env.n_actions(), false, rng);
  ProgressFn wrapped;
  if (progress) wrapped = [&](const TrainProgress& p, const nn::EncoderStack& m) { progress(p, m, buf); };
  detail::Trainer tr(std::move(model), cfg, buf.data, rng, wrapped, eval_every);
  PlanningPolicy policy(env.n_actions(), cfg.plan_failures);
  LatentMDP mdp(cfg.codes, env.n_actions());
  std::vector<int> codes{nn::encode(tr.model(), as_input(buf.data.observations.front())).code};
  std::vector<int> used;
  const int total_updates = (cfg.env_steps - 1 - cfg.warmup_steps) * cfg.updates_per_step;

  for (int t = 0; t + 1 < cfg.env_steps; ++t) {
    const bool warm = t < cfg.warmup_steps;
    const auto d = warm ? PlanningPolicy::Decision{static_cast<int>(rng.uniform_index(static_cast<std::size_t>(env.n_actions()))), true, cfg.K}
                        : policy.act(codes.back(), mdp, rng);
    buf.data.record_action(d.action, d.random, d.horizon_cap);
    buf.data.push(session.act(d.action));
    buf.ground->endo.push_back(ground_endogenous(session));
    buf.ground->exo.push_back(ground_exogenous(session));

    for (int u = 0; u < cfg.updates_per_step && !warm && !buf.data.marked.empty(); ++u) {
      const auto batch = sample_inverse_batch(buf.data, cfg.K, cfg.batch_size, rng);
      tr.zero_grads();
      used.clear();
      const auto loss = nn::inverse_batch_gradient(tr.model(), batch, &rng, tr.grads(), &used);
      tr.apply(loss, used, total_updates);
    }

    codes.push_back(nn::encode(tr.model(), as_input(buf.data.observations.back())).code);
    if ((t + 1) % cfg.rebuild_every == 0) {
      codes = encode_codes(tr.model(), buf.data.observations);
      mdp = build_latent_mdp(codes, buf.data.actions, cfg.codes, env.n_actions());
      policy.invalidate();
    } else {
      mdp.update_counts(codes[codes.size() - 2], d.action, codes.back());
    }
  }
  tr.flush();
  run.trained.model = std::move(tr.model());
  detail::collapse_check(run.trained.model, buf.data, run.trained.warnings);
  run.mdp = build_latent_mdp(encode_codes(run.trained.model, buf.data.observations), buf.data.actions, cfg.codes,
                             env.n_actions());
  run.goals_selected = policy.goals_selected();
  run.plan_failures = policy.plan_failures();
  run.fallbacks = policy.fallbacks();
  return run;
}

}  // namespace acstate
