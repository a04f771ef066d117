#pragma once

// Experiment configuration as a flat registry of dotted keys. The same table
// drives parsing, emission, the schema listing and the config hash.

#include <charconv>
#include <cstdint>
#include <functional>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include "acstate/acstate_learner.hpp"
#include "acstate/error.hpp"

namespace acstate {

inline constexpr std::string_view kToolkitVersion = "0.1.0";

enum class Method { acstate, onestep, autoencoder, contrastive };
enum class PolicyKind { random, planning };

inline std::string to_string(Method m) {
  switch (m) {
    case Method::acstate: return "acstate";
    case Method::onestep: return "onestep";
    case Method::autoencoder: return "autoencoder";
    case Method::contrastive: return "contrastive";
  }
  return "?";
}

inline std::string to_string(PolicyKind p) { return p == PolicyKind::random ? "random" : "planning"; }

struct EnvironmentConfig {
  std::string kind = "maze";
  std::string layout = "open";
  int width = 6;
  int height = 6;
  int exo_agents = 8;
  int reset_actions = 0;
  std::string table = "toggle";
  int cycle_length = 6;
  int exo_states = 3;

  void validate() const {
    if (kind != "maze" && kind != "tabular") throw ConfigError("environment.kind: expected maze or tabular, got '" + kind + "'");
    if (kind == "maze") {
      if (layout != "open" && layout != "four_rooms") {
        throw ConfigError("environment.layout: expected open or four_rooms, got '" + layout + "'");
      }
      if (width < 1 || height < 1) throw ConfigError("environment.width/height: must be >= 1");
      if (reset_actions < 0) throw ConfigError("environment.reset_actions: must be >= 0");
    } else {
      if (table != "toggle" && table != "cycle" && table != "robot_arm") {
        throw ConfigError("environment.table: expected toggle, cycle or robot_arm, got '" + table + "'");
      }
      if (table == "cycle" && cycle_length < 2) throw ConfigError("environment.cycle_length: must be >= 2");
      if (exo_states < 1) throw ConfigError("environment.exo_states: must be >= 1");
    }
    if (exo_agents < 0) throw ConfigError("environment.exo_agents: must be >= 0");
  }
};

struct ExperimentConfig {
  std::uint64_t seed = 0;
  Method method = Method::acstate;
  PolicyKind policy = PolicyKind::random;
  std::string output_dir = "runs/default";
  int eval_every = 500;
  EnvironmentConfig environment;
  TrainConfig train;

  void validate() const {
    environment.validate();
    train.validate();
    if (policy == PolicyKind::planning && method != Method::acstate) {
      throw ConfigError("policy: planning is only available with method acstate");
    }
    if (eval_every < 0) throw ConfigError("eval_every: must be >= 0");
    if (output_dir.empty()) throw ConfigError("output_dir: must not be empty");
  }
};

namespace config {

template <class T>
T parse_number(const std::string& key, const std::string& text) {
  T v{};
  const auto* end = text.data() + text.size();
  const auto [p, ec] = std::from_chars(text.data(), end, v);
  if (ec != std::errc() || p != end) throw ConfigError(key + ": expected a number, got '" + text + "'");
  return v;
}

inline std::string format_double(double v) {
  char buf[64];
  const auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, p);
}

inline bool parse_bool(const std::string& key, const std::string& text) {
  if (text == "true") return true;
  if (text == "false") return false;
  throw ConfigError(key + ": expected true or false, got '" + text + "'");
}

inline Method parse_method(const std::string& key, const std::string& text) {
  for (auto m : {Method::acstate, Method::onestep, Method::autoencoder, Method::contrastive}) {
    if (to_string(m) == text) return m;
  }
  throw ConfigError(key + ": expected acstate, onestep, autoencoder or contrastive, got '" + text + "'");
}

inline PolicyKind parse_policy(const std::string& key, const std::string& text) {
  if (text == "random") return PolicyKind::random;
  if (text == "planning") return PolicyKind::planning;
  throw ConfigError(key + ": expected random or planning, got '" + text + "'");
}

struct Field {
  std::string key;
  std::string doc;
  std::function<std::string(const ExperimentConfig&)> get;
  std::function<void(ExperimentConfig&, const std::string&)> set;
  bool hashed = true;
};

template <class Ref>
Field number(std::string key, std::string doc, Ref ref) {
  return {key, std::move(doc),
          [ref](const ExperimentConfig& c) {
            const auto& v = ref(c);
            if constexpr (std::is_floating_point_v<std::decay_t<decltype(v)>>) {
              return format_double(v);
            } else {
              return std::to_string(v);
            }
          },
          [ref, key](ExperimentConfig& c, const std::string& s) {
            auto& v = ref(c);
            v = parse_number<std::decay_t<decltype(v)>>(key, s);
          }};
}

template <class Ref>
Field text(std::string key, std::string doc, Ref ref) {
  return {key, std::move(doc), [ref](const ExperimentConfig& c) { return ref(c); },
          [ref](ExperimentConfig& c, const std::string& s) { ref(c) = s; }};
}

template <class Ref>
Field flag(std::string key, std::string doc, Ref ref) {
  return {key, std::move(doc), [ref](const ExperimentConfig& c) { return std::string(ref(c) ? "true" : "false"); },
          [ref, key](ExperimentConfig& c, const std::string& s) { ref(c) = parse_bool(key, s); }};
}

#define ACSTATE_REF(expr) [](auto& c) -> auto& { return c.expr; }

inline const std::vector<Field>& fields() {
  static const std::vector<Field> table = [] {
    std::vector<Field> f;
    f.push_back(number("seed", "Seeds the environment, data collection and network initialisation.", ACSTATE_REF(seed)));
    f.push_back({"method", "acstate | onestep | autoencoder | contrastive",
                 [](const ExperimentConfig& c) { return to_string(c.method); },
                 [](ExperimentConfig& c, const std::string& s) { c.method = parse_method("method", s); }});
    f.push_back({"policy", "random | planning (planning needs acstate)",
                 [](const ExperimentConfig& c) { return to_string(c.policy); },
                 [](ExperimentConfig& c, const std::string& s) { c.policy = parse_policy("policy", s); }});
    auto out = text("output_dir", "Artifact directory; --out overrides.", ACSTATE_REF(output_dir));
    out.hashed = false;
    f.push_back(out);
    f.push_back(number("eval_every", "Training steps between progress records (0 = final only).", ACSTATE_REF(eval_every)));

    f.push_back(text("environment.kind", "maze | tabular", ACSTATE_REF(environment.kind)));
    f.push_back(text("environment.layout", "maze: open | four_rooms (four_rooms is always 9x9)", ACSTATE_REF(environment.layout)));
    f.push_back(number("environment.width", "maze: cells per row (open layout)", ACSTATE_REF(environment.width)));
    f.push_back(number("environment.height", "maze: cells per column (open layout)", ACSTATE_REF(environment.height)));
    f.push_back(number("environment.exo_agents", "Distractor agents (one extra maze or chain copy each).", ACSTATE_REF(environment.exo_agents)));
    f.push_back(number("environment.reset_actions", "maze: extra actions that jump to the start cell", ACSTATE_REF(environment.reset_actions)));
    f.push_back(text("environment.table", "tabular: toggle | cycle | robot_arm", ACSTATE_REF(environment.table)));
    f.push_back(number("environment.cycle_length", "tabular cycle: number of states", ACSTATE_REF(environment.cycle_length)));
    f.push_back(number("environment.exo_states", "tabular: states of each distractor's lazy ring walk", ACSTATE_REF(environment.exo_states)));

    f.push_back(number("train.K", "Largest inverse-model horizon (set to the diameter).", ACSTATE_REF(train.K)));
    f.push_back(number("train.codes", "Codebook size M.", ACSTATE_REF(train.codes)));
    f.push_back(number("train.bottleneck_dim", "Width of the Gaussian bottleneck and the codes.", ACSTATE_REF(train.bottleneck_dim)));
    f.push_back(number("train.hidden", "Encoder width.", ACSTATE_REF(train.hidden)));
    f.push_back(number("train.tokens", "Observation blocks for the token mixer; 0 selects the dense encoder.", ACSTATE_REF(train.tokens)));
    f.push_back(number("train.encoder_layers", "Dense encoder layers (after the mixer when tokens > 0).", ACSTATE_REF(train.encoder_layers)));
    f.push_back(number("train.k_embed_dim", "Width of the horizon embedding fed to the inverse head.", ACSTATE_REF(train.k_embed_dim)));
    f.push_back(number("train.head_hidden", "Inverse head width.", ACSTATE_REF(train.head_hidden)));
    f.push_back(number("train.kl", "KL weight of the Gaussian bottleneck.", ACSTATE_REF(train.weights.kl)));
    f.push_back(number("train.vq", "Codebook loss weight.", ACSTATE_REF(train.weights.vq)));
    f.push_back(number("train.commit", "Commitment loss weight.", ACSTATE_REF(train.weights.commit)));
    f.push_back(number("train.learning_rate", "Adam step size.", ACSTATE_REF(train.learning_rate)));
    f.push_back(number("train.final_learning_rate", "Cosine decay target; negative keeps the rate constant.", ACSTATE_REF(train.final_learning_rate)));
    f.push_back(number("train.weight_decay", "Decoupled weight decay.", ACSTATE_REF(train.weight_decay)));
    f.push_back(number("train.adam_eps", "Adam epsilon.", ACSTATE_REF(train.adam_eps)));
    f.push_back(number("train.batch_size", "Pairs per gradient step.", ACSTATE_REF(train.batch_size)));
    f.push_back(number("train.iterations", "Gradient steps (random policy).", ACSTATE_REF(train.iterations)));
    f.push_back(number("train.dead_code_window", "Steps between codebook reallocations (0 disables).", ACSTATE_REF(train.dead_code_window)));
    f.push_back(number("train.dead_code_until", "Fraction of training during which codes are reallocated.", ACSTATE_REF(train.dead_code_until)));
    f.push_back(number("train.temperature", "Contrastive softmax temperature.", ACSTATE_REF(train.temperature)));
    f.push_back(flag("train.codebook_from_data", "Start codes at encoded buffer samples instead of N(0, 1).", ACSTATE_REF(train.codebook_from_data)));
    f.push_back(number("train.env_steps", "Environment steps (buffer length T).", ACSTATE_REF(train.env_steps)));
    f.push_back(number("train.rebuild_every", "planning: steps between full re-encodes of the buffer", ACSTATE_REF(train.rebuild_every)));
    f.push_back(number("train.plan_failures", "planning: goal re-draws before a random fallback step", ACSTATE_REF(train.plan_failures)));
    f.push_back(number("train.updates_per_step", "planning: gradient steps per environment step", ACSTATE_REF(train.updates_per_step)));
    f.push_back(number("train.warmup_steps", "planning: initial random steps without updates", ACSTATE_REF(train.warmup_steps)));
    return f;
  }();
  return table;
}

#undef ACSTATE_REF

inline void set(ExperimentConfig& cfg, const std::string& key, const std::string& value) {
  for (const auto& f : fields()) {
    if (f.key == key) {
      f.set(cfg, value);
      return;
    }
  }
  throw ConfigError(key + ": unknown key (see config-schema)");
}

/// Nested key-value text, one section per dotted prefix.
inline std::string emit(const ExperimentConfig& cfg, bool with_docs = false, bool hashed_only = false) {
  std::ostringstream os;
  std::string section;
  for (const auto& f : fields()) {
    if (hashed_only && !f.hashed) continue;
    const auto dot = f.key.find('.');
    const std::string prefix = dot == std::string::npos ? "" : f.key.substr(0, dot);
    const std::string leaf = dot == std::string::npos ? f.key : f.key.substr(dot + 1);
    if (prefix != section) {
      section = prefix;
      os << section << ":\n";
    }
    os << (section.empty() ? "" : "  ") << leaf << ": " << f.get(cfg);
    if (with_docs) os << "  # " << f.doc;
    os << '\n';
  }
  return os.str();
}

/// Every key with its default and meaning.
inline std::string schema() { return emit(ExperimentConfig{}, true); }

/// 64-bit FNV-1a as 16 hex digits.
inline std::string fnv1a(std::string_view text) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 0x100000001b3ull;
  }
  std::ostringstream os;
  os << std::hex;
  os.width(16);
  os.fill('0');
  os << h;
  return os.str();
}

/// Hash of the emitted config, output_dir excluded.
inline std::string hash(const ExperimentConfig& cfg) { return fnv1a(emit(cfg, false, true)); }

inline std::string header_line(const std::string& config_hash) {
  return "# acstate " + std::string(kToolkitVersion) + " config " + config_hash;
}

}  // namespace config

}  // namespace acstate
