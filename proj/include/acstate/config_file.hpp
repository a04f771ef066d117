#pragma once

// YAML front end for ExperimentConfig. Keys nest one level at most
// (environment.*, train.*); anything else is a field-level error.

#include <fstream>
#include <string>

#include <yaml-cpp/yaml.h>

#include "acstate/config.hpp"
#include "acstate/error.hpp"

namespace acstate {

namespace config {

inline void apply_node(ExperimentConfig& cfg, const YAML::Node& node, const std::string& prefix) {
  if (!node.IsMap()) throw ConfigError((prefix.empty() ? std::string("config") : prefix) + ": expected a mapping");
  for (const auto& kv : node) {
    const auto key = (prefix.empty() ? "" : prefix + ".") + kv.first.as<std::string>();
    const auto& value = kv.second;
    if (value.IsMap() && prefix.empty()) {
      apply_node(cfg, value, key);
    } else if (value.IsScalar()) {
      set(cfg, key, value.Scalar());
    } else {
      throw ConfigError(key + ": expected a scalar value");
    }
  }
}

inline ExperimentConfig parse_yaml(const std::string& text) {
  ExperimentConfig cfg;
  YAML::Node root;
  try {
    root = YAML::Load(text);
  } catch (const YAML::Exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  if (!root.IsNull()) apply_node(cfg, root, "");
  return cfg;
}

inline ExperimentConfig load_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("config: cannot read '" + path + "'");
  std::string text((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  return parse_yaml(text);
}

}  // namespace config

}  // namespace acstate
