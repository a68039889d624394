// Run configuration shared by the CLI subcommands: one JSON object with
// optional "corpus", "pipeline", "train" and "evaluation" sections. Missing
// keys keep their defaults; command-line flags override afterwards.
#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ubert/corpus.hpp"
#include "ubert/pipeline.hpp"
#include "ubert/training.hpp"

namespace ubert::cli {

struct EvaluationSettings {
  std::size_t replicates = 2000;
  double level = 0.95;
  std::vector<double> slices{0.1, 0.01};
  std::size_t buckets = 0;
  double alpha = 0.05;
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(EvaluationSettings, replicates, level, slices, buckets, alpha)

struct RunConfig {
  SyntheticSpec corpus;
  PipelineConfig pipeline;
  TrainConfig train;
  EvaluationSettings evaluation;
  std::size_t truncate_budget = 0;  // 0: full text; otherwise middle-truncate to this many chunks
  std::string trainable = "default";  // "default" or "all"
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(RunConfig, corpus, pipeline, train, evaluation, truncate_budget,
                                                trainable)

// nlohmann maps unknown enum strings to the first enumerator; reject them.
template <class E>
E parse_enum(const std::string& key, const nlohmann::json& value) {
  const E e = value.get<E>();
  if (nlohmann::json(e) != value) throw std::invalid_argument("unknown " + key + " value " + value.dump());
  return e;
}

inline void check_enums(const nlohmann::json& j) {
  if (!j.is_object()) return;
  for (const auto& [key, value] : j.items()) {
    if (value.is_object()) {
      check_enums(value);
    } else if (key == "position") {
      parse_enum<SignalPosition>(key, value);
    } else if (key == "mode") {
      parse_enum<SignalMode>(key, value);
    } else if (key == "pooling") {
      parse_enum<Pooling>(key, value);
    } else if (key == "representation") {
      parse_enum<Representation>(key, value);
    }
  }
}

// Every key at every level must name a field; a typo would otherwise fall
// back to the default without a word.
inline void check_keys(const nlohmann::json& j, const nlohmann::json& defaults, const std::string& prefix,
                       const std::filesystem::path& path) {
  for (const auto& [key, value] : j.items()) {
    if (!defaults.contains(key)) throw std::runtime_error("config: unknown key '" + prefix + key + "' in " + path.string());
    if (value.is_object() && defaults[key].is_object()) check_keys(value, defaults[key], prefix + key + ".", path);
  }
}

inline RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("config: cannot open " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw std::runtime_error("config: " + path.string() + " is not valid JSON: " + e.what());
  }
  if (!j.is_object()) throw std::runtime_error("config: " + path.string() + " must hold a JSON object");
  check_keys(j, nlohmann::json(RunConfig{}), "", path);
  try {
    check_enums(j);
    return j.get<RunConfig>();
  } catch (const std::invalid_argument& e) {
    throw std::runtime_error("config: " + path.string() + ": " + e.what());
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("config: " + path.string() + ": " + e.what());
  }
}

// One seed drives every random stream of a run.
inline void apply_seed(RunConfig& cfg, std::uint64_t seed) {
  cfg.corpus.seed = seed;
  cfg.pipeline.seed = seed;
  cfg.train.seed = seed;
}

// Overlap must be even. 205 is a common typo for the 512/204 setup and is
// mapped to 204 with a warning.
inline std::size_t resolve_overlap(std::size_t z, std::ostream& warn = std::cerr) {
  if (z == 205) {
    warn << "warning: overlap 205 is odd; using 204\n";
    return 204;
  }
  if (z % 2 != 0) throw std::invalid_argument("overlap must be even, got " + std::to_string(z));
  return z;
}

}  // namespace ubert::cli
