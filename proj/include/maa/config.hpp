#pragma once

#include <filesystem>
#include <optional>
#include <string>

#include "json.hpp"

#include "maa/eval.hpp"
#include "maa/synthdata.hpp"
#include "maa/trainer.hpp"

// One JSON file configures every CLI command:
//   {"data": {...}, "training": {..., "model": {...}}, "oracle": {...}, "evaluation": {...}}
// Every section and key is optional; unknown keys are rejected.

namespace maa {

namespace eval {
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(EvalOptions, patch_size, bins, max_frames)
}  // namespace eval

struct RunConfig {
  synth::DatasetConfig data;
  TrainingConfig training;
  eval::OracleConfig oracle;
  eval::EvalOptions evaluation;

  void set_seed(std::uint64_t seed) {
    data.seed = seed;
    training.seed = seed;
    oracle.seed = seed;
  }
};

inline nlohmann::json to_json(const RunConfig& c) {
  return {{"data", synth::to_json(c.data)},
          {"training", nlohmann::json(c.training)},
          {"oracle", nlohmann::json(c.oracle)},
          {"evaluation", nlohmann::json(c.evaluation)}};
}

namespace detail {

inline void check_keys(const nlohmann::json& got, const nlohmann::json& schema, const std::string& path) {
  if (!got.is_object()) throw InputError("config: " + (path.empty() ? std::string("top level") : path) + " must be an object");
  for (const auto& [key, value] : got.items()) {
    const std::string where = path.empty() ? key : path + "." + key;
    if (!schema.contains(key)) throw InputError("config: unknown key '" + where + "'");
    if (schema[key].is_object()) check_keys(value, schema[key], where);
  }
}

}  // namespace detail

inline RunConfig run_config_from_json(const nlohmann::json& j) {
  RunConfig c;
  detail::check_keys(j, to_json(c), "");
  try {
    if (j.contains("data")) c.data = synth::dataset_config_from_json(j["data"]);
    if (j.contains("training")) c.training = j["training"].get<TrainingConfig>();
    if (j.contains("oracle")) c.oracle = j["oracle"].get<eval::OracleConfig>();
    if (j.contains("evaluation")) c.evaluation = j["evaluation"].get<eval::EvalOptions>();
  } catch (const nlohmann::json::exception& e) {
    throw InputError(std::string("config: ") + e.what());
  }
  c.training.validate();
  return c;
}

inline RunConfig load_run_config(const std::optional<std::filesystem::path>& path) {
  if (!path) return RunConfig{};
  return run_config_from_json(synth::read_json(*path));
}

}  // namespace maa
