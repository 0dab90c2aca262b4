#pragma once

#include <filesystem>
#include <string>

#include "json.hpp"
#include "trackkit/agent.hpp"
#include "trackkit/scenegen.hpp"
#include "trackkit/tracker.hpp"
#include "trackkit/training.hpp"

namespace trackkit {

struct AgentConfig {
  std::string fusion = "hybrid";
  std::array<int, 3> encoder_widths{64, 128, 256};
  std::array<int, 2> trunk_widths{256, 128};
  int seg_hidden = 64;
  std::array<double, 5> step_magnitudes{0.00066, 0.002, 0.006, 0.018, 0.054};

  PolicyShape shape() const;
  StepTable steps() const;
};

struct EvalConfig {
  double max_threshold = 0.10;  // meters
  int n_thresholds = 100;
};

// One document drives every command; sections mirror the library modules.
struct RunConfig {
  std::uint64_t seed = 1;
  SceneGenConfig scenegen;
  AgentConfig agent;
  TrainConfig training;
  TrackerConfig tracker;
  EvalConfig eval;
};

// Strict parse: unknown keys anywhere are an error.
RunConfig parse_run_config(const nlohmann::json& j);
RunConfig load_run_config(const std::filesystem::path& path);

// Full resolved snapshot (defaults included).
nlohmann::json run_config_json(const RunConfig& config);
void write_resolved_config(const std::filesystem::path& path, const RunConfig& config);

// Applies "section.key=value" to a config document; values parse as JSON
// when possible and fall back to strings.
void apply_override(nlohmann::json& doc, const std::string& assignment);

}  // namespace trackkit
