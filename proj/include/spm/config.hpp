#pragma once

#include <cstdint>
#include <json.hpp>
#include <map>
#include <string>
#include <vector>

#include "spm/eval.hpp"

namespace spm {

struct RoadConfig {
  std::string waypoints;  // CSV file of x,y rows; empty uses the generator
  double length = 3218.7;
  double spacing = 1.0;
  int segments = 40;
  int degree = 6;
  bool closed = false;
};

struct ExperimentConfig {
  RoadConfig road;
  WorldConfig world;
  std::vector<std::uint64_t> seeds;
  double distance = 600.0;
  double record_every = 10.0;
  HorizonConfig horizon;  // world and seed are filled in per run
  std::string output_dir = "out";
};

// Parses a complete configuration document. Every key must be present and
// known; errors name the offending key path.
ExperimentConfig config_from_json(const nlohmann::json& doc);
nlohmann::json config_to_json(const ExperimentConfig& cfg);
nlohmann::json default_config_json();

// Applies "section.key=value" overrides. Values parse as JSON when possible
// and fall back to strings. Keys must already exist in the document.
void apply_override(nlohmann::json& doc, const std::string& assignment);
// Environment variables SPM_<section>__<key>=value, same semantics.
void apply_env_overrides(nlohmann::json& doc, const std::map<std::string, std::string>& env);

ConvergenceConfig convergence_config(const ExperimentConfig& cfg);
HorizonConfig horizon_config(const ExperimentConfig& cfg, std::uint64_t seed);

// x,y waypoint rows; '#' starts a comment line. Throws ParseError naming the
// line number.
std::vector<BevCoord> read_waypoints_csv(std::istream& is);
PathSpline build_road(const RoadConfig& road);

}  // namespace spm
