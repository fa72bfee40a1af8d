#include <gsl/gsl_version.h>
#include <openssl/evp.h>
#include <openssl/opensslv.h>

#include <CLI11.hpp>
#include <Eigen/Core>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <json.hpp>
#include <map>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "spm/config.hpp"
#include "spm/errors.hpp"
#include "spm/eval.hpp"

extern char** environ;

namespace fs = std::filesystem;
using nlohmann::json;
using namespace spm;

namespace {

constexpr const char* kVersion = "1.0.0";

std::string sha256_hex(const std::string& data) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), EVP_MD_CTX_free);
  if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr) != 1 ||
      EVP_DigestUpdate(ctx.get(), data.data(), data.size()) != 1 ||
      EVP_DigestFinal_ex(ctx.get(), digest, &len) != 1) {
    throw Error("SHA-256 computation failed");
  }
  std::ostringstream os;
  for (unsigned int i = 0; i < len; ++i) {
    os << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(digest[i]);
  }
  return os.str();
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw ConfigError("cannot open '" + p.string() + "'");
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

struct Common {
  std::string config_path;
  std::vector<std::string> overrides;
  std::string out;
  std::size_t jobs = 1;
  std::int64_t seed = -1;
};

struct Loaded {
  json doc;
  ExperimentConfig cfg;
};

Loaded load_config(const Common& c) {
  Loaded l;
  if (c.config_path.empty()) {
    l.doc = default_config_json();
  } else {
    try {
      l.doc = json::parse(read_file(c.config_path));
    } catch (const json::parse_error& e) {
      throw ConfigError("config file '" + c.config_path + "' is not valid JSON: " + e.what());
    }
  }
  std::map<std::string, std::string> env;
  for (char** e = environ; e && *e; ++e) {
    const std::string kv = *e;
    const auto eq = kv.find('=');
    if (eq != std::string::npos) env[kv.substr(0, eq)] = kv.substr(eq + 1);
  }
  apply_env_overrides(l.doc, env);
  for (const std::string& o : c.overrides) apply_override(l.doc, o);
  l.cfg = config_from_json(l.doc);
  if (!c.out.empty()) {
    l.cfg.output_dir = c.out;
    l.doc["output"]["dir"] = c.out;
  }
  if (c.seed >= 0) l.cfg.seeds = {static_cast<std::uint64_t>(c.seed)};
  return l;
}

// Writes output files and records their hashes for the manifest.
class Outputs {
 public:
  explicit Outputs(fs::path dir) : dir_(std::move(dir)) { fs::create_directories(dir_); }

  void write(const std::string& name, const std::string& content) {
    const fs::path p = dir_ / name;
    std::ofstream out(p, std::ios::binary);
    out << content;
    out.close();
    if (!out) throw Error("failed to write '" + p.string() + "'");
    files_.push_back({{"file", name}, {"sha256", sha256_hex(content)}});
  }

  void manifest(const std::string& command, const Loaded& l) {
    json m;
    m["command"] = command;
    m["config"] = l.doc;
    m["config_sha256"] = sha256_hex(l.doc.dump());
    m["seeds"] = l.cfg.seeds;
    m["versions"] = {
        {"spm", kVersion},
        {"compiler", __VERSION__},
        {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) +
                      "." + std::to_string(EIGEN_MINOR_VERSION)},
        {"gsl", GSL_VERSION},
        {"nlohmann_json", std::to_string(NLOHMANN_JSON_VERSION_MAJOR) + "." +
                              std::to_string(NLOHMANN_JSON_VERSION_MINOR) + "." +
                              std::to_string(NLOHMANN_JSON_VERSION_PATCH)},
        {"cli11", CLI11_VERSION},
        {"openssl", OPENSSL_VERSION_TEXT},
    };
    m["outputs"] = files_;
    std::ofstream out(dir_ / "manifest.json", std::ios::binary);
    out << m.dump(2) << '\n';
    if (!out) throw Error("failed to write the manifest");
  }

  const fs::path& dir() const { return dir_; }

 private:
  fs::path dir_;
  json files_ = json::array();
};

template <typename F>
std::string to_string_with(F&& f) {
  std::ostringstream os;
  f(os);
  return os.str();
}

void cmd_fit_path(const Common& c) {
  const Loaded l = load_config(c);
  const PathSpline spline = build_road(l.cfg.road);
  Outputs out(l.cfg.output_dir);
  out.write("spline.json", spline_to_json(spline).dump() + "\n");
  const FitReport& r = spline.fit_report();
  const DiffeoValidity dv = validate_diffeo(spline, l.cfg.world.e_max);
  const json report = {{"rms", r.rms},
                       {"max_continuity_residual", r.max_continuity_residual},
                       {"waypoints", r.waypoints},
                       {"length", spline.length()},
                       {"max_curvature", dv.max_curvature},
                       {"min_far_separation", dv.min_far_separation},
                       {"diffeomorphism_valid", dv.valid}};
  out.write("fit_report.json", report.dump(2) + "\n");
  out.manifest("fit-path", l);
  std::printf("fit rms %.6g m, length %.3f m, %s\n", r.rms, spline.length(),
              dv.valid ? "corridor valid" : "corridor INVALID");
}

void cmd_simulate(const Common& c) {
  const Loaded l = load_config(c);
  const PathSpline spline = build_road(l.cfg.road);
  const WorldConfig& w = l.cfg.world;
  SupportLayout layout = w.layout;
  layout.s_max = spline.length();
  layout.closed = spline.closed();
  const SupportGrid grid(layout, w.kernel.D);
  Outputs out(l.cfg.output_dir);
  for (std::uint64_t seed : l.cfg.seeds) {
    const TrueMap truth = generate_true_map(seed, grid, w.truth);
    TrajectoryConfig tc;
    tc.speed = w.speed;
    tc.duration = l.cfg.distance / w.speed;
    tc.lateral = w.lateral;
    const Trajectory tr(spline, tc, w.e_max);
    const MeasurementStream stream = synthesize_measurements(
        truth, tr, w.camera, w.sensors, {spline, grid, w.kernel, w.e_max}, seed);
    const std::string tag = std::to_string(seed);
    out.write("stream_" + tag + ".jsonl",
              to_string_with([&](std::ostream& os) { write_stream(os, stream); }));
    out.write("true_map_" + tag + ".json", true_map_to_json(truth, grid, w.kernel).dump() + "\n");
    std::printf("seed %s: %zu records, %llu pixels dropped\n", tag.c_str(), stream.records.size(),
                static_cast<unsigned long long>(stream.dropped_pixels));
  }
  out.manifest("simulate", l);
}

void cmd_run(const Common& c, const std::string& experiment) {
  const Loaded l = load_config(c);
  const PathSpline spline = build_road(l.cfg.road);
  Outputs out(l.cfg.output_dir);
  const auto t0 = std::chrono::steady_clock::now();
  if (experiment == "convergence") {
    const ConvergenceResult r =
        run_convergence_experiment(spline, convergence_config(l.cfg), c.jobs);
    out.write("kl_trace.csv",
              to_string_with([&](std::ostream& os) { write_kl_trace_csv(os, r.traces); }));
    out.write("kl_summary.csv",
              to_string_with([&](std::ostream& os) { write_kl_summary_csv(os, r.summary); }));
    const double first = r.summary.mean.front(), last = r.summary.mean.back();
    std::printf("mean KL %.4f at 0 m, %.4f at %.0f m (ratio %.3f)\n", first, last,
                r.summary.s.back(), last / first);
  } else if (experiment == "horizon") {
    std::ostringstream summary;
    summary << "seed,s0,rmse_spm,rmse_kf,rmse_gp\n";
    for (std::size_t i = 0; i < l.cfg.seeds.size(); ++i) {
      const std::uint64_t seed = l.cfg.seeds[i];
      const HorizonResult r = run_horizon_experiment(spline, horizon_config(l.cfg, seed));
      char line[160];
      std::snprintf(line, sizeof line, "%llu,%.17g,%.17g,%.17g,%.17g\n",
                    static_cast<unsigned long long>(seed), r.s0, r.rmse_spm, r.rmse_kf, r.rmse_gp);
      summary << line;
      std::printf("seed %llu: s0 %.0f m, RMSE spm %.4f kf %.4f gp %.4f\n",
                  static_cast<unsigned long long>(seed), r.s0, r.rmse_spm, r.rmse_kf, r.rmse_gp);
      if (i == 0) {
        out.write("horizon.csv",
                  to_string_with([&](std::ostream& os) { write_horizon_csv(os, r); }));
        out.write("class_likelihoods.csv",
                  to_string_with([&](std::ostream& os) { write_class_likelihoods_csv(os, r); }));
      }
    }
    out.write("horizon_summary.csv", summary.str());
  } else {
    throw ConfigError("unknown experiment '" + experiment + "'");
  }
  out.manifest("run --experiment " + experiment, l);
  std::printf("done in %.1f s\n",
              std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
}

struct Region {
  double s0, s1, e0, e1;
};

Region parse_region(const std::string& text) {
  Region r{};
  char c1 = 0, c2 = 0, c3 = 0;
  std::istringstream is(text);
  std::string rest;
  if (!(is >> r.s0 >> c1 >> r.s1 >> c2 >> r.e0 >> c3 >> r.e1) || c1 != ':' || c2 != ':' ||
      c3 != ':' || (is >> rest) || !(r.s1 > r.s0) || !(r.e1 > r.e0)) {
    throw ConfigError("region must be s_min:s_max:e_min:e_max with increasing bounds");
  }
  return r;
}

void cmd_export(const Common& c, const std::string& map_path, const std::string& region_text,
                double resolution) {
  if (!(resolution > 0.0)) throw ConfigError("resolution must be positive");
  const Region region = parse_region(region_text);
  const LoadedMap m = map_from_json(json::parse(read_file(map_path)));
  const Loaded l = load_config(c);
  const auto ns = static_cast<std::size_t>(std::llround((region.s1 - region.s0) * resolution));
  const auto ne = static_cast<std::size_t>(std::llround((region.e1 - region.e0) * resolution));
  if (ns == 0 || ne == 0) throw ConfigError("region is smaller than one cell at this resolution");

  std::ostringstream os;
  os << "s,e,m_y,V_y";
  for (std::size_t i = 1; i <= m.params.K(); ++i) os << ",p" << i;
  os << '\n';
  char buf[64];
  auto put = [&](double x) {
    std::snprintf(buf, sizeof buf, "%.17g", x);
    os << buf;
  };
  // Cell-centered samples, so doubling the resolution quadruples the rows.
  for (std::size_t i = 0; i < ns; ++i) {
    for (std::size_t j = 0; j < ne; ++j) {
      const PathCoord v{region.s0 + (i + 0.5) / resolution, region.e0 + (j + 0.5) / resolution};
      const PropertyMoments pm =
          predict_moments(m.params, v, *m.grid, m.kernel, l.cfg.world.predict);
      put(v.s);
      os << ',';
      put(v.e);
      os << ',';
      put(pm.mean);
      os << ',';
      put(pm.variance);
      for (double p : class_likelihoods(m.params, v, *m.grid, m.kernel)) {
        os << ',';
        put(p);
      }
      os << '\n';
    }
  }
  Outputs out(l.cfg.output_dir);
  out.write("export.csv", os.str());
  out.manifest("export", l);
  std::printf("exported %zu rows\n", ns * ne);
}

void cmd_replay(const Common& c, const std::string& stream_path) {
  const Loaded l = load_config(c);
  if (l.cfg.seeds.size() != 1) {
    throw ConfigError("replay needs exactly one seed (use --seed)");
  }
  const std::uint64_t seed = l.cfg.seeds.front();
  const PathSpline spline = build_road(l.cfg.road);
  const WorldConfig& w = l.cfg.world;
  SupportLayout layout = w.layout;
  layout.s_max = spline.length();
  layout.closed = spline.closed();
  auto grid = std::make_shared<const SupportGrid>(layout, w.kernel.D);
  const TrueMap truth = generate_true_map(seed, *grid, w.truth);
  SemanticPropertyMap map(perturbed_prior(truth, w.prior_perturbation, seed, w.prior_dirichlet),
                          grid, {w.kernel, w.predict});
  std::ifstream in(stream_path);
  if (!in) throw ConfigError("cannot open stream '" + stream_path + "'");
  const MeasurementStream stream = read_stream(in, truth.K());
  for (const StreamRecord& r : stream.records) {
    if (r.type == StreamRecord::Type::kSemantic) {
      map.add_semantic({r.cls, r.v});
    } else {
      map.add_property({r.y, r.v});
    }
  }
  const MapSnapshot snap = map.snapshot();
  const MapStats st = map.stats();
  Outputs out(l.cfg.output_dir);
  out.write("map.json", map_to_json(snap.params, *grid, w.kernel).dump() + "\n");
  const double kl =
      kl_moments(truth.params, snap.params, *grid, w.kernel, w.predict, {0.0, l.cfg.distance});
  const json stats = {{"semantic_updates", st.semantic_updates},
                      {"property_updates", st.property_updates},
                      {"dropped_semantic", st.dropped_semantic},
                      {"dropped_property", st.dropped_property},
                      {"kl_moments", kl}};
  out.write("replay_stats.json", stats.dump(2) + "\n");
  out.manifest("replay", l);
  std::printf("replayed %zu records, KL %.4f\n", stream.records.size(), kl);
}

void add_common(CLI::App* sub, Common& c, bool jobs) {
  sub->add_option("--config", c.config_path, "Experiment configuration (JSON)");
  sub->add_option("--set", c.overrides, "Override a config value: section.key=value");
  sub->add_option("--out", c.out, "Output directory");
  sub->add_option("--seed", c.seed, "Restrict to a single seed")->check(CLI::NonNegativeNumber);
  if (jobs) sub->add_option("--jobs", c.jobs, "Parallel seed jobs")->check(CLI::PositiveNumber);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Semantic property map experiments"};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);
  Common common;

  auto* fit = app.add_subcommand("fit-path", "Fit the road centerline spline");
  add_common(fit, common, false);

  auto* sim = app.add_subcommand("simulate", "Generate true maps and measurement streams");
  add_common(sim, common, false);

  std::string experiment = "convergence";
  auto* run = app.add_subcommand("run", "Run an experiment and write its CSV outputs");
  add_common(run, common, true);
  run->add_option("--experiment", experiment, "convergence or horizon")
      ->check(CLI::IsMember({"convergence", "horizon"}));

  std::string map_path, region;
  double resolution = 1.0;
  auto* exp = app.add_subcommand("export", "Externalize a map over a region as CSV");
  add_common(exp, common, false);
  exp->add_option("--map", map_path, "Map JSON file")->required();
  exp->add_option("--region", region, "s_min:s_max:e_min:e_max")->required();
  exp->add_option("--resolution", resolution, "Samples per meter");

  std::string stream_path;
  auto* rep = app.add_subcommand("replay", "Replay a stream dump into a fresh map");
  add_common(rep, common, false);
  rep->add_option("--stream", stream_path, "Stream JSON-lines file")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*fit) cmd_fit_path(common);
    if (*sim) cmd_simulate(common);
    if (*run) cmd_run(common, experiment);
    if (*exp) cmd_export(common, map_path, region, resolution);
    if (*rep) cmd_replay(common, stream_path);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
