#include "spm/config.hpp"

#include <cmath>
#include <fstream>
#include <istream>
#include <numbers>
#include <set>
#include <sstream>

#include "spm/errors.hpp"

namespace spm {

namespace {

using nlohmann::json;

// Reads keys from one JSON object, remembering which were consumed so that
// unknown keys can be rejected afterwards.
class Section {
 public:
  Section(const json& doc, std::string path) : doc_(doc), path_(std::move(path)) {
    if (!doc_.is_object()) throw ConfigError(where("") + " must be an object");
  }

  const json& raw(const std::string& key) {
    const auto it = doc_.find(key);
    if (it == doc_.end()) throw ConfigError("missing config key '" + where(key) + "'");
    seen_.insert(key);
    return *it;
  }

  template <typename T>
  T get(const std::string& key) {
    const json& v = raw(key);
    try {
      return v.get<T>();
    } catch (const json::exception&) {
      throw ConfigError("config key '" + where(key) + "' has the wrong type");
    }
  }

  double positive(const std::string& key) {
    const double v = get<double>(key);
    if (!(v > 0.0) || !std::isfinite(v)) {
      throw ConfigError("config key '" + where(key) + "' must be positive");
    }
    return v;
  }

  double nonnegative(const std::string& key) {
    const double v = get<double>(key);
    if (!(v >= 0.0) || !std::isfinite(v)) {
      throw ConfigError("config key '" + where(key) + "' must be non-negative");
    }
    return v;
  }

  Section section(const std::string& key) { return Section(raw(key), where(key)); }

  void finish() const {
    for (const auto& [key, value] : doc_.items()) {
      if (!seen_.count(key)) throw ConfigError("unknown config key '" + where(key) + "'");
    }
  }

  std::string where(const std::string& key) const {
    if (path_.empty()) return key;
    return key.empty() ? path_ : path_ + "." + key;
  }

 private:
  const json& doc_;
  std::string path_;
  std::set<std::string> seen_;
};

NormalGamma read_class(Section s) {
  NormalGamma ng;
  ng.mu = s.get<double>("mu");
  ng.lambda = s.positive("lambda");
  ng.alpha = s.positive("alpha");
  ng.beta = s.positive("beta");
  s.finish();
  return ng;
}

json class_json(const NormalGamma& ng) {
  return {{"mu", ng.mu}, {"lambda", ng.lambda}, {"alpha", ng.alpha}, {"beta", ng.beta}};
}

json parse_value(const std::string& text) {
  try {
    return json::parse(text);
  } catch (const json::exception&) {
    return text;
  }
}

}  // namespace

ExperimentConfig config_from_json(const json& doc) {
  ExperimentConfig cfg;
  Section root(doc, "");

  {
    Section s = root.section("road");
    cfg.road.waypoints = s.get<std::string>("waypoints");
    cfg.road.length = s.positive("length");
    cfg.road.spacing = s.positive("spacing");
    cfg.road.segments = s.get<int>("segments");
    cfg.road.degree = s.get<int>("degree");
    cfg.road.closed = s.get<bool>("closed");
    if (cfg.road.segments < 1) throw ConfigError("config key 'road.segments' must be positive");
    if (cfg.road.degree < 3) throw ConfigError("config key 'road.degree' must be at least 3");
    s.finish();
  }
  WorldConfig& w = cfg.world;
  {
    Section s = root.section("kernel");
    w.kernel.D = s.positive("D");
    w.kernel.sigma = s.positive("sigma");
    s.finish();
  }
  {
    Section s = root.section("grid");
    w.layout.spacing_s = s.positive("spacing_s");
    w.layout.spacing_e = s.positive("spacing_e");
    w.e_max = s.positive("e_max");
    w.layout.e_min = -w.e_max;
    w.layout.e_max = w.e_max;
    s.finish();
  }
  {
    Section s = root.section("camera");
    const double fx = s.positive("fx"), fy = s.positive("fy");
    const double cx = s.get<double>("cx"), cy = s.get<double>("cy");
    const int width = s.get<int>("width"), height = s.get<int>("height");
    if (width <= 0 || height <= 0) throw ConfigError("config key 'camera.width/height' invalid");
    w.camera.intrinsics = CameraIntrinsics::pinhole(fx, fy, cx, cy, width, height);
    w.camera.extrinsics.z = s.positive("mount_height");
    w.camera.extrinsics.pitch = s.get<double>("pitch_deg") * std::numbers::pi / 180.0;
    s.finish();
  }
  {
    Section s = root.section("simulator");
    cfg.seeds = s.get<std::vector<std::uint64_t>>("seeds");
    if (cfg.seeds.empty()) throw ConfigError("config key 'simulator.seeds' must not be empty");
    w.sensors.semantic_rate = s.positive("semantic_rate");
    w.sensors.property_rate = s.positive("property_rate");
    w.sensors.pixels_per_frame = s.get<std::size_t>("pixels_per_frame");
    w.sensors.near_range = s.positive("near_range");
    w.sensors.far_range = s.positive("far_range");
    w.speed = s.positive("speed");
    cfg.distance = s.positive("distance");
    w.lateral.offset = 0.0;
    w.lateral.amplitude = s.nonnegative("lateral_amplitude");
    w.lateral.period = s.positive("lateral_period");
    const json& classes = s.raw("classes");
    if (!classes.is_array() || classes.size() != 3) {
      throw ConfigError("config key 'simulator.classes' must list 3 classes");
    }
    w.truth.classes.clear();
    for (std::size_t i = 0; i < classes.size(); ++i) {
      w.truth.classes.push_back(
          read_class(Section(classes[i], "simulator.classes[" + std::to_string(i) + "]")));
    }
    w.truth.dominant_concentration = s.positive("dominant_concentration");
    w.truth.other_concentration = s.positive("other_concentration");
    w.truth.water_intensity = s.nonnegative("water_intensity");
    w.truth.water_length_s = s.positive("water_length_s");
    w.truth.water_length_e = s.positive("water_length_e");
    w.truth.gravel_edge = s.nonnegative("gravel_edge");
    w.truth.gravel_fraction = s.nonnegative("gravel_fraction");
    w.truth.gravel_length_s = s.positive("gravel_length_s");
    s.finish();
  }
  {
    Section s = root.section("prior");
    w.prior_perturbation = s.nonnegative("perturbation");
    w.prior_dirichlet = s.get<std::vector<double>>("dirichlet");
    if (w.prior_dirichlet.size() != 3) {
      throw ConfigError("config key 'prior.dirichlet' must have 3 entries");
    }
    for (double a : w.prior_dirichlet) {
      if (!(a > 0.0)) throw ConfigError("config key 'prior.dirichlet' must be positive");
    }
    s.finish();
  }
  {
    Section s = root.section("predict");
    w.predict.variance_cap = s.positive("variance_cap");
    s.finish();
  }
  {
    Section s = root.section("eval");
    cfg.record_every = s.positive("record_every");
    cfg.horizon.points = s.get<std::size_t>("horizon_points");
    cfg.horizon.amplitude = s.nonnegative("horizon_amplitude");
    cfg.horizon.angular_rate = s.positive("horizon_angular_rate");
    cfg.horizon.lead = s.positive("horizon_lead");
    cfg.horizon.s0_step = s.positive("horizon_s0_step");
    const json& wet = s.raw("horizon_min_wet_points");
    if (wet.is_null()) {
      cfg.horizon.min_wet_points.reset();
    } else if (wet.is_number_unsigned()) {
      cfg.horizon.min_wet_points = wet.get<std::size_t>();
    } else {
      throw ConfigError("config key 'eval.horizon_min_wet_points' must be a count or null");
    }
    s.finish();
  }
  {
    Section s = root.section("baselines");
    cfg.horizon.kf.q = s.positive("kf_q");
    cfg.horizon.kf.r = s.positive("kf_r");
    cfg.horizon.kf.variance = cfg.horizon.kf.r;
    cfg.horizon.gp_window = s.positive("gp_window");
    cfg.horizon.gp_max_points = s.get<std::size_t>("gp_max_points");
    if (cfg.horizon.gp_max_points < 5) {
      throw ConfigError("config key 'baselines.gp_max_points' must be at least 5");
    }
    s.finish();
  }
  {
    Section s = root.section("output");
    cfg.output_dir = s.get<std::string>("dir");
    s.finish();
  }
  root.finish();

  if (!(w.sensors.far_range > w.sensors.near_range)) {
    throw ConfigError("config key 'simulator.far_range' must exceed near_range");
  }
  if (!(w.prior_perturbation < 1.0)) {
    throw ConfigError("config key 'prior.perturbation' must be below 1");
  }
  if (w.lateral.amplitude > w.e_max || cfg.horizon.amplitude > w.e_max) {
    throw ConfigError("lateral offsets must stay within grid.e_max");
  }
  try {
    w.kernel.validate();
    // The path length fills in s_max later; probe the rest of the layout.
    SupportLayout probe = w.layout;
    probe.s_max = probe.s_min + 1.0;
    probe.validate();
    w.truth.validate();
  } catch (const ArgumentError& e) {
    throw ConfigError(std::string("invalid configuration: ") + e.what());
  }
  cfg.horizon.world = w;
  return cfg;
}

json config_to_json(const ExperimentConfig& cfg) {
  const WorldConfig& w = cfg.world;
  const Eigen::Matrix3d& K = w.camera.intrinsics.K;
  json classes = json::array();
  for (const NormalGamma& ng : w.truth.classes) classes.push_back(class_json(ng));
  json wet = cfg.horizon.min_wet_points ? json(*cfg.horizon.min_wet_points) : json(nullptr);
  return {
      {"road",
       {{"waypoints", cfg.road.waypoints},
        {"length", cfg.road.length},
        {"spacing", cfg.road.spacing},
        {"segments", cfg.road.segments},
        {"degree", cfg.road.degree},
        {"closed", cfg.road.closed}}},
      {"kernel", {{"D", w.kernel.D}, {"sigma", w.kernel.sigma}}},
      {"grid",
       {{"spacing_s", w.layout.spacing_s}, {"spacing_e", w.layout.spacing_e}, {"e_max", w.e_max}}},
      {"camera",
       {{"fx", K(0, 0)},
        {"fy", K(1, 1)},
        {"cx", K(0, 2)},
        {"cy", K(1, 2)},
        {"width", w.camera.intrinsics.width},
        {"height", w.camera.intrinsics.height},
        {"mount_height", w.camera.extrinsics.z},
        {"pitch_deg", w.camera.extrinsics.pitch * 180.0 / std::numbers::pi}}},
      {"simulator",
       {{"seeds", cfg.seeds},
        {"semantic_rate", w.sensors.semantic_rate},
        {"property_rate", w.sensors.property_rate},
        {"pixels_per_frame", w.sensors.pixels_per_frame},
        {"near_range", w.sensors.near_range},
        {"far_range", w.sensors.far_range},
        {"speed", w.speed},
        {"distance", cfg.distance},
        {"lateral_amplitude", w.lateral.amplitude},
        {"lateral_period", w.lateral.period},
        {"classes", classes},
        {"dominant_concentration", w.truth.dominant_concentration},
        {"other_concentration", w.truth.other_concentration},
        {"water_intensity", w.truth.water_intensity},
        {"water_length_s", w.truth.water_length_s},
        {"water_length_e", w.truth.water_length_e},
        {"gravel_edge", w.truth.gravel_edge},
        {"gravel_fraction", w.truth.gravel_fraction},
        {"gravel_length_s", w.truth.gravel_length_s}}},
      {"prior", {{"perturbation", w.prior_perturbation}, {"dirichlet", w.prior_dirichlet}}},
      {"predict", {{"variance_cap", w.predict.variance_cap}}},
      {"eval",
       {{"record_every", cfg.record_every},
        {"horizon_points", cfg.horizon.points},
        {"horizon_amplitude", cfg.horizon.amplitude},
        {"horizon_angular_rate", cfg.horizon.angular_rate},
        {"horizon_lead", cfg.horizon.lead},
        {"horizon_s0_step", cfg.horizon.s0_step},
        {"horizon_min_wet_points", wet}}},
      {"baselines",
       {{"kf_q", cfg.horizon.kf.q},
        {"kf_r", cfg.horizon.kf.r},
        {"gp_window", cfg.horizon.gp_window},
        {"gp_max_points", cfg.horizon.gp_max_points}}},
      {"output", {{"dir", cfg.output_dir}}},
  };
}

json default_config_json() {
  ExperimentConfig cfg;
  cfg.seeds = {0, 1, 2, 3, 4, 5, 6, 7, 8, 9};
  cfg.horizon.kf.variance = cfg.horizon.kf.r;
  return config_to_json(cfg);
}

void apply_override(json& doc, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw ConfigError("override '" + assignment + "' is not of the form key=value");
  }
  const std::string path = assignment.substr(0, eq);
  json* node = &doc;
  std::size_t start = 0;
  while (true) {
    const auto dot = path.find('.', start);
    const std::string key = path.substr(start, dot == std::string::npos ? dot : dot - start);
    if (!node->is_object() || !node->contains(key)) {
      throw ConfigError("unknown config key '" + path + "' in override");
    }
    node = &(*node)[key];
    if (dot == std::string::npos) break;
    start = dot + 1;
  }
  *node = parse_value(assignment.substr(eq + 1));
}

void apply_env_overrides(json& doc, const std::map<std::string, std::string>& env) {
  static const std::string prefix = "SPM_";
  for (const auto& [name, value] : env) {
    if (name.rfind(prefix, 0) != 0) continue;
    std::string path = name.substr(prefix.size());
    for (std::size_t pos; (pos = path.find("__")) != std::string::npos;) {
      path.replace(pos, 2, ".");
    }
    apply_override(doc, path + "=" + value);
  }
}

ConvergenceConfig convergence_config(const ExperimentConfig& cfg) {
  ConvergenceConfig out;
  out.world = cfg.world;
  out.seeds = cfg.seeds;
  out.distance = cfg.distance;
  out.record_every = cfg.record_every;
  return out;
}

HorizonConfig horizon_config(const ExperimentConfig& cfg, std::uint64_t seed) {
  HorizonConfig out = cfg.horizon;
  out.world = cfg.world;
  out.seed = seed;
  return out;
}

std::vector<BevCoord> read_waypoints_csv(std::istream& is) {
  std::vector<BevCoord> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    if (lineno == 1 && line.find_first_of("0123456789") == std::string::npos) continue;  // header
    std::istringstream ls(line);
    BevCoord p;
    char comma = 0;
    std::string rest;
    if (!(ls >> p.x >> comma >> p.y) || comma != ',' || (ls >> rest) || !std::isfinite(p.x) ||
        !std::isfinite(p.y)) {
      throw ParseError("waypoints line " + std::to_string(lineno) + ": expected 'x,y'");
    }
    out.push_back(p);
  }
  return out;
}

PathSpline build_road(const RoadConfig& road) {
  std::vector<BevCoord> pts;
  if (road.waypoints.empty()) {
    pts = synthetic_road(road.length, road.spacing);
  } else {
    std::ifstream in(road.waypoints);
    if (!in) throw ConfigError("cannot open waypoints file '" + road.waypoints + "'");
    pts = read_waypoints_csv(in);
  }
  return fit_path(pts, road.segments, road.degree, road.closed);
}

}  // namespace spm
