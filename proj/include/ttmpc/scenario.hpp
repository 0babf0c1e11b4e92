#pragma once

// Scenario configuration: defaults, YAML loading with fail-fast diagnostics
// and a manifest writer that round-trips through the loader.

#include <cstdint>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <yaml-cpp/yaml.h>

#include "ttmpc/denmpc.hpp"
#include "ttmpc/nmhe.hpp"
#include "ttmpc/plant.hpp"
#include "ttmpc/trajectory.hpp"

namespace ttmpc {

inline constexpr const char* kSoftwareName = "ttmpc";
inline constexpr const char* kSoftwareVersion = "1.0.0";

enum class PathKind { eight, circle, straight };
enum class ControllerMode { decentralized, centralized };
enum class EstimatorKind { nmhe, truth };

inline const char* to_string(PathKind k) {
  switch (k) {
    case PathKind::eight: return "eight";
    case PathKind::circle: return "circle";
    case PathKind::straight: return "straight";
  }
  return "?";
}
inline const char* to_string(EstimatorKind k) { return k == EstimatorKind::nmhe ? "nmhe" : "truth"; }
inline const char* to_string(HitchModel h) { return h == HitchModel::random_walk ? "random_walk" : "articulation"; }
inline const char* to_string(SteeringPairing p) {
  return p == SteeringPairing::interval_end ? "interval_end" : "interval_mean";
}

struct PathConfig {
  PathKind kind{PathKind::eight};
  EightShapeParams eight{};
  double radius{10.0};  // circle
  double turns{1.5};
  double length{60.0};  // straight
  double spacing{0.1};

  [[nodiscard]] PathSpec build() const {
    switch (kind) {
      case PathKind::eight: {
        EightShapeParams p = eight;
        p.spacing = spacing;
        return build_eight_shape(p);
      }
      case PathKind::circle: return build_circle(radius, spacing, turns);
      case PathKind::straight: return build_straight(length, spacing);
    }
    throw std::logic_error("unknown path kind");
  }
};

struct ScenarioConfig {
  std::uint64_t seed{1};
  double dt{0.2};
  double duration{0.0};  // [s]; 0 runs until the tractor reaches the end of the path
  bool record_timing{true};

  PathConfig path{};
  VehicleGeometry geometry{};

  ControllerMode mode{ControllerMode::decentralized};
  bool tube{true};
  NmpcConfig nmpc{};
  TubeGain gain{};
  LookaheadConfig lookahead{};

  EstimatorKind estimator{EstimatorKind::nmhe};
  NmheConfig nmhe{};

  PlantConfig plant{};
  SlipProfile slip{};
  SensorNoise noise{};
  double initial_lateral_offset{0.0};  // [m], to the left of the path at the start
  double divergence_limit{10.0};       // [m] estimator position error that aborts a run

  [[nodiscard]] std::string mode_name() const {
    if (mode == ControllerMode::centralized) return "cenmpc";
    return tube ? "denmpc-tube" : "denmpc";
  }

  /// Pushes shared values (dt, horizon, limits) into the sub-configs and checks ranges.
  void finalize() {
    if (!(dt > 0.0)) throw std::invalid_argument("dt must be positive");
    if (duration < 0.0) throw std::invalid_argument("duration must be >= 0");
    if (nmpc.horizon < 1) throw std::invalid_argument("controller horizon must be >= 1");
    if (nmhe.window < 2) throw std::invalid_argument("estimator window must be >= 2");
    if (mode == ControllerMode::centralized && tube)
      throw std::invalid_argument("the tube layer is only defined for the decentralized controllers");
    if (!(divergence_limit > 0.0)) throw std::invalid_argument("divergence_limit must be positive");
    geometry.validate();
    nmpc.weights.validate();
    plant.validate();
    noise.validate();
    nmpc.dt = dt;
    nmhe.dt = dt;
    lookahead.dt = dt;
    lookahead.horizon = nmpc.horizon;
    nmhe.limits = nmpc.limits;
    plant.limits = nmpc.limits;
    if (!(nmpc.limits.tractor > 0.0) || !(nmpc.limits.trailer > 0.0))
      throw std::invalid_argument("steering limits must be positive");
    if (!(nmhe.param_min < nmhe.param_max)) throw std::invalid_argument("parameter bounds must be ordered");
  }
};

/// Applies a controller mode name (denmpc, denmpc-tube, cenmpc).
inline void apply_mode(ScenarioConfig& cfg, const std::string& name) {
  if (name == "denmpc") cfg.mode = ControllerMode::decentralized, cfg.tube = false;
  else if (name == "denmpc-tube") cfg.mode = ControllerMode::decentralized, cfg.tube = true;
  else if (name == "cenmpc") cfg.mode = ControllerMode::centralized, cfg.tube = false;
  else throw std::invalid_argument("unknown controller mode '" + name + "'");
}

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

inline std::string where(const YAML::Node& n, const std::string& field) {
  std::ostringstream os;
  os << "line " << (n.Mark().line + 1) << ", field '" << field << "'";
  return os.str();
}

/// Walks a mapping, dispatching known keys and rejecting the rest.
class SectionReader {
 public:
  SectionReader(const YAML::Node& node, std::string prefix) : node_(node), prefix_(std::move(prefix)) {
    if (!node_.IsMap()) throw ConfigError(where(node_, prefix_.empty() ? "<root>" : prefix_) + ": expected a mapping");
  }

  template <typename T>
  void field(const std::string& key, T& out) {
    handlers_[key] = [this, key, &out](const YAML::Node& v) {
      try {
        out = v.as<T>();
      } catch (const YAML::Exception&) {
        throw ConfigError(where(v, name(key)) + ": invalid value");
      }
    };
  }
  void degrees(const std::string& key, double& radians) {
    handlers_[key] = [this, key, &radians](const YAML::Node& v) {
      try {
        radians = deg2rad(v.as<double>());
      } catch (const YAML::Exception&) {
        throw ConfigError(where(v, name(key)) + ": invalid value");
      }
    };
  }
  void custom(const std::string& key, std::function<void(const YAML::Node&, const std::string&)> fn) {
    handlers_[key] = [this, key, fn](const YAML::Node& v) { fn(v, name(key)); };
  }

  void run() {
    for (const auto& kv : node_) {
      const auto key = kv.first.as<std::string>();
      const auto it = handlers_.find(key);
      if (it == handlers_.end()) throw ConfigError(where(kv.first, name(key)) + ": unknown key");
      try {
        it->second(kv.second);
      } catch (const YAML::Exception&) {
        throw ConfigError(where(kv.second, name(key)) + ": invalid value");
      }
    }
  }

  [[nodiscard]] std::string name(const std::string& key) const { return prefix_.empty() ? key : prefix_ + "." + key; }

 private:
  YAML::Node node_;
  std::string prefix_;
  std::map<std::string, std::function<void(const YAML::Node&)>> handlers_;
};

template <int N>
void read_fixed(const YAML::Node& v, const std::string& name, Eigen::Matrix<double, N, 1>& out) {
  if (!v.IsSequence() || v.size() != static_cast<std::size_t>(N))
    throw ConfigError(where(v, name) + ": expected a list of " + std::to_string(N) + " numbers");
  try {
    for (int i = 0; i < N; ++i) out(i) = v[static_cast<std::size_t>(i)].as<double>();
  } catch (const YAML::Exception&) {
    throw ConfigError(where(v, name) + ": invalid number");
  }
}

inline void read_slip(const YAML::Node& v, const std::string& name, SlipParams& slip) {
  SectionReader r(v, name);
  r.field("mu", slip.mu);
  r.field("kappa", slip.kappa);
  r.field("eta", slip.eta);
  r.run();
}

}  // namespace detail

inline ScenarioConfig parse_scenario(const YAML::Node& root) {
  using detail::SectionReader;
  ScenarioConfig cfg;
  if (!root || root.IsNull()) {
    cfg.finalize();
    return cfg;
  }
  std::optional<std::string> mode_name;
  std::optional<bool> tube_flag;

  SectionReader top(root, "");
  top.field("seed", cfg.seed);
  top.field("dt", cfg.dt);
  top.field("duration", cfg.duration);
  top.field("record_timing", cfg.record_timing);
  top.field("initial_lateral_offset", cfg.initial_lateral_offset);
  top.field("divergence_limit", cfg.divergence_limit);
  top.custom("software", [](const YAML::Node&, const std::string&) {});  // written by the manifest, informational

  top.custom("path", [&](const YAML::Node& v, const std::string& name) {
    SectionReader r(v, name);
    r.custom("kind", [&](const YAML::Node& k, const std::string& n) {
      const auto s = k.as<std::string>();
      if (s == "eight") cfg.path.kind = PathKind::eight;
      else if (s == "circle") cfg.path.kind = PathKind::circle;
      else if (s == "straight") cfg.path.kind = PathKind::straight;
      else throw ConfigError(detail::where(k, n) + ": expected eight, circle or straight");
    });
    r.custom("radii", [&](const YAML::Node& k, const std::string& n) {
      try {
        cfg.path.eight.radii = k.as<std::vector<double>>();
      } catch (const YAML::Exception&) {
        throw ConfigError(detail::where(k, n) + ": expected a list of radii");
      }
      if (cfg.path.eight.radii.empty()) throw ConfigError(detail::where(k, n) + ": at least one radius is required");
    });
    r.field("straight_length", cfg.path.eight.straight_length);
    r.field("connector_length", cfg.path.eight.connector_length);
    r.field("radius", cfg.path.radius);
    r.field("turns", cfg.path.turns);
    r.field("length", cfg.path.length);
    r.field("spacing", cfg.path.spacing);
    r.run();
  });

  top.custom("vehicle", [&](const YAML::Node& v, const std::string& name) {
    SectionReader r(v, name);
    r.field("tractor_wheelbase", cfg.geometry.tractor_wheelbase);
    r.field("trailer_length", cfg.geometry.trailer_length);
    r.field("hitch_offset", cfg.geometry.hitch_offset);
    r.field("drawbar_length", cfg.geometry.drawbar_length);
    r.run();
  });

  top.custom("controller", [&](const YAML::Node& v, const std::string& name) {
    SectionReader r(v, name);
    r.custom("mode", [&](const YAML::Node& k, const std::string&) { mode_name = k.as<std::string>(); });
    r.custom("tube", [&](const YAML::Node& k, const std::string& n) {
      try {
        tube_flag = k.as<bool>();
      } catch (const YAML::Exception&) {
        throw ConfigError(detail::where(k, n) + ": expected true or false");
      }
    });
    r.field("horizon", cfg.nmpc.horizon);
    r.custom("Q", [&](const YAML::Node& k, const std::string& n) {
      Eigen::Vector3d d;
      detail::read_fixed<3>(k, n, d);
      cfg.nmpc.weights.Q = d.asDiagonal();
    });
    r.custom("S", [&](const YAML::Node& k, const std::string& n) {
      Eigen::Vector3d d;
      detail::read_fixed<3>(k, n, d);
      cfg.nmpc.weights.S = d.asDiagonal();
    });
    r.field("R", cfg.nmpc.weights.R);
    r.custom("tube_gain", [&](const YAML::Node& k, const std::string& n) {
      Eigen::Vector3d g;
      detail::read_fixed<3>(k, n, g);
      cfg.gain.K = g.transpose();
    });
    r.field("lookahead", cfg.lookahead.lookahead);
    r.field("lookahead_per_mps", cfg.lookahead.lookahead_per_mps);
    r.field("reference_speed", cfg.lookahead.v_ref);
    r.field("search_window", cfg.lookahead.search_window);
    r.degrees("tractor_limit_deg", cfg.nmpc.limits.tractor);
    r.degrees("trailer_limit_deg", cfg.nmpc.limits.trailer);
    r.run();
  });

  top.custom("estimator", [&](const YAML::Node& v, const std::string& name) {
    SectionReader r(v, name);
    r.custom("kind", [&](const YAML::Node& k, const std::string& n) {
      const auto s = k.as<std::string>();
      if (s == "nmhe") cfg.estimator = EstimatorKind::nmhe;
      else if (s == "truth") cfg.estimator = EstimatorKind::truth;
      else throw ConfigError(detail::where(k, n) + ": expected nmhe or truth");
    });
    r.field("window", cfg.nmhe.window);
    r.custom("hitch_model", [&](const YAML::Node& k, const std::string& n) {
      const auto s = k.as<std::string>();
      if (s == "random_walk") cfg.nmhe.hitch_model = HitchModel::random_walk;
      else if (s == "articulation") cfg.nmhe.hitch_model = HitchModel::articulation;
      else throw ConfigError(detail::where(k, n) + ": expected random_walk or articulation");
    });
    r.custom("steering_pairing", [&](const YAML::Node& k, const std::string& n) {
      const auto s = k.as<std::string>();
      if (s == "interval_end") cfg.nmhe.steering_pairing = SteeringPairing::interval_end;
      else if (s == "interval_mean") cfg.nmhe.steering_pairing = SteeringPairing::interval_mean;
      else throw ConfigError(detail::where(k, n) + ": expected interval_end or interval_mean");
    });
    r.custom("measurement_sd", [&](const YAML::Node& k, const std::string& n) {
      detail::read_fixed<8>(k, n, cfg.nmhe.measurement_sd);
    });
    r.custom("state_process_sd", [&](const YAML::Node& k, const std::string& n) {
      detail::read_fixed<8>(k, n, cfg.nmhe.state_process_sd);
    });
    r.custom("param_process_sd", [&](const YAML::Node& k, const std::string& n) {
      detail::read_fixed<3>(k, n, cfg.nmhe.param_process_sd);
    });
    r.field("param_min", cfg.nmhe.param_min);
    r.field("param_max", cfg.nmhe.param_max);
    r.field("initial_param", cfg.nmhe.initial_param);
    r.field("initial_information", cfg.nmhe.initial_information);
    r.field("arrival_cost", cfg.nmhe.arrival_cost);
    r.run();
  });

  top.custom("plant", [&](const YAML::Node& v, const std::string& name) {
    SectionReader r(v, name);
    r.field("substeps", cfg.plant.substeps);
    r.field("steering_lag", cfg.plant.steering_lag);
    r.field("speed_lag", cfg.plant.speed_lag);
    r.field("speed", cfg.plant.speed_command);
    r.field("coupling", cfg.plant.coupling);
    r.field("hitch_dynamics", cfg.plant.hitch_dynamics);
    r.custom("slip", [&](const YAML::Node& k, const std::string& n) { detail::read_slip(k, n, cfg.slip.initial); });
    r.custom("slip_drop", [&](const YAML::Node& k, const std::string& n) {
      SectionReader d(k, n);
      double time = 0.0;
      d.field("time", time);
      d.custom("slip", [&](const YAML::Node& s, const std::string& sn) { detail::read_slip(s, sn, cfg.slip.after); });
      d.run();
      if (!k["time"]) throw ConfigError(detail::where(k, n + ".time") + ": required");
      cfg.slip.drop_time = time;
    });
    r.run();
  });

  top.custom("noise", [&](const YAML::Node& v, const std::string& name) {
    SectionReader r(v, name);
    r.field("x_t", cfg.noise.x_t);
    r.field("y_t", cfg.noise.y_t);
    r.field("x_i", cfg.noise.x_i);
    r.field("y_i", cfg.noise.y_i);
    r.field("beta", cfg.noise.beta);
    r.field("v", cfg.noise.v);
    r.field("delta_t", cfg.noise.delta_t);
    r.field("delta_i", cfg.noise.delta_i);
    r.degrees("steering_resolution_deg", cfg.noise.steering_resolution);
    r.run();
  });

  top.run();
  try {
    if (mode_name) apply_mode(cfg, *mode_name);
    if (tube_flag) cfg.tube = *tube_flag;
    cfg.finalize();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("invalid scenario: ") + e.what());
  }
  return cfg;
}

inline ScenarioConfig parse_scenario_text(const std::string& text) {
  try {
    return parse_scenario(YAML::Load(text));
  } catch (const YAML::ParserException& e) {
    throw ConfigError(std::string("syntax error: ") + e.what());
  }
}

inline ScenarioConfig load_scenario(const std::string& file) {
  std::ifstream in(file);
  if (!in) throw std::runtime_error("cannot open config file '" + file + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  try {
    return parse_scenario_text(ss.str());
  } catch (const ConfigError& e) {
    throw ConfigError(file + ": " + e.what());
  }
}

/// Full configuration as YAML; loading it back reproduces the scenario.
inline std::string scenario_manifest(const ScenarioConfig& c) {
  YAML::Emitter e;
  e.SetDoublePrecision(17);
  auto seq = [&](auto first, auto last) {
    e << YAML::Flow << YAML::BeginSeq;
    for (auto it = first; it != last; ++it) e << *it;
    e << YAML::EndSeq;
  };
  auto vec = [&](const auto& v) {
    e << YAML::Flow << YAML::BeginSeq;
    for (Eigen::Index i = 0; i < v.size(); ++i) e << v(i);
    e << YAML::EndSeq;
  };
  auto slip = [&](const SlipParams& s) {
    e << YAML::BeginMap << YAML::Key << "mu" << YAML::Value << s.mu << YAML::Key << "kappa" << YAML::Value << s.kappa
      << YAML::Key << "eta" << YAML::Value << s.eta << YAML::EndMap;
  };
  const Eigen::Vector3d q = c.nmpc.weights.Q.diagonal(), s = c.nmpc.weights.S.diagonal();
  const Eigen::Vector3d k = c.gain.K.transpose();

  e << YAML::BeginMap;
  e << YAML::Key << "software" << YAML::Value << YAML::BeginMap << YAML::Key << "name" << YAML::Value << kSoftwareName
    << YAML::Key << "version" << YAML::Value << kSoftwareVersion << YAML::EndMap;
  e << YAML::Key << "seed" << YAML::Value << c.seed;
  e << YAML::Key << "dt" << YAML::Value << c.dt;
  e << YAML::Key << "duration" << YAML::Value << c.duration;
  e << YAML::Key << "record_timing" << YAML::Value << c.record_timing;
  e << YAML::Key << "initial_lateral_offset" << YAML::Value << c.initial_lateral_offset;
  e << YAML::Key << "divergence_limit" << YAML::Value << c.divergence_limit;

  e << YAML::Key << "path" << YAML::Value << YAML::BeginMap;
  e << YAML::Key << "kind" << YAML::Value << to_string(c.path.kind);
  e << YAML::Key << "radii" << YAML::Value;
  seq(c.path.eight.radii.begin(), c.path.eight.radii.end());
  e << YAML::Key << "straight_length" << YAML::Value << c.path.eight.straight_length;
  e << YAML::Key << "connector_length" << YAML::Value << c.path.eight.connector_length;
  e << YAML::Key << "radius" << YAML::Value << c.path.radius;
  e << YAML::Key << "turns" << YAML::Value << c.path.turns;
  e << YAML::Key << "length" << YAML::Value << c.path.length;
  e << YAML::Key << "spacing" << YAML::Value << c.path.spacing;
  e << YAML::EndMap;

  e << YAML::Key << "vehicle" << YAML::Value << YAML::BeginMap;
  e << YAML::Key << "tractor_wheelbase" << YAML::Value << c.geometry.tractor_wheelbase;
  e << YAML::Key << "trailer_length" << YAML::Value << c.geometry.trailer_length;
  e << YAML::Key << "hitch_offset" << YAML::Value << c.geometry.hitch_offset;
  e << YAML::Key << "drawbar_length" << YAML::Value << c.geometry.drawbar_length;
  e << YAML::EndMap;

  e << YAML::Key << "controller" << YAML::Value << YAML::BeginMap;
  e << YAML::Key << "mode" << YAML::Value << c.mode_name();
  e << YAML::Key << "horizon" << YAML::Value << c.nmpc.horizon;
  e << YAML::Key << "Q" << YAML::Value;
  vec(q);
  e << YAML::Key << "R" << YAML::Value << c.nmpc.weights.R;
  e << YAML::Key << "S" << YAML::Value;
  vec(s);
  e << YAML::Key << "tube_gain" << YAML::Value;
  vec(k);
  e << YAML::Key << "lookahead" << YAML::Value << c.lookahead.lookahead;
  e << YAML::Key << "lookahead_per_mps" << YAML::Value << c.lookahead.lookahead_per_mps;
  e << YAML::Key << "reference_speed" << YAML::Value << c.lookahead.v_ref;
  e << YAML::Key << "search_window" << YAML::Value << c.lookahead.search_window;
  e << YAML::Key << "tractor_limit_deg" << YAML::Value << rad2deg(c.nmpc.limits.tractor);
  e << YAML::Key << "trailer_limit_deg" << YAML::Value << rad2deg(c.nmpc.limits.trailer);
  e << YAML::EndMap;

  e << YAML::Key << "estimator" << YAML::Value << YAML::BeginMap;
  e << YAML::Key << "kind" << YAML::Value << to_string(c.estimator);
  e << YAML::Key << "window" << YAML::Value << c.nmhe.window;
  e << YAML::Key << "hitch_model" << YAML::Value << to_string(c.nmhe.hitch_model);
  e << YAML::Key << "steering_pairing" << YAML::Value << to_string(c.nmhe.steering_pairing);
  e << YAML::Key << "measurement_sd" << YAML::Value;
  vec(c.nmhe.measurement_sd);
  e << YAML::Key << "state_process_sd" << YAML::Value;
  vec(c.nmhe.state_process_sd);
  e << YAML::Key << "param_process_sd" << YAML::Value;
  vec(c.nmhe.param_process_sd);
  e << YAML::Key << "param_min" << YAML::Value << c.nmhe.param_min;
  e << YAML::Key << "param_max" << YAML::Value << c.nmhe.param_max;
  e << YAML::Key << "initial_param" << YAML::Value << c.nmhe.initial_param;
  e << YAML::Key << "initial_information" << YAML::Value << c.nmhe.initial_information;
  e << YAML::Key << "arrival_cost" << YAML::Value << c.nmhe.arrival_cost;
  e << YAML::EndMap;

  e << YAML::Key << "plant" << YAML::Value << YAML::BeginMap;
  e << YAML::Key << "substeps" << YAML::Value << c.plant.substeps;
  e << YAML::Key << "steering_lag" << YAML::Value << c.plant.steering_lag;
  e << YAML::Key << "speed_lag" << YAML::Value << c.plant.speed_lag;
  e << YAML::Key << "speed" << YAML::Value << c.plant.speed_command;
  e << YAML::Key << "coupling" << YAML::Value << c.plant.coupling;
  e << YAML::Key << "hitch_dynamics" << YAML::Value << c.plant.hitch_dynamics;
  e << YAML::Key << "slip" << YAML::Value;
  slip(c.slip.initial);
  if (c.slip.drop_time) {
    e << YAML::Key << "slip_drop" << YAML::Value << YAML::BeginMap;
    e << YAML::Key << "time" << YAML::Value << *c.slip.drop_time;
    e << YAML::Key << "slip" << YAML::Value;
    slip(c.slip.after);
    e << YAML::EndMap;
  }
  e << YAML::EndMap;

  e << YAML::Key << "noise" << YAML::Value << YAML::BeginMap;
  e << YAML::Key << "x_t" << YAML::Value << c.noise.x_t;
  e << YAML::Key << "y_t" << YAML::Value << c.noise.y_t;
  e << YAML::Key << "x_i" << YAML::Value << c.noise.x_i;
  e << YAML::Key << "y_i" << YAML::Value << c.noise.y_i;
  e << YAML::Key << "beta" << YAML::Value << c.noise.beta;
  e << YAML::Key << "v" << YAML::Value << c.noise.v;
  e << YAML::Key << "delta_t" << YAML::Value << c.noise.delta_t;
  e << YAML::Key << "delta_i" << YAML::Value << c.noise.delta_i;
  e << YAML::Key << "steering_resolution_deg" << YAML::Value << rad2deg(c.noise.steering_resolution);
  e << YAML::EndMap;

  e << YAML::EndMap;
  return std::string(e.c_str()) + "\n";
}

}  // namespace ttmpc
