#pragma once

// Run configuration: one INI file with [simulator], [layer1]..[layerN],
// [controller] and [experiment] sections. Every key is optional; missing keys
// keep their defaults. Layer sections, when present, replace the whole stack.

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <algorithm>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "needlesim/controllers.hpp"
#include "needlesim/errors.hpp"
#include "needlesim/experiments.hpp"
#include "needlesim/insertion.hpp"
#include "needlesim/text.hpp"

namespace needlesim {

struct ExperimentConfig {
  std::vector<int> targets{1, 2, 3, 4, 12, 11, 5, 6, 10, 7, 8, 9};
  std::vector<TaskKind> tasks{TaskKind::PathFollowing, TaskKind::PointStabilization};
  bool data_driven = true;
  std::vector<double> scales{1.5, 0.5};  // one mechanics strategy per entry
  std::string output_dir = "out";

  friend bool operator==(const ExperimentConfig&, const ExperimentConfig&) = default;
};

struct RunConfiguration {
  SimConfig simulator;
  ControllerConfig controller;
  Strategy strategy;  // used by single runs
  ExperimentConfig experiment;

  friend bool operator==(const RunConfiguration&, const RunConfiguration&) = default;
};

inline TaskKind parse_task(std::string_view s) {
  if (s == "path") return TaskKind::PathFollowing;
  if (s == "point") return TaskKind::PointStabilization;
  throw ConfigError("unknown task '" + std::string(s) + "' (expected path or point)");
}

inline StrategyKind parse_strategy(std::string_view s) {
  if (s == "data") return StrategyKind::DataDriven;
  if (s == "mech") return StrategyKind::MechanicsBased;
  throw ConfigError("unknown strategy '" + std::string(s) + "' (expected data or mech)");
}

inline void validate(const ExperimentConfig& e) {
  for (int n : e.targets) find_target(n);
  for (double s : e.scales)
    if (!(s > 0.0)) throw ConfigError("model scales must be positive");
  if (e.targets.empty()) throw ConfigError("experiment needs at least one target");
  if (e.tasks.empty()) throw ConfigError("experiment needs at least one task");
  if (!e.data_driven && e.scales.empty()) throw ConfigError("experiment needs at least one strategy");
}

inline void validate(const RunConfiguration& c) {
  validate(c.simulator);
  validate(c.controller);
  if (!(c.strategy.model_scale > 0.0)) throw ConfigError("model scale must be positive");
  validate(c.experiment);
}

inline StudyMatrix study_matrix(const ExperimentConfig& e) {
  StudyMatrix m;
  m.targets.clear();
  for (int n : e.targets) m.targets.push_back(find_target(n));
  m.tasks = e.tasks;
  m.strategies.clear();
  if (e.data_driven) m.strategies.push_back(Strategy::data_driven());
  for (double s : e.scales) m.strategies.push_back(Strategy::mechanics(s));
  return m;
}

namespace detail {

using boost::property_tree::ptree;

inline std::string vec3_text(const Vec3& v) {
  return format_number(v[0]) + "," + format_number(v[1]) + "," + format_number(v[2]);
}

inline Vec3 parse_vec3(const std::string& text) {
  const auto items = split_list(text);
  if (items.size() != 3) throw ConfigError("expected three comma-separated numbers: '" + text + "'");
  return {parse_number(items[0]), parse_number(items[1]), parse_number(items[2])};
}

inline std::vector<double> parse_numbers(const std::string& text) {
  std::vector<double> out;
  for (const auto& s : split_list(text)) out.push_back(parse_number(s));
  return out;
}

// Reads each known key of one section through its setter and rejects the rest.
inline void read_section(const ptree& section, const std::string& name,
                         const std::map<std::string, std::function<void(const std::string&)>>& keys) {
  for (const auto& [key, value] : section) {
    auto it = keys.find(key);
    if (it == keys.end()) throw ConfigError("unknown key '" + key + "' in [" + name + "]");
    try {
      it->second(value.data());
    } catch (const ConfigError& e) {
      throw ConfigError("[" + name + "] " + key + ": " + e.what());
    }
  }
}

}  // namespace detail

inline std::string to_ini(const RunConfiguration& c) {
  using detail::ptree;
  ptree root;
  const auto num = [](double v) { return format_number(v); };

  ptree sim;
  const SimConfig& s = c.simulator;
  sim.put("needle_length", num(s.needle.length));
  sim.put("flexural_rigidity", num(s.needle.flexural_rigidity));
  sim.put("element_length", num(s.needle.element_length));
  sim.put("needle_diameter", num(s.needle.diameter));
  sim.put("bevel_offset", num(s.bevel_offset));
  sim.put("contact_width", num(s.law.contact_width));
  sim.put("lambda_min", num(s.law.lambda_min));
  sim.put("template_offset", num(s.template_offset));
  sim.put("insertion_step", num(s.insertion_step));
  sim.put("parameter_scale", join(s.parameter_scale, num));
  sim.put("newton_tolerance", num(s.solver.tolerance));
  sim.put("newton_max_iterations", std::to_string(s.solver.max_iterations));
  sim.put("newton_max_halvings", std::to_string(s.solver.max_halvings));
  sim.put("max_bisections", std::to_string(s.max_bisections));
  root.push_back({"simulator", sim});

  int i = 0;
  for (const auto& layer : s.stack.layers()) {
    ptree l;
    l.put("name", layer.name);
    l.put("mu", num(layer.mu));
    l.put("alpha", num(layer.alpha));
    l.put("thickness", num(layer.thickness));
    root.push_back({"layer" + std::to_string(++i), l});
  }

  ptree ctrl;
  const ControllerConfig& k = c.controller;
  ctrl.put("strategy", to_string(c.strategy.kind));
  ctrl.put("scale", num(c.strategy.model_scale));
  ctrl.put("gains", detail::vec3_text(k.gains));
  ctrl.put("stop_tolerance", num(k.stop_tolerance));
  ctrl.put("max_steps", std::to_string(k.max_steps));
  ctrl.put("probe_epsilon", num(k.probe_epsilon));
  ctrl.put("threshold", num(k.threshold));
  ctrl.put("threshold_data_driven", k.threshold_data_driven ? "true" : "false");
  ctrl.put("threshold_mechanics", k.threshold_mechanics ? "true" : "false");
  ctrl.put("broyden_probe_size", num(k.broyden_probe_size));
  ctrl.put("broyden_reprobe_depth", num(k.broyden_reprobe_depth));
  ctrl.put("condition_limit", num(k.condition_limit));
  root.push_back({"controller", ctrl});

  ptree exp;
  const ExperimentConfig& e = c.experiment;
  exp.put("targets", join(e.targets, [](int n) { return std::to_string(n); }));
  exp.put("tasks", join(e.tasks, [](TaskKind t) { return std::string(to_string(t)); }));
  exp.put("data_driven", e.data_driven ? "true" : "false");
  exp.put("scales", join(e.scales, num));
  exp.put("output_dir", e.output_dir);
  root.push_back({"experiment", exp});

  std::ostringstream out;
  boost::property_tree::write_ini(out, root);
  return out.str();
}

inline RunConfiguration from_ini(const std::string& text) {
  using detail::ptree;
  ptree root;
  try {
    std::istringstream in(text);
    boost::property_tree::read_ini(in, root);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw ConfigError(std::string("malformed config: ") + e.what());
  }

  RunConfiguration c;
  SimConfig& s = c.simulator;
  ControllerConfig& k = c.controller;
  ExperimentConfig& e = c.experiment;
  std::map<int, TissueLayer> layers;
  const auto to_int = [](const std::string& v) { return static_cast<int>(parse_integer(v)); };

  for (const auto& [name, section] : root) {
    if (!section.data().empty()) throw ConfigError("key '" + name + "' outside of any section");
    if (name == "simulator") {
      detail::read_section(section, name, {
          {"needle_length", [&](const std::string& v) { s.needle.length = parse_number(v); }},
          {"flexural_rigidity", [&](const std::string& v) { s.needle.flexural_rigidity = parse_number(v); }},
          {"element_length", [&](const std::string& v) { s.needle.element_length = parse_number(v); }},
          {"needle_diameter", [&](const std::string& v) { s.needle.diameter = parse_number(v); }},
          {"bevel_offset", [&](const std::string& v) { s.bevel_offset = parse_number(v); }},
          {"contact_width", [&](const std::string& v) { s.law.contact_width = parse_number(v); }},
          {"lambda_min", [&](const std::string& v) { s.law.lambda_min = parse_number(v); }},
          {"template_offset", [&](const std::string& v) { s.template_offset = parse_number(v); }},
          {"insertion_step", [&](const std::string& v) { s.insertion_step = parse_number(v); }},
          {"parameter_scale", [&](const std::string& v) { s.parameter_scale = detail::parse_numbers(v); }},
          {"newton_tolerance", [&](const std::string& v) { s.solver.tolerance = parse_number(v); }},
          {"newton_max_iterations", [&](const std::string& v) { s.solver.max_iterations = to_int(v); }},
          {"newton_max_halvings", [&](const std::string& v) { s.solver.max_halvings = to_int(v); }},
          {"max_bisections", [&](const std::string& v) { s.max_bisections = to_int(v); }},
      });
    } else if (name.rfind("layer", 0) == 0) {
      const int index = to_int(name.substr(5));
      if (index < 1 || layers.count(index)) throw ConfigError("bad or duplicate section [" + name + "]");
      TissueLayer& l = layers[index];
      detail::read_section(section, name, {
          {"name", [&](const std::string& v) { l.name = v; }},
          {"mu", [&](const std::string& v) { l.mu = parse_number(v); }},
          {"alpha", [&](const std::string& v) { l.alpha = parse_number(v); }},
          {"thickness", [&](const std::string& v) { l.thickness = parse_number(v); }},
      });
    } else if (name == "controller") {
      detail::read_section(section, name, {
          {"strategy", [&](const std::string& v) { c.strategy.kind = parse_strategy(trim(v)); }},
          {"scale", [&](const std::string& v) { c.strategy.model_scale = parse_number(v); }},
          {"gains", [&](const std::string& v) { k.gains = detail::parse_vec3(v); }},
          {"stop_tolerance", [&](const std::string& v) { k.stop_tolerance = parse_number(v); }},
          {"max_steps", [&](const std::string& v) { k.max_steps = to_int(v); }},
          {"probe_epsilon", [&](const std::string& v) { k.probe_epsilon = parse_number(v); }},
          {"threshold", [&](const std::string& v) { k.threshold = parse_number(v); }},
          {"threshold_data_driven", [&](const std::string& v) { k.threshold_data_driven = parse_bool(v); }},
          {"threshold_mechanics", [&](const std::string& v) { k.threshold_mechanics = parse_bool(v); }},
          {"broyden_probe_size", [&](const std::string& v) { k.broyden_probe_size = parse_number(v); }},
          {"broyden_reprobe_depth", [&](const std::string& v) { k.broyden_reprobe_depth = parse_number(v); }},
          {"condition_limit", [&](const std::string& v) { k.condition_limit = parse_number(v); }},
      });
    } else if (name == "experiment") {
      detail::read_section(section, name, {
          {"targets", [&](const std::string& v) {
             e.targets.clear();
             for (const auto& t : split_list(v)) e.targets.push_back(to_int(t));
           }},
          {"tasks", [&](const std::string& v) {
             e.tasks.clear();
             for (const auto& t : split_list(v)) e.tasks.push_back(parse_task(t));
           }},
          {"data_driven", [&](const std::string& v) { e.data_driven = parse_bool(v); }},
          {"scales", [&](const std::string& v) { e.scales = detail::parse_numbers(v); }},
          {"output_dir", [&](const std::string& v) { e.output_dir = std::string(trim(v)); }},
      });
    } else {
      throw ConfigError("unknown section [" + name + "]");
    }
  }

  if (!layers.empty()) {
    std::vector<TissueLayer> stack;
    int expected = 1;
    for (auto& [index, layer] : layers) {
      if (index != expected++) throw ConfigError("layer sections must be numbered 1..N without gaps");
      stack.push_back(std::move(layer));
    }
    const bool scale_given = root.get_child_optional("simulator.parameter_scale").has_value();
    s.stack = LayerStack(std::move(stack));
    if (!scale_given) s.parameter_scale.assign(s.stack.size(), 1.0);
  }
  validate(c);
  return c;
}

inline RunConfiguration load_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  std::ostringstream text;
  text << in.rdbuf();
  return from_ini(text.str());
}

inline void save_config(const RunConfiguration& c, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write config file '" + path + "'");
  out << to_ini(c);
  if (!out) throw ConfigError("failed writing config file '" + path + "'");
}

}  // namespace needlesim
