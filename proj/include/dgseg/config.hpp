#pragma once

// Flat key=value experiment configs.
//
//   # comment
//   scene.height = 96
//   train.decay_steps = 300        (comma-separated lists allowed)
//
// One file describes a whole experiment: scene.* and depth.* feed the
// generator, gen.* the dataset layout, train.* the trainer. Typos are
// errors: after binding, every key present in the file must belong to the
// known schema.

#include <cstdint>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "dgseg/errors.hpp"
#include "dgseg/scene.hpp"
#include "dgseg/trainer.hpp"

namespace dgseg {

class KeyValueConfig {
public:
  static KeyValueConfig from_string(const std::string& text, const std::string& origin = "<config>") {
    KeyValueConfig cfg;
    cfg.origin_ = origin;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      const auto hash = line.find('#');
      if (hash != std::string::npos) line.erase(hash);
      const std::string trimmed = trim(line);
      if (trimmed.empty()) continue;
      const auto eq = trimmed.find('=');
      if (eq == std::string::npos)
        throw ValidationError(origin + ":" + std::to_string(lineno) +
                              ": expected key = value");
      const std::string key = trim(trimmed.substr(0, eq));
      const std::string value = trim(trimmed.substr(eq + 1));
      if (key.empty())
        throw ValidationError(origin + ":" + std::to_string(lineno) + ": empty key");
      cfg.values_[key] = value;
    }
    return cfg;
  }

  static KeyValueConfig from_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ValidationError("cannot open config file: " + path);
    std::string text((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return from_string(text, path);
  }

  /// Applies a command-line override of the form key=value.
  void apply_override(const std::string& kv) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos || eq == 0)
      throw ValidationError("override must look like key=value: " + kv);
    values_[trim(kv.substr(0, eq))] = trim(kv.substr(eq + 1));
  }

  bool has(const std::string& key) const { return values_.count(key) > 0; }

  int get_int(const std::string& key, int def) const {
    const auto it = values_.find(key);
    if (it == values_.end()) return def;
    try {
      std::size_t pos = 0;
      const int v = std::stoi(it->second, &pos);
      if (pos != it->second.size()) throw std::invalid_argument("trailing");
      return v;
    } catch (const std::exception&) {
      throw ValidationError(origin_ + ": key '" + key + "': expected integer, got '" +
                            it->second + "'");
    }
  }

  double get_double(const std::string& key, double def) const {
    const auto it = values_.find(key);
    if (it == values_.end()) return def;
    try {
      std::size_t pos = 0;
      const double v = std::stod(it->second, &pos);
      if (pos != it->second.size()) throw std::invalid_argument("trailing");
      return v;
    } catch (const std::exception&) {
      throw ValidationError(origin_ + ": key '" + key + "': expected number, got '" +
                            it->second + "'");
    }
  }

  bool get_bool(const std::string& key, bool def) const {
    const auto it = values_.find(key);
    if (it == values_.end()) return def;
    if (it->second == "true" || it->second == "1") return true;
    if (it->second == "false" || it->second == "0") return false;
    throw ValidationError(origin_ + ": key '" + key + "': expected true/false, got '" +
                          it->second + "'");
  }

  std::uint64_t get_u64(const std::string& key, std::uint64_t def) const {
    const auto it = values_.find(key);
    if (it == values_.end()) return def;
    try {
      // stoull tolerates a sign and wraps; a seed must be a plain number.
      if (it->second.find('-') != std::string::npos)
        throw std::invalid_argument("negative");
      std::size_t pos = 0;
      const unsigned long long v = std::stoull(it->second, &pos);
      if (pos != it->second.size()) throw std::invalid_argument("trailing");
      return v;
    } catch (const std::exception&) {
      throw ValidationError(origin_ + ": key '" + key +
                            "': expected unsigned integer, got '" + it->second + "'");
    }
  }

  std::vector<int> get_int_list(const std::string& key, std::vector<int> def) const {
    const auto it = values_.find(key);
    if (it == values_.end()) return def;
    std::vector<int> out;
    std::istringstream in(it->second);
    std::string tok;
    while (std::getline(in, tok, ',')) {
      tok = trim(tok);
      if (tok.empty()) continue;
      try {
        out.push_back(std::stoi(tok));
      } catch (const std::exception&) {
        throw ValidationError(origin_ + ": key '" + key + "': expected integer list");
      }
    }
    return out;
  }

  const std::map<std::string, std::string>& raw() const { return values_; }

  /// Rejects keys outside the known schema (catches typos loudly).
  void require_known(const std::set<std::string>& known) const {
    for (const auto& [k, v] : values_)
      if (!known.count(k))
        throw ValidationError(origin_ + ": unknown config key '" + k + "'");
  }

private:
  static std::string trim(const std::string& s) {
    const auto a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    const auto b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
  }

  std::map<std::string, std::string> values_;
  std::string origin_ = "<config>";
};

inline const std::set<std::string>& known_config_keys() {
  static const std::set<std::string> keys = {
      "scene.height", "scene.width", "scene.min_objects", "scene.max_objects",
      "scene.allow_overlap", "scene.camouflage", "scene.distractors",
      "scene.color_noise", "scene.min_size_frac", "scene.max_size_frac",
      "scene.band_lo", "scene.band_hi", "scene.band_width", "scene.band_gap",
      "scene.min_visible_frac", "scene.max_retries",
      "depth.blur_radius", "depth.noise_amplitude", "depth.noise_cell", "depth.gamma",
      "gen.num_scenes", "gen.seed",
      "train.total_steps", "train.base_lr", "train.momentum", "train.decay_factor",
      "train.decay_steps", "train.distill_start", "train.gamma", "train.ema_rate",
      "train.tau_c", "train.tau_d", "train.tau_m", "train.alpha", "train.beta",
      "train.color_theta", "train.depth_sim_k", "train.pair_dilation",
      "train.region_dilate_px", "train.anchor_stride", "train.scale_min",
      "train.scale_max", "train.teacher_input_size", "train.init_weight_range",
      "train.seed", "train.threads", "train.use_depth_consistency",
      "train.use_instance_depth",
  };
  return keys;
}

inline SceneConfig scene_config_from(const KeyValueConfig& c) {
  SceneConfig s;
  s.height = c.get_int("scene.height", s.height);
  s.width = c.get_int("scene.width", s.width);
  s.min_objects = c.get_int("scene.min_objects", s.min_objects);
  s.max_objects = c.get_int("scene.max_objects", s.max_objects);
  s.allow_overlap = c.get_bool("scene.allow_overlap", s.allow_overlap);
  s.camouflage = c.get_double("scene.camouflage", s.camouflage);
  s.distractors = c.get_bool("scene.distractors", s.distractors);
  s.color_noise = c.get_double("scene.color_noise", s.color_noise);
  s.min_size_frac = c.get_double("scene.min_size_frac", s.min_size_frac);
  s.max_size_frac = c.get_double("scene.max_size_frac", s.max_size_frac);
  s.band_lo = c.get_double("scene.band_lo", s.band_lo);
  s.band_hi = c.get_double("scene.band_hi", s.band_hi);
  s.band_width = c.get_double("scene.band_width", s.band_width);
  s.band_gap = c.get_double("scene.band_gap", s.band_gap);
  s.min_visible_frac = c.get_double("scene.min_visible_frac", s.min_visible_frac);
  s.max_retries = c.get_int("scene.max_retries", s.max_retries);
  s.noise.blur_radius = c.get_double("depth.blur_radius", s.noise.blur_radius);
  s.noise.noise_amplitude = c.get_double("depth.noise_amplitude", s.noise.noise_amplitude);
  s.noise.noise_cell = c.get_int("depth.noise_cell", s.noise.noise_cell);
  s.noise.gamma = c.get_double("depth.gamma", s.noise.gamma);
  return s;
}

inline TrainConfig train_config_from(const KeyValueConfig& c) {
  TrainConfig t;
  t.total_steps = c.get_int("train.total_steps", t.total_steps);
  t.base_lr = c.get_double("train.base_lr", t.base_lr);
  t.momentum = c.get_double("train.momentum", t.momentum);
  t.decay_factor = c.get_double("train.decay_factor", t.decay_factor);
  t.decay_steps = c.get_int_list("train.decay_steps", t.decay_steps);
  t.distill_start = c.get_int("train.distill_start", t.distill_start);
  t.gamma = c.get_double("train.gamma", t.gamma);
  t.ema_rate = c.get_double("train.ema_rate", t.ema_rate);
  t.tau_c = c.get_double("train.tau_c", t.tau_c);
  t.tau_d = c.get_double("train.tau_d", t.tau_d);
  t.tau_m = c.get_double("train.tau_m", t.tau_m);
  t.alpha = c.get_double("train.alpha", t.alpha);
  t.beta = c.get_double("train.beta", t.beta);
  t.color_theta = c.get_double("train.color_theta", t.color_theta);
  t.depth_sim_k = c.get_double("train.depth_sim_k", t.depth_sim_k);
  t.pair_dilation = c.get_int("train.pair_dilation", t.pair_dilation);
  t.region_dilate_px = c.get_int("train.region_dilate_px", t.region_dilate_px);
  t.anchor_stride = c.get_int("train.anchor_stride", t.anchor_stride);
  t.scale_min = c.get_double("train.scale_min", t.scale_min);
  t.scale_max = c.get_double("train.scale_max", t.scale_max);
  t.teacher_input_size = c.get_int("train.teacher_input_size", t.teacher_input_size);
  t.init_weight_range = c.get_double("train.init_weight_range", t.init_weight_range);
  t.seed = c.get_u64("train.seed", t.seed);
  t.threads = c.get_int("train.threads", t.threads);
  t.use_depth_consistency = c.get_bool("train.use_depth_consistency", t.use_depth_consistency);
  t.use_instance_depth = c.get_bool("train.use_instance_depth", t.use_instance_depth);
  return t;
}

/// Resolved-config echoes for the run manifest.
inline nlohmann::ordered_json scene_config_json(const SceneConfig& s) {
  return {{"height", s.height},
          {"width", s.width},
          {"min_objects", s.min_objects},
          {"max_objects", s.max_objects},
          {"allow_overlap", s.allow_overlap},
          {"camouflage", s.camouflage},
          {"distractors", s.distractors},
          {"color_noise", s.color_noise},
          {"min_size_frac", s.min_size_frac},
          {"max_size_frac", s.max_size_frac},
          {"band_lo", s.band_lo},
          {"band_hi", s.band_hi},
          {"band_width", s.band_width},
          {"band_gap", s.band_gap},
          {"min_visible_frac", s.min_visible_frac},
          {"max_retries", s.max_retries},
          {"depth_blur_radius", s.noise.blur_radius},
          {"depth_noise_amplitude", s.noise.noise_amplitude},
          {"depth_noise_cell", s.noise.noise_cell},
          {"depth_gamma", s.noise.gamma}};
}

inline nlohmann::ordered_json train_config_json(const TrainConfig& t) {
  return {{"total_steps", t.total_steps},
          {"base_lr", t.base_lr},
          {"momentum", t.momentum},
          {"decay_factor", t.decay_factor},
          {"decay_steps", t.decay_steps},
          {"distill_start", t.distill_start},
          {"gamma", t.gamma},
          {"ema_rate", t.ema_rate},
          {"tau_c", t.tau_c},
          {"tau_d", t.tau_d},
          {"tau_m", t.tau_m},
          {"alpha", t.alpha},
          {"beta", t.beta},
          {"color_theta", t.color_theta},
          {"depth_sim_k", t.depth_sim_k},
          {"pair_dilation", t.pair_dilation},
          {"region_dilate_px", t.region_dilate_px},
          {"anchor_stride", t.anchor_stride},
          {"scale_min", t.scale_min},
          {"scale_max", t.scale_max},
          {"teacher_input_size", t.teacher_input_size},
          {"init_weight_range", t.init_weight_range},
          {"seed", t.seed},
          {"threads", t.threads},
          {"use_depth_consistency", t.use_depth_consistency},
          {"use_instance_depth", t.use_instance_depth}};
}

} // namespace dgseg
