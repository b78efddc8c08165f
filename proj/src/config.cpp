#include "refit/config.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "refit/errors.hpp"

namespace refit {

const std::vector<Config::KeySpec>& Config::registry() {
  static const std::vector<KeySpec> kSpecs = {
      {"model.seed", "7", "seed for the procedural body model"},
      {"model.joints", "16", "joint count J (3..24)"},
      {"model.shape_basis", "4", "shape basis size B (1..16)"},
      {"model.keypoints", "markers", "feedback keypoint set: semantic|markers|dense"},

      {"cam.crop_res", "128", "square crop resolution in pixels (multiple of 4)"},
      {"cam.mode", "full", "reprojection camera: full|sup_only|none"},

      {"gen.seed", "1", "dataset seed"},
      {"gen.count", "1000", "number of samples (or scenes for multi-view)"},
      {"gen.views", "1", "views per scene"},
      {"gen.full_w", "640", "full-frame width in pixels"},
      {"gen.full_h", "480", "full-frame height in pixels"},
      {"gen.depth_min", "3.0", "nearest body depth in meters"},
      {"gen.depth_max", "8.0", "farthest body depth in meters"},
      {"gen.bbox_dilate", "0.10", "bbox dilation fraction"},
      {"gen.bbox_jitter", "0.0", "extra random bbox center/size jitter fraction"},
      {"gen.shape_std", "0.8", "stddev of shape coefficients"},
      {"gen.shape_clip", "2.0", "absolute clip for shape coefficients"},
      {"gen.occlusion_p", "0.0", "probability of a synthetic occluder rectangle"},
      {"gen.azimuth_jitter", "0.15", "multi-view azimuth jitter in radians"},

      {"backbone.width", "32", "stem width of the residual backbone"},
      {"backbone.blocks", "4", "residual blocks at quarter resolution"},
      {"backbone.relu_maps", "false", "apply ReLU to the keypoint feature maps"},
      {"backbone.global_dim", "256", "global feature size (matches compressed feedback)"},

      {"feedback.radius", "3", "window radius r in feature-map pixels"},
      {"feedback.dropout_p", "0.25", "per-keypoint feedback dropout probability"},
      {"feedback.per_kp", "5", "per-window compressed size"},

      {"updater.hidden", "32", "GRU hidden size M per stream"},
      {"updater.single_gru", "false", "ablation: one large GRU instead of N streams"},
      {"updater.single_hidden", "516", "hidden size of the single-GRU ablation"},

      {"loss.lambda_2d", "5.0", "weight of the 2D reprojection term"},
      {"loss.lambda_3d", "5.0", "weight of the root-aligned 3D term"},
      {"loss.lambda_params", "1.0", "weight of the parameter term (pose+shape)"},
      {"loss.gamma", "0.85", "per-iteration discount"},
      {"loss.steps", "5", "update iterations T during training"},
      {"loss.last_only", "false", "ablation: supervise only the last iteration"},

      {"train.lr", "1e-4", "Adam learning rate"},
      {"train.batch", "32", "batch size"},
      {"train.iters", "20000", "training iterations"},
      {"train.seed", "3", "training seed (batch order + dropout)"},
      {"train.log_every", "100", "iterations between log lines"},
      {"train.eval_every", "0", "iterations between held-out probes (0 = off)"},
      {"train.eval_count", "64", "samples per held-out probe"},
      {"train.save_every", "0", "iterations between checkpoint snapshots (0 = end only)"},

      {"infer.steps", "5", "update iterations T at inference"},
      {"infer.overlays", "0", "number of overlay renders to write (0 = none)"},

      {"eval.percentiles", "30,60,90,99", "percentile table for reports"},
  };
  return kSpecs;
}

namespace {
const Config::KeySpec* find_spec(const std::string& key) {
  for (const auto& s : Config::registry())
    if (s.key == key) return &s;
  return nullptr;
}

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}
}  // namespace

Config::Config() {
  for (const auto& s : registry()) values_[s.key] = s.def;
}

bool Config::has_default(const std::string& key) const { return find_spec(key) != nullptr; }

void Config::set(const std::string& key, const std::string& value) {
  if (!find_spec(key)) throw InvalidConfig("unknown config key: " + key);
  values_[key] = value;
}

std::string Config::get_str(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) throw InvalidConfig("unknown config key: " + key);
  return it->second;
}

double Config::get_double(const std::string& key) const {
  const std::string v = get_str(key);
  char* end = nullptr;
  double x = std::strtod(v.c_str(), &end);
  if (end == v.c_str() || *end != '\0')
    throw InvalidConfig("config key " + key + " is not a number: '" + v + "'");
  return x;
}

int64_t Config::get_int(const std::string& key) const {
  const double x = get_double(key);
  const int64_t i = static_cast<int64_t>(x);
  if (static_cast<double>(i) != x)
    throw InvalidConfig("config key " + key + " is not an integer: '" + get_str(key) + "'");
  return i;
}

bool Config::get_bool(const std::string& key) const {
  std::string v = get_str(key);
  std::transform(v.begin(), v.end(), v.begin(), ::tolower);
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw InvalidConfig("config key " + key + " is not a boolean: '" + v + "'");
}

void Config::load_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw InvalidConfig("cannot read config file: " + path);
  std::string line;
  int lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    const size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw InvalidConfig(path + ":" + std::to_string(lineno) + ": expected key = value");
    set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
}

nlohmann::json Config::to_json() const {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& s : registry()) j[s.key] = values_.at(s.key);
  return j;
}

void Config::apply_json(const nlohmann::json& j) {
  for (const auto& [k, v] : j.items()) set(k, v.get<std::string>());
}

std::vector<std::pair<std::string, std::string>> Config::overrides() const {
  std::vector<std::pair<std::string, std::string>> out;
  for (const auto& s : registry())
    if (values_.at(s.key) != s.def) out.emplace_back(s.key, values_.at(s.key));
  return out;
}

}  // namespace refit
