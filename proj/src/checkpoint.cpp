#include "refit/checkpoint.hpp"

#include <filesystem>
#include <fstream>

#include <nlohmann/json.hpp>

#include "refit/arrayio.hpp"
#include "refit/errors.hpp"

namespace refit {

void save_checkpoint(const std::string& dir, const Nets& nets, const Config& cfg,
                     int64_t iterations) {
  ArrayMap arrays;
  for (const auto& p : nets.params.all()) {
    arrays[p->name] = to_f32({p->shape.begin(), p->shape.end()}, p->val.data());
    if (!p->m.empty()) {
      arrays["adam_m." + p->name] = to_f32({p->shape.begin(), p->shape.end()}, p->m.data());
      arrays["adam_v." + p->name] = to_f32({p->shape.begin(), p->shape.end()}, p->v.data());
    }
  }
  nlohmann::json meta;
  meta["kind"] = "checkpoint";
  meta["format_version"] = 1;
  meta["iterations"] = iterations;
  meta["config"] = cfg.to_json();
  meta["seeds"] = {{"train", cfg.get_str("train.seed")},
                   {"gen", cfg.get_str("gen.seed")},
                   {"model", cfg.get_str("model.seed")}};
  save_array_dir(dir, arrays, meta, "manifest.json");
}

Config checkpoint_config(const std::string& dir) {
  const std::string mf = dir + "/manifest.json";
  if (!std::filesystem::exists(mf)) throw MissingCheckpoint("no checkpoint at " + dir);
  std::ifstream f(mf);
  nlohmann::json meta;
  f >> meta;
  Config cfg;
  cfg.apply_json(meta.at("config"));
  return cfg;
}

int64_t load_checkpoint(const std::string& dir, Nets* nets) {
  if (!std::filesystem::exists(dir + "/manifest.json"))
    throw MissingCheckpoint("no checkpoint at " + dir);
  nlohmann::json meta;
  ArrayMap arrays = load_array_dir(dir, &meta, "manifest.json");
  for (const auto& p : nets->params.all()) {
    auto it = arrays.find(p->name);
    if (it == arrays.end()) throw MissingCheckpoint("checkpoint missing array: " + p->name);
    if (it->second.size() != p->size())
      throw ShapeMismatch("checkpoint array size mismatch: " + p->name);
    for (int64_t i = 0; i < p->size(); ++i) p->val[static_cast<size_t>(i)] = it->second.data[static_cast<size_t>(i)];
    auto im = arrays.find("adam_m." + p->name);
    auto iv = arrays.find("adam_v." + p->name);
    if (im != arrays.end() && iv != arrays.end()) {
      p->m = to_f64(im->second);
      p->v = to_f64(iv->second);
    }
  }
  return meta.at("iterations").get<int64_t>();
}

}  // namespace refit
