#include "refit/dataset.hpp"

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>

#include <nlohmann/json.hpp>

#include "refit/arrayio.hpp"
#include "refit/errors.hpp"
#include "refit/rng.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace refit {

namespace {

std::string sample_name(int i) {
  std::ostringstream os;
  os << std::setw(6) << std::setfill('0') << i;
  return os.str();
}

json camera_json(const CropCamera& cc) {
  return {{"full_w", cc.full_w}, {"full_h", cc.full_h}, {"focal", cc.focal},
          {"cx", cc.cx},         {"cy", cc.cy},         {"bbox", cc.bbox},
          {"crop_res", cc.crop_res}};
}

CropCamera camera_from_json(const json& j) {
  CropCamera cc;
  cc.full_w = j.at("full_w").get<double>();
  cc.full_h = j.at("full_h").get<double>();
  cc.focal = j.at("focal").get<double>();
  cc.cx = j.at("cx").get<double>();
  cc.cy = j.at("cy").get<double>();
  cc.bbox = j.at("bbox").get<double>();
  cc.crop_res = j.at("crop_res").get<int>();
  return cc;
}

json mat_json(const MatX& m) {
  json rows = json::array();
  for (int i = 0; i < m.rows(); ++i) {
    json row = json::array();
    for (int j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(row);
  }
  return rows;
}

MatX mat_from_json(const json& j) {
  const int r = static_cast<int>(j.size());
  const int c = r > 0 ? static_cast<int>(j[0].size()) : 0;
  MatX m(r, c);
  for (int i = 0; i < r; ++i)
    for (int k = 0; k < c; ++k) m(i, k) = j[static_cast<size_t>(i)][static_cast<size_t>(k)].get<double>();
  return m;
}

void save_sample(const Sample& s, const std::string& dir) {
  ArrayF32 img;
  img.shape = {3, s.camera.crop_res, s.camera.crop_res};
  img.data = s.image;
  json meta;
  meta["pose"] = mat_json(s.gt_params.pose);
  meta["shape"] = std::vector<double>(s.gt_params.shape.data(),
                                      s.gt_params.shape.data() + s.gt_params.shape.size());
  meta["cam"] = {s.gt_params.cam[0], s.gt_params.cam[1], s.gt_params.cam[2]};
  meta["t_full"] = {s.gt_t_full[0], s.gt_t_full[1], s.gt_t_full[2]};
  meta["joints_3d"] = mat_json(s.gt_joints_3d);
  meta["joints_2d_full"] = mat_json(s.gt_joints_2d_full);
  meta["camera"] = camera_json(s.camera);
  meta["view_id"] = s.view_id;
  meta["subject_id"] = s.subject_id;
  save_array_dir(dir, {{"image", std::move(img)}}, meta);
}

Sample load_sample(const std::string& dir) {
  json meta;
  ArrayMap arrays = load_array_dir(dir, &meta);
  auto it = arrays.find("image");
  if (it == arrays.end()) throw DataError("sample missing image array: " + dir);
  Sample s;
  s.image = std::move(it->second.data);
  MatX pose = mat_from_json(meta.at("pose"));
  s.gt_params.pose = pose;
  const auto shape = meta.at("shape").get<std::vector<double>>();
  s.gt_params.shape = Eigen::Map<const VecX>(shape.data(), static_cast<int64_t>(shape.size()));
  const auto cam = meta.at("cam").get<std::vector<double>>();
  s.gt_params.cam = Vec3(cam[0], cam[1], cam[2]);
  const auto tf = meta.at("t_full").get<std::vector<double>>();
  s.gt_t_full = Vec3(tf[0], tf[1], tf[2]);
  s.gt_joints_3d = mat_from_json(meta.at("joints_3d"));
  s.gt_joints_2d_full = mat_from_json(meta.at("joints_2d_full"));
  s.camera = camera_from_json(meta.at("camera"));
  s.view_id = meta.at("view_id").get<int>();
  s.subject_id = meta.at("subject_id").get<int>();
  if (static_cast<int>(s.image.size()) != 3 * s.camera.crop_res * s.camera.crop_res)
    throw DataError("sample image size mismatch: " + dir);
  return s;
}

}  // namespace

Dataset generate_dataset(const Config& cfg, std::ostream* log) {
  Dataset out;
  out.gen_config = cfg;
  out.model = build_default_model(static_cast<uint64_t>(cfg.get_int("model.seed")),
                                  static_cast<int>(cfg.get_int("model.joints")),
                                  static_cast<int>(cfg.get_int("model.shape_basis")));
  const GenConfig gc = GenConfig::from(cfg);
  const int count = static_cast<int>(cfg.get_int("gen.count"));
  const int views = static_cast<int>(cfg.get_int("gen.views"));
  const uint64_t seed = static_cast<uint64_t>(cfg.get_int("gen.seed"));
  if (count < 1 || views < 1) throw InvalidConfig("gen.count and gen.views must be >= 1");

  for (int i = 0; i < count; ++i) {
    if (views == 1) {
      Sample s = sample_scene(Rng::mix(seed, static_cast<uint64_t>(i)), out.model, gc);
      s.subject_id = i;
      out.samples.push_back(std::move(s));
    } else {
      MultiViewScene scene =
          multiview_scene(Rng::mix(seed, static_cast<uint64_t>(i)), out.model, views, gc);
      std::vector<int> idx;
      for (auto& v : scene.views) {
        v.subject_id = i;
        idx.push_back(static_cast<int>(out.samples.size()));
        out.samples.push_back(std::move(v));
      }
      out.scenes.push_back(std::move(idx));
      out.scene_extrinsics.push_back(std::move(scene.extrinsics));
    }
    if (log && ((i + 1) % 1000 == 0 || i + 1 == count))
      (*log) << "generated " << (i + 1) << "/" << count << "\n" << std::flush;
  }
  return out;
}

void save_dataset(const Dataset& data, const std::string& dir) {
  fs::create_directories(dir);
  save_model(data.model, dir + "/model");

  json manifest;
  manifest["kind"] = "dataset";
  manifest["config"] = data.gen_config.to_json();
  manifest["count"] = data.samples.size();
  json names = json::array();
  for (size_t i = 0; i < data.samples.size(); ++i) {
    const std::string name = "samples/" + sample_name(static_cast<int>(i));
    save_sample(data.samples[i], dir + "/" + name);
    names.push_back(name);
  }
  manifest["samples"] = names;
  if (data.multiview()) {
    manifest["scenes"] = data.scenes;
    for (size_t sc = 0; sc < data.scenes.size(); ++sc) {
      json calib;
      calib["kind"] = "calibration";
      json views = json::array();
      for (size_t v = 0; v < data.scene_extrinsics[sc].size(); ++v) {
        const auto& e = data.scene_extrinsics[sc][v];
        const Sample& s = data.samples[static_cast<size_t>(data.scenes[sc][v])];
        json jv;
        jv["focal"] = s.camera.focal;
        jv["full_w"] = s.camera.full_w;
        jv["full_h"] = s.camera.full_h;
        std::vector<double> r9;
        for (int i = 0; i < 3; ++i)
          for (int j = 0; j < 3; ++j) r9.push_back(e.rot(i, j));
        jv["R"] = r9;
        jv["t"] = {e.t[0], e.t[1], e.t[2]};
        views.push_back(jv);
      }
      calib["views"] = views;
      const fs::path p = fs::path(dir) / "scenes" / sample_name(static_cast<int>(sc));
      fs::create_directories(p);
      std::ofstream f(p / "calib.json");
      f << calib.dump(2) << "\n";
    }
  }
  std::ofstream mf(fs::path(dir) / "manifest.json");
  if (!mf) throw DataError("cannot write dataset manifest in " + dir);
  mf << manifest.dump(2) << "\n";
}

Dataset load_dataset(const std::string& dir) {
  std::ifstream mf(fs::path(dir) / "manifest.json");
  if (!mf) throw DataError("cannot read dataset manifest in " + dir);
  json manifest;
  try {
    mf >> manifest;
  } catch (const std::exception& e) {
    throw DataError("malformed dataset manifest in " + dir + ": " + e.what());
  }
  Dataset out;
  out.gen_config.apply_json(manifest.at("config"));
  out.model = load_model(dir + "/model");
  for (const auto& name : manifest.at("samples"))
    out.samples.push_back(load_sample(dir + "/" + name.get<std::string>()));
  if (manifest.contains("scenes")) {
    out.scenes = manifest["scenes"].get<std::vector<std::vector<int>>>();
    for (size_t sc = 0; sc < out.scenes.size(); ++sc) {
      const fs::path p = fs::path(dir) / "scenes" / sample_name(static_cast<int>(sc)) / "calib.json";
      std::ifstream cf(p);
      if (!cf) throw DataError("cannot read calibration file: " + p.string());
      json calib;
      cf >> calib;
      std::vector<ViewExtrinsic> exts;
      for (const auto& jv : calib.at("views")) {
        ViewExtrinsic e;
        const auto r9 = jv.at("R").get<std::vector<double>>();
        for (int i = 0; i < 3; ++i)
          for (int j = 0; j < 3; ++j) e.rot(i, j) = r9[static_cast<size_t>(3 * i + j)];
        const auto tv = jv.at("t").get<std::vector<double>>();
        e.t = Vec3(tv[0], tv[1], tv[2]);
        exts.push_back(e);
      }
      out.scene_extrinsics.push_back(std::move(exts));
    }
  }
  return out;
}

}  // namespace refit
