#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "refit/applications.hpp"
#include "refit/checkpoint.hpp"
#include "refit/dataset.hpp"
#include "refit/errors.hpp"
#include "refit/evalkit.hpp"
#include "refit/render_out.hpp"
#include "refit/train.hpp"

namespace fs = std::filesystem;
using namespace refit;

namespace {

// Every config key doubles as a --key=value flag; flags win over the file.
void add_config_flags(CLI::App* app, std::shared_ptr<Config> cfg,
                      std::shared_ptr<std::string> cfg_file) {
  app->add_option("--config", *cfg_file, "config file (key = value lines)");
  for (const auto& spec : Config::registry()) {
    app->add_option_function<std::string>(
        "--" + spec.key, [cfg, key = spec.key](const std::string& v) { cfg->set(key, v); },
        spec.help);
  }
}

struct LoadedNets {
  Config cfg;
  BodyModelDef model;
  std::unique_ptr<DiffModel> dm;
  std::unique_ptr<Nets> nets;
  int64_t iterations = 0;
};

LoadedNets load_nets(const std::string& ckpt_dir) {
  LoadedNets out;
  out.cfg = checkpoint_config(ckpt_dir);
  out.model = build_default_model(static_cast<uint64_t>(out.cfg.get_int("model.seed")),
                                  static_cast<int>(out.cfg.get_int("model.joints")),
                                  static_cast<int>(out.cfg.get_int("model.shape_basis")));
  out.dm = std::make_unique<DiffModel>(out.model, out.cfg.get_str("model.keypoints"));
  out.nets = std::make_unique<Nets>(out.cfg, out.dm->keypoint_count(),
                                    static_cast<uint64_t>(out.cfg.get_int("train.seed")));
  out.iterations = load_checkpoint(ckpt_dir, out.nets.get());
  return out;
}

void check_data_compat(const Config& ckpt_cfg, const Dataset& data) {
  for (const char* key : {"model.seed", "model.joints", "model.shape_basis"}) {
    if (ckpt_cfg.get_str(key) != data.gen_config.get_str(key))
      throw ShapeMismatch(std::string("checkpoint/dataset config drift on ") + key + ": " +
                          ckpt_cfg.get_str(key) + " vs " + data.gen_config.get_str(key));
  }
  if (ckpt_cfg.get_int("cam.crop_res") != data.gen_config.get_int("cam.crop_res"))
    throw ShapeMismatch("checkpoint/dataset crop_res drift");
}

int cmd_gen(const Config& cfg, const std::string& out_dir) {
  Dataset data = generate_dataset(cfg, &std::cout);
  save_dataset(data, out_dir);
  std::cout << "wrote " << data.samples.size() << " samples to " << out_dir << "\n";
  return 0;
}

int cmd_train(Config cfg, const std::string& data_dir, const std::string& out_ckpt,
              const std::string& resume) {
  Dataset data = load_dataset(data_dir);
  // Model geometry comes from the dataset; keep the snapshot consistent.
  for (const char* key : {"model.seed", "model.joints", "model.shape_basis", "cam.crop_res"})
    cfg.set(key, data.gen_config.get_str(key));
  DiffModel dm(data.model, cfg.get_str("model.keypoints"));
  Nets nets(cfg, dm.keypoint_count(), static_cast<uint64_t>(cfg.get_int("train.seed")));
  int64_t start_iter = 0;
  if (!resume.empty()) {
    const Config rc = checkpoint_config(resume);
    check_data_compat(rc, data);
    start_iter = load_checkpoint(resume, &nets);
    std::cout << "resuming from " << resume << " at iteration " << start_iter << "\n";
  }
  auto snapshot = [&](int64_t iter) { save_checkpoint(out_ckpt, nets, cfg, iter); };
  TrainStats stats = train_loop(cfg, nets, dm, data.samples, start_iter, &std::cout, snapshot);
  save_checkpoint(out_ckpt, nets, cfg, stats.iterations);
  std::cout << "checkpoint written to " << out_ckpt << "\n";
  return 0;
}

int cmd_eval(const Config& cli_cfg, const std::string& ckpt, const std::string& data_dir,
             const std::string& out_dir, int overlays) {
  LoadedNets ln = load_nets(ckpt);
  Dataset data = load_dataset(data_dir);
  check_data_compat(ln.cfg, data);
  EvalOptions opt;
  opt.steps = static_cast<int>(cli_cfg.get_int("infer.steps"));
  opt.camera_mode = ln.cfg.get_str("cam.mode");
  EvalReport report = evaluate_dataset(data, *ln.dm, *ln.nets, opt);
  write_report(out_dir, report, "eval T=" + std::to_string(opt.steps));
  std::cout << "samples " << report.count() << " mpjpe " << report.mean_mpjpe << "mm pa-mpjpe "
            << report.mean_pa_mpjpe << "mm pve " << report.mean_pve << "mm\n";
  for (const auto& [p, v] : report.percentiles)
    std::cout << "  p" << p << " mpjpe " << v << "mm\n";

  for (int i = 0; i < overlays && i < static_cast<int>(data.samples.size()); ++i) {
    const Sample& s = data.samples[static_cast<size_t>(i)];
    FitOptions fo;
    fo.steps = opt.steps;
    fo.camera_mode = opt.camera_mode;
    FitTrajectory traj = refit::refit(s, *ln.dm, *ln.nets, fo, false);
    for (size_t st = 0; st < traj.params_seq.size(); ++st) {
      const auto img = overlay_wireframe(s.image, s.camera.crop_res, data.model,
                                         traj.params_seq[st], s.camera);
      char name[64];
      std::snprintf(name, sizeof(name), "overlay_%04d_t%02zu.ppm", i, st);
      write_ppm(out_dir + "/" + name, img, s.camera.crop_res);
    }
  }
  return 0;
}

int cmd_infer(const Config& cli_cfg, const std::string& ckpt, const std::string& data_dir,
              const std::string& out_dir, int index) {
  LoadedNets ln = load_nets(ckpt);
  Dataset data = load_dataset(data_dir);
  check_data_compat(ln.cfg, data);
  if (index < 0 || index >= static_cast<int>(data.samples.size()))
    throw DataError("sample index out of range");
  const Sample& s = data.samples[static_cast<size_t>(index)];
  FitOptions fo;
  fo.steps = static_cast<int>(cli_cfg.get_int("infer.steps"));
  fo.camera_mode = ln.cfg.get_str("cam.mode");
  FitTrajectory traj = refit::refit(s, *ln.dm, *ln.nets, fo, true);
  fs::create_directories(out_dir);
  nlohmann::json j;
  j["steps"] = fo.steps;
  j["residual_2d"] = traj.residual_2d;
  const VecX flat = traj.final_params().flat();
  j["theta"] = std::vector<double>(flat.data(), flat.data() + flat.size());
  std::ofstream f(out_dir + "/fit.json");
  f << j.dump(2) << "\n";
  const auto img =
      overlay_wireframe(s.image, s.camera.crop_res, data.model, traj.final_params(), s.camera);
  write_ppm(out_dir + "/overlay.ppm", img, s.camera.crop_res);
  std::cout << "final 2d residual " << (traj.residual_2d.empty() ? 0.0 : traj.residual_2d.back())
            << "\n";
  return 0;
}

int cmd_multiview(const Config& cli_cfg, const std::string& ckpt, const std::string& data_dir,
                  const std::string& out_dir) {
  LoadedNets ln = load_nets(ckpt);
  Dataset data = load_dataset(data_dir);
  check_data_compat(ln.cfg, data);
  if (!data.multiview()) throw DataError("multiview: dataset has no scenes");
  const int steps = static_cast<int>(cli_cfg.get_int("infer.steps"));

  std::vector<double> pa_mv, pa_avg, pa_single;
  for (size_t sc = 0; sc < data.scenes.size(); ++sc) {
    ViewBundle bundle;
    for (int idx : data.scenes[sc]) bundle.views.push_back(&data.samples[static_cast<size_t>(idx)]);
    bundle.extrinsics = data.scene_extrinsics[sc];

    MultiViewResult mv = multiview_refit(bundle, *ln.dm, *ln.nets, steps);
    WorldBody avg = refit_plus_average(bundle, *ln.dm, *ln.nets, steps);

    // World-frame ground truth from view 0.
    const Sample& v0 = *bundle.views[0];
    BodyParams gt_world = v0.gt_params;
    gt_world.pose.row(0) =
        matrix_to_rot6d(bundle.extrinsics[0].rot.transpose() *
                        rot6d_to_matrix(v0.gt_params.pose.row(0).transpose()))
            .transpose();
    const FkResult gt_fk = forward_kinematics(data.model, gt_world, "semantic");
    const FkResult mv_fk = forward_kinematics(data.model, mv.world.params, "semantic");
    const FkResult avg_fk = forward_kinematics(data.model, avg.params, "semantic");
    pa_mv.push_back(pa_mpjpe_mm(mv_fk.joints, gt_fk.joints));
    pa_avg.push_back(pa_mpjpe_mm(avg_fk.joints, gt_fk.joints));

    FitOptions fo;
    fo.steps = steps;
    double acc = 0;
    for (const Sample* v : bundle.views) {
      FitTrajectory traj = refit::refit(*v, *ln.dm, *ln.nets, fo, false);
      const FkResult fk = forward_kinematics(data.model, traj.final_params(), "semantic");
      const FkResult gfk = forward_kinematics(data.model, v->gt_params, "semantic");
      acc += pa_mpjpe_mm(fk.joints, gfk.joints);
    }
    pa_single.push_back(acc / bundle.view_count());
  }
  auto mean = [](const std::vector<double>& v) {
    double a = 0;
    for (double x : v) a += x;
    return v.empty() ? 0.0 : a / static_cast<double>(v.size());
  };
  fs::create_directories(out_dir);
  nlohmann::json j;
  j["scenes"] = data.scenes.size();
  j["steps"] = steps;
  j["pa_mpjpe_multiview_mm"] = mean(pa_mv);
  j["pa_mpjpe_refit_plus_avg_mm"] = mean(pa_avg);
  j["pa_mpjpe_per_view_mm"] = mean(pa_single);
  std::ofstream f(out_dir + "/multiview.json");
  f << j.dump(2) << "\n";
  std::cout << "multiview " << mean(pa_mv) << "mm  refit+avg " << mean(pa_avg) << "mm  per-view "
            << mean(pa_single) << "mm (PA-MPJPE over " << data.scenes.size() << " scenes)\n";
  return 0;
}

int cmd_shapefit(const Config& cli_cfg, const std::string& ckpt, const std::string& data_dir,
                 const std::string& out_dir) {
  LoadedNets ln = load_nets(ckpt);
  Dataset data = load_dataset(data_dir);
  check_data_compat(ln.cfg, data);
  const int steps = static_cast<int>(cli_cfg.get_int("infer.steps"));
  std::vector<double> m_shape, m_plain;
  for (const auto& s : data.samples) {
    FitTrajectory fixed = shape_refit(s, *ln.dm, *ln.nets, s.gt_params.shape, steps);
    FitOptions fo;
    fo.steps = steps;
    FitTrajectory plain = refit::refit(s, *ln.dm, *ln.nets, fo, false);
    auto joints_of = [&](const BodyParams& p) {
      FkResult fk = forward_kinematics(data.model, p, "semantic");
      MatX j = fk.joints;
      j.rowwise() += weak_to_full_translation(p.cam, s.camera).transpose();
      return j;
    };
    m_shape.push_back(mpjpe_mm(joints_of(fixed.final_params()), s.gt_joints_3d));
    m_plain.push_back(mpjpe_mm(joints_of(plain.final_params()), s.gt_joints_3d));
  }
  auto mean = [](const std::vector<double>& v) {
    double a = 0;
    for (double x : v) a += x;
    return v.empty() ? 0.0 : a / static_cast<double>(v.size());
  };
  fs::create_directories(out_dir);
  nlohmann::json j;
  j["count"] = data.samples.size();
  j["steps"] = steps;
  j["mpjpe_shape_refit_mm"] = mean(m_shape);
  j["mpjpe_refit_mm"] = mean(m_plain);
  std::ofstream f(out_dir + "/shapefit.json");
  f << j.dump(2) << "\n";
  std::cout << "shape refit " << mean(m_shape) << "mm vs refit " << mean(m_plain) << "mm (MPJPE)\n";
  return 0;
}

int cmd_ablate(const std::string& grid_file, const std::string& data_dir,
               const std::string& out_file) {
  std::ifstream f(grid_file);
  if (!f) throw DataError("cannot read ablation grid: " + grid_file);
  nlohmann::json grid_j;
  f >> grid_j;
  std::vector<AblationRow> grid;
  for (const auto& row : grid_j) {
    AblationRow r;
    r.name = row.at("name").get<std::string>();
    r.checkpoint_dir = row.at("checkpoint").get<std::string>();
    if (row.contains("overrides"))
      for (const auto& [k, v] : row["overrides"].items())
        r.overrides.emplace_back(k, v.get<std::string>());
    grid.push_back(std::move(r));
  }
  Dataset data = load_dataset(data_dir);
  AblationTable table = run_ablation(grid, data);
  write_ablation_table(out_file, table);
  for (size_t i = 0; i < table.names.size(); ++i)
    std::cout << table.names[i] << "\tmpjpe " << table.reports[i].mean_mpjpe << "mm\tpa "
              << table.reports[i].mean_pa_mpjpe << "mm\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"recurrent fitting for articulated body models"};
  app.require_subcommand(1);

  auto cfg = std::make_shared<Config>();
  auto cfg_file = std::make_shared<std::string>();
  std::string data_dir, out_dir, ckpt, resume, grid_file;
  int sample_index = 0;

  auto* gen = app.add_subcommand("gen", "generate a synthetic dataset");
  add_config_flags(gen, cfg, cfg_file);
  gen->add_option("--out", out_dir, "output dataset directory")->required();

  auto* train = app.add_subcommand("train", "train on a generated dataset");
  add_config_flags(train, cfg, cfg_file);
  train->add_option("--data", data_dir, "dataset directory")->required();
  train->add_option("--out", out_dir, "output checkpoint directory")->required();
  train->add_option("--resume", resume, "checkpoint to resume from");

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint");
  add_config_flags(eval, cfg, cfg_file);
  eval->add_option("--ckpt", ckpt, "checkpoint directory")->required();
  eval->add_option("--data", data_dir, "dataset directory")->required();
  eval->add_option("--out", out_dir, "report directory")->required();

  auto* infer = app.add_subcommand("infer", "fit one sample and render the trajectory");
  add_config_flags(infer, cfg, cfg_file);
  infer->add_option("--ckpt", ckpt)->required();
  infer->add_option("--data", data_dir)->required();
  infer->add_option("--out", out_dir)->required();
  infer->add_option("--index", sample_index, "sample index");

  auto* mview = app.add_subcommand("multiview", "cross-view fitting on calibrated scenes");
  add_config_flags(mview, cfg, cfg_file);
  mview->add_option("--ckpt", ckpt)->required();
  mview->add_option("--data", data_dir)->required();
  mview->add_option("--out", out_dir)->required();

  auto* sfit = app.add_subcommand("shapefit", "fitting with the true shape pinned");
  add_config_flags(sfit, cfg, cfg_file);
  sfit->add_option("--ckpt", ckpt)->required();
  sfit->add_option("--data", data_dir)->required();
  sfit->add_option("--out", out_dir)->required();

  auto* ablate = app.add_subcommand("ablate", "evaluate a grid of checkpoints");
  ablate->add_option("--grid", grid_file, "JSON grid of {name, checkpoint, overrides}")->required();
  ablate->add_option("--data", data_dir)->required();
  ablate->add_option("--out", out_dir, "output table path")->required();

  try {
    // First pass parse to capture --config, then apply file + replay flags.
    app.parse(argc, argv);
    if (!cfg_file->empty()) {
      Config merged;
      merged.load_file(*cfg_file);
      // flags already in cfg: overlay them on the file values
      for (const auto& [k, v] : cfg->overrides()) merged.set(k, v);
      *cfg = merged;
    }

    if (gen->parsed()) return cmd_gen(*cfg, out_dir);
    if (train->parsed()) return cmd_train(*cfg, data_dir, out_dir, resume);
    if (eval->parsed()) return cmd_eval(*cfg, ckpt, data_dir, out_dir,
                                        static_cast<int>(cfg->get_int("infer.overlays")));
    if (infer->parsed()) return cmd_infer(*cfg, ckpt, data_dir, out_dir, sample_index);
    if (mview->parsed()) return cmd_multiview(*cfg, ckpt, data_dir, out_dir);
    if (sfit->parsed()) return cmd_shapefit(*cfg, ckpt, data_dir, out_dir);
    if (ablate->parsed()) return cmd_ablate(grid_file, data_dir, out_dir);
    return 2;
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 3;
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
