// dgseg -- synthetic depth-guided box-supervised segmentation workbench.
//
// Subcommands:
//   gen        generate a synthetic dataset from a config
//   train      fit per-instance mask heads on a dataset
//   eval       score a checkpoint against ground-truth masks
//   gradcheck  verify every analytic gradient against finite differences
//   render     write visualization panels for a trained checkpoint
//
// Every run writes OUT/run_manifest.json (arguments, resolved config,
// timestamps, wall time). Data outputs (checkpoint, report.json) carry no
// timing and are byte-identical for identical inputs, whatever the thread
// count. Exit codes: 0 ok, 2 invalid input/config, 3 numeric failure;
// on failure the last stderr line is a single-line JSON error object.

#include <chrono>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "dgseg/annotations.hpp"
#include "dgseg/config.hpp"
#include "dgseg/errors.hpp"
#include "dgseg/evalmetrics.hpp"
#include "dgseg/parallel.hpp"
#include "dgseg/render.hpp"
#include "dgseg/scene.hpp"
#include "dgseg/trainer.hpp"
#include "dgseg/verification.hpp"

namespace fs = std::filesystem;
using dgseg::ordered_json;

namespace {

std::string iso_now() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  char buf[32];
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

void write_file(const fs::path& p, const std::string& text) {
  std::ofstream f(p);
  if (!f) throw dgseg::ValidationError("cannot write " + p.string());
  f << text;
  if (!f) throw dgseg::ValidationError("short write to " + p.string());
}

/// Creates OUT, enforcing the empty-or---force rule shared by all
/// subcommands.
void prepare_out_dir(const std::string& out, bool force) {
  const fs::path p(out);
  if (fs::exists(p)) {
    if (!fs::is_directory(p))
      throw dgseg::ValidationError("output path exists and is not a directory: " + out);
    if (!fs::is_empty(p) && !force)
      throw dgseg::ValidationError("output directory not empty (use --force): " + out);
  } else {
    fs::create_directories(p);
  }
}

struct Manifest {
  ordered_json j;
  fs::path path;
  std::chrono::steady_clock::time_point t0 = std::chrono::steady_clock::now();

  Manifest(const std::string& out_dir, const std::string& command, int argc,
           char** argv) {
    path = fs::path(out_dir) / "run_manifest.json";
    j["command"] = command;
    j["argv"] = ordered_json::array();
    for (int i = 0; i < argc; ++i) j["argv"].push_back(argv[i]);
    j["started_at"] = iso_now();
  }
  void flush() const { write_file(path, j.dump(2) + "\n"); }
  void finish() {
    j["finished_at"] = iso_now();
    j["wall_seconds"] =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    flush();
  }
};

dgseg::KeyValueConfig load_config(const std::string& config_path,
                                  const std::vector<std::string>& overrides) {
  dgseg::KeyValueConfig cfg = config_path.empty()
                                  ? dgseg::KeyValueConfig::from_string("", "<defaults>")
                                  : dgseg::KeyValueConfig::from_file(config_path);
  for (const std::string& kv : overrides) cfg.apply_override(kv);
  cfg.require_known(dgseg::known_config_keys());
  return cfg;
}

int resolve_threads(int flag_value, const dgseg::KeyValueConfig& cfg) {
  if (flag_value > 0) return flag_value;
  if (const char* env = std::getenv("DGSEG_THREADS")) {
    const int v = std::atoi(env);
    if (v > 0) return v;
  }
  return cfg.get_int("train.threads", 1);
}

std::string hex64(std::uint64_t v) {
  char buf[19];
  std::snprintf(buf, sizeof buf, "0x%016llx", static_cast<unsigned long long>(v));
  return buf;
}

// --- gen --------------------------------------------------------------

int cmd_gen(const std::string& config_path, const std::vector<std::string>& overrides,
            const std::string& out, std::int64_t seed_flag, int num_flag, bool force,
            int argc, char** argv) {
  const dgseg::KeyValueConfig cfg = load_config(config_path, overrides);
  dgseg::SceneConfig scfg = dgseg::scene_config_from(cfg);
  scfg.validate();
  const std::uint64_t seed =
      seed_flag >= 0 ? static_cast<std::uint64_t>(seed_flag) : cfg.get_u64("gen.seed", 7);
  const int num = num_flag > 0 ? num_flag : cfg.get_int("gen.num_scenes", 8);
  if (num < 1) throw dgseg::ValidationError("gen: num_scenes must be >= 1");

  prepare_out_dir(out, force);
  Manifest man(out, "gen", argc, argv);
  man.j["config_file"] = config_path;
  man.j["resolved_config"] = ordered_json{{"scene", dgseg::scene_config_json(scfg)},
                                          {"gen", {{"num_scenes", num}, {"seed", seed}}}};
  man.flush();

  std::vector<dgseg::Scene> scenes;
  scenes.reserve(num);
  for (int i = 0; i < num; ++i) scenes.push_back(dgseg::generate_scene(scfg, seed, i));
  dgseg::save_dataset(out, scenes, /*force=*/true); // dir already vetted above

  long ann = 0;
  for (const auto& s : scenes) ann += static_cast<long>(s.instances.size());
  std::cout << "generated " << scenes.size() << " scenes, " << ann
            << " annotated instances -> " << out << "\n";
  man.j["scenes"] = scenes.size();
  man.j["annotations"] = ann;
  man.finish();
  return 0;
}

// --- train ------------------------------------------------------------

int cmd_train(const std::string& config_path, const std::vector<std::string>& overrides,
              const std::string& data, const std::string& out,
              const std::string& resume, std::int64_t seed_flag, int threads_flag,
              int stop_after, bool force, int argc, char** argv) {
  const dgseg::KeyValueConfig cfg = load_config(config_path, overrides);
  dgseg::TrainConfig tcfg = dgseg::train_config_from(cfg);
  if (seed_flag >= 0) tcfg.seed = static_cast<std::uint64_t>(seed_flag);
  tcfg.threads = resolve_threads(threads_flag, cfg);
  tcfg.validate();

  const std::vector<dgseg::TrainScene> scenes = dgseg::load_train_scenes(data);
  if (scenes.empty()) throw dgseg::ValidationError("train: dataset has no scenes");

  prepare_out_dir(out, force);
  Manifest man(out, "train", argc, argv);
  man.j["config_file"] = config_path;
  man.j["data"] = data;
  man.j["resume"] = resume;
  man.j["stop_after"] = stop_after;
  man.j["resolved_config"] = ordered_json{{"train", dgseg::train_config_json(tcfg)}};
  man.flush();

  dgseg::TrainState state = resume.empty()
                                ? dgseg::init_train_state(scenes, tcfg)
                                : dgseg::load_checkpoint(resume, &tcfg);
  dgseg::train(scenes, tcfg, state, stop_after);
  dgseg::save_checkpoint((fs::path(out) / "checkpoint.dbck").string(), state);

  // Deterministic training report: configuration echo plus per-scene loss
  // traces. No wall time here -- that lives in the manifest. The thread
  // count is dropped too: it cannot affect results, so it has no place in
  // a result artifact.
  ordered_json rep;
  rep["config"] = dgseg::train_config_json(tcfg);
  rep["config"].erase("threads");
  rep["config_hash"] = hex64(state.config_hash);
  rep["total_steps"] = state.step;
  auto& sj = rep["scenes"] = ordered_json::array();
  for (const auto& ss : state.scenes) {
    ordered_json s;
    s["scene_id"] = ss.scene_id;
    s["instances"] = ss.params.size();
    s["initial_loss"] = ss.trace.empty() ? 0.0 : ss.trace.front()[0];
    s["final_loss"] = ss.trace.empty() ? 0.0 : ss.trace.back()[0];
    auto& tr = s["trace"] = ordered_json::array();
    for (const auto& row : ss.trace) {
      tr.push_back(ordered_json{{"total", row[0]},
                                {"projection", row[1]},
                                {"pairwise_color", row[2]},
                                {"pairwise_depth", row[3]},
                                {"instance_depth", row[4]},
                                {"dice", row[5]},
                                {"distilled", static_cast<int>(row[6])}});
    }
    sj.push_back(std::move(s));
  }
  write_file(fs::path(out) / "report.json", rep.dump(2) + "\n");

  double mean_final = 0.0;
  for (const auto& ss : state.scenes)
    mean_final += ss.trace.empty() ? 0.0 : ss.trace.back()[0];
  if (!state.scenes.empty()) mean_final /= static_cast<double>(state.scenes.size());
  std::cout << "trained " << state.scenes.size() << " scenes to step " << state.step
            << ", mean final loss " << mean_final << " -> " << out << "\n";
  man.j["mean_final_loss"] = mean_final;
  man.finish();
  return 0;
}

// --- eval ---------------------------------------------------------------

int cmd_eval(const std::string& ckpt, const std::string& data, const std::string& out,
             int threads_flag, bool force, int argc, char** argv) {
  const std::vector<dgseg::TrainScene> scenes = dgseg::load_train_scenes(data);
  const std::vector<dgseg::EvalScene> gts = dgseg::load_eval_scenes(data);
  const dgseg::TrainState state = dgseg::load_checkpoint(ckpt, nullptr);

  if (state.scenes.size() != scenes.size())
    throw dgseg::ValidationError("eval: checkpoint covers " +
                                 std::to_string(state.scenes.size()) +
                                 " scenes but the dataset has " +
                                 std::to_string(scenes.size()));
  for (std::size_t i = 0; i < scenes.size(); ++i)
    if (state.scenes[i].scene_id != scenes[i].id)
      throw dgseg::ValidationError("eval: checkpoint/dataset scene id mismatch at index " +
                                   std::to_string(i));

  prepare_out_dir(out, force);
  Manifest man(out, "eval", argc, argv);
  man.j["checkpoint"] = ckpt;
  man.j["data"] = data;
  man.flush();

  const int threads = resolve_threads(threads_flag, dgseg::KeyValueConfig::from_string(""));
  std::vector<dgseg::ScenePrediction> preds(scenes.size());
  dgseg::parallel_for(static_cast<int>(scenes.size()), threads, [&](int i) {
    preds[i] = dgseg::predict_scene(scenes[i], state.scenes[i].params);
  });

  dgseg::MetricsReport rep = dgseg::build_metrics_report(preds, gts);
  rep.json["checkpoint_step"] = state.step;
  rep.json["config_hash"] = hex64(state.config_hash);
  write_file(fs::path(out) / "report.json", rep.json.dump(2) + "\n");
  write_file(fs::path(out) / "report.csv", dgseg::metrics_csv(rep));

  std::cout << "mean IoU " << rep.mean_iou << ", AP " << rep.ap.ap << ", AP50 "
            << rep.ap.ap50 << ", AP75 " << rep.ap.ap75 << " -> " << out << "\n";
  man.finish();
  return 0;
}

// --- gradcheck ------------------------------------------------------------

int cmd_gradcheck(const std::string& out, std::int64_t seed_flag, int cases,
                  bool force, int argc, char** argv) {
  dgseg::VerifyConfig vc;
  if (seed_flag >= 0) vc.seed = static_cast<std::uint64_t>(seed_flag);
  if (cases > 0) vc.cases = cases;

  prepare_out_dir(out, force);
  Manifest man(out, "gradcheck", argc, argv);
  man.j["cases_per_term"] = vc.cases;
  man.j["seed"] = vc.seed;
  man.flush();

  const dgseg::GradCheckReport rep = dgseg::run_gradient_verification(vc);
  ordered_json j;
  j["pass"] = rep.all_pass();
  j["fd_step"] = vc.fd.step;
  j["rtol"] = vc.fd.rtol;
  j["atol"] = vc.fd.atol;
  auto& entries = j["entries"] = ordered_json::array();
  for (const auto& e : rep.entries) {
    entries.push_back(ordered_json{{"term", e.term},
                                   {"cases", e.cases},
                                   {"max_rel_err", e.max_rel_err},
                                   {"pass", e.pass}});
    std::cout << (e.pass ? "pass" : "FAIL") << "  " << e.term << "  cases=" << e.cases
              << "  max_rel_err=" << e.max_rel_err << "\n";
  }
  write_file(fs::path(out) / "report.json", j.dump(2) + "\n");
  man.finish();
  if (!rep.all_pass())
    throw dgseg::NumericError("gradient verification failed (see report.json)");
  return 0;
}

// --- render ----------------------------------------------------------------

int cmd_render(const std::string& ckpt, const std::string& data, const std::string& out,
               int limit, bool force, int argc, char** argv) {
  const std::vector<dgseg::TrainScene> scenes = dgseg::load_train_scenes(data);
  const dgseg::TrainState state = dgseg::load_checkpoint(ckpt, nullptr);
  if (state.scenes.size() != scenes.size())
    throw dgseg::ValidationError("render: checkpoint/dataset scene count mismatch");

  prepare_out_dir(out, force);
  Manifest man(out, "render", argc, argv);
  man.j["checkpoint"] = ckpt;
  man.j["data"] = data;
  man.flush();

  const int n = limit > 0 ? std::min<int>(limit, scenes.size())
                          : static_cast<int>(scenes.size());
  for (int i = 0; i < n; ++i) {
    const dgseg::ScenePrediction pred =
        dgseg::predict_scene(scenes[i], state.scenes[i].params);
    std::vector<dgseg::Raster> masks;
    std::vector<dgseg::Box> boxes;
    for (const auto& pi : pred.instances) {
      masks.push_back(pi.mask);
      boxes.push_back(pi.box);
    }
    const dgseg::Raster overlay =
        dgseg::overlay_instances(scenes[i].image, masks, boxes);

    // Predicted-depth panel: each instance's depth where its mask is on.
    dgseg::Raster depth_panel(scenes[i].image.height, scenes[i].image.width, 1);
    {
      const dgseg::Raster base = dgseg::base_features(scenes[i].image);
      for (std::size_t k = 0; k < state.scenes[i].params.size(); ++k) {
        const dgseg::PixelRect br =
            dgseg::pixel_rect(scenes[i].boxes[k], depth_panel.height, depth_panel.width);
        const dgseg::PixelLoc anchor{(br.x0 + br.x1) / 2, (br.y0 + br.y1) / 2};
        dgseg::HeadResult fwd = dgseg::head_forward(dgseg::head_input(base, anchor),
                                                    state.scenes[i].params[k], false);
        for (std::size_t p = 0; p < depth_panel.data.size(); ++p)
          if (masks[k].data[p] > 0.5) depth_panel.data[p] = fwd.depth_pred.data[p];
      }
    }
    const dgseg::Raster row = dgseg::hstack(
        {overlay, dgseg::colormap_depth(scenes[i].pseudo_depth),
         dgseg::colormap_depth(depth_panel)});
    char name[64];
    std::snprintf(name, sizeof name, "render_%04d.png", scenes[i].id);
    dgseg::save_png((fs::path(out) / name).string(), row);
  }
  std::cout << "rendered " << n << " scenes -> " << out << "\n";
  man.j["rendered"] = n;
  man.finish();
  return 0;
}

} // namespace

int main(int argc, char** argv) {
  CLI::App app{"synthetic depth-guided box-supervised segmentation workbench"};
  app.require_subcommand(1);

  std::string config_path, out, data, ckpt, resume;
  std::vector<std::string> overrides;
  std::int64_t seed = -1;
  int num_scenes = 0, threads = 0, cases = 0, limit = 0, stop_after = -1;
  bool force = false;

  CLI::App* gen = app.add_subcommand("gen", "generate a synthetic dataset");
  gen->add_option("--config", config_path, "key=value config file");
  gen->add_option("--out", out, "output dataset directory")->required();
  gen->add_option("--seed", seed, "master seed (overrides gen.seed)");
  gen->add_option("--num-scenes", num_scenes, "scene count (overrides gen.num_scenes)");
  gen->add_option("--set", overrides, "config override key=value")->take_all();
  gen->add_flag("--force", force, "allow a non-empty output directory");

  CLI::App* train = app.add_subcommand("train", "train per-instance mask heads");
  train->add_option("--config", config_path, "key=value config file");
  train->add_option("--data", data, "dataset directory")->required();
  train->add_option("--out", out, "output directory")->required();
  train->add_option("--resume", resume, "checkpoint to resume from");
  train->add_option("--stop-after", stop_after,
                    "pause after this step (resume later with --resume)");
  train->add_option("--seed", seed, "master seed (overrides train.seed)");
  train->add_option("--threads", threads, "worker threads (or DGSEG_THREADS)");
  train->add_option("--set", overrides, "config override key=value")->take_all();
  train->add_flag("--force", force, "allow a non-empty output directory");

  CLI::App* eval = app.add_subcommand("eval", "evaluate a checkpoint");
  eval->add_option("--checkpoint", ckpt, "checkpoint file")->required();
  eval->add_option("--data", data, "dataset directory")->required();
  eval->add_option("--out", out, "output directory")->required();
  eval->add_option("--threads", threads, "worker threads (or DGSEG_THREADS)");
  eval->add_flag("--force", force, "allow a non-empty output directory");

  CLI::App* gc = app.add_subcommand("gradcheck", "verify analytic gradients");
  gc->add_option("--out", out, "output directory")->required();
  gc->add_option("--seed", seed, "probe seed");
  gc->add_option("--cases", cases, "cases per term (default 100)");
  gc->add_flag("--force", force, "allow a non-empty output directory");

  CLI::App* render = app.add_subcommand("render", "render prediction panels");
  render->add_option("--checkpoint", ckpt, "checkpoint file")->required();
  render->add_option("--data", data, "dataset directory")->required();
  render->add_option("--out", out, "output directory")->required();
  render->add_option("--limit", limit, "render at most N scenes");
  render->add_flag("--force", force, "allow a non-empty output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    if (code != 0) {
      nlohmann::json err{{"error", {{"code", 2}, {"kind", "usage"}, {"message", e.what()}}}};
      std::cerr << err.dump() << "\n";
      return 2;
    }
    return 0;
  }

  const auto report_error = [](int code, const char* kind, const std::string& msg) {
    std::cerr << "error: " << msg << "\n";
    nlohmann::json err{{"error", {{"code", code}, {"kind", kind}, {"message", msg}}}};
    std::cerr << err.dump() << "\n";
    return code;
  };

  try {
    if (gen->parsed())
      return cmd_gen(config_path, overrides, out, seed, num_scenes, force, argc, argv);
    if (train->parsed())
      return cmd_train(config_path, overrides, data, out, resume, seed, threads,
                       stop_after, force, argc, argv);
    if (eval->parsed()) return cmd_eval(ckpt, data, out, threads, force, argc, argv);
    if (gc->parsed()) return cmd_gradcheck(out, seed, cases, force, argc, argv);
    if (render->parsed()) return cmd_render(ckpt, data, out, limit, force, argc, argv);
  } catch (const dgseg::ValidationError& e) {
    return report_error(2, "validation", e.what());
  } catch (const dgseg::NumericError& e) {
    return report_error(3, "numeric", e.what());
  } catch (const std::exception& e) {
    return report_error(1, "internal", e.what());
  }
  return 0;
}
