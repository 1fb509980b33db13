#pragma once

// Per-scene training driver: SGD with momentum over the per-instance head
// parameters, a step-decay learning-rate schedule, and the switch into the
// self-distillation phase (teacher snapshot at the boundary, EMA updates
// from then on).
//
// Scenes are optimized independently -- the engine fits one set of heads
// per scene, which is what makes scene-level parallelism free and results
// bit-identical for any thread count.
//
// Checkpoint format "DBCK1" (little-endian):
//   magic "DBCK1", u64 config-hash, u64 seed, u64 steps-completed,
//   u32 scene count, u8 has-teacher, then per scene:
//     u32 scene id, u32 instance count,
//     per instance: 178 f64 params, 178 f64 velocity,
//                   [if has-teacher] 178 f64 teacher params,
//     u32 trace length, per step 7 f64:
//       total, projection, pairwise-color, pairwise-depth, instance-depth,
//       dice, distilled-instance-count.
// All randomness is counter-based on (seed, purpose, scene, step), so the
// seed and step count fully determine the RNG state on resume.

#include <algorithm>
#include <array>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "dgseg/annotations.hpp"
#include "dgseg/distill.hpp"
#include "dgseg/errors.hpp"
#include "dgseg/maskhead.hpp"
#include "dgseg/parallel.hpp"
#include "dgseg/rng.hpp"

namespace dgseg {

struct TrainConfig {
  int total_steps = 400;
  double base_lr = 0.005;
  double momentum = 0.9;
  double decay_factor = 0.1;
  std::vector<int> decay_steps = {300};
  int distill_start = 312; // steps >= this run with the teacher
  double gamma = 4.0;
  double ema_rate = 0.999;
  double tau_c = 0.3;
  double tau_d = 0.5;
  double tau_m = 0.8;
  double alpha = 0.8;
  double beta = 0.2;
  double color_theta = 2.0;
  double depth_sim_k = 8.0;
  int pair_dilation = 2;
  int region_dilate_px = 4;
  int anchor_stride = 8;
  double scale_min = 0.8;
  double scale_max = 1.0;
  int teacher_input_size = 0; // 0 = native resolution
  double init_weight_range = 0.1;
  std::uint64_t seed = 7;
  int threads = 1;
  bool use_depth_consistency = true;
  bool use_instance_depth = true;

  void validate() const {
    if (total_steps < 0) throw ValidationError("train: total_steps must be >= 0");
    if (!(base_lr > 0.0)) throw ValidationError("train: base_lr must be positive");
    if (!(momentum >= 0.0 && momentum < 1.0))
      throw ValidationError("train: momentum must lie in [0,1)");
    if (!(decay_factor > 0.0 && decay_factor <= 1.0))
      throw ValidationError("train: decay_factor must lie in (0,1]");
    for (std::size_t i = 0; i < decay_steps.size(); ++i) {
      if (decay_steps[i] <= 0 || decay_steps[i] >= total_steps)
        throw ValidationError("train: decay steps must lie inside (0, total_steps)");
      if (i > 0 && decay_steps[i] <= decay_steps[i - 1])
        throw ValidationError("train: decay steps must be strictly increasing");
    }
    if (distill_start < 1)
      throw ValidationError("train: distill_start must be >= 1");
    if (distill_start < total_steps) {
      // The distillation phase is meant to start on an already-settled
      // student: it must begin after the first learning-rate decay.
      if (decay_steps.empty() || distill_start <= decay_steps.front())
        throw ValidationError(
            "train: distill_start must come after the first decay step");
    }
    if (!(gamma >= 0.0)) throw ValidationError("train: gamma must be >= 0");
    if (!(ema_rate >= 0.0 && ema_rate < 1.0))
      throw ValidationError("train: ema_rate must lie in [0,1)");
    if (!(scale_min > 0.0 && scale_min <= scale_max && scale_max <= 1.0))
      throw ValidationError("train: need 0 < scale_min <= scale_max <= 1");
    if (anchor_stride < 1 || pair_dilation < 1)
      throw ValidationError("train: anchor_stride and pair_dilation must be >= 1");
    if (region_dilate_px < 0)
      throw ValidationError("train: region_dilate_px must be >= 0");
    if (teacher_input_size != 0 && teacher_input_size < 16)
      throw ValidationError("train: teacher_input_size must be 0 or >= 16");
    if (!(init_weight_range > 0.0))
      throw ValidationError("train: init_weight_range must be positive");
    if (threads < 1) throw ValidationError("train: threads must be >= 1");
    MatchWeights mw{alpha, beta, tau_d, tau_m};
    mw.validate();
  }

  /// Stable textual form of every training-relevant field; hashed into
  /// checkpoints so a resume with a different configuration is refused.
  std::string canonical_string() const {
    std::ostringstream os;
    os.precision(17);
    os << "total_steps=" << total_steps << "\nbase_lr=" << base_lr
       << "\nmomentum=" << momentum << "\ndecay_factor=" << decay_factor
       << "\ndecay_steps=";
    for (std::size_t i = 0; i < decay_steps.size(); ++i)
      os << (i ? "," : "") << decay_steps[i];
    os << "\ndistill_start=" << distill_start << "\ngamma=" << gamma
       << "\nema_rate=" << ema_rate << "\ntau_c=" << tau_c << "\ntau_d=" << tau_d
       << "\ntau_m=" << tau_m << "\nalpha=" << alpha << "\nbeta=" << beta
       << "\ncolor_theta=" << color_theta << "\ndepth_sim_k=" << depth_sim_k
       << "\npair_dilation=" << pair_dilation
       << "\nregion_dilate_px=" << region_dilate_px
       << "\nanchor_stride=" << anchor_stride << "\nscale_min=" << scale_min
       << "\nscale_max=" << scale_max
       << "\nteacher_input_size=" << teacher_input_size
       << "\ninit_weight_range=" << init_weight_range << "\nseed=" << seed
       << "\nuse_depth_consistency=" << use_depth_consistency
       << "\nuse_instance_depth=" << use_instance_depth << "\n";
    return os.str();
  }
};

inline std::uint64_t fnv1a64(const std::string& s) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

/// One step's trace row: total, the five terms, distilled-instance count.
using TraceRow = std::array<double, 7>;

struct SceneState {
  int scene_id = 0;
  std::vector<HeadParams> params;
  std::vector<HeadParams> velocity;
  std::optional<TeacherState> teacher;
  std::vector<TraceRow> trace;
};

struct TrainState {
  std::uint64_t config_hash = 0;
  std::uint64_t seed = 0;
  int step = 0; // steps completed so far
  std::vector<SceneState> scenes;
};

/// Head initialization: biases zero, weights uniform in +-init_weight_range,
/// one derived stream per (scene, instance) so scene order cannot matter.
inline HeadParams init_head(std::uint64_t seed, int scene_id, int instance,
                            double range) {
  Rng rng = Rng::stream(seed, StreamTag::ParamInit,
                        static_cast<std::uint64_t>(scene_id),
                        static_cast<std::uint64_t>(instance));
  HeadParams p;
  const auto fill = [&](double* w, int n) {
    for (int i = 0; i < n; ++i) w[i] = rng.uniform(-range, range);
  };
  fill(p.w1(), kHiddenUnits * kHeadInputChannels);
  fill(p.w2(), kHiddenUnits * kHiddenUnits);
  fill(p.wd(), kHiddenUnits);
  fill(p.wm(), kHiddenUnits);
  return p; // biases stay zero
}

inline TrainState init_train_state(const std::vector<TrainScene>& scenes,
                                   const TrainConfig& cfg) {
  TrainState st;
  st.config_hash = fnv1a64(cfg.canonical_string());
  st.seed = cfg.seed;
  st.scenes.resize(scenes.size());
  for (std::size_t s = 0; s < scenes.size(); ++s) {
    SceneState& ss = st.scenes[s];
    ss.scene_id = scenes[s].id;
    const int n = static_cast<int>(scenes[s].boxes.size());
    if (n == 0)
      throw ValidationError("train: scene " + std::to_string(scenes[s].id) +
                            " has no annotations");
    ss.params.reserve(n);
    for (int k = 0; k < n; ++k)
      ss.params.push_back(init_head(cfg.seed, ss.scene_id, k, cfg.init_weight_range));
    ss.velocity.assign(n, HeadParams{});
  }
  return st;
}

inline double lr_at_step(const TrainConfig& cfg, int step) {
  double lr = cfg.base_lr;
  for (int d : cfg.decay_steps)
    if (step >= d) lr *= cfg.decay_factor;
  return lr;
}

namespace detail {

inline void check_finite_step(const StepResult& r, int scene_id, int step) {
  const auto bad = [&](const char* term) {
    throw NumericError("non-finite " + std::string(term) + " at step " +
                       std::to_string(step) + ", scene " + std::to_string(scene_id));
  };
  if (!std::isfinite(r.terms.projection)) bad("projection loss");
  if (!std::isfinite(r.terms.pairwise_color)) bad("color pairwise loss");
  if (!std::isfinite(r.terms.pairwise_depth)) bad("depth pairwise loss");
  if (!std::isfinite(r.terms.instance_depth)) bad("instance depth loss");
  if (!std::isfinite(r.terms.distill_dice)) bad("dice loss");
  if (!std::isfinite(r.total)) bad("total loss");
  for (std::size_t k = 0; k < r.grads.size(); ++k)
    if (!r.grads[k].all_finite())
      throw NumericError("non-finite gradient for instance " + std::to_string(k) +
                         " at step " + std::to_string(step) + ", scene " +
                         std::to_string(scene_id));
}

} // namespace detail

/// Advances every scene from state.step to cfg.total_steps, or to
/// `stop_after` when that comes first (stop_after < 0 means "run to the
/// end"). Stopping early, checkpointing, reloading, and continuing with the
/// same configuration reproduces the uninterrupted run bit for bit: the
/// schedule, the phase boundary, and the per-step RNG all key off absolute
/// step indices. The state must have been produced by init_train_state (or
/// loaded from a checkpoint) with the same configuration and scene list.
inline void train(const std::vector<TrainScene>& scenes, const TrainConfig& cfg,
                  TrainState& state, int stop_after = -1) {
  cfg.validate();
  if (state.config_hash != fnv1a64(cfg.canonical_string()))
    throw ValidationError("train: state was created with a different configuration");
  if (state.scenes.size() != scenes.size())
    throw ValidationError("train: state/scene count mismatch");
  for (std::size_t s = 0; s < scenes.size(); ++s) {
    if (state.scenes[s].scene_id != scenes[s].id)
      throw ValidationError("train: state/scene id mismatch at index " +
                            std::to_string(s));
    if (state.scenes[s].params.size() != scenes[s].boxes.size())
      throw ValidationError("train: head count mismatch for scene " +
                            std::to_string(scenes[s].id));
  }
  const int end_step =
      stop_after < 0 ? cfg.total_steps : std::min(stop_after, cfg.total_steps);
  if (state.step >= end_step) return;

  const int start_step = state.step;
  parallel_for(static_cast<int>(scenes.size()), cfg.threads, [&](int si) {
    const TrainScene& ts = scenes[si];
    SceneState& ss = state.scenes[si];
    const int n = static_cast<int>(ss.params.size());
    SceneCache cache;

    StepConfig sc;
    sc.gamma = cfg.gamma;
    sc.tau_c = cfg.tau_c;
    sc.tau_d = cfg.tau_d;
    sc.color_theta = cfg.color_theta;
    sc.depth_sim_k = cfg.depth_sim_k;
    sc.pair_dilation = cfg.pair_dilation;
    sc.region_dilate_px = cfg.region_dilate_px;
    sc.anchor_stride = cfg.anchor_stride;
    sc.match = MatchWeights{cfg.alpha, cfg.beta, cfg.tau_d, cfg.tau_m};
    sc.use_depth_consistency = cfg.use_depth_consistency;
    sc.use_instance_depth = cfg.use_instance_depth;

    for (int step = start_step; step < end_step; ++step) {
      const bool distill = step >= cfg.distill_start;
      if (distill && !ss.teacher) {
        // Teacher is born as a copy of the student at the phase boundary.
        TeacherState t;
        t.params = ss.params;
        t.input_size = cfg.teacher_input_size;
        ss.teacher = std::move(t);
      }
      sc.student_scale =
          distill ? Rng::stream(cfg.seed, StreamTag::StudentScale,
                                static_cast<std::uint64_t>(ss.scene_id),
                                static_cast<std::uint64_t>(step))
                        .uniform(cfg.scale_min, cfg.scale_max)
                  : 1.0;

      const StepResult r =
          train_step(ts, ss.params, distill ? &*ss.teacher : nullptr, sc, cache);
      detail::check_finite_step(r, ss.scene_id, step);

      const double lr = lr_at_step(cfg, step);
      for (int k = 0; k < n; ++k) {
        for (int i = 0; i < kParamCount; ++i) {
          ss.velocity[k].v[i] = cfg.momentum * ss.velocity[k].v[i] + r.grads[k].v[i];
          ss.params[k].v[i] -= lr * ss.velocity[k].v[i];
        }
        if (!ss.params[k].all_finite())
          throw NumericError("parameters diverged for instance " + std::to_string(k) +
                             " at step " + std::to_string(step) + ", scene " +
                             std::to_string(ss.scene_id));
      }
      if (ss.teacher) ema_update(*ss.teacher, ss.params, cfg.ema_rate);

      ss.trace.push_back(TraceRow{r.total, r.terms.projection, r.terms.pairwise_color,
                                  r.terms.pairwise_depth, r.terms.instance_depth,
                                  r.terms.distill_dice,
                                  static_cast<double>(r.distilled_instances)});
    }
  });
  state.step = end_step;
}

// ---------------------------------------------------------------------------
// Checkpoint I/O ("DBCK1")

namespace detail {

inline void w_u32(std::FILE* f, std::uint32_t v) {
  if (std::fwrite(&v, 4, 1, f) != 1) throw ValidationError("checkpoint: short write");
}
inline void w_u64(std::FILE* f, std::uint64_t v) {
  if (std::fwrite(&v, 8, 1, f) != 1) throw ValidationError("checkpoint: short write");
}
inline void w_f64s(std::FILE* f, const double* p, std::size_t n) {
  if (std::fwrite(p, 8, n, f) != n) throw ValidationError("checkpoint: short write");
}
inline std::uint32_t r_u32(std::FILE* f, const std::string& path) {
  std::uint32_t v;
  if (std::fread(&v, 4, 1, f) != 1)
    throw ValidationError("checkpoint truncated: " + path);
  return v;
}
inline std::uint64_t r_u64(std::FILE* f, const std::string& path) {
  std::uint64_t v;
  if (std::fread(&v, 8, 1, f) != 1)
    throw ValidationError("checkpoint truncated: " + path);
  return v;
}
inline void r_f64s(std::FILE* f, double* p, std::size_t n, const std::string& path) {
  if (std::fread(p, 8, n, f) != n)
    throw ValidationError("checkpoint truncated: " + path);
}

} // namespace detail

inline void save_checkpoint(const std::string& path, const TrainState& st) {
  auto f = detail::open_file(path, "wb");
  if (std::fwrite("DBCK1", 1, 5, f.get()) != 5)
    throw ValidationError("checkpoint: short write");
  const bool has_teacher =
      !st.scenes.empty() && st.scenes.front().teacher.has_value();
  detail::w_u64(f.get(), st.config_hash);
  detail::w_u64(f.get(), st.seed);
  detail::w_u64(f.get(), static_cast<std::uint64_t>(st.step));
  detail::w_u32(f.get(), static_cast<std::uint32_t>(st.scenes.size()));
  std::fputc(has_teacher ? 1 : 0, f.get());
  for (const SceneState& ss : st.scenes) {
    detail::w_u32(f.get(), static_cast<std::uint32_t>(ss.scene_id));
    detail::w_u32(f.get(), static_cast<std::uint32_t>(ss.params.size()));
    for (std::size_t k = 0; k < ss.params.size(); ++k) {
      detail::w_f64s(f.get(), ss.params[k].v.data(), kParamCount);
      detail::w_f64s(f.get(), ss.velocity[k].v.data(), kParamCount);
      if (has_teacher) {
        if (!ss.teacher || ss.teacher->params.size() != ss.params.size())
          throw ValidationError("checkpoint: inconsistent teacher state");
        detail::w_f64s(f.get(), ss.teacher->params[k].v.data(), kParamCount);
      }
    }
    detail::w_u32(f.get(), static_cast<std::uint32_t>(ss.trace.size()));
    for (const TraceRow& row : ss.trace) detail::w_f64s(f.get(), row.data(), 7);
  }
}

/// Loads a DBCK1 checkpoint. When `cfg` is non-null it is the configuration
/// the caller intends to keep training with, and a hash mismatch is refused
/// up front. Read-only consumers (eval, render) pass nullptr.
inline TrainState load_checkpoint(const std::string& path, const TrainConfig* cfg) {
  auto f = detail::open_file(path, "rb");
  char magic[5];
  if (std::fread(magic, 1, 5, f.get()) != 5 || std::memcmp(magic, "DBCK1", 5) != 0)
    throw ValidationError("not a checkpoint file: " + path);
  TrainState st;
  st.config_hash = detail::r_u64(f.get(), path);
  if (cfg && st.config_hash != fnv1a64(cfg->canonical_string()))
    throw ValidationError("checkpoint was written with a different configuration: " + path);
  st.seed = detail::r_u64(f.get(), path);
  st.step = static_cast<int>(detail::r_u64(f.get(), path));
  const std::uint32_t nscenes = detail::r_u32(f.get(), path);
  const int teacher_flag = std::fgetc(f.get());
  if (teacher_flag == EOF) throw ValidationError("checkpoint truncated: " + path);
  st.scenes.resize(nscenes);
  for (SceneState& ss : st.scenes) {
    ss.scene_id = static_cast<int>(detail::r_u32(f.get(), path));
    const std::uint32_t n = detail::r_u32(f.get(), path);
    if (n == 0 || n > 4096)
      throw ValidationError("checkpoint: implausible instance count in " + path);
    ss.params.resize(n);
    ss.velocity.resize(n);
    if (teacher_flag) {
      ss.teacher.emplace();
      ss.teacher->params.resize(n);
      ss.teacher->input_size = cfg ? cfg->teacher_input_size : 0;
    }
    for (std::uint32_t k = 0; k < n; ++k) {
      detail::r_f64s(f.get(), ss.params[k].v.data(), kParamCount, path);
      detail::r_f64s(f.get(), ss.velocity[k].v.data(), kParamCount, path);
      if (teacher_flag)
        detail::r_f64s(f.get(), ss.teacher->params[k].v.data(), kParamCount, path);
    }
    const std::uint32_t tlen = detail::r_u32(f.get(), path);
    if (tlen > (1u << 24))
      throw ValidationError("checkpoint: implausible trace length in " + path);
    ss.trace.resize(tlen);
    for (TraceRow& row : ss.trace) detail::r_f64s(f.get(), row.data(), 7, path);
  }
  char probe;
  if (std::fread(&probe, 1, 1, f.get()) == 1)
    throw ValidationError("checkpoint: trailing bytes in " + path);
  return st;
}

} // namespace dgseg
