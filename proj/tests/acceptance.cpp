// Acceptance suite: every shipped guarantee of the engine exercised end to
// end, one printed line per criterion, nonzero exit when any fails. These
// are the checks a release must pass; the Catch2 suites cover the same code
// at finer grain.
//
//   1  analytic gradients match central finite differences on all loss terms
//   2  the assignment solver is exactly optimal on small matrices
//   3  the head forward pass matches an independent oracle; the worked
//      depth-consistency fixture and the matching-score weights hold exactly
//   4  the EMA teacher follows its geometric closed form
//   5  CLI training is byte-deterministic across runs and thread counts
//   6  the easy suite trains to high mask IoU inside its time budget
//   7  on the hard suite, depth supervision beats the box-only baseline and
//      score-based matching is no worse than IoU-only matching
//   8  average precision reproduces hand-computed fixtures, and the
//      threshold-sweep orderings hold on random prediction sets

#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>
#include <sys/wait.h>
#include <unistd.h>
#include <vector>

#include "dgseg/distill.hpp"
#include "dgseg/evalmetrics.hpp"
#include "dgseg/features.hpp"
#include "dgseg/matching.hpp"
#include "dgseg/rng.hpp"
#include "dgseg/scene.hpp"
#include "dgseg/trainer.hpp"
#include "dgseg/verification.hpp"
#include "support/oracles.hpp"

namespace fs = std::filesystem;
using namespace dgseg;

namespace {

int g_failures = 0;

/// Runs one criterion, timing it and printing a single PASS/FAIL line.
void criterion(int index, const std::string& name, bool (*body)(std::string&)) {
  const auto t0 = std::chrono::steady_clock::now();
  std::string detail;
  bool ok = false;
  try {
    ok = body(detail);
  } catch (const std::exception& e) {
    detail = std::string("exception: ") + e.what();
  }
  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::printf("[%d] %s  %s  (%.1fs)%s%s\n", index, ok ? "PASS" : "FAIL",
              name.c_str(), secs, detail.empty() ? "" : "  -- ", detail.c_str());
  std::fflush(stdout);
  if (!ok) ++g_failures;
}

std::string format(const char* fmt, ...) {
  char buf[256];
  va_list args;
  va_start(args, fmt);
  std::vsnprintf(buf, sizeof buf, fmt, args);
  va_end(args);
  return buf;
}

TrainScene to_train_scene(const Scene& s, int& next_annotation_id) {
  TrainScene t;
  t.id = s.id;
  t.image = s.image;
  t.pseudo_depth = s.pseudo_depth;
  for (const SceneInstance& inst : s.instances) {
    t.boxes.push_back(inst.box);
    t.categories.push_back(static_cast<int>(inst.kind) + 1);
    t.annotation_ids.push_back(next_annotation_id++);
  }
  return t;
}

/// Mean over every instance of IoU(final predicted mask, ground-truth mask).
double mean_final_iou(const std::vector<Scene>& scenes,
                      const std::vector<TrainScene>& ts, const TrainState& st) {
  double sum = 0.0;
  long n = 0;
  for (std::size_t i = 0; i < ts.size(); ++i) {
    const ScenePrediction sp = predict_scene(ts[i], st.scenes[i].params);
    for (std::size_t k = 0; k < sp.instances.size(); ++k) {
      sum += mask_iou(sp.instances[k].mask, scenes[i].instances[k].visible_mask);
      ++n;
    }
  }
  return n > 0 ? sum / static_cast<double>(n) : 0.0;
}

// --- 1: gradient correctness ------------------------------------------------

bool check_gradients(std::string& detail) {
  VerifyConfig vc; // 100 cases per term, fd step 1e-5, rtol 1e-4
  const auto t0 = std::chrono::steady_clock::now();
  const GradCheckReport rep = run_gradient_verification(vc);
  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  bool ok = rep.all_pass() && rep.entries.size() >= 6 && secs < 60.0;
  double worst = 0.0;
  for (const GradCheckEntry& e : rep.entries) {
    worst = std::max(worst, e.max_rel_err);
    if (e.cases < 100 || e.max_rel_err > 1e-4) ok = false;
  }
  detail = format("%zu terms x 100 cases, max rel err %.2e", rep.entries.size(),
                  worst);
  return ok;
}

// --- 2: assignment optimality ----------------------------------------------

bool check_assignment(std::string& detail) {
  const auto t0 = std::chrono::steady_clock::now();
  Rng rng = Rng::stream(29, StreamTag::GradCheck, 1);
  for (int trial = 0; trial < 1000; ++trial) {
    const int rows = rng.uniform_int(1, 7);
    const int cols = rng.uniform_int(1, 7);
    // Scores are multiples of 2^-10 in [0,2): any sum of up to seven of
    // them is exact in a double, so optimal totals compare with == no
    // matter the summation order. Ties occur naturally.
    std::vector<double> score(static_cast<std::size_t>(rows) * cols);
    for (double& v : score) v = rng.uniform_int(0, 2047) / 1024.0;

    const std::vector<int> got = hungarian_max(score, rows, cols);
    std::vector<char> used(cols, 0);
    int assigned = 0;
    for (int c : got) {
      if (c < 0) continue;
      if (c >= cols || used[c]) {
        detail = format("invalid assignment in trial %d", trial);
        return false;
      }
      used[c] = 1;
      ++assigned;
    }
    if (assigned != std::min(rows, cols)) {
      detail = format("incomplete assignment in trial %d", trial);
      return false;
    }
    const double total = oracle::assignment_score(score, cols, got);
    const double best = oracle::brute_force_assignment(score, rows, cols);
    if (total != best) {
      detail = format("trial %d: solver total %.17g, brute force %.17g", trial,
                      total, best);
      return false;
    }
  }
  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  detail = format("1000 matrices up to 7x7, exact optimum each time");
  return secs < 10.0;
}

// --- 3: forward pass and score fixtures -------------------------------------

bool check_fixtures(std::string& detail) {
  // (a) head forward against the straight-line oracle, 50 random cases.
  Rng rng = Rng::stream(31, StreamTag::GradCheck, 2);
  double worst = 0.0;
  for (int c = 0; c < 50; ++c) {
    const int H = 5, W = 6;
    Raster input(H, W, kHeadInputChannels);
    for (double& v : input.data) v = rng.uniform(-1.0, 1.0);
    HeadParams p;
    for (double& v : p.v) v = rng.uniform(-0.8, 0.8);

    const HeadResult out = head_forward(input, p, false);
    for (int px = 0; px < H * W; ++px) {
      std::vector<double> x(kHeadInputChannels);
      for (int ch = 0; ch < kHeadInputChannels; ++ch)
        x[ch] = input.data[static_cast<std::size_t>(px) * kHeadInputChannels + ch];
      const oracle::HeadOutputs ref = oracle::head_at_pixel(x, p);
      worst = std::max(worst, std::abs(out.mask_prob.data[px] - ref.mask));
      worst = std::max(worst, std::abs(out.depth_pred.data[px] - ref.depth));
    }
  }
  if (worst > 1e-12) {
    detail = format("forward pass deviates from oracle by %.2e", worst);
    return false;
  }

  // (b) the worked 2x2 depth-consistency fixture, replicated digit for
  // digit: mask {.8,.6,.4,.2}, similarities {.9,.4,.7,.3}, tau 0.5.
  Raster mask(2, 2, 1);
  mask.data = {0.8, 0.6, 0.4, 0.2};
  const std::vector<double> sim = {0.9, 0.4, 0.7, 0.3};
  const double num = 0.8 * 0.9 + 0.4 * 0.7;
  const double den = 0.8 * 0.9 + 0.6 * 0.4 + 0.4 * 0.7 + 0.2 * 0.3;
  const double got = depth_consistency_score(mask, sim, 0.5);
  if (got != num / den) {
    detail = format("depth consistency fixture: got %.17g, want %.17g", got,
                    num / den);
    return false;
  }

  // (c) with the default weights alpha + beta = 1, the prediction-score
  // component carries exactly zero weight.
  const MatchWeights w; // alpha 0.8, beta 0.2
  if (1.0 - (w.alpha + w.beta) != 0.0) {
    detail = "alpha + beta != 1 under defaults";
    return false;
  }
  for (double iou : {0.0, 0.3, 1.0})
    for (double dc : {0.0, 0.6, 1.0})
      if (matching_score(iou, dc, 0.0, w) != matching_score(iou, dc, 1.0, w)) {
        detail = "prediction score leaked into the matching score";
        return false;
      }

  detail = format("forward max dev %.1e; consistency fixture exact; "
                  "score weights exact",
                  worst);
  return true;
}

// --- 4: EMA closed form ------------------------------------------------------

bool check_ema(std::string& detail) {
  const double t0 = 1.0, s0 = 0.25, rate = 0.999;
  double worst = 0.0;
  for (int k : {1, 10, 1000}) {
    TeacherState teacher;
    teacher.params.assign(2, HeadParams{});
    for (HeadParams& p : teacher.params) p.v.fill(t0);
    std::vector<HeadParams> student(2);
    for (HeadParams& p : student) p.v.fill(s0);

    for (int i = 0; i < k; ++i) ema_update(teacher, student, rate);

    // Error after k steps must equal rate^k of the initial error.
    const double expected_err = (t0 - s0) * std::pow(rate, k);
    for (const HeadParams& p : teacher.params)
      for (double v : p.v) {
        const double rel = std::abs((v - s0) - expected_err) / expected_err;
        worst = std::max(worst, rel);
      }
  }
  detail = format("k in {1,10,1000}: worst relative error %.2e", worst);
  return worst <= 1e-12;
}

// --- 5: CLI byte determinism -------------------------------------------------

std::vector<char> file_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::vector<char>(std::istreambuf_iterator<char>(in),
                           std::istreambuf_iterator<char>());
}

int run_cli(const fs::path& dir, const std::string& args) {
  const std::string cmd = std::string(DGSEG_CLI_PATH) + " " + args + " >" +
                          (dir / "stdout.txt").string() + " 2>" +
                          (dir / "stderr.txt").string();
  const int status = std::system(cmd.c_str());
  return (status >= 0 && WIFEXITED(status)) ? WEXITSTATUS(status) : -1;
}

bool check_determinism(std::string& detail) {
  const fs::path dir =
      fs::temp_directory_path() / ("dgseg_acceptance_" + std::to_string(getpid()));
  fs::remove_all(dir);
  fs::create_directories(dir);

  std::ofstream(dir / "gen.cfg") << "scene.height=64\nscene.width=64\n"
                                    "scene.min_objects=2\nscene.max_objects=2\n"
                                    "gen.num_scenes=8\ngen.seed=9\n";
  std::ofstream(dir / "train.cfg") << "train.total_steps=30\ntrain.decay_steps=20\n"
                                      "train.distill_start=24\n"
                                      "train.teacher_input_size=32\ntrain.seed=5\n";
  if (run_cli(dir, "gen --config " + (dir / "gen.cfg").string() + " --out " +
                       (dir / "data").string()) != 0) {
    detail = "dataset generation failed";
    return false;
  }
  const std::string base = "train --config " + (dir / "train.cfg").string() +
                           " --data " + (dir / "data").string() + " --out ";
  for (const auto& [name, threads] :
       {std::pair<const char*, int>{"a", 1}, {"b", 1}, {"c", 8}}) {
    if (run_cli(dir, base + (dir / name).string() + " --threads " +
                         std::to_string(threads)) != 0) {
      detail = format("training run %s failed", name);
      return false;
    }
  }

  const bool same_ckpt =
      file_bytes(dir / "a/checkpoint.dbck") == file_bytes(dir / "b/checkpoint.dbck") &&
      file_bytes(dir / "a/checkpoint.dbck") == file_bytes(dir / "c/checkpoint.dbck");
  const bool same_rep =
      file_bytes(dir / "a/report.json") == file_bytes(dir / "b/report.json") &&
      file_bytes(dir / "a/report.json") == file_bytes(dir / "c/report.json");
  fs::remove_all(dir);

  if (!same_ckpt) detail = "checkpoints differ";
  if (!same_rep) detail += std::string(detail.empty() ? "" : "; ") + "reports differ";
  if (same_ckpt && same_rep)
    detail = "checkpoint and report byte-identical at threads 1, 1, 8";
  return same_ckpt && same_rep;
}

// --- 6: easy-suite end to end ------------------------------------------------

bool check_easy_suite(std::string& detail) {
  // Matches presets/easy.cfg: the generator and trainer defaults.
  const SceneConfig scfg;  // 96x96, 3 depth-separated objects
  const TrainConfig tcfg;  // 400 steps, distillation from step 312
  const auto t0 = std::chrono::steady_clock::now();

  std::vector<Scene> scenes;
  std::vector<TrainScene> ts;
  int ann = 1;
  for (int i = 0; i < 20; ++i) {
    scenes.push_back(generate_scene(scfg, 7, i));
    ts.push_back(to_train_scene(scenes.back(), ann));
  }
  TrainState st = init_train_state(ts, tcfg);
  train(ts, tcfg, st);
  const double iou = mean_final_iou(scenes, ts, st);

  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  detail = format("mean mask IoU %.4f over 20 scenes (target >= 0.80), %.0fs",
                  iou, secs);
  return iou >= 0.80 && secs < 300.0;
}

// --- 7: hard-suite ablations ---------------------------------------------------

bool check_hard_suite(std::string& detail) {
  // Matches presets/hard.cfg: overlap allowed, colors camouflaged toward
  // the background, distractor blobs at background depth.
  SceneConfig scfg;
  scfg.height = 80;
  scfg.width = 80;
  scfg.allow_overlap = true;
  scfg.camouflage = 0.6;
  scfg.distractors = true;

  // Ablation schedule: base phase only, so the loss-term comparison is not
  // confounded by distillation (which itself depends on the depth terms).
  TrainConfig base;
  base.total_steps = 200;
  base.decay_steps = {150};
  base.distill_start = 200;

  constexpr int kSeeds = 5, kScenes = 4;
  double diff_sum = 0.0;
  double match_quality_full = 0.0, match_quality_iou = 0.0;
  long match_boxes = 0;

  for (int s = 0; s < kSeeds; ++s) {
    std::vector<Scene> scenes;
    std::vector<TrainScene> ts;
    int ann = 1;
    for (int i = 0; i < kScenes; ++i) {
      scenes.push_back(generate_scene(scfg, 500 + s, i));
      ts.push_back(to_train_scene(scenes.back(), ann));
    }

    TrainConfig with_depth = base;
    with_depth.seed = 1000 + s;
    TrainConfig box_only = with_depth;
    box_only.use_depth_consistency = false;
    box_only.use_instance_depth = false;

    TrainState st_depth = init_train_state(ts, with_depth);
    train(ts, with_depth, st_depth);
    TrainState st_box = init_train_state(ts, box_only);
    train(ts, box_only, st_box);

    diff_sum += mean_final_iou(scenes, ts, st_depth) -
                mean_final_iou(scenes, ts, st_box);

    // Matching ablation on the depth-trained heads: pseudo-mask quality
    // under the full matching score versus plain box IoU. Unmatched boxes
    // count as zero -- a matcher that abstains produces no label.
    const MatchWeights full{0.8, 0.2, base.tau_d, base.tau_m};
    const MatchWeights iou_only{1.0, 0.0, base.tau_d, base.tau_m};
    for (int i = 0; i < kScenes; ++i) {
      TeacherState teacher;
      teacher.params = st_depth.scenes[i].params;
      const std::vector<Candidate> cands =
          teacher_candidates(ts[i], teacher, base.anchor_stride);
      const EdgeGraph graph =
          neighbor_edges(scfg.height, scfg.width, base.pair_dilation);
      const std::vector<double> pixel_sim =
          depth_similarity(ts[i].pseudo_depth, graph, base.depth_sim_k).pixel;
      for (const MatchWeights* w : {&full, &iou_only}) {
        const auto assigned = assign_pseudo_masks(ts[i].boxes, cands, pixel_sim, *w);
        double& bucket = (w == &full) ? match_quality_full : match_quality_iou;
        for (std::size_t k = 0; k < assigned.size(); ++k)
          if (assigned[k])
            bucket += mask_iou(assigned[k]->mask, scenes[i].instances[k].visible_mask);
      }
      match_boxes += static_cast<long>(ts[i].boxes.size());
    }
  }

  const double mean_diff = diff_sum / kSeeds;
  const double q_full = match_quality_full / static_cast<double>(match_boxes);
  const double q_iou = match_quality_iou / static_cast<double>(match_boxes);
  detail = format("depth-on minus box-only IoU %+.4f; pseudo-mask IoU %.4f "
                  "(score match) vs %.4f (IoU-only)",
                  mean_diff, q_full, q_iou);
  return mean_diff > 0.0 && q_full >= q_iou;
}

// --- 8: average-precision fixtures --------------------------------------------

Raster mask_of(int h, int w, std::initializer_list<std::pair<int, int>> px) {
  Raster m(h, w, 1, 0.0);
  for (const auto& [y, x] : px) m.at(y, x, 0) = 1.0;
  return m;
}

PredictedInstance make_pred(int ann, int cat, double score, Raster mask) {
  PredictedInstance p;
  p.annotation_id = ann;
  p.category = cat;
  p.score = score;
  p.box = mask_bbox(mask);
  p.mask = std::move(mask);
  return p;
}

EvalInstance make_gt(int ann, int cat, Raster mask) {
  EvalInstance g;
  g.annotation_id = ann;
  g.category = cat;
  g.box = mask_bbox(mask);
  g.mask = std::move(mask);
  return g;
}

bool check_average_precision(std::string& detail) {
  // Fixture 1: one exact match plus one IoU-3/5 match. Hand evaluation:
  // AP 1 at thresholds {.50,.55,.60}, interpolated 51/101 at the seven
  // stricter ones; the mean accumulates to 0.6534653465346534.
  {
    EvalScene es;
    es.id = 0;
    es.instances.push_back(make_gt(1, 1, mask_of(8, 8, {{0, 0}, {0, 1}, {1, 0}, {1, 1}})));
    es.instances.push_back(make_gt(2, 1, mask_of(8, 8, {{4, 0}, {4, 1}, {4, 2}, {4, 3}})));
    ScenePrediction sp;
    sp.scene_id = 0;
    sp.instances.push_back(
        make_pred(1, 1, 0.9, mask_of(8, 8, {{0, 0}, {0, 1}, {1, 0}, {1, 1}})));
    sp.instances.push_back(
        make_pred(2, 1, 0.8, mask_of(8, 8, {{4, 1}, {4, 2}, {4, 3}, {4, 4}})));
    const ApSummary s = average_precision({sp}, {es});
    if (s.ap != 0.6534653465346534 || s.ap50 != 1.0 || s.ap75 != 0.504950495049505) {
      detail = format("mixed fixture: ap %.17g ap50 %.17g ap75 %.17g", s.ap,
                      s.ap50, s.ap75);
      return false;
    }
  }

  // Fixture 2: a single prediction at IoU exactly 1/2 counts only at the
  // 0.50 threshold: AP = 1/10.
  {
    EvalScene es;
    es.id = 0;
    es.instances.push_back(make_gt(1, 1, mask_of(6, 6, {{0, 0}, {0, 1}, {0, 2}})));
    ScenePrediction sp;
    sp.scene_id = 0;
    sp.instances.push_back(make_pred(1, 1, 0.9, mask_of(6, 6, {{0, 1}, {0, 2}, {0, 3}})));
    const ApSummary s = average_precision({sp}, {es});
    if (s.ap != 0.1 || s.ap50 != 1.0 || s.ap75 != 0.0) {
      detail = format("half-IoU fixture: ap %.17g ap50 %.17g ap75 %.17g", s.ap,
                      s.ap50, s.ap75);
      return false;
    }
  }

  // Fixture 3: perfect prediction, everything is exactly 1.
  {
    EvalScene es;
    es.id = 2;
    es.instances.push_back(make_gt(1, 2, mask_of(6, 6, {{2, 2}, {2, 3}})));
    ScenePrediction sp;
    sp.scene_id = 2;
    sp.instances.push_back(make_pred(1, 2, 0.7, mask_of(6, 6, {{2, 2}, {2, 3}})));
    const ApSummary s = average_precision({sp}, {es});
    if (s.ap != 1.0 || s.ap50 != 1.0 || s.ap75 != 1.0) {
      detail = "perfect fixture did not score 1.0";
      return false;
    }
  }

  // Threshold orderings on 100 random sparse layouts: ground truths live in
  // separated cells, predictions are jittered copies or pure noise, so each
  // prediction can overlap one ground truth at most.
  for (int layout = 0; layout < 100; ++layout) {
    Rng rng = Rng::stream(23, StreamTag::GradCheck, 7, layout);
    EvalScene es;
    es.id = 0;
    ScenePrediction sp;
    sp.scene_id = 0;
    int ann = 1;
    for (int cell = 0; cell < 6; ++cell) {
      const int cy = (cell / 3) * 12, cx = (cell % 3) * 12;
      const int kind = rng.uniform_int(0, 2); // 0: gt+pred, 1: gt only, 2: noise
      if (kind != 2) {
        Raster g(24, 36, 1, 0.0);
        for (int y = 0; y < 5; ++y)
          for (int x = 0; x < 5; ++x) g.at(cy + y, cx + x, 0) = 1.0;
        es.instances.push_back(make_gt(ann, 1, std::move(g)));
      }
      if (kind != 1) {
        Raster p(24, 36, 1, 0.0);
        const int dy = rng.uniform_int(0, 3), dx = rng.uniform_int(0, 3);
        for (int y = 0; y < 5; ++y)
          for (int x = 0; x < 5; ++x) p.at(cy + dy + y, cx + dx + x, 0) = 1.0;
        sp.instances.push_back(make_pred(ann, 1, rng.uniform(), std::move(p)));
      }
      ++ann;
    }
    if (es.instances.empty()) continue;
    const ApSummary s = average_precision({sp}, {es});
    if (!(s.ap50 >= s.ap && s.ap >= s.ap75)) {
      detail = format("ordering violated on layout %d: %.4f / %.4f / %.4f",
                      layout, s.ap50, s.ap, s.ap75);
      return false;
    }
  }

  detail = "three fixtures exact; AP50 >= AP >= AP75 on 100 random sets";
  return true;
}

} // namespace

int main() {
  std::printf("acceptance suite, one line per criterion\n");
  criterion(1, "gradients match finite differences", check_gradients);
  criterion(2, "assignment solver is exactly optimal", check_assignment);
  criterion(3, "forward pass and score fixtures", check_fixtures);
  criterion(4, "EMA teacher follows the closed form", check_ema);
  criterion(5, "CLI training is byte-deterministic", check_determinism);
  criterion(6, "easy suite reaches its IoU target", check_easy_suite);
  criterion(7, "hard-suite ablations point the right way", check_hard_suite);
  criterion(8, "average precision fixtures and orderings", check_average_precision);
  if (g_failures > 0)
    std::printf("%d criterion(s) FAILED\n", g_failures);
  else
    std::printf("all criteria passed\n");
  return g_failures == 0 ? 0 : 1;
}
