#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "dgseg/matching.hpp"
#include "dgseg/rng.hpp"
#include "support/oracles.hpp"

using namespace dgseg;

namespace {

std::vector<double> random_matrix(std::uint64_t seed, int rows, int cols) {
  Rng rng = Rng::stream(seed, StreamTag::GradCheck, 7);
  std::vector<double> m(static_cast<std::size_t>(rows) * cols);
  for (double& v : m) v = rng.uniform();
  return m;
}

Raster mask_from(int h, int w, std::vector<double> v) {
  Raster r(h, w, 1);
  r.data = std::move(v);
  return r;
}

} // namespace

TEST_CASE("box_iou basics") {
  const Box a{0, 0, 4, 4};
  CHECK(box_iou(a, a) == Catch::Approx(1.0));
  CHECK(box_iou(a, Box{4, 4, 8, 8}) == 0.0); // touching, no overlap
  CHECK(box_iou(a, Box{2, 0, 6, 4}) == Catch::Approx(8.0 / 24.0));
  CHECK(box_iou(a, Box{}) == 0.0);
}

TEST_CASE("depth consistency on the worked fixture") {
  // mask .8 .6 .4 .2 against pixel similarities .9 .4 .7 .3, tau 0.5:
  // qualifying mass (.8*.9 + .4*.7) over total mass 1.3.
  const Raster m = mask_from(2, 2, {0.8, 0.6, 0.4, 0.2});
  const std::vector<double> sim = {0.9, 0.4, 0.7, 0.3};
  CHECK(depth_consistency_score(m, sim, 0.5) ==
        Catch::Approx(0.7692307692307692).epsilon(1e-15));
}

TEST_CASE("depth consistency of an empty mask is zero") {
  const Raster m(2, 2, 1);
  CHECK(depth_consistency_score(m, {0.9, 0.9, 0.9, 0.9}, 0.5) == 0.0);
}

TEST_CASE("similarity exactly at tau_d does not count as coherent") {
  const Raster m = mask_from(1, 2, {1.0, 1.0});
  CHECK(depth_consistency_score(m, {0.5, 0.5}, 0.5) == 0.0);
}

TEST_CASE("matching score drops the prediction term exactly at alpha+beta=1") {
  // 1 - (0.8 + 0.2) is an exact IEEE zero; 1 - 0.8 - 0.2 is not. The
  // prediction term must not leak in through rounding.
  MatchWeights w;
  w.alpha = 0.8;
  w.beta = 0.2;
  const double with_pred = matching_score(0.5, 0.5, 1.0, w);
  const double without_pred = matching_score(0.5, 0.5, 0.0, w);
  CHECK(with_pred == without_pred);
  CHECK(with_pred == Catch::Approx(0.5));
}

TEST_CASE("hungarian matches the brute-force oracle on random matrices") {
  for (std::uint64_t seed = 1; seed <= 120; ++seed) {
    const int rows = 1 + static_cast<int>(seed % 5);
    const int cols = 1 + static_cast<int>((seed / 5) % 5);
    const std::vector<double> score = random_matrix(seed, rows, cols);
    const std::vector<int> got = hungarian_max(score, rows, cols);
    std::vector<int> oracle_map;
    oracle::brute_force_assignment(score, rows, cols, &oracle_map);
    // Evaluate both assignments through the same accumulation so exact
    // equality of the totals is meaningful.
    const double best = oracle::assignment_score(score, cols, oracle_map);
    const double achieved = oracle::assignment_score(score, cols, got);
    INFO("seed " << seed << " " << rows << "x" << cols);
    CHECK(achieved == best);

    // Structural checks: full assignment on the smaller side, no repeats.
    std::vector<char> used(cols, 0);
    int assigned = 0;
    for (int c : got)
      if (c >= 0) {
        CHECK(!used[c]);
        used[c] = 1;
        ++assigned;
      }
    CHECK(assigned == std::min(rows, cols));
  }
}

TEST_CASE("hungarian handles adversarial patterns") {
  SECTION("anti-greedy 2x2") {
    // Greedy grabs (0,0)=0.9 then (1,1)=0.1 for 1.0; optimal crosses for 1.6.
    const std::vector<double> s = {0.9, 0.8, 0.8, 0.1};
    const std::vector<int> m = hungarian_max(s, 2, 2);
    CHECK(m == std::vector<int>{1, 0});
  }
  SECTION("single row picks its best column") {
    const std::vector<double> s = {0.2, 0.9, 0.5};
    CHECK(hungarian_max(s, 1, 3) == std::vector<int>{1});
  }
}

TEST_CASE("hungarian with more rows than columns leaves rows unassigned") {
  const std::vector<double> s = {0.9, 0.2, 0.8};
  const std::vector<int> m = hungarian_max(s, 3, 1);
  int assigned = 0;
  for (int c : m) assigned += c >= 0;
  CHECK(assigned == 1);
  CHECK(m[0] == 0); // 0.9 wins the only column
}

TEST_CASE("hungarian ties resolve deterministically") {
  const std::vector<double> s = {0.5, 0.5, 0.5, 0.5};
  const std::vector<int> a = hungarian_max(s, 2, 2);
  for (int i = 0; i < 64; ++i) CHECK(hungarian_max(s, 2, 2) == a);
  CHECK(oracle::assignment_score(s, 2, a) == 1.0);
}

TEST_CASE("assign_pseudo_masks respects the reliability threshold") {
  // One box, one candidate whose mask exactly fills the box: IoU 1 and
  // perfect depth coherence, so the score is alpha + beta = 1 > tau_m.
  const int H = 8, W = 8;
  Raster good(H, W, 1);
  for (int y = 2; y < 6; ++y)
    for (int x = 2; x < 6; ++x) good.at(y, x) = 0.9;
  const std::vector<double> sim(static_cast<std::size_t>(H) * W, 0.95);
  const std::vector<Box> boxes = {Box{2, 2, 6, 6}};

  MatchWeights w;
  SECTION("confident candidate is accepted and binarized") {
    const auto out = assign_pseudo_masks(
        boxes, {make_candidate(good, Raster(H, W, 1), PixelLoc{4, 4})}, sim, w);
    REQUIRE(out[0].has_value());
    CHECK(out[0]->candidate == 0);
    CHECK(out[0]->score > w.tau_m);
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x)
        CHECK(out[0]->mask.at(y, x) == ((y >= 2 && y < 6 && x >= 2 && x < 6) ? 1.0 : 0.0));
  }
  SECTION("poorly aligned candidate is rejected") {
    Raster off(H, W, 1);
    off.at(0, 0) = 0.9; // tiny mask in the corner: IoU ~ 0
    const auto out = assign_pseudo_masks(
        boxes, {make_candidate(off, Raster(H, W, 1), PixelLoc{0, 0})}, sim, w);
    CHECK_FALSE(out[0].has_value());
  }
  SECTION("score exactly at tau_m is rejected (strictly greater)") {
    MatchWeights strict = w;
    strict.tau_m = 1.0; // the good candidate scores exactly 1.0
    const auto out = assign_pseudo_masks(
        boxes, {make_candidate(good, Raster(H, W, 1), PixelLoc{4, 4})}, sim, strict);
    CHECK_FALSE(out[0].has_value());
  }
  SECTION("no candidates yields all nullopt") {
    const auto out = assign_pseudo_masks(boxes, {}, sim, w);
    REQUIRE(out.size() == 1u);
    CHECK_FALSE(out[0].has_value());
  }
}

TEST_CASE("assign_pseudo_masks gives each candidate to at most one box") {
  const int H = 8, W = 8;
  const auto block_mask = [&](int x0, int x1) {
    Raster m(H, W, 1);
    for (int y = 1; y < 7; ++y)
      for (int x = x0; x < x1; ++x) m.at(y, x) = 0.95;
    return m;
  };
  const std::vector<Box> boxes = {Box{0, 1, 4, 7}, Box{4, 1, 8, 7}};
  std::vector<Candidate> cands;
  cands.push_back(make_candidate(block_mask(0, 4), Raster(H, W, 1), PixelLoc{2, 4}));
  cands.push_back(make_candidate(block_mask(4, 8), Raster(H, W, 1), PixelLoc{6, 4}));
  const std::vector<double> sim(static_cast<std::size_t>(H) * W, 0.95);
  const auto out = assign_pseudo_masks(boxes, cands, sim, MatchWeights{});
  REQUIRE(out[0].has_value());
  REQUIRE(out[1].has_value());
  CHECK(out[0]->candidate == 0);
  CHECK(out[1]->candidate == 1);
}

TEST_CASE("make_candidate summarizes the binarized support") {
  Raster m(4, 4, 1);
  m.at(1, 1) = 0.8;
  m.at(1, 2) = 0.6;
  m.at(2, 1) = 0.4; // below threshold: not support
  const Candidate c = make_candidate(m, Raster(4, 4, 1), PixelLoc{1, 1});
  CHECK(c.box.x0 == 1.0);
  CHECK(c.box.x1 == 3.0);
  CHECK(c.box.y0 == 1.0);
  CHECK(c.box.y1 == 2.0);
  CHECK(c.pred_score == Catch::Approx(0.7));

  const Candidate none = make_candidate(Raster(4, 4, 1), Raster(4, 4, 1), PixelLoc{});
  CHECK(none.box.empty());
  CHECK(none.pred_score == 0.0);
}

TEST_CASE("match weights validate their ranges") {
  MatchWeights bad;
  bad.alpha = 0.9;
  bad.beta = 0.2;
  CHECK_THROWS_AS(bad.validate(), ValidationError);
  bad.alpha = -0.1;
  bad.beta = 0.2;
  CHECK_THROWS_AS(bad.validate(), ValidationError);
}
