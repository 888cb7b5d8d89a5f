#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <set>

#include "bcdet/detection.hpp"
#include "bcdet/rng.hpp"
#include "doctest.h"
#include "oracles.hpp"

using namespace bcdet;

namespace {

// Side lengths in [1, extent/2]; any two such boxes stay inside the
// decode clamp ratio of 1000/16.
Box random_box(SplitMix64& rng, double extent = 100.0) {
  const double x1 = rng.uniform(0, extent);
  const double y1 = rng.uniform(0, extent);
  return {x1, y1, x1 + rng.uniform(1.0, extent / 2),
          y1 + rng.uniform(1.0, extent / 2)};
}

bool same_detections(const std::vector<Detection>& a,
                     const std::vector<Detection>& b) {
  if (a.size() != b.size()) return false;
  for (size_t i = 0; i < a.size(); ++i)
    if (a[i].score != b[i].score || a[i].class_id != b[i].class_id ||
        a[i].box.x1 != b[i].box.x1 || a[i].box.y2 != b[i].box.y2)
      return false;
  return true;
}

}  // namespace

TEST_CASE("iou examples") {
  Box a{0, 0, 2, 2};
  CHECK(iou(a, a) == 1.0);
  CHECK(iou(a, Box{5, 5, 7, 7}) == 0.0);
  CHECK(iou(a, Box{1, 1, 3, 3}) == doctest::Approx(1.0 / 7).epsilon(1e-12));
  CHECK(iou(Box{0, 0, 0, 0}, Box{0, 0, 0, 0}) == 0.0);  // empty union
}

TEST_CASE("giou examples") {
  Box a{0, 0, 1, 1};
  CHECK(giou(a, a) == 1.0);
  CHECK(giou(a, Box{2, 0, 3, 1}) ==
        doctest::Approx(-1.0 / 3).epsilon(1e-12));
  // Union fills the enclosing box: giou == iou.
  Box left{0, 0, 1, 1}, right{1, 0, 2, 1};
  CHECK(giou(left, right) == iou(left, right));
}

TEST_CASE("iou/giou properties over random boxes") {
  SplitMix64 rng(1);
  for (int i = 0; i < 300; ++i) {
    Box a = random_box(rng), b = random_box(rng);
    const double gi = giou(a, b);
    CHECK(gi <= iou(a, b) + 1e-12);
    CHECK(gi > -1.0);
    CHECK(gi <= 1.0);
    CHECK(giou(a, b) == giou(b, a));
    CHECK(iou(a, b) == iou(b, a));
    // Translation invariance.
    const double dx = rng.uniform(-50, 50), dy = rng.uniform(-50, 50);
    Box at{a.x1 + dx, a.y1 + dy, a.x2 + dx, a.y2 + dy};
    Box bt{b.x1 + dx, b.y1 + dy, b.x2 + dx, b.y2 + dy};
    CHECK(iou(at, bt) == doctest::Approx(iou(a, b)).epsilon(1e-12));
    CHECK(giou(at, bt) == doctest::Approx(giou(a, b)).epsilon(1e-12));
    // IoU scale invariance.
    const double s = rng.uniform(0.1, 5.0);
    Box as{a.x1 * s, a.y1 * s, a.x2 * s, a.y2 * s};
    Box bs{b.x1 * s, b.y1 * s, b.x2 * s, b.y2 * s};
    CHECK(iou(as, bs) == doctest::Approx(iou(a, b)).epsilon(1e-12));
  }
}

TEST_CASE("anchor grid layout") {
  auto single = generate_anchors(1, 1, 32, {32});
  REQUIRE(single.size() == 1);
  CHECK(single[0].x1 == 0.0);
  CHECK(single[0].y1 == 0.0);
  CHECK(single[0].x2 == 32.0);
  CHECK(single[0].y2 == 32.0);

  auto grid = generate_anchors(3, 4, 32, {32, 64, 128});
  CHECK(grid.size() == 3u * 4 * 3);
  // All sizes at cell (0,0) share the center (16,16).
  for (int s = 0; s < 3; ++s) {
    CHECK(grid[static_cast<size_t>(s)].cx() == 16.0);
    CHECK(grid[static_cast<size_t>(s)].cy() == 16.0);
  }
  // Row-major cells, size-minor: anchor (i=1,j=2,s=0) at index (1*4+2)*3.
  CHECK(grid[(1 * 4 + 2) * 3].cx() == doctest::Approx(2.5 * 32));
  CHECK(grid[(1 * 4 + 2) * 3].cy() == doctest::Approx(1.5 * 32));
}

TEST_CASE("delta coding examples and roundtrip") {
  Box anchor{10, 20, 42, 52};
  auto z = encode_deltas(anchor, anchor);
  for (double v : z) CHECK(v == doctest::Approx(0.0).epsilon(1e-15));

  Box doubled = decode_deltas(anchor, {0, 0, std::log(2.0), std::log(2.0)});
  CHECK(doubled.width() == doctest::Approx(2 * anchor.width()).epsilon(1e-12));
  CHECK(doubled.height() ==
        doctest::Approx(2 * anchor.height()).epsilon(1e-12));
  CHECK(doubled.cx() == doctest::Approx(anchor.cx()).epsilon(1e-12));
  CHECK(doubled.cy() == doctest::Approx(anchor.cy()).epsilon(1e-12));

  SplitMix64 rng(2);
  double worst = 0;
  for (int i = 0; i < 10000; ++i) {
    Box a = random_box(rng), g = random_box(rng);
    Box back = decode_deltas(a, encode_deltas(a, g));
    for (auto [have, want] :
         {std::pair{back.x1, g.x1}, {back.y1, g.y1}, {back.x2, g.x2},
          {back.y2, g.y2}})
      worst = std::max(worst, std::fabs(have - want) /
                                  std::max(1.0, std::fabs(want)));
  }
  CHECK(worst < 1e-9);

  CHECK_THROWS_AS(encode_deltas(anchor, Box{0, 0, 0, 5}),
                  std::invalid_argument);
  CHECK_THROWS_AS(encode_deltas(Box{0, 0, 0, 0}, anchor),
                  std::invalid_argument);
  // Decode clamps dw/dh at ln(1000/16).
  Box wild = decode_deltas(Box{0, 0, 16, 16}, {0, 0, 50.0, 50.0});
  CHECK(wild.width() == doctest::Approx(1000.0).epsilon(1e-9));
}

TEST_CASE("uniform matching follows distance, demotion and ignore rules") {
  const auto anchors = generate_anchors(8, 8, 32, {32});

  SUBCASE("no ground truth: everything negative") {
    auto m = uniform_match(anchors, {}, 4);
    CHECK(m.positive_count() == 0);
    for (int a : m.assignment) CHECK(a == MatchResult::kNegative);
  }

  SUBCASE("one GT exactly on one anchor with k=1") {
    auto m = uniform_match(anchors, {Box{32, 32, 64, 64}}, 1);
    CHECK(m.positive_count() == 1);
    // Cell (1,1) holds the matching anchor.
    CHECK(m.assignment[static_cast<size_t>(1 * 8 + 1)] == 0);
  }

  SUBCASE("two distant GTs with k=4 give exactly 8 positives") {
    std::vector<Box> gts = {Box{32, 32, 96, 96}, Box{128, 128, 192, 192}};
    auto m = uniform_match(anchors, gts, 4);
    CHECK(m.positive_count() == 8);
    CHECK(m.positive_count() <= 4 * static_cast<int>(gts.size()));
  }

  SUBCASE("low-IoU selections demote to negative") {
    // A 2-pixel GT is nearest to some anchors but overlaps none enough.
    auto m = uniform_match(anchors, {Box{40, 40, 42, 42}}, 4);
    CHECK(m.positive_count() == 0);
  }

  SUBCASE("unselected anchors above 0.7 IoU are ignored") {
    const auto dup = generate_anchors(1, 1, 32, {32, 32});
    auto m = uniform_match(dup, {Box{0, 0, 32, 32}}, 1);
    REQUIRE(dup.size() == 2);
    CHECK(m.assignment[0] == 0);
    CHECK(m.assignment[1] == MatchResult::kIgnore);
  }

  SUBCASE("positive count never exceeds k * |gts|") {
    SplitMix64 rng(3);
    for (int trial = 0; trial < 50; ++trial) {
      std::vector<Box> gts;
      const int n = 1 + static_cast<int>(rng.uniform_int(6));
      for (int i = 0; i < n; ++i) gts.push_back(random_box(rng, 250.0));
      const int k = 1 + static_cast<int>(rng.uniform_int(6));
      auto m = uniform_match(anchors, gts, k);
      CHECK(m.positive_count() <= k * n);
    }
  }
}

TEST_CASE("focal loss terms") {
  CHECK(focal_term(1.0 - 1e-7, 1) == doctest::Approx(0.0).epsilon(1e-10));
  CHECK(focal_term(1e-7, 0) == doctest::Approx(0.0).epsilon(1e-10));
  CHECK(focal_term(0.5, 1) ==
        doctest::Approx(0.25 * 0.25 * std::log(2.0)).epsilon(1e-12));
  CHECK(focal_term(0.5, 0) ==
        doctest::Approx(0.75 * 0.25 * std::log(2.0)).epsilon(1e-12));

  // gamma=0, alpha=0.5 halves plain binary cross-entropy.
  SplitMix64 rng(4);
  for (int i = 0; i < 200; ++i) {
    const double p = rng.uniform(1e-6, 1 - 1e-6);
    const int t = rng.uniform01() < 0.5 ? 1 : 0;
    const double bce = t == 1 ? -std::log(p) : -std::log(1 - p);
    CHECK(std::fabs(focal_term(p, t, 0.5, 0.0) - 0.5 * bce) < 1e-12);
  }
}

TEST_CASE("giou loss bounds") {
  Box a{0, 0, 1, 1};
  CHECK(giou_loss_term(a, a) == 0.0);
  CHECK(giou_loss_term(a, Box{2, 0, 3, 1}) ==
        doctest::Approx(4.0 / 3).epsilon(1e-12));
  SplitMix64 rng(5);
  for (int i = 0; i < 300; ++i) {
    const double l = giou_loss_term(random_box(rng), random_box(rng));
    CHECK(l >= 0.0);
    CHECK(l < 2.0);
  }
}

TEST_CASE("nms basics") {
  Detection d1{{0, 0, 10, 10}, 0, 0.9};
  Detection d2{{0, 0, 10, 10}, 0, 0.8};
  auto kept = nms({d1, d2}, 0.6);
  REQUIRE(kept.size() == 1);
  CHECK(kept[0].score == 0.9);

  Detection d3{{0, 0, 10, 10}, 1, 0.8};  // other class survives
  kept = nms({d1, d3}, 0.6);
  CHECK(kept.size() == 2);
}

TEST_CASE("nms equals the brute-force oracle and is order independent") {
  SplitMix64 rng(6);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<Detection> dets;
    for (int i = 0; i < 50; ++i)
      dets.push_back({random_box(rng, 60.0),
                      static_cast<int>(rng.uniform_int(3)),
                      rng.uniform(0.01, 1.0)});
    const double thr = rng.uniform(0.2, 0.8);
    auto ours = nms(dets, thr);
    auto ref = oracle::nms(dets, thr);
    CHECK(same_detections(ours, ref));

    // Shuffled input gives the same kept set (scores are unique a.s.).
    std::vector<Detection> shuffled = dets;
    rng.shuffle(shuffled);
    CHECK(same_detections(nms(shuffled, thr), ours));
  }
}

TEST_CASE("nms kept set grows with the threshold") {
  SplitMix64 rng(7);
  for (int trial = 0; trial < 30; ++trial) {
    std::vector<Detection> dets;
    for (int i = 0; i < 40; ++i)
      dets.push_back({random_box(rng, 50.0),
                      static_cast<int>(rng.uniform_int(2)),
                      rng.uniform(0.01, 1.0)});
    auto loose = nms(dets, 0.8);
    auto tight = nms(dets, 0.3);
    std::set<double> loose_scores, tight_scores;
    for (const auto& d : loose) loose_scores.insert(d.score);
    for (const auto& d : tight) tight_scores.insert(d.score);
    for (double s : tight_scores) CHECK(loose_scores.count(s) == 1);
  }
}

TEST_CASE("decode_detections: threshold, suppression and caps") {
  const auto anchors = generate_anchors(2, 2, 32, {32});
  const int K = 2;
  std::vector<double> scores(anchors.size() * K, 0.001);  // below threshold
  std::vector<double> deltas(anchors.size() * 4, 0.0);
  scores[0 * K + 1] = 0.9;  // anchor 0, class 1
  scores[3 * K + 1] = 0.8;  // anchor 3, class 1
  PostprocessConfig pp;
  auto dets = decode_detections(scores, deltas, anchors, K, 64, pp);
  REQUIRE(dets.size() == 2);
  CHECK(dets[0].class_id == 1);
  CHECK(dets[0].score == 0.9);
  CHECK(dets[0].box.x1 == 0.0);  // anchor box, clipped
  CHECK(dets[1].score == 0.8);

  // Identical boxes on the same class collapse to one.
  scores.assign(anchors.size() * K, 0.0);
  scores[0 * K + 0] = 0.9;
  scores[1 * K + 0] = 0.7;  // same cell? no: anchor 1 is cell (0,1)
  auto dets2 = decode_detections(scores, deltas, anchors, K, 64, pp);
  CHECK(dets2.size() == 2);  // different cells, IoU 0
}

TEST_CASE("detection export line format") {
  Detection d{{1.234, 5.678, 99.999, 100.0}, 2, 0.876543219};
  CHECK(format_detection_line(7, d) ==
        "7 2 0.876543 1.23 5.68 100.00 100.00");
}
