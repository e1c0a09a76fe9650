#include <doctest.h>

#include <cmath>

#include "pdet/metrics.hpp"
#include "pdet/world.hpp"

using namespace pdet;

namespace {

const Box kGt{0.5, 0.5, 0.3, 0.3};
const Box kFar{0.05, 0.05, 0.05, 0.05};

}  // namespace

TEST_CASE("world generation is seed deterministic") {
    WorldConfig cfg;
    const ToyImage a = make_image(cfg, 12345);
    const ToyImage b = make_image(cfg, 12345);
    CHECK(a.pixels == b.pixels);
    CHECK(a.objects == b.objects);
    const ToyImage c = make_image(cfg, 12346);
    CHECK(a.pixels != c.pixels);
}

TEST_CASE("world objects respect the config") {
    WorldConfig cfg;
    cfg.objects_min = 1;
    cfg.objects_max = 3;
    for (std::uint64_t seed = 0; seed < 64; ++seed) {
        const ToyImage img = make_image(cfg, seed);
        CHECK(img.objects.size() >= 1);
        CHECK(img.objects.size() <= 3);
        for (const GtObject& obj : img.objects) {
            CHECK(obj.cls >= 0);
            CHECK(obj.cls < cfg.num_classes);
            CHECK(obj.box.w >= cfg.box_min);
            CHECK(obj.box.w <= cfg.box_max);
            const Corners c = to_corners(obj.box);
            CHECK(c.x1 >= 0.0);
            CHECK(c.x2 <= 1.0);
            CHECK(c.y1 >= 0.0);
            CHECK(c.y2 <= 1.0);
        }
    }
}

TEST_CASE("world: first-class pool restricts the first object") {
    WorldConfig cfg;
    const std::vector<int> pool = {2, 5};
    for (std::uint64_t seed = 100; seed < 140; ++seed) {
        const ToyImage img = make_image(cfg, seed, pool);
        CHECK((img.objects[0].cls == 2 || img.objects[0].cls == 5));
    }
}

TEST_CASE("glyphs render visible pixels inside the box") {
    for (int cls = 0; cls < 8; ++cls) {
        std::vector<double> pixels(32 * 32, 0.0);
        render_glyph(pixels, 32, GtObject{cls, Box{0.5, 0.5, 0.4, 0.4}});
        double mass = 0.0;
        for (double p : pixels) mass += std::abs(p);
        CHECK(mass > 1.0);
    }
}

// ---- Average precision: ten hand-enumerated PR fixtures ----

TEST_CASE("ap fixture 1: single perfect detection") {
    const std::vector<GtBox> gt = {{0, kGt}};
    const std::vector<ScoredBox> dets = {{0, 0.9, kGt}};
    CHECK(average_precision(dets, gt) == 1.0);
}

TEST_CASE("ap fixture 2: detection below the IoU threshold") {
    const std::vector<GtBox> gt = {{0, Box{0.5, 0.5, 0.3, 0.3}}};
    // Shifted by half a width: IoU = 1/3 < 0.5.
    const std::vector<ScoredBox> dets = {{0, 0.9, Box{0.65, 0.5, 0.3, 0.3}}};
    CHECK(iou(gt[0].box, dets[0].box) == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
    CHECK(average_precision(dets, gt) == 0.0);
}

TEST_CASE("ap fixture 3: no ground truth means AP 0 by convention") {
    const std::vector<ScoredBox> dets = {{0, 0.9, kGt}, {1, 0.8, kGt}};
    CHECK(average_precision(dets, {}) == 0.0);
}

TEST_CASE("ap fixture 4: no detections") {
    const std::vector<GtBox> gt = {{0, kGt}};
    CHECK(average_precision({}, gt) == 0.0);
}

TEST_CASE("ap fixture 5: two clean hits") {
    const std::vector<GtBox> gt = {{0, kGt}, {1, kGt}};
    const std::vector<ScoredBox> dets = {{0, 0.9, kGt}, {1, 0.8, kGt}};
    CHECK(average_precision(dets, gt) == 1.0);
}

TEST_CASE("ap fixture 6: hit, miss, hit") {
    const std::vector<GtBox> gt = {{0, kGt}, {1, kGt}};
    const std::vector<ScoredBox> dets = {
        {0, 0.9, kGt}, {0, 0.8, kFar}, {1, 0.7, kGt}};
    // Ranked TP, FP, TP: AP = 0.5 * 1 + 0.5 * (2/3).
    const double expected = 0.5 * (2.0 / 3.0) + 0.5 * 1.0;
    CHECK(average_precision(dets, gt) == expected);
}

TEST_CASE("ap fixture 7: top-ranked miss halves the area") {
    const std::vector<GtBox> gt = {{0, kGt}, {1, kGt}};
    const std::vector<ScoredBox> dets = {{0, 0.9, kFar}, {0, 0.8, kGt}};
    // Ranked FP, TP: AP = 0.5 * 0.5.
    CHECK(average_precision(dets, gt) == 0.25);
}

TEST_CASE("ap fixture 8: five detections over three ground truths") {
    const std::vector<GtBox> gt = {{0, kGt}, {1, kGt}, {2, kGt}};
    const std::vector<ScoredBox> dets = {{0, 0.95, kGt},
                                         {0, 0.90, kFar},
                                         {1, 0.85, kGt},
                                         {1, 0.80, kFar},
                                         {2, 0.75, kGt}};
    // Ranked TP FP TP FP TP; precision envelope 1, 2/3, 3/5 over the three
    // recall increments of 1/3 each. Terms in ascending-rank order.
    double expected = (1.0 - 2.0 / 3.0) * (3.0 / 5.0);
    expected += (2.0 / 3.0 - 1.0 / 3.0) * (2.0 / 3.0);
    expected += (1.0 / 3.0) * 1.0;
    CHECK(average_precision(dets, gt) == expected);
}

TEST_CASE("ap fixture 9: duplicate detection counts as a false positive") {
    const std::vector<GtBox> gt = {{0, kGt}};
    const std::vector<ScoredBox> dets = {{0, 0.9, kGt}, {0, 0.8, kGt}};
    CHECK(average_precision(dets, gt) == 1.0);
}

TEST_CASE("ap fixture 10: greedy matching keeps each ground truth single-use") {
    const Box b1{0.3, 0.5, 0.2, 0.4};
    const Box b2{0.7, 0.5, 0.2, 0.4};
    const std::vector<GtBox> gt = {{0, b1}, {0, b2}};
    const std::vector<ScoredBox> dets = {{0, 0.9, b1}, {0, 0.8, b2}, {0, 0.7, b1}};
    CHECK(average_precision(dets, gt) == 1.0);
}

TEST_CASE("ap greedy matching prefers the highest-IoU ground truth") {
    // One detection overlapping two gts; it must consume the better one,
    // leaving the other for later detections.
    const Box gt_left{0.40, 0.5, 0.2, 0.4};
    const Box gt_right{0.62, 0.5, 0.2, 0.4};
    const Box det_mid{0.58, 0.5, 0.2, 0.4};
    REQUIRE(iou(det_mid, gt_right) > iou(det_mid, gt_left));
    REQUIRE(iou(det_mid, gt_right) >= 0.5);

    const std::vector<GtBox> gt = {{0, gt_left}, {0, gt_right}};
    const std::vector<ScoredBox> dets = {{0, 0.9, det_mid}, {0, 0.8, gt_left}};
    CHECK(average_precision(dets, gt) == 1.0);
}

TEST_CASE("map metrics group per-class AP by task") {
    const std::vector<std::vector<int>> tasks = {{0, 1}, {2}};
    const std::map<int, double> ap = {{0, 0.4}, {1, 0.6}, {2, 0.8}};

    const MapMetrics at1 = compute_map_metrics(ap, tasks, 1);
    REQUIRE(at1.map_previous.has_value());
    CHECK(*at1.map_previous == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(at1.map_current == doctest::Approx(0.8).epsilon(1e-15));
    CHECK(at1.map_all == doctest::Approx(0.6).epsilon(1e-15));

    const MapMetrics at0 = compute_map_metrics(ap, tasks, 0);
    CHECK(!at0.map_previous.has_value());
    CHECK(at0.map_current == doctest::Approx(0.5).epsilon(1e-15));

    const std::map<int, double> perfect = {{0, 1.0}, {1, 1.0}, {2, 1.0}};
    const MapMetrics all_one = compute_map_metrics(perfect, tasks, 1);
    CHECK(*all_one.map_previous == 1.0);
    CHECK(all_one.map_current == 1.0);
    CHECK(all_one.map_all == 1.0);
}

TEST_CASE("map metrics match a flat per-class oracle on a 4-task split") {
    const std::vector<std::vector<int>> tasks = {{0, 1}, {2}, {3, 4, 5}, {6}};
    std::map<int, double> ap;
    for (int c = 0; c < 7; ++c) ap[c] = 0.1 * (c + 1);

    const MapMetrics m = compute_map_metrics(ap, tasks, 3);
    double prev = 0.0, all = 0.0;
    for (int c = 0; c < 6; ++c) prev += ap[c];
    for (int c = 0; c < 7; ++c) all += ap[c];
    CHECK(*m.map_previous == doctest::Approx(prev / 6.0).epsilon(1e-15));
    CHECK(m.map_current == doctest::Approx(ap[6]).epsilon(1e-15));
    CHECK(m.map_all == doctest::Approx(all / 7.0).epsilon(1e-15));

    // Class-count-weighted recombination identity.
    CHECK(std::abs(7.0 * m.map_all - (6.0 * *m.map_previous + 1.0 * m.map_current)) <=
          1e-12);

    std::map<int, double> missing = ap;
    missing.erase(3);
    CHECK_THROWS(compute_map_metrics(missing, tasks, 3));
}
