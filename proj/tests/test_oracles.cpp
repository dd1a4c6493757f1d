#include <cmath>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include <catch2/catch_amalgamated.hpp>

#include "tubedet/geometry.hpp"
#include "tubedet/oracles.hpp"
#include "tubedet/rng.hpp"

using namespace tubedet;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

/// Detector whose scores come from a plain function; used to script
/// filtering and tracking scenarios exactly.
struct ScriptedDetector : DetectorOracle {
    std::function<double(std::string_view, int, int, const BoundingBox&)> fn;

    std::vector<double> score_boxes(std::string_view video_id, int frame, int class_id,
                                    std::span<const BoundingBox> boxes) const override {
        std::vector<double> out;
        out.reserve(boxes.size());
        for (const auto& b : boxes) out.push_back(fn(video_id, frame, class_id, b));
        return out;
    }
};

BoundingBox box_at(double x, double y, double w = 10.0, double h = 10.0) {
    return BoundingBox(x, y, x + w, y + h);
}

}  // namespace

TEST_CASE("filter_proposals keeps boxes whose best class score reaches the threshold") {
    // Identify boxes by x1; two classes with complementary scores.
    ScriptedDetector det;
    det.fn = [](std::string_view, int, int class_id, const BoundingBox& b) {
        if (b.x1 == 0.0) return class_id == 0 ? -2.0 : -1.5;    // best -1.5: dropped
        if (b.x1 == 20.0) return class_id == 0 ? -1.0 : -2.0;   // best -1.0: kept
        if (b.x1 == 40.0) return class_id == 0 ? -1.2 : -1.05;  // best -1.05: kept
        return class_id == 0 ? -1.1 : -3.0;                     // best == threshold: kept
    };
    const std::vector<BoundingBox> props{box_at(0, 0), box_at(20, 0), box_at(40, 0),
                                         box_at(60, 0)};
    auto kept = filter_proposals(props, det, "v", 0, 2, -1.1);
    REQUIRE(kept.size() == 3);
    CHECK(kept[0] == props[1]);  // input order preserved
    CHECK(kept[1] == props[2]);
    CHECK(kept[2] == props[3]);  // >= threshold is inclusive

    CHECK(filter_proposals({}, det, "v", 0, 2, -1.1).empty());

    // With one class only, the max over classes is that class's score.
    auto one = filter_proposals(props, det, "v", 0, 1, -1.1);
    REQUIRE(one.size() == 2);
    CHECK(one[0] == props[1]);
    CHECK(one[1] == props[3]);
}

TEST_CASE("synthetic detector score is affine in the best overlap") {
    Rng rng(1);
    const BoundingBox gt(0, 0, 10, 10);
    const BoundingBox half(0, 0, 5, 10);  // IoU 0.5
    std::vector<BoundingBox> gts{gt};

    CHECK(synthetic_detector_score(gt, gts, 2.0, -1.3, 0.0, rng) == 2.0 * 1.0 - 1.3);
    CHECK(synthetic_detector_score(half, gts, 2.0, -1.3, 0.0, rng) == 2.0 * 0.5 - 1.3);
    // no ground truth on the frame: IoU counts as zero
    CHECK(synthetic_detector_score(gt, {}, 2.0, -1.3, 0.0, rng) == -1.3);
    CHECK_THROWS_AS(synthetic_detector_score(gt, gts, 0.0, -1.3, 0.0, rng),
                    std::invalid_argument);
    CHECK_THROWS_AS(synthetic_detector_score(gt, gts, -1.0, -1.3, 0.0, rng),
                    std::invalid_argument);
}

TEST_CASE("synthetic detector with sigma 0 reproduces the affine map exactly") {
    std::vector<GroundTruthObject> gts{
        {"v", 3, 0, 0, BoundingBox(10, 10, 30, 30)},
        {"v", 3, 0, 1, BoundingBox(100, 100, 140, 140)},
        {"v", 3, 1, 0, BoundingBox(50, 50, 70, 70)},
    };
    SyntheticDetector det(gts, 2.0, -1.3, 0.0, 42);

    // overlaps its class gt at IoU 1 -> a + b
    CHECK(det.score_box("v", 3, 0, BoundingBox(10, 10, 30, 30)) == 0.7);
    // max over the two class-0 instances decides
    const BoundingBox near_second(100, 100, 140, 120);  // IoU 0.5 with instance 1
    CHECK(det.score_box("v", 3, 0, near_second) == 2.0 * 0.5 - 1.3);
    // wrong class / frame / video -> IoU 0 -> b
    CHECK(det.score_box("v", 3, 1, BoundingBox(10, 10, 30, 30)) == -1.3);
    CHECK(det.score_box("v", 2, 0, BoundingBox(10, 10, 30, 30)) == -1.3);
    CHECK(det.score_box("w", 3, 0, BoundingBox(10, 10, 30, 30)) == -1.3);
    CHECK_THROWS_AS(SyntheticDetector(gts, 0.0, -1.3, 0.0, 42), std::invalid_argument);
}

TEST_CASE("synthetic detector noise is per-box deterministic with the right statistics") {
    SyntheticDetector det({}, 2.0, -1.3, 0.2, 7);

    std::vector<BoundingBox> boxes;
    Rng gen(99);
    for (int i = 0; i < 2000; ++i) {
        const double x = gen.uniform(0.0, 200.0), y = gen.uniform(0.0, 200.0);
        boxes.push_back(BoundingBox(x, y, x + 5.0 + gen.uniform(0.0, 20.0),
                                    y + 5.0 + gen.uniform(0.0, 20.0)));
    }
    auto scores = det.score_boxes("v", 0, 0, boxes);

    // identical query in a different batch shape and order: same values
    for (std::size_t i : {std::size_t{0}, std::size_t{777}, std::size_t{1999}})
        CHECK(det.score_box("v", 0, 0, boxes[i]) == scores[i]);

    // with no ground truth every score is b + noise
    double mean = 0.0, var = 0.0;
    for (double s : scores) mean += s;
    mean /= static_cast<double>(scores.size());
    for (double s : scores) var += (s - mean) * (s - mean);
    var /= static_cast<double>(scores.size() - 1);
    CHECK_THAT(mean, Catch::Matchers::WithinAbs(-1.3, 3.0 * 0.2 / std::sqrt(2000.0) + 1e-9));
    CHECK_THAT(std::sqrt(var), Catch::Matchers::WithinAbs(0.2, 0.02));

    // different seed, different noise stream
    SyntheticDetector other({}, 2.0, -1.3, 0.2, 8);
    CHECK(other.score_box("v", 0, 0, boxes[0]) != scores[0]);
}

TEST_CASE("file-backed detector resolves exact, fuzzy, then -inf") {
    std::vector<Detection> dets{
        {"v", 0, 0, 0.9, BoundingBox(0, 0, 100, 100)},
        {"v", 0, 0, 0.4, BoundingBox(0, 0, 100, 95)},
        {"v", 0, 1, 0.7, BoundingBox(0, 0, 100, 100)},
    };
    FileBackedDetector det(dets);

    // exact coordinates win even though the other stored box overlaps more
    CHECK(det.score_box("v", 0, 0, BoundingBox(0, 0, 100, 95)) == 0.4);
    CHECK(det.score_box("v", 0, 0, BoundingBox(0, 0, 100, 100)) == 0.9);
    // fuzzy: IoU 0.96 with the first, best overlap selects its score
    CHECK(det.score_box("v", 0, 0, BoundingBox(0, 0, 100, 96)) == 0.4);
    CHECK(det.score_box("v", 0, 0, BoundingBox(0, 4, 100, 100)) == 0.9);
    // fuzzy below the 0.9 floor: unknown box
    CHECK(det.score_box("v", 0, 0, BoundingBox(0, 0, 100, 80)) == -kInf);
    // unknown (video, frame, class) triples
    CHECK(det.score_box("v", 1, 0, BoundingBox(0, 0, 100, 100)) == -kInf);
    CHECK(det.score_box("w", 0, 0, BoundingBox(0, 0, 100, 100)) == -kInf);
    CHECK(det.score_box("v", 0, 2, BoundingBox(0, 0, 100, 100)) == -kInf);
}

TEST_CASE("iou-chain tracker picks the best-overlapping proposal per frame") {
    std::vector<VideoMeta> videos{{"v", 5, 200.0, 200.0}};
    // frame -> proposals
    std::vector<std::vector<BoundingBox>> frames(5);
    const BoundingBox anchor_box(50, 50, 70, 70);
    frames[3] = {box_at(0, 0, 20, 20), BoundingBox(55, 50, 75, 70),
                 BoundingBox(58, 50, 78, 70)};
    frames[4] = {BoundingBox(60, 50, 80, 70)};
    IouChainTracker tracker(videos, {{"v", frames}});

    const Detection anchor{"v", 2, 0, 1.0, anchor_box};
    auto steps = tracker.track("v", 0, anchor, TrackDirection::forward);
    REQUIRE(steps.size() == 2);
    CHECK(steps[0].frame == 3);
    CHECK(steps[0].box == BoundingBox(55, 50, 75, 70));  // IoU 15/25 beats 12/28
    CHECK(steps[0].confidence == iou(anchor_box, BoundingBox(55, 50, 75, 70)));
    CHECK(steps[1].frame == 4);
    CHECK(steps[1].box == BoundingBox(60, 50, 80, 70));
    CHECK(steps[1].confidence == iou(BoundingBox(55, 50, 75, 70), BoundingBox(60, 50, 80, 70)));

    // backward from frame 2: frames 1, 0 have no proposals -> carry the
    // previous box with confidence 0
    auto back = tracker.track("v", 0, anchor, TrackDirection::backward);
    REQUIRE(back.size() == 2);
    CHECK(back[0].frame == 1);
    CHECK(back[0].box == anchor_box);
    CHECK(back[0].confidence == 0.0);
    CHECK(back[1].frame == 0);
    CHECK(back[1].box == anchor_box);

    CHECK_THROWS_AS(tracker.track("unknown", 0, anchor, TrackDirection::forward),
                    std::invalid_argument);
}

TEST_CASE("iou-chain tracker carries over gaps and resumes chaining") {
    std::vector<VideoMeta> videos{{"v", 4, 200.0, 200.0}};
    std::vector<std::vector<BoundingBox>> frames(4);
    const BoundingBox start(10, 10, 30, 30);
    frames[1] = {box_at(150, 150, 20, 20)};       // far: no overlap, carry prev
    frames[2] = {BoundingBox(12, 10, 32, 30)};    // overlaps the carried box
    IouChainTracker tracker(videos, {{"v", frames}});

    auto steps = tracker.track("v", 0, {"v", 0, 0, 1.0, start}, TrackDirection::forward);
    REQUIRE(steps.size() == 3);
    CHECK(steps[0].box == start);
    CHECK(steps[0].confidence == 0.0);
    CHECK(steps[1].box == BoundingBox(12, 10, 32, 30));
    CHECK(steps[1].confidence == iou(start, BoundingBox(12, 10, 32, 30)));
    CHECK(steps[2].box == BoundingBox(12, 10, 32, 30));  // frame 3 empty again
    CHECK(steps[2].confidence == 0.0);
}

TEST_CASE("gt-follow tracker with zero drift reproduces the instance boxes") {
    std::vector<GroundTruthObject> gts;
    std::vector<VideoMeta> videos{{"v", 20, 320.0, 240.0}};
    for (int f = 0; f < 20; ++f)
        gts.push_back({"v", f, 0, 0, box_at(10.0 + 2.0 * f, 20.0, 30, 30)});
    GtFollowTracker tracker(gts, videos, 0.0, 0.02, 5);

    const Detection anchor{"v", 4, 0, 1.0, box_at(18, 20, 30, 30)};
    auto fwd = tracker.track("v", 0, anchor, TrackDirection::forward);
    REQUIRE(fwd.size() == 15);
    for (std::size_t i = 0; i < fwd.size(); ++i) {
        const int f = 5 + static_cast<int>(i);
        CHECK(fwd[i].frame == f);
        CHECK(fwd[i].box == box_at(10.0 + 2.0 * f, 20.0, 30, 30));
        CHECK(fwd[i].confidence == 1.0 - 0.02 * static_cast<double>(i + 1));
    }
    CHECK(fwd[9].confidence == 0.8);  // offset 10 with decay 0.02

    auto bwd = tracker.track("v", 0, anchor, TrackDirection::backward);
    REQUIRE(bwd.size() == 4);
    CHECK(bwd[0].frame == 3);
    CHECK(bwd[3].frame == 0);
    CHECK(bwd[3].box == box_at(10.0, 20.0, 30, 30));

    CHECK_THROWS_AS(tracker.track("unknown", 0, anchor, TrackDirection::forward),
                    std::invalid_argument);
    // no instance of this class anywhere: empty track
    CHECK(tracker.track("v", 1, anchor, TrackDirection::forward).empty());
}

TEST_CASE("gt-follow tracker picks the overlapping instance, then the nearest") {
    std::vector<GroundTruthObject> gts;
    std::vector<VideoMeta> videos{{"v", 5, 640.0, 480.0}};
    for (int f = 0; f < 5; ++f) {
        gts.push_back({"v", f, 0, 0, box_at(10.0 + f, 10, 40, 40)});
        gts.push_back({"v", f, 0, 1, box_at(300.0 - f, 300, 40, 40)});
    }
    GtFollowTracker tracker(gts, videos, 0.0, 0.0, 5);

    // overlaps instance 1 only
    auto t1 = tracker.track("v", 0, {"v", 2, 0, 1.0, box_at(295, 300, 40, 40)},
                            TrackDirection::forward);
    REQUIRE(t1.size() == 2);
    CHECK(t1[0].box == box_at(297, 300, 40, 40));
    CHECK(t1[0].confidence == 1.0);  // zero decay

    // overlaps neither; instance 0's center is closer
    auto t0 = tracker.track("v", 0, {"v", 2, 0, 1.0, box_at(100, 100, 40, 40)},
                            TrackDirection::forward);
    REQUIRE(t0.size() == 2);
    CHECK(t0[0].box == box_at(13, 10, 40, 40));
}

TEST_CASE("gt-follow tracker stops at annotation gaps") {
    std::vector<GroundTruthObject> gts;
    std::vector<VideoMeta> videos{{"v", 10, 320.0, 240.0}};
    for (int f : {0, 1, 2, 3, 6, 7, 8, 9})
        gts.push_back({"v", f, 0, 0, box_at(50, 50, 30, 30)});
    GtFollowTracker tracker(gts, videos, 0.0, 0.0, 5);

    auto steps = tracker.track("v", 0, {"v", 1, 0, 1.0, box_at(50, 50, 30, 30)},
                               TrackDirection::forward);
    REQUIRE(steps.size() == 2);  // frames 2 and 3; the gap at 4 ends the track
    CHECK(steps.back().frame == 3);
}

TEST_CASE("gt-follow drift is a deterministic bounded random walk") {
    std::vector<GroundTruthObject> gts;
    std::vector<VideoMeta> videos{{"v", 40, 320.0, 240.0}};
    for (int f = 0; f < 40; ++f) gts.push_back({"v", f, 0, 0, box_at(140, 100, 40, 40)});
    const double drift = 2.5;
    GtFollowTracker tracker(gts, videos, drift, 0.01, 11);

    const Detection anchor{"v", 0, 0, 1.0, box_at(140, 100, 40, 40)};
    auto a = tracker.track("v", 0, anchor, TrackDirection::forward);
    auto b = tracker.track("v", 0, anchor, TrackDirection::forward);
    REQUIRE(a.size() == 39);
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].box == b[i].box);  // pure given (inputs, seed)
        CHECK(a[i].confidence == b[i].confidence);
        // each step adds a vector of length `drift`, so after k steps the
        // displacement from the followed gt box is at most k * drift
        const double k = static_cast<double>(i + 1);
        const double dx = a[i].box.x1 - 140.0, dy = a[i].box.y1 - 100.0;
        CHECK(std::sqrt(dx * dx + dy * dy) <= k * drift + 1e-9);
        // and the box never leaves the image
        CHECK(a[i].box.x1 >= 0.0);
        CHECK(a[i].box.y1 >= 0.0);
        CHECK(a[i].box.x2 <= 320.0);
        CHECK(a[i].box.y2 <= 240.0);
    }
    // some actual movement happened
    CHECK(a[10].box != box_at(140, 100, 40, 40));

    // forward and backward use distinct noise streams
    const Detection mid{"v", 20, 0, 1.0, box_at(140, 100, 40, 40)};
    auto f1 = tracker.track("v", 0, mid, TrackDirection::forward);
    auto b1 = tracker.track("v", 0, mid, TrackDirection::backward);
    REQUIRE(f1.size() == 19);
    REQUIRE(b1.size() == 20);
    CHECK(f1[0].box != b1[0].box);
}

TEST_CASE("tracker contract: monotone frames, bounded confidence, valid boxes") {
    std::vector<VideoMeta> videos{{"v", 30, 320.0, 240.0}};
    std::vector<GroundTruthObject> gts;
    std::vector<std::vector<BoundingBox>> props(30);
    Rng gen(3);
    for (int f = 0; f < 30; ++f) {
        gts.push_back({"v", f, 0, 0, box_at(100.0 + f, 80.0, 50, 40)});
        for (int p = 0; p < 4; ++p) {
            const double x = gen.uniform(0.0, 260.0), y = gen.uniform(0.0, 190.0);
            props[f].push_back(box_at(x, y, 50, 40));
        }
    }
    GtFollowTracker gt_tracker(gts, videos, 1.5, 0.05, 17);
    IouChainTracker chain_tracker(videos, {{"v", props}});

    auto check_contract = [&](const TrackerOracle& tracker) {
        for (int anchor_frame : {0, 7, 15, 29}) {
            const Detection anchor{"v", anchor_frame, 0, 0.5, box_at(110, 80, 50, 40)};
            for (auto dir : {TrackDirection::forward, TrackDirection::backward}) {
                auto steps = tracker.track("v", 0, anchor, dir);
                int prev = anchor_frame;
                const int delta = dir == TrackDirection::forward ? 1 : -1;
                for (const auto& s : steps) {
                    CHECK(s.frame == prev + delta);
                    prev = s.frame;
                    CHECK(s.frame >= 0);
                    CHECK(s.frame < 30);
                    CHECK(s.confidence >= 0.0);
                    CHECK(s.confidence <= 1.0);
                    CHECK(s.box.x2 > s.box.x1);
                    CHECK(s.box.y2 > s.box.y1);
                }
            }
        }
    };
    check_contract(gt_tracker);
    check_contract(chain_tracker);
}
