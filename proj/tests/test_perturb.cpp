#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <functional>
#include <string>
#include <vector>

#include <catch2/catch_amalgamated.hpp>

#include "tubedet/dataio.hpp"
#include "tubedet/geometry.hpp"
#include "tubedet/perturb.hpp"
#include "tubedet/pipeline.hpp"
#include "tubedet/rng.hpp"
#include "tubedet/tubelet.hpp"

using namespace tubedet;
using Catch::Matchers::ContainsSubstring;
using Catch::Matchers::MessageMatches;
using Catch::Matchers::WithinAbs;

namespace {

/// Detector whose scores come from a plain function of the query.
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

/// Deterministic, box-sensitive score so argmax choices are reproducible.
ScriptedDetector wavy_detector() {
    ScriptedDetector det;
    det.fn = [](std::string_view, int frame, int class_id, const BoundingBox& b) {
        return std::sin(0.37 * b.x1 + 0.11 * b.y1 + 0.053 * b.x2 + 0.029 * b.y2 +
                        0.7 * frame + 1.3 * class_id);
    };
    return det;
}

DatasetManifest make_manifest() {
    DatasetManifest m;
    m.classes = {"ball", "car"};
    m.videos = {{"va", 8, 320.0, 240.0}, {"vb", 5, 100.0, 100.0}};
    return m;
}

TubeletBox tb(int frame, const BoundingBox& box, double det = 0.0, double track = 1.0,
              double offset = 0.0) {
    return TubeletBox{frame, box, det, track, offset, std::nullopt};
}

bool same_tubelet(const Tubelet& a, const Tubelet& b) {
    if (a.video_id != b.video_id || a.class_id != b.class_id ||
        a.anchor_frame != b.anchor_frame || a.boxes.size() != b.boxes.size())
        return false;
    for (std::size_t i = 0; i < a.boxes.size(); ++i) {
        const auto& x = a.boxes[i];
        const auto& y = b.boxes[i];
        if (x.frame != y.frame || !(x.box == y.box) || x.det_score != y.det_score ||
            x.track_score != y.track_score || x.anchor_offset_norm != y.anchor_offset_norm ||
            x.tcn_score != y.tcn_score)
            return false;
    }
    return true;
}

}  // namespace

TEST_CASE("random_perturb keeps every sample within the offset bounds") {
    // Box far from the frame border: clamping never kicks in, so the raw
    // per-corner bounds are visible. w = 60, h = 80, ratio 0.2.
    const BoundingBox box(50, 40, 110, 120);
    const double rx = 0.2 * 60.0;  // 12
    const double ry = 0.2 * 80.0;  // 16
    Rng rng(99);
    const auto samples = random_perturb(box, 0.2, 500, 320, 240, rng);
    REQUIRE(samples.size() == 500);  // crossing is impossible here, nothing skipped
    for (const auto& s : samples) {
        CHECK(s.x1 >= box.x1 - rx);
        CHECK(s.x1 <= box.x1 + rx);
        CHECK(s.y1 >= box.y1 - ry);
        CHECK(s.y1 <= box.y1 + ry);
        CHECK(s.x2 >= box.x2 - rx);
        CHECK(s.x2 <= box.x2 + rx);
        CHECK(s.y2 >= box.y2 - ry);
        CHECK(s.y2 <= box.y2 + ry);
        CHECK(s.x2 > s.x1);
        CHECK(s.y2 > s.y1);
    }
}

TEST_CASE("random_perturb offsets are centred on the original corners") {
    const BoundingBox box(50, 40, 110, 120);
    const int n = 20000;
    Rng rng(4242);
    const auto samples = random_perturb(box, 0.2, n, 320, 240, rng);
    REQUIRE(samples.size() == static_cast<std::size_t>(n));
    double mx1 = 0, my1 = 0, mx2 = 0, my2 = 0;
    for (const auto& s : samples) {
        mx1 += s.x1 - box.x1;
        my1 += s.y1 - box.y1;
        mx2 += s.x2 - box.x2;
        my2 += s.y2 - box.y2;
    }
    // Uniform on [-a, a] has sd a / sqrt(3); allow 3 standard errors.
    const double tol_x = 3.0 * (12.0 / std::sqrt(3.0)) / std::sqrt(double(n));
    const double tol_y = 3.0 * (16.0 / std::sqrt(3.0)) / std::sqrt(double(n));
    CHECK_THAT(mx1 / n, WithinAbs(0.0, tol_x));
    CHECK_THAT(mx2 / n, WithinAbs(0.0, tol_x));
    CHECK_THAT(my1 / n, WithinAbs(0.0, tol_y));
    CHECK_THAT(my2 / n, WithinAbs(0.0, tol_y));
}

TEST_CASE("random_perturb with ratio zero returns exact copies") {
    const BoundingBox box(12.5, 30.25, 80.75, 91.5);
    Rng rng(7);
    const auto samples = random_perturb(box, 0.0, 25, 320, 240, rng);
    REQUIRE(samples.size() == 25);
    for (const auto& s : samples) CHECK(s == box);
}

TEST_CASE("random_perturb is a pure function of the rng state") {
    const BoundingBox box(10, 10, 60, 60);
    Rng a(123), b(123), c(124);
    const auto sa = random_perturb(box, 0.3, 40, 320, 240, a);
    const auto sb = random_perturb(box, 0.3, 40, 320, 240, b);
    const auto sc = random_perturb(box, 0.3, 40, 320, 240, c);
    REQUIRE(sa.size() == sb.size());
    for (std::size_t i = 0; i < sa.size(); ++i) CHECK(sa[i] == sb[i]);
    REQUIRE(sa.size() == sc.size());
    bool any_diff = false;
    for (std::size_t i = 0; i < sa.size(); ++i) any_diff = any_diff || !(sa[i] == sc[i]);
    CHECK(any_diff);
}

TEST_CASE("random_perturb clamps samples that poke outside the frame") {
    // Corner box: about half the x1 draws go negative and must clamp to 0.
    const BoundingBox box(0, 0, 30, 30);
    Rng rng(11);
    const auto samples = random_perturb(box, 0.2, 200, 320, 240, rng);
    REQUIRE(!samples.empty());
    int clamped_x1 = 0;
    for (const auto& s : samples) {
        CHECK(s.x1 >= 0.0);
        CHECK(s.y1 >= 0.0);
        CHECK(s.x2 <= 320.0);
        CHECK(s.y2 <= 240.0);
        CHECK(s.x2 > s.x1);
        CHECK(s.y2 > s.y1);
        if (s.x1 == 0.0) ++clamped_x1;
    }
    CHECK(clamped_x1 > 0);
}

TEST_CASE("random_perturb skips samples that stay degenerate after retries") {
    // Offsets two orders of magnitude larger than the box leave most draws
    // with crossed corners or fully outside the frame; after 10 rejected
    // attempts a sample is dropped rather than forced.
    const BoundingBox box(100, 100, 102, 102);
    Rng rng(3);
    const auto samples = random_perturb(box, 150.0, 60, 320, 240, rng);
    CHECK(samples.size() < 60);
    for (const auto& s : samples) {
        CHECK(s.x2 > s.x1);
        CHECK(s.y2 > s.y1);
        CHECK(s.x1 >= 0.0);
        CHECK(s.y1 >= 0.0);
        CHECK(s.x2 <= 320.0);
        CHECK(s.y2 <= 240.0);
    }
}

TEST_CASE("random_perturb rejects bad arguments") {
    const BoundingBox box(0, 0, 10, 10);
    Rng rng(1);
    CHECK_THROWS_MATCHES(random_perturb(box, 0.2, 0, 320, 240, rng), std::invalid_argument,
                         MessageMatches(ContainsSubstring("need at least one sample")));
    CHECK_THROWS_MATCHES(random_perturb(box, -0.1, 5, 320, 240, rng), std::invalid_argument,
                         MessageMatches(ContainsSubstring("ratio must be >= 0")));
}

TEST_CASE("original_replacement_candidates keeps overlaps at or above the threshold") {
    const BoundingBox anchor(0, 0, 10, 10);
    const std::vector<Detection> dets{
        {"v", 0, 0, 0.9, BoundingBox(0, 0, 10, 10)},    // iou 1
        {"v", 0, 0, 0.8, BoundingBox(5, 0, 15, 10)},    // iou 50/150 = 1/3
        {"v", 0, 0, 0.7, BoundingBox(2, 2, 12, 12)},    // iou 64/136
        {"v", 0, 0, 0.6, BoundingBox(20, 20, 30, 30)},  // iou 0
    };

    SECTION("inclusive at the exact boundary, input order preserved") {
        const auto out = original_replacement_candidates(anchor, dets, 50.0 / 150.0);
        REQUIRE(out.size() == 3);
        CHECK(out[0] == dets[0].box);
        CHECK(out[1] == dets[1].box);
        CHECK(out[2] == dets[2].box);
    }
    SECTION("tighter threshold drops the weaker overlaps") {
        const auto out = original_replacement_candidates(anchor, dets, 0.5);
        REQUIRE(out.size() == 1);
        CHECK(out[0] == dets[0].box);
    }
    SECTION("threshold zero admits even disjoint boxes") {
        CHECK(original_replacement_candidates(anchor, dets, 0.0).size() == 4);
    }
    SECTION("empty detections give no candidates") {
        CHECK(original_replacement_candidates(anchor, {}, 0.5).empty());
    }
    SECTION("threshold outside [0,1] is rejected") {
        CHECK_THROWS_MATCHES(original_replacement_candidates(anchor, dets, -0.01),
                             std::invalid_argument,
                             MessageMatches(ContainsSubstring("outside [0,1]")));
        CHECK_THROWS_MATCHES(original_replacement_candidates(anchor, dets, 1.01),
                             std::invalid_argument,
                             MessageMatches(ContainsSubstring("outside [0,1]")));
    }
}

TEST_CASE("max_pool keeps the best candidate, favouring the original then low index") {
    // Scores depend only on x1 so each frame's outcome is scripted exactly.
    ScriptedDetector det;
    det.fn = [](std::string_view, int frame, int, const BoundingBox& b) {
        if (frame == 2) return b.x1 == 10.0 ? 0.5 : (b.x1 == 20.0 ? 0.7 : 0.9);
        if (frame == 3) return 0.8;  // everything ties: original must stay
        return b.x1 == 10.0 ? 0.4 : 0.9;  // frame 4: two candidates tie at 0.9
    };
    Tubelet t{"v", 0, 3,
              {tb(2, BoundingBox(10, 0, 20, 10), -0.2, 0.9, 0.5),
               tb(3, BoundingBox(10, 0, 20, 10), -0.1, 1.0, 0.0),
               tb(4, BoundingBox(10, 0, 20, 10), -0.3, 0.8, 0.5)}};
    t.boxes[1].tcn_score = 0.42;
    const std::vector<std::vector<BoundingBox>> cands{
        {BoundingBox(10, 0, 20, 10), BoundingBox(20, 0, 30, 10), BoundingBox(30, 0, 40, 10)},
        {BoundingBox(10, 0, 20, 10), BoundingBox(20, 0, 30, 10), BoundingBox(30, 0, 40, 10)},
        {BoundingBox(10, 0, 20, 10), BoundingBox(30, 5, 40, 15), BoundingBox(50, 0, 60, 10)},
    };
    max_pool(t, cands, det);

    // Frame 2: strictly best candidate wins and brings its score.
    CHECK(t.boxes[0].box == BoundingBox(30, 0, 40, 10));
    CHECK(t.boxes[0].det_score == 0.9);
    // Frame 3: all scores tie, so the original box stays but is re-scored.
    CHECK(t.boxes[1].box == BoundingBox(10, 0, 20, 10));
    CHECK(t.boxes[1].det_score == 0.8);
    // Frame 4: tie between candidates 1 and 2 goes to the lower index.
    CHECK(t.boxes[2].box == BoundingBox(30, 5, 40, 15));
    CHECK(t.boxes[2].det_score == 0.9);

    // Everything except box and det_score is untouched.
    CHECK(t.boxes[0].track_score == 0.9);
    CHECK(t.boxes[0].anchor_offset_norm == 0.5);
    CHECK(t.boxes[1].tcn_score == 0.42);
    CHECK(t.boxes[2].track_score == 0.8);
    CHECK(t.video_id == "v");
    CHECK(t.anchor_frame == 3);
}

TEST_CASE("max_pool validates its candidate lists") {
    const auto det = wavy_detector();
    Tubelet t{"v", 0, 0, {tb(0, BoundingBox(0, 0, 10, 10))}};

    SECTION("one list per box") {
        CHECK_THROWS_MATCHES(max_pool(t, {}, det), std::invalid_argument,
                             MessageMatches(ContainsSubstring("one candidate list per")));
    }
    SECTION("empty candidate list") {
        CHECK_THROWS_MATCHES(max_pool(t, {{}}, det), std::invalid_argument,
                             MessageMatches(ContainsSubstring("start with the original box")));
    }
    SECTION("leading candidate differs from the stored box") {
        CHECK_THROWS_MATCHES(max_pool(t, {{BoundingBox(1, 0, 10, 10)}}, det),
                             std::invalid_argument,
                             MessageMatches(ContainsSubstring("start with the original box")));
    }
    SECTION("a lone original candidate only re-scores") {
        max_pool(t, {{BoundingBox(0, 0, 10, 10)}}, det);
        CHECK(t.boxes[0].box == BoundingBox(0, 0, 10, 10));
        CHECK(t.boxes[0].det_score ==
              det.score_box("v", 0, 0, BoundingBox(0, 0, 10, 10)));
    }
}

TEST_CASE("pooled scores never fall below the original box's own score") {
    const auto det = wavy_detector();
    Rng rng(2024);
    for (int trial = 0; trial < 60; ++trial) {
        const double x1 = rng.uniform(0.0, 250.0);
        const double y1 = rng.uniform(0.0, 180.0);
        const BoundingBox box(x1, y1, x1 + rng.uniform(10.0, 60.0),
                              y1 + rng.uniform(10.0, 50.0));
        Tubelet t{"v", trial % 2, 0, {tb(0, box)}};
        std::vector<BoundingBox> cands{box};
        const auto extra = random_perturb(box, 0.25, 12, 320, 240, rng);
        cands.insert(cands.end(), extra.begin(), extra.end());
        max_pool(t, {cands}, det);
        CHECK(t.boxes[0].det_score >= det.score_box("v", 0, trial % 2, box));
    }
}

TEST_CASE("DetectionIndex looks up detections by video, class and frame") {
    const auto manifest = make_manifest();
    const std::vector<Detection> dets{
        {"va", 2, 0, 0.9, BoundingBox(0, 0, 10, 10)},
        {"va", 2, 0, 0.8, BoundingBox(5, 5, 15, 15)},
        {"va", 2, 1, 0.7, BoundingBox(0, 0, 10, 10)},
        {"va", 7, 0, 0.6, BoundingBox(1, 1, 9, 9)},
        {"vb", 0, 1, 0.5, BoundingBox(2, 2, 8, 8)},
    };
    const DetectionIndex index(dets, manifest);

    auto at = index.at("va", 0, 2);
    REQUIRE(at.size() == 2);
    CHECK(at[0].box == dets[0].box);
    CHECK(at[1].box == dets[1].box);
    REQUIRE(index.at("va", 1, 2).size() == 1);
    REQUIRE(index.at("va", 0, 7).size() == 1);
    REQUIRE(index.at("vb", 1, 0).size() == 1);

    CHECK(index.at("va", 0, 3).empty());    // frame with no detections
    CHECK(index.at("vb", 0, 0).empty());    // class never seen in that video
    CHECK(index.at("nope", 0, 0).empty());  // unknown video
    CHECK(index.at("va", 0, -1).empty());   // out of range
    CHECK(index.at("va", 0, 99).empty());

    CHECK_THROWS_MATCHES(
        DetectionIndex(std::vector<Detection>{{"ghost", 0, 0, 0.5, BoundingBox(0, 0, 5, 5)}},
                       manifest),
        std::invalid_argument,
        MessageMatches(ContainsSubstring("unknown video ghost")));
}

TEST_CASE("scheme_candidates are keyed by tubelet identity, not call order") {
    const auto manifest = make_manifest();
    const VideoMeta& va = manifest.videos[0];
    const DetectionIndex empty_index;
    const PerturbScheme random = RandomScheme{6, 0.2};

    Tubelet t{"va", 0, 2,
              {tb(1, BoundingBox(40, 40, 90, 100)), tb(2, BoundingBox(42, 41, 92, 101)),
               tb(3, BoundingBox(44, 42, 94, 102))}};

    const auto first = detail::scheme_candidates(t, random, va, empty_index, 5);
    const auto again = detail::scheme_candidates(t, random, va, empty_index, 5);
    REQUIRE(first.size() == 3);
    REQUIRE(again.size() == 3);
    for (std::size_t i = 0; i < first.size(); ++i) {
        REQUIRE(first[i].size() == again[i].size());
        CHECK(first[i].front() == t.boxes[i].box);  // original leads every list
        for (std::size_t k = 0; k < first[i].size(); ++k) CHECK(first[i][k] == again[i][k]);
    }

    // A different anchor frame re-keys the random stream.
    Tubelet other = t;
    other.anchor_frame = 3;
    const auto moved = detail::scheme_candidates(other, random, va, empty_index, 5);
    bool any_diff = false;
    for (std::size_t i = 0; i < first.size(); ++i) {
        if (first[i].size() != moved[i].size()) {
            any_diff = true;
            continue;
        }
        for (std::size_t k = 1; k < first[i].size(); ++k)
            any_diff = any_diff || !(first[i][k] == moved[i][k]);
    }
    CHECK(any_diff);

    // So does the global seed.
    const auto reseeded = detail::scheme_candidates(t, random, va, empty_index, 6);
    bool seed_diff = false;
    for (std::size_t i = 0; i < first.size(); ++i)
        for (std::size_t k = 1; k < std::min(first[i].size(), reseeded[i].size()); ++k)
            seed_diff = seed_diff || !(first[i][k] == reseeded[i][k]);
    CHECK(seed_diff);
}

TEST_CASE("scheme_candidates under the original scheme pull from the detection index") {
    const auto manifest = make_manifest();
    const VideoMeta& va = manifest.videos[0];
    const std::vector<Detection> dets{
        {"va", 1, 0, 0.9, BoundingBox(40, 40, 90, 100)},   // iou 1 with frame-1 box
        {"va", 1, 0, 0.8, BoundingBox(41, 40, 91, 100)},   // heavy overlap
        {"va", 1, 0, 0.7, BoundingBox(200, 5, 240, 40)},   // disjoint
        {"va", 1, 1, 0.6, BoundingBox(40, 40, 90, 100)},   // wrong class
        {"va", 2, 0, 0.5, BoundingBox(40, 40, 90, 100)},   // wrong frame
    };
    const DetectionIndex index(dets, manifest);
    Tubelet t{"va", 0, 1, {tb(1, BoundingBox(40, 40, 90, 100))}};

    const auto cands =
        detail::scheme_candidates(t, OriginalScheme{0.5}, va, index, 5);
    REQUIRE(cands.size() == 1);
    REQUIRE(cands[0].size() == 3);  // original + the two same-frame overlaps
    CHECK(cands[0][0] == t.boxes[0].box);
    CHECK(cands[0][1] == dets[0].box);
    CHECK(cands[0][2] == dets[1].box);
}

TEST_CASE("per_scheme_union emits one pooled tubelet per scheme, in order") {
    const auto manifest = make_manifest();
    const auto det = wavy_detector();
    const std::vector<Detection> dets{
        {"va", 1, 0, 0.9, BoundingBox(42, 42, 92, 102)},
        {"va", 2, 1, 0.8, BoundingBox(61, 30, 111, 80)},
    };
    const DetectionIndex index(dets, manifest);
    const std::vector<Tubelet> input{
        {"va", 0, 1, {tb(1, BoundingBox(40, 40, 90, 100))}},
        {"va", 1, 2, {tb(2, BoundingBox(60, 30, 110, 80))}},
    };
    PerturbConfig cfg;
    cfg.schemes = {RandomScheme{5, 0.15}, OriginalScheme{0.5}};
    cfg.mode = PoolMode::per_scheme_union;
    cfg.seed = 17;

    const auto pooled = perturb_and_pool(input, cfg, det, manifest, index);
    REQUIRE(pooled.size() == 4);  // 2 tubelets x 2 schemes
    // Input order outer, scheme order inner.
    CHECK(pooled[0].class_id == 0);
    CHECK(pooled[1].class_id == 0);
    CHECK(pooled[2].class_id == 1);
    CHECK(pooled[3].class_id == 1);

    // Each entry matches pooling that tubelet with that scheme directly.
    const VideoMeta& va = manifest.videos[0];
    CHECK(same_tubelet(pooled[0],
                       pool_tubelet(input[0], cfg.schemes[0], det, va, index, cfg.seed)));
    CHECK(same_tubelet(pooled[1],
                       pool_tubelet(input[0], cfg.schemes[1], det, va, index, cfg.seed)));
    CHECK(same_tubelet(pooled[2],
                       pool_tubelet(input[1], cfg.schemes[0], det, va, index, cfg.seed)));
    CHECK(same_tubelet(pooled[3],
                       pool_tubelet(input[1], cfg.schemes[1], det, va, index, cfg.seed)));

    // candidate_union instead emits exactly one tubelet per input, pooled
    // over the merged candidate set: per box, its score is the max of the
    // per-scheme pooled scores.
    cfg.mode = PoolMode::candidate_union;
    const auto merged = perturb_and_pool(input, cfg, det, manifest, index);
    REQUIRE(merged.size() == 2);
    for (std::size_t i = 0; i < merged.size(); ++i) {
        CHECK(same_tubelet(merged[i], pool_tubelet_union(input[i], cfg.schemes, det, va,
                                                         index, cfg.seed)));
        for (std::size_t b = 0; b < merged[i].boxes.size(); ++b) {
            const double s0 = pooled[2 * i].boxes[b].det_score;
            const double s1 = pooled[2 * i + 1].boxes[b].det_score;
            CHECK(merged[i].boxes[b].det_score == std::max(s0, s1));
        }
    }
}

TEST_CASE("perturb_and_pool validates its configuration and inputs") {
    const auto manifest = make_manifest();
    const auto det = wavy_detector();
    const DetectionIndex index;
    const std::vector<Tubelet> input{{"va", 0, 1, {tb(1, BoundingBox(40, 40, 90, 100))}}};

    SECTION("no schemes") {
        PerturbConfig cfg;
        cfg.schemes.clear();
        CHECK_THROWS_MATCHES(perturb_and_pool(input, cfg, det, manifest, index),
                             std::invalid_argument,
                             MessageMatches(ContainsSubstring("at least one scheme")));
        CHECK_THROWS_MATCHES(
            pool_tubelet_union(input[0], {}, det, manifest.videos[0], index, 1),
            std::invalid_argument, MessageMatches(ContainsSubstring("no schemes")));
    }
    SECTION("bad scheme parameters") {
        PerturbConfig cfg;
        cfg.schemes = {RandomScheme{0, 0.2}};
        CHECK_THROWS_MATCHES(cfg.validate(), std::invalid_argument,
                             MessageMatches(ContainsSubstring("samples must be >= 1")));
        cfg.schemes = {RandomScheme{5, -0.5}};
        CHECK_THROWS_MATCHES(cfg.validate(), std::invalid_argument,
                             MessageMatches(ContainsSubstring("ratio must be >= 0")));
        cfg.schemes = {OriginalScheme{1.5}};
        CHECK_THROWS_MATCHES(cfg.validate(), std::invalid_argument,
                             MessageMatches(ContainsSubstring("iou threshold outside [0,1]")));
    }
    SECTION("tubelet naming an unknown video") {
        const std::vector<Tubelet> ghost{{"ghost", 0, 0, {tb(0, BoundingBox(0, 0, 5, 5))}}};
        CHECK_THROWS_MATCHES(perturb_and_pool(ghost, PerturbConfig{}, det, manifest, index),
                             std::invalid_argument,
                             MessageMatches(ContainsSubstring("unknown video ghost")));
    }
    SECTION("defaults are the documented scheme pair") {
        PerturbConfig cfg;
        REQUIRE(cfg.schemes.size() == 2);
        const auto* rs = std::get_if<RandomScheme>(&cfg.schemes[0]);
        REQUIRE(rs != nullptr);
        CHECK(rs->samples == 20);
        CHECK(rs->ratio == 0.2);
        const auto* os = std::get_if<OriginalScheme>(&cfg.schemes[1]);
        REQUIRE(os != nullptr);
        CHECK(os->iou_thresh == 0.5);
        CHECK(cfg.mode == PoolMode::per_scheme_union);
        CHECK_NOTHROW(cfg.validate());
    }
}

TEST_CASE("scheme_label names schemes with their parameters") {
    CHECK(scheme_label(RandomScheme{20, 0.2}) == "random(n=20,r=0.200000)");
    CHECK(scheme_label(OriginalScheme{0.5}) == "original(t=0.500000)");
}

TEST_CASE("pool_all matches the sequential pooling for any worker count") {
    const auto manifest = make_manifest();
    const auto det = wavy_detector();

    // Three tubelets across both videos and classes, with detections placed
    // near (and far from) their boxes so the original scheme has material.
    std::vector<Tubelet> input;
    input.push_back({"va", 0, 2,
                     {tb(1, BoundingBox(40, 40, 90, 100), 0.1, 0.9, 0.5),
                      tb(2, BoundingBox(43, 42, 93, 102), 0.9, 1.0, 0.0),
                      tb(3, BoundingBox(46, 44, 96, 104), 0.2, 0.8, 0.5),
                      tb(4, BoundingBox(49, 46, 99, 106), 0.3, 0.7, 1.0)}});
    input.push_back({"va", 1, 6,
                     {tb(5, BoundingBox(150, 60, 210, 120), 0.4, 0.95, 0.5),
                      tb(6, BoundingBox(152, 62, 212, 122), 0.8, 1.0, 0.0),
                      tb(7, BoundingBox(154, 64, 214, 124), 0.5, 0.9, 0.5)}});
    input.push_back({"vb", 0, 0,
                     {tb(0, BoundingBox(20, 20, 50, 50), 0.7, 1.0, 0.0),
                      tb(1, BoundingBox(22, 21, 52, 51), 0.6, 0.9, 0.5),
                      tb(2, BoundingBox(24, 22, 54, 52), 0.5, 0.8, 1.0)}});

    std::vector<Detection> dets;
    for (const auto& t : input)
        for (const auto& b : t.boxes) {
            dets.push_back({t.video_id, b.frame, t.class_id, 0.0,
                            BoundingBox(b.box.x1 + 2, b.box.y1 + 2, b.box.x2 + 2,
                                        b.box.y2 + 2)});
            dets.push_back({t.video_id, b.frame, t.class_id, 0.0,
                            BoundingBox(b.box.x1 + 1, b.box.y1, b.box.x2 + 1, b.box.y2)});
        }
    const DetectionIndex index(dets, manifest);

    for (const PoolMode mode : {PoolMode::per_scheme_union, PoolMode::candidate_union}) {
        PerturbConfig cfg;
        cfg.schemes = {RandomScheme{8, 0.15}, OriginalScheme{0.3}};
        cfg.mode = mode;
        cfg.seed = 42;
        const auto reference = perturb_and_pool(input, cfg, det, manifest, index);

        for (const char* workers : {"1", "3"}) {
            REQUIRE(setenv("TUBEDET_WORKERS", workers, 1) == 0);
            const auto parallel = pool_all(manifest, input, dets, cfg, det);
            REQUIRE(unsetenv("TUBEDET_WORKERS") == 0);
            REQUIRE(parallel.size() == reference.size());
            for (std::size_t i = 0; i < parallel.size(); ++i)
                CHECK(same_tubelet(parallel[i], reference[i]));
        }
    }
}

TEST_CASE("pool_all propagates exceptions raised inside workers") {
    const auto manifest = make_manifest();
    const auto det = wavy_detector();
    const std::vector<Tubelet> input{
        {"va", 0, 1, {tb(1, BoundingBox(40, 40, 90, 100))}},
        {"ghost", 0, 0, {tb(0, BoundingBox(0, 0, 5, 5))}},
        {"vb", 1, 0, {tb(0, BoundingBox(10, 10, 30, 30))}},
    };
    REQUIRE(setenv("TUBEDET_WORKERS", "3", 1) == 0);
    CHECK_THROWS_MATCHES(pool_all(manifest, input, {}, PerturbConfig{}, det),
                         std::invalid_argument,
                         MessageMatches(ContainsSubstring("unknown video ghost")));
    REQUIRE(unsetenv("TUBEDET_WORKERS") == 0);
}
