#pragma once

#include <algorithm>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "tubedet/geometry.hpp"
#include "tubedet/oracles.hpp"

namespace tubedet {

struct TubeletBox {
    int frame = 0;
    BoundingBox box;
    double det_score = 0.0;
    double track_score = 1.0;          // in [0,1]; 1.0 on the anchor frame
    double anchor_offset_norm = 0.0;   // |frame - anchor| / track length, in [0,1)
    std::optional<double> tcn_score;   // filled by re-scoring only
};

/// A per-class track of boxes over contiguous frames, grown bidirectionally
/// from an anchor detection.
struct Tubelet {
    std::string video_id;
    int class_id = 0;
    int anchor_frame = 0;
    std::vector<TubeletBox> boxes;  // contiguous, strictly increasing frames

    int start_frame() const { return boxes.front().frame; }
    int end_frame() const { return boxes.back().frame; }
    std::size_t length() const { return boxes.size(); }

    const TubeletBox* box_at(int frame) const {
        if (boxes.empty() || frame < start_frame() || frame > end_frame()) return nullptr;
        return &boxes[static_cast<std::size_t>(frame - start_frame())];
    }
    TubeletBox* box_at(int frame) {
        return const_cast<TubeletBox*>(static_cast<const Tubelet*>(this)->box_at(frame));
    }
};

struct ProposalConfig {
    double early_stop_conf = 0.1;    // cut the track below this tracking confidence
    double anchor_min_score = 0.0;   // minimum detection score for a new anchor
    double suppression_iou = 0.3;    // track-detection suppression overlap
    int max_anchors_per_class = 20;

    void validate() const {
        if (!(early_stop_conf >= 0.0 && early_stop_conf <= 1.0))
            throw std::invalid_argument("early_stop_conf must lie in [0,1]");
        if (!(suppression_iou >= 0.0 && suppression_iou <= 1.0))
            throw std::invalid_argument("suppression_iou must lie in [0,1]");
        if (max_anchors_per_class < 1)
            throw std::invalid_argument("max_anchors_per_class must be >= 1");
    }
};

/// Fills anchor_offset_norm: |frame - anchor_frame| / length.
inline void anchor_offsets(Tubelet& t) {
    if (t.boxes.empty()) throw std::invalid_argument("anchor_offsets: empty tubelet");
    const double len = static_cast<double>(t.boxes.size());
    for (auto& b : t.boxes)
        b.anchor_offset_norm = std::abs(b.frame - t.anchor_frame) / len;
}

/// Iterative anchor selection with bidirectional tracking, early stop and
/// track-detection suppression. Returned tubelets are ordered by anchor
/// score descending; anchor boxes carry track_score 1.0 and the anchor
/// detection's score, tracked boxes carry the tracker's confidence and a
/// zero det_score until they are scored.
inline std::vector<Tubelet> propose_tubelets(const VideoMeta& video, int class_id,
                                             const std::vector<Detection>& scored_detections,
                                             const TrackerOracle& tracker,
                                             const ProposalConfig& cfg) {
    cfg.validate();
    std::vector<bool> alive(scored_detections.size(), true);
    std::vector<Tubelet> tubelets;

    while (static_cast<int>(tubelets.size()) < cfg.max_anchors_per_class) {
        // Highest-scoring remaining detection becomes the next anchor;
        // equal scores resolve to the earlier input index.
        std::size_t anchor_idx = scored_detections.size();
        for (std::size_t i = 0; i < scored_detections.size(); ++i) {
            if (!alive[i] || scored_detections[i].score < cfg.anchor_min_score) continue;
            if (anchor_idx == scored_detections.size() ||
                scored_detections[i].score > scored_detections[anchor_idx].score)
                anchor_idx = i;
        }
        if (anchor_idx == scored_detections.size()) break;
        const Detection& anchor = scored_detections[anchor_idx];

        auto truncate = [&](std::vector<TrackStep> steps) {
            std::size_t n = 0;
            while (n < steps.size() && steps[n].confidence >= cfg.early_stop_conf) ++n;
            steps.erase(steps.begin() + static_cast<std::ptrdiff_t>(n), steps.end());
            return steps;
        };
        auto backward = truncate(tracker.track(video.video_id, class_id, anchor,
                                               TrackDirection::backward));
        auto forward = truncate(tracker.track(video.video_id, class_id, anchor,
                                              TrackDirection::forward));

        Tubelet t;
        t.video_id = video.video_id;
        t.class_id = class_id;
        t.anchor_frame = anchor.frame;
        t.boxes.reserve(backward.size() + forward.size() + 1);
        for (auto it = backward.rbegin(); it != backward.rend(); ++it)
            t.boxes.push_back({it->frame, it->box, 0.0, it->confidence, 0.0, std::nullopt});
        t.boxes.push_back({anchor.frame, anchor.box, anchor.score, 1.0, 0.0, std::nullopt});
        for (const auto& s : forward)
            t.boxes.push_back({s.frame, s.box, 0.0, s.confidence, 0.0, std::nullopt});
        anchor_offsets(t);

        // Suppress detections overlapping the new track on their own frame.
        for (std::size_t i = 0; i < scored_detections.size(); ++i) {
            if (!alive[i]) continue;
            const TubeletBox* tb = t.box_at(scored_detections[i].frame);
            if (tb && iou(scored_detections[i].box, tb->box) >= cfg.suppression_iou)
                alive[i] = false;
        }
        alive[anchor_idx] = false;  // always consumed, even if suppression missed it

        tubelets.push_back(std::move(t));
    }
    return tubelets;
}

/// Scores every box of a tubelet with the detector, filling det_score.
/// Tracked boxes leave propose_tubelets with det_score 0; this is the
/// "evaluate tubelet boxes with the detector" step, also used as the
/// un-pooled baseline.
inline void score_tubelet_boxes(Tubelet& tubelet, const DetectorOracle& oracle) {
    for (auto& tb : tubelet.boxes) {
        const BoundingBox one[] = {tb.box};
        tb.det_score = oracle.score_boxes(tubelet.video_id, tb.frame, tubelet.class_id, one)[0];
    }
}

}  // namespace tubedet
