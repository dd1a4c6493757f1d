#pragma once

#include <cmath>
#include <limits>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "tubedet/geometry.hpp"
#include "tubedet/rng.hpp"

namespace tubedet {

struct VideoMeta {
    std::string video_id;
    int frame_count = 0;
    double width = 0.0, height = 0.0;
};

enum class TrackDirection { forward, backward };

struct TrackStep {
    int frame;
    BoundingBox box;
    double confidence;  // in [0,1]
};

/// Scores boxes the way the per-class detector of the scoring step does.
/// Implementations must be pure given (inputs, seed): one score per input
/// box, identical on every call.
class DetectorOracle {
  public:
    virtual ~DetectorOracle() = default;

    virtual std::vector<double> score_boxes(std::string_view video_id, int frame, int class_id,
                                            std::span<const BoundingBox> boxes) const = 0;

    double score_box(std::string_view video_id, int frame, int class_id,
                     const BoundingBox& box) const {
        return score_boxes(video_id, frame, class_id, std::span<const BoundingBox>(&box, 1))[0];
    }
};

/// Tracks from the frame adjacent to the anchor toward the video boundary.
/// Frames are strictly monotone in the direction, confidences lie in [0,1].
class TrackerOracle {
  public:
    virtual ~TrackerOracle() = default;

    virtual std::vector<TrackStep> track(std::string_view video_id, int class_id,
                                         const Detection& anchor, TrackDirection dir) const = 0;
};

/// Keeps the proposals whose best detection score over all classes reaches
/// the threshold; input order is preserved.
inline std::vector<BoundingBox> filter_proposals(const std::vector<BoundingBox>& frame_proposals,
                                                 const DetectorOracle& oracle,
                                                 std::string_view video_id, int frame,
                                                 int num_classes, double threshold) {
    if (frame_proposals.empty()) return {};
    std::vector<double> best(frame_proposals.size(), -std::numeric_limits<double>::infinity());
    for (int c = 0; c < num_classes; ++c) {
        auto scores = oracle.score_boxes(video_id, frame, c, frame_proposals);
        for (std::size_t i = 0; i < best.size(); ++i) best[i] = std::max(best[i], scores[i]);
    }
    std::vector<BoundingBox> kept;
    for (std::size_t i = 0; i < frame_proposals.size(); ++i)
        if (best[i] >= threshold) kept.push_back(frame_proposals[i]);
    return kept;
}

/// a * max IoU against the class ground truth on the frame + b, plus
/// Gaussian noise when sigma > 0. Empty ground truth counts as IoU 0.
inline double synthetic_detector_score(const BoundingBox& box,
                                       std::span<const BoundingBox> frame_gt, double a, double b,
                                       double sigma, Rng& rng) {
    if (!(a > 0.0)) throw std::invalid_argument("synthetic detector slope must be positive");
    double best = 0.0;
    for (const auto& gt : frame_gt) best = std::max(best, iou(box, gt));
    double score = a * best + b;
    if (sigma > 0.0) score += sigma * rng.gaussian();
    return score;
}

/// Detector stand-in driven by ground truth overlap. Noise is seeded per
/// (video, frame, class, box) so scoring the same query twice, in any
/// order, gives the same value.
class SyntheticDetector : public DetectorOracle {
  public:
    SyntheticDetector(std::vector<GroundTruthObject> gts, double a, double b, double sigma,
                      std::uint64_t seed)
        : a_(a), b_(b), sigma_(sigma), seed_(seed) {
        if (!(a > 0.0)) throw std::invalid_argument("synthetic detector slope must be positive");
        for (auto& g : gts) gt_[key(g.video_id, g.frame, g.class_id)].push_back(g.box);
    }

    std::vector<double> score_boxes(std::string_view video_id, int frame, int class_id,
                                    std::span<const BoundingBox> boxes) const override {
        static const std::vector<BoundingBox> kNone;
        auto it = gt_.find(key(video_id, frame, class_id));
        const auto& frame_gt = it == gt_.end() ? kNone : it->second;
        std::vector<double> scores;
        scores.reserve(boxes.size());
        for (const auto& box : boxes) {
            Rng rng(hash_key(seed_, std::string_view("det"), video_id, frame, class_id, box.x1,
                             box.y1, box.x2, box.y2));
            scores.push_back(synthetic_detector_score(box, frame_gt, a_, b_, sigma_, rng));
        }
        return scores;
    }

  private:
    static std::string key(std::string_view video, int frame, int class_id) {
        return std::string(video) + "/" + std::to_string(frame) + "/" + std::to_string(class_id);
    }

    std::unordered_map<std::string, std::vector<BoundingBox>> gt_;
    double a_, b_, sigma_;
    std::uint64_t seed_;
};

/// Replays detection scores loaded from file. A query box resolves by
/// exact coordinate match first, then to the stored detection with the
/// highest IoU >= 0.9, else -inf. It never invents confidence for boxes
/// far from anything it has seen.
class FileBackedDetector : public DetectorOracle {
  public:
    explicit FileBackedDetector(const std::vector<Detection>& dets) {
        for (const auto& d : dets)
            stored_[key(d.video_id, d.frame, d.class_id)].push_back({d.box, d.score});
    }

    std::vector<double> score_boxes(std::string_view video_id, int frame, int class_id,
                                    std::span<const BoundingBox> boxes) const override {
        constexpr double kMinIou = 0.9;
        auto it = stored_.find(key(video_id, frame, class_id));
        std::vector<double> scores;
        scores.reserve(boxes.size());
        for (const auto& box : boxes) {
            double score = -std::numeric_limits<double>::infinity();
            if (it != stored_.end()) {
                double best_iou = -1.0;
                for (const auto& [sbox, sscore] : it->second) {
                    if (sbox == box) {  // exact match wins
                        score = sscore;
                        best_iou = 2.0;
                        break;
                    }
                    const double ov = iou(sbox, box);
                    if (ov >= kMinIou && ov > best_iou) {
                        best_iou = ov;
                        score = sscore;
                    }
                }
            }
            scores.push_back(score);
        }
        return scores;
    }

  private:
    static std::string key(std::string_view video, int frame, int class_id) {
        return std::string(video) + "/" + std::to_string(frame) + "/" + std::to_string(class_id);
    }

    std::unordered_map<std::string, std::vector<std::pair<BoundingBox, double>>> stored_;
};

/// Tracker stand-in that chains per-frame proposals by overlap. At each
/// next frame the best-overlapping proposal continues the track with
/// confidence equal to that overlap; when no proposal overlaps, the
/// previous box is carried over with confidence 0 (the caller's early
/// stop cuts the track there).
class IouChainTracker : public TrackerOracle {
  public:
    IouChainTracker(const std::vector<VideoMeta>& videos,
                    const std::unordered_map<std::string, std::vector<std::vector<BoundingBox>>>&
                        proposals_by_video_frame)
        : proposals_(proposals_by_video_frame) {
        for (const auto& v : videos) frames_[v.video_id] = v.frame_count;
    }

    std::vector<TrackStep> track(std::string_view video_id, int /*class_id*/,
                                 const Detection& anchor, TrackDirection dir) const override {
        auto fit = frames_.find(std::string(video_id));
        if (fit == frames_.end()) throw std::invalid_argument("unknown video id in tracker");
        const int frame_count = fit->second;
        auto pit = proposals_.find(std::string(video_id));

        const int step = dir == TrackDirection::forward ? 1 : -1;
        std::vector<TrackStep> steps;
        BoundingBox prev = anchor.box;
        for (int f = anchor.frame + step; f >= 0 && f < frame_count; f += step) {
            const std::vector<BoundingBox>* cands = nullptr;
            if (pit != proposals_.end() && f < static_cast<int>(pit->second.size()))
                cands = &pit->second[f];
            double best_iou = 0.0;
            const BoundingBox* best = nullptr;
            if (cands) {
                for (const auto& c : *cands) {
                    const double ov = iou(c, prev);
                    if (ov > best_iou) {
                        best_iou = ov;
                        best = &c;
                    }
                }
            }
            const BoundingBox chosen = best ? *best : prev;
            steps.push_back({f, chosen, best_iou});
            prev = chosen;
        }
        return steps;
    }

  private:
    std::unordered_map<std::string, std::vector<std::vector<BoundingBox>>> proposals_;
    std::unordered_map<std::string, int> frames_;
};

/// Simulation-only tracker that follows the ground-truth instance nearest
/// to the anchor, displaced by an accumulating random-walk drift of delta
/// pixels per frame. Confidence falls linearly from 1 by conf_decay per
/// frame of distance from the anchor.
class GtFollowTracker : public TrackerOracle {
  public:
    GtFollowTracker(const std::vector<GroundTruthObject>& gts, const std::vector<VideoMeta>& videos,
                    double drift, double conf_decay, std::uint64_t seed)
        : drift_(drift), decay_(conf_decay), seed_(seed) {
        for (const auto& v : videos) meta_[v.video_id] = v;
        for (const auto& g : gts) {
            auto& inst = instances_[instance_key(g.video_id, g.instance_id)];
            inst.class_id = g.class_id;
            inst.boxes.emplace(g.frame, g.box);
        }
    }

    std::vector<TrackStep> track(std::string_view video_id, int class_id, const Detection& anchor,
                                 TrackDirection dir) const override {
        auto mit = meta_.find(std::string(video_id));
        if (mit == meta_.end()) throw std::invalid_argument("unknown video id in tracker");
        const VideoMeta& vm = mit->second;

        const Instance* inst = find_instance(video_id, class_id, anchor);
        if (!inst) return {};

        Rng rng(hash_key(seed_, std::string_view("gtfollow"), video_id, class_id, anchor.frame,
                         anchor.box.x1, anchor.box.y1, anchor.box.x2, anchor.box.y2,
                         dir == TrackDirection::forward ? 1 : 0));
        const int step = dir == TrackDirection::forward ? 1 : -1;
        std::vector<TrackStep> steps;
        double dx = 0.0, dy = 0.0;
        int offset = 0;
        for (int f = anchor.frame + step; f >= 0 && f < vm.frame_count; f += step) {
            auto bit = inst->boxes.find(f);
            if (bit == inst->boxes.end()) break;  // instance not annotated past here
            ++offset;
            const double theta = rng.uniform(0.0, 2.0 * 3.14159265358979323846);
            dx += drift_ * std::cos(theta);
            dy += drift_ * std::sin(theta);
            const BoundingBox& gt = bit->second;
            BoundingBox drifted = shift_box_inside(
                BoundingBox(gt.x1 + dx, gt.y1 + dy, gt.x2 + dx, gt.y2 + dy), vm.width, vm.height);
            steps.push_back({f, drifted, std::max(0.0, 1.0 - decay_ * offset)});
        }
        return steps;
    }

  private:
    struct Instance {
        int class_id = 0;
        std::map<int, BoundingBox> boxes;
    };

    static std::string instance_key(std::string_view video, int instance) {
        return std::string(video) + "/" + std::to_string(instance);
    }

    const Instance* find_instance(std::string_view video_id, int class_id,
                                  const Detection& anchor) const {
        const Instance* best = nullptr;
        double best_iou = -1.0;
        double best_dist = std::numeric_limits<double>::infinity();
        for (const auto& [key, inst] : instances_) {
            if (inst.class_id != class_id) continue;
            if (key.compare(0, video_id.size(), video_id) != 0 ||
                key.size() <= video_id.size() || key[video_id.size()] != '/')
                continue;
            auto bit = inst.boxes.find(anchor.frame);
            if (bit == inst.boxes.end()) continue;
            const double ov = iou(anchor.box, bit->second);
            const double cx = 0.5 * (bit->second.x1 + bit->second.x2) -
                              0.5 * (anchor.box.x1 + anchor.box.x2);
            const double cy = 0.5 * (bit->second.y1 + bit->second.y2) -
                              0.5 * (anchor.box.y1 + anchor.box.y2);
            const double dist = cx * cx + cy * cy;
            // Highest overlap wins; center distance breaks ties among
            // non-overlapping instances (anchors that match nothing still
            // track the nearest instance).
            if (ov > best_iou || (ov == best_iou && dist < best_dist)) {
                best_iou = ov;
                best_dist = dist;
                best = &inst;
            }
        }
        return best;
    }

    std::map<std::string, Instance> instances_;  // ordered for deterministic scans
    std::unordered_map<std::string, VideoMeta> meta_;
    double drift_, decay_;
    std::uint64_t seed_;
};

}  // namespace tubedet
