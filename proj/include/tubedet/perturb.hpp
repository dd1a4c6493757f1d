#pragma once

#include <span>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <variant>
#include <vector>

#include "tubedet/dataio.hpp"
#include "tubedet/geometry.hpp"
#include "tubedet/oracles.hpp"
#include "tubedet/rng.hpp"
#include "tubedet/tubelet.hpp"

namespace tubedet {

/// Random corner perturbation: n samples per box, offsets bounded by
/// ratio * box size.
struct RandomScheme {
    int samples = 20;
    double ratio = 0.2;
};

/// Replacement by original still-image detections overlapping the box.
struct OriginalScheme {
    double iou_thresh = 0.5;
};

using PerturbScheme = std::variant<RandomScheme, OriginalScheme>;

inline std::string scheme_label(const PerturbScheme& scheme) {
    if (const auto* rs = std::get_if<RandomScheme>(&scheme))
        return "random(n=" + std::to_string(rs->samples) + ",r=" + std::to_string(rs->ratio) + ")";
    return "original(t=" + std::to_string(std::get<OriginalScheme>(scheme).iou_thresh) + ")";
}

/// How multiple schemes combine: per_scheme_union emits every tubelet once
/// per scheme (doubling the tubelet set for two schemes); candidate_union
/// pools each tubelet once over the merged candidate sets.
enum class PoolMode { per_scheme_union, candidate_union };

struct PerturbConfig {
    std::vector<PerturbScheme> schemes = {RandomScheme{}, OriginalScheme{}};
    PoolMode mode = PoolMode::per_scheme_union;
    std::uint64_t seed = 1;

    void validate() const {
        if (schemes.empty())
            throw std::invalid_argument("perturb config: at least one scheme required");
        for (const auto& scheme : schemes) {
            if (const auto* rs = std::get_if<RandomScheme>(&scheme)) {
                if (rs->samples < 1)
                    throw std::invalid_argument("perturb config: samples must be >= 1");
                if (rs->ratio < 0.0)
                    throw std::invalid_argument("perturb config: ratio must be >= 0");
            } else if (const auto& os = std::get<OriginalScheme>(scheme);
                       os.iou_thresh < 0.0 || os.iou_thresh > 1.0) {
                throw std::invalid_argument("perturb config: iou threshold outside [0,1]");
            }
        }
    }
};

/// Draws n corner-jittered variants of box. Each sample offsets all four
/// corner coordinates independently, x offsets uniform in [-r*w, r*w] and
/// y offsets uniform in [-r*h, r*h] of the box's own size, then clamps to
/// the frame. A sample whose corners cross (or that leaves the frame
/// entirely) is redrawn up to 10 times, then skipped, so fewer than n
/// boxes may come back for extreme ratios.
inline std::vector<BoundingBox> random_perturb(const BoundingBox& box, double ratio, int n,
                                               double frame_w, double frame_h, Rng& rng) {
    if (n < 1) throw std::invalid_argument("random_perturb: need at least one sample");
    if (ratio < 0.0) throw std::invalid_argument("random_perturb: ratio must be >= 0");
    const double rx = ratio * box.width();
    const double ry = ratio * box.height();
    std::vector<BoundingBox> out;
    out.reserve(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        for (int attempt = 0; attempt < 10; ++attempt) {
            auto sample = BoundingBox::try_make(
                box.x1 + rng.uniform(-rx, rx), box.y1 + rng.uniform(-ry, ry),
                box.x2 + rng.uniform(-rx, rx), box.y2 + rng.uniform(-ry, ry));
            if (!sample) continue;
            if (auto clamped = try_clamp_box(*sample, frame_w, frame_h)) {
                out.push_back(*clamped);
                break;
            }
        }
    }
    return out;
}

/// All original detection boxes on the tubelet box's frame overlapping it
/// with iou >= t, in input order. Callers pass the detections already
/// restricted to the right video, class and frame.
inline std::vector<BoundingBox> original_replacement_candidates(
    const BoundingBox& tubelet_box, std::span<const Detection> frame_dets, double t) {
    if (t < 0.0 || t > 1.0)
        throw std::invalid_argument("replacement iou threshold outside [0,1]");
    std::vector<BoundingBox> out;
    for (const auto& d : frame_dets)
        if (iou(d.box, tubelet_box) >= t) out.push_back(d.box);
    return out;
}

/// Replaces each tubelet box (and its det_score) by the highest-scoring
/// candidate under the oracle. candidates[i] belongs to boxes[i] and must
/// start with the original box, which therefore wins ties; among the rest,
/// the lowest index wins. Track scores and anchor offsets are untouched.
inline void max_pool(Tubelet& tubelet, const std::vector<std::vector<BoundingBox>>& candidates,
                     const DetectorOracle& oracle) {
    if (candidates.size() != tubelet.boxes.size())
        throw std::invalid_argument("max_pool: one candidate list per tubelet box required");
    for (std::size_t i = 0; i < tubelet.boxes.size(); ++i) {
        auto& tb = tubelet.boxes[i];
        const auto& cands = candidates[i];
        if (cands.empty() || !(cands.front() == tb.box))
            throw std::invalid_argument(
                "max_pool: candidate list must start with the original box");
        const auto scores =
            oracle.score_boxes(tubelet.video_id, tb.frame, tubelet.class_id, cands);
        std::size_t best = 0;
        for (std::size_t k = 1; k < scores.size(); ++k)
            if (scores[k] > scores[best]) best = k;
        tb.box = cands[best];
        tb.det_score = scores[best];
    }
}

/// Still-image detections indexed by (video, class, frame) for fast lookup
/// of replacement candidates.
class DetectionIndex {
  public:
    DetectionIndex() = default;

    DetectionIndex(std::span<const Detection> dets, const DatasetManifest& manifest) {
        for (const auto& d : dets) {
            const VideoMeta* vm = manifest.find_video(d.video_id);
            if (!vm)
                throw std::invalid_argument("detection references unknown video " + d.video_id);
            auto& per_frame = frames_[key(d.video_id, d.class_id)];
            per_frame.resize(static_cast<std::size_t>(vm->frame_count));
            per_frame[static_cast<std::size_t>(d.frame)].push_back(d);
        }
    }

    std::span<const Detection> at(std::string_view video, int class_id, int frame) const {
        auto it = frames_.find(key(video, class_id));
        if (it == frames_.end()) return {};
        const auto& per_frame = it->second;
        if (frame < 0 || frame >= static_cast<int>(per_frame.size())) return {};
        return per_frame[static_cast<std::size_t>(frame)];
    }

  private:
    static std::string key(std::string_view video, int class_id) {
        std::string k(video);
        k.push_back('\x1f');
        k += std::to_string(class_id);
        return k;
    }

    std::unordered_map<std::string, std::vector<std::vector<Detection>>> frames_;
};

namespace detail {

/// Candidate lists for one tubelet under one scheme; each list starts with
/// the original box. Randomness is keyed by (seed, tubelet identity, frame)
/// so results do not depend on processing order.
inline std::vector<std::vector<BoundingBox>> scheme_candidates(
    const Tubelet& tubelet, const PerturbScheme& scheme, const VideoMeta& video,
    const DetectionIndex& dets, std::uint64_t seed) {
    std::vector<std::vector<BoundingBox>> out;
    out.reserve(tubelet.boxes.size());
    for (const auto& tb : tubelet.boxes) {
        std::vector<BoundingBox> cands{tb.box};
        if (const auto* rs = std::get_if<RandomScheme>(&scheme)) {
            Rng rng(hash_key(seed, "perturb", tubelet.video_id,
                             std::int64_t{tubelet.class_id}, std::int64_t{tubelet.anchor_frame},
                             std::int64_t{tubelet.start_frame()}, std::int64_t{tb.frame}));
            const auto samples =
                random_perturb(tb.box, rs->ratio, rs->samples, video.width, video.height, rng);
            cands.insert(cands.end(), samples.begin(), samples.end());
        } else {
            const auto& os = std::get<OriginalScheme>(scheme);
            const auto repl = original_replacement_candidates(
                tb.box, dets.at(tubelet.video_id, tubelet.class_id, tb.frame), os.iou_thresh);
            cands.insert(cands.end(), repl.begin(), repl.end());
        }
        out.push_back(std::move(cands));
    }
    return out;
}

/// Merges per-box candidate lists, keeping a single leading original box.
inline void append_candidates(std::vector<std::vector<BoundingBox>>& into,
                              const std::vector<std::vector<BoundingBox>>& more) {
    for (std::size_t i = 0; i < into.size(); ++i)
        into[i].insert(into[i].end(), more[i].begin() + 1, more[i].end());
}

}  // namespace detail

/// Pools one tubelet under a single scheme.
inline Tubelet pool_tubelet(const Tubelet& tubelet, const PerturbScheme& scheme,
                            const DetectorOracle& oracle, const VideoMeta& video,
                            const DetectionIndex& dets, std::uint64_t seed) {
    Tubelet pooled = tubelet;
    max_pool(pooled, detail::scheme_candidates(tubelet, scheme, video, dets, seed), oracle);
    return pooled;
}

/// Pools one tubelet over the union of all schemes' candidates.
inline Tubelet pool_tubelet_union(const Tubelet& tubelet,
                                  const std::vector<PerturbScheme>& schemes,
                                  const DetectorOracle& oracle, const VideoMeta& video,
                                  const DetectionIndex& dets, std::uint64_t seed) {
    if (schemes.empty()) throw std::invalid_argument("pool_tubelet_union: no schemes");
    auto cands = detail::scheme_candidates(tubelet, schemes.front(), video, dets, seed);
    for (std::size_t s = 1; s < schemes.size(); ++s)
        detail::append_candidates(
            cands, detail::scheme_candidates(tubelet, schemes[s], video, dets, seed));
    Tubelet pooled = tubelet;
    max_pool(pooled, cands, oracle);
    return pooled;
}

/// Applies the configured schemes to a tubelet set. In per_scheme_union
/// mode each input tubelet yields one pooled tubelet per scheme (input
/// order, scheme order within); in candidate_union mode exactly one.
inline std::vector<Tubelet> perturb_and_pool(const std::vector<Tubelet>& tubelets,
                                             const PerturbConfig& cfg,
                                             const DetectorOracle& oracle,
                                             const DatasetManifest& manifest,
                                             const DetectionIndex& dets) {
    cfg.validate();
    std::vector<Tubelet> out;
    out.reserve(tubelets.size() *
                (cfg.mode == PoolMode::per_scheme_union ? cfg.schemes.size() : 1));
    for (const auto& t : tubelets) {
        const VideoMeta* vm = manifest.find_video(t.video_id);
        if (!vm) throw std::invalid_argument("tubelet references unknown video " + t.video_id);
        if (cfg.mode == PoolMode::candidate_union) {
            out.push_back(pool_tubelet_union(t, cfg.schemes, oracle, *vm, dets, cfg.seed));
        } else {
            for (const auto& scheme : cfg.schemes)
                out.push_back(pool_tubelet(t, scheme, oracle, *vm, dets, cfg.seed));
        }
    }
    return out;
}

}  // namespace tubedet
