#pragma once

#include <cmath>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "tubedet/dataio.hpp"
#include "tubedet/geometry.hpp"
#include "tubedet/oracles.hpp"
#include "tubedet/rng.hpp"

namespace tubedet {

/// Parameters of the synthetic benchmark generator. The detector-emulation
/// values (sigma_det, a, b) and tracker-emulation values (drift, conf_decay)
/// are carried here so one config section describes a full experiment setup.
struct SimConfig {
    std::uint64_t seed = 1;
    int videos = 4;
    int frames = 60;
    int classes = 2;
    int instances_per_video = 2;
    double sigma_det = 0.2;   // detector score noise
    double a = 2.0;           // detector score slope (score = a*iou + b + noise)
    double b = -1.3;          // detector score offset
    int proposals_per_frame = 14;
    double jitter = 0.16;     // proposal corner jitter, fraction of box size
    double drift = 3.2;       // tracker drift, pixels per frame
    double conf_decay = 0.02; // tracker confidence decay per frame of offset
    double motion = 0.35;     // max center travel, fraction of min frame side
    double size_drift = 0.25; // max relative box-size change across the clip
    double width = 320.0;
    double height = 240.0;

    void validate() const {
        auto bad = [](const std::string& what) {
            throw std::invalid_argument("sim config: " + what);
        };
        if (videos < 1) bad("videos must be >= 1");
        if (frames < 1) bad("frames must be >= 1");
        if (classes < 1) bad("classes must be >= 1");
        if (instances_per_video < 1) bad("instances_per_video must be >= 1");
        if (sigma_det < 0.0) bad("sigma_det must be >= 0");
        if (a <= 0.0) bad("a must be > 0");
        if (proposals_per_frame < 0) bad("proposals_per_frame must be >= 0");
        if (jitter < 0.0) bad("jitter must be >= 0");
        if (drift < 0.0) bad("drift must be >= 0");
        if (conf_decay < 0.0) bad("conf_decay must be >= 0");
        if (motion < 0.0) bad("motion must be >= 0");
        if (size_drift < 0.0 || size_drift > 0.9) bad("size_drift must be in [0, 0.9]");
        if (!(width > 0.0) || !(height > 0.0)) bad("frame dimensions must be positive");
    }
};

/// A fully materialized synthetic dataset, ready to write or to feed oracles.
struct SyntheticWorld {
    SimConfig cfg;
    DatasetManifest manifest;
    std::vector<GroundTruthObject> ground_truth;
    std::vector<Proposal> proposals;
};

namespace detail {

inline std::string indexed_name(const char* prefix, int i) {
    std::string digits = std::to_string(i);
    if (digits.size() < 2) digits.insert(0, 2 - digits.size(), '0');
    return prefix + digits;
}

inline double lerp(double a, double b, double t) { return a + (b - a) * t; }

/// Linear center motion plus linear size change; both endpoints are chosen
/// so the box stays inside the frame, which by linearity covers every frame.
struct InstanceTrajectory {
    double cx0, cy0, cx1, cy1;  // center endpoints
    double w0, h0, w1, h1;      // size endpoints

    BoundingBox at(double t) const {
        const double cx = lerp(cx0, cx1, t);
        const double cy = lerp(cy0, cy1, t);
        const double hw = 0.5 * lerp(w0, w1, t);
        const double hh = 0.5 * lerp(h0, h1, t);
        return BoundingBox(cx - hw, cy - hh, cx + hw, cy + hh);
    }
};

inline InstanceTrajectory make_trajectory(const SimConfig& cfg, Rng& rng) {
    InstanceTrajectory tr{};
    tr.w0 = cfg.width * rng.uniform(0.12, 0.26);
    tr.h0 = cfg.height * rng.uniform(0.12, 0.26);
    const double scale = 1.0 + rng.uniform(-cfg.size_drift, cfg.size_drift);
    tr.w1 = tr.w0 * scale;
    tr.h1 = tr.h0 * scale;

    auto center_in = [&rng](double half, double extent) {
        return half >= 0.5 * extent ? 0.5 * extent : rng.uniform(half, extent - half);
    };
    tr.cx0 = center_in(0.5 * tr.w0, cfg.width);
    tr.cy0 = center_in(0.5 * tr.h0, cfg.height);

    const double travel = cfg.motion * std::min(cfg.width, cfg.height) * rng.uniform(0.5, 1.0);
    const double angle = rng.uniform(0.0, 2.0 * 3.14159265358979323846);
    auto clamp_center = [](double c, double half, double extent) {
        return std::min(std::max(c, half), extent - half);
    };
    tr.cx1 = clamp_center(tr.cx0 + travel * std::cos(angle), 0.5 * tr.w1, cfg.width);
    tr.cy1 = clamp_center(tr.cy0 + travel * std::sin(angle), 0.5 * tr.h1, cfg.height);
    return tr;
}

/// One proposal near a ground-truth box: every corner coordinate is offset
/// by a uniform draw scaled by the box dimensions, mirroring how region
/// proposals scatter around true objects.
inline BoundingBox jittered_proposal(const BoundingBox& gt, double jitter, double frame_w,
                                     double frame_h, Rng& rng) {
    const double jx = jitter * gt.width();
    const double jy = jitter * gt.height();
    for (int attempt = 0; attempt < 10; ++attempt) {
        auto box = BoundingBox::try_make(gt.x1 + rng.uniform(-jx, jx), gt.y1 + rng.uniform(-jy, jy),
                                         gt.x2 + rng.uniform(-jx, jx), gt.y2 + rng.uniform(-jy, jy));
        if (!box) continue;
        if (auto clamped = try_clamp_box(*box, frame_w, frame_h)) return *clamped;
    }
    return gt;  // jitter pathologically large: fall back to the true box
}

inline BoundingBox random_proposal(double frame_w, double frame_h, Rng& rng) {
    const double x1 = rng.uniform(0.0, 0.85 * frame_w);
    const double y1 = rng.uniform(0.0, 0.85 * frame_h);
    const double x2 = std::min(frame_w, x1 + rng.uniform(0.06 * frame_w, 0.30 * frame_w));
    const double y2 = std::min(frame_h, y1 + rng.uniform(0.06 * frame_h, 0.30 * frame_h));
    return BoundingBox(x1, y1, x2, y2);
}

}  // namespace detail

/// Builds the whole synthetic dataset in memory. Deterministic per seed: all
/// randomness flows through generator streams keyed by (seed, purpose, ids).
inline SyntheticWorld generate_world(const SimConfig& cfg) {
    cfg.validate();
    SyntheticWorld world;
    world.cfg = cfg;

    for (int c = 0; c < cfg.classes; ++c)
        world.manifest.classes.push_back(detail::indexed_name("obj", c));
    for (int v = 0; v < cfg.videos; ++v)
        world.manifest.videos.push_back(
            {detail::indexed_name("video", v), cfg.frames, cfg.width, cfg.height});

    // Ground truth: per video, a handful of instances with linear trajectories.
    // Classes are assigned round-robin so every class appears somewhere.
    for (int v = 0; v < cfg.videos; ++v) {
        const auto& vm = world.manifest.videos[static_cast<std::size_t>(v)];
        std::vector<detail::InstanceTrajectory> trajectories;
        std::vector<int> instance_class;
        for (int j = 0; j < cfg.instances_per_video; ++j) {
            Rng rng(hash_key(cfg.seed, "sim.traj", vm.video_id, std::int64_t{j}));
            trajectories.push_back(detail::make_trajectory(cfg, rng));
            instance_class.push_back((v * cfg.instances_per_video + j) % cfg.classes);
        }
        for (int f = 0; f < cfg.frames; ++f) {
            const double t = cfg.frames == 1 ? 0.0 : static_cast<double>(f) / (cfg.frames - 1);
            for (int j = 0; j < cfg.instances_per_video; ++j)
                world.ground_truth.push_back({vm.video_id, f,
                                              instance_class[static_cast<std::size_t>(j)], j,
                                              trajectories[static_cast<std::size_t>(j)].at(t)});
        }

        // Proposals: roughly 60% scatter around the true objects, the rest
        // are uniform background boxes.
        const int near = cfg.instances_per_video > 0 ? cfg.proposals_per_frame * 3 / 5 : 0;
        for (int f = 0; f < cfg.frames; ++f) {
            const double t = cfg.frames == 1 ? 0.0 : static_cast<double>(f) / (cfg.frames - 1);
            Rng rng(hash_key(cfg.seed, "sim.props", vm.video_id, std::int64_t{f}));
            for (int i = 0; i < cfg.proposals_per_frame; ++i) {
                BoundingBox box =
                    i < near
                        ? detail::jittered_proposal(
                              trajectories[static_cast<std::size_t>(i % cfg.instances_per_video)]
                                  .at(t),
                              cfg.jitter, cfg.width, cfg.height, rng)
                        : detail::random_proposal(cfg.width, cfg.height, rng);
                world.proposals.push_back({vm.video_id, f, box});
            }
        }
    }
    return world;
}

/// Writes manifest + record files into dir; returns the manifest path.
/// Output bytes are a pure function of the world, hence of the seed.
inline std::filesystem::path write_world(const SyntheticWorld& world,
                                         const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    DatasetManifest manifest = world.manifest;
    manifest.ground_truth_path = "ground_truth.jsonl";
    manifest.proposals_path = "proposals.jsonl";
    manifest.base_dir = dir;
    write_ground_truth(world.ground_truth, dir / "ground_truth.jsonl", manifest);
    write_proposals(world.proposals, dir / "proposals.jsonl");
    const auto manifest_path = dir / "manifest.json";
    write_manifest(manifest, manifest_path);
    return manifest_path;
}

}  // namespace tubedet
