// Command-line front end for the tubelet detection pipeline. Every stage is
// exposed as its own subcommand so a run can be reproduced, resumed or
// swapped out piecewise; `pipeline run` chains all of them.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "tubedet/config.hpp"
#include "tubedet/dataio.hpp"
#include "tubedet/errors.hpp"
#include "tubedet/eval.hpp"
#include "tubedet/oracles.hpp"
#include "tubedet/pipeline.hpp"
#include "tubedet/sim.hpp"
#include "tubedet/tcn.hpp"
#include "tubedet/tubelet.hpp"

namespace {

using namespace tubedet;

void ensure_parent(const std::string& path) {
    const auto parent = std::filesystem::path(path).parent_path();
    if (!parent.empty()) std::filesystem::create_directories(parent);
}

std::vector<GroundTruthObject> load_gt(const DatasetManifest& manifest) {
    if (manifest.ground_truth_path.empty()) return {};
    return read_ground_truth(manifest.resolve(manifest.ground_truth_path, "ground truth"),
                             manifest);
}

// ---------------------------------------------------------------------------
// shared detector flags
// ---------------------------------------------------------------------------

struct DetectorFlags {
    std::string kind = "synthetic";
    double a = SimConfig{}.a;
    double b = SimConfig{}.b;
    double sigma_det = SimConfig{}.sigma_det;
};

void add_detector_flags(CLI::App* cmd, DetectorFlags& f) {
    cmd->add_option("--detector", f.kind, "detector oracle: synthetic or file")
        ->check(CLI::IsMember({"synthetic", "file"}))
        ->capture_default_str();
    cmd->add_option("--det-a", f.a, "synthetic detector score slope")->capture_default_str();
    cmd->add_option("--det-b", f.b, "synthetic detector score offset")->capture_default_str();
    cmd->add_option("--sigma-det", f.sigma_det, "synthetic detector score noise stddev")
        ->capture_default_str();
}

std::unique_ptr<DetectorOracle> make_detector(const DetectorFlags& f,
                                              const DatasetManifest& manifest,
                                              const std::vector<GroundTruthObject>& gt,
                                              std::uint64_t seed) {
    if (f.kind == "synthetic") {
        if (gt.empty())
            throw ParseError(
                "the synthetic detector needs ground truth, but the manifest names none");
        return std::make_unique<SyntheticDetector>(gt, f.a, f.b, f.sigma_det,
                                                   hash_key(seed, "detector"));
    }
    return std::make_unique<FileBackedDetector>(
        read_detections(manifest.resolve(manifest.detections_path, "detections"), manifest));
}

// ---------------------------------------------------------------------------
// simulate
// ---------------------------------------------------------------------------

struct SimulateArgs {
    std::string config;
    std::string out;
    SimConfig f;
};

void setup_simulate(CLI::App& app) {
    auto* cmd = app.add_subcommand("simulate", "generate a synthetic video dataset");
    auto args = std::make_shared<SimulateArgs>();
    cmd->add_option("--config", args->config, "config file; its [sim] section is used");
    cmd->add_option("--out", args->out, "dataset output directory")->required();
    auto& f = args->f;
    cmd->add_option("--seed", f.seed, "generator seed")->capture_default_str();
    cmd->add_option("--videos", f.videos, "number of videos")->capture_default_str();
    cmd->add_option("--frames", f.frames, "frames per video")->capture_default_str();
    cmd->add_option("--classes", f.classes, "number of object classes")->capture_default_str();
    cmd->add_option("--instances-per-video", f.instances_per_video, "objects per video")
        ->capture_default_str();
    cmd->add_option("--sigma-det", f.sigma_det, "detector score noise stddev")
        ->capture_default_str();
    cmd->add_option("--det-a", f.a, "detector score slope")->capture_default_str();
    cmd->add_option("--det-b", f.b, "detector score offset")->capture_default_str();
    cmd->add_option("--proposals-per-frame", f.proposals_per_frame, "proposal boxes per frame")
        ->capture_default_str();
    cmd->add_option("--jitter", f.jitter, "proposal corner jitter (fraction of box size)")
        ->capture_default_str();
    cmd->add_option("--drift", f.drift, "tracker drift in pixels per frame")
        ->capture_default_str();
    cmd->add_option("--conf-decay", f.conf_decay, "tracker confidence decay per frame")
        ->capture_default_str();
    cmd->add_option("--motion", f.motion, "max object travel (fraction of min frame side)")
        ->capture_default_str();
    cmd->add_option("--size-drift", f.size_drift, "max relative box-size change per clip")
        ->capture_default_str();
    cmd->add_option("--width", f.width, "frame width")->capture_default_str();
    cmd->add_option("--height", f.height, "frame height")->capture_default_str();

    cmd->callback([args, cmd] {
        SimConfig cfg = args->f;
        if (!args->config.empty()) {
            IniFile ini = IniFile::parse(args->config);
            cfg = PipelineConfig::from_ini(ini).sim;
            const SimConfig& f = args->f;  // explicit flags override the file
            if (cmd->count("--seed")) cfg.seed = f.seed;
            if (cmd->count("--videos")) cfg.videos = f.videos;
            if (cmd->count("--frames")) cfg.frames = f.frames;
            if (cmd->count("--classes")) cfg.classes = f.classes;
            if (cmd->count("--instances-per-video"))
                cfg.instances_per_video = f.instances_per_video;
            if (cmd->count("--sigma-det")) cfg.sigma_det = f.sigma_det;
            if (cmd->count("--det-a")) cfg.a = f.a;
            if (cmd->count("--det-b")) cfg.b = f.b;
            if (cmd->count("--proposals-per-frame"))
                cfg.proposals_per_frame = f.proposals_per_frame;
            if (cmd->count("--jitter")) cfg.jitter = f.jitter;
            if (cmd->count("--drift")) cfg.drift = f.drift;
            if (cmd->count("--conf-decay")) cfg.conf_decay = f.conf_decay;
            if (cmd->count("--motion")) cfg.motion = f.motion;
            if (cmd->count("--size-drift")) cfg.size_drift = f.size_drift;
            if (cmd->count("--width")) cfg.width = f.width;
            if (cmd->count("--height")) cfg.height = f.height;
        }
        const auto manifest_path = write_world(generate_world(cfg), args->out);
        std::cout << "wrote " << manifest_path.string() << '\n';
    });
}

// ---------------------------------------------------------------------------
// filter
// ---------------------------------------------------------------------------

struct FilterArgs {
    std::string manifest, out, detections_out;
    double threshold = -1.1;
    std::uint64_t seed = 1;
    DetectorFlags det;
};

void setup_filter(CLI::App& app) {
    auto* cmd = app.add_subcommand(
        "filter", "drop proposals whose best class score is below the threshold");
    auto args = std::make_shared<FilterArgs>();
    cmd->add_option("--manifest", args->manifest, "dataset manifest")->required();
    cmd->add_option("--out", args->out, "output file for the surviving proposals")->required();
    cmd->add_option("--detections-out", args->detections_out,
                    "also write per-class detections for the surviving proposals");
    cmd->add_option("--threshold", args->threshold, "minimum best-class score")
        ->capture_default_str();
    cmd->add_option("--seed", args->seed, "seed for the detector noise stream")
        ->capture_default_str();
    add_detector_flags(cmd, args->det);

    cmd->callback([args] {
        const DatasetManifest manifest = read_manifest(args->manifest);
        const auto gt = load_gt(manifest);
        const auto detector = make_detector(args->det, manifest, gt, args->seed);
        const auto raw =
            read_proposals(manifest.resolve(manifest.proposals_path, "proposals"), manifest);
        const auto kept = filter_all_proposals(manifest, raw, *detector, args->threshold);
        ensure_parent(args->out);
        write_proposals(kept, args->out);
        std::cout << "kept " << kept.size() << " of " << raw.size() << " proposals -> "
                  << args->out << '\n';
        if (!args->detections_out.empty()) {
            const auto dets = score_all_proposals(manifest, kept, *detector);
            ensure_parent(args->detections_out);
            write_detections(dets, args->detections_out, manifest);
            std::cout << "wrote " << dets.size() << " detections -> " << args->detections_out
                      << '\n';
        }
    });
}

// ---------------------------------------------------------------------------
// propose
// ---------------------------------------------------------------------------

struct ProposeArgs {
    std::string manifest, detections, out, tracker = "gt_follow", proposals;
    std::uint64_t seed = 1;
    double drift = SimConfig{}.drift;
    double conf_decay = SimConfig{}.conf_decay;
    ProposalConfig pc;
    DetectorFlags det;
};

void setup_propose(CLI::App& app) {
    auto* cmd = app.add_subcommand(
        "propose", "build tubelet proposals by tracking from high-scoring anchors");
    auto args = std::make_shared<ProposeArgs>();
    cmd->add_option("--manifest", args->manifest, "dataset manifest")->required();
    cmd->add_option("--detections", args->detections, "per-class detections file")->required();
    cmd->add_option("--out", args->out, "output tubelet file")->required();
    cmd->add_option("--tracker", args->tracker, "tracker oracle: gt_follow or iou_chain")
        ->check(CLI::IsMember({"gt_follow", "iou_chain"}))
        ->capture_default_str();
    cmd->add_option("--proposals", args->proposals,
                    "filtered proposals file (candidate boxes for the iou_chain tracker)");
    cmd->add_option("--seed", args->seed, "seed for the tracker and detector noise streams")
        ->capture_default_str();
    cmd->add_option("--drift", args->drift, "gt_follow tracker drift in pixels per frame")
        ->capture_default_str();
    cmd->add_option("--conf-decay", args->conf_decay,
                    "gt_follow tracker confidence decay per frame")
        ->capture_default_str();
    cmd->add_option("--early-stop", args->pc.early_stop_conf,
                    "stop tracking when confidence falls below this")
        ->capture_default_str();
    cmd->add_option("--anchor-min-score", args->pc.anchor_min_score,
                    "minimum detection score for an anchor")
        ->capture_default_str();
    cmd->add_option("--suppression-iou", args->pc.suppression_iou,
                    "suppress later anchors overlapping a selected tubelet by this much")
        ->capture_default_str();
    cmd->add_option("--max-anchors", args->pc.max_anchors_per_class,
                    "maximum anchors per video and class")
        ->capture_default_str();
    add_detector_flags(cmd, args->det);

    cmd->callback([args] {
        const DatasetManifest manifest = read_manifest(args->manifest);
        const auto gt = load_gt(manifest);
        const auto detector = make_detector(args->det, manifest, gt, args->seed);
        const auto dets = read_detections(args->detections, manifest);
        std::unique_ptr<TrackerOracle> tracker;
        if (args->tracker == "gt_follow") {
            if (gt.empty())
                throw ParseError(
                    "the gt_follow tracker needs ground truth, but the manifest names none");
            tracker = std::make_unique<GtFollowTracker>(gt, manifest.videos, args->drift,
                                                        args->conf_decay,
                                                        hash_key(args->seed, "tracker"));
        } else {
            if (args->proposals.empty())
                throw ConfigError(
                    "tracker iou_chain needs --proposals (the filtered proposal boxes)");
            tracker = std::make_unique<IouChainTracker>(
                manifest.videos,
                group_proposals_by_frame(manifest, read_proposals(args->proposals, manifest)));
        }
        try {
            args->pc.validate();
        } catch (const std::invalid_argument& e) {
            throw ConfigError(e.what());
        }
        const auto tubelets = propose_all(manifest, dets, *tracker, *detector, args->pc);
        ensure_parent(args->out);
        write_tubelets(tubelets, args->out, manifest);
        std::cout << "proposed " << tubelets.size() << " tubelets -> " << args->out << '\n';
    });
}

// ---------------------------------------------------------------------------
// perturb-pool
// ---------------------------------------------------------------------------

struct PoolArgs {
    std::string manifest, tubelets, detections, out;
    std::uint64_t seed = 1;
    std::vector<std::string> schemes = {"random", "original"};
    int random_samples = 20;
    double random_ratio = 0.2;
    double original_iou = 0.5;
    std::string pool_mode = "per_scheme_union";
    DetectorFlags det;
};

void setup_perturb_pool(CLI::App& app) {
    auto* cmd = app.add_subcommand(
        "perturb-pool", "replace each tubelet box by its best-scoring perturbation");
    auto args = std::make_shared<PoolArgs>();
    cmd->add_option("--manifest", args->manifest, "dataset manifest")->required();
    cmd->add_option("--tubelets", args->tubelets, "input tubelet file")->required();
    cmd->add_option("--detections", args->detections,
                    "per-class detections file (replacement candidates)")
        ->required();
    cmd->add_option("--out", args->out, "output tubelet file")->required();
    cmd->add_option("--seed", args->seed, "seed for the perturbation streams")
        ->capture_default_str();
    cmd->add_option("--schemes", args->schemes,
                    "perturbation schemes in order (default: random,original)")
        ->delimiter(',');
    cmd->add_option("--random-samples", args->random_samples, "samples per box, random scheme")
        ->capture_default_str();
    cmd->add_option("--random-ratio", args->random_ratio,
                    "corner offset range as a fraction of box size, random scheme")
        ->capture_default_str();
    cmd->add_option("--original-iou", args->original_iou,
                    "minimum overlap with the tubelet box, original scheme")
        ->capture_default_str();
    cmd->add_option("--pool-mode", args->pool_mode,
                    "per_scheme_union (one output tubelet per scheme) or candidate_union")
        ->check(CLI::IsMember({"per_scheme_union", "candidate_union"}))
        ->capture_default_str();
    add_detector_flags(cmd, args->det);

    cmd->callback([args] {
        const DatasetManifest manifest = read_manifest(args->manifest);
        const auto gt = load_gt(manifest);
        const auto detector = make_detector(args->det, manifest, gt, args->seed);
        const auto tubelets = read_tubelets(args->tubelets, manifest);
        const auto dets = read_detections(args->detections, manifest);
        PerturbConfig cfg;
        cfg.schemes = make_schemes(args->schemes, args->random_samples, args->random_ratio,
                                   args->original_iou);
        cfg.mode = parse_pool_mode(args->pool_mode);
        cfg.seed = args->seed;
        const auto pooled = pool_all(manifest, tubelets, dets, cfg, *detector);
        ensure_parent(args->out);
        write_tubelets(pooled, args->out, manifest);
        std::cout << "pooled " << tubelets.size() << " tubelets into " << pooled.size()
                  << " -> " << args->out << '\n';
    });
}

// ---------------------------------------------------------------------------
// tcn train / tcn rescore
// ---------------------------------------------------------------------------

struct TrainArgs {
    std::string manifest, tubelets, out_dir;
    std::uint64_t seed = 1;
    int hidden_channels = 256;
    TrainConfig tc;
};

struct RescoreArgs {
    std::string manifest, tubelets, models_dir, out;
    int window_stride = 25;
};

void setup_tcn(CLI::App& app) {
    auto* tcn = app.add_subcommand("tcn", "temporal convolutional rescoring");
    tcn->require_subcommand(1);

    auto* train_cmd =
        tcn->add_subcommand("train", "train one temporal model per class on tubelets");
    auto targs = std::make_shared<TrainArgs>();
    train_cmd->add_option("--manifest", targs->manifest, "dataset manifest")->required();
    train_cmd->add_option("--tubelets", targs->tubelets, "training tubelet file")->required();
    train_cmd->add_option("--out-dir", targs->out_dir, "directory for <class>.tcn models")
        ->required();
    train_cmd->add_option("--seed", targs->seed, "base seed; each class trains its own stream")
        ->capture_default_str();
    train_cmd->add_option("--learning-rate", targs->tc.learning_rate, "SGD learning rate")
        ->capture_default_str();
    train_cmd->add_option("--momentum", targs->tc.momentum, "SGD momentum")
        ->capture_default_str();
    train_cmd->add_option("--iterations", targs->tc.iterations, "training iterations")
        ->capture_default_str();
    train_cmd->add_option("--batch-size", targs->tc.batch_size, "windows per iteration")
        ->capture_default_str();
    train_cmd->add_option("--label-iou", targs->tc.label_iou,
                          "overlap with ground truth above which a frame is positive")
        ->capture_default_str();
    train_cmd->add_option("--window-stride", targs->tc.window_stride,
                          "stride between training windows")
        ->capture_default_str();
    train_cmd
        ->add_option("--stop-accuracy", targs->tc.stop_accuracy,
                     "stop early when training frame accuracy reaches this (negative: off)")
        ->capture_default_str();
    train_cmd
        ->add_option("--accuracy-check-every", targs->tc.accuracy_check_every,
                     "iterations between early-stop accuracy checks")
        ->capture_default_str();
    train_cmd
        ->add_option("--hidden-channels", targs->hidden_channels,
                     "width of the three hidden temporal layers")
        ->capture_default_str();

    train_cmd->callback([targs] {
        const DatasetManifest manifest = read_manifest(targs->manifest);
        const auto gt = load_gt(manifest);
        if (gt.empty())
            throw ParseError("training needs ground truth, but the manifest names none");
        const auto tubelets = read_tubelets(targs->tubelets, manifest);
        targs->tc.validate();
        TcnArchitecture arch;
        const int h = targs->hidden_channels;
        arch.layers = {{h, 5}, {h, 5}, {h, 7}, {2, 3}};
        arch.validate();
        const auto models = train_per_class(manifest, tubelets, gt, targs->tc, targs->seed, arch);
        if (models.empty())
            throw ParseError("no tubelets to train on in " + targs->tubelets);
        std::filesystem::create_directories(targs->out_dir);
        for (const auto& [c, model] : models) {
            const auto path =
                std::filesystem::path(targs->out_dir) / (manifest.class_name(c) + ".tcn");
            save_model(model, path);
            std::cout << "wrote " << path.string() << '\n';
        }
    });

    auto* rescore_cmd =
        tcn->add_subcommand("rescore", "score every tubelet frame with its class model");
    auto rargs = std::make_shared<RescoreArgs>();
    rescore_cmd->add_option("--manifest", rargs->manifest, "dataset manifest")->required();
    rescore_cmd->add_option("--tubelets", rargs->tubelets, "input tubelet file")->required();
    rescore_cmd->add_option("--models-dir", rargs->models_dir, "directory with <class>.tcn")
        ->required();
    rescore_cmd->add_option("--out", rargs->out, "output tubelet file")->required();
    rescore_cmd
        ->add_option("--window-stride", rargs->window_stride, "stride between scoring windows")
        ->capture_default_str();

    rescore_cmd->callback([rargs] {
        if (rargs->window_stride < 1) throw ConfigError("--window-stride must be >= 1");
        const DatasetManifest manifest = read_manifest(rargs->manifest);
        const auto tubelets = read_tubelets(rargs->tubelets, manifest);
        std::map<int, TcnModel> models;
        for (const auto& t : tubelets) {
            if (models.count(t.class_id)) continue;
            const auto path = std::filesystem::path(rargs->models_dir) /
                              (manifest.class_name(t.class_id) + ".tcn");
            if (!std::filesystem::exists(path))
                throw ParseError("missing model " + path.string() +
                                 "; it is produced by 'tcn train'");
            models.emplace(t.class_id, load_model(path));
        }
        const auto rescored = rescore_all(tubelets, models, rargs->window_stride);
        ensure_parent(rargs->out);
        write_tubelets(rescored, rargs->out, manifest);
        std::cout << "rescored " << rescored.size() << " tubelets -> " << rargs->out << '\n';
    });
}

// ---------------------------------------------------------------------------
// eval map / eval corloc
// ---------------------------------------------------------------------------

struct EvalMapArgs {
    std::string manifest, detections, out, ablation;
    double iou = 0.5;
};

struct CorlocArgs {
    std::string manifest, detections, out;
    double iou = 0.5;
};

void setup_eval(CLI::App& app) {
    auto* eval = app.add_subcommand("eval", "evaluate detections against ground truth");
    eval->require_subcommand(1);

    auto* map_cmd = eval->add_subcommand("map", "mean average precision per class");
    auto margs = std::make_shared<EvalMapArgs>();
    map_cmd->add_option("--manifest", margs->manifest, "dataset manifest")->required();
    map_cmd->add_option("--detections", margs->detections, "detections file to score")
        ->required();
    map_cmd->add_option("--out", margs->out, "also write the report as JSON lines");
    map_cmd->add_option("--iou", margs->iou, "overlap needed to match a ground-truth box")
        ->capture_default_str();
    map_cmd->add_option("--ablation", margs->ablation, "label stored in the report");

    map_cmd->callback([margs] {
        const DatasetManifest manifest = read_manifest(margs->manifest);
        const auto gt = load_gt(manifest);
        if (gt.empty())
            throw ParseError("evaluation needs ground truth, but the manifest names none");
        const auto dets = read_detections(margs->detections, manifest);
        EvalReport report = mean_ap(dets, gt, manifest.classes, margs->iou);
        if (!margs->ablation.empty()) report.ablation = margs->ablation;
        if (!margs->out.empty()) {
            ensure_parent(margs->out);
            write_report(report, margs->out);
        }
        write_report_table(std::span<const EvalReport>(&report, 1), std::cout);
    });

    auto* corloc_cmd = eval->add_subcommand(
        "corloc", "fraction of annotated frames whose top detection hits an object");
    auto cargs = std::make_shared<CorlocArgs>();
    corloc_cmd->add_option("--manifest", cargs->manifest, "dataset manifest")->required();
    corloc_cmd->add_option("--detections", cargs->detections, "detections file to score")
        ->required();
    corloc_cmd->add_option("--out", cargs->out, "also write the results as JSON lines");
    corloc_cmd
        ->add_option("--iou", cargs->iou, "overlap the top detection must exceed to count")
        ->capture_default_str();

    corloc_cmd->callback([cargs] {
        const DatasetManifest manifest = read_manifest(cargs->manifest);
        const auto gt = load_gt(manifest);
        if (gt.empty())
            throw ParseError("evaluation needs ground truth, but the manifest names none");
        const auto dets = read_detections(cargs->detections, manifest);

        std::vector<std::pair<std::string, CorLocResult>> rows;
        for (int c = 0; c < manifest.num_classes(); ++c) {
            std::vector<Detection> class_dets;
            for (const auto& d : dets)
                if (d.class_id == c) class_dets.push_back(d);
            std::vector<GroundTruthObject> class_gts;
            for (const auto& g : gt)
                if (g.class_id == c) class_gts.push_back(g);
            if (class_gts.empty()) continue;  // class absent from this dataset
            rows.emplace_back(manifest.class_name(c), corloc(class_dets, class_gts, cargs->iou));
        }
        if (rows.empty()) throw std::invalid_argument("no class has ground truth");

        std::cout << "class        corloc  localized/frames\n";
        for (const auto& [name, r] : rows) {
            std::cout << name;
            for (std::size_t i = name.size(); i < 13; ++i) std::cout << ' ';
            std::cout << std::fixed << std::setprecision(4) << r.corloc << "  " << r.localized
                      << "/" << r.frames << '\n';
        }
        if (!cargs->out.empty()) {
            ensure_parent(cargs->out);
            std::ofstream out(cargs->out);
            if (!out) throw ParseError("cannot write " + cargs->out);
            for (const auto& [name, r] : rows) {
                nlohmann::json j;
                j["record"] = "corloc";
                j["class"] = name;
                j["corloc"] = r.corloc;
                j["localized"] = r.localized;
                j["frames"] = r.frames;
                out << j.dump() << '\n';
            }
        }
    });
}

// ---------------------------------------------------------------------------
// pipeline run
// ---------------------------------------------------------------------------

struct PipelineArgs {
    std::string config;
    std::uint64_t seed = 1;
    std::string out, manifest, tracker, detector, fusion;
    std::vector<std::string> ablations;
    std::string from = "simulate";
};

void setup_pipeline(CLI::App& app) {
    auto* pipeline = app.add_subcommand("pipeline", "run the full detection pipeline");
    pipeline->require_subcommand(1);

    auto* run = pipeline->add_subcommand("run", "execute every stage and report");
    auto args = std::make_shared<PipelineArgs>();
    run->add_option("--config", args->config, "experiment configuration file")->required();
    run->add_option("--seed", args->seed, "override the global seed");
    run->add_option("--out", args->out, "override the output directory");
    run->add_option("--manifest", args->manifest, "override the dataset manifest");
    run->add_option("--tracker", args->tracker, "override the tracker oracle")
        ->check(CLI::IsMember({"gt_follow", "iou_chain"}));
    run->add_option("--detector", args->detector, "override the detector oracle")
        ->check(CLI::IsMember({"synthetic", "file"}));
    run->add_option("--fusion", args->fusion, "override the score fusion (none or multiply)")
        ->check(CLI::IsMember({"none", "multiply"}));
    run->add_option("--ablation", args->ablations,
                    "override the ablation list (repeat or comma-separate)")
        ->delimiter(',');
    run->add_option("--from", args->from, "resume from this stage, reusing earlier artifacts")
        ->capture_default_str();

    run->callback([args, run] {
        IniFile ini = IniFile::parse(args->config);
        PipelineConfig cfg = PipelineConfig::from_ini(ini);
        if (run->count("--seed")) {
            cfg.seed = args->seed;
            cfg.perturb.seed = args->seed;
            cfg.sim.seed = args->seed;
        }
        if (run->count("--out")) cfg.out_dir = args->out;
        if (run->count("--manifest")) cfg.manifest = args->manifest;
        if (run->count("--tracker")) cfg.tracker = args->tracker;
        if (run->count("--detector")) cfg.detector = args->detector;
        if (run->count("--fusion")) cfg.fusion = args->fusion;
        if (run->count("--ablation")) cfg.ablations = args->ablations;
        cfg.validate();
        const Stage from = parse_stage(args->from);
        PipelineRunner runner(std::move(cfg));
        const auto reports = runner.run(from);
        write_report_table(reports, std::cout);
    });
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"tubelet-based video object detection pipeline"};
    app.require_subcommand(1);
    app.set_version_flag("--version", "tubedet 1.0.0");
    setup_simulate(app);
    setup_filter(app);
    setup_propose(app);
    setup_perturb_pool(app);
    setup_tcn(app);
    setup_eval(app);
    setup_pipeline(app);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;  // help and version exit cleanly
    } catch (const tubedet::NumericalError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 3;
    } catch (const tubedet::ConfigError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    } catch (const tubedet::ParseError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
