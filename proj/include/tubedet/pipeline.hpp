#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "tubedet/config.hpp"
#include "tubedet/dataio.hpp"
#include "tubedet/errors.hpp"
#include "tubedet/eval.hpp"
#include "tubedet/oracles.hpp"
#include "tubedet/parallel.hpp"
#include "tubedet/perturb.hpp"
#include "tubedet/sim.hpp"
#include "tubedet/tcn.hpp"
#include "tubedet/tubelet.hpp"

namespace tubedet {

enum class Stage {
    simulate = 0,
    filter,
    score,
    propose,
    perturb_pool,
    tcn,
    eval,
};

inline const char* stage_name(Stage s) {
    switch (s) {
        case Stage::simulate: return "simulate";
        case Stage::filter: return "filter";
        case Stage::score: return "score";
        case Stage::propose: return "propose";
        case Stage::perturb_pool: return "perturb-pool";
        case Stage::tcn: return "tcn";
        case Stage::eval: return "eval";
    }
    return "?";
}

inline Stage parse_stage(const std::string& name) {
    for (Stage s : {Stage::simulate, Stage::filter, Stage::score, Stage::propose,
                    Stage::perturb_pool, Stage::tcn, Stage::eval})
        if (name == stage_name(s)) return s;
    throw ConfigError("unknown stage '" + name +
                      "' (expected simulate, filter, score, propose, perturb-pool, tcn or eval)");
}

/// Proposal boxes grouped per video and frame, keeping input order within a
/// frame. Every video in the manifest gets an entry, even when empty.
inline std::unordered_map<std::string, std::vector<std::vector<BoundingBox>>>
group_proposals_by_frame(const DatasetManifest& manifest,
                         const std::vector<Proposal>& proposals) {
    std::unordered_map<std::string, std::vector<std::vector<BoundingBox>>> grouped;
    for (const auto& vm : manifest.videos)
        grouped[vm.video_id].resize(static_cast<std::size_t>(vm.frame_count));
    for (const auto& p : proposals)
        grouped[p.video_id][static_cast<std::size_t>(p.frame)].push_back(p.box);
    return grouped;
}

namespace detail {

inline std::vector<std::pair<const VideoMeta*, int>> video_class_units(
    const DatasetManifest& manifest) {
    std::vector<std::pair<const VideoMeta*, int>> units;
    for (const auto& vm : manifest.videos)
        for (int c = 0; c < manifest.num_classes(); ++c) units.emplace_back(&vm, c);
    return units;
}

}  // namespace detail

/// Filter stage: keeps the proposals whose best class score clears the
/// threshold. Work splits across videos; output is ordered by video
/// (manifest order), frame, then input order.
inline std::vector<Proposal> filter_all_proposals(const DatasetManifest& manifest,
                                                  const std::vector<Proposal>& raw,
                                                  const DetectorOracle& detector,
                                                  double threshold) {
    const auto grouped = group_proposals_by_frame(manifest, raw);
    std::vector<std::vector<Proposal>> slots(manifest.videos.size());
    parallel_for(manifest.videos.size(), [&](std::size_t vi) {
        const auto& vm = manifest.videos[vi];
        const auto& frames = grouped.at(vm.video_id);
        for (int f = 0; f < vm.frame_count; ++f)
            for (const auto& box :
                 filter_proposals(frames[static_cast<std::size_t>(f)], detector, vm.video_id, f,
                                  manifest.num_classes(), threshold))
                slots[vi].push_back({vm.video_id, f, box});
    });
    std::vector<Proposal> kept;
    for (auto& s : slots) kept.insert(kept.end(), s.begin(), s.end());
    return kept;
}

/// Score stage: one detection per (filtered proposal, class). Work splits
/// across (video, class) units; output ordered by video, class, frame.
inline std::vector<Detection> score_all_proposals(const DatasetManifest& manifest,
                                                  const std::vector<Proposal>& filtered,
                                                  const DetectorOracle& detector) {
    const auto grouped = group_proposals_by_frame(manifest, filtered);
    const auto units = detail::video_class_units(manifest);
    std::vector<std::vector<Detection>> slots(units.size());
    parallel_for(units.size(), [&](std::size_t u) {
        const auto& vm = *units[u].first;
        const int c = units[u].second;
        const auto& frames = grouped.at(vm.video_id);
        for (int f = 0; f < vm.frame_count; ++f) {
            const auto& boxes = frames[static_cast<std::size_t>(f)];
            if (boxes.empty()) continue;
            const auto scores = detector.score_boxes(vm.video_id, f, c, boxes);
            for (std::size_t i = 0; i < boxes.size(); ++i)
                slots[u].push_back({vm.video_id, f, c, scores[i], boxes[i]});
        }
    });
    std::vector<Detection> dets;
    for (auto& s : slots) dets.insert(dets.end(), s.begin(), s.end());
    return dets;
}

/// Propose stage: anchor/track/suppress per (video, class) unit, then give
/// every tubelet box its detector score. Output ordered by video, class,
/// anchor rank.
inline std::vector<Tubelet> propose_all(const DatasetManifest& manifest,
                                        const std::vector<Detection>& detections,
                                        const TrackerOracle& tracker,
                                        const DetectorOracle& detector,
                                        const ProposalConfig& cfg) {
    const auto units = detail::video_class_units(manifest);
    std::vector<std::vector<Detection>> unit_dets(units.size());
    {
        std::map<std::pair<std::string, int>, std::size_t> unit_of;
        for (std::size_t u = 0; u < units.size(); ++u)
            unit_of[{units[u].first->video_id, units[u].second}] = u;
        for (const auto& d : detections)
            unit_dets[unit_of.at({d.video_id, d.class_id})].push_back(d);
    }
    std::vector<std::vector<Tubelet>> slots(units.size());
    parallel_for(units.size(), [&](std::size_t u) {
        auto tubelets =
            propose_tubelets(*units[u].first, units[u].second, unit_dets[u], tracker, cfg);
        for (auto& t : tubelets) score_tubelet_boxes(t, detector);
        slots[u] = std::move(tubelets);
    });
    std::vector<Tubelet> out;
    for (auto& s : slots)
        for (auto& t : s) out.push_back(std::move(t));
    return out;
}

/// Perturb-pool stage over a whole tubelet set, parallel across tubelets.
/// Ordering matches the sequential perturb_and_pool exactly.
inline std::vector<Tubelet> pool_all(const DatasetManifest& manifest,
                                     const std::vector<Tubelet>& proposed,
                                     const std::vector<Detection>& detections,
                                     const PerturbConfig& cfg, const DetectorOracle& detector) {
    cfg.validate();
    const DetectionIndex index(detections, manifest);
    std::vector<std::vector<Tubelet>> slots(proposed.size());
    parallel_for(proposed.size(), [&](std::size_t i) {
        const Tubelet& t = proposed[i];
        const VideoMeta* vm = manifest.find_video(t.video_id);
        if (!vm) throw std::invalid_argument("tubelet references unknown video " + t.video_id);
        if (cfg.mode == PoolMode::candidate_union) {
            slots[i].push_back(
                pool_tubelet_union(t, cfg.schemes, detector, *vm, index, cfg.seed));
        } else {
            for (const auto& scheme : cfg.schemes)
                slots[i].push_back(pool_tubelet(t, scheme, detector, *vm, index, cfg.seed));
        }
    });
    std::vector<Tubelet> out;
    out.reserve(proposed.size());
    for (auto& s : slots)
        for (auto& t : s) out.push_back(std::move(t));
    return out;
}

/// Trains one model per class that has tubelets; keys are class ids.
inline std::map<int, TcnModel> train_per_class(const DatasetManifest& manifest,
                                               const std::vector<Tubelet>& tubelets,
                                               const std::vector<GroundTruthObject>& gt,
                                               const TrainConfig& cfg, std::uint64_t global_seed,
                                               const TcnArchitecture& arch = {}) {
    std::vector<std::optional<TcnModel>> slots(static_cast<std::size_t>(manifest.num_classes()));
    parallel_for(slots.size(), [&](std::size_t c) {
        std::vector<LabeledWindow> windows;
        for (const auto& t : tubelets) {
            if (t.class_id != static_cast<int>(c)) continue;
            auto w = build_labeled_windows(t, gt, arch.window, cfg.window_stride, cfg.label_iou);
            for (auto& lw : w) windows.push_back(std::move(lw));
        }
        if (windows.empty()) return;  // class has no tubelets: nothing to train
        TrainConfig train_cfg = cfg;
        train_cfg.seed = hash_key(global_seed, "tcn", std::int64_t{static_cast<int>(c)});
        slots[c] = train(windows, arch, train_cfg).model;
    });
    std::map<int, TcnModel> models;
    for (std::size_t c = 0; c < slots.size(); ++c)
        if (slots[c]) models.emplace(static_cast<int>(c), std::move(*slots[c]));
    return models;
}

/// Fills tcn_score on every tubelet from its class model.
inline std::vector<Tubelet> rescore_all(const std::vector<Tubelet>& tubelets,
                                        const std::map<int, TcnModel>& models,
                                        int window_stride) {
    std::vector<Tubelet> out = tubelets;
    parallel_for(out.size(), [&](std::size_t i) {
        auto it = models.find(out[i].class_id);
        if (it == models.end())
            throw std::invalid_argument("no trained model for class id " +
                                        std::to_string(out[i].class_id));
        rescore(it->second, out[i], window_stride);
    });
    return out;
}

/// Executes the stage chain simulate -> filter -> score -> propose ->
/// perturb-pool -> tcn -> eval, persisting every intermediate artifact in
/// the output directory. Stages before `from` are loaded from their
/// artifacts instead of being recomputed; a missing artifact names the
/// stage that produces it. Only the stages the requested ablations need
/// are touched at all.
class PipelineRunner {
  public:
    explicit PipelineRunner(PipelineConfig cfg) : cfg_(std::move(cfg)), out_(cfg_.out_dir) {
        cfg_.validate();
        ablations_ = cfg_.resolved_ablations();
        auto wants = [&](const char* name) {
            return std::find(ablations_.begin(), ablations_.end(), name) != ablations_.end();
        };
        want_random_ = wants("random");
        want_original_ = wants("original");
        want_tcn_ = wants("tcn");
        need_pool_ = wants("combined") || want_tcn_;
    }

    /// Runs the pipeline and returns one evaluation report per ablation.
    std::vector<EvalReport> run(Stage from = Stage::simulate) {
        std::filesystem::create_directories(out_);
        {
            std::ofstream cfg_out(out_ / "config.ini");
            if (!cfg_out) throw ParseError("cannot write " + (out_ / "config.ini").string());
            cfg_out << serialize_config(cfg_);
        }
        prepare_dataset(from <= Stage::simulate);
        build_detector();
        stage_filter(from <= Stage::filter);
        stage_score(from <= Stage::score);
        stage_propose(from <= Stage::propose);
        stage_perturb(from <= Stage::perturb_pool);
        stage_tcn(from <= Stage::tcn);
        return stage_eval();
    }

    const DatasetManifest& manifest() const { return manifest_; }

  private:
    // ----- artifact locations -------------------------------------------
    std::filesystem::path world_manifest_path() const {
        return out_ / "world" / "manifest.json";
    }
    std::filesystem::path filtered_path() const { return out_ / "proposals_filtered.jsonl"; }
    std::filesystem::path detections_path() const { return out_ / "detections.jsonl"; }
    std::filesystem::path proposed_path() const { return out_ / "tubelets_proposed.jsonl"; }
    std::filesystem::path pooled_path() const { return out_ / "tubelets_pooled.jsonl"; }
    std::filesystem::path pooled_scheme_path(const char* scheme) const {
        return out_ / (std::string("tubelets_pooled_") + scheme + ".jsonl");
    }
    std::filesystem::path models_dir() const { return out_ / "models"; }
    std::filesystem::path rescored_path() const { return out_ / "tubelets_rescored.jsonl"; }

    [[noreturn]] void missing_artifact(const std::filesystem::path& path, Stage producer) const {
        throw ParseError("missing artifact " + path.string() + "; it is produced by stage '" +
                         stage_name(producer) + "' - re-run with --from " +
                         stage_name(producer) + " or earlier");
    }

    void require_artifact(const std::filesystem::path& path, Stage producer) const {
        if (!std::filesystem::exists(path)) missing_artifact(path, producer);
    }

    // ----- dataset ------------------------------------------------------
    void prepare_dataset(bool execute) {
        if (!cfg_.manifest.empty()) {
            // external dataset: "simulate" amounts to reading the manifest
            manifest_ = read_manifest(cfg_.manifest);
        } else if (execute) {
            const SyntheticWorld world = generate_world(cfg_.sim);
            manifest_ = read_manifest(write_world(world, out_ / "world"));
        } else {
            require_artifact(world_manifest_path(), Stage::simulate);
            manifest_ = read_manifest(world_manifest_path());
        }
        if (!manifest_.ground_truth_path.empty())
            gt_ = read_ground_truth(manifest_.resolve(manifest_.ground_truth_path, "ground truth"),
                                    manifest_);
    }

    void require_ground_truth(const std::string& needed_for) const {
        if (gt_.empty())
            throw ParseError("the " + needed_for +
                             " needs ground truth, but the manifest names none");
    }

    void build_detector() {
        if (cfg_.detector == "synthetic") {
            require_ground_truth("synthetic detector");
            detector_ = std::make_unique<SyntheticDetector>(
                gt_, cfg_.sim.a, cfg_.sim.b, cfg_.sim.sigma_det, hash_key(cfg_.seed, "detector"));
        } else {
            const auto path = manifest_.resolve(manifest_.detections_path, "detections");
            detector_ = std::make_unique<FileBackedDetector>(read_detections(path, manifest_));
        }
    }

    void build_tracker() {
        if (tracker_) return;
        if (cfg_.tracker == "gt_follow") {
            require_ground_truth("gt_follow tracker");
            tracker_ = std::make_unique<GtFollowTracker>(gt_, manifest_.videos, cfg_.sim.drift,
                                                         cfg_.sim.conf_decay,
                                                         hash_key(cfg_.seed, "tracker"));
        } else {
            tracker_ = std::make_unique<IouChainTracker>(
                manifest_.videos, group_proposals_by_frame(manifest_, filtered_));
        }
    }

    // ----- filter -------------------------------------------------------
    void stage_filter(bool execute) {
        if (!execute) {
            require_artifact(filtered_path(), Stage::filter);
            filtered_ = read_proposals(filtered_path(), manifest_);
            return;
        }
        const auto raw_path = manifest_.resolve(manifest_.proposals_path, "proposals");
        const auto raw = read_proposals(raw_path, manifest_);
        filtered_ = filter_all_proposals(manifest_, raw, *detector_, cfg_.filter_threshold);
        write_proposals(filtered_, filtered_path());
    }

    // ----- score --------------------------------------------------------
    void stage_score(bool execute) {
        if (!execute) {
            require_artifact(detections_path(), Stage::score);
            detections_ = read_detections(detections_path(), manifest_);
            return;
        }
        detections_ = score_all_proposals(manifest_, filtered_, *detector_);
        write_detections(detections_, detections_path(), manifest_);
    }

    // ----- propose ------------------------------------------------------
    void stage_propose(bool execute) {
        if (!execute) {
            require_artifact(proposed_path(), Stage::propose);
            proposed_ = read_tubelets(proposed_path(), manifest_);
            return;
        }
        build_tracker();
        proposed_ = propose_all(manifest_, detections_, *tracker_, *detector_, cfg_.proposal);
        write_tubelets(proposed_, proposed_path(), manifest_);
    }

    // ----- perturb-pool -------------------------------------------------
    std::vector<Tubelet> pool_set(const std::vector<PerturbScheme>& schemes, PoolMode mode) {
        PerturbConfig pc = cfg_.perturb;
        pc.schemes = schemes;
        pc.mode = mode;
        return pool_all(manifest_, proposed_, detections_, pc, *detector_);
    }

    std::optional<PerturbScheme> find_scheme(bool random) const {
        for (const auto& s : cfg_.perturb.schemes)
            if (std::holds_alternative<RandomScheme>(s) == random) return s;
        return std::nullopt;
    }

    void stage_perturb(bool execute) {
        const bool single_random = want_random_;
        const bool single_original = want_original_;
        if (!execute) {
            if (need_pool_) {
                require_artifact(pooled_path(), Stage::perturb_pool);
                pooled_ = read_tubelets(pooled_path(), manifest_);
            }
            if (single_random) {
                require_artifact(pooled_scheme_path("random"), Stage::perturb_pool);
                pooled_random_ = read_tubelets(pooled_scheme_path("random"), manifest_);
            }
            if (single_original) {
                require_artifact(pooled_scheme_path("original"), Stage::perturb_pool);
                pooled_original_ = read_tubelets(pooled_scheme_path("original"), manifest_);
            }
            return;
        }
        if (need_pool_) {
            pooled_ = pool_set(cfg_.perturb.schemes, cfg_.perturb.mode);
            write_tubelets(pooled_, pooled_path(), manifest_);
        }
        if (single_random) {
            const auto scheme = find_scheme(true);
            if (!scheme)
                throw ConfigError(
                    "ablation 'random' requested but no random scheme is configured");
            pooled_random_ = pool_set({*scheme}, PoolMode::per_scheme_union);
            write_tubelets(pooled_random_, pooled_scheme_path("random"), manifest_);
        }
        if (single_original) {
            const auto scheme = find_scheme(false);
            if (!scheme)
                throw ConfigError(
                    "ablation 'original' requested but no original scheme is configured");
            pooled_original_ = pool_set({*scheme}, PoolMode::per_scheme_union);
            write_tubelets(pooled_original_, pooled_scheme_path("original"), manifest_);
        }
    }

    // ----- tcn ----------------------------------------------------------
    void stage_tcn(bool execute) {
        if (!want_tcn_) return;
        if (!execute) {
            require_artifact(rescored_path(), Stage::tcn);
            rescored_ = read_tubelets(rescored_path(), manifest_);
            return;
        }
        require_ground_truth("tcn training stage");
        std::filesystem::create_directories(models_dir());

        const auto models =
            train_per_class(manifest_, pooled_, gt_, cfg_.tcn, cfg_.seed, cfg_.tcn_arch);
        for (const auto& [c, model] : models)
            save_model(model, models_dir() / (manifest_.class_name(c) + ".tcn"));

        rescored_ = rescore_all(pooled_, models, cfg_.tcn.window_stride);
        write_tubelets(rescored_, rescored_path(), manifest_);
    }

    // ----- eval ---------------------------------------------------------
    EvalReport evaluate_set(std::span<const Tubelet> tubelets, ScoreChannel channel,
                            const std::string& ablation) const {
        const auto dets = tubelets_to_detections(tubelets, channel);
        EvalReport report = mean_ap(dets, gt_, manifest_.classes);
        report.ablation = ablation;
        for (auto& ce : report.classes) {
            if (!ce.ap.defined) continue;
            std::vector<Detection> class_dets;
            for (const auto& d : dets)
                if (d.class_id == ce.class_id) class_dets.push_back(d);
            std::vector<GroundTruthObject> class_gts;
            for (const auto& g : gt_)
                if (g.class_id == ce.class_id) class_gts.push_back(g);
            ce.corloc = corloc(class_dets, class_gts).corloc;
        }
        return report;
    }

    std::vector<EvalReport> stage_eval() {
        require_ground_truth("eval stage");
        std::vector<EvalReport> reports;
        for (const auto& ablation : ablations_) {
            if (ablation == "baseline") {
                reports.push_back(evaluate_set(proposed_, ScoreChannel::det, "baseline"));
            } else if (ablation == "random") {
                reports.push_back(evaluate_set(pooled_random_, ScoreChannel::det, "random"));
            } else if (ablation == "original") {
                reports.push_back(evaluate_set(pooled_original_, ScoreChannel::det, "original"));
            } else if (ablation == "combined") {
                reports.push_back(evaluate_set(pooled_, ScoreChannel::det, "combined"));
            } else if (ablation == "tcn") {
                const ScoreChannel channel = cfg_.fusion == "multiply"
                                                 ? ScoreChannel::det_times_tcn
                                                 : ScoreChannel::tcn;
                EvalReport report = evaluate_set(rescored_, channel, "tcn");
                attach_temporal_variation(report);
                reports.push_back(std::move(report));
            }
        }
        write_reports(reports, out_ / "report.jsonl");
        std::ofstream table(out_ / "report.txt");
        if (!table) throw ParseError("cannot write " + (out_ / "report.txt").string());
        write_report_table(reports, table);
        return reports;
    }

    /// Mean temporal variation per class of the raw det_score vs tcn_score
    /// channels over the rescored tubelets (those long enough to have a
    /// first difference).
    void attach_temporal_variation(EvalReport& report) const {
        std::map<int, std::pair<std::vector<double>, std::vector<double>>> per_class;
        for (const auto& t : rescored_) {
            if (t.boxes.size() < 2) continue;
            std::vector<double> det, tcn;
            for (const auto& tb : t.boxes) {
                det.push_back(tb.det_score);
                tcn.push_back(tb.tcn_score.value_or(0.0));
            }
            auto& [dv, tv] = per_class[t.class_id];
            dv.push_back(temporal_variation(det));
            tv.push_back(temporal_variation(tcn));
        }
        for (auto& ce : report.classes) {
            auto it = per_class.find(ce.class_id);
            if (it == per_class.end()) continue;
            const auto mean = [](const std::vector<double>& v) {
                double s = 0.0;
                for (double x : v) s += x;
                return s / static_cast<double>(v.size());
            };
            ce.tv_det = mean(it->second.first);
            ce.tv_tcn = mean(it->second.second);
        }
    }

    PipelineConfig cfg_;
    std::filesystem::path out_;
    std::vector<std::string> ablations_;
    bool want_random_ = false, want_original_ = false, want_tcn_ = false, need_pool_ = false;

    DatasetManifest manifest_;
    std::vector<GroundTruthObject> gt_;
    std::vector<Proposal> filtered_;
    std::vector<Detection> detections_;
    std::vector<Tubelet> proposed_, pooled_, pooled_random_, pooled_original_, rescored_;
    std::unique_ptr<DetectorOracle> detector_;
    std::unique_ptr<TrackerOracle> tracker_;
};

}  // namespace tubedet
