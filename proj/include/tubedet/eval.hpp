#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <optional>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "tubedet/errors.hpp"
#include "tubedet/geometry.hpp"
#include "tubedet/tubelet.hpp"

namespace tubedet {

// ---------------------------------------------------------------------------
// Average precision
// ---------------------------------------------------------------------------

struct ApResult {
    double ap = 0.0;
    bool defined = false;  // false when the class has no ground truth
    long tp = 0;
    long fp = 0;
    long gt = 0;
};

/// Average precision for one class: detections sorted by score (ties broken
/// by video id, then frame, then input order), greedily matched to the
/// unmatched same-frame ground truth with highest iou >= iou_thresh, and
/// the all-points area under the precision/recall curve taken with the
/// monotone non-increasing precision envelope.
inline ApResult average_precision(std::span<const Detection> dets,
                                  std::span<const GroundTruthObject> gts,
                                  double iou_thresh = 0.5) {
    ApResult result;
    result.gt = static_cast<long>(gts.size());
    if (result.gt == 0) return result;  // undefined: excluded from means
    result.defined = true;
    if (dets.empty()) return result;    // AP 0 with ground truth present

    // ground truth per (video, frame), in input order
    std::map<std::pair<std::string, int>, std::vector<std::size_t>> gt_by_frame;
    for (std::size_t i = 0; i < gts.size(); ++i)
        gt_by_frame[{gts[i].video_id, gts[i].frame}].push_back(i);
    std::vector<char> matched(gts.size(), 0);

    std::vector<std::size_t> order(dets.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (dets[a].score != dets[b].score) return dets[a].score > dets[b].score;
        if (dets[a].video_id != dets[b].video_id) return dets[a].video_id < dets[b].video_id;
        if (dets[a].frame != dets[b].frame) return dets[a].frame < dets[b].frame;
        return a < b;
    });

    std::vector<double> precision;
    std::vector<long> tp_at;
    precision.reserve(order.size());
    long tp = 0, fp = 0;
    for (std::size_t idx : order) {
        const Detection& d = dets[idx];
        std::size_t best_gt = gts.size();
        double best_iou = 0.0;
        if (auto it = gt_by_frame.find({d.video_id, d.frame}); it != gt_by_frame.end()) {
            for (std::size_t gi : it->second) {
                if (matched[gi]) continue;
                const double ov = iou(d.box, gts[gi].box);
                if (ov >= iou_thresh && ov > best_iou) {
                    best_iou = ov;
                    best_gt = gi;  // ties keep the earlier gt (strict >)
                }
            }
        }
        if (best_gt < gts.size()) {
            matched[best_gt] = 1;
            ++tp;
        } else {
            ++fp;
        }
        precision.push_back(static_cast<double>(tp) / static_cast<double>(tp + fp));
        tp_at.push_back(tp);
    }
    result.tp = tp;
    result.fp = fp;

    // monotone envelope from the right, then sum precision at each new TP
    for (std::size_t i = precision.size() - 1; i-- > 0;)
        precision[i] = std::max(precision[i], precision[i + 1]);
    double ap_sum = 0.0;
    long prev_tp = 0;
    for (std::size_t i = 0; i < precision.size(); ++i) {
        if (tp_at[i] > prev_tp) ap_sum += precision[i];
        prev_tp = tp_at[i];
    }
    result.ap = ap_sum / static_cast<double>(result.gt);
    return result;
}

// ---------------------------------------------------------------------------
// CorLoc
// ---------------------------------------------------------------------------

struct CorLocResult {
    double corloc = 0.0;
    long localized = 0;
    long frames = 0;  // annotated frames considered
};

/// Fraction of annotated frames (those holding at least one ground-truth
/// object of the class) where the frame's highest-scoring detection covers
/// some ground truth with iou strictly above the threshold. Inputs must
/// already be restricted to one class.
inline CorLocResult corloc(std::span<const Detection> dets,
                           std::span<const GroundTruthObject> gts, double iou_thresh = 0.5) {
    std::map<std::pair<std::string, int>, std::vector<const GroundTruthObject*>> gt_by_frame;
    for (const auto& g : gts) gt_by_frame[{g.video_id, g.frame}].push_back(&g);
    if (gt_by_frame.empty())
        throw std::invalid_argument("corloc: no annotated frames for the class");

    std::map<std::pair<std::string, int>, const Detection*> top;
    for (const auto& d : dets) {
        auto key = std::make_pair(d.video_id, d.frame);
        if (!gt_by_frame.count(key)) continue;
        auto [it, inserted] = top.try_emplace(key, &d);
        if (!inserted && d.score > it->second->score) it->second = &d;  // ties keep first
    }

    CorLocResult result;
    result.frames = static_cast<long>(gt_by_frame.size());
    for (const auto& [key, frame_gts] : gt_by_frame) {
        auto it = top.find(key);
        if (it == top.end()) continue;  // no detection on the frame: a miss
        for (const auto* g : frame_gts)
            if (iou(it->second->box, g->box) > iou_thresh) {
                ++result.localized;
                break;
            }
    }
    result.corloc = static_cast<double>(result.localized) / static_cast<double>(result.frames);
    return result;
}

// ---------------------------------------------------------------------------
// Temporal variation
// ---------------------------------------------------------------------------

/// Mean absolute first difference of a score sequence - the fluctuation
/// statistic the re-scoring stage is meant to shrink.
inline double temporal_variation(std::span<const double> scores) {
    if (scores.size() < 2)
        throw std::invalid_argument("temporal_variation: need at least 2 scores");
    double sum = 0.0;
    for (std::size_t i = 1; i < scores.size(); ++i) sum += std::abs(scores[i] - scores[i - 1]);
    return sum / static_cast<double>(scores.size() - 1);
}

// ---------------------------------------------------------------------------
// Report assembly
// ---------------------------------------------------------------------------

struct ClassEval {
    int class_id = 0;
    std::string class_name;
    ApResult ap;
    std::optional<double> corloc;
    std::optional<double> tv_det;  // mean temporal variation of det_score
    std::optional<double> tv_tcn;  // same for tcn_score, when present
};

struct EvalReport {
    std::string ap_variant = "voc2010-all-points";
    std::string ablation;  // optional run label carried into the records
    std::vector<ClassEval> classes;
    double mean_ap = 0.0;
    int classes_in_mean = 0;
};

/// Per-class AP plus the mean over classes that have ground truth.
inline EvalReport mean_ap(std::span<const Detection> dets,
                          std::span<const GroundTruthObject> gts,
                          std::span<const std::string> class_names, double iou_thresh = 0.5) {
    EvalReport report;
    double ap_sum = 0.0;
    for (int c = 0; c < static_cast<int>(class_names.size()); ++c) {
        std::vector<Detection> class_dets;
        for (const auto& d : dets)
            if (d.class_id == c) class_dets.push_back(d);
        std::vector<GroundTruthObject> class_gts;
        for (const auto& g : gts)
            if (g.class_id == c) class_gts.push_back(g);
        ClassEval ce;
        ce.class_id = c;
        ce.class_name = class_names[static_cast<std::size_t>(c)];
        ce.ap = average_precision(class_dets, class_gts, iou_thresh);
        if (ce.ap.defined) {
            ap_sum += ce.ap.ap;
            ++report.classes_in_mean;
        }
        report.classes.push_back(std::move(ce));
    }
    if (report.classes_in_mean == 0)
        throw std::invalid_argument("mean_ap: no class has ground truth");
    report.mean_ap = ap_sum / report.classes_in_mean;
    return report;
}

/// Converts tubelet boxes to flat detections, scored by the chosen channel.
enum class ScoreChannel { det, tcn, det_times_tcn };

inline std::vector<Detection> tubelets_to_detections(std::span<const Tubelet> tubelets,
                                                     ScoreChannel channel) {
    std::vector<Detection> dets;
    for (const auto& t : tubelets)
        for (const auto& tb : t.boxes) {
            double score = tb.det_score;
            if (channel != ScoreChannel::det) {
                if (!tb.tcn_score)
                    throw std::invalid_argument(
                        "tubelets_to_detections: tcn_score requested but not present");
                score = channel == ScoreChannel::tcn ? *tb.tcn_score
                                                     : tb.det_score * *tb.tcn_score;
            }
            dets.push_back({t.video_id, tb.frame, t.class_id, score, tb.box});
        }
    return dets;
}

// ---------------------------------------------------------------------------
// Report output
// ---------------------------------------------------------------------------

inline void append_report_records(const EvalReport& report, std::ostream& out) {
    nlohmann::json header;
    header["record"] = "header";
    header["ap_variant"] = report.ap_variant;
    if (!report.ablation.empty()) header["ablation"] = report.ablation;
    header["mean_ap"] = report.mean_ap;
    header["classes_in_mean"] = report.classes_in_mean;
    out << header.dump() << '\n';
    for (const auto& ce : report.classes) {
        nlohmann::json j;
        j["record"] = "class";
        if (!report.ablation.empty()) j["ablation"] = report.ablation;
        j["class"] = ce.class_name;
        j["defined"] = ce.ap.defined;
        j["ap"] = ce.ap.ap;
        j["tp"] = ce.ap.tp;
        j["fp"] = ce.ap.fp;
        j["gt"] = ce.ap.gt;
        if (ce.corloc) j["corloc"] = *ce.corloc;
        if (ce.tv_det) j["tv_det"] = *ce.tv_det;
        if (ce.tv_tcn) j["tv_tcn"] = *ce.tv_tcn;
        out << j.dump() << '\n';
    }
}

inline void write_reports(std::span<const EvalReport> reports,
                          const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw ParseError("cannot write " + path.string());
    for (const auto& r : reports) append_report_records(r, out);
}

inline void write_report(const EvalReport& report, const std::filesystem::path& path) {
    write_reports({&report, 1}, path);
}

/// Aligned human-readable table, one block per report.
inline void write_report_table(std::span<const EvalReport> reports, std::ostream& out) {
    for (const auto& report : reports) {
        if (!report.ablation.empty()) out << "[" << report.ablation << "]\n";
        out << std::left << std::setw(12) << "class" << std::right << std::setw(9) << "ap"
            << std::setw(9) << "corloc" << std::setw(7) << "tp" << std::setw(7) << "fp"
            << std::setw(7) << "gt" << std::setw(9) << "tv_det" << std::setw(9) << "tv_tcn"
            << "\n";
        auto cell = [&](const std::optional<double>& v) {
            std::ostringstream ss;
            if (v)
                ss << std::fixed << std::setprecision(4) << *v;
            else
                ss << "-";
            return ss.str();
        };
        for (const auto& ce : report.classes) {
            out << std::left << std::setw(12) << ce.class_name << std::right << std::setw(9)
                << (ce.ap.defined ? cell(ce.ap.ap) : std::string("-")) << std::setw(9)
                << cell(ce.corloc) << std::setw(7) << ce.ap.tp << std::setw(7) << ce.ap.fp
                << std::setw(7) << ce.ap.gt << std::setw(9) << cell(ce.tv_det) << std::setw(9)
                << cell(ce.tv_tcn) << "\n";
        }
        out << std::left << std::setw(12) << "mean_ap" << std::right << std::setw(9)
            << cell(report.mean_ap) << "  (" << report.classes_in_mean << " classes, "
            << report.ap_variant << ")\n\n";
    }
}

}  // namespace tubedet
