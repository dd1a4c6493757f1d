#pragma once

#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "tubedet/errors.hpp"
#include "tubedet/geometry.hpp"
#include "tubedet/oracles.hpp"
#include "tubedet/tubelet.hpp"

namespace tubedet {

/// A class-independent proposal box on one frame.
struct Proposal {
    std::string video_id;
    int frame = 0;
    BoundingBox box;
};

/// Index of a dataset: the class list (index = class id), video metadata
/// and the files holding its records. Paths are resolved relative to the
/// manifest's own directory.
struct DatasetManifest {
    std::vector<std::string> classes;
    std::vector<VideoMeta> videos;
    std::string ground_truth_path;  // any of these may be empty
    std::string proposals_path;
    std::string detections_path;
    std::filesystem::path base_dir;

    int num_classes() const { return static_cast<int>(classes.size()); }

    int class_id(std::string_view name) const {
        for (std::size_t i = 0; i < classes.size(); ++i)
            if (classes[i] == name) return static_cast<int>(i);
        return -1;
    }

    const std::string& class_name(int id) const {
        if (id < 0 || id >= num_classes())
            throw std::invalid_argument("class id out of range: " + std::to_string(id));
        return classes[static_cast<std::size_t>(id)];
    }

    const VideoMeta* find_video(std::string_view id) const {
        for (const auto& v : videos)
            if (v.video_id == id) return &v;
        return nullptr;
    }

    /// Resolves one of the recorded paths; empty or missing files are an error.
    std::filesystem::path resolve(const std::string& recorded, std::string_view what) const {
        if (recorded.empty())
            throw ParseError("manifest does not name a " + std::string(what) + " file");
        std::filesystem::path p(recorded);
        if (p.is_relative()) p = base_dir / p;
        if (!std::filesystem::exists(p))
            throw ParseError("manifest " + std::string(what) + " file not found: " + p.string());
        return p;
    }
};

namespace detail {

using json = nlohmann::json;

[[noreturn]] inline void fail(const std::filesystem::path& path, std::size_t line,
                              const std::string& what) {
    throw ParseError(path.string() + ":" + std::to_string(line) + ": " + what);
}

inline BoundingBox parse_box(const json& j, const std::filesystem::path& path, std::size_t line) {
    if (!j.is_array() || j.size() != 4) fail(path, line, "box must be [x1,y1,x2,y2]");
    for (const auto& v : j)
        if (!v.is_number()) fail(path, line, "box coordinates must be numbers");
    auto box = BoundingBox::try_make(j[0].get<double>(), j[1].get<double>(), j[2].get<double>(),
                                     j[3].get<double>());
    if (!box) fail(path, line, "degenerate bounding box " + j.dump());
    return *box;
}

inline json box_to_json(const BoundingBox& b) { return json::array({b.x1, b.y1, b.x2, b.y2}); }

struct RecordContext {
    const DatasetManifest& manifest;
    const std::filesystem::path& path;
    std::size_t line;

    const VideoMeta& video(const json& j) const {
        if (!j.contains("video") || !j["video"].is_string())
            fail(path, line, "missing string field 'video'");
        const auto id = j["video"].get<std::string>();
        const VideoMeta* vm = manifest.find_video(id);
        if (!vm) fail(path, line, "unknown video id '" + id + "'");
        return *vm;
    }

    int frame(const json& j, const VideoMeta& vm) const {
        if (!j.contains("frame") || !j["frame"].is_number_integer())
            fail(path, line, "missing integer field 'frame'");
        const int f = j["frame"].get<int>();
        if (f < 0 || f >= vm.frame_count)
            fail(path, line, "frame " + std::to_string(f) + " outside [0," +
                                 std::to_string(vm.frame_count) + ") of video " + vm.video_id);
        return f;
    }

    int class_id(const json& j) const {
        if (!j.contains("class") || !j["class"].is_string())
            fail(path, line, "missing string field 'class'");
        const auto name = j["class"].get<std::string>();
        const int id = manifest.class_id(name);
        if (id < 0) fail(path, line, "unknown class name '" + name + "'");
        return id;
    }

    double number(const json& j, const char* field) const {
        if (!j.contains(field) || !j[field].is_number())
            fail(path, line, std::string("missing numeric field '") + field + "'");
        return j[field].get<double>();
    }

    int integer(const json& j, const char* field) const {
        if (!j.contains(field) || !j[field].is_number_integer())
            fail(path, line, std::string("missing integer field '") + field + "'");
        return j[field].get<int>();
    }
};

/// Applies fn to each non-empty line, parsed as a JSON object.
template <typename Fn>
void for_each_record(const std::filesystem::path& path, Fn&& fn) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open " + path.string());
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        json j = json::parse(line, nullptr, false);
        if (j.is_discarded() || !j.is_object())
            fail(path, lineno, "malformed record (expected one JSON object per line)");
        fn(j, lineno);
    }
}

inline std::ofstream open_out(const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw ParseError("cannot write " + path.string());
    return out;
}

}  // namespace detail

// --- detections ---

inline std::vector<Detection> read_detections(const std::filesystem::path& path,
                                              const DatasetManifest& manifest) {
    std::vector<Detection> dets;
    detail::for_each_record(path, [&](const detail::json& j, std::size_t line) {
        detail::RecordContext ctx{manifest, path, line};
        const VideoMeta& vm = ctx.video(j);
        const int frame = ctx.frame(j, vm);
        const int cid = ctx.class_id(j);
        const double score = ctx.number(j, "score");
        if (!j.contains("box")) detail::fail(path, line, "missing field 'box'");
        dets.push_back({vm.video_id, frame, cid, score, detail::parse_box(j["box"], path, line)});
    });
    return dets;
}

inline void write_detections(const std::vector<Detection>& dets,
                             const std::filesystem::path& path,
                             const DatasetManifest& manifest) {
    auto out = detail::open_out(path);
    for (const auto& d : dets) {
        detail::json j;
        j["video"] = d.video_id;
        j["frame"] = d.frame;
        j["class"] = manifest.class_name(d.class_id);
        j["score"] = d.score;
        j["box"] = detail::box_to_json(d.box);
        out << j.dump() << '\n';
    }
}

// --- proposals ---

inline std::vector<Proposal> read_proposals(const std::filesystem::path& path,
                                            const DatasetManifest& manifest) {
    std::vector<Proposal> props;
    detail::for_each_record(path, [&](const detail::json& j, std::size_t line) {
        detail::RecordContext ctx{manifest, path, line};
        const VideoMeta& vm = ctx.video(j);
        const int frame = ctx.frame(j, vm);
        if (!j.contains("box")) detail::fail(path, line, "missing field 'box'");
        props.push_back({vm.video_id, frame, detail::parse_box(j["box"], path, line)});
    });
    return props;
}

inline void write_proposals(const std::vector<Proposal>& props, const std::filesystem::path& path) {
    auto out = detail::open_out(path);
    for (const auto& p : props) {
        detail::json j;
        j["video"] = p.video_id;
        j["frame"] = p.frame;
        j["box"] = detail::box_to_json(p.box);
        out << j.dump() << '\n';
    }
}

// --- ground truth ---

inline std::vector<GroundTruthObject> read_ground_truth(const std::filesystem::path& path,
                                                        const DatasetManifest& manifest) {
    std::vector<GroundTruthObject> gts;
    detail::for_each_record(path, [&](const detail::json& j, std::size_t line) {
        detail::RecordContext ctx{manifest, path, line};
        const VideoMeta& vm = ctx.video(j);
        const int frame = ctx.frame(j, vm);
        const int cid = ctx.class_id(j);
        const int instance = ctx.integer(j, "instance");
        if (!j.contains("box")) detail::fail(path, line, "missing field 'box'");
        gts.push_back(
            {vm.video_id, frame, cid, instance, detail::parse_box(j["box"], path, line)});
    });
    return gts;
}

inline void write_ground_truth(const std::vector<GroundTruthObject>& gts,
                               const std::filesystem::path& path,
                               const DatasetManifest& manifest) {
    auto out = detail::open_out(path);
    for (const auto& g : gts) {
        detail::json j;
        j["video"] = g.video_id;
        j["frame"] = g.frame;
        j["class"] = manifest.class_name(g.class_id);
        j["instance"] = g.instance_id;
        j["box"] = detail::box_to_json(g.box);
        out << j.dump() << '\n';
    }
}

// --- tubelets ---

inline std::vector<Tubelet> read_tubelets(const std::filesystem::path& path,
                                          const DatasetManifest& manifest) {
    std::vector<Tubelet> tubelets;
    detail::for_each_record(path, [&](const detail::json& j, std::size_t line) {
        detail::RecordContext ctx{manifest, path, line};
        const VideoMeta& vm = ctx.video(j);
        const int cid = ctx.class_id(j);
        const int anchor = ctx.integer(j, "anchor_frame");
        const int start = ctx.integer(j, "start_frame");

        for (const char* field : {"boxes", "det_scores", "track_scores"})
            if (!j.contains(field) || !j[field].is_array())
                detail::fail(path, line, std::string("missing array field '") + field + "'");
        const auto& boxes = j["boxes"];
        const auto& det = j["det_scores"];
        const auto& track = j["track_scores"];
        const bool has_tcn = j.contains("tcn_scores") && !j["tcn_scores"].is_null();
        const std::size_t n = boxes.size();
        if (n == 0) detail::fail(path, line, "tubelet has no boxes");
        if (det.size() != n || track.size() != n || (has_tcn && j["tcn_scores"].size() != n))
            detail::fail(path, line, "tubelet parallel arrays differ in length");
        if (anchor < start || anchor >= start + static_cast<int>(n))
            detail::fail(path, line, "anchor_frame outside the tubelet span");
        if (start < 0 || start + static_cast<int>(n) > vm.frame_count)
            detail::fail(path, line, "tubelet frames outside video " + vm.video_id);

        Tubelet t;
        t.video_id = vm.video_id;
        t.class_id = cid;
        t.anchor_frame = anchor;
        t.boxes.reserve(n);
        for (std::size_t i = 0; i < n; ++i) {
            TubeletBox tb{start + static_cast<int>(i),
                          detail::parse_box(boxes[i], path, line),
                          det[i].get<double>(),
                          track[i].get<double>(),
                          0.0,
                          std::nullopt};
            if (!(tb.track_score >= 0.0 && tb.track_score <= 1.0))
                detail::fail(path, line, "track score outside [0,1]");
            if (has_tcn) tb.tcn_score = j["tcn_scores"][i].get<double>();
            t.boxes.push_back(tb);
        }
        anchor_offsets(t);
        tubelets.push_back(std::move(t));
    });
    return tubelets;
}

inline void write_tubelets(const std::vector<Tubelet>& tubelets,
                           const std::filesystem::path& path, const DatasetManifest& manifest) {
    auto out = detail::open_out(path);
    for (const auto& t : tubelets) {
        detail::json j;
        j["video"] = t.video_id;
        j["class"] = manifest.class_name(t.class_id);
        j["anchor_frame"] = t.anchor_frame;
        j["start_frame"] = t.start_frame();
        auto boxes = detail::json::array();
        auto det = detail::json::array();
        auto track = detail::json::array();
        auto tcn = detail::json::array();
        bool any_tcn = false;
        for (const auto& b : t.boxes) {
            boxes.push_back(detail::box_to_json(b.box));
            det.push_back(b.det_score);
            track.push_back(b.track_score);
            if (b.tcn_score) any_tcn = true;
            tcn.push_back(b.tcn_score.value_or(0.0));
        }
        j["boxes"] = std::move(boxes);
        j["det_scores"] = std::move(det);
        j["track_scores"] = std::move(track);
        if (any_tcn) j["tcn_scores"] = std::move(tcn);
        out << j.dump() << '\n';
    }
}

// --- manifest ---

inline DatasetManifest read_manifest(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open " + path.string());
    detail::json j = detail::json::parse(in, nullptr, false);
    if (j.is_discarded() || !j.is_object())
        throw ParseError(path.string() + ": malformed manifest (expected a JSON object)");

    DatasetManifest m;
    m.base_dir = std::filesystem::absolute(path).parent_path();
    if (!j.contains("classes") || !j["classes"].is_array() || j["classes"].empty())
        throw ParseError(path.string() + ": manifest needs a non-empty 'classes' array");
    for (const auto& c : j["classes"]) {
        const auto name = c.get<std::string>();
        if (m.class_id(name) >= 0)
            throw ParseError(path.string() + ": duplicate class name '" + name + "'");
        m.classes.push_back(name);
    }
    if (!j.contains("videos") || !j["videos"].is_array())
        throw ParseError(path.string() + ": manifest needs a 'videos' array");
    for (const auto& v : j["videos"]) {
        VideoMeta vm;
        vm.video_id = v.at("video").get<std::string>();
        vm.frame_count = v.at("frames").get<int>();
        vm.width = v.at("width").get<double>();
        vm.height = v.at("height").get<double>();
        if (vm.frame_count < 1)
            throw ParseError(path.string() + ": video " + vm.video_id + " has no frames");
        if (!(vm.width > 0.0) || !(vm.height > 0.0))
            throw ParseError(path.string() + ": video " + vm.video_id + " has empty dimensions");
        if (m.find_video(vm.video_id))
            throw ParseError(path.string() + ": duplicate video id '" + vm.video_id + "'");
        m.videos.push_back(std::move(vm));
    }
    if (j.contains("ground_truth")) m.ground_truth_path = j["ground_truth"].get<std::string>();
    if (j.contains("proposals")) m.proposals_path = j["proposals"].get<std::string>();
    if (j.contains("detections")) m.detections_path = j["detections"].get<std::string>();
    return m;
}

inline void write_manifest(const DatasetManifest& m, const std::filesystem::path& path) {
    detail::json j;
    j["classes"] = m.classes;
    auto videos = detail::json::array();
    for (const auto& v : m.videos) {
        detail::json jv;
        jv["video"] = v.video_id;
        jv["frames"] = v.frame_count;
        jv["width"] = v.width;
        jv["height"] = v.height;
        videos.push_back(std::move(jv));
    }
    j["videos"] = std::move(videos);
    if (!m.ground_truth_path.empty()) j["ground_truth"] = m.ground_truth_path;
    if (!m.proposals_path.empty()) j["proposals"] = m.proposals_path;
    if (!m.detections_path.empty()) j["detections"] = m.detections_path;
    auto out = detail::open_out(path);
    out << j.dump(2) << '\n';
}

}  // namespace tubedet
