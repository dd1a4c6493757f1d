#pragma once

#include <charconv>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "tubedet/errors.hpp"
#include "tubedet/perturb.hpp"
#include "tubedet/sim.hpp"
#include "tubedet/tcn.hpp"
#include "tubedet/tubelet.hpp"

namespace tubedet {

// ---------------------------------------------------------------------------
// INI file
// ---------------------------------------------------------------------------

/// Minimal INI reader: [section] headers, key = value pairs, full-line
/// comments starting with '#' or ';'. Keys read through the typed getters
/// are marked used; finish() rejects anything left over, so typos in config
/// files fail loudly with their line number.
class IniFile {
  public:
    static IniFile parse_string(const std::string& text, const std::string& name = "<config>") {
        IniFile ini;
        ini.name_ = name;
        std::istringstream in(text);
        std::string line, section;
        std::size_t lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            const std::string trimmed = trim(line);
            if (trimmed.empty() || trimmed[0] == '#' || trimmed[0] == ';') continue;
            if (trimmed.front() == '[') {
                if (trimmed.back() != ']')
                    ini.fail(lineno, "unterminated section header");
                section = trim(trimmed.substr(1, trimmed.size() - 2));
                if (section.empty()) ini.fail(lineno, "empty section name");
                ini.sections_[section];  // record even if it stays empty
                continue;
            }
            const auto eq = trimmed.find('=');
            if (eq == std::string::npos)
                ini.fail(lineno, "expected 'key = value' or a [section] header");
            const std::string key = trim(trimmed.substr(0, eq));
            const std::string value = trim(trimmed.substr(eq + 1));
            if (key.empty()) ini.fail(lineno, "empty key");
            auto [it, inserted] = ini.sections_[section].try_emplace(key, Entry{value, lineno});
            if (!inserted)
                ini.fail(lineno, "duplicate key '" + key + "' in section [" + section + "]");
        }
        return ini;
    }

    static IniFile parse(const std::filesystem::path& path) {
        std::ifstream in(path);
        if (!in) throw ConfigError("cannot open config file " + path.string());
        std::ostringstream buf;
        buf << in.rdbuf();
        return parse_string(buf.str(), path.string());
    }

    bool has(const std::string& section, const std::string& key) const {
        auto s = sections_.find(section);
        return s != sections_.end() && s->second.count(key) > 0;
    }

    std::string get_string(const std::string& section, const std::string& key,
                           const std::string& fallback) {
        Entry* e = lookup(section, key);
        return e ? e->value : fallback;
    }

    double get_double(const std::string& section, const std::string& key, double fallback) {
        Entry* e = lookup(section, key);
        if (!e) return fallback;
        double v = 0.0;
        auto [ptr, ec] = std::from_chars(e->value.data(), e->value.data() + e->value.size(), v);
        if (ec != std::errc{} || ptr != e->value.data() + e->value.size())
            fail(e->line, "expected a number for " + section + "." + key + ", got '" + e->value +
                              "'");
        return v;
    }

    long long get_int(const std::string& section, const std::string& key, long long fallback) {
        Entry* e = lookup(section, key);
        if (!e) return fallback;
        long long v = 0;
        auto [ptr, ec] = std::from_chars(e->value.data(), e->value.data() + e->value.size(), v);
        if (ec != std::errc{} || ptr != e->value.data() + e->value.size())
            fail(e->line,
                 "expected an integer for " + section + "." + key + ", got '" + e->value + "'");
        return v;
    }

    std::uint64_t get_uint64(const std::string& section, const std::string& key,
                             std::uint64_t fallback) {
        Entry* e = lookup(section, key);
        if (!e) return fallback;
        std::uint64_t v = 0;
        auto [ptr, ec] = std::from_chars(e->value.data(), e->value.data() + e->value.size(), v);
        if (ec != std::errc{} || ptr != e->value.data() + e->value.size())
            fail(e->line, "expected a non-negative integer for " + section + "." + key +
                              ", got '" + e->value + "'");
        return v;
    }

    /// Rejects unknown sections/keys once every expected key was pulled.
    void finish() const {
        for (const auto& [section, entries] : sections_)
            for (const auto& [key, entry] : entries)
                if (!entry.used)
                    fail(entry.line, "unknown key '" + key + "' in section [" + section + "]");
    }

    const std::string& name() const { return name_; }

  private:
    struct Entry {
        std::string value;
        std::size_t line = 0;
        bool used = false;
    };

    static std::string trim(const std::string& s) {
        const auto first = s.find_first_not_of(" \t\r");
        if (first == std::string::npos) return "";
        const auto last = s.find_last_not_of(" \t\r");
        return s.substr(first, last - first + 1);
    }

    Entry* lookup(const std::string& section, const std::string& key) {
        auto s = sections_.find(section);
        if (s == sections_.end()) return nullptr;
        auto e = s->second.find(key);
        if (e == s->second.end()) return nullptr;
        e->second.used = true;
        return &e->second;
    }

    [[noreturn]] void fail(std::size_t line, const std::string& what) const {
        throw ConfigError(name_ + ":" + std::to_string(line) + ": " + what);
    }

    std::string name_;
    std::map<std::string, std::map<std::string, Entry>> sections_;
};

// ---------------------------------------------------------------------------
// Pipeline configuration
// ---------------------------------------------------------------------------

inline std::vector<std::string> split_list(const std::string& value) {
    std::vector<std::string> out;
    std::string item;
    std::istringstream in(value);
    while (std::getline(in, item, ',')) {
        const auto first = item.find_first_not_of(" \t");
        if (first == std::string::npos) continue;
        const auto last = item.find_last_not_of(" \t");
        out.push_back(item.substr(first, last - first + 1));
    }
    return out;
}

/// Builds the perturbation scheme list from names ("random" / "original"),
/// keeping the given order.
inline std::vector<PerturbScheme> make_schemes(const std::vector<std::string>& names,
                                               int random_samples, double random_ratio,
                                               double original_iou) {
    std::vector<PerturbScheme> out;
    for (const auto& name : names) {
        if (name == "random")
            out.push_back(RandomScheme{random_samples, random_ratio});
        else if (name == "original")
            out.push_back(OriginalScheme{original_iou});
        else
            throw ConfigError("unknown perturbation scheme '" + name +
                              "' (expected random or original)");
    }
    return out;
}

inline PoolMode parse_pool_mode(const std::string& mode) {
    if (mode == "per_scheme_union") return PoolMode::per_scheme_union;
    if (mode == "candidate_union") return PoolMode::candidate_union;
    throw ConfigError("pool_mode: expected per_scheme_union or candidate_union, got '" + mode +
                      "'");
}

/// Everything a full pipeline run needs, mirrored 1:1 by the config file
/// sections. Command-line flags overwrite individual fields after loading.
struct PipelineConfig {
    // [pipeline]
    std::uint64_t seed = 1;
    std::string manifest;            // empty: simulate a world into <out>/world
    std::string out_dir = "out";
    std::string tracker = "gt_follow";    // gt_follow | iou_chain
    std::string detector = "synthetic";   // synthetic | file
    std::vector<std::string> ablations = {"baseline", "random", "original", "combined", "tcn"};
    std::string fusion = "none";          // none | multiply
    // [filter]
    double filter_threshold = -1.1;
    // [proposal] / [perturb] / [tcn] / [sim]
    ProposalConfig proposal;
    PerturbConfig perturb;
    TrainConfig tcn;
    TcnArchitecture tcn_arch;
    SimConfig sim;

    static PipelineConfig from_ini(IniFile& ini) {
        PipelineConfig cfg;
        cfg.seed = ini.get_uint64("pipeline", "seed", cfg.seed);
        cfg.manifest = ini.get_string("pipeline", "manifest", cfg.manifest);
        cfg.out_dir = ini.get_string("pipeline", "out", cfg.out_dir);
        cfg.tracker = ini.get_string("pipeline", "tracker", cfg.tracker);
        cfg.detector = ini.get_string("pipeline", "detector", cfg.detector);
        if (ini.has("pipeline", "ablations"))
            cfg.ablations = split_list(ini.get_string("pipeline", "ablations", ""));
        cfg.fusion = ini.get_string("pipeline", "fusion", cfg.fusion);

        cfg.filter_threshold = ini.get_double("filter", "threshold", cfg.filter_threshold);

        cfg.proposal.early_stop_conf =
            ini.get_double("proposal", "early_stop_conf", cfg.proposal.early_stop_conf);
        cfg.proposal.anchor_min_score =
            ini.get_double("proposal", "anchor_min_score", cfg.proposal.anchor_min_score);
        cfg.proposal.suppression_iou =
            ini.get_double("proposal", "suppression_iou", cfg.proposal.suppression_iou);
        cfg.proposal.max_anchors_per_class = static_cast<int>(ini.get_int(
            "proposal", "max_anchors_per_class", cfg.proposal.max_anchors_per_class));

        const int random_samples =
            static_cast<int>(ini.get_int("perturb", "random_samples", 20));
        const double random_ratio = ini.get_double("perturb", "random_ratio", 0.2);
        const double original_iou = ini.get_double("perturb", "original_iou", 0.5);
        cfg.perturb.schemes =
            make_schemes(split_list(ini.get_string("perturb", "schemes", "random,original")),
                         random_samples, random_ratio, original_iou);
        cfg.perturb.mode =
            parse_pool_mode(ini.get_string("perturb", "pool_mode", "per_scheme_union"));

        cfg.tcn.learning_rate = ini.get_double("tcn", "learning_rate", cfg.tcn.learning_rate);
        cfg.tcn.momentum = ini.get_double("tcn", "momentum", cfg.tcn.momentum);
        cfg.tcn.iterations =
            static_cast<int>(ini.get_int("tcn", "iterations", cfg.tcn.iterations));
        cfg.tcn.batch_size =
            static_cast<int>(ini.get_int("tcn", "batch_size", cfg.tcn.batch_size));
        cfg.tcn.label_iou = ini.get_double("tcn", "label_iou", cfg.tcn.label_iou);
        cfg.tcn.window_stride =
            static_cast<int>(ini.get_int("tcn", "window_stride", cfg.tcn.window_stride));
        cfg.tcn.stop_accuracy = ini.get_double("tcn", "stop_accuracy", cfg.tcn.stop_accuracy);
        cfg.tcn.accuracy_check_every = static_cast<int>(
            ini.get_int("tcn", "accuracy_check_every", cfg.tcn.accuracy_check_every));
        const int hidden = static_cast<int>(ini.get_int(
            "tcn", "hidden_channels", cfg.tcn_arch.layers.front().channels));
        cfg.tcn_arch.layers = {{hidden, 5}, {hidden, 5}, {hidden, 7}, {2, 3}};

        cfg.sim.seed = ini.get_uint64("sim", "seed", cfg.seed);  // inherits the global seed
        cfg.sim.videos = static_cast<int>(ini.get_int("sim", "videos", cfg.sim.videos));
        cfg.sim.frames = static_cast<int>(ini.get_int("sim", "frames", cfg.sim.frames));
        cfg.sim.classes = static_cast<int>(ini.get_int("sim", "classes", cfg.sim.classes));
        cfg.sim.instances_per_video = static_cast<int>(
            ini.get_int("sim", "instances_per_video", cfg.sim.instances_per_video));
        cfg.sim.sigma_det = ini.get_double("sim", "sigma_det", cfg.sim.sigma_det);
        cfg.sim.a = ini.get_double("sim", "a", cfg.sim.a);
        cfg.sim.b = ini.get_double("sim", "b", cfg.sim.b);
        cfg.sim.proposals_per_frame = static_cast<int>(
            ini.get_int("sim", "proposals_per_frame", cfg.sim.proposals_per_frame));
        cfg.sim.jitter = ini.get_double("sim", "jitter", cfg.sim.jitter);
        cfg.sim.drift = ini.get_double("sim", "drift", cfg.sim.drift);
        cfg.sim.conf_decay = ini.get_double("sim", "conf_decay", cfg.sim.conf_decay);
        cfg.sim.motion = ini.get_double("sim", "motion", cfg.sim.motion);
        cfg.sim.size_drift = ini.get_double("sim", "size_drift", cfg.sim.size_drift);
        cfg.sim.width = ini.get_double("sim", "width", cfg.sim.width);
        cfg.sim.height = ini.get_double("sim", "height", cfg.sim.height);

        cfg.perturb.seed = cfg.seed;
        ini.finish();
        cfg.validate();
        return cfg;
    }

    void validate() const {
        if (tracker != "gt_follow" && tracker != "iou_chain")
            throw ConfigError("pipeline.tracker: expected gt_follow or iou_chain");
        if (detector != "synthetic" && detector != "file")
            throw ConfigError("pipeline.detector: expected synthetic or file");
        if (fusion != "none" && fusion != "multiply")
            throw ConfigError("pipeline.fusion: expected none or multiply");
        if (out_dir.empty()) throw ConfigError("pipeline.out: output directory required");
        if (ablations.empty()) throw ConfigError("pipeline.ablations: at least one entry");
        for (const auto& a : ablations)
            if (a != "all" && a != "baseline" && a != "random" && a != "original" &&
                a != "combined" && a != "tcn")
                throw ConfigError("pipeline.ablations: unknown entry '" + a + "'");
        try {
            proposal.validate();
            perturb.validate();
            tcn.validate();
            tcn_arch.validate();
            sim.validate();
        } catch (const std::invalid_argument& e) {
            throw ConfigError(e.what());
        }
    }

    /// Resolved ablation list with "all" expanded, order fixed.
    std::vector<std::string> resolved_ablations() const {
        for (const auto& a : ablations)
            if (a == "all") return {"baseline", "random", "original", "combined", "tcn"};
        return ablations;
    }
};

namespace detail {

inline std::string format_number(double v) {
    char buf[64];
    auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, end);
}

}  // namespace detail

/// Serializes the effective configuration; written into every run's output
/// directory so an experiment can be reproduced from its artifacts alone.
inline std::string serialize_config(const PipelineConfig& cfg) {
    std::ostringstream out;
    out << "[pipeline]\n";
    out << "seed = " << cfg.seed << "\n";
    if (!cfg.manifest.empty()) out << "manifest = " << cfg.manifest << "\n";
    out << "out = " << cfg.out_dir << "\n";
    out << "tracker = " << cfg.tracker << "\n";
    out << "detector = " << cfg.detector << "\n";
    out << "ablations = ";
    const auto ablations = cfg.resolved_ablations();
    for (std::size_t i = 0; i < ablations.size(); ++i)
        out << (i ? "," : "") << ablations[i];
    out << "\n";
    out << "fusion = " << cfg.fusion << "\n\n";

    out << "[filter]\n";
    out << "threshold = " << detail::format_number(cfg.filter_threshold) << "\n\n";

    out << "[proposal]\n";
    out << "early_stop_conf = " << detail::format_number(cfg.proposal.early_stop_conf) << "\n";
    out << "anchor_min_score = " << detail::format_number(cfg.proposal.anchor_min_score) << "\n";
    out << "suppression_iou = " << detail::format_number(cfg.proposal.suppression_iou) << "\n";
    out << "max_anchors_per_class = " << cfg.proposal.max_anchors_per_class << "\n\n";

    out << "[perturb]\n";
    std::string schemes;
    int random_samples = 20;
    double random_ratio = 0.2, original_iou = 0.5;
    for (const auto& scheme : cfg.perturb.schemes) {
        if (const auto* rs = std::get_if<RandomScheme>(&scheme)) {
            schemes += schemes.empty() ? "random" : ",random";
            random_samples = rs->samples;
            random_ratio = rs->ratio;
        } else {
            schemes += schemes.empty() ? "original" : ",original";
            original_iou = std::get<OriginalScheme>(scheme).iou_thresh;
        }
    }
    out << "schemes = " << schemes << "\n";
    out << "random_samples = " << random_samples << "\n";
    out << "random_ratio = " << detail::format_number(random_ratio) << "\n";
    out << "original_iou = " << detail::format_number(original_iou) << "\n";
    out << "pool_mode = "
        << (cfg.perturb.mode == PoolMode::per_scheme_union ? "per_scheme_union"
                                                           : "candidate_union")
        << "\n\n";

    out << "[tcn]\n";
    out << "learning_rate = " << detail::format_number(cfg.tcn.learning_rate) << "\n";
    out << "momentum = " << detail::format_number(cfg.tcn.momentum) << "\n";
    out << "iterations = " << cfg.tcn.iterations << "\n";
    out << "batch_size = " << cfg.tcn.batch_size << "\n";
    out << "label_iou = " << detail::format_number(cfg.tcn.label_iou) << "\n";
    out << "window_stride = " << cfg.tcn.window_stride << "\n";
    out << "stop_accuracy = " << detail::format_number(cfg.tcn.stop_accuracy) << "\n";
    out << "accuracy_check_every = " << cfg.tcn.accuracy_check_every << "\n";
    out << "hidden_channels = " << cfg.tcn_arch.layers.front().channels << "\n\n";

    out << "[sim]\n";
    out << "seed = " << cfg.sim.seed << "\n";
    out << "videos = " << cfg.sim.videos << "\n";
    out << "frames = " << cfg.sim.frames << "\n";
    out << "classes = " << cfg.sim.classes << "\n";
    out << "instances_per_video = " << cfg.sim.instances_per_video << "\n";
    out << "sigma_det = " << detail::format_number(cfg.sim.sigma_det) << "\n";
    out << "a = " << detail::format_number(cfg.sim.a) << "\n";
    out << "b = " << detail::format_number(cfg.sim.b) << "\n";
    out << "proposals_per_frame = " << cfg.sim.proposals_per_frame << "\n";
    out << "jitter = " << detail::format_number(cfg.sim.jitter) << "\n";
    out << "drift = " << detail::format_number(cfg.sim.drift) << "\n";
    out << "conf_decay = " << detail::format_number(cfg.sim.conf_decay) << "\n";
    out << "motion = " << detail::format_number(cfg.sim.motion) << "\n";
    out << "size_drift = " << detail::format_number(cfg.sim.size_drift) << "\n";
    out << "width = " << detail::format_number(cfg.sim.width) << "\n";
    out << "height = " << detail::format_number(cfg.sim.height) << "\n";
    return out.str();
}

}  // namespace tubedet
