#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "tubedet/errors.hpp"
#include "tubedet/geometry.hpp"
#include "tubedet/rng.hpp"
#include "tubedet/tubelet.hpp"

namespace tubedet {

// ---------------------------------------------------------------------------
// Architecture and model
// ---------------------------------------------------------------------------

struct TcnLayerSpec {
    int channels = 0;  // output channels
    int kernel = 0;    // temporal kernel size, odd (same padding)

    bool operator==(const TcnLayerSpec&) const = default;
};

/// 4-layer 1-D fully convolutional net over score time series. Every layer
/// preserves the temporal length (odd kernel, zero same-padding); the final
/// two channels feed a per-timestep softmax whose channel 1 is the
/// foreground probability.
struct TcnArchitecture {
    int in_channels = 3;  // det_score, track_score, anchor offset
    int window = 50;
    std::vector<TcnLayerSpec> layers = {{256, 5}, {256, 5}, {256, 7}, {2, 3}};

    void validate() const {
        if (in_channels < 1) throw ConfigError("tcn: in_channels must be >= 1");
        if (window < 1) throw ConfigError("tcn: window must be >= 1");
        if (layers.empty()) throw ConfigError("tcn: at least one layer required");
        for (const auto& l : layers) {
            if (l.channels < 1) throw ConfigError("tcn: layer channels must be >= 1");
            if (l.kernel < 1 || l.kernel % 2 == 0)
                throw ConfigError("tcn: kernel sizes must be odd (same padding)");
        }
        if (layers.back().channels != 2)
            throw ConfigError("tcn: final layer must have 2 channels (softmax pair)");
    }

    int layer_in_channels(std::size_t l) const {
        return l == 0 ? in_channels : layers[l - 1].channels;
    }

    bool operator==(const TcnArchitecture&) const = default;
};

struct TcnModel {
    TcnArchitecture arch;
    std::vector<std::vector<double>> weights;  // per layer, index (o*C_in + c)*K + k
    std::vector<std::vector<double>> biases;   // per layer, length C_out
    std::uint64_t init_seed = 0;

    /// He-style initialization: weights ~ N(0, sqrt(2 / (C_in * K))),
    /// biases zero; deterministic per seed.
    static TcnModel init(const TcnArchitecture& arch, std::uint64_t seed) {
        arch.validate();
        TcnModel m;
        m.arch = arch;
        m.init_seed = seed;
        for (std::size_t l = 0; l < arch.layers.size(); ++l) {
            const int cin = arch.layer_in_channels(l);
            const int cout = arch.layers[l].channels;
            const int k = arch.layers[l].kernel;
            Rng rng(hash_key(seed, "tcn.init", std::int64_t{static_cast<std::int64_t>(l)}));
            const double stddev = std::sqrt(2.0 / (cin * k));
            std::vector<double> w(static_cast<std::size_t>(cout) * cin * k);
            for (auto& v : w) v = stddev * rng.gaussian();
            m.weights.push_back(std::move(w));
            m.biases.emplace_back(static_cast<std::size_t>(cout), 0.0);
        }
        return m;
    }

    bool operator==(const TcnModel&) const = default;
};

// ---------------------------------------------------------------------------
// Feature windows and labels
// ---------------------------------------------------------------------------

/// One fixed-length input window cut from a tubelet's score series.
struct FeatureSeries {
    static constexpr int channels = 3;

    int window = 0;                  // T
    int start = 0;                   // tubelet box index of position 0
    std::vector<double> data;        // channel-major, channels * T
    std::vector<std::uint8_t> mask;  // 1 = real frame, 0 = replicate padding
    int valid_count = 0;
};

/// A feature window with its per-timestep binary supervision labels.
struct LabeledWindow {
    FeatureSeries features;
    std::vector<int> labels;  // length T; padded positions carry the last label
};

/// Window start offsets covering a series of the given length: stride steps
/// while a full window fits, plus one right-aligned window when the tail
/// would otherwise be uncovered. A series shorter than one window yields a
/// single offset 0 (the window will be padded).
inline std::vector<int> window_offsets(int length, int window, int stride) {
    if (length < 1) throw std::invalid_argument("window_offsets: empty series");
    if (window < 1 || stride < 1)
        throw std::invalid_argument("window_offsets: window and stride must be >= 1");
    if (length <= window) return {0};
    std::vector<int> offsets;
    for (int o = 0; o + window <= length; o += stride) offsets.push_back(o);
    if (offsets.back() + window < length) offsets.push_back(length - window);
    return offsets;
}

/// Cuts a tubelet's (det_score, track_score, anchor_offset) series into
/// feature windows. Tubelets shorter than the window produce one window
/// padded by replicating the last frame, with padding masked out.
inline std::vector<FeatureSeries> build_features(const Tubelet& tubelet, int window = 50,
                                                 int stride = 25) {
    if (tubelet.boxes.empty()) throw std::invalid_argument("build_features: empty tubelet");
    const int length = tubelet.length();
    std::vector<FeatureSeries> out;
    for (int offset : window_offsets(length, window, stride)) {
        FeatureSeries fs;
        fs.window = window;
        fs.start = offset;
        fs.data.resize(static_cast<std::size_t>(FeatureSeries::channels) * window);
        fs.mask.resize(static_cast<std::size_t>(window));
        for (int t = 0; t < window; ++t) {
            const bool real = offset + t < length;
            const auto& tb = tubelet.boxes[static_cast<std::size_t>(
                real ? offset + t : length - 1)];
            fs.data[static_cast<std::size_t>(t)] = tb.det_score;
            fs.data[static_cast<std::size_t>(window + t)] = tb.track_score;
            fs.data[static_cast<std::size_t>(2 * window + t)] = tb.anchor_offset_norm;
            fs.mask[static_cast<std::size_t>(t)] = real ? 1 : 0;
            if (real) ++fs.valid_count;
        }
        out.push_back(std::move(fs));
    }
    return out;
}

/// Per-frame binary labels for a whole tubelet: 1 iff the box overlaps some
/// ground-truth object of the tubelet's class on that frame with iou
/// strictly above the threshold.
inline std::vector<int> frame_labels(const Tubelet& tubelet,
                                     std::span<const GroundTruthObject> gts,
                                     double iou_thresh = 0.5) {
    std::unordered_map<int, std::vector<const GroundTruthObject*>> by_frame;
    for (const auto& g : gts)
        if (g.video_id == tubelet.video_id && g.class_id == tubelet.class_id)
            by_frame[g.frame].push_back(&g);
    std::vector<int> labels;
    labels.reserve(tubelet.boxes.size());
    for (const auto& tb : tubelet.boxes) {
        int label = 0;
        if (auto it = by_frame.find(tb.frame); it != by_frame.end())
            for (const auto* g : it->second)
                if (iou(tb.box, g->box) > iou_thresh) {
                    label = 1;
                    break;
                }
        labels.push_back(label);
    }
    return labels;
}

/// Windows the per-frame labels exactly like build_features windows the
/// series (replicated tail label on padding, which the mask excludes from
/// the loss anyway).
inline std::vector<std::vector<int>> make_labels(const Tubelet& tubelet,
                                                 std::span<const GroundTruthObject> gts,
                                                 int window = 50, int stride = 25,
                                                 double iou_thresh = 0.5) {
    const auto per_frame = frame_labels(tubelet, gts, iou_thresh);
    const int length = static_cast<int>(per_frame.size());
    if (length == 0) throw std::invalid_argument("make_labels: empty tubelet");
    std::vector<std::vector<int>> out;
    for (int offset : window_offsets(length, window, stride)) {
        std::vector<int> labels(static_cast<std::size_t>(window));
        for (int t = 0; t < window; ++t)
            labels[static_cast<std::size_t>(t)] =
                per_frame[static_cast<std::size_t>(std::min(offset + t, length - 1))];
        out.push_back(std::move(labels));
    }
    return out;
}

inline std::vector<LabeledWindow> build_labeled_windows(const Tubelet& tubelet,
                                                        std::span<const GroundTruthObject> gts,
                                                        int window = 50, int stride = 25,
                                                        double iou_thresh = 0.5) {
    auto features = build_features(tubelet, window, stride);
    auto labels = make_labels(tubelet, gts, window, stride, iou_thresh);
    std::vector<LabeledWindow> out;
    out.reserve(features.size());
    for (std::size_t i = 0; i < features.size(); ++i)
        out.push_back({std::move(features[i]), std::move(labels[i])});
    return out;
}

// ---------------------------------------------------------------------------
// Forward / backward
// ---------------------------------------------------------------------------

namespace detail {

/// y[o][t] = b[o] + sum_{c,k} w[o][c][k] * xp[c][t+k] for a zero-padded
/// input xp of temporal extent t_len + k - 1. Loops are arranged so the
/// innermost runs over contiguous t for both operands.
inline void conv_forward(const double* xp, int cin, int tp, const double* w, const double* b,
                         int cout, int k, int t_len, double* y) {
    for (int o = 0; o < cout; ++o) {
        double* yo = y + static_cast<std::ptrdiff_t>(o) * t_len;
        std::fill(yo, yo + t_len, b[o]);
        for (int c = 0; c < cin; ++c) {
            const double* xc = xp + static_cast<std::ptrdiff_t>(c) * tp;
            const double* woc = w + (static_cast<std::ptrdiff_t>(o) * cin + c) * k;
            for (int kk = 0; kk < k; ++kk) {
                const double wv = woc[kk];
                const double* xk = xc + kk;
                for (int t = 0; t < t_len; ++t) yo[t] += wv * xk[t];
            }
        }
    }
}

/// Accumulates dW/db for one window and, when dxp is non-null, the gradient
/// w.r.t. the padded input (dxp must be zeroed by the caller).
inline void conv_backward(const double* xp, int cin, int tp, const double* w, int cout, int k,
                          int t_len, const double* dy, double* dw, double* db, double* dxp) {
    for (int o = 0; o < cout; ++o) {
        const double* dyo = dy + static_cast<std::ptrdiff_t>(o) * t_len;
        double bacc = 0.0;
        for (int t = 0; t < t_len; ++t) bacc += dyo[t];
        db[o] += bacc;
        for (int c = 0; c < cin; ++c) {
            const double* xc = xp + static_cast<std::ptrdiff_t>(c) * tp;
            double* dwoc = dw + (static_cast<std::ptrdiff_t>(o) * cin + c) * k;
            for (int kk = 0; kk < k; ++kk) {
                const double* xk = xc + kk;
                double s = 0.0;
                for (int t = 0; t < t_len; ++t) s += dyo[t] * xk[t];
                dwoc[kk] += s;
            }
        }
    }
    if (!dxp) return;
    for (int o = 0; o < cout; ++o) {
        const double* dyo = dy + static_cast<std::ptrdiff_t>(o) * t_len;
        for (int c = 0; c < cin; ++c) {
            double* dxc = dxp + static_cast<std::ptrdiff_t>(c) * tp;
            const double* woc = w + (static_cast<std::ptrdiff_t>(o) * cin + c) * k;
            for (int kk = 0; kk < k; ++kk) {
                const double wv = woc[kk];
                double* dxk = dxc + kk;
                for (int t = 0; t < t_len; ++t) dxk[t] += wv * dyo[t];
            }
        }
    }
}

/// Reusable per-window buffers; shapes depend only on the architecture.
struct TcnWorkspace {
    std::vector<std::vector<double>> padded;  // input to each layer, padded
    std::vector<std::vector<double>> preact;  // each layer's pre-ReLU output
    std::vector<std::vector<double>> dpre;    // gradient w.r.t. preact
    std::vector<std::vector<double>> dpad;    // gradient w.r.t. padded input
    std::vector<double> probs;                // softmax output, 2 * T

    explicit TcnWorkspace(const TcnArchitecture& arch) {
        const int t_len = arch.window;
        for (std::size_t l = 0; l < arch.layers.size(); ++l) {
            const int cin = arch.layer_in_channels(l);
            const int cout = arch.layers[l].channels;
            const int tp = t_len + arch.layers[l].kernel - 1;
            padded.emplace_back(static_cast<std::size_t>(cin) * tp, 0.0);
            preact.emplace_back(static_cast<std::size_t>(cout) * t_len, 0.0);
            dpre.emplace_back(static_cast<std::size_t>(cout) * t_len, 0.0);
            dpad.emplace_back(static_cast<std::size_t>(cin) * tp, 0.0);
        }
        probs.assign(static_cast<std::size_t>(2) * t_len, 0.0);
    }
};

/// Runs the full forward pass; leaves activations in ws for backprop.
inline void run_forward(const TcnModel& model, const FeatureSeries& features, TcnWorkspace& ws) {
    const auto& arch = model.arch;
    const int t_len = arch.window;
    if (features.window != t_len ||
        features.data.size() != static_cast<std::size_t>(arch.in_channels) * t_len)
        throw std::invalid_argument("tcn forward: feature shape does not match architecture");

    for (std::size_t l = 0; l < arch.layers.size(); ++l) {
        const int cin = arch.layer_in_channels(l);
        const int cout = arch.layers[l].channels;
        const int k = arch.layers[l].kernel;
        const int pad = k / 2;
        const int tp = t_len + k - 1;
        auto& xp = ws.padded[l];
        std::fill(xp.begin(), xp.end(), 0.0);
        // fill the unpadded interior from the source of this layer
        const double* src = l == 0 ? features.data.data() : ws.preact[l - 1].data();
        for (int c = 0; c < cin; ++c) {
            double* dst = xp.data() + static_cast<std::ptrdiff_t>(c) * tp + pad;
            const double* sc = src + static_cast<std::ptrdiff_t>(c) * t_len;
            if (l == 0) {
                std::copy(sc, sc + t_len, dst);
            } else {
                for (int t = 0; t < t_len; ++t) dst[t] = sc[t] > 0.0 ? sc[t] : 0.0;  // ReLU
            }
        }
        conv_forward(xp.data(), cin, tp, model.weights[l].data(), model.biases[l].data(), cout,
                     k, t_len, ws.preact[l].data());
    }

    // per-timestep 2-way softmax over the last layer's logits
    const double* logits = ws.preact.back().data();
    for (int t = 0; t < t_len; ++t) {
        const double l0 = logits[t];
        const double l1 = logits[t_len + t];
        const double m = std::max(l0, l1);
        const double e0 = std::exp(l0 - m);
        const double e1 = std::exp(l1 - m);
        ws.probs[static_cast<std::size_t>(t)] = e0 / (e0 + e1);
        ws.probs[static_cast<std::size_t>(t_len + t)] = e1 / (e0 + e1);
    }
}

}  // namespace detail

/// Forward pass: per-timestep class probabilities, channel-major 2 x T
/// (channel 1 is the foreground probability).
inline std::vector<double> forward(const TcnModel& model, const FeatureSeries& features) {
    detail::TcnWorkspace ws(model.arch);
    detail::run_forward(model, features, ws);
    return ws.probs;
}

/// Parameter gradients plus the loss they belong to.
struct TcnGradients {
    std::vector<std::vector<double>> weights;
    std::vector<std::vector<double>> biases;
    double loss = 0.0;      // mean cross-entropy over unmasked positions
    int positions = 0;      // number of unmasked positions in the batch

    explicit TcnGradients(const TcnArchitecture& arch) {
        for (std::size_t l = 0; l < arch.layers.size(); ++l) {
            weights.emplace_back(
                static_cast<std::size_t>(arch.layers[l].channels) *
                    arch.layer_in_channels(l) * arch.layers[l].kernel,
                0.0);
            biases.emplace_back(static_cast<std::size_t>(arch.layers[l].channels), 0.0);
        }
    }
};

namespace detail {

/// Accumulates one window's unnormalized loss and gradient contributions.
inline double backward_window(const TcnModel& model, const LabeledWindow& lw, TcnWorkspace& ws,
                              TcnGradients& grads) {
    const auto& arch = model.arch;
    const int t_len = arch.window;
    run_forward(model, lw.features, ws);

    // softmax + cross-entropy gradient, masked positions contribute nothing
    double loss = 0.0;
    const std::size_t last = arch.layers.size() - 1;
    auto& dlogits = ws.dpre[last];
    std::fill(dlogits.begin(), dlogits.end(), 0.0);
    for (int t = 0; t < t_len; ++t) {
        if (!lw.features.mask[static_cast<std::size_t>(t)]) continue;
        const int label = lw.labels[static_cast<std::size_t>(t)];
        const double p0 = ws.probs[static_cast<std::size_t>(t)];
        const double p1 = ws.probs[static_cast<std::size_t>(t_len + t)];
        loss -= std::log(label == 1 ? p1 : p0);
        dlogits[static_cast<std::size_t>(t)] = p0 - (label == 0 ? 1.0 : 0.0);
        dlogits[static_cast<std::size_t>(t_len + t)] = p1 - (label == 1 ? 1.0 : 0.0);
    }

    for (std::size_t l = arch.layers.size(); l-- > 0;) {
        const int cin = arch.layer_in_channels(l);
        const int cout = arch.layers[l].channels;
        const int k = arch.layers[l].kernel;
        const int pad = k / 2;
        const int tp = t_len + k - 1;
        double* dxp = nullptr;
        if (l > 0) {
            auto& buf = ws.dpad[l];
            std::fill(buf.begin(), buf.end(), 0.0);
            dxp = buf.data();
        }
        conv_backward(ws.padded[l].data(), cin, tp, model.weights[l].data(), cout, k, t_len,
                      ws.dpre[l].data(), grads.weights[l].data(), grads.biases[l].data(), dxp);
        if (l > 0) {
            // strip padding and gate through the previous layer's ReLU
            const double* pre = ws.preact[l - 1].data();
            auto& dprev = ws.dpre[l - 1];
            for (int c = 0; c < cin; ++c) {
                const double* dxc = dxp + static_cast<std::ptrdiff_t>(c) * tp + pad;
                double* dpc = dprev.data() + static_cast<std::ptrdiff_t>(c) * t_len;
                const double* prc = pre + static_cast<std::ptrdiff_t>(c) * t_len;
                for (int t = 0; t < t_len; ++t) dpc[t] = prc[t] > 0.0 ? dxc[t] : 0.0;
            }
        }
    }
    return loss;
}

}  // namespace detail

/// Loss and parameter gradients of the mean per-frame cross-entropy over
/// all unmasked positions of the batch. Windows are accumulated in the
/// order given; callers wanting order independence sort beforehand.
inline TcnGradients loss_and_gradients(const TcnModel& model,
                                       std::span<const LabeledWindow> batch) {
    model.arch.validate();
    detail::TcnWorkspace ws(model.arch);
    TcnGradients grads(model.arch);
    double loss_sum = 0.0;
    for (const auto& lw : batch) {
        loss_sum += detail::backward_window(model, lw, ws, grads);
        grads.positions += lw.features.valid_count;
    }
    if (grads.positions == 0)
        throw std::invalid_argument("tcn loss: batch has no unmasked positions");
    const double inv = 1.0 / grads.positions;
    for (auto& w : grads.weights)
        for (auto& v : w) v *= inv;
    for (auto& b : grads.biases)
        for (auto& v : b) v *= inv;
    grads.loss = loss_sum * inv;
    return grads;
}

/// Fraction of unmasked positions whose argmax probability matches the label.
inline double frame_accuracy(const TcnModel& model, std::span<const LabeledWindow> windows) {
    detail::TcnWorkspace ws(model.arch);
    const int t_len = model.arch.window;
    long correct = 0, total = 0;
    for (const auto& lw : windows) {
        detail::run_forward(model, lw.features, ws);
        for (int t = 0; t < t_len; ++t) {
            if (!lw.features.mask[static_cast<std::size_t>(t)]) continue;
            const int predicted =
                ws.probs[static_cast<std::size_t>(t_len + t)] > 0.5 ? 1 : 0;
            correct += predicted == lw.labels[static_cast<std::size_t>(t)] ? 1 : 0;
            ++total;
        }
    }
    if (total == 0) throw std::invalid_argument("frame_accuracy: no unmasked positions");
    return static_cast<double>(correct) / static_cast<double>(total);
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

struct TrainConfig {
    double learning_rate = 0.01;
    double momentum = 0.9;
    int iterations = 200;
    int batch_size = 8;
    double label_iou = 0.5;       // strict > threshold for positive frames
    int window_stride = 25;
    std::uint64_t seed = 1;
    double stop_accuracy = -1.0;  // > 0 enables early stop on frame accuracy
    int accuracy_check_every = 25;

    void validate() const {
        if (!(learning_rate > 0.0)) throw ConfigError("tcn train: learning_rate must be > 0");
        if (momentum < 0.0 || momentum >= 1.0)
            throw ConfigError("tcn train: momentum must be in [0,1)");
        if (iterations < 1) throw ConfigError("tcn train: iterations must be >= 1");
        if (batch_size < 1) throw ConfigError("tcn train: batch_size must be >= 1");
        if (label_iou < 0.0 || label_iou > 1.0)
            throw ConfigError("tcn train: label_iou must be in [0,1]");
        if (window_stride < 1) throw ConfigError("tcn train: window_stride must be >= 1");
        if (accuracy_check_every < 1)
            throw ConfigError("tcn train: accuracy_check_every must be >= 1");
    }
};

struct TrainResult {
    TcnModel model;
    std::vector<double> loss_history;  // one entry per executed iteration
    int iterations_run = 0;
};

/// Mini-batch SGD with momentum from a seeded He init. Batch composition
/// follows a seeded epoch shuffle; batch indices are sorted before gradient
/// accumulation so the update sequence is reproducible bit for bit. A
/// non-finite loss aborts with NumericalError.
inline TrainResult train(const std::vector<LabeledWindow>& windows, const TcnArchitecture& arch,
                         const TrainConfig& cfg) {
    cfg.validate();
    arch.validate();
    bool any_valid = false;
    for (const auto& w : windows) any_valid = any_valid || w.features.valid_count > 0;
    if (!any_valid)
        throw std::invalid_argument("tcn train: no window has an unmasked position");

    TrainResult result;
    result.model = TcnModel::init(arch, cfg.seed);
    TcnModel& model = result.model;

    std::vector<std::vector<double>> vel_w, vel_b;
    for (std::size_t l = 0; l < model.weights.size(); ++l) {
        vel_w.emplace_back(model.weights[l].size(), 0.0);
        vel_b.emplace_back(model.biases[l].size(), 0.0);
    }

    Rng order_rng(hash_key(cfg.seed, "tcn.order"));
    std::vector<std::size_t> order(windows.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::size_t pos = order.size();  // forces a shuffle before the first batch

    detail::TcnWorkspace ws(arch);
    for (int iter = 0; iter < cfg.iterations; ++iter) {
        if (pos >= order.size()) {
            order_rng.shuffle(order);
            pos = 0;
        }
        std::vector<std::size_t> batch(
            order.begin() + static_cast<std::ptrdiff_t>(pos),
            order.begin() + static_cast<std::ptrdiff_t>(
                                std::min(pos + static_cast<std::size_t>(cfg.batch_size),
                                         order.size())));
        pos += batch.size();
        std::sort(batch.begin(), batch.end());

        TcnGradients grads(arch);
        double loss_sum = 0.0;
        for (std::size_t idx : batch) {
            loss_sum += detail::backward_window(model, windows[idx], ws, grads);
            grads.positions += windows[idx].features.valid_count;
        }
        if (grads.positions == 0) {
            result.loss_history.push_back(0.0);  // batch of fully padded windows
            ++result.iterations_run;
            continue;
        }
        const double inv = 1.0 / grads.positions;
        const double loss = loss_sum * inv;
        if (!std::isfinite(loss))
            throw NumericalError("tcn train: non-finite loss at iteration " +
                                 std::to_string(iter));
        result.loss_history.push_back(loss);
        ++result.iterations_run;

        for (std::size_t l = 0; l < model.weights.size(); ++l) {
            double* w = model.weights[l].data();
            double* v = vel_w[l].data();
            const double* g = grads.weights[l].data();
            const std::size_t n = model.weights[l].size();
            for (std::size_t i = 0; i < n; ++i) {
                v[i] = cfg.momentum * v[i] - cfg.learning_rate * g[i] * inv;
                w[i] += v[i];
            }
            double* b = model.biases[l].data();
            double* vb = vel_b[l].data();
            const double* gb = grads.biases[l].data();
            for (std::size_t i = 0; i < model.biases[l].size(); ++i) {
                vb[i] = cfg.momentum * vb[i] - cfg.learning_rate * gb[i] * inv;
                b[i] += vb[i];
            }
        }

        if (cfg.stop_accuracy > 0.0 && (iter + 1) % cfg.accuracy_check_every == 0 &&
            frame_accuracy(model, windows) >= cfg.stop_accuracy)
            break;
    }
    return result;
}

// ---------------------------------------------------------------------------
// Re-scoring
// ---------------------------------------------------------------------------

/// Fills tcn_score with the per-frame foreground probability; frames
/// covered by several windows take the mean of their predictions.
inline void rescore(const TcnModel& model, Tubelet& tubelet, int stride = 25) {
    const auto windows = build_features(tubelet, model.arch.window, stride);
    const int length = tubelet.length();
    std::vector<double> sum(static_cast<std::size_t>(length), 0.0);
    std::vector<int> count(static_cast<std::size_t>(length), 0);
    detail::TcnWorkspace ws(model.arch);
    const int t_len = model.arch.window;
    for (const auto& fs : windows) {
        detail::run_forward(model, fs, ws);
        for (int t = 0; t < t_len; ++t) {
            if (!fs.mask[static_cast<std::size_t>(t)]) continue;
            sum[static_cast<std::size_t>(fs.start + t)] +=
                ws.probs[static_cast<std::size_t>(t_len + t)];
            count[static_cast<std::size_t>(fs.start + t)] += 1;
        }
    }
    for (int i = 0; i < length; ++i) {
        if (count[static_cast<std::size_t>(i)] == 0)
            throw std::logic_error("tcn rescore: frame not covered by any window");
        tubelet.boxes[static_cast<std::size_t>(i)].tcn_score =
            sum[static_cast<std::size_t>(i)] / count[static_cast<std::size_t>(i)];
    }
}

// ---------------------------------------------------------------------------
// Serialization (versioned text format, full-precision numbers)
// ---------------------------------------------------------------------------

namespace detail {

inline void write_number(std::ostream& out, double v) {
    char buf[64];
    auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
    out.write(buf, end - buf);
}

inline double read_number(std::istream& in, const std::filesystem::path& path) {
    std::string token;
    if (!(in >> token)) throw ParseError(path.string() + ": truncated model file");
    double v = 0.0;
    auto [ptr, ec] = std::from_chars(token.data(), token.data() + token.size(), v);
    if (ec != std::errc{} || ptr != token.data() + token.size())
        throw ParseError(path.string() + ": bad number '" + token + "'");
    return v;
}

}  // namespace detail

inline void save_model(const TcnModel& model, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw ParseError("cannot write " + path.string());
    out << "tubedet-tcn 1\n";
    out << "in_channels " << model.arch.in_channels << "\n";
    out << "window " << model.arch.window << "\n";
    out << "seed " << model.init_seed << "\n";
    out << "layers " << model.arch.layers.size() << "\n";
    for (const auto& l : model.arch.layers) out << "layer " << l.channels << " " << l.kernel << "\n";
    for (std::size_t l = 0; l < model.arch.layers.size(); ++l) {
        out << "weights " << model.weights[l].size() << "\n";
        for (std::size_t i = 0; i < model.weights[l].size(); ++i) {
            if (i) out.put(' ');
            detail::write_number(out, model.weights[l][i]);
        }
        out.put('\n');
        out << "biases " << model.biases[l].size() << "\n";
        for (std::size_t i = 0; i < model.biases[l].size(); ++i) {
            if (i) out.put(' ');
            detail::write_number(out, model.biases[l][i]);
        }
        out.put('\n');
    }
    if (!out) throw ParseError("write failed: " + path.string());
}

inline TcnModel load_model(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open " + path.string());
    auto expect = [&](const char* keyword) {
        std::string word;
        if (!(in >> word) || word != keyword)
            throw ParseError(path.string() + ": expected '" + keyword + "', found '" + word +
                             "'");
    };
    expect("tubedet-tcn");
    int version = 0;
    in >> version;
    if (version != 1)
        throw ParseError(path.string() + ": unsupported model version " +
                         std::to_string(version));
    TcnModel m;
    m.arch.layers.clear();
    expect("in_channels");
    in >> m.arch.in_channels;
    expect("window");
    in >> m.arch.window;
    expect("seed");
    in >> m.init_seed;
    expect("layers");
    std::size_t layer_count = 0;
    in >> layer_count;
    if (!in || layer_count == 0) throw ParseError(path.string() + ": bad layer count");
    for (std::size_t l = 0; l < layer_count; ++l) {
        expect("layer");
        TcnLayerSpec spec;
        in >> spec.channels >> spec.kernel;
        m.arch.layers.push_back(spec);
    }
    if (!in) throw ParseError(path.string() + ": truncated architecture header");
    m.arch.validate();
    for (std::size_t l = 0; l < layer_count; ++l) {
        expect("weights");
        std::size_t n = 0;
        in >> n;
        const std::size_t expected = static_cast<std::size_t>(m.arch.layers[l].channels) *
                                     m.arch.layer_in_channels(l) * m.arch.layers[l].kernel;
        if (!in || n != expected)
            throw ParseError(path.string() + ": weight count mismatch in layer " +
                             std::to_string(l));
        std::vector<double> w(n);
        for (auto& v : w) v = detail::read_number(in, path);
        m.weights.push_back(std::move(w));
        expect("biases");
        in >> n;
        if (!in || n != static_cast<std::size_t>(m.arch.layers[l].channels))
            throw ParseError(path.string() + ": bias count mismatch in layer " +
                             std::to_string(l));
        std::vector<double> b(n);
        for (auto& v : b) v = detail::read_number(in, path);
        m.biases.push_back(std::move(b));
    }
    return m;
}

}  // namespace tubedet
