#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace tubedet {

/// Axis-aligned box with real-valued corners, half-open convention:
/// area = (x2-x1)*(y2-y1), no "+1" pixel correction. Degenerate or
/// non-finite boxes cannot be constructed.
struct BoundingBox {
    double x1, y1, x2, y2;

    BoundingBox(double x1_, double y1_, double x2_, double y2_)
        : x1(x1_), y1(y1_), x2(x2_), y2(y2_) {
        if (!valid_coords(x1, y1, x2, y2))
            throw std::invalid_argument("degenerate or non-finite bounding box [" +
                                        std::to_string(x1) + "," + std::to_string(y1) + "," +
                                        std::to_string(x2) + "," + std::to_string(y2) + "]");
    }

    static bool valid_coords(double x1, double y1, double x2, double y2) {
        return std::isfinite(x1) && std::isfinite(y1) && std::isfinite(x2) &&
               std::isfinite(y2) && x1 < x2 && y1 < y2;
    }

    static std::optional<BoundingBox> try_make(double x1, double y1, double x2, double y2) {
        if (!valid_coords(x1, y1, x2, y2)) return std::nullopt;
        return BoundingBox(x1, y1, x2, y2);
    }

    double width() const { return x2 - x1; }
    double height() const { return y2 - y1; }
    double area() const { return width() * height(); }

    bool operator==(const BoundingBox&) const = default;
};

/// Intersection over union; 0 when disjoint, 1 iff coordinate-wise equal.
inline double iou(const BoundingBox& a, const BoundingBox& b) {
    const double ix = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
    if (ix <= 0.0) return 0.0;
    const double iy = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
    if (iy <= 0.0) return 0.0;
    const double inter = ix * iy;
    return inter / (a.area() + b.area() - inter);
}

/// One scored, classed box on one frame of one video. Scores follow the
/// SVM convention: unbounded, higher = more confident.
struct Detection {
    std::string video_id;
    int frame = 0;
    int class_id = 0;
    double score = 0.0;
    BoundingBox box;
};

struct GroundTruthObject {
    std::string video_id;
    int frame = 0;
    int class_id = 0;
    int instance_id = 0;  // identity of the object across frames
    BoundingBox box;
};

/// Greedy non-maximum suppression over detections of one frame and class.
/// Output sorted by score descending; equal scores keep input order.
inline std::vector<Detection> nms(const std::vector<Detection>& dets, double overlap_thresh) {
    if (!(overlap_thresh >= 0.0 && overlap_thresh <= 1.0))
        throw std::invalid_argument("nms overlap threshold must lie in [0,1]");

    std::vector<size_t> order(dets.size());
    std::iota(order.begin(), order.end(), size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](size_t a, size_t b) { return dets[a].score > dets[b].score; });

    std::vector<bool> suppressed(dets.size(), false);
    std::vector<Detection> kept;
    for (size_t i = 0; i < order.size(); ++i) {
        if (suppressed[order[i]]) continue;
        const Detection& top = dets[order[i]];
        kept.push_back(top);
        for (size_t j = i + 1; j < order.size(); ++j) {
            if (suppressed[order[j]]) continue;
            if (iou(top.box, dets[order[j]].box) >= overlap_thresh) suppressed[order[j]] = true;
        }
    }
    return kept;
}

/// Clips a box to [0,width]x[0,height], or nullopt if nothing is left.
inline std::optional<BoundingBox> try_clamp_box(const BoundingBox& box, double width,
                                                double height) {
    return BoundingBox::try_make(std::clamp(box.x1, 0.0, width), std::clamp(box.y1, 0.0, height),
                                 std::clamp(box.x2, 0.0, width), std::clamp(box.y2, 0.0, height));
}

inline BoundingBox clamp_box(const BoundingBox& box, double width, double height) {
    if (!(width > 0.0) || !(height > 0.0))
        throw std::invalid_argument("clamp_box: frame dimensions must be positive");
    auto clipped = try_clamp_box(box, width, height);
    if (!clipped)
        throw std::invalid_argument("clamp_box: box lies fully outside the frame");
    return *clipped;
}

/// Translates a box so it fits inside [0,width]x[0,height], clipping only
/// when the box is larger than the frame.
inline BoundingBox shift_box_inside(const BoundingBox& box, double width, double height) {
    double dx = 0.0, dy = 0.0;
    if (box.x1 < 0.0) dx = -box.x1;
    else if (box.x2 > width) dx = width - box.x2;
    if (box.y1 < 0.0) dy = -box.y1;
    else if (box.y2 > height) dy = height - box.y2;
    return clamp_box(BoundingBox(box.x1 + dx, box.y1 + dy, box.x2 + dx, box.y2 + dy),
                     width, height);
}

}  // namespace tubedet
