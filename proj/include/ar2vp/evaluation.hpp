#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <vector>

#include "ar2vp/scene.hpp"
#include "ar2vp/tensor.hpp"

namespace ar2vp {

struct IouResult {
    double miou = 0.0;
    std::vector<double> per_class;      // IoU per class; meaningful only where present[k]
    std::vector<bool> present;          // class appears in prediction or ground truth
};

// Per-class intersection-over-union; classes absent from both prediction and
// ground truth are excluded from the mean.
inline IouResult miou(const std::vector<int>& pred_labels, const std::vector<int>& gt_labels,
                      int num_classes) {
    if (pred_labels.size() != gt_labels.size())
        throw std::invalid_argument("miou: label size mismatch");
    std::vector<std::uint64_t> inter(num_classes, 0), uni(num_classes, 0);
    for (std::size_t i = 0; i < pred_labels.size(); ++i) {
        const int p = pred_labels[i], g = gt_labels[i];
        if (p < 0 || p >= num_classes || g < 0 || g >= num_classes)
            throw std::invalid_argument("miou: label out of range");
        if (p == g) {
            ++inter[p];
            ++uni[p];
        } else {
            ++uni[p];
            ++uni[g];
        }
    }
    IouResult r;
    r.per_class.assign(num_classes, 0.0);
    r.present.assign(num_classes, false);
    int counted = 0;
    for (int k = 0; k < num_classes; ++k) {
        if (uni[k] == 0) continue;
        r.present[k] = true;
        r.per_class[k] = static_cast<double>(inter[k]) / static_cast<double>(uni[k]);
        r.miou += r.per_class[k];
        ++counted;
    }
    if (counted > 0) r.miou /= counted;
    return r;
}

// Dataset-level IoU: intersection and union counts pooled over many frames
// before the per-class ratio is taken.
struct IouAccumulator {
    int num_classes;
    std::vector<std::uint64_t> inter, uni;

    explicit IouAccumulator(int k) : num_classes(k), inter(k, 0), uni(k, 0) {}

    void add(const std::vector<int>& pred_labels, const std::vector<int>& gt_labels) {
        if (pred_labels.size() != gt_labels.size())
            throw std::invalid_argument("IouAccumulator: label size mismatch");
        for (std::size_t i = 0; i < pred_labels.size(); ++i) {
            const int p = pred_labels[i], g = gt_labels[i];
            if (p == g) {
                ++inter[p];
                ++uni[p];
            } else {
                ++uni[p];
                ++uni[g];
            }
        }
    }

    double value() const {
        double sum = 0.0;
        int counted = 0;
        for (int k = 0; k < num_classes; ++k) {
            if (uni[k] == 0) continue;
            sum += static_cast<double>(inter[k]) / static_cast<double>(uni[k]);
            ++counted;
        }
        return counted > 0 ? sum / counted : 0.0;
    }
};

struct ScoredBox {
    GtBox box;
    double score = 0.0;
};

inline double box_iou(const GtBox& a, const GtBox& b) {
    const double ix = std::max(0.0, std::min(a.max_x, b.max_x) - std::max(a.min_x, b.min_x));
    const double iy = std::max(0.0, std::min(a.max_y, b.max_y) - std::max(a.min_y, b.min_y));
    const double inter = ix * iy;
    const double uni = a.w() * a.h() + b.w() * b.h() - inter;
    return uni > 0.0 ? inter / uni : 0.0;
}

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// Turns a detection map into scored boxes: cells with confident objectness
// emit one box from their offsets, then greedy same-class NMS at IoU 0.5.
inline std::vector<ScoredBox> decode_detections(const Tensor3& det_map, double objectness_threshold,
                                                double nms_iou = 0.5) {
    if (det_map.c != 5) throw std::invalid_argument("decode_detections: expected 5 channels");
    std::vector<ScoredBox> candidates;
    for (int r = 0; r < det_map.h; ++r)
        for (int c = 0; c < det_map.w; ++c) {
            const double score = sigmoid(det_map.at(r, c, 0));
            if (score <= objectness_threshold) continue;
            const double cx = c + 0.5 + det_map.at(r, c, 1);
            const double cy = r + 0.5 + det_map.at(r, c, 2);
            const double bw = std::max(det_map.at(r, c, 3), 0.0);
            const double bh = std::max(det_map.at(r, c, 4), 0.0);
            ScoredBox sb;
            sb.box.cls = static_cast<int>(EntityClass::vehicle);
            sb.box.min_x = cx - bw / 2;
            sb.box.max_x = cx + bw / 2;
            sb.box.min_y = cy - bh / 2;
            sb.box.max_y = cy + bh / 2;
            sb.score = score;
            candidates.push_back(sb);
        }
    std::stable_sort(candidates.begin(), candidates.end(),
                     [](const ScoredBox& a, const ScoredBox& b) { return a.score > b.score; });
    std::vector<ScoredBox> kept;
    for (const auto& cand : candidates) {
        bool suppressed = false;
        for (const auto& k : kept)
            if (k.box.cls == cand.box.cls && box_iou(k.box, cand.box) > nms_iou) {
                suppressed = true;
                break;
            }
        if (!suppressed) kept.push_back(cand);
    }
    return kept;
}

// Greedy score-descending matching, one ground truth matched at most once;
// AP is the area under the precision-recall curve with all-points
// interpolation. Empty GT: 1 with no predictions, 0 otherwise.
inline double average_precision(const std::vector<ScoredBox>& pred_boxes,
                                const std::vector<GtBox>& gt_boxes, double iou_threshold) {
    if (gt_boxes.empty()) return pred_boxes.empty() ? 1.0 : 0.0;
    if (pred_boxes.empty()) return 0.0;

    std::vector<std::size_t> order(pred_boxes.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return pred_boxes[a].score > pred_boxes[b].score;
    });

    std::vector<bool> matched(gt_boxes.size(), false);
    std::vector<int> tp(order.size(), 0);
    for (std::size_t rank = 0; rank < order.size(); ++rank) {
        const ScoredBox& p = pred_boxes[order[rank]];
        double best_iou = 0.0;
        std::size_t best_gt = gt_boxes.size();
        for (std::size_t g = 0; g < gt_boxes.size(); ++g) {
            if (matched[g] || gt_boxes[g].cls != p.box.cls) continue;
            const double iou = box_iou(p.box, gt_boxes[g]);
            if (iou > best_iou) {
                best_iou = iou;
                best_gt = g;
            }
        }
        if (best_gt < gt_boxes.size() && best_iou >= iou_threshold) {
            matched[best_gt] = true;
            tp[rank] = 1;
        }
    }

    const double num_gt = static_cast<double>(gt_boxes.size());
    std::vector<double> precision(order.size()), recall(order.size());
    int cum_tp = 0;
    for (std::size_t i = 0; i < order.size(); ++i) {
        cum_tp += tp[i];
        precision[i] = static_cast<double>(cum_tp) / static_cast<double>(i + 1);
        recall[i] = static_cast<double>(cum_tp) / num_gt;
    }
    // precision envelope, then sum over recall increments
    for (std::size_t i = order.size(); i-- > 1;)
        precision[i - 1] = std::max(precision[i - 1], precision[i]);
    double ap = 0.0;
    double prev_recall = 0.0;
    for (std::size_t i = 0; i < order.size(); ++i) {
        ap += (recall[i] - prev_recall) * precision[i];
        prev_recall = recall[i];
    }
    return ap;
}

// Continual-learning forgetting: mean over earlier scenes of the best metric
// reached on that scene before the final step minus the final metric.
// history[t][s] is the metric on scene s after learning scene t; entries are
// required for s <= t only (lower-triangular-complete).
inline double forget(const std::vector<std::vector<double>>& history) {
    const std::size_t t_final = history.size();
    if (t_final < 2) throw std::invalid_argument("forget: need at least two learned scenes");
    const std::vector<double>& final_row = history.back();
    double sum = 0.0;
    for (std::size_t s = 0; s + 1 < t_final; ++s) {
        double best = -std::numeric_limits<double>::infinity();
        for (std::size_t t = s; t + 1 < t_final; ++t) {
            if (s >= history[t].size())
                throw std::invalid_argument("forget: history matrix missing entry");
            best = std::max(best, history[t][s]);
        }
        if (s >= final_row.size()) throw std::invalid_argument("forget: final row incomplete");
        sum += best - final_row[s];
    }
    return sum / static_cast<double>(t_final - 1);
}

}  // namespace ar2vp
