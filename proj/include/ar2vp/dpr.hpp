#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include "ar2vp/geometry.hpp"
#include "ar2vp/model.hpp"
#include "ar2vp/tensor.hpp"

namespace ar2vp {

// Directed collaborative graph over N vehicles. edge_weights[j][i] is the
// weight of the edge j -> i; each destination column sums to 1. rsu_weight
// is the fixed 1/N RSU mixing weight.
struct CollabGraph {
    int num_vehicles = 0;
    std::vector<double> distances;
    std::vector<std::vector<double>> edge_weights;
    double rsu_weight = 0.0;

    double weight(int from, int to) const { return edge_weights[from][to]; }
};

enum class DprSelf { include, exclude };
enum class DprDistance { raw, inverse };

struct DprOptions {
    DprSelf self = DprSelf::include;
    DprDistance distance = DprDistance::raw;
};

// Flattened-map cosine similarity in [-1, 1]; zero-norm inputs yield 0.
inline double cosine_similarity(const Tensor3& a, const Tensor3& b) {
    a.require_same_shape(b, "cosine_similarity");
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < a.v.size(); ++i) {
        dot += a.v[i] * b.v[i];
        na += a.v[i] * a.v[i];
        nb += b.v[i] * b.v[i];
    }
    if (na == 0.0 || nb == 0.0) return 0.0;
    return dot / (std::sqrt(na) * std::sqrt(nb));
}

// Edge weights toward each destination i: distance-scaled cosine similarity,
// negative terms clamped to zero, normalized over the contributing sources.
// The self term uses cos = 1. All-zero columns fall back to uniform weights.
inline CollabGraph build_graph(const std::vector<FeatureMap>& features,
                               const std::vector<double>& distances,
                               const DprOptions& opt = {}) {
    const int n = static_cast<int>(features.size());
    if (n == 0) throw std::invalid_argument("build_graph: empty feature list");
    if (distances.size() != features.size())
        throw std::invalid_argument("build_graph: feature/distance count mismatch");
    for (double d : distances)
        if (!(d >= 0.0)) throw std::invalid_argument("build_graph: negative distance");

    CollabGraph g;
    g.num_vehicles = n;
    g.distances = distances;
    g.rsu_weight = 1.0 / n;
    g.edge_weights.assign(n, std::vector<double>(n, 0.0));

    for (int i = 0; i < n; ++i) {
        std::vector<double> term(n, 0.0);
        double denom = 0.0;
        for (int j = 0; j < n; ++j) {
            if (j == i && opt.self == DprSelf::exclude) continue;
            const double cos = (j == i) ? 1.0 : cosine_similarity(features[i], features[j]);
            const double dw = opt.distance == DprDistance::raw
                                  ? distances[j]
                                  : 1.0 / std::max(distances[j], 1e-9);
            term[j] = std::max(0.0, dw * cos);
            denom += term[j];
        }
        if (denom > 0.0) {
            for (int j = 0; j < n; ++j) g.edge_weights[j][i] = term[j] / denom;
        } else {
            // uniform fallback over the contributing set
            if (opt.self == DprSelf::exclude && n > 1) {
                for (int j = 0; j < n; ++j)
                    if (j != i) g.edge_weights[j][i] = 1.0 / (n - 1);
            } else {
                for (int j = 0; j < n; ++j) g.edge_weights[j][i] = 1.0 / n;
            }
        }
    }
    return g;
}

// M_hat_i = sum_j xi[j][i] * M_j + lambda_g * M_0. Inputs must already be in
// the destination's frame.
inline FeatureMap aggregate(const CollabGraph& g, const std::vector<FeatureMap>& features,
                            const FeatureMap& rsu_feature, int dest) {
    if (dest < 0 || dest >= g.num_vehicles)
        throw std::out_of_range("aggregate: destination index out of range");
    if (static_cast<int>(features.size()) != g.num_vehicles)
        throw std::invalid_argument("aggregate: graph built for a different feature count");
    FeatureMap out(features[dest].h, features[dest].w, features[dest].c, features[dest].frame);
    for (int j = 0; j < g.num_vehicles; ++j) {
        features[j].require_same_shape(out, "aggregate");
        out.axpy(g.edge_weights[j][dest], features[j]);
    }
    rsu_feature.require_same_shape(out, "aggregate(rsu)");
    out.axpy(g.rsu_weight, rsu_feature);
    return out;
}

// Gradient of aggregate w.r.t. one vehicle input: xi[j][dest] * upstream
// (edge weights are constants during backpropagation).
inline Tensor3 aggregate_input_grad(const CollabGraph& g, const Tensor3& upstream, int j, int dest) {
    Tensor3 dx = upstream;
    dx *= g.edge_weights[j][dest];
    return dx;
}

// --- frame warping ----------------------------------------------------------
// Resamples a map from its source agent frame into a destination frame by
// nearest-neighbor lookup; cells that land outside the source grid are zero.
// Piecewise-constant in the poses, so feature gradients pass through exactly.

struct WarpPlan {
    int h = 0, w = 0;
    std::vector<int> src_index;  // destination cell -> source cell, -1 when out of range

    bool is_identity() const {
        for (std::size_t i = 0; i < src_index.size(); ++i)
            if (src_index[i] != static_cast<int>(i)) return false;
        return true;
    }
};

inline WarpPlan plan_warp(const Pose& src, const Pose& dst, int h, int w, double cell_size) {
    WarpPlan plan;
    plan.h = h;
    plan.w = w;
    plan.src_index.resize(static_cast<std::size_t>(h) * w, -1);
    for (int r = 0; r < h; ++r) {
        for (int c = 0; c < w; ++c) {
            const Vec2 dst_local{(c - w / 2 + 0.5) * cell_size, (r - h / 2 + 0.5) * cell_size};
            const Vec2 src_local = frame_to_frame(dst, src, dst_local);
            const int sc = static_cast<int>(std::llround(src_local.x / cell_size + w / 2.0 - 0.5));
            const int sr = static_cast<int>(std::llround(src_local.y / cell_size + h / 2.0 - 0.5));
            if (sr >= 0 && sr < h && sc >= 0 && sc < w)
                plan.src_index[static_cast<std::size_t>(r) * w + c] = sr * w + sc;
        }
    }
    return plan;
}

inline FeatureMap warp_apply(const WarpPlan& plan, const FeatureMap& src, int dest_frame) {
    if (src.h != plan.h || src.w != plan.w)
        throw std::invalid_argument("warp_apply: plan built for a different grid size");
    FeatureMap out(plan.h, plan.w, src.c, dest_frame);
    for (std::size_t cell = 0; cell < plan.src_index.size(); ++cell) {
        const int s = plan.src_index[cell];
        if (s < 0) continue;
        for (int ch = 0; ch < src.c; ++ch)
            out.v[cell * src.c + ch] = src.v[static_cast<std::size_t>(s) * src.c + ch];
    }
    return out;
}

// Adjoint of warp_apply: scatter-adds the upstream gradient back onto the
// source cells.
inline void warp_backward(const WarpPlan& plan, const Tensor3& upstream, Tensor3& src_grad) {
    for (std::size_t cell = 0; cell < plan.src_index.size(); ++cell) {
        const int s = plan.src_index[cell];
        if (s < 0) continue;
        for (int ch = 0; ch < upstream.c; ++ch)
            src_grad.v[static_cast<std::size_t>(s) * upstream.c + ch] += upstream.v[cell * upstream.c + ch];
    }
}

}  // namespace ar2vp
