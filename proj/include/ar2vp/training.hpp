#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "ar2vp/channel.hpp"
#include "ar2vp/dpr.hpp"
#include "ar2vp/evaluation.hpp"
#include "ar2vp/geometry.hpp"
#include "ar2vp/model.hpp"
#include "ar2vp/r2vpc.hpp"
#include "ar2vp/replay.hpp"
#include "ar2vp/rng.hpp"
#include "ar2vp/scene.hpp"
#include "ar2vp/tensor.hpp"

namespace ar2vp {

struct LossConfig {
    double eta = 0.5;
    double sigma = 1.0;
    double learning_rate = 0.05;
    int batch_size = 4;
    int epochs_per_scene = 30;

    void validate() const {
        if (!(eta > 0.0) || !(sigma > 0.0) || !(learning_rate > 0.0))
            throw std::invalid_argument("loss config: eta, sigma, learning_rate must be positive");
        if (batch_size < 1 || epochs_per_scene < 0)
            throw std::invalid_argument("loss config: bad batch_size or epochs_per_scene");
    }
};

enum class TrainTask { seg, det, joint };

// --- losses ------------------------------------------------------------------

// Mean per-cell categorical cross-entropy with softmax; probabilities are
// clamped to [1e-12, 1] before the log.
inline double seg_loss(const Tensor3& logits, const std::vector<int>& labels) {
    const std::size_t cells = static_cast<std::size_t>(logits.h) * logits.w;
    if (labels.size() != cells) throw std::invalid_argument("seg_loss: label count mismatch");
    double total = 0.0;
    for (std::size_t cell = 0; cell < cells; ++cell) {
        const double* z = &logits.v[cell * logits.c];
        const int y = labels[cell];
        if (y < 0 || y >= logits.c) throw std::invalid_argument("seg_loss: label out of range");
        double zmax = z[0];
        for (int k = 1; k < logits.c; ++k) zmax = std::max(zmax, z[k]);
        double denom = 0.0;
        for (int k = 0; k < logits.c; ++k) denom += std::exp(z[k] - zmax);
        const double p = std::clamp(std::exp(z[y] - zmax) / denom, 1e-12, 1.0);
        total -= std::log(p);
    }
    return total / static_cast<double>(cells);
}

// d(seg_loss)/d(logits) = (softmax - onehot) / cells, scaled by `scale`.
inline void seg_loss_backward(const Tensor3& logits, const std::vector<int>& labels, double scale,
                              Tensor3& dlogits) {
    const std::size_t cells = static_cast<std::size_t>(logits.h) * logits.w;
    const double cell_scale = scale / static_cast<double>(cells);
    for (std::size_t cell = 0; cell < cells; ++cell) {
        const double* z = &logits.v[cell * logits.c];
        double* dz = &dlogits.v[cell * logits.c];
        double zmax = z[0];
        for (int k = 1; k < logits.c; ++k) zmax = std::max(zmax, z[k]);
        double denom = 0.0;
        for (int k = 0; k < logits.c; ++k) denom += std::exp(z[k] - zmax);
        for (int k = 0; k < logits.c; ++k) {
            const double p = std::exp(z[k] - zmax) / denom;
            dz[k] += cell_scale * (p - (k == labels[cell] ? 1.0 : 0.0));
        }
    }
}

// Per-cell detection targets rendered from ground-truth boxes. Objectness is
// 1 inside any box; offset channels are defined only inside boxes (cells in
// several boxes take the nearest center, ties to the smaller box index).
struct DetTargets {
    Tensor3 target;          // H x W x 5
    std::vector<bool> inside;  // per cell
    std::size_t inside_count = 0;

    std::size_t term_count() const {
        return static_cast<std::size_t>(target.h) * target.w + 4 * inside_count;
    }
};

inline DetTargets render_det_targets(const GroundTruth& gt) {
    DetTargets out;
    out.target = Tensor3(gt.h, gt.w, 5);
    out.inside.assign(static_cast<std::size_t>(gt.h) * gt.w, false);
    for (int r = 0; r < gt.h; ++r)
        for (int c = 0; c < gt.w; ++c) {
            const double cx = c + 0.5, cy = r + 0.5;
            int best = -1;
            double best_d2 = 0.0;
            for (std::size_t b = 0; b < gt.boxes.size(); ++b) {
                const GtBox& box = gt.boxes[b];
                if (cx < box.min_x || cx >= box.max_x || cy < box.min_y || cy >= box.max_y) continue;
                const double dx = box.cx() - cx, dy = box.cy() - cy;
                const double d2 = dx * dx + dy * dy;
                if (best < 0 || d2 < best_d2) {
                    best = static_cast<int>(b);
                    best_d2 = d2;
                }
            }
            if (best < 0) continue;
            const GtBox& box = gt.boxes[static_cast<std::size_t>(best)];
            const std::size_t cell = static_cast<std::size_t>(r) * gt.w + c;
            out.inside[cell] = true;
            ++out.inside_count;
            out.target.at(r, c, 0) = 1.0;
            out.target.at(r, c, 1) = box.cx() - cx;
            out.target.at(r, c, 2) = box.cy() - cy;
            out.target.at(r, c, 3) = box.w();
            out.target.at(r, c, 4) = box.h();
        }
    return out;
}

// eta / sigma^2 times the mean squared residual over the counted terms:
// objectness everywhere, offsets only inside boxes.
inline double det_loss(const Tensor3& pred, const DetTargets& tgt, double sigma, double eta) {
    pred.require_same_shape(tgt.target, "det_loss");
    const std::size_t cells = static_cast<std::size_t>(pred.h) * pred.w;
    double sum = 0.0;
    for (std::size_t cell = 0; cell < cells; ++cell) {
        const double* p = &pred.v[cell * 5];
        const double* t = &tgt.target.v[cell * 5];
        const double d0 = p[0] - t[0];
        sum += d0 * d0;
        if (tgt.inside[cell])
            for (int k = 1; k < 5; ++k) {
                const double d = p[k] - t[k];
                sum += d * d;
            }
    }
    return eta / (sigma * sigma) * sum / static_cast<double>(tgt.term_count());
}

inline void det_loss_backward(const Tensor3& pred, const DetTargets& tgt, double sigma, double eta,
                              double scale, Tensor3& dpred) {
    const std::size_t cells = static_cast<std::size_t>(pred.h) * pred.w;
    const double s = scale * eta / (sigma * sigma) * 2.0 / static_cast<double>(tgt.term_count());
    for (std::size_t cell = 0; cell < cells; ++cell) {
        const double* p = &pred.v[cell * 5];
        const double* t = &tgt.target.v[cell * 5];
        double* d = &dpred.v[cell * 5];
        d[0] += s * (p[0] - t[0]);
        if (tgt.inside[cell])
            for (int k = 1; k < 5; ++k) d[k] += s * (p[k] - t[k]);
    }
}

// --- pipeline ----------------------------------------------------------------

struct PipelineFlags {
    bool rsu_on = true;
    bool graph_on = true;
    bool compensator_on = true;
    int compression_n = 1;  // 1 = raw features on the wire, no autoencoder
    DprOptions dpr;
    double comp_threshold = 0.5;  // lambda_c
    bool model_at_rsu = false;    // hub-and-spoke message accounting
    WirePrecision wire = WirePrecision::f64;

    bool compression_active() const { return compression_n > 1; }
};

// Graph weights and Pearson gates recorded from a forward pass. Re-running
// the pipeline with these pinned makes the smooth part of the computation
// finite-difference checkable, matching their stop-gradient treatment.
struct FrozenDecisions {
    std::vector<CollabGraph> graphs;
    std::vector<double> pearson;
};

struct VehicleCache {
    std::vector<FeatureMap> warped;  // vehicle sources in this destination's frame
    FeatureMap warped_rsu;           // encoded-level RSU map (graph term)
    CollabGraph graph;
    FeatureMap aggregated;  // M_hat_i
    Tensor3 dec_pre;
    FeatureMap decoded;      // M_i^d
    FeatureMap comp_source;  // decoded-level compensation source, this frame
    bool comp_available = false;
    double pearson = 1.0;
    double coeff = 0.0;
    FeatureMap compensated;  // M_i^c
    Tensor3 seg_logits;
    Tensor3 det_map;
};

struct PipelineCache {
    int n = 0;  // vehicles
    std::vector<Tensor3> pooled;              // per agent 0..N (0 = RSU)
    std::vector<Tensor3> enc_pre;
    std::vector<FeatureMap> encoded;          // M_a
    std::vector<FeatureMap> comp_out;         // compressed maps, when active
    std::vector<FeatureMap> transmitted;      // T_a as received on the far side
    std::vector<Tensor3> src_dec_pre;         // decoder pre-activation on T_a
    std::vector<FeatureMap> src_decoded;      // relu of the above, sender frame
    std::vector<bool> src_decoded_valid;
    std::vector<std::vector<WarpPlan>> plans;  // plans[dest_vehicle][agent]
    std::vector<VehicleCache> veh;
};

struct PipelineOutput {
    std::vector<Tensor3> seg_logits;  // per vehicle
    std::vector<Tensor3> det_maps;
    ChannelUsage usage;
};

// Full AR2VP forward pass over one frame: encode, transmit (optionally
// compressed), warp into each destination frame, graph-fuse, decode,
// Pearson-gated compensation, task heads. Pure given (frame, params, flags);
// channel traffic is returned as a ledger delta.
inline PipelineOutput forward_pipeline(const Frame& frame, const ModelParams& params,
                                       const PipelineFlags& flags, PipelineCache* cache_out = nullptr,
                                       const FrozenDecisions* frozen = nullptr) {
    const int n = frame.num_vehicles();
    if (n < 1) throw std::invalid_argument("forward_pipeline: frame has no vehicles");
    const int agents = n + 1;

    PipelineCache local_cache;
    PipelineCache& cc = cache_out ? *cache_out : local_cache;
    cc = PipelineCache{};
    cc.n = n;

    const auto& grid_of = [&](int a) -> const BevGrid& {
        return a == 0 ? frame.rsu_grid : frame.vehicle_grids[a - 1];
    };
    const auto& pose_of = [&](int a) -> const Pose& {
        return a == 0 ? frame.rsu_pose : frame.vehicle_poses[a - 1];
    };
    const int gh = frame.rsu_grid.data.h, gw = frame.rsu_grid.data.w;
    const double cell = frame.rsu_grid.cell_size;

    // encode every agent with the shared encoder
    cc.pooled.resize(agents);
    cc.enc_pre.resize(agents);
    cc.encoded.resize(agents);
    for (int a = 0; a < agents; ++a) {
        cc.pooled[a] = preprocess_grid(grid_of(a).data);
        cc.enc_pre[a] = affine_apply(cc.pooled[a], params.encoder);
        cc.encoded[a] = FeatureMap(relu(cc.enc_pre[a]), a);
    }

    // transmitted features: channel autoencoder plus wire precision
    const PayloadKind kind =
        flags.compression_active() ? PayloadKind::compressed_feature : PayloadKind::feature;
    cc.comp_out.resize(agents);
    cc.transmitted.resize(agents);
    std::vector<Message> feature_msgs(agents);
    for (int a = 0; a < agents; ++a) {
        FeatureMap on_wire;
        if (flags.compression_active()) {
            cc.comp_out[a] = compress(cc.encoded[a], params, flags.compression_n);
            on_wire = cc.comp_out[a];
        } else {
            on_wire = cc.encoded[a];
        }
        feature_msgs[a] = serialize_feature(on_wire, a, kind, flags.wire);
        FeatureMap received = deserialize_feature(feature_msgs[a]);
        received.frame = a;
        cc.transmitted[a] = flags.compression_active()
                                ? FeatureMap(decompress(received, params, flags.compression_n))
                                : std::move(received);
        cc.transmitted[a].frame = a;
    }

    // warp plans between every source agent and destination vehicle
    cc.plans.assign(n, std::vector<WarpPlan>(agents));
    for (int i = 0; i < n; ++i)
        for (int a = 0; a < agents; ++a)
            cc.plans[i][a] = plan_warp(pose_of(a), pose_of(i + 1), gh, gw, cell);

    // decoded transmitted maps, needed by the compensator
    cc.src_dec_pre.resize(agents);
    cc.src_decoded.resize(agents);
    cc.src_decoded_valid.assign(agents, false);
    auto ensure_src_decoded = [&](int a) {
        if (cc.src_decoded_valid[a]) return;
        cc.src_dec_pre[a] = affine_apply(cc.transmitted[a], params.decoder);
        cc.src_decoded[a] = FeatureMap(relu(cc.src_dec_pre[a]), a);
        cc.src_decoded_valid[a] = true;
    };

    PipelineOutput out;
    cc.veh.resize(n);
    for (int i = 0; i < n; ++i) {
        VehicleCache& vc = cc.veh[i];
        const int dest_frame = i + 1;

        vc.warped.resize(n);
        for (int j = 0; j < n; ++j)
            vc.warped[j] = (j == i) ? cc.encoded[dest_frame]
                                    : warp_apply(cc.plans[i][j + 1], cc.transmitted[j + 1], dest_frame);

        if (flags.graph_on) {
            const bool use_rsu = flags.rsu_on;
            vc.warped_rsu = use_rsu ? warp_apply(cc.plans[i][0], cc.transmitted[0], dest_frame)
                                    : FeatureMap(gh, gw, params.cfg.feature_channels, dest_frame);
            std::vector<double> dists(n);
            for (int j = 0; j < n; ++j)
                dists[j] = rsu_vehicle_distance(frame.rsu_pose, frame.vehicle_poses[j]);
            vc.graph = frozen ? frozen->graphs[i] : build_graph(vc.warped, dists, flags.dpr);
            vc.aggregated = aggregate(vc.graph, vc.warped, vc.warped_rsu, i);
        } else {
            vc.aggregated = cc.encoded[dest_frame];
        }

        vc.dec_pre = affine_apply(vc.aggregated, params.decoder);
        vc.decoded = FeatureMap(relu(vc.dec_pre), dest_frame);

        vc.compensated = vc.decoded;
        if (flags.compensator_on) {
            if (flags.rsu_on) {
                ensure_src_decoded(0);
                vc.comp_source = warp_apply(cc.plans[i][0], cc.src_decoded[0], dest_frame);
                vc.comp_available = true;
            } else if (n >= 2) {
                // no RSU: other vehicles stand in as the compensation source
                vc.comp_source = FeatureMap(gh, gw, params.cfg.decoded_channels, dest_frame);
                for (int j = 0; j < n; ++j) {
                    if (j == i) continue;
                    ensure_src_decoded(j + 1);
                    FeatureMap w = warp_apply(cc.plans[i][j + 1], cc.src_decoded[j + 1], dest_frame);
                    vc.comp_source.axpy(1.0 / (n - 1), w);
                }
                vc.comp_available = true;
            }
            if (vc.comp_available) {
                vc.pearson = frozen ? frozen->pearson[i]
                                    : similarity_ratio(flatten(vc.comp_source), flatten(vc.decoded));
                const CompensationConfig ccfg{flags.comp_threshold};
                vc.coeff = compensation_coefficient(vc.pearson, ccfg);
                vc.compensated = compensate(vc.decoded, vc.comp_source, vc.pearson, ccfg);
            }
        }

        vc.seg_logits = seg_head(vc.compensated, params);
        vc.det_map = det_head(vc.compensated, params);
        out.seg_logits.push_back(vc.seg_logits);
        out.det_maps.push_back(vc.det_map);
    }

    // channel accounting; the ledger is charged once per directed send
    auto pose_msg = [&](int a) { return serialize_pose(pose_of(a), a); };
    if (!flags.model_at_rsu) {
        // every vehicle sends to each other vehicle and to the RSU; the RSU
        // sends to every vehicle
        for (int a = 1; a < agents; ++a)
            for (int b = 0; b < agents; ++b) {
                if (b == a) continue;
                out.usage.record(feature_msgs[a]);
                out.usage.record(pose_msg(a));
            }
        for (int i = 0; i < n; ++i) {
            out.usage.record(feature_msgs[0]);
            out.usage.record(pose_msg(0));
        }
    } else {
        // vehicles upload to the RSU; the RSU answers each vehicle with its
        // compensated map
        for (int a = 1; a < agents; ++a) {
            out.usage.record(feature_msgs[a]);
            out.usage.record(pose_msg(a));
        }
        for (int i = 0; i < n; ++i) {
            const Message reply =
                serialize_feature(cc.veh[i].compensated, 0, PayloadKind::feature, flags.wire);
            out.usage.record(reply);
        }
    }
    return out;
}

inline FrozenDecisions record_decisions(const PipelineCache& cc) {
    FrozenDecisions fd;
    for (const auto& vc : cc.veh) {
        fd.graphs.push_back(vc.graph);
        fd.pearson.push_back(vc.pearson);
    }
    return fd;
}

// Backward through the full pipeline. dseg/ddet are upstream gradients on the
// per-vehicle head outputs; parameter gradients are accumulated into grads.
// Graph weights, Pearson gates and warp indices are constants.
inline void backward_pipeline(const Frame& frame, const ModelParams& params,
                              const PipelineFlags& flags, const PipelineCache& cc,
                              const std::vector<Tensor3>& dseg, const std::vector<Tensor3>& ddet,
                              ModelGrads& grads) {
    const int n = cc.n;
    const int agents = n + 1;
    const int gh = frame.rsu_grid.data.h, gw = frame.rsu_grid.data.w;

    std::vector<Tensor3> d_encoded(agents), d_transmitted(agents), d_src_decoded(agents);
    for (int a = 0; a < agents; ++a) {
        d_encoded[a] = Tensor3(gh, gw, params.cfg.feature_channels);
        d_transmitted[a] = Tensor3(gh, gw, params.cfg.feature_channels);
        d_src_decoded[a] = Tensor3(gh, gw, params.cfg.decoded_channels);
    }

    for (int i = 0; i < n; ++i) {
        const VehicleCache& vc = cc.veh[i];

        Tensor3 d_comp(gh, gw, params.cfg.decoded_channels);
        {
            Tensor3 dx;
            affine_backward(vc.compensated, dseg[i], params.seg_head, grads.seg_head, &dx);
            d_comp += dx;
            affine_backward(vc.compensated, ddet[i], params.det_head, grads.det_head, &dx);
            d_comp += dx;
        }

        // compensation: M_c = M_d + coeff * source, coeff constant
        const Tensor3& d_decoded = d_comp;
        if (vc.coeff > 0.0) {
            if (flags.rsu_on) {
                Tensor3 scaled = d_comp;
                scaled *= vc.coeff;
                warp_backward(cc.plans[i][0], scaled, d_src_decoded[0]);
            } else {
                Tensor3 scaled = d_comp;
                scaled *= vc.coeff / (n - 1);
                for (int j = 0; j < n; ++j)
                    if (j != i) warp_backward(cc.plans[i][j + 1], scaled, d_src_decoded[j + 1]);
            }
        }

        Tensor3 d_agg;
        {
            const Tensor3 d_dec_pre = relu_backward(vc.dec_pre, d_decoded);
            affine_backward(vc.aggregated, d_dec_pre, params.decoder, grads.decoder, &d_agg);
        }

        if (flags.graph_on) {
            for (int j = 0; j < n; ++j) {
                Tensor3 d_w = d_agg;
                d_w *= vc.graph.edge_weights[j][i];
                if (j == i)
                    d_encoded[i + 1] += d_w;
                else
                    warp_backward(cc.plans[i][j + 1], d_w, d_transmitted[j + 1]);
            }
            if (flags.rsu_on) {
                Tensor3 d_r = d_agg;
                d_r *= vc.graph.rsu_weight;
                warp_backward(cc.plans[i][0], d_r, d_transmitted[0]);
            }
        } else {
            d_encoded[i + 1] += d_agg;
        }
    }

    // decoded-from-transmitted maps feed the compensator
    for (int a = 0; a < agents; ++a) {
        if (!cc.src_decoded_valid[a]) continue;
        bool nonzero = false;
        for (double x : d_src_decoded[a].v)
            if (x != 0.0) {
                nonzero = true;
                break;
            }
        if (!nonzero) continue;
        const Tensor3 d_pre = relu_backward(cc.src_dec_pre[a], d_src_decoded[a]);
        Tensor3 d_t;
        affine_backward(cc.transmitted[a], d_pre, params.decoder, grads.decoder, &d_t);
        d_transmitted[a] += d_t;
    }

    // back through the channel autoencoder (wire quantization passes through)
    for (int a = 0; a < agents; ++a) {
        if (flags.compression_active()) {
            Tensor3 d_comp_out;
            affine_backward(cc.comp_out[a], d_transmitted[a], params.decompressor,
                            grads.decompressor, &d_comp_out);
            Tensor3 d_enc;
            affine_backward(cc.encoded[a], d_comp_out, params.compressor, grads.compressor, &d_enc);
            d_encoded[a] += d_enc;
        } else {
            d_encoded[a] += d_transmitted[a];
        }
    }

    for (int a = 0; a < agents; ++a) {
        const Tensor3 d_pre = relu_backward(cc.enc_pre[a], d_encoded[a]);
        affine_backward(cc.pooled[a], d_pre, params.encoder, grads.encoder, nullptr);
    }
}

// --- batch loss --------------------------------------------------------------

namespace detail {

struct FrameWork {
    double loss = 0.0;
    ChannelUsage usage;
    std::unique_ptr<ModelGrads> grads;
};

// forward + losses + backward for one frame; gradient scale distributes the
// group mean over its frames and vehicles
inline FrameWork process_frame(const Frame& f, const ModelParams& params,
                               const PipelineFlags& flags, const LossConfig& cfg, TrainTask task,
                               bool want_grads, double group_scale) {
    FrameWork work;
    PipelineCache cache;
    const PipelineOutput out = forward_pipeline(f, params, flags, &cache);
    work.usage = out.usage;
    const int nveh = f.num_vehicles();
    const double scale = group_scale / nveh;
    std::vector<Tensor3> dseg, ddet;
    for (int i = 0; i < nveh; ++i) {
        const GroundTruth& gt = f.vehicle_gts[i];
        Tensor3 ds(out.seg_logits[i].h, out.seg_logits[i].w, out.seg_logits[i].c);
        Tensor3 dd(out.det_maps[i].h, out.det_maps[i].w, out.det_maps[i].c);
        if (task != TrainTask::det) {
            work.loss += seg_loss(out.seg_logits[i], gt.seg_labels);
            if (want_grads) seg_loss_backward(out.seg_logits[i], gt.seg_labels, scale, ds);
        }
        if (task != TrainTask::seg) {
            const DetTargets tgt = render_det_targets(gt);
            work.loss += det_loss(out.det_maps[i], tgt, cfg.sigma, cfg.eta);
            if (want_grads) det_loss_backward(out.det_maps[i], tgt, cfg.sigma, cfg.eta, scale, dd);
        }
        dseg.push_back(std::move(ds));
        ddet.push_back(std::move(dd));
    }
    work.loss /= nveh;
    if (want_grads) {
        work.grads = std::make_unique<ModelGrads>(params);
        backward_pipeline(f, params, flags, cache, dseg, ddet, *work.grads);
    }
    return work;
}

}  // namespace detail

// Eq.-style overall loss: L = L_task(replay) + L_task(current), each term the
// mean frame loss of its group; a frame's loss is the mean over its vehicles.
// Gradients are accumulated into `grads` when non-null. Frames are processed
// in parallel worker threads; the reduction runs in frame order, so results
// are bit-identical for any thread count.
inline double total_loss(const std::vector<const Frame*>& current,
                         const std::vector<const Frame*>& replay, const ModelParams& params,
                         const PipelineFlags& flags, const LossConfig& cfg, TrainTask task,
                         ModelGrads* grads, ChannelUsage* usage = nullptr, int max_threads = 0) {
    cfg.validate();
    if (max_threads <= 0) {
        const unsigned hw = std::thread::hardware_concurrency();
        max_threads = hw == 0 ? 1 : static_cast<int>(std::min(hw, 4u));
    }

    auto group_loss = [&](const std::vector<const Frame*>& group) {
        if (group.empty()) return 0.0;
        const double group_scale = 1.0 / static_cast<double>(group.size());
        std::vector<detail::FrameWork> work(group.size());
        const int threads = std::min<int>(max_threads, static_cast<int>(group.size()));
        if (threads <= 1) {
            for (std::size_t k = 0; k < group.size(); ++k)
                work[k] = detail::process_frame(*group[k], params, flags, cfg, task,
                                                grads != nullptr, group_scale);
        } else {
            std::vector<std::thread> pool;
            std::vector<std::exception_ptr> errors(threads);
            for (int t = 0; t < threads; ++t) {
                pool.emplace_back([&, t]() {
                    try {
                        for (std::size_t k = t; k < group.size(); k += threads)
                            work[k] = detail::process_frame(*group[k], params, flags, cfg, task,
                                                            grads != nullptr, group_scale);
                    } catch (...) {
                        errors[t] = std::current_exception();
                    }
                });
            }
            for (auto& th : pool) th.join();
            for (const auto& err : errors)
                if (err) std::rethrow_exception(err);
        }
        double sum = 0.0;
        for (std::size_t k = 0; k < group.size(); ++k) {
            sum += work[k].loss;
            if (usage) *usage += work[k].usage;
            if (grads) grads->add(*work[k].grads);
        }
        return sum * group_scale;
    };
    return group_loss(replay) + group_loss(current);
}

// --- curriculum --------------------------------------------------------------

struct CurriculumConfig {
    ModelConfig model;
    LossConfig loss;
    PipelineFlags flags;
    RasterSettings raster;
    TrainTask task = TrainTask::joint;
    bool replay_on = true;
    int replay_mu = 20;
    int replay_capacity = 60;
    int replay_draw = 8;
    double objectness_threshold = 0.5;
    double nms_iou = 0.5;
    std::uint64_t master_seed = 1;
};

struct MetricsRow {
    int scene_idx = 0;
    int epoch = 0;
    int split_scene = 0;
    double miou = 0.0;
    double ap50 = 0.0;
    double ap70 = 0.0;
    double loss = 0.0;
    std::uint64_t cumulative_bytes = 0;
};

struct SceneEval {
    double miou = 0.0;
    double ap50 = 0.0;
    double ap70 = 0.0;
};

struct CurriculumResult {
    ModelParams params;  // final
    std::vector<ModelParams> checkpoints;
    std::vector<MetricsRow> rows;
    // history[t][s]: metric on scene s's test split after learning scene t
    std::vector<std::vector<double>> miou_history;
    std::vector<std::vector<double>> ap50_history;
    std::vector<std::vector<double>> ap70_history;
    BandwidthLedger ledger;
};

struct SceneFrames {
    std::vector<Frame> train;
    std::vector<Frame> test;
};

// Frames t % 4 == 3 form the test split; the rest train.
inline SceneFrames split_scene_frames(const Scenario& s, const RasterSettings& rs) {
    SceneFrames out;
    for (int t = 0; t < s.num_steps; ++t) {
        Frame f = render_frame(s, t, rs);
        if (t % 4 == 3)
            out.test.push_back(std::move(f));
        else
            out.train.push_back(std::move(f));
    }
    return out;
}

// Evaluates the model on a set of frames; detection boxes from different
// frame/vehicle pairs are kept apart by shifting each pair into its own
// disjoint coordinate block before the pooled AP computation.
inline SceneEval evaluate_frames(const std::vector<Frame>& frames, const ModelParams& params,
                                 const PipelineFlags& flags, double objectness_threshold,
                                 double nms_iou, ChannelUsage* usage = nullptr) {
    IouAccumulator iou(params.cfg.num_classes);
    std::vector<ScoredBox> all_preds;
    std::vector<GtBox> all_gts;
    double image_offset = 0.0;
    for (const Frame& f : frames) {
        const PipelineOutput out = forward_pipeline(f, params, flags);
        if (usage) *usage += out.usage;
        for (int i = 0; i < f.num_vehicles(); ++i) {
            const Tensor3& logits = out.seg_logits[i];
            std::vector<int> pred(static_cast<std::size_t>(logits.h) * logits.w, 0);
            for (std::size_t cell = 0; cell < pred.size(); ++cell) {
                const double* z = &logits.v[cell * logits.c];
                int arg = 0;
                for (int k = 1; k < logits.c; ++k)
                    if (z[k] > z[arg]) arg = k;
                pred[cell] = arg;
            }
            iou.add(pred, f.vehicle_gts[i].seg_labels);

            std::vector<ScoredBox> preds =
                decode_detections(out.det_maps[i], objectness_threshold, nms_iou);
            for (ScoredBox sb : preds) {
                sb.box.min_x += image_offset;
                sb.box.max_x += image_offset;
                all_preds.push_back(sb);
            }
            for (GtBox b : f.vehicle_gts[i].boxes) {
                b.min_x += image_offset;
                b.max_x += image_offset;
                all_gts.push_back(b);
            }
            image_offset += 1e6;
        }
    }
    SceneEval e;
    e.miou = iou.value();
    e.ap50 = average_precision(all_preds, all_gts, 0.5);
    e.ap70 = average_precision(all_preds, all_gts, 0.7);
    return e;
}

// Sequential training over the scene curriculum with optional RSU experience
// replay; deterministic given the master seed.
inline CurriculumResult train_curriculum(const std::vector<Scenario>& scenes,
                                         const CurriculumConfig& cfg) {
    if (scenes.empty()) throw std::invalid_argument("train_curriculum: no scenes");
    cfg.loss.validate();

    CurriculumResult result;
    result.params = ModelParams::init(cfg.model, derive_seed(cfg.master_seed, 0x1417));

    std::vector<SceneFrames> frames;
    frames.reserve(scenes.size());
    for (const Scenario& s : scenes) frames.push_back(split_scene_frames(s, cfg.raster));

    ReplayBuffer buffer;
    buffer.select_count = cfg.replay_mu;
    buffer.capacity = cfg.replay_capacity;
    buffer.rng_seed = derive_seed(cfg.master_seed, 0xb0f);

    for (std::size_t scene_idx = 0; scene_idx < scenes.size(); ++scene_idx) {
        double last_epoch_loss = 0.0;
        for (int epoch = 0; epoch < cfg.loss.epochs_per_scene; ++epoch) {
            static const ReplayBuffer kEmpty{};
            const std::vector<Batch> batches =
                make_training_stream(frames[scene_idx].train, cfg.replay_on ? buffer : kEmpty,
                                     cfg.replay_draw, cfg.loss.batch_size,
                                     derive_seed(cfg.master_seed, 0x57a7e, scene_idx, epoch));
            double epoch_loss = 0.0;
            for (const Batch& b : batches) {
                ModelGrads grads(result.params);
                ChannelUsage usage;
                epoch_loss += total_loss(b.current, b.replay, result.params, cfg.flags, cfg.loss,
                                         cfg.task, &grads, &usage);
                result.ledger.merge(usage);
                result.ledger.end_step();
                sgd_step(result.params, grads, cfg.loss.learning_rate);
            }
            last_epoch_loss = batches.empty() ? 0.0 : epoch_loss / batches.size();
        }

        result.checkpoints.push_back(result.params);

        std::vector<double> miou_row, ap50_row, ap70_row;
        for (std::size_t split = 0; split < scenes.size(); ++split) {
            ChannelUsage usage;
            const SceneEval ev = evaluate_frames(frames[split].test, result.params, cfg.flags,
                                                 cfg.objectness_threshold, cfg.nms_iou, &usage);
            result.ledger.merge(usage);
            result.ledger.end_step();
            miou_row.push_back(ev.miou);
            ap50_row.push_back(ev.ap50);
            ap70_row.push_back(ev.ap70);
            MetricsRow row;
            row.scene_idx = static_cast<int>(scene_idx);
            row.epoch = cfg.loss.epochs_per_scene;
            row.split_scene = static_cast<int>(split);
            row.miou = ev.miou;
            row.ap50 = ev.ap50;
            row.ap70 = ev.ap70;
            row.loss = last_epoch_loss;
            row.cumulative_bytes = result.ledger.cumulative.total_bytes();
            result.rows.push_back(row);
        }
        result.miou_history.push_back(std::move(miou_row));
        result.ap50_history.push_back(std::move(ap50_row));
        result.ap70_history.push_back(std::move(ap70_row));

        if (cfg.replay_on)
            replay_refresh(buffer, frames[scene_idx].train, cfg.replay_mu,
                           derive_seed(cfg.master_seed, 0xef5e, scene_idx));
    }
    return result;
}

}  // namespace ar2vp
