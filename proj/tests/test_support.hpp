// Shared helpers for the unit and acceptance suites: deterministic random
// frames, a small model configuration, and the straight-line scalar oracle
// for the full pipeline. Test-only code, independent of the library's own
// composition of the forward pass.
#pragma once

#include <cmath>
#include <vector>

#include "ar2vp/training.hpp"

namespace ar2vp::testsupport {

inline Pose make_pose(double x, double y, double angle = 0.0) {
    Pose p;
    p.position = {x, y};
    p.rotation = Mat2::rotation(angle);
    return p;
}

inline BevGrid random_grid(int h, int w, int c, const Pose& origin, Rng& rng) {
    BevGrid g;
    g.data = Tensor3(h, w, c);
    for (double& x : g.data.v) x = rng.next_double();
    g.cell_size = 1.0;
    g.origin = origin;
    return g;
}

inline GroundTruth random_gt(int h, int w, int classes, Rng& rng) {
    GroundTruth gt;
    gt.h = h;
    gt.w = w;
    gt.seg_labels.resize(static_cast<std::size_t>(h) * w);
    for (int& v : gt.seg_labels) v = static_cast<int>(rng.next_below(classes));
    GtBox box;
    box.cls = static_cast<int>(EntityClass::vehicle);
    box.min_x = 0.5;
    box.min_y = 1.0;
    box.max_x = 2.5;
    box.max_y = 3.0;
    gt.boxes.push_back(box);
    return gt;
}

// small frame with rotated, offset agents and random observations
inline Frame random_frame(int h, int w, int classes, int n_vehicles, std::uint64_t seed) {
    Rng rng(seed);
    Frame f;
    f.scenario_id = 1;
    f.t = 0;
    f.rsu_pose = make_pose(0.3, -0.2, 0.4);
    f.rsu_grid = random_grid(h, w, classes, f.rsu_pose, rng);
    for (int i = 0; i < n_vehicles; ++i) {
        const Pose p = make_pose(rng.uniform(-1.5, 1.5), rng.uniform(-1.5, 1.5),
                                 rng.uniform(0.0, 2 * M_PI));
        f.vehicle_poses.push_back(p);
        f.vehicle_grids.push_back(random_grid(h, w, classes, p, rng));
        f.vehicle_gts.push_back(random_gt(h, w, classes, rng));
    }
    return f;
}

inline ModelConfig tiny_model_config(int classes = 6, int compression_n = 1) {
    ModelConfig cfg;
    cfg.in_channels = 2 * classes;  // raw channels plus their pooled copy
    cfg.feature_channels = 8;
    cfg.decoded_channels = 4;
    cfg.num_classes = classes;
    cfg.compression_n = compression_n;
    return cfg;
}

struct OraclePerVehicle {
    std::vector<double> seg;  // h*w*classes
    std::vector<double> det;  // h*w*5
};

// Monolithic straight-line re-implementation of the full forward pipeline,
// written with plain loops and no library calls beyond basic math.
inline std::vector<OraclePerVehicle> oracle_pipeline(const Frame& frame, const ModelParams& mp,
                                                     double lambda_c, int compression_n) {
    const int h = frame.rsu_grid.data.h, w = frame.rsu_grid.data.w;
    const int cin = mp.cfg.in_channels, cf = mp.cfg.feature_channels;
    const int cd = mp.cfg.decoded_channels, k = mp.cfg.num_classes;
    const int n = frame.num_vehicles();
    const int agents = n + 1;
    const double cell = frame.rsu_grid.cell_size;

    auto grid_at = [&](int a, int r, int c, int ch) {
        const Tensor3& g = a == 0 ? frame.rsu_grid.data : frame.vehicle_grids[a - 1].data;
        return g.at(r, c, ch);
    };
    auto pose_at = [&](int a) -> const Pose& {
        return a == 0 ? frame.rsu_pose : frame.vehicle_poses[a - 1];
    };
    auto idx = [&](int r, int c, int ch, int channels) { return (r * w + c) * channels + ch; };

    // encode: raw channels, then their 3x3 zero-padded averages, affine, relu
    const int gc = cin / 2;  // grid channels
    std::vector<std::vector<double>> enc(agents, std::vector<double>(h * w * cf, 0.0));
    for (int a = 0; a < agents; ++a)
        for (int r = 0; r < h; ++r)
            for (int c = 0; c < w; ++c) {
                std::vector<double> input(cin, 0.0);
                for (int ch = 0; ch < gc; ++ch) {
                    input[ch] = grid_at(a, r, c, ch);
                    double acc = 0.0;
                    for (int dr = -1; dr <= 1; ++dr)
                        for (int dc = -1; dc <= 1; ++dc) {
                            const int rr = r + dr, ccc = c + dc;
                            if (rr >= 0 && rr < h && ccc >= 0 && ccc < w)
                                acc += grid_at(a, rr, ccc, ch);
                        }
                    input[gc + ch] = acc / 9.0;
                }
                for (int o = 0; o < cf; ++o) {
                    double acc = mp.encoder.bias[o];
                    for (int i = 0; i < cin; ++i) acc += mp.encoder.wat(o, i) * input[i];
                    enc[a][idx(r, c, o, cf)] = acc > 0.0 ? acc : 0.0;
                }
            }

    // channel autoencoder on everything transmitted
    std::vector<std::vector<double>> sent(agents);
    for (int a = 0; a < agents; ++a) {
        if (compression_n <= 1) {
            sent[a] = enc[a];
            continue;
        }
        const int cc = cf / compression_n;
        std::vector<double> mid(h * w * cc, 0.0), outv(h * w * cf, 0.0);
        for (int r = 0; r < h; ++r)
            for (int c = 0; c < w; ++c) {
                for (int o = 0; o < cc; ++o) {
                    double acc = mp.compressor.bias[o];
                    for (int i = 0; i < cf; ++i)
                        acc += mp.compressor.wat(o, i) * enc[a][idx(r, c, i, cf)];
                    mid[idx(r, c, o, cc)] = acc;
                }
                for (int o = 0; o < cf; ++o) {
                    double acc = mp.decompressor.bias[o];
                    for (int i = 0; i < cc; ++i)
                        acc += mp.decompressor.wat(o, i) * mid[idx(r, c, i, cc)];
                    outv[idx(r, c, o, cf)] = acc;
                }
            }
        sent[a] = outv;
    }

    // nearest-neighbor resample of agent src's map into vehicle dest's frame
    auto warp = [&](const std::vector<double>& srcmap, int channels, int src_agent,
                    int dest_vehicle) {
        std::vector<double> out(h * w * channels, 0.0);
        const Pose& ps = pose_at(src_agent);
        const Pose& pd = pose_at(dest_vehicle + 1);
        for (int r = 0; r < h; ++r)
            for (int c = 0; c < w; ++c) {
                const double lx = (c - w / 2 + 0.5) * cell;
                const double ly = (r - h / 2 + 0.5) * cell;
                const double wx = pd.position.x + pd.rotation.a * lx + pd.rotation.b * ly;
                const double wy = pd.position.y + pd.rotation.c * lx + pd.rotation.d * ly;
                const double relx = wx - ps.position.x, rely = wy - ps.position.y;
                const double sx = ps.rotation.a * relx + ps.rotation.c * rely;
                const double sy = ps.rotation.b * relx + ps.rotation.d * rely;
                const long sc = std::llround(sx / cell + w / 2.0 - 0.5);
                const long sr = std::llround(sy / cell + h / 2.0 - 0.5);
                if (sr < 0 || sr >= h || sc < 0 || sc >= w) continue;
                for (int ch = 0; ch < channels; ++ch)
                    out[idx(r, c, ch, channels)] =
                        srcmap[static_cast<std::size_t>((sr * w + sc) * channels + ch)];
            }
        return out;
    };

    auto decode_vec = [&](const std::vector<double>& x) {
        std::vector<double> out(h * w * cd, 0.0);
        for (int r = 0; r < h; ++r)
            for (int c = 0; c < w; ++c)
                for (int o = 0; o < cd; ++o) {
                    double acc = mp.decoder.bias[o];
                    for (int i = 0; i < cf; ++i) acc += mp.decoder.wat(o, i) * x[idx(r, c, i, cf)];
                    out[idx(r, c, o, cd)] = acc > 0.0 ? acc : 0.0;
                }
        return out;
    };

    std::vector<OraclePerVehicle> result(n);
    const std::vector<double> rsu_decoded = decode_vec(sent[0]);

    for (int dest = 0; dest < n; ++dest) {
        // warped vehicle features (self stays raw and unwarped)
        std::vector<std::vector<double>> wf(n);
        for (int j = 0; j < n; ++j)
            wf[j] = (j == dest) ? enc[dest + 1] : warp(sent[j + 1], cf, j + 1, dest);
        const std::vector<double> wrsu = warp(sent[0], cf, 0, dest);

        // edge weights: clamped distance-scaled cosine, self cosine pinned 1
        std::vector<double> xi(n, 0.0);
        double denom = 0.0;
        for (int j = 0; j < n; ++j) {
            double cosv;
            if (j == dest) {
                cosv = 1.0;
            } else {
                double dot = 0, na = 0, nb = 0;
                for (std::size_t e = 0; e < wf[dest].size(); ++e) {
                    dot += wf[dest][e] * wf[j][e];
                    na += wf[dest][e] * wf[dest][e];
                    nb += wf[j][e] * wf[j][e];
                }
                cosv = (na == 0.0 || nb == 0.0) ? 0.0 : dot / (std::sqrt(na) * std::sqrt(nb));
            }
            const double dx = frame.rsu_pose.position.x - frame.vehicle_poses[j].position.x;
            const double dy = frame.rsu_pose.position.y - frame.vehicle_poses[j].position.y;
            const double dist = std::sqrt(dx * dx + dy * dy);
            xi[j] = std::max(0.0, dist * cosv);
            denom += xi[j];
        }
        if (denom > 0.0)
            for (double& x : xi) x /= denom;
        else
            for (double& x : xi) x = 1.0 / n;

        std::vector<double> agg(h * w * cf, 0.0);
        for (std::size_t e = 0; e < agg.size(); ++e) {
            for (int j = 0; j < n; ++j) agg[e] += xi[j] * wf[j][e];
            agg[e] += (1.0 / n) * wrsu[e];
        }

        const std::vector<double> dec = decode_vec(agg);
        const std::vector<double> src = warp(rsu_decoded, cd, 0, dest);

        // Pearson between the warped RSU decode and the vehicle decode
        double mean_s = 0, mean_d = 0;
        for (std::size_t e = 0; e < src.size(); ++e) {
            mean_s += src[e];
            mean_d += dec[e];
        }
        mean_s /= src.size();
        mean_d /= dec.size();
        double num = 0, ns = 0, nd = 0;
        for (std::size_t e = 0; e < src.size(); ++e) {
            num += (src[e] - mean_s) * (dec[e] - mean_d);
            ns += (src[e] - mean_s) * (src[e] - mean_s);
            nd += (dec[e] - mean_d) * (dec[e] - mean_d);
        }
        const double pearson = (ns == 0.0 || nd == 0.0) ? 0.0 : num / std::sqrt(ns * nd);
        const double coeff = pearson >= lambda_c ? 0.0 : lambda_c - pearson;

        std::vector<double> comp(dec.size());
        for (std::size_t e = 0; e < dec.size(); ++e) comp[e] = dec[e] + coeff * src[e];

        OraclePerVehicle& out = result[dest];
        out.seg.assign(h * w * k, 0.0);
        out.det.assign(h * w * 5, 0.0);
        for (int r = 0; r < h; ++r)
            for (int c = 0; c < w; ++c) {
                for (int o = 0; o < k; ++o) {
                    double acc = mp.seg_head.bias[o];
                    for (int i = 0; i < cd; ++i)
                        acc += mp.seg_head.wat(o, i) * comp[idx(r, c, i, cd)];
                    out.seg[idx(r, c, o, k)] = acc;
                }
                for (int o = 0; o < 5; ++o) {
                    double acc = mp.det_head.bias[o];
                    for (int i = 0; i < cd; ++i)
                        acc += mp.det_head.wat(o, i) * comp[idx(r, c, i, cd)];
                    out.det[idx(r, c, o, 5)] = acc;
                }
            }
    }
    return result;
}

// Finite-difference check of every parameter through the full pipeline with
// recorded graph weights and gates pinned (their stop-gradient treatment).
// Returns {parameters checked, parameters failing the relative tolerance}.
struct FdReport {
    int checked = 0;
    int failed = 0;
    double worst_rel_err = 0.0;
};

inline FdReport fd_full_pipeline_check(const Frame& f1, const Frame& f2, ModelParams& p,
                                       const PipelineFlags& flags, const LossConfig& cfg,
                                       double h = 1e-5, double tol = 1e-4) {
    PipelineCache cache1, cache2;
    forward_pipeline(f1, p, flags, &cache1);
    forward_pipeline(f2, p, flags, &cache2);
    const FrozenDecisions frozen1 = record_decisions(cache1);
    const FrozenDecisions frozen2 = record_decisions(cache2);

    ModelGrads grads(p);
    total_loss({&f1}, {&f2}, p, flags, cfg, TrainTask::joint, &grads);

    auto frozen_loss = [&](const ModelParams& pp) {
        double loss = 0.0;
        const PipelineOutput o1 = forward_pipeline(f1, pp, flags, nullptr, &frozen1);
        const PipelineOutput o2 = forward_pipeline(f2, pp, flags, nullptr, &frozen2);
        for (int i = 0; i < f1.num_vehicles(); ++i) {
            loss += (seg_loss(o1.seg_logits[i], f1.vehicle_gts[i].seg_labels) +
                     det_loss(o1.det_maps[i], render_det_targets(f1.vehicle_gts[i]), cfg.sigma,
                              cfg.eta)) /
                    f1.num_vehicles();
            loss += (seg_loss(o2.seg_logits[i], f2.vehicle_gts[i].seg_labels) +
                     det_loss(o2.det_maps[i], render_det_targets(f2.vehicle_gts[i]), cfg.sigma,
                              cfg.eta)) /
                    f2.num_vehicles();
        }
        return loss;
    };

    FdReport report;
    auto sweep = [&](std::vector<double>& slot, const std::vector<double>& analytic) {
        for (std::size_t i = 0; i < slot.size(); ++i) {
            const double orig = slot[i];
            slot[i] = orig + h;
            const double fp = frozen_loss(p);
            slot[i] = orig - h;
            const double fm = frozen_loss(p);
            slot[i] = orig;
            const double fd = (fp - fm) / (2 * h);
            const double denom = std::max({std::abs(fd), std::abs(analytic[i]), 1e-6});
            const double rel = std::abs(fd - analytic[i]) / denom;
            report.worst_rel_err = std::max(report.worst_rel_err, rel);
            if (rel >= tol) ++report.failed;
            ++report.checked;
        }
    };
    sweep(p.encoder.weight, grads.encoder.weight);
    sweep(p.encoder.bias, grads.encoder.bias);
    sweep(p.decoder.weight, grads.decoder.weight);
    sweep(p.decoder.bias, grads.decoder.bias);
    sweep(p.seg_head.weight, grads.seg_head.weight);
    sweep(p.seg_head.bias, grads.seg_head.bias);
    sweep(p.det_head.weight, grads.det_head.weight);
    sweep(p.det_head.bias, grads.det_head.bias);
    sweep(p.compressor.weight, grads.compressor.weight);
    sweep(p.compressor.bias, grads.compressor.bias);
    sweep(p.decompressor.weight, grads.decompressor.weight);
    sweep(p.decompressor.bias, grads.decompressor.bias);
    return report;
}

}  // namespace ar2vp::testsupport
