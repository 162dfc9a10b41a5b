#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include "ar2vp/model.hpp"
#include "ar2vp/tensor.hpp"

namespace ar2vp {

struct CompensationConfig {
    double threshold = 0.5;  // lambda_c, in [-1, 1]

    void validate() const {
        if (!std::isfinite(threshold) || threshold < -1.0 || threshold > 1.0)
            throw std::invalid_argument("compensation threshold must be finite and in [-1, 1]");
    }
};

// Row-major flattening of a feature map.
inline std::vector<double> flatten(const Tensor3& m) { return m.v; }

// Pearson correlation between two flattened maps; 0 by convention when either
// vector is constant.
inline double similarity_ratio(const std::vector<double>& rsu_flat,
                               const std::vector<double>& veh_flat) {
    if (rsu_flat.size() != veh_flat.size())
        throw std::invalid_argument("similarity_ratio: length mismatch");
    const std::size_t n = rsu_flat.size();
    if (n < 2) throw std::invalid_argument("similarity_ratio: need at least 2 elements");
    double mean_a = 0.0, mean_b = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        mean_a += rsu_flat[i];
        mean_b += veh_flat[i];
    }
    mean_a /= static_cast<double>(n);
    mean_b /= static_cast<double>(n);
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double da = rsu_flat[i] - mean_a;
        const double db = veh_flat[i] - mean_b;
        dot += da * db;
        na += da * da;
        nb += db * db;
    }
    if (na == 0.0 || nb == 0.0) return 0.0;
    return dot / (std::sqrt(na) * std::sqrt(nb));
}

// Pearson-gated residual compensation: below the threshold the RSU's decoded
// map is added with coefficient (lambda_c - r_i); at or above it the vehicle
// map passes through untouched.
inline FeatureMap compensate(const FeatureMap& veh_dec, const FeatureMap& rsu_dec, double r,
                             const CompensationConfig& cfg) {
    cfg.validate();
    veh_dec.require_same_shape(rsu_dec, "compensate");
    if (r >= cfg.threshold) return veh_dec;
    FeatureMap out = veh_dec;
    out.axpy(cfg.threshold - r, rsu_dec);
    return out;
}

// Residual coefficient actually applied (0 when the gate does not fire);
// r is a constant during backpropagation.
inline double compensation_coefficient(double r, const CompensationConfig& cfg) {
    return r >= cfg.threshold ? 0.0 : cfg.threshold - r;
}

}  // namespace ar2vp
