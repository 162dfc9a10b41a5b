#pragma once

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include "ar2vp/rng.hpp"

namespace ar2vp {

// Dense H x W x C array of doubles, row-major with the channel fastest:
// index(h, w, c) = (h * W + w) * C + c.
struct Tensor3 {
    int h = 0;
    int w = 0;
    int c = 0;
    std::vector<double> v;

    Tensor3() = default;
    Tensor3(int h_, int w_, int c_) : h(h_), w(w_), c(c_), v(static_cast<std::size_t>(h_) * w_ * c_, 0.0) {}

    std::size_t size() const { return v.size(); }

    double& at(int r, int col, int ch) { return v[(static_cast<std::size_t>(r) * w + col) * c + ch]; }
    double at(int r, int col, int ch) const { return v[(static_cast<std::size_t>(r) * w + col) * c + ch]; }

    bool same_shape(const Tensor3& o) const { return h == o.h && w == o.w && c == o.c; }

    void fill(double x) { std::fill(v.begin(), v.end(), x); }

    Tensor3& operator+=(const Tensor3& o) {
        require_same_shape(o, "Tensor3::operator+=");
        for (std::size_t i = 0; i < v.size(); ++i) v[i] += o.v[i];
        return *this;
    }

    Tensor3& operator*=(double s) {
        for (double& x : v) x *= s;
        return *this;
    }

    // this += s * o
    void axpy(double s, const Tensor3& o) {
        require_same_shape(o, "Tensor3::axpy");
        for (std::size_t i = 0; i < v.size(); ++i) v[i] += s * o.v[i];
    }

    void require_same_shape(const Tensor3& o, const std::string& where) const {
        if (!same_shape(o))
            throw std::invalid_argument(where + ": shape mismatch " + shape_str() + " vs " + o.shape_str());
    }

    std::string shape_str() const {
        return std::to_string(h) + "x" + std::to_string(w) + "x" + std::to_string(c);
    }
};

inline bool all_finite(const Tensor3& t) {
    for (double x : t.v)
        if (!std::isfinite(x)) return false;
    return true;
}

// Per-cell affine map: y = W x + b applied independently at every (h, w)
// location. The exact math of a 1x1 convolution.
struct Affine {
    int out_dim = 0;
    int in_dim = 0;
    std::vector<double> weight;  // out_dim x in_dim, row-major
    std::vector<double> bias;    // out_dim

    Affine() = default;
    Affine(int out, int in)
        : out_dim(out), in_dim(in), weight(static_cast<std::size_t>(out) * in, 0.0), bias(out, 0.0) {}

    double wat(int o, int i) const { return weight[static_cast<std::size_t>(o) * in_dim + i]; }
    double& wat(int o, int i) { return weight[static_cast<std::size_t>(o) * in_dim + i]; }

    std::size_t param_count() const { return weight.size() + bias.size(); }

    void he_uniform_init(Rng& rng) {
        const double limit = std::sqrt(6.0 / in_dim);
        for (double& x : weight) x = rng.uniform(-limit, limit);
        std::fill(bias.begin(), bias.end(), 0.0);
    }

    static Affine identity(int dim) {
        Affine a(dim, dim);
        for (int i = 0; i < dim; ++i) a.wat(i, i) = 1.0;
        return a;
    }
};

inline Tensor3 affine_apply(const Tensor3& x, const Affine& p) {
    if (x.c != p.in_dim)
        throw std::invalid_argument("affine_apply: input has " + std::to_string(x.c) +
                                    " channels, map expects " + std::to_string(p.in_dim));
    Tensor3 y(x.h, x.w, p.out_dim);
    const std::size_t cells = static_cast<std::size_t>(x.h) * x.w;
    for (std::size_t cell = 0; cell < cells; ++cell) {
        const double* xin = &x.v[cell * x.c];
        double* yout = &y.v[cell * p.out_dim];
        for (int o = 0; o < p.out_dim; ++o) {
            double acc = p.bias[o];
            const double* wrow = &p.weight[static_cast<std::size_t>(o) * p.in_dim];
            for (int i = 0; i < p.in_dim; ++i) acc += wrow[i] * xin[i];
            yout[o] = acc;
        }
    }
    return y;
}

inline Tensor3 relu(const Tensor3& x) {
    Tensor3 y = x;
    for (double& e : y.v) e = e > 0.0 ? e : 0.0;
    return y;
}

// Gradient accumulators matching an Affine's shapes.
struct AffineGrad {
    std::vector<double> weight;
    std::vector<double> bias;

    AffineGrad() = default;
    explicit AffineGrad(const Affine& p)
        : weight(p.weight.size(), 0.0), bias(p.bias.size(), 0.0) {}

    void add_scaled(const AffineGrad& o, double s) {
        for (std::size_t i = 0; i < weight.size(); ++i) weight[i] += s * o.weight[i];
        for (std::size_t i = 0; i < bias.size(); ++i) bias[i] += s * o.bias[i];
    }
};

// Backward through y = W x + b. Accumulates parameter gradients into g and,
// when dx is non-null, writes the input gradient.
inline void affine_backward(const Tensor3& x, const Tensor3& dy, const Affine& p, AffineGrad& g,
                            Tensor3* dx) {
    const std::size_t cells = static_cast<std::size_t>(x.h) * x.w;
    if (dx) *dx = Tensor3(x.h, x.w, p.in_dim);
    for (std::size_t cell = 0; cell < cells; ++cell) {
        const double* xin = &x.v[cell * p.in_dim];
        const double* dyo = &dy.v[cell * p.out_dim];
        double* dxi = dx ? &dx->v[cell * p.in_dim] : nullptr;
        for (int o = 0; o < p.out_dim; ++o) {
            const double go = dyo[o];
            if (go == 0.0) continue;
            g.bias[o] += go;
            double* gw = &g.weight[static_cast<std::size_t>(o) * p.in_dim];
            const double* wrow = &p.weight[static_cast<std::size_t>(o) * p.in_dim];
            for (int i = 0; i < p.in_dim; ++i) {
                gw[i] += go * xin[i];
                if (dxi) dxi[i] += go * wrow[i];
            }
        }
    }
}

// Backward through relu given the pre-activation values.
inline Tensor3 relu_backward(const Tensor3& pre, const Tensor3& dy) {
    Tensor3 dx = dy;
    for (std::size_t i = 0; i < dx.v.size(); ++i)
        if (pre.v[i] <= 0.0) dx.v[i] = 0.0;
    return dx;
}

// Fixed 3x3 box average with zero padding, applied channel-wise.
inline Tensor3 avg_pool3x3(const Tensor3& x) {
    Tensor3 y(x.h, x.w, x.c);
    for (int r = 0; r < x.h; ++r)
        for (int col = 0; col < x.w; ++col)
            for (int ch = 0; ch < x.c; ++ch) {
                double acc = 0.0;
                for (int dr = -1; dr <= 1; ++dr)
                    for (int dc = -1; dc <= 1; ++dc) {
                        const int rr = r + dr, cc = col + dc;
                        if (rr >= 0 && rr < x.h && cc >= 0 && cc < x.w) acc += x.at(rr, cc, ch);
                    }
                y.at(r, col, ch) = acc / 9.0;
            }
    return y;
}

}  // namespace ar2vp
