#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "ar2vp/rng.hpp"
#include "ar2vp/tensor.hpp"

namespace ar2vp {

static_assert(std::endian::native == std::endian::little,
              "checkpoint format is little-endian; big-endian hosts are unsupported");

// Feature map M in some agent's frame. `frame` is the observing agent id
// (0 = RSU), -1 when not attached to an agent.
struct FeatureMap : Tensor3 {
    int frame = -1;

    FeatureMap() = default;
    FeatureMap(int h_, int w_, int c_, int frame_ = -1) : Tensor3(h_, w_, c_), frame(frame_) {}
    FeatureMap(Tensor3 t, int frame_ = -1) : Tensor3(std::move(t)), frame(frame_) {}
};

struct ModelConfig {
    int in_channels = 12;        // encoder input: grid channels + pooled copy
    int feature_channels = 32;   // C_f
    int decoded_channels = 16;   // C_d
    int num_classes = 6;
    int compression_n = 1;  // 1 disables the channel autoencoder

    int compressed_channels() const {
        if (compression_n < 1 || feature_channels % compression_n != 0)
            throw std::invalid_argument("model config: feature_channels must be divisible by compression_n");
        return feature_channels / compression_n;
    }
};

// Encoder input: the raw occupancy channels concatenated with their 3x3 box
// average, the fixed preprocessing that injects local spatial context.
inline Tensor3 preprocess_grid(const Tensor3& grid) {
    const Tensor3 pooled = avg_pool3x3(grid);
    Tensor3 out(grid.h, grid.w, 2 * grid.c);
    const std::size_t cells = static_cast<std::size_t>(grid.h) * grid.w;
    for (std::size_t cell = 0; cell < cells; ++cell)
        for (int ch = 0; ch < grid.c; ++ch) {
            out.v[cell * out.c + ch] = grid.v[cell * grid.c + ch];
            out.v[cell * out.c + grid.c + ch] = pooled.v[cell * grid.c + ch];
        }
    return out;
}

// Parameters shared by the RSU and every vehicle: encoder, decoder, the two
// task heads, and the channel-compression autoencoder pair.
struct ModelParams {
    ModelConfig cfg;
    Affine encoder;       // C_in -> C_f
    Affine decoder;       // C_f -> C_d
    Affine seg_head;      // C_d -> num_classes
    Affine det_head;      // C_d -> 5 (objectness logit + dx dy dw dh)
    Affine compressor;    // C_f -> C_f/n
    Affine decompressor;  // C_f/n -> C_f

    static ModelParams init(const ModelConfig& cfg, std::uint64_t seed) {
        ModelParams p;
        p.cfg = cfg;
        const int cc = cfg.compressed_channels();
        p.encoder = Affine(cfg.feature_channels, cfg.in_channels);
        p.decoder = Affine(cfg.decoded_channels, cfg.feature_channels);
        p.seg_head = Affine(cfg.num_classes, cfg.decoded_channels);
        p.det_head = Affine(5, cfg.decoded_channels);
        p.compressor = Affine(cc, cfg.feature_channels);
        p.decompressor = Affine(cfg.feature_channels, cc);
        Rng rng(derive_seed(seed, 0x90de1));
        p.encoder.he_uniform_init(rng);
        p.decoder.he_uniform_init(rng);
        p.seg_head.he_uniform_init(rng);
        p.det_head.he_uniform_init(rng);
        // channel autoencoder starts as a keep-first-k projector: unit gain,
        // exact identity at n = 1, refined jointly during training
        for (int i = 0; i < cc; ++i) {
            p.compressor.wat(i, i) = 1.0;
            p.decompressor.wat(i, i) = 1.0;
        }
        return p;
    }

    std::size_t param_count() const {
        return encoder.param_count() + decoder.param_count() + seg_head.param_count() +
               det_head.param_count() + compressor.param_count() + decompressor.param_count();
    }
};

struct ModelGrads {
    AffineGrad encoder, decoder, seg_head, det_head, compressor, decompressor;

    explicit ModelGrads(const ModelParams& p)
        : encoder(p.encoder),
          decoder(p.decoder),
          seg_head(p.seg_head),
          det_head(p.det_head),
          compressor(p.compressor),
          decompressor(p.decompressor) {}

    void add(const ModelGrads& o, double s = 1.0) {
        encoder.add_scaled(o.encoder, s);
        decoder.add_scaled(o.decoder, s);
        seg_head.add_scaled(o.seg_head, s);
        det_head.add_scaled(o.det_head, s);
        compressor.add_scaled(o.compressor, s);
        decompressor.add_scaled(o.decompressor, s);
    }
};

inline void sgd_step(ModelParams& p, const ModelGrads& g, double lr) {
    auto upd = [lr](Affine& a, const AffineGrad& ga) {
        for (std::size_t i = 0; i < a.weight.size(); ++i) a.weight[i] -= lr * ga.weight[i];
        for (std::size_t i = 0; i < a.bias.size(); ++i) a.bias[i] -= lr * ga.bias[i];
    };
    upd(p.encoder, g.encoder);
    upd(p.decoder, g.decoder);
    upd(p.seg_head, g.seg_head);
    upd(p.det_head, g.det_head);
    upd(p.compressor, g.compressor);
    upd(p.decompressor, g.decompressor);
}

// --- forward ops -----------------------------------------------------------

// M = relu(W_enc v + b); expects the (pooled) BEV channels.
inline FeatureMap encode(const Tensor3& v, const ModelParams& p) {
    return {relu(affine_apply(v, p.encoder))};
}

inline FeatureMap decode(const FeatureMap& m, const ModelParams& p) {
    return {relu(affine_apply(m, p.decoder)), m.frame};
}

inline Tensor3 seg_head(const FeatureMap& m, const ModelParams& p) {
    return affine_apply(m, p.seg_head);
}

inline Tensor3 det_head(const FeatureMap& m, const ModelParams& p) {
    return affine_apply(m, p.det_head);
}

inline FeatureMap compress(const FeatureMap& m, const ModelParams& p, int n) {
    if (n < 1 || p.cfg.feature_channels % n != 0)
        throw std::invalid_argument("compress: C_f not divisible by n=" + std::to_string(n));
    if (p.compressor.out_dim != p.cfg.feature_channels / n)
        throw std::invalid_argument("compress: params sized for n=" +
                                    std::to_string(p.cfg.feature_channels / p.compressor.out_dim));
    return {affine_apply(m, p.compressor), m.frame};
}

inline FeatureMap decompress(const FeatureMap& m, const ModelParams& p, int n) {
    if (n < 1 || p.cfg.feature_channels % n != 0)
        throw std::invalid_argument("decompress: C_f not divisible by n=" + std::to_string(n));
    if (p.decompressor.in_dim != p.cfg.feature_channels / n)
        throw std::invalid_argument("decompress: params sized for n=" +
                                    std::to_string(p.cfg.feature_channels / p.decompressor.in_dim));
    return {affine_apply(m, p.decompressor), m.frame};
}

// --- checkpoint ------------------------------------------------------------
// Binary layout (little-endian): magic "AR2VPCKP", u32 version, u32 config
// words (in_channels, feature_channels, decoded_channels, num_classes,
// compression_n), then per tensor in a fixed order: u32 rows, u32 cols,
// row-major float64 data. Bias vectors are rows x 1.

inline constexpr char kCheckpointMagic[8] = {'A', 'R', '2', 'V', 'P', 'C', 'K', 'P'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

inline void write_u32(std::ostream& out, std::uint32_t v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

inline std::uint32_t read_u32(std::istream& in) {
    std::uint32_t v = 0;
    in.read(reinterpret_cast<char*>(&v), sizeof v);
    if (!in) throw std::runtime_error("checkpoint: truncated file");
    return v;
}

inline void write_mat(std::ostream& out, const std::vector<double>& data, std::uint32_t rows,
                      std::uint32_t cols) {
    write_u32(out, rows);
    write_u32(out, cols);
    out.write(reinterpret_cast<const char*>(data.data()),
              static_cast<std::streamsize>(data.size() * sizeof(double)));
}

inline void read_mat(std::istream& in, std::vector<double>& data, std::uint32_t rows,
                     std::uint32_t cols) {
    if (read_u32(in) != rows || read_u32(in) != cols)
        throw std::runtime_error("checkpoint: tensor shape mismatch");
    data.resize(static_cast<std::size_t>(rows) * cols);
    in.read(reinterpret_cast<char*>(data.data()),
            static_cast<std::streamsize>(data.size() * sizeof(double)));
    if (!in) throw std::runtime_error("checkpoint: truncated tensor data");
}

}  // namespace detail

inline void save_checkpoint(const ModelParams& p, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("save_checkpoint: cannot open " + path);
    out.write(kCheckpointMagic, sizeof kCheckpointMagic);
    detail::write_u32(out, kCheckpointVersion);
    detail::write_u32(out, static_cast<std::uint32_t>(p.cfg.in_channels));
    detail::write_u32(out, static_cast<std::uint32_t>(p.cfg.feature_channels));
    detail::write_u32(out, static_cast<std::uint32_t>(p.cfg.decoded_channels));
    detail::write_u32(out, static_cast<std::uint32_t>(p.cfg.num_classes));
    detail::write_u32(out, static_cast<std::uint32_t>(p.cfg.compression_n));
    for (const Affine* a : {&p.encoder, &p.decoder, &p.seg_head, &p.det_head, &p.compressor,
                            &p.decompressor}) {
        detail::write_mat(out, a->weight, static_cast<std::uint32_t>(a->out_dim),
                          static_cast<std::uint32_t>(a->in_dim));
        detail::write_mat(out, a->bias, static_cast<std::uint32_t>(a->out_dim), 1);
    }
    if (!out) throw std::runtime_error("save_checkpoint: write failed for " + path);
}

inline ModelParams load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("load_checkpoint: cannot open " + path);
    char magic[8];
    in.read(magic, sizeof magic);
    if (!in || std::memcmp(magic, kCheckpointMagic, sizeof magic) != 0)
        throw std::runtime_error("load_checkpoint: bad magic in " + path);
    if (detail::read_u32(in) != kCheckpointVersion)
        throw std::runtime_error("load_checkpoint: unsupported version in " + path);
    ModelConfig cfg;
    cfg.in_channels = static_cast<int>(detail::read_u32(in));
    cfg.feature_channels = static_cast<int>(detail::read_u32(in));
    cfg.decoded_channels = static_cast<int>(detail::read_u32(in));
    cfg.num_classes = static_cast<int>(detail::read_u32(in));
    cfg.compression_n = static_cast<int>(detail::read_u32(in));
    ModelParams p = ModelParams::init(cfg, 0);
    for (Affine* a : {&p.encoder, &p.decoder, &p.seg_head, &p.det_head, &p.compressor,
                      &p.decompressor}) {
        detail::read_mat(in, a->weight, static_cast<std::uint32_t>(a->out_dim),
                         static_cast<std::uint32_t>(a->in_dim));
        detail::read_mat(in, a->bias, static_cast<std::uint32_t>(a->out_dim), 1);
    }
    return p;
}

}  // namespace ar2vp
