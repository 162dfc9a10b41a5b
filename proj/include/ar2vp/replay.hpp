#pragma once

#include <cstdint>
#include <fstream>
#include <stdexcept>
#include <vector>

#include <json.hpp>

#include "ar2vp/rng.hpp"
#include "ar2vp/scene.hpp"

namespace ar2vp {

// Uniform random selection without replacement of min(mu, n) samples;
// deterministic given the seed.
inline std::vector<Frame> replay_select(const std::vector<Frame>& scene_samples, int mu,
                                        std::uint64_t seed) {
    if (mu < 0) throw std::invalid_argument("replay_select: mu must be >= 0");
    const std::size_t take = std::min<std::size_t>(static_cast<std::size_t>(mu), scene_samples.size());
    std::vector<std::size_t> idx(scene_samples.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    Rng rng(derive_seed(seed, 0x5e1ec7));
    // partial Fisher-Yates: the first `take` slots are the selection
    for (std::size_t i = 0; i < take; ++i) {
        const std::size_t j = i + static_cast<std::size_t>(rng.next_below(idx.size() - i));
        std::swap(idx[i], idx[j]);
    }
    std::vector<Frame> out;
    out.reserve(take);
    for (std::size_t i = 0; i < take; ++i) out.push_back(scene_samples[idx[i]]);
    return out;
}

// Past-scene frames stored at the RSU. Capacity-bounded; refresh keeps all of
// the newest scene's selection and evicts uniformly among older entries.
struct ReplayBuffer {
    std::vector<Frame> samples;
    int select_count = 20;  // mu
    int capacity = 60;
    std::uint64_t rng_seed = 0;

    std::size_t size() const { return samples.size(); }
    bool empty() const { return samples.empty(); }
};

inline void replay_refresh(ReplayBuffer& buffer, const std::vector<Frame>& finished_scene, int mu,
                           std::uint64_t seed) {
    if (mu > buffer.capacity)
        throw std::invalid_argument("replay_refresh: mu exceeds buffer capacity");
    std::vector<Frame> fresh = replay_select(finished_scene, mu, seed);

    std::vector<Frame> old = std::move(buffer.samples);
    const std::size_t room = static_cast<std::size_t>(buffer.capacity) - fresh.size();
    Rng rng(derive_seed(seed, 0xe71c7));
    while (old.size() > room) {
        const std::size_t victim = static_cast<std::size_t>(rng.next_below(old.size()));
        old.erase(old.begin() + static_cast<std::ptrdiff_t>(victim));
    }
    buffer.samples = std::move(fresh);
    buffer.samples.insert(buffer.samples.end(), old.begin(), old.end());
}

// One SGD batch with sample provenance kept so the two loss terms can be
// formed separately.
struct Batch {
    std::vector<const Frame*> current;
    std::vector<const Frame*> replay;

    std::size_t size() const { return current.size() + replay.size(); }
};

// Batches for one epoch over the union of the current scene and a freshly
// drawn replay subset, shuffled deterministically. Every current-scene sample
// appears exactly once per epoch.
inline std::vector<Batch> make_training_stream(const std::vector<Frame>& current,
                                               const ReplayBuffer& buffer, int replay_draw,
                                               int batch_size, std::uint64_t seed) {
    if (current.empty()) throw std::invalid_argument("make_training_stream: empty current scene");
    if (batch_size < 1) throw std::invalid_argument("make_training_stream: batch_size must be >= 1");

    struct Tagged {
        const Frame* frame;
        bool from_replay;
    };
    std::vector<Tagged> pool;
    pool.reserve(current.size() + buffer.size());
    for (const Frame& f : current) pool.push_back({&f, false});

    const std::size_t draw =
        std::min<std::size_t>(static_cast<std::size_t>(std::max(replay_draw, 0)), buffer.size());
    std::vector<std::size_t> idx(buffer.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    Rng rng(derive_seed(seed, 0xd7a3));
    for (std::size_t i = 0; i < draw; ++i) {
        const std::size_t j = i + static_cast<std::size_t>(rng.next_below(idx.size() - i));
        std::swap(idx[i], idx[j]);
        pool.push_back({&buffer.samples[idx[i]], true});
    }

    rng.shuffle(pool);
    std::vector<Batch> batches;
    for (std::size_t start = 0; start < pool.size(); start += static_cast<std::size_t>(batch_size)) {
        Batch b;
        const std::size_t end = std::min(pool.size(), start + static_cast<std::size_t>(batch_size));
        for (std::size_t i = start; i < end; ++i) {
            if (pool[i].from_replay)
                b.replay.push_back(pool[i].frame);
            else
                b.current.push_back(pool[i].frame);
        }
        batches.push_back(std::move(b));
    }
    return batches;
}

// Buffer persistence using the scene module's frame schema, so an RSU can
// restart mid-curriculum.
inline void save_replay_buffer(const ReplayBuffer& buffer, const std::string& path) {
    nlohmann::json j;
    j["schema_version"] = kScenarioSchemaVersion;
    j["select_count"] = buffer.select_count;
    j["capacity"] = buffer.capacity;
    j["rng_seed"] = buffer.rng_seed;
    j["samples"] = nlohmann::json::array();
    for (const Frame& f : buffer.samples) j["samples"].push_back(frame_to_json(f));
    std::ofstream out(path);
    if (!out) throw std::runtime_error("save_replay_buffer: cannot open " + path);
    out << j.dump() << "\n";
}

inline ReplayBuffer load_replay_buffer(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("load_replay_buffer: cannot open " + path);
    nlohmann::json j;
    in >> j;
    if (j.at("schema_version").get<int>() != kScenarioSchemaVersion)
        throw std::runtime_error("replay buffer file: unsupported schema version");
    ReplayBuffer b;
    b.select_count = j.at("select_count").get<int>();
    b.capacity = j.at("capacity").get<int>();
    b.rng_seed = j.at("rng_seed").get<std::uint64_t>();
    for (const auto& fj : j.at("samples")) b.samples.push_back(frame_from_json(fj));
    return b;
}

}  // namespace ar2vp
