#pragma once

// Shared synthetic setup: generated corpora with precomputed features and a
// projection encoder over them.

#include <memory>

#include "msfner/meta_trainer.hpp"
#include "msfner/synthetic.hpp"

namespace msfner::testing {

struct SyntheticSetup {
    SyntheticData data;
    std::shared_ptr<const EmbeddingStore> store;
    Encoder encoder;
};

inline EncoderConfig precomputed_config(std::size_t dim) {
    EncoderConfig c;
    c.mode = EncoderMode::Precomputed;
    c.input_dim = dim;
    c.hidden_dim = dim;
    return c;
}

inline const SyntheticSetup& synthetic_setup() {
    static const SyntheticSetup setup = [] {
        SyntheticData data = generate_synthetic({});
        auto store = std::make_shared<const EmbeddingStore>(data.embeddings);
        Encoder encoder(precomputed_config(data.feature_dim), store);
        return SyntheticSetup{std::move(data), store, std::move(encoder)};
    }();
    return setup;
}

/// Desk-scale training settings: 4-way 1~2-shot, small batches and a larger
/// outer learning rate than the full-scale default.
inline TrainerConfig synthetic_trainer_config() {
    TrainerConfig c;
    c.n_way = 4;
    c.k_shot = 1;
    c.batch_size = 4;
    c.outer_lr = 1e-2;
    c.steps = 300;
    c.valid_interval = 50;
    c.valid_episodes = 8;
    c.seed = 3;
    return c;
}

}  // namespace msfner::testing
