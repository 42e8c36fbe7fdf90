#pragma once

// Generated corpora with stand-in "pretrained" token features, for end-to-end
// runs without an external encoder.

#include <cstdint>

#include "msfner/encoder.hpp"
#include "msfner/episodes.hpp"

namespace msfner {

struct SyntheticConfig {
    std::size_t num_types = 8;
    std::size_t source_types = 4;  // types 0..source_types-1 train, the rest are target types
    std::size_t words_per_type = 12;
    std::size_t filler_words = 60;
    std::size_t train_sentences = 400;
    std::size_t valid_sentences = 120;
    std::size_t target_sentences = 240;
    std::size_t min_len = 6;
    std::size_t max_len = 14;
    std::size_t max_entity_len = 3;
    std::size_t word_dim = 8;
    double type_scale = 2.0;
    double word_noise = 0.35;
    double flag_value = 2.0;
    double flag_noise = 0.1;
    double token_noise = 0.05;
    double context_scale = 0.3;  // weight of the neighbour slots
    std::uint64_t seed = 1;

    void validate() const;
};

/// Every word w gets a fixed vector u(w): entity words carry an entity flag
/// coordinate plus their type's centroid, fillers carry noise only. A token's
/// feature row is [u(w_i); s u(w_i-1); s u(w_i+1)] with s = context_scale
/// (zeros past the edges) plus small per-occurrence noise, so rows have
/// 3 * word_dim columns.
struct SyntheticData {
    Corpus train;   // source types, ids "train-<i>"
    Corpus valid;   // source types, ids "valid-<i>"
    Corpus target;  // target types, ids "target-<i>"
    EmbeddingStore embeddings;
    std::size_t feature_dim = 0;
};

SyntheticData generate_synthetic(const SyntheticConfig& config);

std::string synthetic_type_name(std::size_t t);

}  // namespace msfner
