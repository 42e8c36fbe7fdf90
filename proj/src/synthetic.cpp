#include "msfner/synthetic.hpp"

#include <map>

#include "msfner/error.hpp"
#include "msfner/rng.hpp"

namespace msfner {

namespace {

using WordVectors = std::map<std::string, std::vector<double>>;

std::string entity_word(std::size_t t, std::size_t j) {
    return synthetic_type_name(t) + "_w" + std::to_string(j);
}

std::string filler_word(std::size_t j) { return "f" + std::to_string(j); }

std::uint64_t fnv1a(const std::string& s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char ch : s) h = (h ^ ch) * 0x100000001b3ULL;
    return h;
}

WordVectors word_vectors(const SyntheticConfig& c) {
    Rng rng(mix_seed(c.seed, 0x57A7));
    std::vector<std::vector<double>> centroids(c.num_types, std::vector<double>(c.word_dim, 0.0));
    for (auto& v : centroids) {
        // coordinate 0 is reserved for the entity flag
        for (std::size_t i = 1; i < c.word_dim; ++i) v[i] = c.type_scale * rng.normal() / std::sqrt(double(c.word_dim - 1));
    }
    WordVectors words;
    auto noisy = [&](std::vector<double> v) {
        v[0] += c.flag_noise * rng.normal();
        for (std::size_t i = 1; i < v.size(); ++i) v[i] += c.word_noise * rng.normal();
        return v;
    };
    for (std::size_t t = 0; t < c.num_types; ++t) {
        for (std::size_t j = 0; j < c.words_per_type; ++j) {
            auto v = centroids[t];
            v[0] = c.flag_value;
            words.emplace(entity_word(t, j), noisy(std::move(v)));
        }
    }
    for (std::size_t j = 0; j < c.filler_words; ++j) {
        words.emplace(filler_word(j), noisy(std::vector<double>(c.word_dim, 0.0)));
    }
    return words;
}

AnnotatedSentence make_sentence(const SyntheticConfig& c, const std::vector<std::size_t>& types, Rng& rng,
                                std::string id) {
    AnnotatedSentence s;
    s.sentence.id = std::move(id);
    const std::size_t n = c.min_len + rng.below(c.max_len - c.min_len + 1);
    const std::size_t count = 1 + rng.below(2);
    std::vector<std::string>& tok = s.sentence.tokens;
    // entities never touch, so boundaries are visible from neighbor features
    std::size_t pos = rng.below(2);
    for (std::size_t e = 0; e < count; ++e) {
        const std::size_t len = 1 + rng.below(c.max_entity_len);
        if (pos + len > n) break;
        const std::size_t t = types[rng.below(types.size())];
        while (tok.size() < pos) tok.push_back(filler_word(rng.below(c.filler_words)));
        for (std::size_t i = 0; i < len; ++i) tok.push_back(entity_word(t, rng.below(c.words_per_type)));
        s.spans.push_back({pos, pos + len - 1, synthetic_type_name(t)});
        pos += len + 1 + rng.below(3);
    }
    while (tok.size() < n) tok.push_back(filler_word(rng.below(c.filler_words)));
    return s;
}

Corpus make_corpus(const SyntheticConfig& c, const std::vector<std::size_t>& types, std::size_t count,
                   const std::string& prefix, std::uint64_t stream) {
    Rng rng(mix_seed(c.seed, stream));
    Corpus corpus;
    for (std::size_t i = 0; i < count; ++i) {
        corpus.sentences.push_back(make_sentence(c, types, rng, prefix + "-" + std::to_string(i)));
    }
    finalize_corpus(corpus);
    return corpus;
}

void add_features(const SyntheticConfig& c, const WordVectors& words, const Corpus& corpus,
                  EmbeddingStore& store) {
    const std::size_t d = c.word_dim;
    for (const auto& s : corpus.sentences) {
        const auto& tok = s.sentence.tokens;
        Rng rng(mix_seed(c.seed ^ 0x70CE, fnv1a(s.sentence.id)));
        Tensor m({tok.size(), 3 * d}, 0.0);
        for (std::size_t i = 0; i < tok.size(); ++i) {
            const std::size_t neighbors[3] = {i, i - 1, i + 1};  // i - 1 wraps past the left edge
            for (std::size_t slot = 0; slot < 3; ++slot) {
                const std::size_t j = neighbors[slot];
                if (j >= tok.size()) continue;
                const auto& u = words.at(tok[j]);
                const double w = slot == 0 ? 1.0 : c.context_scale;
                for (std::size_t k = 0; k < d; ++k) m.at(i, slot * d + k) = w * u[k];
            }
            for (std::size_t k = 0; k < 3 * d; ++k) m.at(i, k) += c.token_noise * rng.normal();
        }
        // stored as float32 on disk; round now so in-memory and file runs agree
        for (double& v : m.data()) v = static_cast<double>(static_cast<float>(v));
        store.emplace(s.sentence.id, std::move(m));
    }
}

}  // namespace

std::string synthetic_type_name(std::size_t t) { return "type" + std::to_string(t); }

void SyntheticConfig::validate() const {
    if (source_types == 0 || source_types >= num_types) {
        throw ConfigError("synthetic: need 0 < source_types < num_types");
    }
    if (words_per_type == 0 || filler_words == 0 || word_dim < 2) {
        throw ConfigError("synthetic: vocabulary sizes must be positive and word_dim >= 2");
    }
    if (min_len < 1 || min_len > max_len || max_entity_len == 0) {
        throw ConfigError("synthetic: need 1 <= min_len <= max_len and max_entity_len >= 1");
    }
}

SyntheticData generate_synthetic(const SyntheticConfig& config) {
    config.validate();
    std::vector<std::size_t> source, target;
    for (std::size_t t = 0; t < config.num_types; ++t) (t < config.source_types ? source : target).push_back(t);
    SyntheticData data;
    data.train = make_corpus(config, source, config.train_sentences, "train", 1);
    data.valid = make_corpus(config, source, config.valid_sentences, "valid", 2);
    data.target = make_corpus(config, target, config.target_sentences, "target", 3);
    const auto words = word_vectors(config);
    for (const Corpus* c : {&data.train, &data.valid, &data.target}) add_features(config, words, *c, data.embeddings);
    data.feature_dim = 3 * config.word_dim;
    return data;
}

}  // namespace msfner
