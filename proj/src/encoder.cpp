#include "msfner/encoder.hpp"

#include <cmath>

#include "binary_io.hpp"
#include "msfner/error.hpp"
#include "msfner/rng.hpp"

namespace msfner {

namespace {

constexpr char kEmbeddingMagic[4] = {'M', 'S', 'F', 'E'};
constexpr std::uint32_t kEmbeddingVersion = 1;

Tensor xavier(std::size_t fan_in, std::size_t fan_out, Rng& rng) {
    const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    Tensor t({fan_in, fan_out});
    for (double& v : t.data()) v = rng.uniform(-a, a);
    return t;
}

}  // namespace

Vocab::Vocab() { add(kUnkToken); }

Vocab Vocab::build(std::span<const Sentence> sentences) {
    Vocab v;
    for (const Sentence& s : sentences) {
        for (const std::string& tok : s.tokens) v.add(tok);
    }
    return v;
}

std::size_t Vocab::add(const std::string& token) {
    auto [it, inserted] = index_.emplace(token, tokens_.size());
    if (inserted) tokens_.push_back(token);
    return it->second;
}

std::size_t Vocab::index(const std::string& token) const {
    auto it = index_.find(token);
    return it == index_.end() ? kUnk : it->second;
}

EmbeddingStore load_embedding_file(const std::string& path) {
    detail::BinaryReader in(path, "embedding");
    in.expect_magic(kEmbeddingMagic);
    const std::uint32_t version = in.u32();
    if (version != kEmbeddingVersion) {
        throw FormatError(FormatError::Kind::BadVersion,
                          "embedding: unsupported version " + std::to_string(version));
    }
    const std::uint32_t count = in.u32();
    const std::uint32_t dim = in.u32();
    if (count > 0 && dim == 0) {
        throw FormatError(FormatError::Kind::Inconsistent, "embedding: zero dimension");
    }
    EmbeddingStore store;
    for (std::uint32_t s = 0; s < count; ++s) {
        std::string id = in.str();
        const std::uint32_t n = in.u32();
        if (n == 0) {
            throw FormatError(FormatError::Kind::Inconsistent,
                              "embedding: sentence '" + id + "' has no tokens");
        }
        in.need(static_cast<std::size_t>(n) * dim * 4);
        Tensor m({n, dim});
        for (double& v : m.data()) {
            const float f = in.f32();
            if (!std::isfinite(f)) {
                throw FormatError(FormatError::Kind::NonFinite,
                                  "embedding: non-finite value in sentence '" + id + "'");
            }
            v = f;
        }
        if (!store.emplace(id, std::move(m)).second) {
            throw FormatError(FormatError::Kind::Inconsistent,
                              "embedding: duplicate sentence id '" + id + "'");
        }
    }
    if (!in.at_end()) {
        throw FormatError(FormatError::Kind::Inconsistent,
                          "embedding: " + std::to_string(in.remaining()) + " trailing bytes");
    }
    return store;
}

void write_embedding_file(const std::string& path, const EmbeddingStore& store) {
    std::uint32_t dim = 0;
    for (const auto& [id, m] : store) {
        if (dim == 0) dim = static_cast<std::uint32_t>(m.cols());
        if (m.rank() != 2 || m.cols() != dim) {
            throw DataError("embedding: inconsistent dimension for sentence '" + id + "'");
        }
    }
    detail::BinaryWriter out;
    out.raw(std::string(kEmbeddingMagic, 4));
    out.u32(kEmbeddingVersion);
    out.u32(static_cast<std::uint32_t>(store.size()));
    out.u32(dim);
    for (const auto& [id, m] : store) {
        out.str(id);
        out.u32(static_cast<std::uint32_t>(m.rows()));
        for (double v : m.data()) out.f32(static_cast<float>(v));
    }
    out.save(path);
}

void merge_embeddings(EmbeddingStore& into, const EmbeddingStore& extra) {
    for (const auto& [id, m] : extra) {
        if (!into.emplace(id, m).second) {
            throw DataError("embedding: sentence id '" + id + "' appears in several files");
        }
    }
}

std::string to_string(EncoderMode mode) {
    return mode == EncoderMode::Trainable ? "trainable" : "precomputed";
}

EncoderMode parse_encoder_mode(const std::string& s) {
    if (s == "trainable") return EncoderMode::Trainable;
    if (s == "precomputed") return EncoderMode::Precomputed;
    throw ConfigError("encoder mode must be 'trainable' or 'precomputed', got '" + s + "'");
}

void EncoderConfig::validate() const {
    if (hidden_dim == 0) throw ConfigError("encoder hidden_dim must be positive");
    if (mode == EncoderMode::Trainable && (embed_dim == 0 || vocab_size == 0)) {
        throw ConfigError("trainable encoder needs positive embed_dim and vocab_size");
    }
    if (mode == EncoderMode::Precomputed && input_dim == 0) {
        throw ConfigError("precomputed encoder needs a positive input_dim");
    }
    if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("dropout must be in [0, 1)");
    if (max_len == 0) throw ConfigError("max_len must be positive");
}

Encoder::Encoder(EncoderConfig config, Vocab vocab) : config_(config), vocab_(std::move(vocab)) {
    config_.mode = EncoderMode::Trainable;
    config_.vocab_size = vocab_.size();
    config_.validate();
}

Encoder::Encoder(EncoderConfig config, std::shared_ptr<const EmbeddingStore> embeddings)
    : config_(config), embeddings_(std::move(embeddings)) {
    config_.mode = EncoderMode::Precomputed;
    if (!embeddings_) throw ConfigError("precomputed encoder without embeddings");
    if (config_.input_dim == 0 && !embeddings_->empty()) {
        config_.input_dim = embeddings_->begin()->second.cols();
    }
    config_.validate();
    for (const auto& [id, m] : *embeddings_) {
        if (m.cols() != config_.input_dim) {
            throw DataError("embedding for sentence '" + id + "' has dimension " +
                            std::to_string(m.cols()) + ", expected " +
                            std::to_string(config_.input_dim));
        }
    }
}

ParamSet Encoder::init_params(std::uint64_t seed) const {
    Rng rng(mix_seed(seed, 0xE1C0DE));
    ParamSet p;
    if (config_.mode == EncoderMode::Trainable) {
        Tensor emb({config_.vocab_size, config_.embed_dim});
        for (double& v : emb.data()) v = 0.5 * rng.normal();
        p.emplace("encoder.embedding", std::move(emb));
        const std::size_t window = 2 * config_.context_radius + 1;
        p.emplace("encoder.weight", xavier(window * config_.embed_dim, config_.hidden_dim, rng));
    } else if (config_.input_dim == config_.hidden_dim) {
        p.emplace("encoder.projection", Tensor::identity(config_.hidden_dim));
    } else {
        p.emplace("encoder.projection", xavier(config_.input_dim, config_.hidden_dim, rng));
    }
    p.emplace("encoder.bias", Tensor({config_.hidden_dim}, 0.0));
    return p;
}

void Encoder::check_sentence(const Sentence& sentence) const {
    if (sentence.tokens.empty()) throw DataError("sentence '" + sentence.id + "' is empty");
    if (sentence.tokens.size() > config_.max_len) {
        throw DataError("sentence '" + sentence.id + "' has " +
                        std::to_string(sentence.tokens.size()) + " tokens, max is " +
                        std::to_string(config_.max_len));
    }
    if (config_.mode == EncoderMode::Precomputed) {
        auto it = embeddings_->find(sentence.id);
        if (it == embeddings_->end()) {
            throw DataError("no precomputed embeddings for sentence '" + sentence.id + "'");
        }
        if (it->second.rows() != sentence.tokens.size()) {
            throw DataError("precomputed embeddings for sentence '" + sentence.id + "' have " +
                            std::to_string(it->second.rows()) + " rows, sentence has " +
                            std::to_string(sentence.tokens.size()) + " tokens");
        }
    }
}

Var Encoder::encode(Graph& g, const VarMap& vars, const Sentence& sentence, bool train,
                    std::uint64_t seed) const {
    check_sentence(sentence);
    const std::size_t n = sentence.tokens.size();
    const Var& bias = param(vars, "encoder.bias");
    if (config_.mode == EncoderMode::Precomputed) {
        Var v = g.constant(embeddings_->at(sentence.id));
        return ops::add_row_broadcast(ops::matmul(v, param(vars, "encoder.projection")), bias);
    }

    std::vector<std::size_t> ids(n);
    for (std::size_t i = 0; i < n; ++i) ids[i] = vocab_.index(sentence.tokens[i]);
    const Var& table = param(vars, "encoder.embedding");
    const auto r = static_cast<std::ptrdiff_t>(config_.context_radius);
    std::vector<Var> windows;
    std::vector<std::size_t> rows(n);
    for (std::ptrdiff_t off = -r; off <= r; ++off) {
        for (std::size_t i = 0; i < n; ++i) {
            const std::ptrdiff_t j = static_cast<std::ptrdiff_t>(i) + off;
            rows[i] = (j < 0 || j >= static_cast<std::ptrdiff_t>(n)) ? kPadRow
                                                                       : ids[static_cast<std::size_t>(j)];
        }
        windows.push_back(ops::gather_rows(table, rows));
    }
    Var x = ops::concat_cols(windows);
    Var h = ops::relu(ops::add_row_broadcast(ops::matmul(x, param(vars, "encoder.weight")), bias));
    return ops::dropout(h, config_.dropout, seed, train);
}

Tensor Encoder::encode_value(const ParamSet& params, const Sentence& sentence) const {
    Graph g;
    VarMap vars;
    for (const auto& [name, t] : params) {
        if (name.rfind("encoder.", 0) == 0) vars.emplace(name, g.constant(t));
    }
    return encode(g, vars, sentence, false, 0).value();
}

}  // namespace msfner
