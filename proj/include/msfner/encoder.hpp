#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "msfner/autodiff.hpp"
#include "msfner/params.hpp"

namespace msfner {

struct Sentence {
    std::string id;
    std::vector<std::string> tokens;
};

/// Token vocabulary. Index 0 is reserved for unknown tokens.
class Vocab {
public:
    static constexpr std::size_t kUnk = 0;
    static constexpr const char* kUnkToken = "<unk>";

    Vocab();

    /// Adds every token of every sentence, in order of first appearance.
    static Vocab build(std::span<const Sentence> sentences);

    std::size_t add(const std::string& token);
    std::size_t index(const std::string& token) const;
    std::size_t size() const noexcept { return tokens_.size(); }
    const std::vector<std::string>& tokens() const noexcept { return tokens_; }

private:
    std::vector<std::string> tokens_;
    std::unordered_map<std::string, std::size_t> index_;
};

/// Precomputed contextual vectors keyed by sentence id, one row per token.
using EmbeddingStore = std::map<std::string, Tensor>;

/// Reads the "MSFE" binary embedding file.
EmbeddingStore load_embedding_file(const std::string& path);
/// Writes the "MSFE" binary embedding file; values are stored as float32.
void write_embedding_file(const std::string& path, const EmbeddingStore& store);
/// Merges `extra` into `into`; duplicate ids are a DataError.
void merge_embeddings(EmbeddingStore& into, const EmbeddingStore& extra);

enum class EncoderMode { Trainable, Precomputed };

std::string to_string(EncoderMode mode);
EncoderMode parse_encoder_mode(const std::string& s);

struct EncoderConfig {
    EncoderMode mode = EncoderMode::Trainable;
    std::size_t vocab_size = 0;  // trainable: filled from the vocabulary
    std::size_t embed_dim = 32;
    std::size_t hidden_dim = 64;
    std::size_t input_dim = 0;  // precomputed: width of the stored vectors
    std::size_t context_radius = 1;
    double dropout = 0.2;
    std::size_t max_len = 128;

    void validate() const;
};

/// Token encoder: either a window-concatenation layer over a trainable
/// embedding table, or a trainable affine projection over precomputed
/// vectors. Parameter names are prefixed "encoder.".
class Encoder {
public:
    Encoder(EncoderConfig config, Vocab vocab);
    Encoder(EncoderConfig config, std::shared_ptr<const EmbeddingStore> embeddings);

    const EncoderConfig& config() const noexcept { return config_; }
    const Vocab& vocab() const noexcept { return vocab_; }
    std::size_t output_dim() const noexcept { return config_.hidden_dim; }

    ParamSet init_params(std::uint64_t seed) const;

    /// n x hidden_dim token encodings inside `g`. Dropout applies only when
    /// `train` is set, with a mask drawn from `seed`.
    Var encode(Graph& g, const VarMap& vars, const Sentence& sentence, bool train,
               std::uint64_t seed) const;

    /// Eval-mode encodings as a plain matrix.
    Tensor encode_value(const ParamSet& params, const Sentence& sentence) const;

    void check_sentence(const Sentence& sentence) const;

private:
    EncoderConfig config_;
    Vocab vocab_;
    std::shared_ptr<const EmbeddingStore> embeddings_;
};

}  // namespace msfner
