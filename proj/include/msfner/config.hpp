#pragma once

// Flat "key = value" run configuration shared by every CLI command.

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "msfner/encoder.hpp"
#include "msfner/episodes.hpp"
#include "msfner/knn_decoder.hpp"
#include "msfner/meta_trainer.hpp"

namespace msfner {

struct ConfigKey {
    std::string name;
    std::string default_value;  // empty: unset
    std::string help;
};

/// Every recognised key, in dump order.
const std::vector<ConfigKey>& config_keys();

class RunConfig {
public:
    /// All keys at their defaults.
    RunConfig();

    /// Throws ConfigError for unknown keys.
    void set(const std::string& key, const std::string& value);
    const std::string& get(const std::string& key) const;
    bool is_set(const std::string& key) const { return !get(key).empty(); }

    /// Applies "key = value" lines; '#' starts a comment.
    void merge_text(const std::string& text, const std::string& source = "<config>");
    void merge_file(const std::string& path);

    /// Fills an unset seed from MSFNER_SEED, or 0.
    void resolve_seed();

    /// "key = value" per line in config_keys() order; unset keys are written
    /// with an empty value.
    std::string dump() const;
    const std::map<std::string, std::string>& values() const noexcept { return values_; }

    std::size_t get_size(const std::string& key) const;
    double get_double(const std::string& key) const;
    bool get_bool(const std::string& key) const;
    std::uint64_t seed() const;
    /// Non-empty value of a path key, or a ConfigError naming the key.
    const std::string& require(const std::string& key) const;

    EncoderConfig encoder_config() const;
    TrainerConfig trainer_config() const;
    DecoderConfig decoder_config() const;
    CorpusFormat corpus_format() const;

    /// Parses every typed key and runs each module's validation.
    void validate() const;

private:
    std::map<std::string, std::string> values_;
};

}  // namespace msfner
