#include "msfner/config.hpp"

#include <charconv>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "msfner/error.hpp"

namespace msfner {

const std::vector<ConfigKey>& config_keys() {
    static const std::vector<ConfigKey> keys{
        {"seed", "", "random seed; falls back to MSFNER_SEED, then 0"},
        {"format", "bioes-typed", "corpus tag format: bioes-typed or io-typed"},
        {"train", "", "training corpus"},
        {"valid", "", "validation corpus"},
        {"corpus", "", "corpus to sample episodes from"},
        {"episodes", "", "episode file (JSON lines)"},
        {"support", "", "support corpus, used when no episode file is given"},
        {"query", "", "query corpus, used when no episode file is given"},
        {"gold", "", "gold corpus for eval, used when no episode file is given"},
        {"predictions", "", "prediction file (JSON lines)"},
        {"embeddings", "", "comma-separated MSFE embedding files"},
        {"esd_checkpoint", "", "span detector checkpoint"},
        {"ec_checkpoint", "", "entity classifier checkpoint"},
        {"finetuned", "", "output directory of a finetune run"},
        {"out", "", "output directory"},
        {"encoder", "trainable", "encoder mode: trainable or precomputed"},
        {"embed_dim", "32", "trainable encoder: token embedding width"},
        {"hidden_dim", "64", "encoder output width"},
        {"context_radius", "1", "trainable encoder: window radius"},
        {"dropout", "0.2", "dropout rate on encoder outputs"},
        {"max_len", "128", "maximum sentence length in tokens"},
        {"inner_lr", "1e-2", "inner-loop and finetune learning rate"},
        {"outer_lr", "3e-5", "meta learning rate"},
        {"optimizer", "adaptive", "outer optimizer: adaptive or sgd"},
        {"adam_beta1", "0.9", ""},
        {"adam_beta2", "0.999", ""},
        {"adam_eps", "1e-8", ""},
        {"weight_decay", "0.01", "decoupled weight decay of the adaptive optimizer"},
        {"batch_size", "32", "episodes per meta step"},
        {"steps", "1000", "meta-training steps"},
        {"finetune_steps", "20", "support finetuning steps"},
        {"valid_interval", "100", "steps between validations"},
        {"valid_episodes", "16", "fixed validation episodes"},
        {"n_way", "5", "types per episode"},
        {"k_shot", "1", "shots per type (K of K~2K)"},
        {"query_k", "0", "query shots; 0 reuses k_shot"},
        {"num_episodes", "10", "episodes written by sample-episodes"},
        {"contrastive_weight", "1.0", "weight of the contrastive term in the classifier loss"},
        {"contrastive_temperature", "0.1", ""},
        {"similarity", "auto", "contrastive similarity: auto, gaussian-kl or neg-sq-euclid"},
        {"proj_dim", "32", "projection head width"},
        {"distance", "sq-euclid", "prototype distance: sq-euclid or euclid"},
        {"float32", "false", "round parameters to float32 after every update"},
        {"knn_k", "10", "neighbours retrieved from the datastore"},
        {"lambda", "0.1", "weight of the KNN distribution"},
        {"knn_temperature", "1.0", "KNN vote temperature"},
    };
    return keys;
}

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

}  // namespace

RunConfig::RunConfig() {
    for (const auto& k : config_keys()) values_[k.name] = k.default_value;
}

void RunConfig::set(const std::string& key, const std::string& value) {
    auto it = values_.find(key);
    if (it == values_.end()) throw ConfigError("unknown config key '" + key + "'");
    it->second = trim(value);
}

const std::string& RunConfig::get(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) throw ConfigError("unknown config key '" + key + "'");
    return it->second;
}

void RunConfig::merge_text(const std::string& text, const std::string& source) {
    std::istringstream in(text);
    std::string line;
    for (std::size_t no = 1; std::getline(in, line); ++no) {
        if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        if (trim(line).empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw ConfigError(source + ":" + std::to_string(no) + ": expected 'key = value'");
        }
        const std::string key = trim(line.substr(0, eq));
        if (!values_.contains(key)) {
            throw ConfigError(source + ":" + std::to_string(no) + ": unknown config key '" + key + "'");
        }
        set(key, line.substr(eq + 1));
    }
}

void RunConfig::merge_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config file '" + path + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    merge_text(ss.str(), path);
}

void RunConfig::resolve_seed() {
    if (is_set("seed")) return;
    const char* env = std::getenv("MSFNER_SEED");
    set("seed", env && *env ? env : "0");
    try {
        seed();
    } catch (const ConfigError&) {
        throw ConfigError(std::string("MSFNER_SEED: expected a non-negative integer, got '") + env + "'");
    }
}

std::string RunConfig::dump() const {
    std::string s;
    for (const auto& k : config_keys()) {
        const std::string& v = get(k.name);
        s += k.name + (v.empty() ? " =\n" : " = " + v + "\n");
    }
    return s;
}

std::size_t RunConfig::get_size(const std::string& key) const {
    const std::string& v = get(key);
    std::size_t out = 0;
    auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (v.empty() || ec != std::errc() || p != v.data() + v.size()) {
        throw ConfigError(key + ": expected a non-negative integer, got '" + v + "'");
    }
    return out;
}

double RunConfig::get_double(const std::string& key) const {
    const std::string& v = get(key);
    char* end = nullptr;
    const double out = v.empty() ? 0.0 : std::strtod(v.c_str(), &end);
    if (v.empty() || end != v.c_str() + v.size() || !std::isfinite(out)) {
        throw ConfigError(key + ": expected a finite number, got '" + v + "'");
    }
    return out;
}

bool RunConfig::get_bool(const std::string& key) const {
    const std::string& v = get(key);
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw ConfigError(key + ": expected true or false, got '" + v + "'");
}

std::uint64_t RunConfig::seed() const {
    const std::string& v = get("seed");
    if (v.empty()) return 0;
    std::uint64_t out = 0;
    auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || p != v.data() + v.size()) {
        throw ConfigError("seed: expected a non-negative integer, got '" + v + "'");
    }
    return out;
}

const std::string& RunConfig::require(const std::string& key) const {
    const std::string& v = get(key);
    if (v.empty()) throw ConfigError(key + ": required path is not set");
    return v;
}

EncoderConfig RunConfig::encoder_config() const {
    EncoderConfig c;
    c.mode = parse_encoder_mode(get("encoder"));
    c.embed_dim = get_size("embed_dim");
    c.hidden_dim = get_size("hidden_dim");
    c.context_radius = get_size("context_radius");
    c.dropout = get_double("dropout");
    c.max_len = get_size("max_len");
    return c;
}

TrainerConfig RunConfig::trainer_config() const {
    TrainerConfig c;
    c.inner_lr = get_double("inner_lr");
    c.outer_lr = get_double("outer_lr");
    c.outer = parse_outer_optimizer(get("optimizer"));
    c.adam.beta1 = get_double("adam_beta1");
    c.adam.beta2 = get_double("adam_beta2");
    c.adam.eps = get_double("adam_eps");
    c.adam.weight_decay = get_double("weight_decay");
    c.batch_size = get_size("batch_size");
    c.steps = get_size("steps");
    c.contrastive_weight = get_double("contrastive_weight");
    c.finetune_steps = get_size("finetune_steps");
    c.valid_interval = get_size("valid_interval");
    c.valid_episodes = get_size("valid_episodes");
    c.n_way = get_size("n_way");
    c.k_shot = get_size("k_shot");
    c.query_k = get_size("query_k");
    c.contrastive.temperature = get_double("contrastive_temperature");
    c.contrastive.mode = parse_similarity_mode(get("similarity"));
    c.contrastive.proj_dim = get_size("proj_dim");
    c.distance = parse_distance_kind(get("distance"));
    c.float32 = get_bool("float32");
    c.seed = seed();
    return c;
}

DecoderConfig RunConfig::decoder_config() const {
    DecoderConfig c;
    c.k = get_size("knn_k");
    c.lambda = get_double("lambda");
    c.temperature = get_double("knn_temperature");
    c.distance = parse_distance_kind(get("distance"));
    return c;
}

CorpusFormat RunConfig::corpus_format() const { return parse_corpus_format(get("format")); }

void RunConfig::validate() const {
    EncoderConfig enc = encoder_config();
    if (enc.mode == EncoderMode::Trainable) enc.vocab_size = 1;  // filled from data later
    else enc.input_dim = 1;
    enc.validate();
    trainer_config().validate();
    decoder_config().validate();
    corpus_format();
    get_size("num_episodes");
    if (enc.mode == EncoderMode::Precomputed && !is_set("embeddings")) {
        throw ConfigError("embeddings: required path is not set (encoder = precomputed)");
    }
}

}  // namespace msfner
