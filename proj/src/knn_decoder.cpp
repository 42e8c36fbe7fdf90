#include "msfner/knn_decoder.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "binary_io.hpp"
#include "json.hpp"
#include "msfner/error.hpp"
#include "msfner/meta_trainer.hpp"

namespace msfner {

namespace {

using nlohmann::json;

constexpr char kMagic[4] = {'M', 'S', 'F', 'D'};
constexpr std::uint32_t kVersion = 1;

double sq_distance(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        s += d * d;
    }
    return s;
}

void gold_entities(const Encoder& encoder, const ParamSet& params, std::span<const AnnotatedSentence> support,
                   const LabelSet& labels, std::vector<std::vector<double>>& keys,
                   std::vector<std::size_t>& values) {
    for (const auto& s : support) {
        if (s.spans.empty()) continue;
        const Tensor h = encoder.encode_value(params, s.sentence);
        for (const auto& sp : s.spans) {
            keys.push_back(pool_span(h, sp.start, sp.end));
            values.push_back(label_index(labels, sp.type));
        }
    }
    if (keys.empty()) throw DataError("support set has no gold entities");
}

}  // namespace

void DecoderConfig::validate() const {
    if (k == 0) throw ConfigError("knn k must be at least 1");
    if (!(lambda >= 0.0 && lambda <= 1.0)) throw ConfigError("lambda must lie in [0, 1]");
    if (!(temperature > 0.0) || !std::isfinite(temperature)) throw ConfigError("knn temperature must be positive");
}

Datastore make_datastore(LabelSet labels, std::span<const std::vector<double>> keys,
                         std::vector<std::size_t> values) {
    validate_label_set(labels);
    if (keys.empty()) throw DataError("datastore needs at least one entry");
    if (keys.size() != values.size()) throw DataError("datastore: key and value counts differ");
    const std::size_t d = keys[0].size();
    Datastore store;
    store.keys = Tensor({keys.size(), d});
    for (std::size_t i = 0; i < keys.size(); ++i) {
        if (keys[i].size() != d) throw DataError("datastore: keys differ in dimension");
        if (values[i] >= labels.size()) throw DataError("datastore: label index out of range");
        for (std::size_t j = 0; j < d; ++j) store.keys.at(i, j) = static_cast<float>(keys[i][j]);
    }
    if (!store.keys.all_finite()) throw NumericError("datastore: non-finite key");
    store.labels = std::move(labels);
    store.values = std::move(values);
    return store;
}

Datastore build_datastore(const Encoder& encoder, const ParamSet& params,
                          std::span<const AnnotatedSentence> support, const LabelSet& labels) {
    std::vector<std::vector<double>> keys;
    std::vector<std::size_t> values;
    gold_entities(encoder, params, support, labels, keys, values);
    return make_datastore(labels, keys, std::move(values));
}

void save_datastore(const std::string& path, const Datastore& store) {
    detail::BinaryWriter w;
    w.raw(std::string(kMagic, 4));
    w.u32(kVersion);
    w.u32(static_cast<std::uint32_t>(store.size()));
    w.u32(static_cast<std::uint32_t>(store.dim()));
    w.u32(static_cast<std::uint32_t>(store.labels.size()));
    for (const auto& l : store.labels) w.str(l);
    for (std::size_t i = 0; i < store.size(); ++i) {
        w.u32(static_cast<std::uint32_t>(store.values[i]));
        for (double v : store.keys.row(i)) w.f32(static_cast<float>(v));
    }
    w.save(path);
}

Datastore load_datastore(const std::string& path) {
    using Kind = FormatError::Kind;
    detail::BinaryReader r(path, "datastore");
    r.expect_magic(kMagic);
    const auto version = r.u32();
    if (version != kVersion) {
        throw FormatError(Kind::BadVersion, "datastore: unsupported version " + std::to_string(version));
    }
    const std::uint32_t count = r.u32(), dim = r.u32();
    if (count == 0 || dim == 0) throw FormatError(Kind::Inconsistent, "datastore: empty store or zero dimension");
    LabelSet labels(r.u32());
    for (auto& l : labels) l = r.str();
    Datastore store;
    store.keys = Tensor({count, dim});
    store.values.resize(count);
    for (std::uint32_t i = 0; i < count; ++i) {
        store.values[i] = r.u32();
        if (store.values[i] >= labels.size()) {
            throw FormatError(Kind::Inconsistent, "datastore: label index out of range");
        }
        r.need(4 * std::size_t{dim});
        for (std::uint32_t j = 0; j < dim; ++j) store.keys.at(i, j) = r.f32();
    }
    if (!store.keys.all_finite()) throw FormatError(Kind::NonFinite, "datastore: non-finite key");
    if (!r.at_end()) throw FormatError(Kind::Inconsistent, "datastore: trailing bytes");
    try {
        validate_label_set(labels);
    } catch (const Error& e) {
        throw FormatError(Kind::Inconsistent, std::string("datastore: ") + e.what());
    }
    store.labels = std::move(labels);
    return store;
}

Prototypes support_prototypes(const Encoder& encoder, const ParamSet& params,
                              std::span<const AnnotatedSentence> support, const LabelSet& labels) {
    std::vector<std::vector<double>> keys;
    std::vector<std::size_t> values;
    gold_entities(encoder, params, support, labels, keys, values);
    return prototypes(keys, values, labels);
}

TypeDistribution knn_distribution(std::span<const double> embedding, const Datastore& store,
                                  const DecoderConfig& config) {
    if (store.size() == 0) throw DataError("knn lookup in an empty datastore");
    if (embedding.size() != store.dim()) {
        throw DataError("knn: embedding has dimension " + std::to_string(embedding.size()) + ", datastore has " +
                        std::to_string(store.dim()));
    }
    std::vector<double> dist(store.size());
    for (std::size_t i = 0; i < store.size(); ++i) dist[i] = sq_distance(embedding, store.keys.row(i));
    std::vector<std::size_t> order(store.size());
    std::iota(order.begin(), order.end(), 0);
    const std::size_t k = std::min(config.k, store.size());
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(),
                      [&](std::size_t a, std::size_t b) { return dist[a] < dist[b] || (dist[a] == dist[b] && a < b); });
    // shifting by the nearest distance leaves the normalized vote unchanged
    const double nearest = dist[order[0]];
    TypeDistribution p(store.labels.size(), 0.0);
    double total = 0.0;
    for (std::size_t i = 0; i < k; ++i) {
        const double w = std::exp(-(dist[order[i]] - nearest) / config.temperature);
        p[store.values[order[i]]] += w;
        total += w;
    }
    for (double& v : p) v /= total;
    return p;
}

TypeDistribution interpolate(const TypeDistribution& p_knn, const TypeDistribution& p_soft, double lambda) {
    if (!(lambda >= 0.0 && lambda <= 1.0)) throw ConfigError("lambda must lie in [0, 1]");
    if (p_knn.size() != p_soft.size()) {
        throw DataError("interpolate: distributions over " + std::to_string(p_knn.size()) + " and " +
                        std::to_string(p_soft.size()) + " types");
    }
    TypeDistribution p(p_knn.size());
    for (std::size_t i = 0; i < p.size(); ++i) p[i] = lambda * p_knn[i] + (1.0 - lambda) * p_soft[i];
    return p;
}

SentencePrediction infer_sentence(const Sentence& sentence, const Encoder& esd_encoder, const ParamSet& esd_params,
                                  const Encoder& ec_encoder, const ParamSet& ec_params, const Datastore& store,
                                  const Prototypes& protos, const DecoderConfig& config) {
    SentencePrediction out;
    const auto spans = detect_spans(esd_encoder, esd_params, sentence);
    if (spans.empty()) return out;
    const Tensor h = ec_encoder.encode_value(ec_params, sentence);
    for (const auto& sp : spans) {
        const auto e = pool_span(h, sp.start, sp.end);
        auto p = interpolate(knn_distribution(e, store, config), proto_distribution(e, protos, config.distance),
                             config.lambda);
        TypedPrediction pred{{sp.start, sp.end, store.labels[argmax(p)]}, std::move(p)};
        out.push_back(std::move(pred));
    }
    return out;
}

std::vector<SentencePrediction> infer(std::span<const Sentence> query, const Encoder& esd_encoder,
                                      const ParamSet& esd_params, const Encoder& ec_encoder,
                                      const ParamSet& ec_params, const Datastore& store, const Prototypes& protos,
                                      const DecoderConfig& config) {
    config.validate();
    if (protos.labels != store.labels) throw DataError("prototypes and datastore use different label sets");
    if (protos.centers.cols() != store.dim()) {
        throw DataError("prototypes have dimension " + std::to_string(protos.centers.cols()) +
                        ", datastore keys have " + std::to_string(store.dim()));
    }
    if (ec_encoder.output_dim() != store.dim()) {
        throw DataError("encoder output dimension " + std::to_string(ec_encoder.output_dim()) +
                        " does not match datastore dimension " + std::to_string(store.dim()));
    }
    std::vector<SentencePrediction> out;
    out.reserve(query.size());
    for (const auto& s : query) {
        out.push_back(infer_sentence(s, esd_encoder, esd_params, ec_encoder, ec_params, store, protos, config));
    }
    return out;
}

std::string prediction_to_json(const PredictionRecord& record) {
    json spans = json::array();
    for (const auto& p : record.spans) {
        spans.push_back({{"start", p.span.start}, {"end", p.span.end}, {"type", p.span.type}, {"p", p.p}});
    }
    json j{{"id", record.id}, {"spans", spans}};
    if (record.episode) j["episode"] = *record.episode;
    return j.dump();
}

PredictionRecord prediction_from_json(const std::string& line) {
    try {
        const json j = json::parse(line);
        PredictionRecord r;
        r.id = j.at("id").get<std::string>();
        if (j.contains("episode")) r.episode = j.at("episode").get<std::size_t>();
        for (const auto& s : j.at("spans")) {
            TypedPrediction p;
            p.span = {s.at("start").get<std::size_t>(), s.at("end").get<std::size_t>(), s.at("type").get<std::string>()};
            if (s.contains("p")) p.p = s.at("p").get<std::vector<double>>();
            if (p.span.end < p.span.start) throw DataError("span end precedes start");
            r.spans.push_back(std::move(p));
        }
        return r;
    } catch (const json::exception& e) {
        throw DataError(std::string("malformed prediction record: ") + e.what());
    }
}

std::vector<PredictionRecord> read_predictions(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open predictions '" + path + "'");
    std::vector<PredictionRecord> out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            out.push_back(prediction_from_json(line));
        } catch (const DataError& e) {
            throw DataError(path + ":" + std::to_string(line_no) + ": " + e.what());
        }
    }
    return out;
}

void write_predictions(const std::string& path, std::span<const PredictionRecord> records) {
    detail::BinaryWriter w;
    for (const auto& r : records) w.raw(prediction_to_json(r) + "\n");
    w.save(path);
}

}  // namespace msfner
