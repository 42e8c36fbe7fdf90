#pragma once

// Inference: nearest-neighbour datastore over support entities, interpolation
// with the prototype classifier and the two-stage decode of query sentences.

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "msfner/classifier.hpp"
#include "msfner/crf.hpp"
#include "msfner/encoder.hpp"
#include "msfner/episodes.hpp"
#include "msfner/params.hpp"

namespace msfner {

struct DecoderConfig {
    std::size_t k = 10;
    double lambda = 0.1;
    double temperature = 1.0;  // KNN vote temperature
    DistanceKind distance = DistanceKind::SqEuclid;  // prototype distance

    void validate() const;
};

/// Support entity embeddings keyed for nearest-neighbour lookup. Keys are
/// held at float32 precision, the precision of the file format, so a store
/// behaves the same whether built in memory or loaded.
struct Datastore {
    LabelSet labels;
    Tensor keys;                      // m x d
    std::vector<std::size_t> values;  // label index per key

    std::size_t size() const noexcept { return values.size(); }
    std::size_t dim() const { return keys.cols(); }
};

Datastore make_datastore(LabelSet labels, std::span<const std::vector<double>> keys,
                         std::vector<std::size_t> values);

/// One entry per gold support entity, keyed by its max-pooled eval-mode
/// encoding.
Datastore build_datastore(const Encoder& encoder, const ParamSet& params,
                          std::span<const AnnotatedSentence> support, const LabelSet& labels);

/// "MSFD" binary file, written atomically.
void save_datastore(const std::string& path, const Datastore& store);
Datastore load_datastore(const std::string& path);

/// Prototypes from the gold support spans under eval-mode encodings.
Prototypes support_prototypes(const Encoder& encoder, const ParamSet& params,
                              std::span<const AnnotatedSentence> support, const LabelSet& labels);

/// Distance-weighted vote of the min(k, size) nearest keys (squared
/// Euclidean, ties to the earlier entry): p(y) is proportional to the sum of
/// exp(-dist / temperature) over retrieved entries labelled y.
TypeDistribution knn_distribution(std::span<const double> embedding, const Datastore& store,
                                  const DecoderConfig& config);

/// lambda * p_knn + (1 - lambda) * p_soft.
TypeDistribution interpolate(const TypeDistribution& p_knn, const TypeDistribution& p_soft, double lambda);

struct TypedPrediction {
    crf::EntitySpan span;  // span.type holds the predicted type
    TypeDistribution p;
};

using SentencePrediction = std::vector<TypedPrediction>;

/// Viterbi span detection with the ESD model, then per-span typing by the
/// interpolated KNN/prototype distribution.
SentencePrediction infer_sentence(const Sentence& sentence, const Encoder& esd_encoder, const ParamSet& esd_params,
                                  const Encoder& ec_encoder, const ParamSet& ec_params, const Datastore& store,
                                  const Prototypes& protos, const DecoderConfig& config);

std::vector<SentencePrediction> infer(std::span<const Sentence> query, const Encoder& esd_encoder,
                                      const ParamSet& esd_params, const Encoder& ec_encoder,
                                      const ParamSet& ec_params, const Datastore& store, const Prototypes& protos,
                                      const DecoderConfig& config);

/// One JSON-lines record of inference output.
struct PredictionRecord {
    std::string id;
    std::optional<std::size_t> episode;
    SentencePrediction spans;
};

std::string prediction_to_json(const PredictionRecord& record);
PredictionRecord prediction_from_json(const std::string& line);
std::vector<PredictionRecord> read_predictions(const std::string& path);
/// Atomic write; an empty list produces an empty file.
void write_predictions(const std::string& path, std::span<const PredictionRecord> records);

}  // namespace msfner
