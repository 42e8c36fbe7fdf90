#pragma once

// First-order MAML training of the span detector and the entity classifier,
// support-set fine-tuning and checkpoint files.

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "msfner/classifier.hpp"
#include "msfner/encoder.hpp"
#include "msfner/episodes.hpp"
#include "msfner/error.hpp"
#include "msfner/params.hpp"

namespace msfner {

enum class ModelKind { Esd, Ec };

std::string to_string(ModelKind kind);
ModelKind parse_model_kind(const std::string& s);

enum class OuterOptimizer { Sgd, Adaptive };

std::string to_string(OuterOptimizer opt);
OuterOptimizer parse_outer_optimizer(const std::string& s);

struct TrainerConfig {
    double inner_lr = 1e-2;
    double outer_lr = 3e-5;
    OuterOptimizer outer = OuterOptimizer::Adaptive;
    AdamConfig adam;
    std::size_t batch_size = 32;
    std::size_t steps = 1000;
    double contrastive_weight = 1.0;
    std::size_t finetune_steps = 20;
    std::size_t valid_interval = 100;
    std::size_t valid_episodes = 16;
    std::size_t n_way = 5;
    std::size_t k_shot = 1;
    std::size_t query_k = 0;
    ContrastiveConfig contrastive;
    DistanceKind distance = DistanceKind::SqEuclid;
    bool float32 = false;  // round parameters to float after every update
    std::uint64_t seed = 0;

    void validate() const;
};

/// Fresh parameters for one model: encoder plus CRF (ESD) or projection
/// head (EC).
ParamSet init_model_params(ModelKind kind, const Encoder& encoder, const TrainerConfig& config,
                           std::uint64_t seed);

// Loss builders. Dropout masks are derived from `seed` and the sentence
// position, so two calls with the same seed see identical masks.

/// Mean CRF negative log-likelihood per sentence.
Var esd_loss(Graph& g, const VarMap& vars, const Encoder& encoder,
             std::span<const AnnotatedSentence> sentences, bool train, std::uint64_t seed);

/// Max-pooled embeddings of every gold span, m x d, with label indices.
struct EntityBatch {
    Var embeddings;
    std::vector<std::size_t> labels;
};

EntityBatch entity_batch(Graph& g, const VarMap& vars, const Encoder& encoder,
                         std::span<const AnnotatedSentence> sentences, const LabelSet& labels, bool train,
                         std::uint64_t seed);

/// Prototype loss on the support plus `contrastive_weight` times the
/// contrastive loss (skipped when the weight is 0 or the support holds fewer
/// than two entities).
Var ec_support_loss(Graph& g, const VarMap& vars, const Encoder& encoder, const Episode& episode,
                    const TrainerConfig& config, bool train, std::uint64_t seed);

/// Prototype loss of the query's gold spans against support prototypes.
/// When `log_probs` is given it receives the m x N query log-probabilities.
Var ec_query_loss(Graph& g, const VarMap& vars, const Encoder& encoder, const Episode& episode,
                  const TrainerConfig& config, bool train, std::uint64_t seed, Tensor* log_probs = nullptr);

/// Viterbi decode of one sentence with an ESD model, as untyped spans.
std::vector<crf::EntitySpan> detect_spans(const Encoder& encoder, const ParamSet& params,
                                          const Sentence& sentence);

/// One gradient step on `support_loss`; `params` is left untouched.
ParamSet inner_update(const ParamSet& params, const LossFn& support_loss, double alpha);

struct StepMetrics {
    double query_loss = 0.0;    // mean over tasks, at the adapted parameters
    double support_loss = 0.0;  // mean over tasks, before adaptation
    std::map<std::string, double> type_loss;  // EC only: summed query loss per type
};

struct MetaStepResult {
    ParamSet params;
    AdamState state;
    StepMetrics metrics;
};

/// Adapts to each task's support, then applies the summed query gradients
/// (taken at the adapted parameters) to the base parameters.
MetaStepResult meta_step_esd(const Encoder& encoder, const ParamSet& params, const AdamState& state,
                             std::span<const Episode> episodes, const TrainerConfig& config,
                             std::uint64_t seed);
MetaStepResult meta_step_ec(const Encoder& encoder, const ParamSet& params, const AdamState& state,
                            std::span<const Episode> episodes, const TrainerConfig& config,
                            std::uint64_t seed);
MetaStepResult meta_step(ModelKind kind, const Encoder& encoder, const ParamSet& params,
                         const AdamState& state, std::span<const Episode> episodes,
                         const TrainerConfig& config, std::uint64_t seed);

/// Mean validation score after one support step per episode: span F1 of the
/// Viterbi decode (ESD) or type accuracy on gold query spans (EC).
double validation_score(ModelKind kind, const Encoder& encoder, const ParamSet& params,
                        std::span<const Episode> episodes, const TrainerConfig& config);

struct Checkpoint {
    ModelKind kind = ModelKind::Esd;
    ParamSet params;
    std::map<std::string, std::string> config;  // opaque key/value snapshot
    std::vector<std::string> vocab;             // trainable encoders only
    std::uint64_t step = 0;
    double valid_score = 0.0;
};

/// "MSFC" binary file. Tensors are stored as float32 when `float32` is set,
/// float64 otherwise. Written atomically.
void save_checkpoint(const std::string& path, const Checkpoint& checkpoint, bool float32 = false);
Checkpoint load_checkpoint(const std::string& path);

struct MetricsRow {
    std::size_t step = 0;
    std::optional<double> train_loss;  // absent for the step-0 validation row
    std::optional<double> valid_score;
};

struct TrainResult {
    Checkpoint best;
    std::vector<MetricsRow> log;
};

/// Thrown when a loss turns non-finite mid-training; carries the best
/// checkpoint seen so far.
class TrainingAborted : public NumericError {
public:
    TrainingAborted(const std::string& what, Checkpoint last_good, std::vector<MetricsRow> log)
        : NumericError(what), last_good(std::move(last_good)), log(std::move(log)) {}
    Checkpoint last_good;
    std::vector<MetricsRow> log;
};

/// Meta-trains for config.steps steps on episodes sampled from `corpus`,
/// scoring a fixed set of `valid` episodes at step 0, every valid_interval
/// steps and at the end. Returns the best-scoring checkpoint (earliest on
/// ties). `on_row` sees each metrics row as it is produced.
TrainResult train(ModelKind kind, const Encoder& encoder, const ParamSet& init, const Corpus& corpus,
                  const Corpus& valid, const TrainerConfig& config,
                  const std::function<void(const MetricsRow&)>& on_row = {});

/// Plain gradient descent with the inner learning rate on the support loss
/// of a single labeled set (CRF loss for ESD, prototype plus contrastive
/// loss for EC).
ParamSet finetune(ModelKind kind, const Encoder& encoder, const ParamSet& params, const Episode& support,
                  const TrainerConfig& config);

/// Support loss used by finetune, evaluated without dropout.
double support_loss(ModelKind kind, const Encoder& encoder, const ParamSet& params, const Episode& support,
                    const TrainerConfig& config);

}  // namespace msfner
