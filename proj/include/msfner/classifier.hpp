#pragma once

// Entity classification head: span max-pooling, the projection network and
// entity-aware contrastive loss used while training, and distance-based
// prototype classification.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "msfner/autodiff.hpp"
#include "msfner/crf.hpp"
#include "msfner/params.hpp"

namespace msfner {

/// Ordered entity-type names of one episode.
using LabelSet = std::vector<std::string>;

/// Throws DataError when `labels` is empty or has duplicates.
void validate_label_set(const LabelSet& labels);
/// Position of `type` in `labels`; DataError if absent.
std::size_t label_index(const LabelSet& labels, const std::string& type);

/// Probability over the types of a LabelSet.
using TypeDistribution = std::vector<double>;

/// Index of the largest entry; ties go to the lowest index.
std::size_t argmax(const TypeDistribution& p);

enum class SimilarityMode { Auto, GaussianKl, NegSqEuclid };
enum class DistanceKind { SqEuclid, Euclid };

std::string to_string(SimilarityMode mode);
SimilarityMode parse_similarity_mode(const std::string& s);
std::string to_string(DistanceKind kind);
DistanceKind parse_distance_kind(const std::string& s);

/// Auto picks Gaussian KL for K > 1 and negative squared Euclidean for K = 1.
SimilarityMode resolve_similarity(SimilarityMode mode, std::size_t k_shot);

struct ContrastiveConfig {
    double temperature = 0.1;
    SimilarityMode mode = SimilarityMode::Auto;
    std::size_t proj_dim = 32;
};

struct ProjectionOutput {
    std::vector<double> mean;
    std::vector<double> log_var;
};

struct Prototypes {
    LabelSet labels;
    Tensor centers;  // N x d, row t belongs to labels[t]
};

/// Elementwise max of rows [start, end] of h.
std::vector<double> pool_span(const Tensor& h, std::size_t start, std::size_t end);

/// Similarity of two projections; larger is more similar. Gaussian KL mode
/// returns -(KL(a||b) + KL(b||a)) / 2 over diagonal Gaussians; the Euclidean
/// mode returns -||mean_a - mean_b||^2 and ignores the variances.
double similarity(const ProjectionOutput& a, const ProjectionOutput& b, SimilarityMode mode);

/// Parameter names "proj.*": a ReLU hidden layer of width `input_dim`
/// followed by mean and log-variance heads of width `proj_dim`.
ParamSet init_projection_params(std::size_t input_dim, std::size_t proj_dim, std::uint64_t seed);

ProjectionOutput project(std::span<const double> embedding, const ParamSet& params);

/// Supervised contrastive loss over a batch of projections. Anchors without a
/// positive contribute nothing. `config.mode` must not be Auto.
double contrastive_loss(std::span<const ProjectionOutput> batch, std::span<const std::size_t> labels,
                        const ContrastiveConfig& config);

/// Mean embedding per type. `labels[i]` indexes `label_set` for
/// `embeddings[i]`.
Prototypes prototypes(std::span<const std::vector<double>> embeddings,
                      std::span<const std::size_t> labels, const LabelSet& label_set);

/// softmax over -d(center_t, embedding).
TypeDistribution proto_distribution(std::span<const double> embedding, const Prototypes& protos,
                                    DistanceKind distance = DistanceKind::SqEuclid);

/// -sum_k log p_k[gold_k].
double ec_loss(std::span<const TypeDistribution> dists, std::span<const std::size_t> gold);

namespace head {

/// Max-pooled rows of h for each span, stacked into an m x d matrix.
Var pool_spans(const Var& h, std::span<const crf::EntitySpan> spans);

struct Projection {
    Var mean;
    Var log_var;
};

/// Projects every row of an m x d matrix of entity embeddings.
Projection project(const VarMap& vars, const Var& embeddings);

/// m x m similarity matrix between all projections.
Var similarity_matrix(const Projection& z, SimilarityMode mode);

/// Contrastive loss from an m x m similarity matrix. Needs m >= 2.
Var contrastive_loss(const Var& sim, std::span<const std::size_t> labels, double temperature);

/// N x d prototype matrix; every type in [0, n_types) needs a member.
Var prototypes(const Var& embeddings, std::span<const std::size_t> labels, const LabelSet& label_set);

/// m x N log-probabilities of each embedding under the prototype softmax.
Var proto_log_probs(const Var& embeddings, const Var& centers, DistanceKind distance);

/// Summed negative log-probability of the gold types.
Var ec_loss(const Var& log_probs, std::span<const std::size_t> gold);

}  // namespace head

}  // namespace msfner
