#pragma once

// Linear-chain CRF over the BIOES tag set.
//
// Transition matrices are 7 x 7 and indexed [from][to] over the five tags plus
// START (row only) and STOP (column only). All scores are in the log domain.

#include <array>
#include <compare>
#include <cstdint>
#include <string>
#include <vector>

#include "msfner/autodiff.hpp"
#include "msfner/params.hpp"

namespace msfner::crf {

enum Tag : std::size_t { O = 0, B = 1, I = 2, E = 3, S = 4 };

inline constexpr std::size_t kNumTags = 5;
inline constexpr std::size_t kStart = 5;
inline constexpr std::size_t kStop = 6;
inline constexpr std::size_t kNumStates = 7;
/// Score written into forbidden transitions.
inline constexpr double kMaskScore = -1e4;

inline constexpr std::array<const char*, kNumTags> kTagNames = {"O", "B", "I", "E", "S"};

using TagSequence = std::vector<std::size_t>;

/// Inclusive token range [start, end] with an optional entity type.
struct EntitySpan {
    std::size_t start = 0;
    std::size_t end = 0;
    std::string type;

    auto operator<=>(const EntitySpan&) const = default;
};

/// Whether BIOES allows `from` -> `to` (START/STOP included).
bool transition_allowed(std::size_t from, std::size_t to);
/// 7 x 7 matrix of 1 (allowed) / 0 (forbidden).
Tensor transition_mask();
/// Copy of `trans` with forbidden entries replaced by kMaskScore.
Tensor masked_transitions(const Tensor& trans);
/// True if the sequence never takes a forbidden transition.
bool is_well_formed(const TagSequence& y);

/// trans[START,y0] + sum em[i,yi] + sum trans[y(i-1),yi] + trans[y(n-1),STOP].
double sequence_score(const Tensor& em, const Tensor& trans, const TagSequence& y);
/// log of the sum of exp(sequence_score) over all 5^n sequences (forward
/// algorithm).
double log_partition(const Tensor& em, const Tensor& trans);
/// log_partition - sequence_score.
double nll(const Tensor& em, const Tensor& trans, const TagSequence& y);

struct ViterbiResult {
    TagSequence tags;
    double score = 0.0;
};

/// Highest-scoring sequence; ties resolve to the lowest tag index.
ViterbiResult viterbi(const Tensor& em, const Tensor& trans);

/// Spans encoded by a tag sequence. S gives a single-token span; B I* E gives
/// a multi-token span; any other fragment is dropped.
std::vector<EntitySpan> tags_to_spans(const TagSequence& y);
/// Inverse of tags_to_spans for valid span sets. Throws DataError on overlap
/// or out-of-range spans.
TagSequence spans_to_tags(const std::vector<EntitySpan>& spans, std::size_t n);

// Graph-side pieces used for training.

/// Parameter names: "crf.emission_weight" (d x 5), "crf.emission_bias" (5),
/// "crf.transitions" (7 x 7).
ParamSet init_params(std::size_t hidden_dim, std::uint64_t seed);

/// n x 5 emission scores from token encodings.
Var emissions(const VarMap& vars, const Var& h);
/// Masked view of the transition parameter; forbidden entries get no gradient.
Var masked_transitions(const Var& trans);
/// Negative log-likelihood as one graph node with a forward-backward gradient.
Var nll(const Var& em, const Var& trans, const TagSequence& y);

}  // namespace msfner::crf
