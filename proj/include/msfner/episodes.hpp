#pragma once

// Corpus ingestion, N-way K~2K-shot episode sampling and span-level metrics.

#include <cstdint>
#include <string>
#include <vector>

#include "msfner/classifier.hpp"
#include "msfner/crf.hpp"
#include "msfner/encoder.hpp"

namespace msfner {

/// A sentence with its gold typed spans.
struct AnnotatedSentence {
    Sentence sentence;
    std::vector<crf::EntitySpan> spans;
};

struct Corpus {
    std::vector<AnnotatedSentence> sentences;
    /// Entity types in order of first appearance.
    std::vector<std::string> types;
};

enum class CorpusFormat { BioesTyped, IoTyped };

std::string to_string(CorpusFormat format);
CorpusFormat parse_corpus_format(const std::string& s);

/// Parses "token<TAB>tag" lines with blank lines between sentences. A line
/// "# id = X" before a sentence sets its id; otherwise the id is the
/// sentence's zero-based position in the file.
Corpus parse_corpus(const std::string& path, CorpusFormat format, std::size_t max_len = 128);
Corpus parse_corpus_text(const std::string& text, CorpusFormat format, std::size_t max_len = 128,
                         const std::string& source = "<text>");
std::string serialize_corpus(const Corpus& corpus, CorpusFormat format);

/// Rebuilds Corpus::types from the spans; throws DataError on invalid or
/// overlapping spans.
void finalize_corpus(Corpus& corpus);

/// One N-way K~2K-shot task.
struct Episode {
    std::size_t n = 0;
    std::size_t k = 0;
    LabelSet types;
    std::vector<AnnotatedSentence> support;
    std::vector<AnnotatedSentence> query;
};

struct SamplerOptions {
    /// Shot count used for the query set; 0 means the same K as the support.
    std::size_t query_k = 0;
    /// Reshuffles allowed before a set is declared infeasible.
    std::size_t max_passes = 20;
};

/// Greedy episode sampler. Picks N types, then fills the support and a
/// disjoint query set with sentences whose entities all belong to those types
/// until every type has between K and 2K mentions.
Episode sample_episode(const Corpus& corpus, std::size_t n, std::size_t k, std::uint64_t seed,
                       const SamplerOptions& options = {});

/// Mention count per episode type in a set of sentences.
std::vector<std::size_t> type_counts(const std::vector<AnnotatedSentence>& set, const LabelSet& types);

/// Throws DataError if any span type lies outside the label set or a type is
/// missing from the support.
void validate_episode(const Episode& episode);

std::string episode_to_json(const Episode& episode);
Episode episode_from_json(const std::string& text);
/// JSON-lines file: one episode object per line.
void write_episodes(const std::string& path, const std::vector<Episode>& episodes);
std::vector<Episode> read_episodes(const std::string& path);

using TypedSpans = std::vector<std::vector<crf::EntitySpan>>;

struct EvalReport {
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
    std::size_t predicted = 0;
    std::size_t gold = 0;
    std::size_t correct = 0;
};

/// Exact (start, end, type) matching, micro-averaged over sentences.
EvalReport micro_f1(const TypedSpans& predicted, const TypedSpans& gold);

}  // namespace msfner
