#pragma once

// Command implementations behind the msfner executable. Each command
// validates its configuration and loads every input before writing anything.

#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "msfner/config.hpp"

namespace msfner::cli {

/// Parses `args` (without the program name), runs the subcommand and returns
/// the process exit code: 0 ok, 2 config error, 3 data error, 4 numeric
/// failure, 1 anything unexpected.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// Writes <out>/<kind>.ckpt and <out>/<kind>_metrics.tsv. On a non-finite
/// loss the last good checkpoint is written before TrainingAborted escapes.
void train_command(ModelKind kind, const RunConfig& config, std::ostream& out);

/// Finetunes both checkpoints on each support set.
void finetune_command(const RunConfig& config, std::ostream& out);

void build_datastore_command(const RunConfig& config, std::ostream& out);

/// Writes <out>/episodes.jsonl with num_episodes episodes.
void sample_episodes_command(const RunConfig& config, std::ostream& out);

/// Writes <out>/predictions.jsonl.
void infer_command(const RunConfig& config, std::ostream& out);

struct EpisodeScore {
    std::optional<std::size_t> episode;
    EvalReport report;
};

struct EvalSummary {
    std::vector<EpisodeScore> episodes;
    double f1_mean = 0.0;
    double f1_std = 0.0;  // population standard deviation over episodes
    double precision_mean = 0.0;
    double recall_mean = 0.0;
};

EvalSummary evaluate_predictions(const std::vector<PredictionRecord>& predictions,
                                 const std::vector<Episode>& gold_episodes);
EvalSummary evaluate_predictions(const std::vector<PredictionRecord>& predictions, const Corpus& gold);
std::string summary_to_json(const EvalSummary& summary);

/// Prints the summary and writes <out>/eval.json when `out` is set.
EvalSummary eval_command(const RunConfig& config, std::ostream& out);

/// Subdirectory holding the outputs for one episode of an episode file.
std::string episode_dir(std::size_t index);

/// Non-path keys, copied into checkpoints.
std::map<std::string, std::string> config_snapshot(const RunConfig& config);

}  // namespace msfner::cli
