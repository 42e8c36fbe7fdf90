#include "msfner/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <iostream>
#include <json.hpp>
#include <memory>
#include <set>
#include <sstream>

#include "binary_io.hpp"
#include "msfner/error.hpp"
#include "msfner/rng.hpp"

namespace msfner::cli {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

const std::set<std::string> kPathKeys{"train",       "valid",      "corpus",         "episodes",      "support",
                                      "query",       "gold",       "predictions",    "embeddings",    "esd_checkpoint",
                                      "ec_checkpoint", "finetuned", "out"};

std::string num(double v) {
    char buf[64];
    auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, p);
}

void write_text(const fs::path& path, const std::string& text) {
    detail::BinaryWriter w;
    w.raw(text);
    w.save(path.string());
}

fs::path prepare_out(const RunConfig& config) {
    fs::path out = config.require("out");
    std::error_code ec;
    fs::create_directories(out, ec);
    if (ec) throw DataError("cannot create output directory '" + out.string() + "': " + ec.message());
    return out;
}

void write_resolved(const fs::path& out, const std::string& command, const RunConfig& config) {
    write_text(out / ("resolved_" + command + ".cfg"), config.dump());
}

std::shared_ptr<const EmbeddingStore> load_embeddings(const RunConfig& config) {
    auto store = std::make_shared<EmbeddingStore>();
    std::stringstream ss(config.require("embeddings"));
    std::string path;
    while (std::getline(ss, path, ',')) {
        const auto b = path.find_first_not_of(' '), e = path.find_last_not_of(' ');
        if (b == std::string::npos) continue;
        merge_embeddings(*store, load_embedding_file(path.substr(b, e - b + 1)));
    }
    return store;
}

std::string snapshot_value(const Checkpoint& ckpt, const std::string& key) {
    auto it = ckpt.config.find(key);
    if (it == ckpt.config.end()) throw DataError("checkpoint lacks config key '" + key + "'");
    return it->second;
}

// Rebuilds the encoder a checkpoint was trained with.
Encoder encoder_for(const Checkpoint& ckpt, const RunConfig& config) {
    RunConfig saved;
    for (const char* key : {"encoder", "embed_dim", "hidden_dim", "context_radius", "dropout", "max_len"}) {
        saved.set(key, snapshot_value(ckpt, key));
    }
    EncoderConfig enc = saved.encoder_config();
    if (enc.mode == EncoderMode::Trainable) {
        Vocab vocab;
        for (const auto& t : ckpt.vocab) vocab.add(t);
        return Encoder(enc, std::move(vocab));
    }
    enc.input_dim = std::stoul(snapshot_value(ckpt, "input_dim"));
    return Encoder(enc, load_embeddings(config));
}

Checkpoint load_model(const std::string& path, ModelKind kind) {
    Checkpoint c = load_checkpoint(path);
    if (c.kind != kind) {
        throw DataError("'" + path + "' holds an " + to_string(c.kind) + " checkpoint, expected " + to_string(kind));
    }
    return c;
}

void check_sentences(const Encoder& enc, const std::vector<AnnotatedSentence>& set) {
    for (const auto& s : set) enc.check_sentence(s.sentence);
}

std::string labels_json(const LabelSet& labels) { return json(labels).dump(); }

void check_labels(const Checkpoint& ckpt, const LabelSet& labels, const std::string& what) {
    auto it = ckpt.config.find("labels");
    if (it == ckpt.config.end()) return;
    LabelSet saved = json::parse(it->second).get<LabelSet>(), current = labels;
    std::sort(saved.begin(), saved.end());
    std::sort(current.begin(), current.end());
    if (saved != current) {
        throw DataError("label set mismatch: " + what + " was finetuned on " + it->second + ", support has " +
                        labels_json(labels));
    }
}

// Support/query tasks from an episode file, or a single task from corpora.
struct Tasks {
    std::vector<Episode> episodes;
    bool from_file = false;

    fs::path dir(const fs::path& root, std::size_t i) const { return from_file ? root / episode_dir(i) : root; }
    std::optional<std::size_t> index(std::size_t i) const {
        return from_file ? std::optional<std::size_t>(i) : std::nullopt;
    }
};

Tasks load_tasks(const RunConfig& config, bool need_query) {
    Tasks t;
    if (config.is_set("episodes")) {
        t.episodes = read_episodes(config.get("episodes"));
        t.from_file = true;
        for (const auto& ep : t.episodes) validate_episode(ep);
        return t;
    }
    const std::size_t max_len = config.get_size("max_len");
    Corpus support = parse_corpus(config.require("support"), config.corpus_format(), max_len);
    Episode ep;
    ep.types = support.types;
    ep.n = ep.types.size();
    ep.k = config.get_size("k_shot");
    ep.support = std::move(support.sentences);
    if (need_query) ep.query = parse_corpus(config.require("query"), config.corpus_format(), max_len).sentences;
    validate_episode(ep);
    t.episodes.push_back(std::move(ep));
    return t;
}

struct TaskModels {
    Checkpoint esd, ec;
};

// Base checkpoints, or the per-task finetuned ones when `finetuned` is set.
TaskModels task_models(const RunConfig& config, const Tasks& tasks, std::size_t i) {
    if (config.is_set("finetuned")) {
        const fs::path dir = tasks.dir(config.get("finetuned"), i);
        return {load_model((dir / "esd.ckpt").string(), ModelKind::Esd),
                load_model((dir / "ec.ckpt").string(), ModelKind::Ec)};
    }
    return {load_model(config.require("esd_checkpoint"), ModelKind::Esd),
            load_model(config.require("ec_checkpoint"), ModelKind::Ec)};
}

}  // namespace

std::string episode_dir(std::size_t index) { return "ep" + std::to_string(index); }

std::map<std::string, std::string> config_snapshot(const RunConfig& config) {
    std::map<std::string, std::string> out;
    for (const auto& [k, v] : config.values()) {
        if (!kPathKeys.contains(k)) out[k] = v;
    }
    return out;
}

void train_command(ModelKind kind, const RunConfig& config, std::ostream& out) {
    config.validate();
    const TrainerConfig tc = config.trainer_config();
    const std::size_t max_len = config.get_size("max_len");
    const Corpus train_set = parse_corpus(config.require("train"), config.corpus_format(), max_len);
    const Corpus valid_set = parse_corpus(config.require("valid"), config.corpus_format(), max_len);
    config.require("out");

    EncoderConfig ec = config.encoder_config();
    auto snapshot = config_snapshot(config);
    std::unique_ptr<Encoder> encoder;
    if (ec.mode == EncoderMode::Trainable) {
        std::vector<Sentence> plain;
        for (const auto& s : train_set.sentences) plain.push_back(s.sentence);
        encoder = std::make_unique<Encoder>(ec, Vocab::build(plain));
    } else {
        encoder = std::make_unique<Encoder>(ec, load_embeddings(config));
        snapshot["input_dim"] = std::to_string(encoder->config().input_dim);
    }
    check_sentences(*encoder, train_set.sentences);
    check_sentences(*encoder, valid_set.sentences);

    const std::string name = to_string(kind);
    auto write_outputs = [&](Checkpoint ckpt, const std::vector<MetricsRow>& log) {
        const fs::path dir = prepare_out(config);
        ckpt.config = snapshot;
        std::string tsv = "step\ttrain_loss\tvalid_score\n";
        for (const auto& r : log) {
            tsv += std::to_string(r.step) + "\t" + (r.train_loss ? num(*r.train_loss) : "-") + "\t" +
                   (r.valid_score ? num(*r.valid_score) : "-") + "\n";
        }
        save_checkpoint((dir / (name + ".ckpt")).string(), ckpt, tc.float32);
        write_text(dir / (name + "_metrics.tsv"), tsv);
        write_resolved(dir, "train-" + name, config);
    };

    const ParamSet init = init_model_params(kind, *encoder, tc, tc.seed);
    auto report = [&](const MetricsRow& r) {
        if (r.valid_score) {
            out << name << " step " << r.step << ": valid " << num(*r.valid_score);
            if (r.train_loss) out << ", loss " << num(*r.train_loss);
            out << "\n";
        }
    };
    try {
        TrainResult result = train(kind, *encoder, init, train_set, valid_set, tc, report);
        write_outputs(std::move(result.best), result.log);
        out << name << ": best valid " << num(result.best.valid_score) << " at step " << result.best.step << "\n";
    } catch (const TrainingAborted& e) {
        write_outputs(e.last_good, e.log);
        throw;
    }
}

void finetune_command(const RunConfig& config, std::ostream& out) {
    config.validate();
    const Tasks tasks = load_tasks(config, false);
    const Checkpoint esd = load_model(config.require("esd_checkpoint"), ModelKind::Esd);
    const Checkpoint ec = load_model(config.require("ec_checkpoint"), ModelKind::Ec);
    config.require("out");
    const Encoder esd_enc = encoder_for(esd, config);
    const Encoder ec_enc = encoder_for(ec, config);
    for (const auto& ep : tasks.episodes) {
        check_sentences(esd_enc, ep.support);
        check_sentences(ec_enc, ep.support);
    }

    std::vector<std::pair<Checkpoint, Checkpoint>> tuned;
    for (std::size_t i = 0; i < tasks.episodes.size(); ++i) {
        const Episode& ep = tasks.episodes[i];
        TrainerConfig tc = config.trainer_config();
        tc.seed = mix_seed(tc.seed, i);
        Checkpoint a = esd, b = ec;
        a.params = finetune(ModelKind::Esd, esd_enc, esd.params, ep, tc);
        b.params = finetune(ModelKind::Ec, ec_enc, ec.params, ep, tc);
        a.config["labels"] = b.config["labels"] = labels_json(ep.types);
        out << "task " << i << ": support loss esd " << num(support_loss(ModelKind::Esd, esd_enc, a.params, ep, tc))
            << ", ec " << num(support_loss(ModelKind::Ec, ec_enc, b.params, ep, tc)) << "\n";
        tuned.emplace_back(std::move(a), std::move(b));
    }
    const fs::path root = prepare_out(config);
    const bool f32 = config.get_bool("float32");
    for (std::size_t i = 0; i < tuned.size(); ++i) {
        const fs::path dir = tasks.dir(root, i);
        fs::create_directories(dir);
        save_checkpoint((dir / "esd.ckpt").string(), tuned[i].first, f32);
        save_checkpoint((dir / "ec.ckpt").string(), tuned[i].second, f32);
    }
    write_resolved(root, "finetune", config);
}

void build_datastore_command(const RunConfig& config, std::ostream& out) {
    config.validate();
    const Tasks tasks = load_tasks(config, false);
    std::vector<Datastore> stores;
    for (std::size_t i = 0; i < tasks.episodes.size(); ++i) {
        const Checkpoint ec = config.is_set("finetuned") ? task_models(config, tasks, i).ec
                                                         : load_model(config.require("ec_checkpoint"), ModelKind::Ec);
        const Episode& ep = tasks.episodes[i];
        check_labels(ec, ep.types, "the classifier");
        const Encoder enc = encoder_for(ec, config);
        check_sentences(enc, ep.support);
        stores.push_back(build_datastore(enc, ec.params, ep.support, ep.types));
        out << "task " << i << ": " << stores.back().size() << " entries\n";
    }
    const fs::path root = prepare_out(config);
    for (std::size_t i = 0; i < stores.size(); ++i) {
        const fs::path dir = tasks.dir(root, i);
        fs::create_directories(dir);
        save_datastore((dir / "datastore.msfd").string(), stores[i]);
    }
    write_resolved(root, "build-datastore", config);
}

void sample_episodes_command(const RunConfig& config, std::ostream& out) {
    config.validate();
    const Corpus corpus = parse_corpus(config.require("corpus"), config.corpus_format(), config.get_size("max_len"));
    config.require("out");
    const TrainerConfig tc = config.trainer_config();
    const SamplerOptions opts{.query_k = tc.query_k};
    std::vector<Episode> eps;
    for (std::size_t i = 0; i < config.get_size("num_episodes"); ++i) {
        eps.push_back(sample_episode(corpus, tc.n_way, tc.k_shot, mix_seed(tc.seed, i), opts));
    }
    const fs::path root = prepare_out(config);
    write_episodes((root / "episodes.jsonl").string(), eps);
    write_resolved(root, "sample-episodes", config);
    out << "wrote " << eps.size() << " episodes\n";
}

void infer_command(const RunConfig& config, std::ostream& out) {
    config.validate();
    const DecoderConfig dc = config.decoder_config();
    const Tasks tasks = load_tasks(config, true);
    config.require("out");
    std::vector<PredictionRecord> records;
    for (std::size_t i = 0; i < tasks.episodes.size(); ++i) {
        const Episode& ep = tasks.episodes[i];
        const TaskModels m = task_models(config, tasks, i);
        check_labels(m.esd, ep.types, "the span detector");
        check_labels(m.ec, ep.types, "the classifier");
        const Encoder esd_enc = encoder_for(m.esd, config);
        const Encoder ec_enc = encoder_for(m.ec, config);
        check_sentences(ec_enc, ep.support);
        check_sentences(esd_enc, ep.query);
        check_sentences(ec_enc, ep.query);
        const Datastore store = build_datastore(ec_enc, m.ec.params, ep.support, ep.types);
        const Prototypes protos = support_prototypes(ec_enc, m.ec.params, ep.support, ep.types);
        std::vector<Sentence> query;
        for (const auto& s : ep.query) query.push_back(s.sentence);
        auto preds = infer(query, esd_enc, m.esd.params, ec_enc, m.ec.params, store, protos, dc);
        for (std::size_t q = 0; q < query.size(); ++q) {
            records.push_back({query[q].id, tasks.index(i), std::move(preds[q])});
        }
    }
    const fs::path root = prepare_out(config);
    write_predictions((root / "predictions.jsonl").string(), records);
    write_resolved(root, "infer", config);
    out << "wrote predictions for " << records.size() << " sentences\n";
}

namespace {

EvalSummary summarize(std::vector<EpisodeScore> scores) {
    EvalSummary s;
    s.episodes = std::move(scores);
    const double n = static_cast<double>(s.episodes.size());
    if (s.episodes.empty()) return s;
    for (const auto& e : s.episodes) {
        s.f1_mean += e.report.f1 / n;
        s.precision_mean += e.report.precision / n;
        s.recall_mean += e.report.recall / n;
    }
    double var = 0.0;
    for (const auto& e : s.episodes) var += (e.report.f1 - s.f1_mean) * (e.report.f1 - s.f1_mean) / n;
    s.f1_std = std::sqrt(var);
    return s;
}

using PredictionIndex = std::map<std::pair<std::optional<std::size_t>, std::string>, const PredictionRecord*>;

PredictionIndex index_predictions(const std::vector<PredictionRecord>& predictions) {
    PredictionIndex idx;
    for (const auto& p : predictions) {
        if (!idx.emplace(std::make_pair(p.episode, p.id), &p).second) {
            throw DataError("duplicate prediction for sentence '" + p.id + "'");
        }
    }
    return idx;
}

EvalReport score_set(const std::vector<AnnotatedSentence>& gold, std::optional<std::size_t> episode,
                     PredictionIndex& idx) {
    TypedSpans pred_spans, gold_spans;
    std::set<std::string> seen;
    for (const auto& s : gold) {
        if (!seen.insert(s.sentence.id).second) {
            throw DataError("duplicate gold sentence id '" + s.sentence.id + "'");
        }
        gold_spans.push_back(s.spans);
        auto& row = pred_spans.emplace_back();
        auto it = idx.find({episode, s.sentence.id});
        if (it == idx.end()) continue;  // no prediction counts as no spans
        for (const auto& tp : it->second->spans) row.push_back(tp.span);
        idx.erase(it);
    }
    return micro_f1(pred_spans, gold_spans);
}

void check_all_used(const PredictionIndex& idx) {
    if (idx.empty()) return;
    const auto& [key, rec] = *idx.begin();
    throw DataError("prediction for sentence '" + rec->id + "'" +
                    (key.first ? " of episode " + std::to_string(*key.first) : std::string()) +
                    " has no gold counterpart");
}

}  // namespace

EvalSummary evaluate_predictions(const std::vector<PredictionRecord>& predictions,
                                 const std::vector<Episode>& gold_episodes) {
    PredictionIndex idx = index_predictions(predictions);
    std::vector<EpisodeScore> scores;
    for (std::size_t i = 0; i < gold_episodes.size(); ++i) {
        scores.push_back({i, score_set(gold_episodes[i].query, i, idx)});
    }
    check_all_used(idx);
    return summarize(std::move(scores));
}

EvalSummary evaluate_predictions(const std::vector<PredictionRecord>& predictions, const Corpus& gold) {
    PredictionIndex idx = index_predictions(predictions);
    std::vector<EpisodeScore> scores{{std::nullopt, score_set(gold.sentences, std::nullopt, idx)}};
    check_all_used(idx);
    return summarize(std::move(scores));
}

std::string summary_to_json(const EvalSummary& s) {
    json eps = json::array();
    for (const auto& e : s.episodes) {
        json j{{"precision", e.report.precision}, {"recall", e.report.recall}, {"f1", e.report.f1},
               {"predicted", e.report.predicted}, {"gold", e.report.gold},       {"correct", e.report.correct}};
        if (e.episode) j["episode"] = *e.episode;
        eps.push_back(std::move(j));
    }
    return json{{"episodes", eps},
                {"f1_mean", s.f1_mean},
                {"f1_std", s.f1_std},
                {"precision_mean", s.precision_mean},
                {"recall_mean", s.recall_mean}}
        .dump(2);
}

EvalSummary eval_command(const RunConfig& config, std::ostream& out) {
    config.validate();
    const auto predictions = read_predictions(config.require("predictions"));
    EvalSummary s;
    if (config.is_set("episodes")) {
        s = evaluate_predictions(predictions, read_episodes(config.get("episodes")));
    } else {
        s = evaluate_predictions(predictions,
                                 parse_corpus(config.require("gold"), config.corpus_format(), config.get_size("max_len")));
    }
    char line[160];
    std::snprintf(line, sizeof line, "F1 %.4f +- %.4f (P %.4f, R %.4f) over %zu episode(s)\n", s.f1_mean, s.f1_std,
                  s.precision_mean, s.recall_mean, s.episodes.size());
    out << line;
    if (config.is_set("out")) {
        const fs::path root = prepare_out(config);
        write_text(root / "eval.json", summary_to_json(s) + "\n");
        write_resolved(root, "eval", config);
    }
    return s;
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Few-shot named entity recognition: meta-trained span detection and classification", "msfner"};
    app.require_subcommand(1);
    app.set_help_all_flag("--help-all", "help for every subcommand");

    struct Sub {
        CLI::App* app;
        std::string config_file;
        bool print_config = false;
        std::map<std::string, std::string> flags;
    };
    const std::vector<std::pair<std::string, std::string>> commands{
        {"train-esd", "meta-train the entity span detector"},
        {"train-ec", "meta-train the entity classifier"},
        {"finetune", "finetune both models on support sets"},
        {"build-datastore", "write the KNN datastore of support entities"},
        {"sample-episodes", "sample N-way K~2K-shot episodes from a corpus"},
        {"infer", "decode query sentences"},
        {"eval", "score predictions against gold spans"},
    };
    std::vector<std::unique_ptr<Sub>> subs;
    for (const auto& [name, help] : commands) {
        auto sub = std::make_unique<Sub>();
        sub->app = app.add_subcommand(name, help);
        sub->app->add_option("--config", sub->config_file, "key = value config file")->check(CLI::ExistingFile);
        sub->app->add_flag("--print-config", sub->print_config, "print the resolved config and exit");
        for (const auto& key : config_keys()) {
            std::string flag = key.name;
            std::replace(flag.begin(), flag.end(), '_', '-');
            std::string help_text = key.help;
            if (!key.default_value.empty()) help_text += (help_text.empty() ? "default " : " (default ") +
                                                         key.default_value + (help_text.empty() ? "" : ")");
            sub->app->add_option("--" + flag, sub->flags[key.name], help_text)
                ->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
        }
        subs.push_back(std::move(sub));
    }

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? 0 : 2;
    }

    const Sub* chosen = nullptr;
    for (const auto& s : subs) {
        if (s->app->parsed()) chosen = s.get();
    }
    const std::string name = chosen->app->get_name();
    try {
        RunConfig config;
        if (!chosen->config_file.empty()) config.merge_file(chosen->config_file);
        for (const auto& key : config_keys()) {
            std::string flag = key.name;
            std::replace(flag.begin(), flag.end(), '_', '-');
            if (chosen->app->count("--" + flag) > 0) config.set(key.name, chosen->flags.at(key.name));
        }
        config.resolve_seed();
        config.validate();
        if (chosen->print_config) {
            out << config.dump();
            return 0;
        }
        if (name == "train-esd") train_command(ModelKind::Esd, config, out);
        else if (name == "train-ec") train_command(ModelKind::Ec, config, out);
        else if (name == "finetune") finetune_command(config, out);
        else if (name == "build-datastore") build_datastore_command(config, out);
        else if (name == "sample-episodes") sample_episodes_command(config, out);
        else if (name == "infer") infer_command(config, out);
        else eval_command(config, out);
        return 0;
    } catch (const ConfigError& e) {
        err << name << ": config error: " << e.what() << "\n";
        return 2;
    } catch (const NumericError& e) {
        err << name << ": numeric failure: " << e.what() << "\n";
        return 4;
    } catch (const DataError& e) {
        err << name << ": data error: " << e.what() << "\n";
        return 3;
    } catch (const fs::filesystem_error& e) {
        err << name << ": data error: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        err << name << ": internal error: " << e.what() << "\n";
        return 1;
    }
}

}  // namespace msfner::cli
