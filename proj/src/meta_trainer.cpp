#include "msfner/meta_trainer.hpp"

#include <cmath>

#include "binary_io.hpp"
#include "msfner/crf.hpp"
#include "msfner/rng.hpp"

namespace msfner {

namespace {

constexpr char kMagic[4] = {'M', 'S', 'F', 'C'};
constexpr std::uint32_t kVersion = 1;

std::uint64_t sentence_seed(std::uint64_t seed, std::size_t i) { return mix_seed(seed, i); }

ParamSet outer_update(const ParamSet& params, AdamState& state, const ParamSet& grads,
                      const TrainerConfig& config) {
    ParamSet next;
    if (config.outer == OuterOptimizer::Sgd) {
        next = sgd_step(params, grads, config.outer_lr);
    } else {
        auto r = adaptive_step(state, params, grads, config.outer_lr, config.adam);
        state = std::move(r.state);
        next = std::move(r.params);
    }
    if (config.float32) round_to_float(next);
    return next;
}

LossFn support_fn(ModelKind kind, const Encoder& encoder, const Episode& episode, const TrainerConfig& config,
                  bool train, std::uint64_t seed) {
    if (kind == ModelKind::Esd) {
        return [&encoder, &episode, train, seed](Graph& g, const VarMap& vars) {
            return esd_loss(g, vars, encoder, episode.support, train, seed);
        };
    }
    return [&encoder, &episode, &config, train, seed](Graph& g, const VarMap& vars) {
        return ec_support_loss(g, vars, encoder, episode, config, train, seed);
    };
}

}  // namespace

std::string to_string(ModelKind kind) { return kind == ModelKind::Esd ? "esd" : "ec"; }

ModelKind parse_model_kind(const std::string& s) {
    if (s == "esd") return ModelKind::Esd;
    if (s == "ec") return ModelKind::Ec;
    throw ConfigError("model kind must be esd or ec, got '" + s + "'");
}

std::string to_string(OuterOptimizer opt) { return opt == OuterOptimizer::Sgd ? "sgd" : "adaptive"; }

OuterOptimizer parse_outer_optimizer(const std::string& s) {
    if (s == "sgd") return OuterOptimizer::Sgd;
    if (s == "adaptive") return OuterOptimizer::Adaptive;
    throw ConfigError("outer optimizer must be sgd or adaptive, got '" + s + "'");
}

void TrainerConfig::validate() const {
    auto positive = [](double v, const char* name) {
        if (!(v > 0.0) || !std::isfinite(v)) throw ConfigError(std::string(name) + " must be positive");
    };
    if (!(inner_lr >= 0.0) || !std::isfinite(inner_lr)) throw ConfigError("inner_lr must be non-negative");
    positive(outer_lr, "outer_lr");
    positive(contrastive.temperature, "temperature");
    if (batch_size == 0) throw ConfigError("batch_size must be at least 1");
    if (valid_interval == 0) throw ConfigError("valid_interval must be at least 1");
    if (valid_episodes == 0) throw ConfigError("valid_episodes must be at least 1");
    if (n_way == 0 || k_shot == 0) throw ConfigError("n_way and k_shot must be at least 1");
    if (contrastive.proj_dim == 0) throw ConfigError("proj_dim must be at least 1");
    if (!(contrastive_weight >= 0.0) || !std::isfinite(contrastive_weight)) {
        throw ConfigError("contrastive_weight must be non-negative");
    }
    if (!(adam.beta1 >= 0.0 && adam.beta1 < 1.0) || !(adam.beta2 >= 0.0 && adam.beta2 < 1.0)) {
        throw ConfigError("adam betas must lie in [0, 1)");
    }
    if (!(adam.eps > 0.0) || !(adam.weight_decay >= 0.0)) {
        throw ConfigError("adam eps must be positive and weight_decay non-negative");
    }
}

ParamSet init_model_params(ModelKind kind, const Encoder& encoder, const TrainerConfig& config,
                           std::uint64_t seed) {
    ParamSet p = encoder.init_params(mix_seed(seed, 1));
    ParamSet head = kind == ModelKind::Esd
                        ? crf::init_params(encoder.output_dim(), mix_seed(seed, 2))
                        : init_projection_params(encoder.output_dim(), config.contrastive.proj_dim, mix_seed(seed, 2));
    p.merge(head);
    return p;
}

Var esd_loss(Graph& g, const VarMap& vars, const Encoder& encoder,
             std::span<const AnnotatedSentence> sentences, bool train, std::uint64_t seed) {
    if (sentences.empty()) throw DataError("span detection loss over an empty sentence set");
    const Var trans = crf::masked_transitions(param(vars, "crf.transitions"));
    Var total;
    for (std::size_t i = 0; i < sentences.size(); ++i) {
        const auto& s = sentences[i];
        const Var h = encoder.encode(g, vars, s.sentence, train, sentence_seed(seed, i));
        const auto y = crf::spans_to_tags(s.spans, s.sentence.tokens.size());
        const Var term = crf::nll(crf::emissions(vars, h), trans, y);
        total = i == 0 ? term : ops::add(total, term);
    }
    return ops::scale(total, 1.0 / static_cast<double>(sentences.size()));
}

EntityBatch entity_batch(Graph& g, const VarMap& vars, const Encoder& encoder,
                         std::span<const AnnotatedSentence> sentences, const LabelSet& labels, bool train,
                         std::uint64_t seed) {
    EntityBatch batch;
    std::vector<Var> pooled;
    for (std::size_t i = 0; i < sentences.size(); ++i) {
        const auto& s = sentences[i];
        if (s.spans.empty()) continue;
        const Var h = encoder.encode(g, vars, s.sentence, train, sentence_seed(seed, i));
        pooled.push_back(head::pool_spans(h, s.spans));
        for (const auto& sp : s.spans) batch.labels.push_back(label_index(labels, sp.type));
    }
    if (pooled.empty()) throw DataError("no gold entities to classify");
    batch.embeddings = ops::concat_rows(pooled);
    return batch;
}

Var ec_support_loss(Graph& g, const VarMap& vars, const Encoder& encoder, const Episode& episode,
                    const TrainerConfig& config, bool train, std::uint64_t seed) {
    const auto batch = entity_batch(g, vars, encoder, episode.support, episode.types, train, seed);
    const Var centers = head::prototypes(batch.embeddings, batch.labels, episode.types);
    Var loss = head::ec_loss(head::proto_log_probs(batch.embeddings, centers, config.distance), batch.labels);
    if (config.contrastive_weight > 0.0 && batch.labels.size() >= 2) {
        const auto z = head::project(vars, batch.embeddings);
        const auto mode = resolve_similarity(config.contrastive.mode, episode.k);
        const Var cl = head::contrastive_loss(head::similarity_matrix(z, mode), batch.labels,
                                              config.contrastive.temperature);
        loss = ops::add(loss, ops::scale(cl, config.contrastive_weight));
    }
    return loss;
}

Var ec_query_loss(Graph& g, const VarMap& vars, const Encoder& encoder, const Episode& episode,
                  const TrainerConfig& config, bool train, std::uint64_t seed, Tensor* log_probs) {
    const auto support = entity_batch(g, vars, encoder, episode.support, episode.types, train, mix_seed(seed, 1));
    const Var centers = head::prototypes(support.embeddings, support.labels, episode.types);
    bool any = false;
    for (const auto& s : episode.query) any = any || !s.spans.empty();
    if (!any) {
        if (log_probs) *log_probs = Tensor();
        return g.constant(Tensor::scalar(0.0));
    }
    const auto query = entity_batch(g, vars, encoder, episode.query, episode.types, train, mix_seed(seed, 2));
    const Var lp = head::proto_log_probs(query.embeddings, centers, config.distance);
    if (log_probs) *log_probs = lp.value();
    return head::ec_loss(lp, query.labels);
}

std::vector<crf::EntitySpan> detect_spans(const Encoder& encoder, const ParamSet& params,
                                          const Sentence& sentence) {
    Graph g;
    VarMap vars;
    for (const auto& [name, t] : params) vars.emplace(name, g.constant(t));
    const Var h = encoder.encode(g, vars, sentence, false, 0);
    const Tensor em = crf::emissions(vars, h).value();
    const Tensor trans = crf::masked_transitions(params.at("crf.transitions"));
    return crf::tags_to_spans(crf::viterbi(em, trans).tags);
}

ParamSet inner_update(const ParamSet& params, const LossFn& support_loss, double alpha) {
    try {
        const auto vg = value_and_grad(support_loss, params);
        return sgd_step(params, vg.grads, alpha);
    } catch (const NumericError& e) {
        throw NumericError(std::string("inner update: ") + e.what());
    }
}

namespace {

MetaStepResult meta_step_impl(ModelKind kind, const Encoder& encoder, const ParamSet& params,
                              const AdamState& state, std::span<const Episode> episodes,
                              const TrainerConfig& config, std::uint64_t seed) {
    if (episodes.empty()) throw DataError("meta step needs at least one episode");
    MetaStepResult r;
    r.state = state;
    ParamSet total = zeros_like(params);
    for (std::size_t i = 0; i < episodes.size(); ++i) {
        const Episode& ep = episodes[i];
        if (kind == ModelKind::Ec) validate_episode(ep);
        const std::uint64_t task_seed = mix_seed(seed, i);
        const LossFn support = support_fn(kind, encoder, ep, config, true, mix_seed(task_seed, 1));
        const auto sv = value_and_grad(support, params);
        const ParamSet adapted = sgd_step(params, sv.grads, config.inner_lr);

        Tensor lp;
        LossFn query;
        const std::uint64_t qseed = mix_seed(task_seed, 2);
        if (kind == ModelKind::Esd) {
            query = [&](Graph& g, const VarMap& vars) { return esd_loss(g, vars, encoder, ep.query, true, qseed); };
        } else {
            query = [&](Graph& g, const VarMap& vars) {
                return ec_query_loss(g, vars, encoder, ep, config, true, qseed, &lp);
            };
        }
        const auto qv = value_and_grad(query, adapted);
        total = axpy(total, qv.grads, 1.0);
        r.metrics.support_loss += sv.value;
        r.metrics.query_loss += qv.value;
        if (kind == ModelKind::Ec && !lp.shape().empty()) {
            std::size_t row = 0;
            for (const auto& s : ep.query) {
                for (const auto& sp : s.spans) {
                    r.metrics.type_loss[sp.type] -= lp.at(row++, label_index(ep.types, sp.type));
                }
            }
        }
    }
    const double n = static_cast<double>(episodes.size());
    r.metrics.support_loss /= n;
    r.metrics.query_loss /= n;
    r.params = outer_update(params, r.state, total, config);
    return r;
}

}  // namespace

MetaStepResult meta_step_esd(const Encoder& encoder, const ParamSet& params, const AdamState& state,
                             std::span<const Episode> episodes, const TrainerConfig& config,
                             std::uint64_t seed) {
    return meta_step_impl(ModelKind::Esd, encoder, params, state, episodes, config, seed);
}

MetaStepResult meta_step_ec(const Encoder& encoder, const ParamSet& params, const AdamState& state,
                            std::span<const Episode> episodes, const TrainerConfig& config,
                            std::uint64_t seed) {
    return meta_step_impl(ModelKind::Ec, encoder, params, state, episodes, config, seed);
}

MetaStepResult meta_step(ModelKind kind, const Encoder& encoder, const ParamSet& params,
                         const AdamState& state, std::span<const Episode> episodes,
                         const TrainerConfig& config, std::uint64_t seed) {
    return meta_step_impl(kind, encoder, params, state, episodes, config, seed);
}

double validation_score(ModelKind kind, const Encoder& encoder, const ParamSet& params,
                        std::span<const Episode> episodes, const TrainerConfig& config) {
    if (episodes.empty()) throw DataError("no validation episodes");
    double total = 0.0;
    for (const auto& ep : episodes) {
        const ParamSet adapted = inner_update(params, support_fn(kind, encoder, ep, config, false, 0), config.inner_lr);
        if (kind == ModelKind::Esd) {
            TypedSpans pred, gold;
            for (const auto& s : ep.query) {
                pred.push_back(detect_spans(encoder, adapted, s.sentence));
                gold.emplace_back();
                for (auto sp : s.spans) {
                    sp.type.clear();
                    gold.back().push_back(sp);
                }
            }
            total += micro_f1(pred, gold).f1;
        } else {
            Tensor lp;
            evaluate([&](Graph& g, const VarMap& vars) { return ec_query_loss(g, vars, encoder, ep, config, false, 0, &lp); },
                     adapted);
            std::size_t row = 0, correct = 0;
            for (const auto& s : ep.query) {
                for (const auto& sp : s.spans) {
                    const auto r = lp.row(row++);
                    correct += argmax(TypeDistribution(r.begin(), r.end())) == label_index(ep.types, sp.type);
                }
            }
            total += row ? static_cast<double>(correct) / static_cast<double>(row) : 0.0;
        }
    }
    return total / static_cast<double>(episodes.size());
}

void save_checkpoint(const std::string& path, const Checkpoint& checkpoint, bool float32) {
    detail::BinaryWriter w;
    w.raw(std::string(kMagic, 4));
    w.u32(kVersion);
    w.u8(checkpoint.kind == ModelKind::Esd ? 0 : 1);
    w.u32(static_cast<std::uint32_t>(checkpoint.step));
    w.f64(checkpoint.valid_score);
    w.u32(static_cast<std::uint32_t>(checkpoint.config.size()));
    for (const auto& [k, v] : checkpoint.config) {
        w.str(k);
        w.str(v);
    }
    w.u32(static_cast<std::uint32_t>(checkpoint.vocab.size()));
    for (const auto& t : checkpoint.vocab) w.str(t);
    w.u32(static_cast<std::uint32_t>(checkpoint.params.size()));
    for (const auto& [name, t] : checkpoint.params) {
        if (!t.all_finite()) throw NumericError("checkpoint: parameter '" + name + "' is not finite");
        w.str(name);
        w.u32(static_cast<std::uint32_t>(t.shape().size()));
        for (std::size_t d : t.shape()) w.u32(static_cast<std::uint32_t>(d));
        w.u8(float32 ? 32 : 64);
        for (double v : t.data()) {
            if (float32) {
                w.f32(static_cast<float>(v));
            } else {
                w.f64(v);
            }
        }
    }
    w.save(path);
}

Checkpoint load_checkpoint(const std::string& path) {
    using Kind = FormatError::Kind;
    detail::BinaryReader r(path, "checkpoint");
    r.expect_magic(kMagic);
    const auto version = r.u32();
    if (version != kVersion) {
        throw FormatError(Kind::BadVersion, "checkpoint: unsupported version " + std::to_string(version));
    }
    Checkpoint c;
    const auto kind = r.u8();
    if (kind > 1) throw FormatError(Kind::Inconsistent, "checkpoint: unknown model kind");
    c.kind = kind == 0 ? ModelKind::Esd : ModelKind::Ec;
    c.step = r.u32();
    c.valid_score = r.f64();
    for (std::uint32_t n = r.u32(), i = 0; i < n; ++i) {
        std::string k = r.str();
        c.config[k] = r.str();
    }
    for (std::uint32_t n = r.u32(), i = 0; i < n; ++i) c.vocab.push_back(r.str());
    for (std::uint32_t n = r.u32(), i = 0; i < n; ++i) {
        std::string name = r.str();
        std::vector<std::size_t> shape(r.u32());
        if (shape.empty()) throw FormatError(Kind::Inconsistent, "checkpoint: '" + name + "' has rank 0");
        std::size_t count = 1;
        for (auto& d : shape) {
            d = r.u32();
            if (d == 0) throw FormatError(Kind::Inconsistent, "checkpoint: '" + name + "' has a zero dimension");
            count *= d;
        }
        const auto width = r.u8();
        if (width != 32 && width != 64) {
            throw FormatError(Kind::Inconsistent, "checkpoint: '" + name + "' has payload width " +
                                                      std::to_string(width));
        }
        r.need(count * (width / 8));
        Tensor t(shape);
        for (double& v : t.data()) v = width == 32 ? static_cast<double>(r.f32()) : r.f64();
        if (!t.all_finite()) throw FormatError(Kind::NonFinite, "checkpoint: '" + name + "' is not finite");
        if (!c.params.emplace(std::move(name), std::move(t)).second) {
            throw FormatError(Kind::Inconsistent, "checkpoint: duplicate tensor name");
        }
    }
    if (!r.at_end()) throw FormatError(Kind::Inconsistent, "checkpoint: trailing bytes");
    return c;
}

TrainResult train(ModelKind kind, const Encoder& encoder, const ParamSet& init, const Corpus& corpus,
                  const Corpus& valid, const TrainerConfig& config,
                  const std::function<void(const MetricsRow&)>& on_row) {
    config.validate();
    const SamplerOptions sampler{.query_k = config.query_k};
    std::vector<Episode> valid_eps;
    for (std::size_t i = 0; i < config.valid_episodes; ++i) {
        valid_eps.push_back(sample_episode(valid, config.n_way, config.k_shot, mix_seed(config.seed ^ 0x7A11D, i), sampler));
    }

    TrainResult result;
    auto emit = [&](MetricsRow row) {
        if (on_row) on_row(row);
        result.log.push_back(std::move(row));
    };
    ParamSet params = init;
    if (config.float32) round_to_float(params);
    AdamState state;

    result.best.kind = kind;
    result.best.params = params;
    if (encoder.config().mode == EncoderMode::Trainable) result.best.vocab = encoder.vocab().tokens();
    result.best.valid_score = validation_score(kind, encoder, params, valid_eps, config);
    emit({0, std::nullopt, result.best.valid_score});

    for (std::size_t step = 1; step <= config.steps; ++step) {
        const std::uint64_t step_seed = mix_seed(config.seed, step);
        try {
            std::vector<Episode> batch;
            batch.reserve(config.batch_size);
            for (std::size_t i = 0; i < config.batch_size; ++i) {
                batch.push_back(sample_episode(corpus, config.n_way, config.k_shot, mix_seed(step_seed, i), sampler));
            }
            auto r = meta_step(kind, encoder, params, state, batch, config, mix_seed(step_seed, 0x5EED));
            params = std::move(r.params);
            state = std::move(r.state);
            MetricsRow row{step, r.metrics.query_loss, std::nullopt};
            if (step % config.valid_interval == 0 || step == config.steps) {
                const double score = validation_score(kind, encoder, params, valid_eps, config);
                row.valid_score = score;
                if (score > result.best.valid_score) {
                    result.best.params = params;
                    result.best.step = step;
                    result.best.valid_score = score;
                }
            }
            emit(row);
        } catch (const NumericError& e) {
            throw TrainingAborted("step " + std::to_string(step) + ": " + e.what(), result.best, result.log);
        }
    }
    return result;
}

double support_loss(ModelKind kind, const Encoder& encoder, const ParamSet& params, const Episode& support,
                    const TrainerConfig& config) {
    return evaluate(support_fn(kind, encoder, support, config, false, 0), params);
}

ParamSet finetune(ModelKind kind, const Encoder& encoder, const ParamSet& params, const Episode& support,
                  const TrainerConfig& config) {
    config.validate();
    if (support.support.empty()) throw DataError("finetune: empty support set");
    if (kind == ModelKind::Ec) validate_episode(support);
    ParamSet p = params;
    for (std::size_t step = 1; step <= config.finetune_steps; ++step) {
        const auto seed = mix_seed(config.seed ^ 0xF17E, step);
        try {
            p = inner_update(p, support_fn(kind, encoder, support, config, true, seed), config.inner_lr);
        } catch (const NumericError& e) {
            throw NumericError("finetune step " + std::to_string(step) + ": " + e.what());
        }
        if (config.float32) round_to_float(p);
    }
    return p;
}

}  // namespace msfner
