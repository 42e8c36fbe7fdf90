// Acceptance run: one PASS/FAIL line per criterion. Exit status is the number
// of failed criteria.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "msfner/cli.hpp"
#include "msfner/synthetic.hpp"
#include "synthetic_fixture.hpp"
#include "test_util.hpp"

namespace msfner {
namespace {

namespace fs = std::filesystem;
using testing::random_tensor;

// Pinned tolerances and limits.
constexpr double kLogZTol = 1e-6;
constexpr double kViterbiTol = 1e-9;
constexpr double kGradTol = 1e-4;
constexpr double kDistTol = 1e-9;
constexpr double kKnnTol = 1e-9;
constexpr double kInnerStepRate = 0.95;
constexpr double kLossRatio = 0.5;
constexpr std::size_t kMovingWindow = 10;
constexpr double kMinF1 = 0.90;
constexpr double kAblationBand = 0.10;
constexpr double kLimitCrf = 30, kLimitGrad = 60, kLimitMaml = 180, kLimitE2E = 300;

struct Outcome {
    bool pass = true;
    std::string detail;
};

using Clock = std::chrono::steady_clock;

int failures = 0;

void report(int id, const std::string& title, const std::function<Outcome()>& body, double limit_s = 0) {
    const auto t0 = Clock::now();
    Outcome o;
    try {
        o = body();
    } catch (const std::exception& e) {
        o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(Clock::now() - t0).count();
    if (limit_s > 0 && secs > limit_s) o.pass = false;
    char timing[96];
    if (limit_s > 0) std::snprintf(timing, sizeof timing, "%.1f s, limit %.0f s", secs, limit_s);
    else std::snprintf(timing, sizeof timing, "%.1f s", secs);
    std::printf("criterion %d %s  %s: %s [%s]\n", id, o.pass ? "PASS" : "FAIL", title.c_str(), o.detail.c_str(),
                timing);
    std::fflush(stdout);
    if (!o.pass) ++failures;
}

std::string fmt(const char* f, double a, double b = 0, double c = 0, double d = 0) {
    char buf[256];
    std::snprintf(buf, sizeof buf, f, a, b, c, d);
    return buf;
}

std::vector<double> random_vec(std::size_t d, Rng& rng, double scale = 1.0) {
    const Tensor t = random_tensor({d}, rng, -scale, scale);
    return {t.data().begin(), t.data().end()};
}

Tensor random_masked_trans(Rng& rng) { return crf::masked_transitions(random_tensor({7, 7}, rng, -2, 2)); }

// 1 ---------------------------------------------------------------------

Outcome crf_oracle() {
    Rng rng(1001);
    double worst_z = 0, worst_v = 0;
    bool valid = true;
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t n = 1 + rng.below(6);
        const Tensor em = random_tensor({n, 5}, rng, -3, 3);
        const Tensor trans = random_masked_trans(rng);
        worst_z = std::max(worst_z, std::abs(crf::log_partition(em, trans) - testing::brute_log_partition(em, trans)));
        const auto v = crf::viterbi(em, trans);
        const auto brute = testing::brute_viterbi(em, trans);
        worst_v = std::max(worst_v, std::abs(v.score - brute.score));
        worst_v = std::max(worst_v, std::abs(testing::brute_sequence_score(em, trans, v.tags) - brute.score));
        for (std::size_t i = 0; i < v.tags.size(); ++i) {
            const std::size_t from = i == 0 ? crf::kStart : v.tags[i - 1];
            valid = valid && crf::transition_allowed(from, v.tags[i]);
        }
        valid = valid && crf::transition_allowed(v.tags.back(), crf::kStop);
    }
    return {worst_z <= kLogZTol && worst_v <= kViterbiTol && valid,
            fmt("200 instances, max |logZ - brute| %.2e, max |viterbi - brute max| %.2e", worst_z, worst_v) +
                (valid ? ", argmax mask-valid" : ", MASK VIOLATION")};
}

// 2 ---------------------------------------------------------------------

double grad_error(const LossFn& loss, const std::function<double(const ParamSet&)>& plain, const ParamSet& p) {
    const auto analytic = value_and_grad(loss, p).grads;
    return testing::max_rel_error(analytic, testing::finite_difference_grad(plain, p));
}

Outcome gradient_suite() {
    std::vector<std::pair<std::string, double>> worst;
    Rng rng(2002);

    double w = 0;  // CRF negative log-likelihood
    for (int trial = 0; trial < 50; ++trial) {
        const std::size_t n = 1 + rng.below(6);
        ParamSet p{{"em", random_tensor({n, 5}, rng, -2, 2)}, {"trans", random_tensor({7, 7}, rng, -2, 2)}};
        crf::TagSequence y = crf::spans_to_tags({}, n);
        if (n >= 2 && rng.below(2)) y = crf::spans_to_tags({{0, 1, "x"}}, n);
        LossFn loss = [&](Graph&, const VarMap& v) {
            return crf::nll(v.at("em"), crf::masked_transitions(v.at("trans")), y);
        };
        w = std::max(w, grad_error(loss, [&](const ParamSet& q) {
            return crf::nll(q.at("em"), crf::masked_transitions(q.at("trans")), y);
        }, p));
    }
    worst.emplace_back("crf-nll", w);

    for (auto mode : {SimilarityMode::GaussianKl, SimilarityMode::NegSqEuclid}) {
        w = 0;
        for (int trial = 0; trial < 50; ++trial) {
            const std::size_t m = 3 + rng.below(4), d = 2 + rng.below(4);
            ParamSet p = init_projection_params(d, 3, 7000 + trial);
            const Tensor e = random_tensor({m, d}, rng);
            std::vector<std::size_t> y(m);
            for (std::size_t i = 0; i < m; ++i) y[i] = i < 2 ? 0 : rng.below(2);
            ContrastiveConfig cc;
            cc.mode = mode;
            cc.temperature = rng.uniform(0.3, 1.0);
            LossFn loss = [&](Graph& g, const VarMap& v) {
                return head::contrastive_loss(head::similarity_matrix(head::project(v, g.constant(e)), mode), y,
                                              cc.temperature);
            };
            auto plain = [&](const ParamSet& q) {
                std::vector<ProjectionOutput> z;
                for (std::size_t i = 0; i < m; ++i) z.push_back(project(e.row_vector(i), q));
                return contrastive_loss(z, y, cc);
            };
            w = std::max(w, grad_error(loss, plain, p));
        }
        worst.emplace_back("contrastive/" + to_string(mode), w);
    }

    w = 0;  // prototype loss through max-pooling and prototypes
    for (int trial = 0; trial < 50; ++trial) {
        ParamSet p{{"support", random_tensor({6, 4}, rng)}, {"query", random_tensor({5, 4}, rng)}};
        const std::vector<crf::EntitySpan> ss{{0, 1, ""}, {2, 2, ""}, {3, 5, ""}}, qs{{0, 0, ""}, {1, 3, ""}};
        const std::vector<std::size_t> sl{0, 1, 0}, ql{1, 0};
        const LabelSet labels{"a", "b"};
        LossFn loss = [&](Graph&, const VarMap& v) {
            Var c = head::prototypes(head::pool_spans(v.at("support"), ss), sl, labels);
            return head::ec_loss(head::proto_log_probs(head::pool_spans(v.at("query"), qs), c, DistanceKind::SqEuclid),
                                 ql);
        };
        auto plain = [&](const ParamSet& q) {
            std::vector<std::vector<double>> se;
            for (const auto& s : ss) se.push_back(pool_span(q.at("support"), s.start, s.end));
            const auto protos = prototypes(se, sl, labels);
            std::vector<TypeDistribution> dists;
            for (const auto& s : qs) dists.push_back(proto_distribution(pool_span(q.at("query"), s.start, s.end), protos));
            return ec_loss(dists, ql);
        };
        w = std::max(w, grad_error(loss, plain, p));
    }
    worst.emplace_back("ec-loss", w);

    w = 0;  // trainable encoder under the span-detection loss
    const std::vector<Sentence> vocab_src{{"v", {"a", "b", "c", "d", "e", "f"}}};
    for (int trial = 0; trial < 50; ++trial) {
        EncoderConfig ec;
        ec.embed_dim = 3;
        ec.hidden_dim = 4;
        const Encoder enc(ec, Vocab::build(vocab_src));
        ParamSet p = enc.init_params(9000 + trial);
        p.merge(crf::init_params(4, 9100 + trial));
        const std::vector<AnnotatedSentence> batch{{{"s0", {"a", "c", "zz", "b"}}, {{1, 2, "x"}}},
                                                   {{"s1", {"f", "e"}}, {{0, 0, "x"}}}};
        LossFn loss = [&](Graph& g, const VarMap& v) { return esd_loss(g, v, enc, batch, false, 0); };
        w = std::max(w, grad_error(loss, [&](const ParamSet& q) { return evaluate(loss, q); }, p));
    }
    worst.emplace_back("trainable-encoder", w);

    bool pass = true;
    std::string detail = "50 trials each, max rel error";
    for (const auto& [name, e] : worst) {
        pass = pass && e < kGradTol;
        detail += " " + name + " " + fmt("%.1e", e);
    }
    return {pass, detail};
}

// 3 ---------------------------------------------------------------------

Outcome distributions() {
    Rng rng(3003);
    double worst = 0;
    bool nonneg = true;
    auto check = [&](const TypeDistribution& p) {
        double s = 0;
        for (double v : p) {
            nonneg = nonneg && v >= 0.0;
            s += v;
        }
        worst = std::max(worst, std::abs(s - 1.0));
    };
    std::size_t emitted = 0;
    for (int trial = 0; trial < 300; ++trial) {
        const std::size_t n = 1 + rng.below(6), d = 1 + rng.below(10), m = n + rng.below(30);
        const double scale = trial % 3 == 0 ? 100.0 : 1.0;  // include underflow-prone distances
        std::vector<std::vector<double>> keys;
        std::vector<std::size_t> values;
        for (std::size_t i = 0; i < m; ++i) {
            keys.push_back(random_vec(d, rng, scale));
            values.push_back(i < n ? i : rng.below(n));
        }
        LabelSet labels;
        for (std::size_t t = 0; t < n; ++t) labels.push_back("t" + std::to_string(t));
        const auto store = make_datastore(labels, keys, values);
        const auto protos = prototypes(keys, values, labels);
        DecoderConfig dc;
        dc.k = 1 + rng.below(12);
        const std::vector<double> e = random_vec(d, rng, scale);
        const auto soft = proto_distribution(e, protos, trial % 2 ? DistanceKind::Euclid : DistanceKind::SqEuclid);
        const auto knn = knn_distribution(e, store, dc);
        check(soft);
        check(knn);
        check(interpolate(knn, soft, rng.uniform()));
        emitted += 3;
    }

    // single-source reductions on decoded sentences
    const auto& setup = testing::synthetic_setup();
    const Encoder& enc = setup.encoder;
    const auto tc = testing::synthetic_trainer_config();
    ParamSet esd = init_model_params(ModelKind::Esd, enc, tc, 1);
    esd.at("crf.emission_bias")[crf::O] = -3.0;  // decode plenty of spans
    const ParamSet ec = init_model_params(ModelKind::Ec, enc, tc, 2);
    std::size_t spans = 0;
    bool exact = true;
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        const auto ep = sample_episode(setup.data.target, 4, 1, seed);
        const auto store = build_datastore(enc, ec, ep.support, ep.types);
        const auto protos = support_prototypes(enc, ec, ep.support, ep.types);
        DecoderConfig c0, c1;
        c0.lambda = 0.0;
        c1.lambda = 1.0;
        for (const auto& q : ep.query) {
            const auto p0 = infer_sentence(q.sentence, enc, esd, enc, ec, store, protos, c0);
            const auto p1 = infer_sentence(q.sentence, enc, esd, enc, ec, store, protos, c1);
            const Tensor h = enc.encode_value(ec, q.sentence);
            exact = exact && p0.size() == p1.size();
            for (std::size_t k = 0; k < p0.size() && exact; ++k) {
                const auto e = pool_span(h, p0[k].span.start, p0[k].span.end);
                const auto soft = proto_distribution(e, protos);
                const auto knn = knn_distribution(e, store, c1);
                exact = exact && p0[k].p == soft && p1[k].p == knn &&
                        p0[k].span.type == ep.types[argmax(soft)] && p1[k].span.type == ep.types[argmax(knn)];
                check(p0[k].p);
                check(p1[k].p);
                ++spans;
            }
        }
    }
    return {worst <= kDistTol && nonneg && exact && spans > 0,
            fmt("%.0f random distributions + %.0f decoded spans, max |sum - 1| %.1e", emitted, spans, worst) +
                (nonneg ? ", non-negative" : ", NEGATIVE ENTRY") +
                (exact ? ", lambda 0/1 bitwise equal to single-source" : ", LAMBDA REDUCTION MISMATCH")};
}

// 4 ---------------------------------------------------------------------

Outcome knn_oracle() {
    Rng rng(4004);
    double worst = 0;
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t m = 1 + rng.below(50), d = 1 + rng.below(16), n = 1 + rng.below(5);
        std::vector<std::vector<double>> keys;
        std::vector<std::size_t> values;
        for (std::size_t i = 0; i < m; ++i) {
            keys.push_back(random_vec(d, rng));
            values.push_back(rng.below(n));
        }
        LabelSet labels;
        for (std::size_t t = 0; t < n; ++t) labels.push_back(std::to_string(t));
        const auto store = make_datastore(labels, keys, values);
        DecoderConfig dc;
        dc.k = 1 + rng.below(20);
        dc.temperature = rng.uniform(0.2, 3.0);
        const auto e = random_vec(d, rng);
        // full sort of (distance, index), unshifted weights
        std::vector<std::pair<double, std::size_t>> order;
        for (std::size_t i = 0; i < m; ++i) {
            double dist = 0;
            for (std::size_t j = 0; j < d; ++j) dist += std::pow(e[j] - store.keys.at(i, j), 2);
            order.emplace_back(dist, i);
        }
        std::sort(order.begin(), order.end());
        std::vector<double> want(n, 0.0);
        double z = 0;
        for (std::size_t i = 0; i < std::min(dc.k, m); ++i) {
            const double wgt = std::exp(-order[i].first / dc.temperature);
            want[values[order[i].second]] += wgt;
            z += wgt;
        }
        const auto got = knn_distribution(e, store, dc);
        for (std::size_t t = 0; t < n; ++t) worst = std::max(worst, std::abs(got[t] - want[t] / z));
    }
    return {worst <= kKnnTol, fmt("100 stores, max |p - brute| %.1e", worst)};
}

// 5 ---------------------------------------------------------------------

Outcome bioes_roundtrip() {
    Rng rng(5005);
    std::size_t mismatches = 0;
    for (int trial = 0; trial < 1000; ++trial) {
        const std::size_t n = 1 + rng.below(25);
        std::vector<crf::EntitySpan> spans;
        std::size_t pos = rng.below(3);
        while (pos < n) {
            const std::size_t len = 1 + rng.below(4);
            if (pos + len > n) break;
            spans.push_back({pos, pos + len - 1, "t" + std::to_string(rng.below(3))});
            pos += len + rng.below(3);
        }
        auto back = crf::tags_to_spans(crf::spans_to_tags(spans, n));
        for (std::size_t i = 0; i < back.size() && i < spans.size(); ++i) back[i].type = spans[i].type;
        if (back != spans) ++mismatches;
    }
    std::size_t violations = 0;
    for (int trial = 0; trial < 1000; ++trial) {
        const std::size_t n = 1 + rng.below(20);
        const auto v = crf::viterbi(random_tensor({n, 5}, rng, -4, 4), random_masked_trans(rng));
        if (!crf::is_well_formed(v.tags)) ++violations;
    }
    return {mismatches == 0 && violations == 0,
            fmt("1000 span sets, %.0f round-trip mismatches; 1000 decodes, %.0f mask violations",
                static_cast<double>(mismatches), static_cast<double>(violations))};
}

// 6 ---------------------------------------------------------------------

double moving_average(const std::vector<MetricsRow>& log, std::size_t step) {
    double s = 0;
    std::size_t c = 0;
    for (const auto& r : log) {
        if (r.train_loss && r.step <= step && r.step + kMovingWindow > step) {
            s += *r.train_loss;
            ++c;
        }
    }
    return s / static_cast<double>(c);
}

Outcome maml_behaviour() {
    const auto& setup = testing::synthetic_setup();
    const Encoder& enc = setup.encoder;
    auto tc = testing::synthetic_trainer_config();
    std::string detail;
    bool pass = true;
    for (auto kind : {ModelKind::Esd, ModelKind::Ec}) {
        const ParamSet init = init_model_params(kind, enc, tc, 11);
        std::size_t reduced = 0;
        for (std::uint64_t t = 0; t < 100; ++t) {
            const auto ep = sample_episode(setup.data.train, tc.n_way, tc.k_shot, mix_seed(606, t));
            LossFn loss = [&](Graph& g, const VarMap& v) {
                return kind == ModelKind::Esd ? esd_loss(g, v, enc, ep.support, false, 0)
                                              : ec_support_loss(g, v, enc, ep, tc, false, 0);
            };
            const double before = evaluate(loss, init);
            if (evaluate(loss, inner_update(init, loss, 1e-3)) < before) ++reduced;
        }
        const auto result = train(kind, enc, init, setup.data.train, setup.data.valid, tc);
        const double ma10 = moving_average(result.log, 10), ma300 = moving_average(result.log, tc.steps);
        pass = pass && reduced >= kInnerStepRate * 100 && ma300 <= kLossRatio * ma10;
        detail += to_string(kind) + fmt(": inner step reduced %.0f/100, query-loss MA %.3g -> %.3g (ratio %.3f); ",
                                         static_cast<double>(reduced), ma10, ma300, ma300 / ma10);
    }
    detail.resize(detail.size() - 2);
    return {pass, detail};
}

// 7, 8 ------------------------------------------------------------------

struct Pipeline {
    fs::path root;
    double f1 = 0, f1_std = 0, f1_no_knn = 0;
};

int cli(std::vector<std::string> args) {
    std::ostringstream out, err;
    const int code = cli::run(args, out, err);
    if (code != 0) throw std::runtime_error(args[0] + " exited " + std::to_string(code) + ": " + err.str());
    return code;
}

fs::path write_synthetic(const fs::path& dir) {
    fs::create_directories(dir);
    const auto data = generate_synthetic({});
    std::ofstream(dir / "train.txt") << serialize_corpus(data.train, CorpusFormat::BioesTyped);
    std::ofstream(dir / "valid.txt") << serialize_corpus(data.valid, CorpusFormat::BioesTyped);
    std::ofstream(dir / "target.txt") << serialize_corpus(data.target, CorpusFormat::BioesTyped);
    write_embedding_file((dir / "emb.msfe").string(), data.embeddings);
    return dir;
}

Pipeline run_pipeline(const fs::path& data, const fs::path& root) {
    fs::remove_all(root);
    const std::vector<std::string> model{"--encoder", "precomputed", "--embeddings", (data / "emb.msfe").string(),
                                         "--hidden-dim", "24", "--batch-size", "4", "--outer-lr", "1e-2",
                                         "--steps", "300", "--valid-interval", "50", "--valid-episodes", "8",
                                         "--n-way", "4", "--k-shot", "1", "--finetune-steps", "20", "--seed", "3"};
    auto with = [&](std::vector<std::string> a) {
        a.insert(a.end(), model.begin(), model.end());
        return a;
    };
    const std::string s = root.string();
    for (const char* cmd : {"train-esd", "train-ec"}) {
        cli(with({cmd, "--train", (data / "train.txt").string(), "--valid", (data / "valid.txt").string(), "--out",
                  s + "/models"}));
    }
    cli({"sample-episodes", "--corpus", (data / "target.txt").string(), "--n-way", "4", "--k-shot", "1",
         "--num-episodes", "10", "--seed", "77", "--out", s + "/episodes"});
    const std::string eps = s + "/episodes/episodes.jsonl";
    cli(with({"finetune", "--episodes", eps, "--esd-checkpoint", s + "/models/esd.ckpt", "--ec-checkpoint",
              s + "/models/ec.ckpt", "--out", s + "/finetuned"}));
    cli(with({"build-datastore", "--episodes", eps, "--finetuned", s + "/finetuned", "--out", s + "/stores"}));
    Pipeline p{root};
    for (const char* lambda : {"0.1", "0"}) {
        const std::string tag = std::string(lambda) == "0" ? "/no_knn" : "/full";
        cli(with({"infer", "--episodes", eps, "--finetuned", s + "/finetuned", "--lambda", lambda, "--out",
                  s + tag}));
        cli({"eval", "--episodes", eps, "--predictions", s + tag + "/predictions.jsonl", "--out", s + tag});
        const auto summary = cli::evaluate_predictions(read_predictions(s + tag + "/predictions.jsonl"),
                                                       read_episodes(eps));
        (tag == "/full" ? p.f1 : p.f1_no_knn) = summary.f1_mean;
        if (tag == "/full") p.f1_std = summary.f1_std;
    }
    return p;
}

fs::path scratch() { return fs::temp_directory_path() / "msfner_acceptance"; }

Pipeline first_run;

Outcome end_to_end() {
    const fs::path data = write_synthetic(scratch() / "data");
    first_run = run_pipeline(data, scratch() / "run_a");
    const bool pass = first_run.f1 >= kMinF1 && std::abs(first_run.f1 - first_run.f1_no_knn) <= kAblationBand;
    return {pass, fmt("10 target episodes, F1 %.4f +- %.4f (need >= %.2f); ", first_run.f1, first_run.f1_std, kMinF1) +
                      fmt("lambda=0 F1 %.4f, |delta| %.4f (band %.2f)", first_run.f1_no_knn,
                          std::abs(first_run.f1 - first_run.f1_no_knn), kAblationBand)};
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

Outcome determinism() {
    if (first_run.root.empty()) return {false, "end-to-end run did not complete"};
    const Pipeline again = run_pipeline(scratch() / "data", scratch() / "run_b");
    std::size_t compared = 0, differing = 0;
    std::string first_diff;
    for (const auto& entry : fs::recursive_directory_iterator(first_run.root)) {
        if (!entry.is_regular_file()) continue;
        const auto rel = fs::relative(entry.path(), first_run.root);
        if (rel.filename().string().rfind("resolved_", 0) == 0) continue;  // holds the output paths
        ++compared;
        if (!fs::exists(again.root / rel) || slurp(entry.path()) != slurp(again.root / rel)) {
            ++differing;
            if (first_diff.empty()) first_diff = rel.string();
        }
    }
    return {differing == 0 && compared > 0,
            fmt("%.0f output files (checkpoints, metrics logs, episodes, datastores, predictions, reports) "
                "rerun with seed 3, %.0f differ",
                static_cast<double>(compared), static_cast<double>(differing)) +
                (first_diff.empty() ? "" : ", first: " + first_diff)};
}

// 9 ---------------------------------------------------------------------

Outcome default_config() {
    const fs::path dir = scratch() / "defaults";
    fs::remove_all(dir);
    const std::string cfg = std::string(MSFNER_SOURCE_DIR) + "/configs/default.cfg";
    cli({"sample-episodes", "--config", cfg, "--corpus", (scratch() / "data" / "target.txt").string(), "--n-way", "4",
         "--num-episodes", "1", "--out", dir.string()});
    RunConfig dumped;
    dumped.merge_file((dir / "resolved_sample-episodes.cfg").string());
    struct Want {
        const char* key;
        double value;
    };
    const Want wants[] = {{"knn_k", 10},    {"lambda", 0.1},  {"dropout", 0.2}, {"batch_size", 32},
                          {"steps", 1000},  {"outer_lr", 3e-5}, {"max_len", 128}};
    std::string detail;
    bool pass = true;
    for (const auto& w : wants) {
        const double got = dumped.get_double(w.key);
        pass = pass && got == w.value;
        detail += std::string(w.key) + "=" + dumped.get(w.key) + " ";
    }
    detail.pop_back();
    return {pass, "resolved dump: " + detail};
}

}  // namespace
}  // namespace msfner

int main() {
    using namespace msfner;
    report(1, "CRF oracle equivalence", crf_oracle, kLimitCrf);
    report(2, "gradient suite", gradient_suite, kLimitGrad);
    report(3, "distribution invariants", distributions);
    report(4, "KNN oracle", knn_oracle);
    report(5, "BIOES round trip", bioes_roundtrip);
    report(6, "MAML behaviour", maml_behaviour, kLimitMaml);
    report(7, "synthetic end-to-end", end_to_end, kLimitE2E);
    report(8, "determinism", determinism);
    report(9, "default config", default_config);
    std::printf("%d of 9 criteria failed\n", failures);
    return failures;
}
