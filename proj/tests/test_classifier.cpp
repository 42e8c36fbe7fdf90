#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "msfner/classifier.hpp"
#include "msfner/error.hpp"
#include "test_util.hpp"

namespace msfner {
namespace {

using testing::random_tensor;

std::vector<double> random_vec(std::size_t n, Rng& rng, double lo = -1, double hi = 1) {
    std::vector<double> v(n);
    for (double& x : v) x = rng.uniform(lo, hi);
    return v;
}

ProjectionOutput random_projection(std::size_t d, Rng& rng) {
    return {random_vec(d, rng, -1.5, 1.5), random_vec(d, rng, -1.0, 1.0)};
}

// Independent oracle: direct nested loops, explicit exp/sum, no log-sum-exp.
double naive_contrastive(const std::vector<ProjectionOutput>& z, const std::vector<std::size_t>& y,
                         SimilarityMode mode, double tau) {
    auto sim = [&](std::size_t a, std::size_t b) {
        double s = 0.0;
        for (std::size_t i = 0; i < z[a].mean.size(); ++i) {
            const double dm = z[a].mean[i] - z[b].mean[i];
            if (mode == SimilarityMode::NegSqEuclid) {
                s -= dm * dm;
            } else {
                const double va = std::exp(z[a].log_var[i]), vb = std::exp(z[b].log_var[i]);
                const double kl_ab = std::log(std::sqrt(vb) / std::sqrt(va)) + (va + dm * dm) / (2 * vb) - 0.5;
                const double kl_ba = std::log(std::sqrt(va) / std::sqrt(vb)) + (vb + dm * dm) / (2 * va) - 0.5;
                s -= (kl_ab + kl_ba) / 2;
            }
        }
        return s;
    };
    double loss = 0.0;
    for (std::size_t j = 0; j < z.size(); ++j) {
        double denom = 0.0;
        for (std::size_t a = 0; a < z.size(); ++a)
            if (a != j) denom += std::exp(sim(j, a) / tau);
        double inner = 0.0;
        std::size_t positives = 0;
        for (std::size_t p = 0; p < z.size(); ++p) {
            if (p == j || y[p] != y[j]) continue;
            ++positives;
            inner += std::log(std::exp(sim(j, p) / tau) / denom);
        }
        if (positives) loss -= inner / static_cast<double>(positives);
    }
    return loss;
}

TEST(PoolSpan, SingleTokenSpanIsTheRow) {
    const Tensor h = Tensor::matrix({{1, -2, 3}, {4, 5, 6}});
    EXPECT_EQ(pool_span(h, 1, 1), (std::vector<double>{4, 5, 6}));
}

TEST(PoolSpan, ElementwiseMax) {
    const Tensor h = Tensor::matrix({{1, 4}, {3, 2}});
    EXPECT_EQ(pool_span(h, 0, 1), (std::vector<double>{3, 4}));
}

TEST(PoolSpan, OutOfRange) {
    const Tensor h({2, 3}, 0.0);
    EXPECT_THROW(pool_span(h, 1, 2), DataError);
    EXPECT_THROW(pool_span(h, 1, 0), DataError);
}

TEST(PoolSpan, GradientRoutesToArgmaxRows) {
    Rng rng(2);
    ParamSet p{{"h", random_tensor({5, 4}, rng)}};
    const std::vector<crf::EntitySpan> spans{{1, 3, ""}, {4, 4, ""}};
    LossFn loss = [&](Graph& g, const VarMap& v) {
        Var pooled = head::pool_spans(v.at("h"), spans);
        return ops::sum(ops::mul(pooled, g.constant(Tensor::matrix({{1, 2, 3, 4}, {5, 6, 7, 8}}))));
    };
    const auto vg = value_and_grad(loss, p);
    const Tensor& h = p.at("h");
    const Tensor& gh = vg.grads.at("h");
    for (std::size_t j = 0; j < 4; ++j) {
        std::size_t best = 1;
        for (std::size_t i = 2; i <= 3; ++i)
            if (h.at(i, j) > h.at(best, j)) best = i;
        for (std::size_t i = 0; i < 5; ++i) {
            double expected = 0.0;
            if (i == best) expected = static_cast<double>(j + 1);
            if (i == 4) expected = static_cast<double>(j + 5);
            EXPECT_DOUBLE_EQ(gh.at(i, j), expected);
        }
    }
    EXPECT_TRUE(grad_check(loss, p).pass);
}

TEST(Project, ZeroWeightsGiveStandardGaussian) {
    ParamSet p = init_projection_params(4, 3, 1);
    for (auto& [name, t] : p) std::fill(t.data().begin(), t.data().end(), 0.0);
    const auto z = project(std::vector<double>{1, 2, 3, 4}, p);
    EXPECT_EQ(z.mean, (std::vector<double>{0, 0, 0}));
    EXPECT_EQ(z.log_var, (std::vector<double>{0, 0, 0}));
}

TEST(Project, Deterministic) {
    const ParamSet p = init_projection_params(4, 3, 5);
    const std::vector<double> e{0.5, -1, 2, 0};
    const auto a = project(e, p);
    const auto b = project(e, p);
    EXPECT_EQ(a.mean, b.mean);
    EXPECT_EQ(a.log_var, b.log_var);
}

TEST(Similarity, IdenticalGaussiansScoreZero) {
    const ProjectionOutput a{{0.3, -1}, {0.2, -0.5}};
    EXPECT_NEAR(similarity(a, a, SimilarityMode::GaussianKl), 0.0, 1e-15);
    EXPECT_EQ(similarity(a, a, SimilarityMode::NegSqEuclid), 0.0);
}

TEST(Similarity, ClosedForms) {
    EXPECT_NEAR(similarity({{0}, {0}}, {{2}, {0}}, SimilarityMode::GaussianKl), -2.0, 1e-15);
    EXPECT_DOUBLE_EQ(similarity({{0, 0}, {5, 5}}, {{1, 1}, {-3, 2}}, SimilarityMode::NegSqEuclid), -2.0);
}

TEST(Similarity, Errors) {
    EXPECT_THROW(similarity({{0, 0}, {0, 0}}, {{1}, {1}}, SimilarityMode::NegSqEuclid), DataError);
    EXPECT_THROW(similarity({{0}, {0}}, {{1}, {1}}, SimilarityMode::Auto), ConfigError);
    EXPECT_EQ(resolve_similarity(SimilarityMode::Auto, 1), SimilarityMode::NegSqEuclid);
    EXPECT_EQ(resolve_similarity(SimilarityMode::Auto, 2), SimilarityMode::GaussianKl);
    EXPECT_EQ(resolve_similarity(SimilarityMode::NegSqEuclid, 5), SimilarityMode::NegSqEuclid);
}

TEST(Similarity, MatrixMatchesPairwiseScalar) {
    Rng rng(17);
    for (auto mode : {SimilarityMode::GaussianKl, SimilarityMode::NegSqEuclid}) {
        std::vector<ProjectionOutput> z;
        for (int i = 0; i < 6; ++i) z.push_back(random_projection(3, rng));
        Tensor mean({6, 3}), lv({6, 3});
        for (std::size_t i = 0; i < 6; ++i)
            for (std::size_t j = 0; j < 3; ++j) {
                mean.at(i, j) = z[i].mean[j];
                lv.at(i, j) = z[i].log_var[j];
            }
        Graph g;
        const Tensor sim = head::similarity_matrix({g.constant(mean), g.constant(lv)}, mode).value();
        for (std::size_t a = 0; a < 6; ++a)
            for (std::size_t b = 0; b < 6; ++b) EXPECT_NEAR(sim.at(a, b), similarity(z[a], z[b], mode), 1e-12);
    }
}

TEST(ContrastiveLoss, IdenticalPairIsZero) {
    const ProjectionOutput z{{0.5, 1}, {0, 0}};
    const std::vector<ProjectionOutput> batch{z, z};
    const std::vector<std::size_t> labels{0, 0};
    for (auto mode : {SimilarityMode::GaussianKl, SimilarityMode::NegSqEuclid}) {
        EXPECT_NEAR(contrastive_loss(batch, labels, {0.1, mode, 2}), 0.0, 1e-12);
    }
}

TEST(ContrastiveLoss, SymmetricBatch) {
    const ProjectionOutput z{{0.5, 1}, {0.1, 0}};
    const std::vector<ProjectionOutput> batch(4, z);
    const std::vector<std::size_t> labels{0, 0, 1, 1};
    EXPECT_NEAR(contrastive_loss(batch, labels, {0.1, SimilarityMode::GaussianKl, 2}), 4 * std::log(3.0), 1e-12);
}

TEST(ContrastiveLoss, TooSmallBatch) {
    const std::vector<ProjectionOutput> batch{{{0}, {0}}};
    const std::vector<std::size_t> labels{0};
    EXPECT_THROW(contrastive_loss(batch, labels, {0.1, SimilarityMode::NegSqEuclid, 1}), DataError);
}

TEST(ContrastiveLoss, MatchesNaiveDoubleLoop) {
    Rng rng(55);
    for (int trial = 0; trial < 30; ++trial) {
        for (auto mode : {SimilarityMode::GaussianKl, SimilarityMode::NegSqEuclid}) {
            std::vector<ProjectionOutput> z;
            std::vector<std::size_t> y;
            for (int i = 0; i < 5; ++i) {
                z.push_back(random_projection(3, rng));
                y.push_back(rng.below(3));
            }
            const double tau = rng.uniform(0.5, 2.0);
            EXPECT_NEAR(contrastive_loss(z, y, {tau, mode, 3}), naive_contrastive(z, y, mode, tau), 1e-9);
        }
    }
}

TEST(ContrastiveLoss, InvariantToRelabelingAndReordering) {
    Rng rng(8);
    std::vector<ProjectionOutput> z;
    for (int i = 0; i < 6; ++i) z.push_back(random_projection(4, rng));
    const std::vector<std::size_t> y{0, 1, 2, 0, 1, 1};
    const ContrastiveConfig cfg{0.1, SimilarityMode::GaussianKl, 4};
    const double base = contrastive_loss(z, y, cfg);
    const std::vector<std::size_t> renamed{2, 0, 1, 2, 0, 0};
    EXPECT_NEAR(contrastive_loss(z, renamed, cfg), base, 1e-12);
    const std::vector<std::size_t> order{5, 3, 0, 4, 1, 2};
    std::vector<ProjectionOutput> zp;
    std::vector<std::size_t> yp;
    for (std::size_t i : order) {
        zp.push_back(z[i]);
        yp.push_back(y[i]);
    }
    EXPECT_NEAR(contrastive_loss(zp, yp, cfg), base, 1e-9);
}

TEST(ContrastiveLoss, GradientThroughProjection) {
    Rng rng(12);
    for (auto mode : {SimilarityMode::GaussianKl, SimilarityMode::NegSqEuclid}) {
        for (int trial = 0; trial < 5; ++trial) {
            ParamSet p = init_projection_params(4, 3, trial);
            const Tensor e = random_tensor({5, 4}, rng);
            const std::vector<std::size_t> y{0, 1, 0, 1, 1};
            LossFn loss = [&](Graph& g, const VarMap& v) {
                auto z = head::project(v, g.constant(e));
                return head::contrastive_loss(head::similarity_matrix(z, mode), y, 0.5);
            };
            const auto r = grad_check(loss, p);
            EXPECT_TRUE(r.pass) << to_string(mode) << " " << r.worst_param << " " << r.max_rel_error;
        }
    }
}

double mean_pairwise(const Tensor& m, const std::vector<std::size_t>& y, bool same) {
    double total = 0.0;
    std::size_t count = 0;
    for (std::size_t a = 0; a < m.rows(); ++a)
        for (std::size_t b = a + 1; b < m.rows(); ++b) {
            if ((y[a] == y[b]) != same) continue;
            double d = 0.0;
            for (std::size_t j = 0; j < m.cols(); ++j) d += (m.at(a, j) - m.at(b, j)) * (m.at(a, j) - m.at(b, j));
            total += d;
            ++count;
        }
    return total / static_cast<double>(count);
}

struct ClusterRun {
    double intra_before, intra_after, inter_before, inter_after;
};

ClusterRun train_two_clusters(SimilarityMode mode, double tau) {
    {
        Rng rng(404);
        const std::size_t d = 6, m = 12;
        std::vector<double> c0 = random_vec(d, rng), c1 = random_vec(d, rng);
        Tensor e({m, d});
        std::vector<std::size_t> y(m);
        for (std::size_t i = 0; i < m; ++i) {
            y[i] = i % 2;
            const auto& c = y[i] ? c1 : c0;
            for (std::size_t j = 0; j < d; ++j) e.at(i, j) = c[j] + 0.5 * rng.normal();
        }
        LossFn loss = [&](Graph& g, const VarMap& v) {
            auto z = head::project(v, g.constant(e));
            return head::contrastive_loss(head::similarity_matrix(z, mode), y, tau);
        };
        auto means = [&](const ParamSet& p) {
            Graph g;
            VarMap v;
            for (const auto& [name, t] : p) v.emplace(name, g.constant(t));
            return head::project(v, g.constant(e)).mean.value();
        };
        ParamSet p = init_projection_params(d, 4, 1);
        const Tensor before = means(p);
        AdamState state;
        for (int step = 0; step < 200; ++step) {
            auto r = adaptive_step(state, p, value_and_grad(loss, p).grads, 1e-2, {0.9, 0.999, 1e-8, 0.0});
            state = std::move(r.state);
            p = std::move(r.params);
        }
        const Tensor after = means(p);
        return {mean_pairwise(before, y, true), mean_pairwise(after, y, true),
                mean_pairwise(before, y, false), mean_pairwise(after, y, false)};
    }
}

TEST(ContrastiveLoss, TrainingTightensClusters) {
    for (auto mode : {SimilarityMode::NegSqEuclid, SimilarityMode::GaussianKl}) {
        const ClusterRun r = train_two_clusters(mode, 1.0);
        EXPECT_LT(r.intra_after, r.intra_before) << to_string(mode);
        EXPECT_GE(r.inter_after, r.inter_before) << to_string(mode);
    }
}

TEST(ContrastiveLoss, LowTemperatureStillSeparatesClusters) {
    // At tau = 0.1 negatives saturate early and the loss shrinks the whole
    // space, so only the intra/inter ratio is guaranteed to improve.
    for (auto mode : {SimilarityMode::NegSqEuclid, SimilarityMode::GaussianKl}) {
        const ClusterRun r = train_two_clusters(mode, 0.1);
        EXPECT_LT(r.intra_after, r.intra_before) << to_string(mode);
        EXPECT_LT(r.intra_after / r.inter_after, r.intra_before / r.inter_before) << to_string(mode);
    }
}

TEST(Prototypes, SingleEntityPerClass) {
    const std::vector<std::vector<double>> e{{1, 2}, {3, 4}};
    const std::vector<std::size_t> y{1, 0};
    const auto p = prototypes(e, y, {"a", "b"});
    EXPECT_EQ(p.centers, Tensor::matrix({{3, 4}, {1, 2}}));
}

TEST(Prototypes, Mean) {
    const std::vector<std::vector<double>> e{{1, 1}, {3, 3}};
    const std::vector<std::size_t> y{0, 0};
    EXPECT_EQ(prototypes(e, y, {"a"}).centers, Tensor::matrix({{2, 2}}));
}

TEST(Prototypes, PermutationInvariant) {
    Rng rng(3);
    std::vector<std::vector<double>> e;
    std::vector<std::size_t> y;
    for (int i = 0; i < 8; ++i) {
        e.push_back(random_vec(3, rng));
        y.push_back(i % 3);
    }
    const auto base = prototypes(e, y, {"x", "y", "z"});
    std::vector<std::size_t> order(8);
    std::iota(order.begin(), order.end(), 0);
    rng.shuffle(order);
    std::vector<std::vector<double>> e2;
    std::vector<std::size_t> y2;
    for (std::size_t i : order) {
        e2.push_back(e[i]);
        y2.push_back(y[i]);
    }
    const auto shuffled = prototypes(e2, y2, {"x", "y", "z"});
    for (std::size_t i = 0; i < base.centers.size(); ++i) EXPECT_NEAR(shuffled.centers[i], base.centers[i], 1e-15);
}

TEST(Prototypes, EmptyClassNamesTheClass) {
    const std::vector<std::vector<double>> e{{1, 1}};
    const std::vector<std::size_t> y{0};
    try {
        prototypes(e, y, {"person", "location"});
        FAIL() << "expected DataError";
    } catch (const DataError& err) {
        EXPECT_NE(std::string(err.what()).find("location"), std::string::npos);
    }
}

TEST(ProtoDistribution, NearestPrototypeWins) {
    Prototypes p{{"a", "b", "c"}, Tensor::matrix({{0, 0}, {10, 10}, {-10, 20}})};
    const auto dist = proto_distribution(std::vector<double>{0, 0}, p);
    EXPECT_EQ(argmax(dist), 0u);
}

TEST(ProtoDistribution, EquidistantIsUniform) {
    Prototypes p{{"a", "b"}, Tensor::matrix({{1, 0}, {-1, 0}})};
    const auto dist = proto_distribution(std::vector<double>{0, 3}, p);
    EXPECT_NEAR(dist[0], 0.5, 1e-15);
    EXPECT_NEAR(dist[1], 0.5, 1e-15);
}

TEST(ProtoDistribution, TranslationInvariantAndNormalised) {
    Rng rng(6);
    for (int trial = 0; trial < 30; ++trial) {
        Prototypes p{{"a", "b", "c", "d"}, random_tensor({4, 5}, rng, -2, 2)};
        const auto e = random_vec(5, rng, -2, 2);
        const auto shift = random_vec(5, rng, -10, 10);
        Prototypes moved = p;
        auto e2 = e;
        for (std::size_t j = 0; j < 5; ++j) {
            e2[j] += shift[j];
            for (std::size_t t = 0; t < 4; ++t) moved.centers.at(t, j) += shift[j];
        }
        for (auto kind : {DistanceKind::SqEuclid, DistanceKind::Euclid}) {
            const auto a = proto_distribution(e, p, kind);
            const auto b = proto_distribution(e2, moved, kind);
            double total = 0.0;
            for (std::size_t t = 0; t < 4; ++t) {
                EXPECT_NEAR(a[t], b[t], 1e-9);
                EXPECT_GE(a[t], 0.0);
                total += a[t];
            }
            EXPECT_NEAR(total, 1.0, 1e-9);
        }
    }
}

TEST(ProtoDistribution, GraphVersionMatchesPlain) {
    Rng rng(9);
    const Tensor q = random_tensor({3, 4}, rng);
    const Tensor c = random_tensor({2, 4}, rng);
    for (auto kind : {DistanceKind::SqEuclid, DistanceKind::Euclid}) {
        Graph g;
        const Tensor lp = head::proto_log_probs(g.constant(q), g.constant(c), kind).value();
        for (std::size_t i = 0; i < 3; ++i) {
            const auto p = proto_distribution(q.row(i), Prototypes{{"a", "b"}, c}, kind);
            for (std::size_t t = 0; t < 2; ++t) EXPECT_NEAR(std::exp(lp.at(i, t)), p[t], 1e-12);
        }
    }
}

TEST(EcLoss, Examples) {
    const std::vector<TypeDistribution> certain{{1, 0}, {0, 1}};
    const std::vector<std::size_t> gold{0, 1};
    EXPECT_EQ(ec_loss(certain, gold), 0.0);
    const std::vector<TypeDistribution> uniform(3, TypeDistribution(4, 0.25));
    const std::vector<std::size_t> g3{0, 2, 3};
    EXPECT_NEAR(ec_loss(uniform, g3), 3 * std::log(4.0), 1e-12);
    const std::vector<TypeDistribution> mixed{{0.5, 0.5}, {0.25, 0.75}};
    EXPECT_NEAR(ec_loss(mixed, std::vector<std::size_t>{0, 0}), std::log(2.0) + std::log(4.0), 1e-12);
    EXPECT_NEAR(std::log(2.0) + std::log(4.0), 2.0794, 1e-4);
    EXPECT_THROW(ec_loss(mixed, std::vector<std::size_t>{0}), DataError);
}

TEST(EcLoss, MonotoneInGoldProbability) {
    double previous = INFINITY;
    for (double p = 0.1; p < 1.0; p += 0.1) {
        const double rest = (1 - p) / 3;
        const std::vector<TypeDistribution> d{{rest, p, rest, rest}};
        const std::vector<std::size_t> gold{1};
        const double v = ec_loss(d, gold);
        EXPECT_LT(v, previous);
        previous = v;
    }
}

TEST(EcLoss, GradientThroughPoolingAndPrototypes) {
    Rng rng(13);
    for (int trial = 0; trial < 5; ++trial) {
        ParamSet p{{"support", random_tensor({6, 4}, rng)}, {"query", random_tensor({5, 4}, rng)}};
        const std::vector<crf::EntitySpan> sspans{{0, 1, ""}, {2, 2, ""}, {3, 5, ""}};
        const std::vector<std::size_t> slabels{0, 1, 0};
        const std::vector<crf::EntitySpan> qspans{{0, 0, ""}, {1, 3, ""}};
        const std::vector<std::size_t> qlabels{1, 0};
        for (auto kind : {DistanceKind::SqEuclid, DistanceKind::Euclid}) {
            LossFn loss = [&](Graph&, const VarMap& v) {
                Var centers = head::prototypes(head::pool_spans(v.at("support"), sspans), slabels, {"a", "b"});
                Var lp = head::proto_log_probs(head::pool_spans(v.at("query"), qspans), centers, kind);
                return head::ec_loss(lp, qlabels);
            };
            EXPECT_TRUE(grad_check(loss, p).pass);
        }
    }
}

TEST(EcLoss, GraphPrototypesMatchPlain) {
    Rng rng(14);
    const Tensor e = random_tensor({5, 3}, rng);
    const std::vector<std::size_t> y{0, 1, 1, 0, 1};
    Graph g;
    const Tensor c = head::prototypes(g.constant(e), y, {"a", "b"}).value();
    std::vector<std::vector<double>> rows;
    for (std::size_t i = 0; i < 5; ++i) rows.push_back(e.row_vector(i));
    const auto plain = prototypes(rows, y, {"a", "b"});
    for (std::size_t i = 0; i < c.size(); ++i) EXPECT_NEAR(c[i], plain.centers[i], 1e-15);
}

TEST(LabelSet, Validation) {
    EXPECT_THROW(validate_label_set({}), DataError);
    EXPECT_THROW(validate_label_set({"a", "a"}), DataError);
    EXPECT_EQ(label_index({"a", "b"}, "b"), 1u);
    EXPECT_THROW(label_index({"a"}, "z"), DataError);
    EXPECT_EQ(argmax({0.3, 0.3, 0.1}), 0u);
}

}  // namespace
}  // namespace msfner
