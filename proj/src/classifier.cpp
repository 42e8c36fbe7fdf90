#include "msfner/classifier.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "msfner/error.hpp"
#include "msfner/rng.hpp"

namespace msfner {

namespace {

// Pushes masked logits far below anything reachable while staying finite.
constexpr double kExcluded = -1e300;

Tensor xavier(std::size_t fan_in, std::size_t fan_out, Rng& rng) {
    const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    Tensor t({fan_in, fan_out});
    for (double& v : t.data()) v = rng.uniform(-a, a);
    return t;
}

Tensor row_matrix(std::span<const double> v) {
    return Tensor::matrix(1, v.size(), std::vector<double>(v.begin(), v.end()));
}

}  // namespace

void validate_label_set(const LabelSet& labels) {
    if (labels.empty()) throw DataError("label set is empty");
    std::set<std::string> seen;
    for (const auto& l : labels) {
        if (!seen.insert(l).second) throw DataError("duplicate entity type '" + l + "' in label set");
    }
}

std::size_t label_index(const LabelSet& labels, const std::string& type) {
    auto it = std::find(labels.begin(), labels.end(), type);
    if (it == labels.end()) throw DataError("entity type '" + type + "' is not in the label set");
    return static_cast<std::size_t>(it - labels.begin());
}

std::size_t argmax(const TypeDistribution& p) {
    if (p.empty()) throw DataError("argmax of an empty distribution");
    std::size_t best = 0;
    for (std::size_t i = 1; i < p.size(); ++i) {
        if (p[i] > p[best]) best = i;
    }
    return best;
}

std::string to_string(SimilarityMode mode) {
    switch (mode) {
        case SimilarityMode::Auto:
            return "auto";
        case SimilarityMode::GaussianKl:
            return "gaussian-kl";
        case SimilarityMode::NegSqEuclid:
            return "neg-sq-euclid";
    }
    return "auto";
}

SimilarityMode parse_similarity_mode(const std::string& s) {
    if (s == "auto") return SimilarityMode::Auto;
    if (s == "gaussian-kl") return SimilarityMode::GaussianKl;
    if (s == "neg-sq-euclid") return SimilarityMode::NegSqEuclid;
    throw ConfigError("similarity must be auto, gaussian-kl or neg-sq-euclid, got '" + s + "'");
}

std::string to_string(DistanceKind kind) {
    return kind == DistanceKind::SqEuclid ? "sq-euclid" : "euclid";
}

DistanceKind parse_distance_kind(const std::string& s) {
    if (s == "sq-euclid") return DistanceKind::SqEuclid;
    if (s == "euclid") return DistanceKind::Euclid;
    throw ConfigError("distance must be sq-euclid or euclid, got '" + s + "'");
}

SimilarityMode resolve_similarity(SimilarityMode mode, std::size_t k_shot) {
    if (mode != SimilarityMode::Auto) return mode;
    return k_shot > 1 ? SimilarityMode::GaussianKl : SimilarityMode::NegSqEuclid;
}

std::vector<double> pool_span(const Tensor& h, std::size_t start, std::size_t end) {
    if (h.rank() != 2 || start > end || end >= h.rows()) {
        throw DataError("span (" + std::to_string(start) + ", " + std::to_string(end) +
                        ") outside encodings of shape " + shape_string(h.shape()));
    }
    std::vector<double> out = h.row_vector(start);
    for (std::size_t i = start + 1; i <= end; ++i)
        for (std::size_t j = 0; j < out.size(); ++j) out[j] = std::max(out[j], h.at(i, j));
    return out;
}

double similarity(const ProjectionOutput& a, const ProjectionOutput& b, SimilarityMode mode) {
    if (a.mean.size() != b.mean.size() || a.log_var.size() != a.mean.size() ||
        b.log_var.size() != b.mean.size()) {
        throw DataError("similarity: projection dimension mismatch");
    }
    double s = 0.0;
    switch (mode) {
        case SimilarityMode::NegSqEuclid:
            for (std::size_t i = 0; i < a.mean.size(); ++i) {
                const double d = a.mean[i] - b.mean[i];
                s -= d * d;
            }
            return s;
        case SimilarityMode::GaussianKl:
            for (std::size_t i = 0; i < a.mean.size(); ++i) {
                const double va = std::exp(a.log_var[i]);
                const double vb = std::exp(b.log_var[i]);
                const double d2 = (a.mean[i] - b.mean[i]) * (a.mean[i] - b.mean[i]);
                const double kl_ab = 0.5 * (b.log_var[i] - a.log_var[i] + (va + d2) / vb - 1.0);
                const double kl_ba = 0.5 * (a.log_var[i] - b.log_var[i] + (vb + d2) / va - 1.0);
                s -= 0.5 * (kl_ab + kl_ba);
            }
            return s;
        case SimilarityMode::Auto:
            break;
    }
    throw ConfigError("similarity mode must be resolved before use");
}

ParamSet init_projection_params(std::size_t input_dim, std::size_t proj_dim, std::uint64_t seed) {
    Rng rng(mix_seed(seed, 0x9A0));
    ParamSet p;
    p.emplace("proj.w1", xavier(input_dim, input_dim, rng));
    p.emplace("proj.b1", Tensor({input_dim}, 0.0));
    p.emplace("proj.w_mean", xavier(input_dim, proj_dim, rng));
    p.emplace("proj.b_mean", Tensor({proj_dim}, 0.0));
    // small log-variance weights start every Gaussian near unit variance
    Tensor wv = xavier(input_dim, proj_dim, rng);
    for (double& v : wv.data()) v *= 0.1;
    p.emplace("proj.w_logvar", std::move(wv));
    p.emplace("proj.b_logvar", Tensor({proj_dim}, 0.0));
    return p;
}

ProjectionOutput project(std::span<const double> embedding, const ParamSet& params) {
    Graph g;
    VarMap vars;
    for (const auto& [name, t] : params) {
        if (name.rfind("proj.", 0) == 0) vars.emplace(name, g.constant(t));
    }
    const auto z = head::project(vars, g.constant(row_matrix(embedding)));
    return {z.mean.value().row_vector(0), z.log_var.value().row_vector(0)};
}

double contrastive_loss(std::span<const ProjectionOutput> batch, std::span<const std::size_t> labels,
                        const ContrastiveConfig& config) {
    if (batch.size() < 2) throw DataError("contrastive loss needs at least 2 entities");
    if (labels.size() != batch.size()) throw DataError("contrastive loss: labels misaligned");
    const std::size_t m = batch.size();
    const std::size_t d = batch[0].mean.size();
    Tensor mean({m, d}), log_var({m, d});
    for (std::size_t i = 0; i < m; ++i) {
        if (batch[i].mean.size() != d || batch[i].log_var.size() != d) {
            throw DataError("contrastive loss: projection dimension mismatch");
        }
        for (std::size_t j = 0; j < d; ++j) {
            mean.at(i, j) = batch[i].mean[j];
            log_var.at(i, j) = batch[i].log_var[j];
        }
    }
    Graph g;
    head::Projection z{g.constant(std::move(mean)), g.constant(std::move(log_var))};
    return head::contrastive_loss(head::similarity_matrix(z, config.mode), labels, config.temperature)
        .value()
        .item();
}

Prototypes prototypes(std::span<const std::vector<double>> embeddings,
                      std::span<const std::size_t> labels, const LabelSet& label_set) {
    validate_label_set(label_set);
    if (embeddings.size() != labels.size()) throw DataError("prototypes: labels misaligned");
    if (embeddings.empty()) throw DataError("prototypes: no support entities");
    const std::size_t d = embeddings[0].size();
    const std::size_t n = label_set.size();
    Tensor centers({n, d}, 0.0);
    std::vector<std::size_t> counts(n, 0);
    for (std::size_t i = 0; i < embeddings.size(); ++i) {
        if (labels[i] >= n) throw DataError("prototypes: label index out of range");
        if (embeddings[i].size() != d) throw DataError("prototypes: embedding dimension mismatch");
        ++counts[labels[i]];
        for (std::size_t j = 0; j < d; ++j) centers.at(labels[i], j) += embeddings[i][j];
    }
    for (std::size_t t = 0; t < n; ++t) {
        if (counts[t] == 0) {
            throw DataError("entity type '" + label_set[t] + "' has no support entity");
        }
        for (std::size_t j = 0; j < d; ++j) centers.at(t, j) /= static_cast<double>(counts[t]);
    }
    return {label_set, std::move(centers)};
}

TypeDistribution proto_distribution(std::span<const double> embedding, const Prototypes& protos,
                                    DistanceKind distance) {
    const Tensor& c = protos.centers;
    if (c.rank() != 2 || c.rows() == 0) throw DataError("proto_distribution: no prototypes");
    if (c.cols() != embedding.size()) {
        throw DataError("proto_distribution: embedding has dimension " +
                        std::to_string(embedding.size()) + ", prototypes " + std::to_string(c.cols()));
    }
    std::vector<double> logits(c.rows());
    for (std::size_t t = 0; t < c.rows(); ++t) {
        double s = 0.0;
        for (std::size_t j = 0; j < c.cols(); ++j) {
            const double diff = c.at(t, j) - embedding[j];
            s += diff * diff;
        }
        logits[t] = -(distance == DistanceKind::Euclid ? std::sqrt(s) : s);
    }
    const double z = log_sum_exp(logits);
    TypeDistribution p(logits.size());
    for (std::size_t t = 0; t < p.size(); ++t) p[t] = std::exp(logits[t] - z);
    return p;
}

double ec_loss(std::span<const TypeDistribution> dists, std::span<const std::size_t> gold) {
    if (dists.size() != gold.size()) throw DataError("ec_loss: distributions and labels misaligned");
    double loss = 0.0;
    for (std::size_t k = 0; k < dists.size(); ++k) {
        if (gold[k] >= dists[k].size()) throw DataError("ec_loss: gold index out of range");
        const double p = dists[k][gold[k]];
        if (!(p > 0.0)) throw NumericError("ec_loss: zero probability on the gold type");
        loss -= std::log(p);
    }
    return loss;
}

namespace head {

Var pool_spans(const Var& h, std::span<const crf::EntitySpan> spans) {
    if (spans.empty()) throw DataError("pool_spans: no spans");
    std::vector<Var> rows;
    rows.reserve(spans.size());
    for (const auto& s : spans) rows.push_back(ops::max_pool_rows(h, s.start, s.end));
    return ops::concat_rows(rows);
}

Projection project(const VarMap& vars, const Var& embeddings) {
    Var hidden = ops::relu(ops::add_row_broadcast(ops::matmul(embeddings, param(vars, "proj.w1")),
                                                  param(vars, "proj.b1")));
    return {ops::add_row_broadcast(ops::matmul(hidden, param(vars, "proj.w_mean")),
                                   param(vars, "proj.b_mean")),
            ops::add_row_broadcast(ops::matmul(hidden, param(vars, "proj.w_logvar")),
                                   param(vars, "proj.b_logvar"))};
}

Var similarity_matrix(const Projection& z, SimilarityMode mode) {
    using namespace ops;
    const Var& mu = z.mean;
    if (mode == SimilarityMode::NegSqEuclid) return scale(pairwise_sq_dist(mu, mu), -1.0);
    if (mode != SimilarityMode::GaussianKl) {
        throw ConfigError("similarity mode must be resolved before use");
    }
    // KL(a||b) + KL(b||a) = 1/2 sum_d [ e^(s_a - s_b) + e^(s_b - s_a)
    //                                  + (mu_a - mu_b)^2 (e^-s_a + e^-s_b) - 2 ]
    // expanded into matrix products so the whole m x m block is one pass.
    const Var& s = z.log_var;
    const double dim = static_cast<double>(mu.value().cols());
    Var var = exp(s);
    Var prec = exp(scale(s, -1.0));
    Var mu2 = mul(mu, mu);
    Var prec_t = transpose(prec);
    Var x = add(matmul(var, prec_t), matmul(mu2, prec_t));
    x = sub(x, scale(matmul(mul(mu, prec), transpose(mu)), 2.0));
    Var r = sum_cols(mul(mu2, prec));
    Var total = add_row_broadcast(add_col_broadcast(add(x, transpose(x)), r), r);
    // sim = -(1/2) * (1/2) * (total - 2 d)
    return scale(add_scalar(total, -2.0 * dim), -0.25);
}

Var contrastive_loss(const Var& sim, std::span<const std::size_t> labels, double temperature) {
    const std::size_t m = sim.value().rows();
    if (m < 2) throw DataError("contrastive loss needs at least 2 entities");
    if (labels.size() != m) throw DataError("contrastive loss: labels misaligned");
    if (!(temperature > 0.0)) throw ConfigError("contrastive temperature must be positive");
    Graph& g = *sim.graph();
    Tensor keep({m, m}, 1.0), fill({m, m}, 0.0), weights({m, m}, 0.0);
    for (std::size_t j = 0; j < m; ++j) {
        keep.at(j, j) = 0.0;
        fill.at(j, j) = kExcluded;
        std::size_t positives = 0;
        for (std::size_t p = 0; p < m; ++p) positives += (p != j && labels[p] == labels[j]);
        if (positives == 0) continue;
        for (std::size_t p = 0; p < m; ++p) {
            if (p != j && labels[p] == labels[j]) weights.at(j, p) = 1.0 / static_cast<double>(positives);
        }
    }
    Var logits = ops::scale(sim, 1.0 / temperature);
    logits = ops::add(ops::mul(logits, g.constant(std::move(keep))), g.constant(std::move(fill)));
    Var log_probs = ops::log_softmax_rows(logits);
    return ops::scale(ops::sum(ops::mul(log_probs, g.constant(std::move(weights)))), -1.0);
}

Var prototypes(const Var& embeddings, std::span<const std::size_t> labels, const LabelSet& label_set) {
    const std::size_t m = embeddings.value().rows();
    const std::size_t n = label_set.size();
    if (labels.size() != m) throw DataError("prototypes: labels misaligned");
    std::vector<std::size_t> counts(n, 0);
    for (std::size_t l : labels) {
        if (l >= n) throw DataError("prototypes: label index out of range");
        ++counts[l];
    }
    for (std::size_t t = 0; t < n; ++t) {
        if (counts[t] == 0) throw DataError("entity type '" + label_set[t] + "' has no support entity");
    }
    Tensor avg({n, m}, 0.0);
    for (std::size_t i = 0; i < m; ++i) avg.at(labels[i], i) = 1.0 / static_cast<double>(counts[labels[i]]);
    return ops::matmul(embeddings.graph()->constant(std::move(avg)), embeddings);
}

Var proto_log_probs(const Var& embeddings, const Var& centers, DistanceKind distance) {
    Var d = ops::pairwise_sq_dist(embeddings, centers);
    if (distance == DistanceKind::Euclid) d = ops::sqrt(d);
    return ops::log_softmax_rows(ops::scale(d, -1.0));
}

Var ec_loss(const Var& log_probs, std::span<const std::size_t> gold) {
    const Tensor& lp = log_probs.value();
    if (gold.size() != lp.rows()) throw DataError("ec_loss: distributions and labels misaligned");
    Tensor onehot(lp.shape(), 0.0);
    for (std::size_t k = 0; k < gold.size(); ++k) {
        if (gold[k] >= lp.cols()) throw DataError("ec_loss: gold index out of range");
        onehot.at(k, gold[k]) = 1.0;
    }
    return ops::scale(ops::sum(ops::mul(log_probs, log_probs.graph()->constant(std::move(onehot)))), -1.0);
}

}  // namespace head
}  // namespace msfner
