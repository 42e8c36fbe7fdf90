#include "msfner/crf.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "msfner/error.hpp"
#include "msfner/rng.hpp"

namespace msfner::crf {

namespace {

void check_inputs(const Tensor& em, const Tensor& trans) {
    if (em.rank() != 2 || em.cols() != kNumTags) {
        throw DataError("emissions must be n x 5, got " + shape_string(em.shape()));
    }
    if (trans.rank() != 2 || trans.rows() != kNumStates || trans.cols() != kNumStates) {
        throw DataError("transitions must be 7 x 7, got " + shape_string(trans.shape()));
    }
}

void check_tags(const Tensor& em, const TagSequence& y) {
    if (y.size() != em.rows()) {
        throw DataError("tag sequence length " + std::to_string(y.size()) +
                        " does not match " + std::to_string(em.rows()) + " tokens");
    }
    for (std::size_t t : y) {
        if (t >= kNumTags) throw DataError("tag index " + std::to_string(t) + " out of range");
    }
}

double lse(const double* v, std::size_t n) {
    double m = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < n; ++i) m = std::max(m, v[i]);
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += std::exp(v[i] - m);
    return m + std::log(s);
}

using Row = std::array<double, kNumTags>;

std::vector<Row> forward_scores(const Tensor& em, const Tensor& trans) {
    const std::size_t n = em.rows();
    std::vector<Row> alpha(n);
    for (std::size_t t = 0; t < kNumTags; ++t) alpha[0][t] = trans.at(kStart, t) + em.at(0, t);
    Row buf;
    for (std::size_t i = 1; i < n; ++i) {
        for (std::size_t t = 0; t < kNumTags; ++t) {
            for (std::size_t s = 0; s < kNumTags; ++s) buf[s] = alpha[i - 1][s] + trans.at(s, t);
            alpha[i][t] = lse(buf.data(), kNumTags) + em.at(i, t);
        }
    }
    return alpha;
}

std::vector<Row> backward_scores(const Tensor& em, const Tensor& trans) {
    const std::size_t n = em.rows();
    std::vector<Row> beta(n);
    for (std::size_t t = 0; t < kNumTags; ++t) beta[n - 1][t] = trans.at(t, kStop);
    Row buf;
    for (std::size_t i = n - 1; i-- > 0;) {
        for (std::size_t s = 0; s < kNumTags; ++s) {
            for (std::size_t t = 0; t < kNumTags; ++t) {
                buf[t] = trans.at(s, t) + em.at(i + 1, t) + beta[i + 1][t];
            }
            beta[i][s] = lse(buf.data(), kNumTags);
        }
    }
    return beta;
}

double final_score(const std::vector<Row>& alpha, const Tensor& trans) {
    Row buf;
    for (std::size_t t = 0; t < kNumTags; ++t) buf[t] = alpha.back()[t] + trans.at(t, kStop);
    return lse(buf.data(), kNumTags);
}

}  // namespace

bool transition_allowed(std::size_t from, std::size_t to) {
    if (from == kStop || to == kStart) return false;
    if (from == kStart && to == kStop) return false;
    const bool to_inside = to == I || to == E;
    switch (from) {
        case kStart:
        case O:
        case E:
        case S:
            return !to_inside;
        case B:
        case I:
            return to_inside;
        default:
            return false;
    }
}

Tensor transition_mask() {
    Tensor m({kNumStates, kNumStates});
    for (std::size_t a = 0; a < kNumStates; ++a)
        for (std::size_t b = 0; b < kNumStates; ++b) m.at(a, b) = transition_allowed(a, b) ? 1.0 : 0.0;
    return m;
}

Tensor masked_transitions(const Tensor& trans) {
    Tensor out = trans;
    for (std::size_t a = 0; a < kNumStates; ++a)
        for (std::size_t b = 0; b < kNumStates; ++b)
            if (!transition_allowed(a, b)) out.at(a, b) = kMaskScore;
    return out;
}

bool is_well_formed(const TagSequence& y) {
    std::size_t prev = kStart;
    for (std::size_t t : y) {
        if (!transition_allowed(prev, t)) return false;
        prev = t;
    }
    return transition_allowed(prev, kStop);
}

double sequence_score(const Tensor& em, const Tensor& trans, const TagSequence& y) {
    check_inputs(em, trans);
    check_tags(em, y);
    double s = trans.at(kStart, y[0]) + em.at(0, y[0]);
    for (std::size_t i = 1; i < y.size(); ++i) s += trans.at(y[i - 1], y[i]) + em.at(i, y[i]);
    return s + trans.at(y.back(), kStop);
}

double log_partition(const Tensor& em, const Tensor& trans) {
    check_inputs(em, trans);
    if (!em.all_finite() || !trans.all_finite()) throw NumericError("log_partition: non-finite scores");
    return final_score(forward_scores(em, trans), trans);
}

double nll(const Tensor& em, const Tensor& trans, const TagSequence& y) {
    return log_partition(em, trans) - sequence_score(em, trans, y);
}

ViterbiResult viterbi(const Tensor& em, const Tensor& trans) {
    check_inputs(em, trans);
    if (!em.all_finite() || !trans.all_finite()) throw NumericError("viterbi: non-finite scores");
    const std::size_t n = em.rows();
    std::vector<Row> delta(n);
    std::vector<std::array<std::size_t, kNumTags>> back(n);
    for (std::size_t t = 0; t < kNumTags; ++t) delta[0][t] = trans.at(kStart, t) + em.at(0, t);
    for (std::size_t i = 1; i < n; ++i) {
        for (std::size_t t = 0; t < kNumTags; ++t) {
            std::size_t best = 0;
            double best_score = delta[i - 1][0] + trans.at(0, t);
            for (std::size_t s = 1; s < kNumTags; ++s) {
                const double v = delta[i - 1][s] + trans.at(s, t);
                if (v > best_score) {
                    best_score = v;
                    best = s;
                }
            }
            delta[i][t] = best_score + em.at(i, t);
            back[i][t] = best;
        }
    }
    std::size_t last = 0;
    double best_score = delta[n - 1][0] + trans.at(0, kStop);
    for (std::size_t t = 1; t < kNumTags; ++t) {
        const double v = delta[n - 1][t] + trans.at(t, kStop);
        if (v > best_score) {
            best_score = v;
            last = t;
        }
    }
    ViterbiResult r;
    r.score = best_score;
    r.tags.resize(n);
    r.tags[n - 1] = last;
    for (std::size_t i = n - 1; i > 0; --i) r.tags[i - 1] = back[i][r.tags[i]];
    return r;
}

std::vector<EntitySpan> tags_to_spans(const TagSequence& y) {
    std::vector<EntitySpan> spans;
    std::size_t i = 0;
    while (i < y.size()) {
        if (y[i] == S) {
            spans.push_back({i, i, {}});
            ++i;
        } else if (y[i] == B) {
            std::size_t j = i + 1;
            while (j < y.size() && y[j] == I) ++j;
            if (j < y.size() && y[j] == E) {
                spans.push_back({i, j, {}});
                i = j + 1;
            } else {
                i = j;  // B without E: drop and rescan from the breaking tag
            }
        } else {
            ++i;
        }
    }
    return spans;
}

TagSequence spans_to_tags(const std::vector<EntitySpan>& spans, std::size_t n) {
    TagSequence y(n, O);
    std::vector<bool> used(n, false);
    for (const EntitySpan& s : spans) {
        if (s.start > s.end || s.end >= n) {
            throw DataError("span (" + std::to_string(s.start) + ", " + std::to_string(s.end) +
                            ") outside a sentence of " + std::to_string(n) + " tokens");
        }
        for (std::size_t i = s.start; i <= s.end; ++i) {
            if (used[i]) {
                throw DataError("overlapping spans at token " + std::to_string(i));
            }
            used[i] = true;
        }
        if (s.start == s.end) {
            y[s.start] = S;
        } else {
            y[s.start] = B;
            for (std::size_t i = s.start + 1; i < s.end; ++i) y[i] = I;
            y[s.end] = E;
        }
    }
    return y;
}

ParamSet init_params(std::size_t hidden_dim, std::uint64_t seed) {
    Rng rng(mix_seed(seed, 0xC4F));
    const double a = std::sqrt(6.0 / static_cast<double>(hidden_dim + kNumTags));
    Tensor w({hidden_dim, kNumTags});
    for (double& v : w.data()) v = rng.uniform(-a, a);
    ParamSet p;
    p.emplace("crf.emission_weight", std::move(w));
    p.emplace("crf.emission_bias", Tensor({kNumTags}, 0.0));
    p.emplace("crf.transitions", Tensor({kNumStates, kNumStates}, 0.0));
    return p;
}

Var emissions(const VarMap& vars, const Var& h) {
    return ops::add_row_broadcast(ops::matmul(h, param(vars, "crf.emission_weight")),
                                  param(vars, "crf.emission_bias"));
}

Var masked_transitions(const Var& trans) {
    Graph& g = *trans.graph();
    const Tensor mask = transition_mask();
    Tensor fill({kNumStates, kNumStates});
    for (std::size_t i = 0; i < fill.size(); ++i) fill[i] = mask[i] == 0.0 ? kMaskScore : 0.0;
    return ops::add(ops::mul(trans, g.constant(mask)), g.constant(std::move(fill)));
}

Var nll(const Var& em, const Var& trans, const TagSequence& y) {
    const Tensor& E = em.value();
    const Tensor& T = trans.value();
    check_inputs(E, T);
    check_tags(E, y);
    const double value = nll(E, T, y);
    const Var inputs[] = {em, trans};
    return em.graph()->add_node(
        Tensor::scalar(value), inputs, [em, trans, y](Graph& g, const Tensor& G) {
            const Tensor& E = em.value();
            const Tensor& T = trans.value();
            const std::size_t n = E.rows();
            const auto alpha = forward_scores(E, T);
            const auto beta = backward_scores(E, T);
            const double log_z = final_score(alpha, T);
            const double w = G[0];
            Tensor* ge = g.grad_buffer(em);
            Tensor* gt = g.grad_buffer(trans);
            for (std::size_t i = 0; i < n; ++i) {
                for (std::size_t t = 0; t < kNumTags; ++t) {
                    const double marginal = std::exp(alpha[i][t] + beta[i][t] - log_z);
                    if (ge) ge->at(i, t) += w * marginal;
                    if (gt && i == 0) gt->at(kStart, t) += w * marginal;
                    if (gt && i == n - 1) gt->at(t, kStop) += w * marginal;
                }
                if (ge) ge->at(i, y[i]) -= w;
            }
            if (!gt) return;
            for (std::size_t i = 1; i < n; ++i)
                for (std::size_t s = 0; s < kNumTags; ++s)
                    for (std::size_t t = 0; t < kNumTags; ++t)
                        gt->at(s, t) += w * std::exp(alpha[i - 1][s] + T.at(s, t) + E.at(i, t) +
                                                     beta[i][t] - log_z);
            gt->at(kStart, y[0]) -= w;
            for (std::size_t i = 1; i < n; ++i) gt->at(y[i - 1], y[i]) -= w;
            gt->at(y[n - 1], kStop) -= w;
        });
}

}  // namespace msfner::crf
