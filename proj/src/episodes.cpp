#include "msfner/episodes.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "json.hpp"
#include "msfner/error.hpp"
#include "msfner/rng.hpp"

namespace msfner {

namespace {

using nlohmann::json;

constexpr const char* kIdPrefix = "# id = ";

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open '" + path + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

struct PendingSentence {
    std::string id;
    std::size_t first_line = 0;
    std::vector<std::string> tokens;
    std::vector<std::string> tags;
};

std::vector<crf::EntitySpan> io_spans(const std::vector<std::string>& tags) {
    std::vector<crf::EntitySpan> spans;
    std::size_t i = 0;
    while (i < tags.size()) {
        if (tags[i] == "O") {
            ++i;
            continue;
        }
        std::size_t j = i;
        while (j + 1 < tags.size() && tags[j + 1] == tags[i]) ++j;
        spans.push_back({i, j, tags[i]});
        i = j + 1;
    }
    return spans;
}

std::vector<crf::EntitySpan> bioes_spans(const std::vector<std::string>& tags, const std::string& source,
                                         std::size_t first_line) {
    crf::TagSequence y(tags.size());
    std::vector<std::string> types(tags.size());
    for (std::size_t i = 0; i < tags.size(); ++i) {
        const std::string& t = tags[i];
        if (t == "O") {
            y[i] = crf::O;
            continue;
        }
        if (t.size() < 3 || t[1] != '-') {
            throw DataError(source + ":" + std::to_string(first_line + i) + ": bad BIOES tag '" + t + "'");
        }
        switch (t[0]) {
            case 'B':
                y[i] = crf::B;
                break;
            case 'I':
                y[i] = crf::I;
                break;
            case 'E':
                y[i] = crf::E;
                break;
            case 'S':
                y[i] = crf::S;
                break;
            default:
                throw DataError(source + ":" + std::to_string(first_line + i) + ": bad BIOES tag '" + t + "'");
        }
        types[i] = t.substr(2);
    }
    std::vector<crf::EntitySpan> spans;
    for (auto s : crf::tags_to_spans(y)) {
        // a span whose tokens disagree on the type is a malformed fragment
        bool consistent = true;
        for (std::size_t i = s.start + 1; i <= s.end; ++i) consistent = consistent && types[i] == types[s.start];
        if (!consistent) continue;
        s.type = types[s.start];
        spans.push_back(std::move(s));
    }
    return spans;
}

json sentence_to_json(const AnnotatedSentence& s) {
    json spans = json::array();
    for (const auto& sp : s.spans) spans.push_back(json::array({sp.start, sp.end, sp.type}));
    return json{{"id", s.sentence.id}, {"tokens", s.sentence.tokens}, {"spans", spans}};
}

AnnotatedSentence sentence_from_json(const json& j, std::size_t ordinal) {
    AnnotatedSentence s;
    s.sentence.id = j.contains("id") ? j.at("id").get<std::string>() : std::to_string(ordinal);
    s.sentence.tokens = j.at("tokens").get<std::vector<std::string>>();
    for (const auto& sp : j.at("spans")) {
        if (!sp.is_array() || sp.size() != 3) throw DataError("episode: span must be [start, end, type]");
        s.spans.push_back({sp[0].get<std::size_t>(), sp[1].get<std::size_t>(), sp[2].get<std::string>()});
    }
    crf::spans_to_tags(s.spans, s.sentence.tokens.size());  // validates ranges and overlap
    return s;
}

}  // namespace

std::string to_string(CorpusFormat format) {
    return format == CorpusFormat::BioesTyped ? "bioes-typed" : "io-typed";
}

CorpusFormat parse_corpus_format(const std::string& s) {
    if (s == "bioes-typed") return CorpusFormat::BioesTyped;
    if (s == "io-typed") return CorpusFormat::IoTyped;
    throw ConfigError("corpus format must be bioes-typed or io-typed, got '" + s + "'");
}

Corpus parse_corpus(const std::string& path, CorpusFormat format, std::size_t max_len) {
    return parse_corpus_text(read_file(path), format, max_len, path);
}

Corpus parse_corpus_text(const std::string& text, CorpusFormat format, std::size_t max_len,
                         const std::string& source) {
    Corpus corpus;
    PendingSentence cur;
    std::size_t line_no = 0;
    auto flush = [&] {
        if (cur.tokens.empty()) {
            if (!cur.id.empty()) throw DataError(source + ": id '" + cur.id + "' has no tokens");
            return;
        }
        if (cur.tokens.size() > max_len) {
            throw DataError(source + ":" + std::to_string(cur.first_line) + ": sentence has " +
                            std::to_string(cur.tokens.size()) + " tokens, max is " + std::to_string(max_len));
        }
        AnnotatedSentence s;
        s.sentence.id = cur.id.empty() ? std::to_string(corpus.sentences.size()) : cur.id;
        s.sentence.tokens = std::move(cur.tokens);
        s.spans = format == CorpusFormat::IoTyped ? io_spans(cur.tags)
                                                  : bioes_spans(cur.tags, source, cur.first_line);
        corpus.sentences.push_back(std::move(s));
        cur = PendingSentence{};
    };
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (trim(line).empty()) {
            flush();
            continue;
        }
        const auto tab = line.find('\t');
        if (tab == std::string::npos && line.rfind(kIdPrefix, 0) == 0 && cur.tokens.empty()) {
            cur.id = trim(line.substr(std::char_traits<char>::length(kIdPrefix)));
            continue;
        }
        if (tab == std::string::npos) {
            throw DataError(source + ":" + std::to_string(line_no) + ": expected token<TAB>tag");
        }
        const std::string token = line.substr(0, tab);
        const std::string tag = trim(line.substr(tab + 1));
        if (token.empty() || tag.empty()) {
            throw DataError(source + ":" + std::to_string(line_no) + ": empty token or tag");
        }
        if (cur.tokens.empty()) cur.first_line = line_no;
        cur.tokens.push_back(token);
        cur.tags.push_back(tag);
    }
    flush();
    finalize_corpus(corpus);
    return corpus;
}

void finalize_corpus(Corpus& corpus) {
    corpus.types.clear();
    std::set<std::string> seen;
    for (const auto& s : corpus.sentences) {
        crf::spans_to_tags(s.spans, s.sentence.tokens.size());
        for (const auto& sp : s.spans) {
            if (sp.type.empty()) throw DataError("sentence '" + s.sentence.id + "' has an untyped span");
            if (seen.insert(sp.type).second) corpus.types.push_back(sp.type);
        }
    }
}

std::string serialize_corpus(const Corpus& corpus, CorpusFormat format) {
    std::string out;
    for (std::size_t idx = 0; idx < corpus.sentences.size(); ++idx) {
        const auto& s = corpus.sentences[idx];
        if (s.sentence.id != std::to_string(idx)) out += kIdPrefix + s.sentence.id + "\n";
        const auto& tokens = s.sentence.tokens;
        std::vector<std::string> tags(tokens.size(), "O");
        for (const auto& sp : s.spans) {
            for (std::size_t i = sp.start; i <= sp.end; ++i) {
                if (format == CorpusFormat::IoTyped) {
                    tags[i] = sp.type;
                } else {
                    const char* prefix = sp.start == sp.end ? "S-" : i == sp.start ? "B-" : i == sp.end ? "E-" : "I-";
                    tags[i] = prefix + sp.type;
                }
            }
        }
        for (std::size_t i = 0; i < tokens.size(); ++i) out += tokens[i] + "\t" + tags[i] + "\n";
        out += "\n";
    }
    return out;
}

std::vector<std::size_t> type_counts(const std::vector<AnnotatedSentence>& set, const LabelSet& types) {
    std::vector<std::size_t> counts(types.size(), 0);
    for (const auto& s : set) {
        for (const auto& sp : s.spans) {
            auto it = std::find(types.begin(), types.end(), sp.type);
            if (it != types.end()) ++counts[static_cast<std::size_t>(it - types.begin())];
        }
    }
    return counts;
}

Episode sample_episode(const Corpus& corpus, std::size_t n, std::size_t k, std::uint64_t seed,
                       const SamplerOptions& options) {
    if (n == 0 || k == 0) throw ConfigError("episodes need N >= 1 and K >= 1");
    if (corpus.types.size() < n) {
        throw DataError("corpus has " + std::to_string(corpus.types.size()) + " entity types, cannot sample " +
                        std::to_string(n) + "-way episodes");
    }
    Rng rng(mix_seed(seed, 0xE915));
    std::vector<std::string> pool = corpus.types;
    rng.shuffle(pool);
    Episode ep;
    ep.n = n;
    ep.k = k;
    ep.types.assign(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(n));

    // per-sentence mention counts over the chosen types; -1 marks ineligible
    std::vector<std::vector<std::size_t>> mentions(corpus.sentences.size());
    std::vector<std::size_t> eligible;
    for (std::size_t i = 0; i < corpus.sentences.size(); ++i) {
        const auto& s = corpus.sentences[i];
        if (s.spans.empty()) continue;
        std::vector<std::size_t> c(n, 0);
        bool ok = true;
        for (const auto& sp : s.spans) {
            auto it = std::find(ep.types.begin(), ep.types.end(), sp.type);
            if (it == ep.types.end()) {
                ok = false;
                break;
            }
            ++c[static_cast<std::size_t>(it - ep.types.begin())];
        }
        if (!ok) continue;
        mentions[i] = std::move(c);
        eligible.push_back(i);
    }

    std::vector<bool> used(corpus.sentences.size(), false);
    auto fill = [&](std::size_t shots, const char* which) {
        for (std::size_t pass = 0; pass < options.max_passes; ++pass) {
            std::vector<std::size_t> order;
            for (std::size_t i : eligible)
                if (!used[i]) order.push_back(i);
            rng.shuffle(order);
            std::vector<std::size_t> counts(n, 0);
            std::vector<std::size_t> picked;
            for (std::size_t i : order) {
                // must stay within 2K everywhere and help a type still short of K
                bool fits = true, helps = false;
                for (std::size_t t = 0; t < n; ++t) {
                    fits = fits && counts[t] + mentions[i][t] <= 2 * shots;
                    helps = helps || (mentions[i][t] > 0 && counts[t] < shots);
                }
                if (!fits || !helps) continue;
                for (std::size_t t = 0; t < n; ++t) counts[t] += mentions[i][t];
                picked.push_back(i);
                if (std::all_of(counts.begin(), counts.end(), [&](std::size_t c) { return c >= shots; })) {
                    std::vector<AnnotatedSentence> out;
                    for (std::size_t p : picked) {
                        used[p] = true;
                        out.push_back(corpus.sentences[p]);
                    }
                    return out;
                }
            }
        }
        throw DataError(std::string("cannot sample a ") + std::to_string(n) + "-way " + std::to_string(shots) +
                        "~" + std::to_string(2 * shots) + "-shot " + which + " set after " +
                        std::to_string(options.max_passes) + " passes");
    };
    ep.support = fill(k, "support");
    ep.query = fill(options.query_k ? options.query_k : k, "query");
    return ep;
}

void validate_episode(const Episode& episode) {
    validate_label_set(episode.types);
    for (const auto* set : {&episode.support, &episode.query}) {
        for (const auto& s : *set) {
            crf::spans_to_tags(s.spans, s.sentence.tokens.size());
            for (const auto& sp : s.spans) label_index(episode.types, sp.type);
        }
    }
    const auto counts = type_counts(episode.support, episode.types);
    for (std::size_t t = 0; t < counts.size(); ++t) {
        if (counts[t] == 0) {
            throw DataError("entity type '" + episode.types[t] + "' has no support entity");
        }
    }
}

std::string episode_to_json(const Episode& episode) {
    json support = json::array(), query = json::array();
    for (const auto& s : episode.support) support.push_back(sentence_to_json(s));
    for (const auto& s : episode.query) query.push_back(sentence_to_json(s));
    json j{{"n", episode.n}, {"k", episode.k}, {"types", episode.types}, {"support", support}, {"query", query}};
    return j.dump();
}

Episode episode_from_json(const std::string& text) {
    try {
        const json j = json::parse(text);
        Episode ep;
        ep.n = j.at("n").get<std::size_t>();
        ep.k = j.at("k").get<std::size_t>();
        ep.types = j.at("types").get<std::vector<std::string>>();
        std::size_t ordinal = 0;
        for (const auto& s : j.at("support")) ep.support.push_back(sentence_from_json(s, ordinal++));
        for (const auto& s : j.at("query")) ep.query.push_back(sentence_from_json(s, ordinal++));
        validate_label_set(ep.types);
        return ep;
    } catch (const json::exception& e) {
        throw DataError(std::string("malformed episode JSON: ") + e.what());
    }
}

void write_episodes(const std::string& path, const std::vector<Episode>& episodes) {
    std::string out;
    for (const auto& ep : episodes) out += episode_to_json(ep) + "\n";
    const std::string tmp = path + ".tmp";
    {
        std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
        if (!f) throw DataError("cannot write '" + path + "'");
        f << out;
    }
    if (std::rename(tmp.c_str(), path.c_str()) != 0) throw DataError("cannot write '" + path + "'");
}

std::vector<Episode> read_episodes(const std::string& path) {
    std::istringstream in(read_file(path));
    std::vector<Episode> episodes;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) continue;
        try {
            episodes.push_back(episode_from_json(line));
        } catch (const DataError& e) {
            throw DataError(path + ":" + std::to_string(line_no) + ": " + e.what());
        }
    }
    return episodes;
}

EvalReport micro_f1(const TypedSpans& predicted, const TypedSpans& gold) {
    if (predicted.size() != gold.size()) {
        throw DataError("micro_f1: " + std::to_string(predicted.size()) + " predicted sentences vs " +
                        std::to_string(gold.size()) + " gold");
    }
    EvalReport r;
    for (std::size_t i = 0; i < gold.size(); ++i) {
        std::multiset<crf::EntitySpan> g(gold[i].begin(), gold[i].end());
        r.predicted += predicted[i].size();
        r.gold += gold[i].size();
        for (const auto& p : predicted[i]) {
            auto it = g.find(p);
            if (it != g.end()) {
                ++r.correct;
                g.erase(it);
            }
        }
    }
    r.precision = r.predicted ? static_cast<double>(r.correct) / static_cast<double>(r.predicted) : 0.0;
    r.recall = r.gold ? static_cast<double>(r.correct) / static_cast<double>(r.gold) : 0.0;
    r.f1 = r.precision + r.recall > 0 ? 2 * r.precision * r.recall / (r.precision + r.recall) : 0.0;
    return r;
}

}  // namespace msfner
