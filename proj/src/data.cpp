#include "steerlab/data.hpp"

#include <algorithm>
#include <set>

#include "steerlab/errors.hpp"
#include "steerlab/util.hpp"

namespace steerlab {

namespace {

void check_lexicon(const std::vector<size_t>& lex, const char* name, size_t vocab_size) {
    if (lex.empty()) throw argument_error(std::string("ConceptSpec: empty ") + name);
    for (size_t t : lex)
        if (t < 2 || t >= vocab_size)
            throw argument_error(std::string("ConceptSpec: ") + name +
                                 " token out of range: " + std::to_string(t));
}

bool overlaps(const std::vector<size_t>& a, const std::vector<size_t>& b) {
    for (size_t x : a)
        for (size_t y : b)
            if (x == y) return true;
    return false;
}

size_t draw(Rng& rng, const std::vector<size_t>& lex) {
    return lex[rng.uniform_int(lex.size())];
}

}  // namespace

void ConceptSpec::validate(size_t vocab_size) const {
    if (id.empty()) throw argument_error("ConceptSpec: empty id");
    check_lexicon(pos_lexicon, "pos_lexicon", vocab_size);
    check_lexicon(neg_lexicon, "neg_lexicon", vocab_size);
    check_lexicon(neutral_lexicon, "neutral_lexicon", vocab_size);
    if (overlaps(pos_lexicon, neg_lexicon) || overlaps(pos_lexicon, neutral_lexicon) ||
        overlaps(neg_lexicon, neutral_lexicon))
        throw argument_error("ConceptSpec '" + id + "': lexicons must be pairwise disjoint");
    if (templates.empty()) throw argument_error("ConceptSpec '" + id + "': no templates");
    for (const TemplateSpec& t : templates) {
        size_t n_polarity = 0, n_hint = 0, n_neutral = 0;
        for (const Slot& s : t.query) {
            if (s.kind == SlotKind::polarity)
                throw argument_error("ConceptSpec '" + id + "': polarity slot in query");
            if (s.kind == SlotKind::hint) ++n_hint;
            if (s.kind == SlotKind::neutral) ++n_neutral;
            if (s.kind == SlotKind::fixed && (s.token < 2 || s.token >= vocab_size))
                throw argument_error("ConceptSpec '" + id + "': fixed token out of range");
        }
        for (const Slot& s : t.answer) {
            if (s.kind == SlotKind::hint)
                throw argument_error("ConceptSpec '" + id + "': hint slot in answer");
            if (s.kind == SlotKind::polarity) ++n_polarity;
            if (s.kind == SlotKind::neutral) ++n_neutral;
            if (s.kind == SlotKind::fixed && (s.token < 2 || s.token >= vocab_size))
                throw argument_error("ConceptSpec '" + id + "': fixed token out of range");
        }
        if (n_polarity != 1)
            throw argument_error("ConceptSpec '" + id + "': template needs exactly one polarity slot");
        if (n_hint > 1)
            throw argument_error("ConceptSpec '" + id + "': template allows at most one hint slot");
        if (n_neutral == 0)
            throw argument_error("ConceptSpec '" + id + "': template needs a neutral slot");
        if (t.query.empty())
            throw argument_error("ConceptSpec '" + id + "': template has an empty query");
    }
}

void DatasetConfig::validate() const {
    if (concepts.empty()) throw argument_error("DatasetConfig: no concepts");
    if (vocab_size < 16) throw argument_error("DatasetConfig: vocab_size too small");
    if (n_train == 0 || n_test == 0)
        throw argument_error("DatasetConfig: n_train and n_test must be positive");
    if (answer_len_min == 0 || answer_len_min > answer_len_max)
        throw argument_error("DatasetConfig: invalid answer length range");
    if (corpus_sequences == 0) throw argument_error("DatasetConfig: corpus_sequences must be positive");
    if (!(neutral_fraction >= 0.0) || !(neutral_fraction < 1.0))
        throw argument_error("DatasetConfig: neutral_fraction must be in [0, 1)");
    for (const ConceptSpec& c : concepts) {
        c.validate(vocab_size);
        for (const TemplateSpec& t : c.templates)
            if (t.answer.size() > answer_len_min)
                throw argument_error("DatasetConfig: template answer pattern for '" + c.id +
                                     "' longer than answer_len_min");
    }
}

std::vector<ConceptSpec> default_concepts(size_t vocab_size, size_t n_concepts) {
    if (n_concepts == 0) throw argument_error("default_concepts: need at least one concept");
    const size_t per_concept = 12;  // 4 pos + 4 neg + 4 frame tokens
    const size_t first_neutral = 2 + per_concept * n_concepts;
    if (first_neutral + 8 > vocab_size)
        throw argument_error("default_concepts: vocab too small for " +
                             std::to_string(n_concepts) + " concepts");

    std::vector<size_t> neutral;
    for (size_t t = first_neutral; t < vocab_size; ++t) neutral.push_back(t);

    std::vector<ConceptSpec> out;
    for (size_t c = 0; c < n_concepts; ++c) {
        const size_t base = 2 + per_concept * c;
        ConceptSpec spec;
        spec.id = "concept" + std::to_string(c);
        for (size_t k = 0; k < 4; ++k) spec.pos_lexicon.push_back(base + k);
        for (size_t k = 0; k < 4; ++k) spec.neg_lexicon.push_back(base + 4 + k);
        spec.neutral_lexicon = neutral;
        const size_t f0 = base + 8, f1 = base + 9, f2 = base + 10, f3 = base + 11;
        // Both answers end with the polarity slot so the last answer token is
        // the class-bearing one, the position diffmean capture contrasts.
        TemplateSpec t0;
        t0.query = {Slot::fixed_tok(f0), Slot::neutral(), Slot::hint(), Slot::neutral()};
        t0.answer = {Slot::fixed_tok(f1), Slot::polarity()};
        TemplateSpec t1;
        t1.query = {Slot::neutral(), Slot::fixed_tok(f2), Slot::hint()};
        t1.answer = {Slot::fixed_tok(f3), Slot::polarity()};
        spec.templates = {t0, t1};
        out.push_back(std::move(spec));
    }
    return out;
}

namespace {

// Fills the query pattern. Hint slots take a class token when hinted,
// otherwise a neutral draw, keeping evaluation queries polarity-free.
std::vector<size_t> fill_query(const TemplateSpec& t, const ConceptSpec& c, bool positive,
                               bool hinted, Rng& rng) {
    std::vector<size_t> out;
    out.push_back(kBosToken);
    for (const Slot& s : t.query) {
        switch (s.kind) {
            case SlotKind::fixed: out.push_back(s.token); break;
            case SlotKind::neutral: out.push_back(draw(rng, c.neutral_lexicon)); break;
            case SlotKind::hint:
                out.push_back(hinted ? draw(rng, positive ? c.pos_lexicon : c.neg_lexicon)
                                     : draw(rng, c.neutral_lexicon));
                break;
            case SlotKind::polarity: break;  // rejected by validate
        }
    }
    out.push_back(kSepToken);
    return out;
}

// Fills the answer pattern plus neutral padding; the polarity slot is left as
// a marked position so a pair can substitute both classes into one draw.
// When the pattern ends with its polarity slot, padding goes in front of that
// slot so the polarity token stays the final answer token at every length.
std::vector<size_t> fill_answer_shared(const TemplateSpec& t, const ConceptSpec& c, size_t len,
                                       Rng& rng, size_t& polarity_at) {
    std::vector<size_t> out;
    out.reserve(len);
    polarity_at = 0;
    auto emit = [&](const Slot& s) {
        switch (s.kind) {
            case SlotKind::fixed: out.push_back(s.token); break;
            case SlotKind::neutral: out.push_back(draw(rng, c.neutral_lexicon)); break;
            case SlotKind::polarity:
                polarity_at = out.size();
                out.push_back(0);
                break;
            case SlotKind::hint: break;  // rejected by validate
        }
    };
    const bool polarity_last = t.answer.back().kind == SlotKind::polarity;
    for (size_t i = 0; i + (polarity_last ? 1 : 0) < t.answer.size(); ++i) emit(t.answer[i]);
    if (polarity_last) {
        while (out.size() + 1 < len) out.push_back(draw(rng, c.neutral_lexicon));
        emit(t.answer.back());
    } else {
        while (out.size() < len) out.push_back(draw(rng, c.neutral_lexicon));
    }
    return out;
}

}  // namespace

std::vector<std::vector<size_t>> gen_corpus(const DatasetConfig& cfg) {
    cfg.validate();
    Rng rng(cfg.seed);

    std::set<size_t> neutral_union_set;
    for (const ConceptSpec& c : cfg.concepts)
        neutral_union_set.insert(c.neutral_lexicon.begin(), c.neutral_lexicon.end());
    const std::vector<size_t> neutral_union(neutral_union_set.begin(), neutral_union_set.end());

    std::vector<std::vector<size_t>> corpus;
    corpus.reserve(cfg.corpus_sequences);
    double filler_acc = 0.0;
    size_t concept_rr = 0;
    std::vector<size_t> per_concept_count(cfg.concepts.size(), 0);

    for (size_t i = 0; i < cfg.corpus_sequences; ++i) {
        filler_acc += cfg.neutral_fraction;
        if (filler_acc >= 1.0) {
            filler_acc -= 1.0;
            std::vector<size_t> seq;
            seq.push_back(kBosToken);
            const size_t qlen = static_cast<size_t>(rng.range_int(3, 4));
            for (size_t k = 0; k < qlen; ++k) seq.push_back(draw(rng, neutral_union));
            seq.push_back(kSepToken);
            const size_t alen = static_cast<size_t>(rng.range_int(
                static_cast<int>(cfg.answer_len_min), static_cast<int>(cfg.answer_len_max)));
            for (size_t k = 0; k < alen; ++k) seq.push_back(draw(rng, neutral_union));
            corpus.push_back(std::move(seq));
            continue;
        }
        const size_t ci = concept_rr % cfg.concepts.size();
        ++concept_rr;
        const ConceptSpec& c = cfg.concepts[ci];
        const size_t count = per_concept_count[ci]++;
        // Exact alternation: polarity flips every sequence, the hint flag
        // every polarity pair, so both are balanced to within one sequence.
        const bool positive = (count % 2) == 0;
        const bool hinted = ((count / 2) % 2) == 0;
        const TemplateSpec& t = c.templates[rng.uniform_int(c.templates.size())];

        std::vector<size_t> seq = fill_query(t, c, positive, hinted, rng);
        const size_t alen = static_cast<size_t>(rng.range_int(
            static_cast<int>(cfg.answer_len_min), static_cast<int>(cfg.answer_len_max)));
        size_t pol_at = 0;
        std::vector<size_t> ans = fill_answer_shared(t, c, alen, rng, pol_at);
        ans[pol_at] = draw(rng, positive ? c.pos_lexicon : c.neg_lexicon);
        seq.insert(seq.end(), ans.begin(), ans.end());
        corpus.push_back(std::move(seq));
    }
    return corpus;
}

std::pair<std::vector<PolarityExample>, std::vector<PolarityExample>> gen_polarity_set(
    const DatasetConfig& cfg, const ConceptSpec& cspec) {
    cfg.validate();
    cspec.validate(cfg.vocab_size);
    Rng rng(fnv1a64(cspec.id) ^ (0x9e3779b97f4a7c15ULL * (cfg.seed + 1)));

    const size_t total = cfg.n_train + cfg.n_test;
    std::set<std::vector<size_t>> seen;
    std::vector<PolarityExample> all;
    all.reserve(total);
    size_t attempts = 0;
    const size_t max_attempts = 1000 * total;
    while (all.size() < total) {
        if (++attempts > max_attempts)
            throw argument_error("gen_polarity_set: query space too small for requested sizes");
        const TemplateSpec& t = cspec.templates[rng.uniform_int(cspec.templates.size())];
        std::vector<size_t> q = fill_query(t, cspec, false, false, rng);
        if (!seen.insert(q).second) continue;  // duplicate query; answers not yet drawn

        const size_t alen = static_cast<size_t>(rng.range_int(
            static_cast<int>(cfg.answer_len_min), static_cast<int>(cfg.answer_len_max)));
        size_t pol_at = 0;
        std::vector<size_t> shared = fill_answer_shared(t, cspec, alen, rng, pol_at);
        PolarityExample ex;
        ex.query = std::move(q);
        ex.pos_answer = shared;
        ex.pos_answer[pol_at] = draw(rng, cspec.pos_lexicon);
        ex.neg_answer = std::move(shared);
        ex.neg_answer[pol_at] = draw(rng, cspec.neg_lexicon);
        ex.concept_id = cspec.id;
        all.push_back(std::move(ex));
    }
    std::vector<PolarityExample> train(all.begin(), all.begin() + static_cast<long>(cfg.n_train));
    std::vector<PolarityExample> test(all.begin() + static_cast<long>(cfg.n_train), all.end());
    return {std::move(train), std::move(test)};
}

void save_jsonl(const std::string& path, const std::vector<PolarityExample>& examples,
                const std::vector<std::string>* detok) {
    std::string out;
    for (const PolarityExample& ex : examples) {
        json j;
        j["query"] = ex.query;
        j["pos"] = ex.pos_answer;
        j["neg"] = ex.neg_answer;
        j["concept"] = ex.concept_id;
        if (detok != nullptr) {
            json text;
            text["query"] = detokenize(ex.query, *detok);
            text["pos"] = detokenize(ex.pos_answer, *detok);
            text["neg"] = detokenize(ex.neg_answer, *detok);
            j["text"] = std::move(text);
        }
        out += j.dump();
        out += '\n';
    }
    atomic_write_file(path, out);
}

std::vector<PolarityExample> load_jsonl(const std::string& path) {
    const std::string body = read_file(path);
    std::vector<PolarityExample> out;
    size_t line_no = 0;
    size_t pos = 0;
    while (pos < body.size()) {
        size_t end = body.find('\n', pos);
        if (end == std::string::npos) end = body.size();
        const std::string line = body.substr(pos, end - pos);
        pos = end + 1;
        ++line_no;
        if (line.empty()) continue;
        try {
            const json j = json::parse(line);
            PolarityExample ex;
            ex.query = j.at("query").get<std::vector<size_t>>();
            ex.pos_answer = j.at("pos").get<std::vector<size_t>>();
            ex.neg_answer = j.at("neg").get<std::vector<size_t>>();
            ex.concept_id = j.at("concept").get<std::string>();
            out.push_back(std::move(ex));
        } catch (const json::exception& e) {
            throw parse_error(path + ": line " + std::to_string(line_no) + ": " + e.what());
        }
    }
    return out;
}

std::vector<std::string> detok_table(size_t vocab_size) {
    static const char* const syl[] = {"ba", "be", "bi", "bo", "bu", "da", "de", "di", "do", "du",
                                      "ka", "ke", "ki", "ko", "ku", "la", "le", "li", "lo", "lu",
                                      "ma", "me", "mi", "mo", "mu", "na", "ne", "ni", "no", "nu",
                                      "pa", "pe", "pi", "po", "pu", "ra", "re", "ri", "ro", "ru",
                                      "sa", "se", "si", "so", "su", "ta", "te", "ti", "to", "tu"};
    constexpr size_t n_syl = sizeof(syl) / sizeof(syl[0]);
    std::vector<std::string> table(vocab_size);
    for (size_t t = 0; t < vocab_size; ++t) {
        if (t == kBosToken) {
            table[t] = "<s>";
        } else if (t == kSepToken) {
            table[t] = "|";
        } else {
            std::string w;
            size_t v = t;
            do {
                w = std::string(syl[v % n_syl]) + w;
                v /= n_syl;
            } while (v > 0);
            table[t] = w;
        }
    }
    return table;
}

std::string detokenize(const std::vector<size_t>& tokens, const std::vector<std::string>& table) {
    std::string out;
    for (size_t i = 0; i < tokens.size(); ++i) {
        if (tokens[i] >= table.size())
            throw index_error("detokenize: token " + std::to_string(tokens[i]) +
                              " outside the table");
        if (i > 0) out += ' ';
        out += table[tokens[i]];
    }
    return out;
}

namespace {

json slot_to_json(const Slot& s) {
    json j;
    switch (s.kind) {
        case SlotKind::fixed:
            j["kind"] = "fixed";
            j["token"] = s.token;
            break;
        case SlotKind::neutral: j["kind"] = "neutral"; break;
        case SlotKind::polarity: j["kind"] = "polarity"; break;
        case SlotKind::hint: j["kind"] = "hint"; break;
    }
    return j;
}

}  // namespace

json dataset_config_to_json(const DatasetConfig& cfg) {
    json j;
    j["vocab_size"] = cfg.vocab_size;
    j["n_train"] = cfg.n_train;
    j["n_test"] = cfg.n_test;
    j["seed"] = cfg.seed;
    j["answer_len_min"] = cfg.answer_len_min;
    j["answer_len_max"] = cfg.answer_len_max;
    j["corpus_sequences"] = cfg.corpus_sequences;
    j["neutral_fraction"] = cfg.neutral_fraction;
    json concepts = json::array();
    for (const ConceptSpec& c : cfg.concepts) {
        json cj;
        cj["id"] = c.id;
        cj["pos_lexicon"] = c.pos_lexicon;
        cj["neg_lexicon"] = c.neg_lexicon;
        cj["neutral_lexicon"] = c.neutral_lexicon;
        json templates = json::array();
        for (const TemplateSpec& t : c.templates) {
            json tj;
            tj["query"] = json::array();
            tj["answer"] = json::array();
            for (const Slot& s : t.query) tj["query"].push_back(slot_to_json(s));
            for (const Slot& s : t.answer) tj["answer"].push_back(slot_to_json(s));
            templates.push_back(std::move(tj));
        }
        cj["templates"] = std::move(templates);
        concepts.push_back(std::move(cj));
    }
    j["concepts"] = std::move(concepts);
    return j;
}

json dataset_manifest(const DatasetConfig& cfg,
                      const std::vector<std::pair<std::string, std::string>>& checksums) {
    json j;
    j["config"] = dataset_config_to_json(cfg);
    j["seed"] = cfg.seed;
    json sums;
    for (const auto& [name, hex] : checksums) sums[name] = hex;
    j["checksums"] = std::move(sums);
    return j;
}

}  // namespace steerlab
