#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "steerlab/measurement.hpp"
#include "steerlab/serialize.hpp"

namespace steerlab {

// Reserved token ids. Every sequence is BOS + query tokens + SEP + answer
// tokens; PolarityExample.query stores the BOS/SEP framing so sequence_nll
// can consume it directly.
constexpr size_t kBosToken = 0;
constexpr size_t kSepToken = 1;

// A template slot. fixed carries its literal token; neutral draws from the
// concept's neutral lexicon; polarity draws from the pos or neg lexicon
// depending on the example's class; hint marks the query position that may
// leak the answer's class during corpus generation (polarity-class token) and
// is filled neutrally in evaluation pairs.
enum class SlotKind { fixed, neutral, polarity, hint };

struct Slot {
    SlotKind kind = SlotKind::neutral;
    size_t token = 0;  // meaningful only for fixed slots

    static Slot fixed_tok(size_t t) { return Slot{SlotKind::fixed, t}; }
    static Slot neutral() { return Slot{SlotKind::neutral, 0}; }
    static Slot polarity() { return Slot{SlotKind::polarity, 0}; }
    static Slot hint() { return Slot{SlotKind::hint, 0}; }
};

// Query/answer slot pattern. Answers are padded with extra neutral draws up
// to the sampled length, so the pattern fixes only the structured prefix.
struct TemplateSpec {
    std::vector<Slot> query;
    std::vector<Slot> answer;
};

struct ConceptSpec {
    std::string id;
    std::vector<size_t> pos_lexicon;
    std::vector<size_t> neg_lexicon;
    std::vector<size_t> neutral_lexicon;
    std::vector<TemplateSpec> templates;

    // Enforces: nonempty pairwise-disjoint lexicons within vocab range;
    // every template carries exactly one polarity slot (in the answer), at
    // most one hint slot (in the query), and at least one neutral slot.
    void validate(size_t vocab_size) const;
};

struct DatasetConfig {
    std::vector<ConceptSpec> concepts;
    size_t vocab_size = 128;
    size_t n_train = 500;
    size_t n_test = 100;
    uint64_t seed = 0;
    size_t answer_len_min = 6;
    size_t answer_len_max = 12;
    size_t corpus_sequences = 2000;
    double neutral_fraction = 0.2;  // share of pure-neutral filler sequences

    void validate() const;
};

// Deterministic concept suite: per concept 4 positive, 4 negative, and 4
// template-frame tokens starting at id 2, with the remaining ids forming the
// shared neutral pool.
std::vector<ConceptSpec> default_concepts(size_t vocab_size, size_t n_concepts = 4);

// Pretraining corpus: concept sequences alternating polarity exactly (and,
// within each polarity, alternating hinted/unhinted queries) plus neutral
// filler. Pure function of the config.
std::vector<std::vector<size_t>> gen_corpus(const DatasetConfig& cfg);

// Polarity pairs with unhinted queries: identical query, equal-length answers
// differing only in the polarity slot. All queries across both splits are
// distinct, so the splits are disjoint by construction.
std::pair<std::vector<PolarityExample>, std::vector<PolarityExample>> gen_polarity_set(
    const DatasetConfig& cfg, const ConceptSpec& cspec);

// One JSON object per line: {"concept", "neg", "pos", "query"} as token-id
// arrays, plus a detokenized "text" object when a table is supplied. Loading
// ignores unknown fields; malformed lines report their line number.
void save_jsonl(const std::string& path, const std::vector<PolarityExample>& examples,
                const std::vector<std::string>* detok = nullptr);
std::vector<PolarityExample> load_jsonl(const std::string& path);

// token id -> pronounceable word; BOS and SEP render as "<s>" and "|".
std::vector<std::string> detok_table(size_t vocab_size);
std::string detokenize(const std::vector<size_t>& tokens, const std::vector<std::string>& table);

json dataset_config_to_json(const DatasetConfig& cfg);

// Manifest written beside each split: config echo, seed, and FNV-1a file
// checksums keyed by file name.
json dataset_manifest(const DatasetConfig& cfg,
                      const std::vector<std::pair<std::string, std::string>>& checksums);

}  // namespace steerlab
