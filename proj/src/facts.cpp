#include "kgqa/facts.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <unordered_set>

namespace kgqa {

FactStore FactStore::from_lines(const std::vector<std::string>& lines) {
    FactStore store;
    for (const auto& raw : lines) {
        std::string fact = raw;
        // Trim whitespace, then one layer of surrounding double quotes.
        const auto first = fact.find_first_not_of(" \t");
        if (first == std::string::npos) continue;
        const auto last = fact.find_last_not_of(" \t");
        fact = fact.substr(first, last - first + 1);
        if (fact.size() >= 2 && fact.front() == '"' && fact.back() == '"') {
            fact = fact.substr(1, fact.size() - 2);
        }
        if (fact.empty()) continue;
        store.token_counts_.push_back(normalize_text(fact).size());
        store.facts_.push_back(std::move(fact));
    }
    if (store.facts_.empty()) throw DataError("facts file contains no facts");
    return store;
}

FactStore FactStore::load(const std::filesystem::path& path) {
    return from_lines(read_lines(path));
}

void FusionConfig::validate() const {
    if (token_cap <= 0) throw ConfigError("token_cap must be > 0");
    if (facts_per_question < 1) throw ConfigError("facts_per_question must be >= 1");
}

std::vector<std::string> retrieve_facts(std::string_view stem, const FactStore& store,
                                        int n, const Stopwords& stopwords) {
    if (n < 1) throw ContractViolation("retrieve_facts: n must be >= 1");
    std::unordered_set<std::string> stem_content;
    for (auto& tok : normalize_text(stem)) {
        if (!stopwords.count(tok)) stem_content.insert(std::move(tok));
    }

    std::vector<double> score(store.size(), 0.0);
    for (std::size_t i = 0; i < store.size(); ++i) {
        const auto fact_tokens = normalize_text(store.fact(i));
        std::unordered_set<std::string> seen;
        std::size_t overlap = 0;
        for (const auto& tok : fact_tokens) {
            if (stopwords.count(tok) || !stem_content.count(tok)) continue;
            if (seen.insert(tok).second) ++overlap;
        }
        if (!fact_tokens.empty()) {
            score[i] = static_cast<double>(overlap) / std::sqrt(static_cast<double>(fact_tokens.size()));
        }
    }

    std::vector<std::size_t> order(store.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return score[a] > score[b]; });

    const std::size_t take = std::min<std::size_t>(static_cast<std::size_t>(n), store.size());
    std::vector<std::string> out;
    out.reserve(take);
    for (std::size_t i = 0; i < take; ++i) out.push_back(store.fact(order[i]));
    return out;
}

std::vector<std::string> facts_for_example(const QaRecord& record, const FactStore& store,
                                           const FusionConfig& cfg, const Stopwords& stopwords) {
    cfg.validate();
    if (!cfg.enabled) return {};
    std::vector<std::string> out;
    if (cfg.prefer_gold_fact && record.fact1 && !record.fact1->empty()) {
        out.push_back(*record.fact1);
    }
    if (out.size() < static_cast<std::size_t>(cfg.facts_per_question)) {
        for (auto& fact : retrieve_facts(record.stem, store, cfg.facts_per_question, stopwords)) {
            if (out.size() >= static_cast<std::size_t>(cfg.facts_per_question)) break;
            if (std::find(out.begin(), out.end(), fact) == out.end()) out.push_back(std::move(fact));
        }
    }
    return out;
}

std::string fuse_context(std::string_view stem, std::string_view choice_text,
                         const std::vector<std::string>& facts, const FusionConfig& cfg) {
    cfg.validate();
    std::string tail = std::string(stem) + cfg.separator + std::string(choice_text);
    if (facts.empty()) {
        if (whitespace_token_count(tail) > static_cast<std::size_t>(cfg.token_cap)) {
            throw DataError("stem and choice alone exceed the token cap");
        }
        return tail;
    }

    std::string facts_block;
    for (std::size_t i = 0; i < facts.size(); ++i) {
        if (i > 0) facts_block += cfg.separator;
        facts_block += facts[i];
    }

    const std::string full = facts_block + cfg.separator + tail;
    const std::size_t total = whitespace_token_count(full);
    if (total <= static_cast<std::size_t>(cfg.token_cap)) return full;

    const std::size_t tail_tokens = whitespace_token_count(tail);
    if (tail_tokens > static_cast<std::size_t>(cfg.token_cap)) {
        throw DataError("stem and choice alone exceed the token cap");
    }

    // Drop tokens from the front of the facts block (which includes the
    // trailing separator token) until the cap is met; stem/choice stay intact.
    auto head_tokens = whitespace_tokens(facts_block + cfg.separator);
    const std::size_t keep = static_cast<std::size_t>(cfg.token_cap) - tail_tokens;
    std::string rebuilt;
    const std::size_t begin = head_tokens.size() - std::min(keep, head_tokens.size());
    for (std::size_t i = begin; i < head_tokens.size(); ++i) {
        rebuilt += head_tokens[i];
        rebuilt += ' ';
    }
    rebuilt += tail;
    return rebuilt;
}

}  // namespace kgqa
