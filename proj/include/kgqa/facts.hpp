#pragma once
// Knowledge-fact store, lexical retrieval, and context fusion under the
// 512-token encoder input cap.

#include <string>
#include <vector>

#include "kgqa/grounding.hpp"

namespace kgqa {

class FactStore {
public:
    // One fact per line; surrounding double quotes stripped; blank lines
    // skipped. An empty result is a data error.
    static FactStore load(const std::filesystem::path& path);
    static FactStore from_lines(const std::vector<std::string>& lines);

    std::size_t size() const { return facts_.size(); }
    const std::string& fact(std::size_t i) const { return facts_[i]; }
    const std::vector<std::string>& all() const { return facts_; }
    std::size_t token_count(std::size_t i) const { return token_counts_[i]; }

private:
    std::vector<std::string> facts_;
    std::vector<std::size_t> token_counts_;
};

struct FusionConfig {
    bool enabled = true;
    int facts_per_question = 1;
    int token_cap = 512;
    std::string separator = " / ";
    bool prefer_gold_fact = true;

    void validate() const;
};

// Top-n facts by descending overlap score
//   |content-token intersection(stem, fact)| / sqrt(|fact tokens|)
// with ties broken by store order. Content tokens are normalized tokens
// minus stopwords; |fact tokens| counts all normalized fact tokens.
std::vector<std::string> retrieve_facts(std::string_view stem, const FactStore& store,
                                        int n, const Stopwords& stopwords);

// Facts for one example: the record's own gold fact first when present and
// preferred, then retrieved facts (deduplicated) up to facts_per_question.
std::vector<std::string> facts_for_example(const QaRecord& record, const FactStore& store,
                                           const FusionConfig& cfg, const Stopwords& stopwords);

// Layout: facts joined by separator, separator, stem, separator, choice.
// With no facts: stem, separator, choice. If the whitespace-token count
// exceeds cfg.token_cap, fact tokens are dropped from the front until it
// fits; stem and choice are never truncated (a data error if they alone
// exceed the cap).
std::string fuse_context(std::string_view stem, std::string_view choice_text,
                         const std::vector<std::string>& facts, const FusionConfig& cfg);

}  // namespace kgqa
