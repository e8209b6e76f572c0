#pragma once
// Text-embedding boundary. Every provider returns unit vectors of a fixed
// dimension; the built-in hash encoder is pure and byte-stable across runs
// and platforms, the remote provider speaks POST /embed JSON.

#include <memory>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "kgqa/common.hpp"

namespace kgqa {

using Vector = std::vector<double>;

class EmbeddingProvider {
public:
    virtual ~EmbeddingProvider() = default;
    virtual int dimension() const = 0;
    // One unit vector per input text (norm enforced by callers when a
    // provider misbehaves).
    virtual std::vector<Vector> embed(std::span<const std::string> texts) = 0;

    Vector embed_one(const std::string& text);
};

double dot(std::span<const double> a, std::span<const double> b);
double norm(std::span<const double> v);
// Returns false (leaving v as e_0) when the input norm is ~0.
bool normalize_in_place(Vector& v);

// ---------------------------------------------------------------------------
// Hash encoder: seeded character-n-gram feature hashing.
// ---------------------------------------------------------------------------

struct HashEncoderConfig {
    int dimension = 128;
    std::uint64_t seed = 0x6b67716100000001ULL;
    int min_ngram = 1;
    int max_ngram = 3;

    void validate() const;
};

class HashEncoder final : public EmbeddingProvider {
public:
    explicit HashEncoder(HashEncoderConfig cfg = {});
    int dimension() const override { return cfg_.dimension; }
    std::vector<Vector> embed(std::span<const std::string> texts) override;

    // Each character n-gram hashes to a coordinate and a sign; the
    // accumulated vector is L2-normalized. Empty text maps to e_0.
    Vector embed_text(std::string_view text) const;

private:
    HashEncoderConfig cfg_;
};

// ---------------------------------------------------------------------------
// Remote provider: POST <url>/embed {"texts": [...]} ->
// {"vectors": [[...], ...], "dim": d}. Non-200 or malformed responses raise
// TransportError.
// ---------------------------------------------------------------------------

struct RemoteEncoderConfig {
    std::string base_url;  // e.g. "http://127.0.0.1:8409"
    int dimension = 0;     // 0: trust the server's reported dim
    int timeout_seconds = 30;
    int max_batch = 64;
};

class RemoteEncoder final : public EmbeddingProvider {
public:
    explicit RemoteEncoder(RemoteEncoderConfig cfg);
    ~RemoteEncoder() override;
    int dimension() const override;
    std::vector<Vector> embed(std::span<const std::string> texts) override;

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

// Caches name -> vector; concept vocabularies repeat heavily.
class MemoizingEmbedder {
public:
    explicit MemoizingEmbedder(EmbeddingProvider& provider) : provider_(&provider) {}
    const Vector& get(const std::string& text);
    int dimension() const { return provider_->dimension(); }

private:
    EmbeddingProvider* provider_;
    std::unordered_map<std::string, Vector> cache_;
};

// ---------------------------------------------------------------------------
// Context embedding and relevance scoring.
// ---------------------------------------------------------------------------

// Embeds fuse_context(stem, choice, facts); with no facts that is the plain
// "stem / choice" form. Output renormalized if the provider drifts.
Vector embed_context(std::string_view stem, std::string_view choice_text,
                     const std::vector<std::string>& facts, EmbeddingProvider& provider);

// (cosine + 1) / 2 between the context text and the node's surface text
// (underscores replaced by spaces).
double relevance_score(const std::string& context_text, const std::string& node_name,
                       EmbeddingProvider& provider);

double relevance_from_vectors(std::span<const double> context_vec, std::span<const double> node_vec);

std::string node_surface_text(std::string_view node_name);

}  // namespace kgqa
