#include "kgqa/encoder.hpp"

#include <cmath>
#include <iostream>

#include <httplib.h>
#include <json.hpp>

#include "kgqa/facts.hpp"

namespace kgqa {

Vector EmbeddingProvider::embed_one(const std::string& text) {
    const std::string texts[1] = {text};
    auto result = embed(std::span<const std::string>(texts, 1));
    if (result.size() != 1) throw TransportError("provider returned wrong batch size");
    return std::move(result[0]);
}

double dot(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw ContractViolation("dot: dimension mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

double norm(std::span<const double> v) {
    return std::sqrt(dot(v, v));
}

bool normalize_in_place(Vector& v) {
    const double n = norm(v);
    if (n < 1e-12) {
        std::fill(v.begin(), v.end(), 0.0);
        if (!v.empty()) v[0] = 1.0;
        return false;
    }
    for (double& x : v) x /= n;
    return true;
}

// ---------------------------------------------------------------------------
// HashEncoder
// ---------------------------------------------------------------------------

void HashEncoderConfig::validate() const {
    if (dimension < 8) throw ConfigError("hash encoder dimension must be >= 8");
    if (min_ngram < 1 || max_ngram < min_ngram) throw ConfigError("bad n-gram order range");
}

HashEncoder::HashEncoder(HashEncoderConfig cfg) : cfg_(cfg) {
    cfg_.validate();
}

Vector HashEncoder::embed_text(std::string_view text) const {
    Vector v(static_cast<std::size_t>(cfg_.dimension), 0.0);
    const std::size_t n = text.size();
    for (int order = cfg_.min_ngram; order <= cfg_.max_ngram; ++order) {
        const std::size_t len = static_cast<std::size_t>(order);
        if (n < len) break;
        for (std::size_t i = 0; i + len <= n; ++i) {
            const std::uint64_t h = hash64(text.substr(i, len), cfg_.seed + static_cast<std::uint64_t>(order));
            const std::size_t coord = h % static_cast<std::uint64_t>(cfg_.dimension);
            const double sign = (h >> 32) & 1 ? 1.0 : -1.0;
            v[coord] += sign;
        }
    }
    normalize_in_place(v);  // empty/degenerate text falls back to e_0
    return v;
}

std::vector<Vector> HashEncoder::embed(std::span<const std::string> texts) {
    std::vector<Vector> out;
    out.reserve(texts.size());
    for (const auto& t : texts) out.push_back(embed_text(t));
    return out;
}

// ---------------------------------------------------------------------------
// RemoteEncoder
// ---------------------------------------------------------------------------

struct RemoteEncoder::Impl {
    RemoteEncoderConfig cfg;
    std::unique_ptr<httplib::Client> client;
    int dim = 0;
};

RemoteEncoder::RemoteEncoder(RemoteEncoderConfig cfg) : impl_(std::make_unique<Impl>()) {
    if (cfg.base_url.empty()) throw ConfigError("remote encoder: base_url required");
    if (cfg.max_batch < 1) throw ConfigError("remote encoder: max_batch must be >= 1");
    impl_->cfg = cfg;
    impl_->dim = cfg.dimension;
    impl_->client = std::make_unique<httplib::Client>(cfg.base_url);
    impl_->client->set_connection_timeout(cfg.timeout_seconds, 0);
    impl_->client->set_read_timeout(cfg.timeout_seconds, 0);
}

RemoteEncoder::~RemoteEncoder() = default;

int RemoteEncoder::dimension() const {
    if (impl_->dim <= 0) {
        throw TransportError("remote encoder dimension unknown before first embed call");
    }
    return impl_->dim;
}

std::vector<Vector> RemoteEncoder::embed(std::span<const std::string> texts) {
    std::vector<Vector> out;
    out.reserve(texts.size());
    for (std::size_t offset = 0; offset < texts.size();
         offset += static_cast<std::size_t>(impl_->cfg.max_batch)) {
        const std::size_t count =
            std::min<std::size_t>(static_cast<std::size_t>(impl_->cfg.max_batch), texts.size() - offset);
        nlohmann::json request;
        request["texts"] = nlohmann::json::array();
        for (std::size_t i = 0; i < count; ++i) request["texts"].push_back(texts[offset + i]);

        auto res = impl_->client->Post("/embed", request.dump(), "application/json");
        if (!res) {
            throw TransportError("remote encoder unreachable at " + impl_->cfg.base_url +
                                 " (retry once the service is back)");
        }
        if (res->status != 200) {
            throw TransportError("remote encoder returned HTTP " + std::to_string(res->status) +
                                 " (retry or check the service logs)");
        }
        nlohmann::json body = nlohmann::json::parse(res->body, nullptr, false);
        if (body.is_discarded() || !body.contains("vectors") || !body["vectors"].is_array()) {
            throw TransportError("remote encoder returned malformed JSON");
        }
        const int reported_dim = body.value("dim", 0);
        if (impl_->dim <= 0) impl_->dim = reported_dim;
        if (body["vectors"].size() != count) {
            throw TransportError("remote encoder returned wrong vector count");
        }
        for (const auto& jv : body["vectors"]) {
            Vector v = jv.get<Vector>();
            if (static_cast<int>(v.size()) != impl_->dim) {
                throw TransportError("remote encoder returned wrong vector dimension");
            }
            const double n = norm(v);
            if (std::abs(n - 1.0) > 1e-6) {
                std::cerr << "[kgqa] warning: remote encoder returned non-unit vector (norm " << n
                          << "); renormalizing\n";
                normalize_in_place(v);
            }
            out.push_back(std::move(v));
        }
    }
    return out;
}

const Vector& MemoizingEmbedder::get(const std::string& text) {
    auto it = cache_.find(text);
    if (it != cache_.end()) return it->second;
    auto v = provider_->embed_one(text);
    return cache_.emplace(text, std::move(v)).first->second;
}

// ---------------------------------------------------------------------------
// Context embedding / relevance
// ---------------------------------------------------------------------------

Vector embed_context(std::string_view stem, std::string_view choice_text,
                     const std::vector<std::string>& facts, EmbeddingProvider& provider) {
    FusionConfig fusion;  // default separator / cap
    const std::string text = fuse_context(stem, choice_text, facts, fusion);
    Vector v = provider.embed_one(text);
    const double n = norm(v);
    if (std::abs(n - 1.0) > 1e-6) {
        std::cerr << "[kgqa] warning: provider returned non-unit context vector; renormalizing\n";
        normalize_in_place(v);
    }
    return v;
}

std::string node_surface_text(std::string_view node_name) {
    std::string s(node_name);
    for (char& c : s) {
        if (c == '_') c = ' ';
    }
    return s;
}

double relevance_from_vectors(std::span<const double> context_vec,
                              std::span<const double> node_vec) {
    double cosine = dot(context_vec, node_vec);
    const double denom = norm(context_vec) * norm(node_vec);
    if (denom > 1e-12) cosine /= denom;
    double score = (cosine + 1.0) / 2.0;
    if (score < 0.0) score = 0.0;
    if (score > 1.0) score = 1.0;
    return score;
}

double relevance_score(const std::string& context_text, const std::string& node_name,
                       EmbeddingProvider& provider) {
    const std::string texts[2] = {context_text, node_surface_text(node_name)};
    auto vecs = provider.embed(std::span<const std::string>(texts, 2));
    if (vecs.size() != 2) throw TransportError("provider returned wrong batch size");
    return relevance_from_vectors(vecs[0], vecs[1]);
}

}  // namespace kgqa
