#pragma once

#include <filesystem>
#include <fstream>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <unordered_map>

#include "promptshap/oracle.hpp"

namespace promptshap {

struct CacheStats {
    long long hits = 0;
    long long misses = 0;
};

/// Persistent oracle-call cache: an append-only file of length-prefixed JSON
/// records, one per call. The in-memory index is rebuilt on open; any
/// unreadable record raises CacheCorrupt rather than being skipped.
class CallCache {
public:
    explicit CallCache(std::filesystem::path path);

    std::optional<ChoiceDistribution> lookup(const std::string& key) const;
    void store(const std::string& key, const ChoiceDistribution& dist);

    CacheStats stats() const;
    std::size_t size() const;
    const std::filesystem::path& path() const { return path_; }

    /// Content hash of everything the cached value depends on: prompt
    /// bytes, ordered labels, target, and the oracle's identity.
    static std::string make_key(std::string_view prompt, const ChoiceSpec& spec,
                                std::string_view oracle_identity);

private:
    std::filesystem::path path_;
    mutable std::mutex mutex_;
    std::unordered_map<std::string, ChoiceDistribution> index_;
    std::ofstream appender_;
    mutable CacheStats stats_;
};

/// Oracle decorator that answers from the cache when it can and persists
/// fresh results when it cannot. Equivalent to the inner oracle for every
/// prompt; hit/miss counters live on the cache.
class CachedOracle : public Oracle {
public:
    CachedOracle(std::shared_ptr<CallCache> cache, std::shared_ptr<const Oracle> inner);

    ChoiceDistribution evaluate(std::string_view prompt, const ChoiceSpec& spec) const override;
    std::string identity() const override { return inner_->identity(); }

    const CallCache& cache() const { return *cache_; }

private:
    std::shared_ptr<CallCache> cache_;
    std::shared_ptr<const Oracle> inner_;
};

}  // namespace promptshap
