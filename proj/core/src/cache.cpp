#include "promptshap/cache.hpp"

#include <nlohmann/json.hpp>

#include <chrono>

#include "promptshap/errors.hpp"
#include "promptshap/hash.hpp"

namespace promptshap {

namespace {

constexpr char kFieldSep = '\x1e';  // record separator inside key material

ChoiceDistribution parse_record(const std::string& body, std::string& key_out) {
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(body);
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorKind::Io, "CacheCorrupt",
                    std::string("cache record is not valid JSON: ") + e.what());
    }
    if (!doc.is_object() || !doc.contains("key") || !doc.contains("probs") ||
        !doc["key"].is_string() || !doc["probs"].is_object()) {
        throw Error(ErrorKind::Io, "CacheCorrupt", "cache record is missing key/probs");
    }
    key_out = doc["key"].get<std::string>();
    ChoiceDistribution dist;
    for (const auto& [label, p] : doc["probs"].items()) {
        if (!p.is_number()) {
            throw Error(ErrorKind::Io, "CacheCorrupt", "cache record has a non-numeric probability");
        }
        dist.probs[label] = p.get<double>();
    }
    return dist;
}

}  // namespace

CallCache::CallCache(std::filesystem::path path) : path_(std::move(path)) {
    if (std::filesystem::exists(path_)) {
        std::ifstream in(path_, std::ios::binary);
        if (!in) {
            throw Error(ErrorKind::Io, "FileOpenFailed", "cannot open cache " + path_.string());
        }
        std::string header;
        while (std::getline(in, header)) {
            std::size_t length = 0;
            try {
                std::size_t consumed = 0;
                length = std::stoull(header, &consumed);
                if (consumed != header.size()) throw std::invalid_argument(header);
            } catch (const std::exception&) {
                throw Error(ErrorKind::Io, "CacheCorrupt",
                            "bad record length prefix in " + path_.string());
            }
            std::string body(length, '\0');
            in.read(body.data(), static_cast<std::streamsize>(length));
            if (in.gcount() != static_cast<std::streamsize>(length)) {
                throw Error(ErrorKind::Io, "CacheCorrupt",
                            "truncated record in " + path_.string());
            }
            if (in.get() != '\n') {
                throw Error(ErrorKind::Io, "CacheCorrupt",
                            "record terminator missing in " + path_.string());
            }
            std::string key;
            ChoiceDistribution dist = parse_record(body, key);
            index_[key] = std::move(dist);  // later records win
        }
    } else if (path_.has_parent_path()) {
        std::filesystem::create_directories(path_.parent_path());
    }
    appender_.open(path_, std::ios::binary | std::ios::app);
    if (!appender_) {
        throw Error(ErrorKind::Io, "FileOpenFailed",
                    "cannot open cache for append " + path_.string());
    }
}

std::optional<ChoiceDistribution> CallCache::lookup(const std::string& key) const {
    std::lock_guard lock(mutex_);
    auto it = index_.find(key);
    if (it == index_.end()) {
        ++stats_.misses;
        return std::nullopt;
    }
    ++stats_.hits;
    return it->second;
}

void CallCache::store(const std::string& key, const ChoiceDistribution& dist) {
    nlohmann::json doc;
    doc["key"] = key;
    doc["probs"] = dist.probs;
    doc["ts"] = std::chrono::duration_cast<std::chrono::seconds>(
                    std::chrono::system_clock::now().time_since_epoch())
                    .count();
    const std::string body = doc.dump();

    std::lock_guard lock(mutex_);
    index_[key] = dist;
    appender_ << body.size() << '\n' << body << '\n';
    appender_.flush();
    if (!appender_) {
        throw Error(ErrorKind::Io, "CacheWriteFailed", "failed to append to " + path_.string());
    }
}

CacheStats CallCache::stats() const {
    std::lock_guard lock(mutex_);
    return stats_;
}

std::size_t CallCache::size() const {
    std::lock_guard lock(mutex_);
    return index_.size();
}

std::string CallCache::make_key(std::string_view prompt, const ChoiceSpec& spec,
                                std::string_view oracle_identity) {
    std::string material;
    material.reserve(prompt.size() + oracle_identity.size() + 64);
    material.append(prompt);
    material.push_back(kFieldSep);
    for (const auto& label : spec.labels) {
        material.append(label);
        material.push_back(kFieldSep);
    }
    material.append(spec.target);
    material.push_back(kFieldSep);
    material.append(oracle_identity);
    return sha256_hex(material);
}

CachedOracle::CachedOracle(std::shared_ptr<CallCache> cache, std::shared_ptr<const Oracle> inner)
    : cache_(std::move(cache)), inner_(std::move(inner)) {}

ChoiceDistribution CachedOracle::evaluate(std::string_view prompt, const ChoiceSpec& spec) const {
    const std::string key = CallCache::make_key(prompt, spec, inner_->identity());
    if (auto hit = cache_->lookup(key)) {
        return *hit;
    }
    ChoiceDistribution dist = inner_->evaluate(prompt, spec);
    cache_->store(key, dist);
    return dist;
}

}  // namespace promptshap
