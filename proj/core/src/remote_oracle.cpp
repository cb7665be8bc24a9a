#include "promptshap/remote_oracle.hpp"

#include <httplib.h>

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <semaphore>
#include <thread>

#include "promptshap/errors.hpp"

namespace promptshap {

namespace {

std::string trimmed(std::string_view s) {
    std::size_t b = 0;
    std::size_t e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return std::string(s.substr(b, e - b));
}

/// A token scores a label when it is the label itself or the label's first
/// piece (completion tokens usually carry a leading space: " A").
bool token_matches_label(const std::string& token, const std::string& label) {
    const std::string t = trimmed(token);
    if (t.empty()) return false;
    return t == label || label.rfind(t, 0) == 0;
}

struct SplitUrl {
    std::string origin;  // scheme://host[:port]
    std::string prefix;  // path prefix, no trailing slash
};

SplitUrl split_url(const std::string& url) {
    const auto scheme_end = url.find("://");
    if (scheme_end == std::string::npos) {
        throw Error(ErrorKind::Config, "InvalidEndpoint",
                    "endpoint URL must start with http:// or https://: " + url);
    }
    const auto path_start = url.find('/', scheme_end + 3);
    SplitUrl out;
    if (path_start == std::string::npos) {
        out.origin = url;
    } else {
        out.origin = url.substr(0, path_start);
        out.prefix = url.substr(path_start);
        while (!out.prefix.empty() && out.prefix.back() == '/') out.prefix.pop_back();
    }
    return out;
}

}  // namespace

struct RemoteOracle::Impl {
    RemoteOptions options;
    SplitUrl url;
    std::string api_key;
    mutable std::counting_semaphore<256> slots;

    explicit Impl(RemoteOptions opts)
        : options(std::move(opts)),
          url(split_url(options.base_url)),
          slots(std::max(1, std::min(options.max_concurrent, 256))) {
        if (const char* key = std::getenv(options.api_key_env.c_str())) {
            api_key = key;
        }
    }

    nlohmann::json post_completion(const nlohmann::json& body) const {
        slots.acquire();
        struct Release {
            const Impl* self;
            ~Release() { self->slots.release(); }
        } release{this};

        std::string last_error;
        int backoff = options.retry_backoff_ms;
        for (int attempt = 0; attempt <= options.max_retries; ++attempt) {
            if (attempt > 0) {
                std::this_thread::sleep_for(std::chrono::milliseconds(backoff));
                backoff *= 2;
            }
            httplib::Client client(url.origin);
            client.set_connection_timeout(options.timeout_sec, 0);
            client.set_read_timeout(options.timeout_sec, 0);
            httplib::Headers headers;
            if (!api_key.empty()) {
                headers.emplace("Authorization", "Bearer " + api_key);
            }
            auto res = client.Post(url.prefix + "/completions", headers, body.dump(),
                                   "application/json");
            if (!res) {
                last_error = "transport error: " + httplib::to_string(res.error());
                continue;
            }
            if (res->status >= 500) {
                last_error = "server returned status " + std::to_string(res->status);
                continue;
            }
            if (res->status != 200) {
                throw Error(ErrorKind::Oracle, "OracleUnreachable",
                            "endpoint " + options.base_url + " returned status " +
                                std::to_string(res->status) + " (no retry for client errors)");
            }
            try {
                return nlohmann::json::parse(res->body);
            } catch (const nlohmann::json::exception& e) {
                throw Error(ErrorKind::Oracle, "MalformedResponse",
                            std::string("endpoint body is not JSON: ") + e.what());
            }
        }
        throw Error(ErrorKind::Oracle, "OracleUnreachable",
                    "endpoint " + options.base_url + " unreachable after " +
                        std::to_string(options.max_retries + 1) + " attempts: " + last_error);
    }

    nlohmann::json base_request(std::string_view prompt) const {
        nlohmann::json body;
        body["model"] = options.model;
        body["prompt"] = std::string(prompt);
        body["max_tokens"] = 1;
        body["temperature"] = 0;
        if (!options.label_token_ids.empty()) {
            nlohmann::json bias = nlohmann::json::object();
            for (const auto& [label, id] : options.label_token_ids) {
                bias[std::to_string(id)] = 100;
            }
            body["logit_bias"] = bias;
        }
        return body;
    }

    /// First-position top logprobs, or empty JSON when the endpoint gave none.
    nlohmann::json top_logprobs(const nlohmann::json& response) const {
        if (!response.contains("choices") || !response["choices"].is_array() ||
            response["choices"].empty()) {
            throw Error(ErrorKind::Oracle, "MalformedResponse", "response has no choices");
        }
        const auto& choice = response["choices"][0];
        if (!choice.contains("logprobs") || choice["logprobs"].is_null()) {
            return nlohmann::json();
        }
        const auto& lp = choice["logprobs"];
        if (!lp.contains("top_logprobs") || !lp["top_logprobs"].is_array() ||
            lp["top_logprobs"].empty() || !lp["top_logprobs"][0].is_object()) {
            return nlohmann::json();
        }
        return lp["top_logprobs"][0];
    }

    ChoiceDistribution from_logprobs(const nlohmann::json& top, const ChoiceSpec& spec) const {
        // Best (max) logprob among tokens that open each label, then a
        // softmax over the choice set only: mass on non-label tokens never
        // leaks into the distribution.
        std::map<std::string, double> scores;
        bool any = false;
        for (const auto& label : spec.labels) {
            double best = -std::numeric_limits<double>::infinity();
            for (const auto& [token, lp] : top.items()) {
                if (!lp.is_number()) {
                    throw Error(ErrorKind::Oracle, "MalformedResponse",
                                "non-numeric logprob for token '" + token + "'");
                }
                if (token_matches_label(token, label)) {
                    best = std::max(best, lp.get<double>());
                }
            }
            scores[label] = best;
            any = any || std::isfinite(best);
        }
        if (!any) {
            throw Error(ErrorKind::Oracle, "MalformedResponse",
                        "no usable label probabilities in top logprobs");
        }
        double maxscore = -std::numeric_limits<double>::infinity();
        for (const auto& [_, s] : scores) maxscore = std::max(maxscore, s);
        double denom = 0.0;
        for (const auto& [_, s] : scores) denom += std::exp(s - maxscore);
        ChoiceDistribution dist;
        for (const auto& [label, s] : scores) {
            const double p = std::exp(s - maxscore) / denom;
            if (!std::isfinite(p)) {
                throw Error(ErrorKind::Oracle, "NonFiniteProbability",
                            "renormalized probability for '" + label + "' is not finite");
            }
            dist.probs[label] = p;
        }
        return dist;
    }

    ChoiceDistribution from_sampling(std::string_view prompt, const ChoiceSpec& spec) const {
        std::map<std::string, long long> counts;
        for (const auto& label : spec.labels) counts[label] = 0;
        const int n = std::max(1, options.sample_count);
        for (int i = 0; i < n; ++i) {
            const nlohmann::json response = post_completion(base_request(prompt));
            if (!response.contains("choices") || !response["choices"].is_array() ||
                response["choices"].empty() || !response["choices"][0].contains("text")) {
                throw Error(ErrorKind::Oracle, "MalformedResponse",
                            "fallback completion carries no text");
            }
            const std::string text = trimmed(response["choices"][0]["text"].get<std::string>());
            bool matched = false;
            for (const auto& label : spec.labels) {
                if (text == label || (!text.empty() && label.rfind(text, 0) == 0)) {
                    ++counts[label];
                    matched = true;
                    break;
                }
            }
            if (!matched) {
                throw Error(ErrorKind::Oracle, "MalformedResponse",
                            "completion '" + text + "' matches no choice label");
            }
        }
        ChoiceDistribution dist;
        for (const auto& [label, c] : counts) {
            dist.probs[label] = static_cast<double>(c) / static_cast<double>(n);
        }
        return dist;
    }
};

RemoteOracle::RemoteOracle(RemoteOptions options) : impl_(std::make_unique<Impl>(std::move(options))) {
    if (impl_->options.model.empty()) {
        throw Error(ErrorKind::Config, "InvalidEndpoint", "remote oracle needs a model name");
    }
}

RemoteOracle::~RemoteOracle() = default;

ChoiceDistribution RemoteOracle::evaluate(std::string_view prompt, const ChoiceSpec& spec) const {
    spec.validate();
    nlohmann::json request = impl_->base_request(prompt);
    request["logprobs"] = impl_->options.top_logprobs;
    const nlohmann::json response = impl_->post_completion(request);
    const nlohmann::json top = impl_->top_logprobs(response);
    ChoiceDistribution dist =
        top.is_object() ? impl_->from_logprobs(top, spec) : impl_->from_sampling(prompt, spec);
    dist.validate(spec);
    return dist;
}

std::string RemoteOracle::identity() const {
    return "remote:" + impl_->options.base_url + ":" + impl_->options.model;
}

}  // namespace promptshap
